//! Noise channel producing per-coded-bit LLRs.
//!
//! Coded bit `b` is sent as `s = 1 - 2b`, received as `y = s + n` with
//! `n ~ N(0, σ²)`, `σ² = 1 / (2·snr)`, and reported as `LLR = 2y/σ²`.
//! Empty CCEs carry `y = n`. Positive LLR favours bit 0.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::phy::CCE_BITS;

use super::placement::Occupancy;

/// Smallest noise variance used for LLR scaling, so infinite SNR still yields
/// finite values.
const MIN_VARIANCE: f64 = 1e-6;

/// Soft output of one subframe's control region.
#[derive(Clone, Debug, PartialEq)]
pub struct LlrSubframe {
    pub sfn: u64,
    pub cell_id: u32,
    /// `n_cce * 72` values, CCE by CCE.
    pub llrs: Vec<f32>,
}

impl LlrSubframe {
    pub fn zeros(sfn: u64, cell_id: u32, n_cce: usize) -> Self {
        Self {
            sfn,
            cell_id,
            llrs: vec![0.0; n_cce * CCE_BITS],
        }
    }

    pub fn n_cce(&self) -> usize {
        self.llrs.len() / CCE_BITS
    }

    pub fn cce(&self, i: usize) -> &[f32] {
        &self.llrs[i * CCE_BITS..(i + 1) * CCE_BITS]
    }

    /// The LLRs of `level` consecutive CCEs starting at `start`.
    pub fn span(&self, start: usize, level: usize) -> &[f32] {
        &self.llrs[start * CCE_BITS..(start + level) * CCE_BITS]
    }
}

/// Noise variance for an SNR given in dB.
pub fn noise_variance(snr_db: f64) -> f64 {
    if snr_db.is_infinite() && snr_db > 0.0 {
        0.0
    } else {
        1.0 / (2.0 * 10f64.powf(snr_db / 10.0))
    }
}

/// Pass an occupancy map through the noise channel.
pub fn channel_apply<R: Rng + ?Sized>(
    occ: &Occupancy,
    sfn: u64,
    cell_id: u32,
    snr_db: f64,
    rng: &mut R,
) -> LlrSubframe {
    let var = noise_variance(snr_db);
    let sigma = var.sqrt();
    let scale = 2.0 / var.max(MIN_VARIANCE);
    let mut llrs = Vec::with_capacity(occ.n_cce() * CCE_BITS);
    for cce in &occ.cces {
        for j in 0..CCE_BITS {
            let n: f64 = if sigma > 0.0 {
                sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            let s = match cce {
                Some(bits) => 1.0 - 2.0 * bits[j] as f64,
                None => 0.0,
            };
            llrs.push(((s + n) * scale) as f32);
        }
    }
    LlrSubframe { sfn, cell_id, llrs }
}
