//! LLR normalization and empty-CCE detection.
//!
//! Incoming LLRs are rescaled to received-sample units, so an occupied bit
//! has mean magnitude close to 1 and empty CCEs carry only noise. The noise
//! floor comes from the padding CCEs at the end of the control region, which
//! never carry messages.

use crate::phy::CCE_BITS;
use crate::sim::LlrSubframe;

/// Default emptiness threshold on the mean normalized |LLR| of a CCE.
pub const EMPTY_THRESHOLD: f32 = 0.85;

/// Kurtosis above which the strongest CCE is taken to be noise only.
const NOISE_KURTOSIS: f64 = 2.0;

fn mean_abs(v: &[f32]) -> f64 {
    v.iter().map(|&x| x.abs() as f64).sum::<f64>() / v.len().max(1) as f64
}

/// Normalized mean |LLR| separating noise from signal when choosing the
/// reference CCEs; well between the two at any SNR of interest.
const SIGNAL_SPLIT: f64 = 0.6;

fn noise_scale(samples: impl Iterator<Item = f32>) -> Option<f64> {
    let (mut sum, mut n) = (0.0f64, 0usize);
    for x in samples {
        sum += (x as f64).powi(2);
        n += 1;
    }
    let var = sum / n.max(1) as f64;
    // An LLR of 2y/σ² has variance 4/σ² on an empty CCE, so y = LLR · 2/var.
    (n > 0 && var.is_finite() && var > 1e-12).then(|| 2.0 / var)
}

/// Factor that maps LLRs of this subframe to received-sample units.
///
/// The padding CCEs give a noise estimate, which separates occupied CCEs
/// from empty ones; the final factor makes the mean |LLR| over the occupied
/// CCEs exactly 1. Without padding (or with noiseless input) the strongest
/// CCE plays the role of the noise estimate, unless its kurtosis says it is
/// plain Gaussian noise.
pub fn normalization_scale(sub: &LlrSubframe, usable_cces: usize) -> f32 {
    let n = sub.n_cce();
    let first = if usable_cces < n {
        noise_scale(sub.llrs[usable_cces * CCE_BITS..].iter().copied())
    } else {
        None
    };
    let first = match first {
        Some(s) => s,
        None => {
            let Some(strongest) = (0..n).max_by(|&a, &b| mean_abs(sub.cce(a)).total_cmp(&mean_abs(sub.cce(b)))) else {
                return 1.0;
            };
            let cce = sub.cce(strongest);
            let reference = mean_abs(cce);
            if reference <= 0.0 {
                return 1.0;
            }
            let m2 = cce.iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / CCE_BITS as f64;
            let m4 = cce.iter().map(|&x| (x as f64).powi(4)).sum::<f64>() / CCE_BITS as f64;
            if m4 / (m2 * m2) > NOISE_KURTOSIS {
                return 0.0;
            }
            1.0 / reference
        }
    };
    let means: Vec<f64> = (0..n).map(|i| mean_abs(sub.cce(i))).collect();
    let occupied: Vec<f64> = means.iter().copied().filter(|m| m * first >= SIGNAL_SPLIT).collect();
    if occupied.is_empty() {
        return first as f32;
    }
    (occupied.len() as f64 / occupied.iter().sum::<f64>()) as f32
}

/// Copy of `sub` in received-sample units.
pub fn normalize_llrs(sub: &LlrSubframe, usable_cces: usize) -> LlrSubframe {
    let scale = normalization_scale(sub, usable_cces);
    LlrSubframe {
        sfn: sub.sfn,
        cell_id: sub.cell_id,
        llrs: sub.llrs.iter().map(|&x| x * scale).collect(),
    }
}

/// Per-CCE emptiness: `true` when the mean |LLR| is below `threshold`.
/// Expects normalized input.
pub fn mark_empty_cces(sub: &LlrSubframe, threshold: f32) -> Vec<bool> {
    (0..sub.n_cce())
        .map(|i| mean_abs(sub.cce(i)) < threshold as f64)
        .collect()
}
