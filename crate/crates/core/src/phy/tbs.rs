//! Transport block size table.
//!
//! `tbs = round(nof_prb * 132 * eff(mcs)) * streams`, where 132 is the number
//! of data resource elements in one PRB pair and `eff` is modulation order
//! times code rate for each MCS index. The table approximates the shape of the
//! standard one (QPSK up to 9, 16QAM 10..=16, 64QAM from 17) without
//! reproducing its exact values.

use crate::error::{Error, Result};

pub const MAX_MCS: u8 = 28;
pub const RE_PER_PRB: f64 = 132.0;

/// Bits per resource element for MCS 0..=28.
pub const EFFICIENCY: [f64; 29] = [
    0.23, 0.31, 0.38, 0.49, 0.60, 0.74, 0.88, 1.03, 1.18, 1.33, // QPSK
    1.33, 1.48, 1.70, 1.91, 2.16, 2.41, 2.57, // 16QAM
    2.57, 2.73, 3.03, 3.32, 3.61, 3.90, 4.21, 4.52, 4.82, 5.12, 5.33, 5.55, // 64QAM
];

pub fn check_mcs(mcs: u8) -> Result<()> {
    if mcs > MAX_MCS {
        Err(Error::InvalidMcs(mcs))
    } else {
        Ok(())
    }
}

fn one_stream(mcs: u8, nof_prb: u16) -> u32 {
    (nof_prb as f64 * RE_PER_PRB * EFFICIENCY[mcs as usize]).round() as u32
}

/// Transport block size in bits. With two streams, `mcs2` (defaulting to
/// `mcs1`) sizes the second codeword.
pub fn tbs_lookup(mcs1: u8, mcs2: Option<u8>, nof_prb: u16, streams: u8) -> Result<u32> {
    check_mcs(mcs1)?;
    if let Some(m) = mcs2 {
        check_mcs(m)?;
    }
    Ok(match streams {
        2 => one_stream(mcs1, nof_prb) + one_stream(mcs2.unwrap_or(mcs1), nof_prb),
        _ => one_stream(mcs1, nof_prb),
    })
}
