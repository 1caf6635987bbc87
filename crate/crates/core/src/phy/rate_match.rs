//! Sub-block interleaving and circular-buffer rate matching onto CCEs.

use super::CCE_BITS;

const COLUMNS: usize = 32;
const COLUMN_PERMUTATION: [usize; COLUMNS] = [
    1, 17, 9, 25, 5, 21, 13, 29, 3, 19, 11, 27, 7, 23, 15, 31, 0, 16, 8, 24, 4, 20, 12, 28, 2, 18,
    10, 26, 6, 22, 14, 30,
];

/// Read order of the circular buffer for a `[d0 | d1 | d2]` coded block whose
/// streams are `stream_len` bits long: entry `j` is the coded-bit index
/// placed at buffer position `j`. Each stream passes through the 32-column
/// sub-block interleaver; dummy padding is dropped.
pub fn interleaver_permutation(stream_len: usize) -> Vec<usize> {
    let rows = stream_len.div_ceil(COLUMNS);
    let dummies = rows * COLUMNS - stream_len;
    let mut one_stream = Vec::with_capacity(stream_len);
    for &col in &COLUMN_PERMUTATION {
        for row in 0..rows {
            let y = row * COLUMNS + col;
            if y >= dummies {
                one_stream.push(y - dummies);
            }
        }
    }
    (0..3)
        .flat_map(|s| one_stream.iter().map(move |&i| s * stream_len + i))
        .collect()
}

/// Apply the sub-block interleaver to a `[d0 | d1 | d2]` coded block.
pub fn interleave(coded: &[u8]) -> Vec<u8> {
    debug_assert_eq!(coded.len() % 3, 0);
    interleaver_permutation(coded.len() / 3)
        .into_iter()
        .map(|i| coded[i])
        .collect()
}

/// Fill `72 * level` bits by reading `coded` circularly from position zero:
/// repetition when the block is shorter, truncation when it is longer.
pub fn rate_match(coded: &[u8], level: usize) -> Vec<u8> {
    let n = CCE_BITS * level;
    if coded.is_empty() {
        return vec![0; n];
    }
    coded.iter().copied().cycle().take(n).collect()
}

/// Inverse of [`rate_match`] on soft values: every received copy of a
/// buffer position is summed. Positions never transmitted stay at zero.
pub fn combine_repetitions(received: &[f32], buffer_len: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; buffer_len];
    if buffer_len == 0 {
        return out;
    }
    for (j, &llr) in received.iter().enumerate() {
        out[j % buffer_len] += llr;
    }
    out
}

/// Undo [`interleave`] on soft values.
pub fn deinterleave_soft(buffer: &[f32], perm: &[usize]) -> Vec<f32> {
    let mut out = vec![0.0f32; buffer.len()];
    for (j, &i) in perm.iter().enumerate() {
        out[i] = buffer[j];
    }
    out
}
