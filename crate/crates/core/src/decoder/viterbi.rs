//! Soft-decision Viterbi decoding of the tail-biting code.
//!
//! Tail-biting trellises have an unknown start state equal to the end state.
//! The decoder runs the circular trellis twice from uniform metrics (the
//! first pass only settles the metrics), continues for a traceback margin,
//! then traces back from the best state and keeps the decisions of the
//! middle pass.

use crate::phy::conv::{branch_output, conv_encode, NUM_STATES};

/// Extra trellis steps past the kept pass before traceback.
const TRACEBACK_MARGIN: usize = 48;

#[derive(Clone, Debug, PartialEq)]
pub struct ViterbiOutput {
    pub bits: Vec<u8>,
    /// Correlation between the LLRs and the re-encoded codeword, in LLR units.
    pub path_metric: f32,
}

struct Trellis {
    /// Output pattern (3 bits, d0 in bit 2) for each (state, input).
    out: [[u8; 2]; NUM_STATES],
}

impl Trellis {
    fn new() -> Self {
        let mut out = [[0u8; 2]; NUM_STATES];
        for (s, row) in out.iter_mut().enumerate() {
            for b in 0..2u8 {
                let o = branch_output(s, b);
                row[b as usize] = (o[0] << 2) | (o[1] << 1) | o[2];
            }
        }
        Self { out }
    }

    #[inline]
    fn branch_metrics(llr: [f32; 3]) -> [f32; 8] {
        // Positive LLR favours bit 0.
        std::array::from_fn(|p| {
            let s = |bit: usize, v: f32| if (p >> bit) & 1 == 0 { v } else { -v };
            s(2, llr[0]) + s(1, llr[1]) + s(0, llr[2])
        })
    }
}

fn trellis() -> &'static Trellis {
    static T: std::sync::OnceLock<Trellis> = std::sync::OnceLock::new();
    T.get_or_init(Trellis::new)
}

/// Correlation of `llrs` (in `[d0|d1|d2]` order) with the codeword of `bits`.
pub fn codeword_correlation(llrs: &[f32], bits: &[u8]) -> f32 {
    conv_encode(bits)
        .iter()
        .zip(llrs)
        .map(|(&c, &l)| if c == 0 { l } else { -l })
        .sum()
}

/// Decode `payload_len` bits from `3 * payload_len` soft values laid out as
/// `[d0 | d1 | d2]`. Always returns the best path found.
pub fn viterbi_decode(llrs: &[f32], payload_len: usize) -> ViterbiOutput {
    let k = payload_len;
    assert_eq!(llrs.len(), 3 * k, "expected {} soft values", 3 * k);
    if k == 0 {
        return ViterbiOutput {
            bits: Vec::new(),
            path_metric: 0.0,
        };
    }
    let t = trellis();
    let steps = 2 * k + TRACEBACK_MARGIN.min(k);
    let mut metrics = [0.0f32; NUM_STATES];
    let mut decisions: Vec<u64> = Vec::with_capacity(steps);

    for step in 0..steps {
        let i = step % k;
        let bm = Trellis::branch_metrics([llrs[i], llrs[k + i], llrs[2 * k + i]]);
        let mut next = [0.0f32; NUM_STATES];
        let mut word = 0u64;
        let mut best = f32::NEG_INFINITY;
        for (ns, slot) in next.iter_mut().enumerate() {
            let b = ns >> 5;
            let p0 = (ns << 1) & (NUM_STATES - 1);
            let p1 = p0 | 1;
            let m0 = metrics[p0] + bm[t.out[p0][b] as usize];
            let m1 = metrics[p1] + bm[t.out[p1][b] as usize];
            *slot = if m1 > m0 {
                word |= 1 << ns;
                m1
            } else {
                m0
            };
            best = best.max(*slot);
        }
        for m in next.iter_mut() {
            *m -= best;
        }
        metrics = next;
        decisions.push(word);
    }

    let mut state = metrics
        .iter()
        .enumerate()
        .fold((0usize, f32::NEG_INFINITY), |acc, (s, &m)| if m > acc.1 { (s, m) } else { acc })
        .0;
    let mut bits = vec![0u8; k];
    for step in (k..steps).rev() {
        if step < 2 * k {
            bits[step - k] = (state >> 5) as u8;
        }
        let choice = ((decisions[step] >> state) & 1) as usize;
        state = ((state << 1) & (NUM_STATES - 1)) | choice;
    }
    let path_metric = codeword_correlation(llrs, &bits);
    ViterbiOutput { bits, path_metric }
}

/// Exact maximum-likelihood tail-biting decoder: one constrained Viterbi run
/// per start state. 64 times the work of [`viterbi_decode`]; used as an
/// oracle.
pub fn viterbi_decode_exact(llrs: &[f32], payload_len: usize) -> ViterbiOutput {
    let k = payload_len;
    assert_eq!(llrs.len(), 3 * k);
    let t = trellis();
    let mut best: Option<(f32, Vec<u8>)> = None;
    for start in 0..NUM_STATES {
        let mut metrics = [f32::NEG_INFINITY; NUM_STATES];
        metrics[start] = 0.0;
        let mut decisions: Vec<u64> = Vec::with_capacity(k);
        for i in 0..k {
            let bm = Trellis::branch_metrics([llrs[i], llrs[k + i], llrs[2 * k + i]]);
            let mut next = [f32::NEG_INFINITY; NUM_STATES];
            let mut word = 0u64;
            for (ns, slot) in next.iter_mut().enumerate() {
                let b = ns >> 5;
                let p0 = (ns << 1) & (NUM_STATES - 1);
                let p1 = p0 | 1;
                let m0 = metrics[p0] + bm[t.out[p0][b] as usize];
                let m1 = metrics[p1] + bm[t.out[p1][b] as usize];
                *slot = if m1 > m0 {
                    word |= 1 << ns;
                    m1
                } else {
                    m0
                };
            }
            metrics = next;
            decisions.push(word);
        }
        let score = metrics[start];
        if best.as_ref().is_some_and(|(b, _)| *b >= score) {
            continue;
        }
        let mut state = start;
        let mut bits = vec![0u8; k];
        for i in (0..k).rev() {
            bits[i] = (state >> 5) as u8;
            let choice = ((decisions[i] >> state) & 1) as usize;
            state = ((state << 1) & (NUM_STATES - 1)) | choice;
        }
        best = Some((score, bits));
    }
    let (_, bits) = best.unwrap_or((0.0, vec![0; k]));
    let path_metric = codeword_correlation(llrs, &bits);
    ViterbiOutput { bits, path_metric }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn to_llr(codeword: &[u8], mag: f32) -> Vec<f32> {
        codeword.iter().map(|&c| if c == 0 { mag } else { -mag }).collect()
    }

    #[test]
    fn noiseless_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in [7usize, 16, 32, 43, 50] {
            for _ in 0..20 {
                let x: Vec<u8> = (0..k).map(|_| rng.gen_range(0..2)).collect();
                let c = conv_encode(&x);
                let out = viterbi_decode(&to_llr(&c, 1.0), k);
                assert_eq!(out.bits, x);
                assert_eq!(conv_encode(&out.bits), c);
                assert!((out.path_metric - 3.0 * k as f32).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn corrects_five_percent_sign_flips() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = 43;
        for trial in 0..100 {
            let x: Vec<u8> = (0..k).map(|_| rng.gen_range(0..2)).collect();
            let mut llr = to_llr(&conv_encode(&x), 1.0);
            for v in llr.iter_mut() {
                if rng.gen_bool(0.05) {
                    *v = -*v;
                }
            }
            assert_eq!(viterbi_decode(&llr, k).bits, x, "trial {trial}");
        }
    }

    #[test]
    fn pure_noise_still_returns_a_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let llr: Vec<f32> = (0..129).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = viterbi_decode(&llr, 43);
        assert_eq!(out.bits.len(), 43);
    }

    #[test]
    fn wrap_around_matches_exact_decoder_on_noisy_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = 43;
        let mut agree = 0;
        let trials = 200;
        for _ in 0..trials {
            let x: Vec<u8> = (0..k).map(|_| rng.gen_range(0..2)).collect();
            let llr: Vec<f32> = conv_encode(&x)
                .iter()
                .map(|&c| {
                    let n: f32 = rng.sample(rand_distr::StandardNormal);
                    (if c == 0 { 1.0 } else { -1.0 }) + 0.8 * n
                })
                .collect();
            let approx = viterbi_decode(&llr, k);
            let exact = viterbi_decode_exact(&llr, k);
            assert!(approx.path_metric <= exact.path_metric + 1e-3);
            if approx.bits == exact.bits {
                agree += 1;
            }
        }
        assert!(agree as f64 >= 0.97 * trials as f64, "agree {agree}/{trials}");
    }
}
