//! Rate-1/3 tail-biting convolutional code, constraint length 7,
//! generators 133/171/165 (octal).

pub const CONSTRAINT_LEN: usize = 7;
pub const NUM_STATES: usize = 1 << (CONSTRAINT_LEN - 1);

/// Generator taps as 7-bit words; bit 6 multiplies the current input,
/// bit 0 the input six steps back.
pub const GENERATORS: [u8; 3] = [0o133, 0o171, 0o165];

/// Encoder state holds the six previous inputs, most recent in bit 5.
#[inline]
pub fn next_state(state: usize, input: u8) -> usize {
    ((input as usize) << 5) | (state >> 1)
}

/// The three output bits for `input` entering an encoder in `state`.
#[inline]
pub fn branch_output(state: usize, input: u8) -> [u8; 3] {
    let window = ((input as u32) << 6) | state as u32;
    GENERATORS.map(|g| ((window & g as u32).count_ones() & 1) as u8)
}

/// Tail-biting encode. Output is the three generator streams concatenated,
/// `[d0 | d1 | d2]`, each as long as the input.
///
/// Inputs shorter than the constraint length are still encoded (the register
/// wraps around more than once) but the round trip is only guaranteed for
/// `bits.len() >= 7`.
pub fn conv_encode(bits: &[u8]) -> Vec<u8> {
    let k = bits.len();
    let mut out = vec![0u8; 3 * k];
    if k == 0 {
        return out;
    }
    // Register preloaded with the last six inputs.
    let mut state = 0usize;
    for i in (1..CONSTRAINT_LEN).rev() {
        let idx = (k as isize - i as isize).rem_euclid(k as isize) as usize;
        state = next_state(state, bits[idx] & 1);
    }
    for (i, &b) in bits.iter().enumerate() {
        let o = branch_output(state, b & 1);
        out[i] = o[0];
        out[k + i] = o[1];
        out[2 * k + i] = o[2];
        state = next_state(state, b & 1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_in_zero_out() {
        assert_eq!(conv_encode(&[0; 40]), vec![0; 120]);
    }

    /// Impulse response of each generator, read directly off the octal taps.
    fn generator_taps(g: u8) -> [u8; 7] {
        std::array::from_fn(|j| (g >> (6 - j)) & 1)
    }

    #[test]
    fn impulse_gives_cyclically_shifted_generator_response() {
        let k = 20;
        for pos in [0usize, 5, 17, 19] {
            let mut x = vec![0u8; k];
            x[pos] = 1;
            let y = conv_encode(&x);
            for (s, &g) in GENERATORS.iter().enumerate() {
                let taps = generator_taps(g);
                let mut expect = vec![0u8; k];
                for (j, &t) in taps.iter().enumerate() {
                    expect[(pos + j) % k] = t;
                }
                assert_eq!(&y[s * k..(s + 1) * k], &expect[..], "stream {s}, impulse at {pos}");
            }
        }
    }

    #[test]
    fn encoder_is_linear() {
        let a: Vec<u8> = (0..43).map(|i| ((i * 7 + 3) % 5 == 0) as u8).collect();
        let b: Vec<u8> = (0..43).map(|i| ((i * i + 1) % 3 == 0) as u8).collect();
        let x: Vec<u8> = a.iter().zip(&b).map(|(p, q)| p ^ q).collect();
        let ya = conv_encode(&a);
        let yb = conv_encode(&b);
        let yx = conv_encode(&x);
        for i in 0..yx.len() {
            assert_eq!(ya[i] ^ yb[i], yx[i]);
        }
    }
}
