//! CRC-16/CCITT over bit sequences and RNTI scrambling of the appended CRC.

/// Generator polynomial D^16 + D^12 + D^5 + 1.
pub const CRC16_POLY: u16 = 0x1021;

/// CRC-16 (poly 0x1021, init 0, MSB first, no reflection) over a sequence of
/// 0/1 values. Works on arbitrary bit lengths, not just whole bytes.
pub fn crc16(bits: &[u8]) -> u16 {
    let mut reg: u16 = 0;
    for &b in bits {
        let feedback = ((reg >> 15) as u8 ^ (b & 1)) != 0;
        reg <<= 1;
        if feedback {
            reg ^= CRC16_POLY;
        }
    }
    reg
}

/// XOR the CRC with the receiver's RNTI. Self-inverse.
#[inline]
pub fn scramble_crc(crc: u16, rnti: u16) -> u16 {
    crc ^ rnti
}

/// Append a 16-bit value MSB first.
pub fn push_u16(bits: &mut Vec<u8>, value: u16) {
    for i in (0..16).rev() {
        bits.push(((value >> i) & 1) as u8);
    }
}

/// Read 16 bits MSB first.
pub fn read_u16(bits: &[u8]) -> u16 {
    debug_assert_eq!(bits.len(), 16);
    bits.iter().fold(0u16, |acc, &b| (acc << 1) | (b & 1) as u16)
}

/// Payload followed by `crc16(payload) ^ rnti`.
pub fn attach_scrambled_crc(payload: &[u8], rnti: u16) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 16);
    out.extend_from_slice(payload);
    push_u16(&mut out, scramble_crc(crc16(payload), rnti));
    out
}

/// Split a decoded block into payload and the RNTI it was scrambled with:
/// the calculated CRC XOR the appended one.
pub fn derive_rnti(block: &[u8]) -> (&[u8], u16) {
    let (payload, tail) = block.split_at(block.len() - 16);
    (payload, crc16(payload) ^ read_u16(tail))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Long division of `bits · x^16` by the generator, one bit at a time
    /// on an explicit polynomial vector.
    fn crc_by_long_division(bits: &[u8]) -> u16 {
        let gen: Vec<u8> = (0..17).map(|i| ((0x1_1021u32 >> (16 - i)) & 1) as u8).collect();
        let mut dividend: Vec<u8> = bits.to_vec();
        dividend.extend(std::iter::repeat_n(0, 16));
        for i in 0..bits.len() {
            if dividend[i] == 1 {
                for (j, g) in gen.iter().enumerate() {
                    dividend[i + j] ^= g;
                }
            }
        }
        read_u16(&dividend[bits.len()..])
    }

    #[test]
    fn zero_input_gives_zero() {
        assert_eq!(crc16(&[]), 0);
        assert_eq!(crc16(&[0; 40]), 0);
    }

    #[test]
    fn matches_long_division_on_31_bit_vector() {
        let v: Vec<u8> = "1011001110001111010101100100111"
            .bytes()
            .map(|c| c - b'0')
            .collect();
        assert_eq!(v.len(), 31);
        let oracle = crc_by_long_division(&v);
        // Value frozen from the long-division oracle.
        assert_eq!(oracle, 0xB02A);
        assert_eq!(crc16(&v), oracle);
    }

    #[test]
    fn xmodem_check_value() {
        // "123456789" as MSB-first bits; CRC-16/XMODEM check is 0x31C3.
        let bits: Vec<u8> = b"123456789"
            .iter()
            .flat_map(|byte| (0..8).rev().map(move |i| (byte >> i) & 1))
            .collect();
        assert_eq!(crc16(&bits), 0x31C3);
    }

    #[test]
    fn scramble_examples() {
        assert_eq!(scramble_crc(0x0000, 0x003D), 0x003D);
        assert_eq!(scramble_crc(0xBEEF, 0xFFFF), 0x4110);
        assert_eq!(scramble_crc(scramble_crc(0x1234, 0xABCD), 0xABCD), 0x1234);
    }

    #[test]
    fn derive_rnti_recovers_scrambling() {
        let payload = [1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 1];
        let block = attach_scrambled_crc(&payload, 0x4601);
        let (p, rnti) = derive_rnti(&block);
        assert_eq!(p, &payload);
        assert_eq!(rnti, 0x4601);
    }

    proptest::proptest! {
        #[test]
        fn linear_over_xor(a in proptest::collection::vec(0u8..2, 0..80), seed in 0u64..1000) {
            let b: Vec<u8> = a.iter().enumerate().map(|(i, _)| ((seed >> (i % 13)) & 1) as u8 ^ (i % 3 == 0) as u8).collect();
            let x: Vec<u8> = a.iter().zip(&b).map(|(p, q)| p ^ q).collect();
            proptest::prop_assert_eq!(crc16(&a) ^ crc16(&b), crc16(&x));
        }

        #[test]
        fn agrees_with_long_division(a in proptest::collection::vec(0u8..2, 0..64)) {
            proptest::prop_assert_eq!(crc16(&a), crc_by_long_division(&a));
        }
    }
}
