//! Control-channel physical layer: message packing, CRC, convolutional
//! coding, rate matching and search-space hashing.

pub mod conv;
pub mod crc;
pub mod dci;
pub mod rate_match;
pub mod search_space;
pub mod tbs;

pub use conv::conv_encode;
pub use crc::{crc16, scramble_crc};
pub use dci::{build_dci_payload, parse_dci_payload, reserved_bits_clear, DciFields, DciFormat};
pub use rate_match::{interleave, rate_match};
pub use search_space::search_space;
pub use tbs::tbs_lookup;

use crate::error::Result;

/// Coded bits per control channel element.
pub const CCE_BITS: usize = 72;

/// Aggregation levels, smallest first.
pub const LEVELS: [usize; 4] = [1, 2, 4, 8];

/// Tail-biting-coded and interleaved block for a payload, before rate
/// matching. Length is `3 * (payload + 16)`.
pub fn encode_block(payload: &[u8], rnti: u16) -> Vec<u8> {
    let block = crc::attach_scrambled_crc(payload, rnti);
    interleave(&conv_encode(&block))
}

/// Full transmit chain for one message: pack, CRC, scramble with the RNTI,
/// encode, interleave and rate-match onto `level` CCEs.
pub fn encode_dci(fields: &DciFields, format: DciFormat, rnti: u16, level: usize) -> Result<Vec<u8>> {
    let payload = build_dci_payload(fields, format)?;
    Ok(rate_match(&encode_block(&payload, rnti), level))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoded_length_is_level_times_cce() {
        let f = DciFields {
            mcs1: 12,
            nof_prb: 30,
            ..Default::default()
        };
        for level in LEVELS {
            let bits = encode_dci(&f, DciFormat::A, 0x1234, level).unwrap();
            assert_eq!(bits.len(), CCE_BITS * level);
        }
    }
}
