//! Downlink control message formats and bit-exact payload packing.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// The three supported message layouts.
///
/// | format | fields (MSB first)                                    | bits |
/// |--------|-------------------------------------------------------|------|
/// | A      | mcs1:5 nof_prb:7 ndi:1 harq:3 reserved:11             | 27   |
/// | B      | mcs1:5 mcs2:5 nof_prb:7 ndi:1 harq:3 reserved:13      | 34   |
/// | C      | mcs1:5 nof_prb:7 ndi:1 harq:3                         | 16   |
///
/// A is single-stream, B carries a second codeword MCS for two-stream MIMO,
/// C is the compact single-stream layout. Reserved bits are sent as zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DciFormat {
    A,
    B,
    C,
}

impl DciFormat {
    pub const ALL: [DciFormat; 3] = [DciFormat::A, DciFormat::B, DciFormat::C];

    pub fn payload_len(self) -> usize {
        match self {
            DciFormat::A => 27,
            DciFormat::B => 34,
            DciFormat::C => 16,
        }
    }

    /// Payload plus the 16-bit CRC.
    pub fn block_len(self) -> usize {
        self.payload_len() + 16
    }

    pub fn streams(self) -> u8 {
        match self {
            DciFormat::B => 2,
            _ => 1,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            DciFormat::A => 'A',
            DciFormat::B => 'B',
            DciFormat::C => 'C',
        }
    }

    fn layout(self) -> &'static [(Field, u32)] {
        use Field::*;
        match self {
            DciFormat::A => &[(Mcs1, 5), (NofPrb, 7), (Ndi, 1), (Harq, 3), (Reserved, 11)],
            DciFormat::B => &[
                (Mcs1, 5),
                (Mcs2, 5),
                (NofPrb, 7),
                (Ndi, 1),
                (Harq, 3),
                (Reserved, 13),
            ],
            DciFormat::C => &[(Mcs1, 5), (NofPrb, 7), (Ndi, 1), (Harq, 3)],
        }
    }
}

impl fmt::Display for DciFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for DciFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(DciFormat::A),
            "B" | "b" => Ok(DciFormat::B),
            "C" | "c" => Ok(DciFormat::C),
            other => Err(Error::Format(format!("unknown DCI format `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Field {
    Mcs1,
    Mcs2,
    NofPrb,
    Ndi,
    Harq,
    Reserved,
}

impl Field {
    fn name(self) -> &'static str {
        match self {
            Field::Mcs1 => "mcs1",
            Field::Mcs2 => "mcs2",
            Field::NofPrb => "nof_prb",
            Field::Ndi => "ndi",
            Field::Harq => "harq",
            Field::Reserved => "reserved",
        }
    }
}

/// The fields a message actually carries in its payload.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct DciFields {
    pub mcs1: u8,
    pub mcs2: Option<u8>,
    pub nof_prb: u16,
    pub ndi: bool,
    pub harq: u8,
}

/// Pack `fields` into the payload layout of `format`.
pub fn build_dci_payload(fields: &DciFields, format: DciFormat) -> Result<Vec<u8>> {
    match (format, fields.mcs2) {
        (DciFormat::B, None) => {
            return Err(Error::Format("format B requires a second MCS".into()));
        }
        (DciFormat::A | DciFormat::C, Some(_)) => {
            return Err(Error::Format(format!("format {format} carries a single MCS")));
        }
        _ => {}
    }
    let mut bits = Vec::with_capacity(format.payload_len());
    for &(field, width) in format.layout() {
        let value: u32 = match field {
            Field::Mcs1 => fields.mcs1 as u32,
            Field::Mcs2 => fields.mcs2.unwrap_or(0) as u32,
            Field::NofPrb => fields.nof_prb as u32,
            Field::Ndi => fields.ndi as u32,
            Field::Harq => fields.harq as u32,
            Field::Reserved => 0,
        };
        if value >> width != 0 {
            return Err(Error::FieldOverflow {
                field: field.name(),
                value,
                width,
            });
        }
        for i in (0..width).rev() {
            bits.push(((value >> i) & 1) as u8);
        }
    }
    debug_assert_eq!(bits.len(), format.payload_len());
    Ok(bits)
}

/// Unpack a payload. Reserved bits are ignored.
pub fn parse_dci_payload(bits: &[u8], format: DciFormat) -> Result<DciFields> {
    if bits.len() != format.payload_len() {
        return Err(Error::PayloadLength {
            format: format.as_char(),
            expected: format.payload_len(),
            got: bits.len(),
        });
    }
    let mut fields = DciFields::default();
    let mut pos = 0usize;
    for &(field, width) in format.layout() {
        let w = width as usize;
        let value = bits[pos..pos + w]
            .iter()
            .fold(0u32, |acc, &b| (acc << 1) | (b & 1) as u32);
        pos += w;
        match field {
            Field::Mcs1 => fields.mcs1 = value as u8,
            Field::Mcs2 => fields.mcs2 = Some(value as u8),
            Field::NofPrb => fields.nof_prb = value as u16,
            Field::Ndi => fields.ndi = value != 0,
            Field::Harq => fields.harq = value as u8,
            Field::Reserved => {}
        }
    }
    Ok(fields)
}

/// True when every reserved bit of the payload is zero, as the transmitter
/// always sends them.
pub fn reserved_bits_clear(bits: &[u8], format: DciFormat) -> bool {
    let mut pos = 0usize;
    for &(field, width) in format.layout() {
        let w = width as usize;
        if matches!(field, Field::Reserved) && bits[pos..pos + w].iter().any(|&b| b != 0) {
            return false;
        }
        pos += w;
    }
    true
}
