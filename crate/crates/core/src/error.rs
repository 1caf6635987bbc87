use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("field `{field}` value {value} does not fit in {width} bits")]
    FieldOverflow {
        field: &'static str,
        value: u32,
        width: u32,
    },
    #[error("payload has {got} bits, format {format} expects {expected}")]
    PayloadLength {
        format: char,
        expected: usize,
        got: usize,
    },
    #[error("invalid MCS index {0} (valid range 0..=28)")]
    InvalidMcs(u8),
    #[error("RNTI {0:#06x} outside the usable C-RNTI range")]
    InvalidRnti(u16),
    #[error("subframe {sfn} carries {got} CCEs, cell expects {expected}")]
    MalformedSubframe { sfn: u64, expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data format error: {0}")]
    Format(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("no retransmission events available for alignment")]
    AlignmentUnavailable,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
