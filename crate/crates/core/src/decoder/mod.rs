//! Blind decoder for the downlink control channel.

pub mod candidate;
pub mod normalize;
pub mod subframe;
pub mod tree;
pub mod viterbi;

pub use candidate::{attempt_decode, child_ancestor_match, CandidateMessage, FLIP_LIMIT};
pub use normalize::{mark_empty_cces, normalize_llrs, EMPTY_THRESHOLD};
pub use subframe::{decode_subframe, DecodeReport, DecodedMessage, DecoderConfig, UeHint, ValidatedBy};
pub use tree::{NodeStatus, SearchTree};
pub use viterbi::{viterbi_decode, viterbi_decode_exact, ViterbiOutput};
