//! Single decode attempts and ancestor-based validation.

use std::sync::OnceLock;

use crate::message::is_usable_rnti;
use crate::phy::crc::derive_rnti;
use crate::phy::rate_match::{combine_repetitions, deinterleave_soft, interleaver_permutation};
use crate::phy::tbs::MAX_MCS;
use crate::phy::{conv_encode, interleave, parse_dci_payload, rate_match, reserved_bits_clear, search_space};
use crate::phy::{DciFields, DciFormat, CCE_BITS};
use crate::sim::LlrSubframe;

use super::viterbi::viterbi_decode;

/// Candidates whose re-encoded bits disagree with more than this fraction of
/// hard decisions are dropped.
pub const FLIP_LIMIT: f32 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateMessage {
    pub cce_start: usize,
    pub level: usize,
    pub format: DciFormat,
    pub payload: Vec<u8>,
    pub derived_rnti: u16,
    /// Fraction of hard-decision coded bits that disagree with the
    /// re-encoded payload.
    pub flip_ratio: f32,
    /// Largest per-CCE flip fraction over the candidate's CCEs.
    pub worst_cce_flip: f32,
    pub path_metric: f32,
}

impl CandidateMessage {
    pub fn passes_flip_filter(&self) -> bool {
        self.flip_ratio <= FLIP_LIMIT
    }

    /// Every CCE of the candidate looks like part of this message.
    pub fn consistent_per_cce(&self) -> bool {
        self.worst_cce_flip <= FLIP_LIMIT
    }

    pub fn cces(&self) -> std::ops::Range<usize> {
        self.cce_start..self.cce_start + self.level
    }

    /// Same message content: format, payload and RNTI.
    pub fn same_message(&self, other: &CandidateMessage) -> bool {
        self.format == other.format && self.derived_rnti == other.derived_rnti && self.payload == other.payload
    }
}

fn permutation(format: DciFormat) -> &'static [usize] {
    static P: OnceLock<[Vec<usize>; 3]> = OnceLock::new();
    let all = P.get_or_init(|| DciFormat::ALL.map(|f| interleaver_permutation(f.block_len())));
    &all[format as usize]
}

/// Decode `level` CCEs starting at `cce_start` as a message of `format`.
pub fn attempt_decode(sub: &LlrSubframe, cce_start: usize, level: usize, format: DciFormat) -> CandidateMessage {
    let received = sub.span(cce_start, level);
    let k = format.block_len();
    let buffer = combine_repetitions(received, 3 * k);
    let soft = deinterleave_soft(&buffer, permutation(format));
    let out = viterbi_decode(&soft, k);
    let (payload, derived_rnti) = derive_rnti(&out.bits);

    let reencoded = rate_match(&interleave(&conv_encode(&out.bits)), level);
    let mut flips = 0usize;
    let mut worst = 0usize;
    for (c, llrs) in reencoded.chunks(CCE_BITS).zip(received.chunks(CCE_BITS)) {
        let f = c.iter().zip(llrs).filter(|(&b, &l)| (b == 1) != (l < 0.0)).count();
        flips += f;
        worst = worst.max(f);
    }
    CandidateMessage {
        cce_start,
        level,
        format,
        payload: payload.to_vec(),
        derived_rnti,
        flip_ratio: flips as f32 / received.len() as f32,
        worst_cce_flip: worst as f32 / CCE_BITS as f32,
        path_metric: out.path_metric,
    }
}

/// Content checks a genuine message always passes: usable RNTI, zero reserved
/// bits, valid MCS, 1..=n_prb PRBs, and a start inside the RNTI's search
/// space at that level. Returns the parsed fields on success.
pub fn plausible_fields(c: &CandidateMessage, sfn: u64, n_prb: u16, usable_cces: usize) -> Option<DciFields> {
    if !is_usable_rnti(c.derived_rnti) || !reserved_bits_clear(&c.payload, c.format) {
        return None;
    }
    let f = parse_dci_payload(&c.payload, c.format).ok()?;
    if f.mcs1 > MAX_MCS || f.mcs2.is_some_and(|m| m > MAX_MCS) || f.nof_prb == 0 || f.nof_prb > n_prb {
        return None;
    }
    if c.cce_start + c.level > usable_cces
        || !search_space(c.derived_rnti, sfn, c.level, usable_cces).contains(&c.cce_start)
    {
        return None;
    }
    Some(f)
}

/// Compare a node's candidate with the candidates of its same-start
/// ancestors. A match needs the same payload and RNTI at two or more levels,
/// each consistent on every CCE it covers; the message is then validated at
/// the largest such level that `accept` admits, and that candidate is
/// returned. A lone consistent level is left to the UE tracker: a parent
/// whose decode is dominated by one occupied child reproduces the child's
/// message without carrying it.
pub fn child_ancestor_match<'a>(
    node: &'a CandidateMessage,
    ancestors: &[&'a CandidateMessage],
    accept: impl Fn(&CandidateMessage) -> bool,
) -> Option<&'a CandidateMessage> {
    let mut chain: Vec<&CandidateMessage> = ancestors
        .iter()
        .copied()
        .filter(|a| a.cce_start == node.cce_start && a.level > node.level && a.same_message(node))
        .chain(std::iter::once(node))
        .filter(|c| c.consistent_per_cce())
        .collect();
    chain.sort_by_key(|c| std::cmp::Reverse(c.level));
    let smallest = chain.last()?.level;
    chain.into_iter().find(|c| c.level > smallest && accept(c))
}
