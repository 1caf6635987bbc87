//! Blind decoding of a whole control region.
//!
//! Order of work:
//! 1. normalize LLRs and prune empty CCEs;
//! 2. try the search spaces of already-detected UEs with their known formats
//!    (a hit needs the derived RNTI to equal the UE's);
//! 3. walk each 8-CCE segment tree root first, trying every format per node
//!    and validating a message once a node and a same-start ancestor decode
//!    to the same payload and RNTI;
//! 4. hand the remaining plausible candidates to the UE tracker.
//!
//! Decoding stops once validated messages account for every PRB of the cell.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::message::DciMessage;
use crate::phy::{DciFields, DciFormat, CCE_BITS, LEVELS};
use crate::sim::{CellConfig, LlrSubframe};

use super::candidate::{attempt_decode, child_ancestor_match, plausible_fields, CandidateMessage};
use super::normalize::{mark_empty_cces, normalize_llrs, EMPTY_THRESHOLD};
use super::tree::{SearchTree, SEGMENT_CCES};

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    pub cell_id: u32,
    pub n_prb: u16,
    pub usable_cces: usize,
    pub empty_threshold: f32,
    /// Viterbi runs allowed per subframe.
    pub max_attempts: usize,
}

impl DecoderConfig {
    pub fn for_cell(cell: &CellConfig) -> Self {
        Self {
            cell_id: cell.cell_id,
            n_prb: cell.n_prb,
            usable_cces: cell.usable_cces,
            empty_threshold: EMPTY_THRESHOLD,
            max_attempts: usize::MAX,
        }
    }

    /// Control-region size in CCEs including padding.
    pub fn n_cce(&self) -> usize {
        self.usable_cces.div_ceil(SEGMENT_CCES).max(1) * SEGMENT_CCES
    }
}

/// A detected UE whose search space is decoded first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UeHint {
    pub rnti: u16,
    pub formats: Vec<DciFormat>,
    /// Messages seen in the last second; busier UEs are tried first.
    pub recent_messages: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidatedBy {
    Ancestor,
    Tracker,
}

impl ValidatedBy {
    pub fn as_str(self) -> &'static str {
        match self {
            ValidatedBy::Ancestor => "ancestor",
            ValidatedBy::Tracker => "tracker",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodedMessage {
    pub msg: DciMessage,
    pub flip_ratio: f32,
    pub validated_by: ValidatedBy,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DecodeReport {
    pub sfn: u64,
    pub cell_id: u32,
    pub validated: Vec<DecodedMessage>,
    /// Plausible but unvalidated messages, for the UE tracker.
    pub candidates: Vec<DecodedMessage>,
    pub attempts: usize,
    pub pruned_cces: usize,
}

struct Work<'a> {
    sub: LlrSubframe,
    cfg: &'a DecoderConfig,
    cache: HashMap<(usize, usize, DciFormat), CandidateMessage>,
    attempts: usize,
    used: Vec<bool>,
    empty: Vec<bool>,
    prb: u32,
    validated: Vec<DecodedMessage>,
}

impl Work<'_> {
    fn exhausted(&self) -> bool {
        self.attempts >= self.cfg.max_attempts || self.prb >= self.cfg.n_prb as u32
    }

    fn attempt(&mut self, start: usize, level: usize, format: DciFormat) -> Option<&CandidateMessage> {
        let key = (start, level, format);
        if !self.cache.contains_key(&key) {
            if self.attempts >= self.cfg.max_attempts {
                return None;
            }
            self.attempts += 1;
            let c = attempt_decode(&self.sub, start, level, format);
            self.cache.insert(key, c);
        }
        self.cache.get(&key)
    }

    fn free(&self, start: usize, level: usize) -> bool {
        start + level <= self.cfg.usable_cces && self.used[start..start + level].iter().all(|u| !u)
    }

    fn all_occupied(&self, start: usize, level: usize) -> bool {
        self.empty[start..start + level].iter().all(|e| !e)
    }

    fn fields(&self, c: &CandidateMessage) -> Option<DciFields> {
        plausible_fields(c, self.sub.sfn, self.cfg.n_prb, self.cfg.usable_cces)
    }

    fn accept(&mut self, c: &CandidateMessage, fields: DciFields, by: ValidatedBy) -> Result<()> {
        let msg = DciMessage::from_fields(
            self.sub.sfn,
            self.cfg.cell_id,
            c.derived_rnti,
            c.format,
            fields,
            c.level as u8,
            c.cce_start as u16,
        )?;
        self.used[c.cces()].iter_mut().for_each(|u| *u = true);
        self.prb += msg.nof_prb as u32;
        self.validated.push(DecodedMessage {
            msg,
            flip_ratio: c.flip_ratio,
            validated_by: by,
        });
        Ok(())
    }

    /// A hit whose larger same-start nodes decode to the same message was
    /// sent at the larger level: one of its CCEs looked empty, so the larger
    /// node was not tried first.
    fn widen(&mut self, mut c: CandidateMessage, mut f: DciFields, rnti: u16) -> (CandidateMessage, DciFields) {
        let mut level = c.level * 2;
        while level <= SEGMENT_CCES && c.cce_start.is_multiple_of(level) {
            if self.free(c.cce_start, level) {
                if let Some(w) = self.attempt(c.cce_start, level, c.format).cloned() {
                    if w.derived_rnti == rnti && w.same_message(&c) && w.consistent_per_cce() {
                        if let Some(wf) = self.fields(&w) {
                            c = w;
                            f = wf;
                        }
                    }
                }
            }
            level *= 2;
        }
        (c, f)
    }

    fn hint_pass(&mut self, hints: &[UeHint]) -> Result<()> {
        let mut order: Vec<&UeHint> = hints.iter().collect();
        order.sort_by(|a, b| b.recent_messages.cmp(&a.recent_messages).then(a.rnti.cmp(&b.rnti)));
        for hint in order {
            if self.exhausted() {
                return Ok(());
            }
            if self.validated.iter().any(|d| d.msg.rnti == hint.rnti) {
                continue;
            }
            'levels: for &level in LEVELS.iter().rev() {
                for start in crate::phy::search_space(hint.rnti, self.sub.sfn, level, self.cfg.usable_cces) {
                    if !self.free(start, level) || !self.all_occupied(start, level) {
                        continue;
                    }
                    for &format in &hint.formats {
                        let Some(c) = self.attempt(start, level, format).cloned() else {
                            return Ok(());
                        };
                        if c.derived_rnti != hint.rnti || !c.passes_flip_filter() || !c.consistent_per_cce() {
                            continue;
                        }
                        if let Some(f) = self.fields(&c) {
                            let (c, f) = self.widen(c, f, hint.rnti);
                            self.accept(&c, f, ValidatedBy::Tracker)?;
                            break 'levels;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn tree_pass(&mut self) -> Result<()> {
        let n_seg = self.cfg.n_cce() / SEGMENT_CCES;
        for seg in 0..n_seg {
            let base = seg * SEGMENT_CCES;
            let mut tree = SearchTree::build(&self.empty[base..base + SEGMENT_CCES]);
            for (offset, level) in tree.candidates() {
                if self.exhausted() {
                    return Ok(());
                }
                let start = base + offset;
                if !self.free(start, level) {
                    continue;
                }
                let ancestors = SearchTree::same_start_ancestors(offset, level);
                // Formats already seen at an ancestor come first: they are
                // the ones that can produce a match.
                let mut formats: Vec<DciFormat> = Vec::with_capacity(3);
                for &(_, al) in &ancestors {
                    for f in DciFormat::ALL {
                        if self.cache.get(&(start, al, f)).is_some_and(|c| c.passes_flip_filter()) && !formats.contains(&f) {
                            formats.push(f);
                        }
                    }
                }
                for f in DciFormat::ALL {
                    if !formats.contains(&f) {
                        formats.push(f);
                    }
                }
                for format in formats {
                    let Some(node) = self.attempt(start, level, format).cloned() else {
                        return Ok(());
                    };
                    if !node.passes_flip_filter() {
                        continue;
                    }
                    let anc: Vec<&CandidateMessage> = ancestors
                        .iter()
                        .filter_map(|&(_, al)| self.cache.get(&(start, al, format)))
                        .filter(|c| c.passes_flip_filter())
                        .collect();
                    let chosen = child_ancestor_match(&node, &anc, |c| {
                        self.free(c.cce_start, c.level) && self.fields(c).is_some()
                    })
                    .cloned();
                    if let Some(c) = chosen {
                        let f = self.fields(&c).expect("checked by accept closure");
                        self.accept(&c, f, ValidatedBy::Ancestor)?;
                        tree.mark_decoded(c.cce_start - base, c.level);
                        break;
                    }
                }
            }
        }
        Ok(())
    }

    /// Unvalidated candidates for the tracker: plausible, consistent on every
    /// CCE, clear of validated messages; one per RNTI.
    fn tracker_candidates(&self) -> Vec<DecodedMessage> {
        let mut best: BTreeMap<u16, (&CandidateMessage, DciFields)> = BTreeMap::new();
        let mut keys: Vec<_> = self.cache.keys().copied().collect();
        keys.sort();
        for key in keys {
            let c = &self.cache[&key];
            if !c.passes_flip_filter() || !c.consistent_per_cce() || !self.free(c.cce_start, c.level) {
                continue;
            }
            if self.validated.iter().any(|d| d.msg.rnti == c.derived_rnti) {
                continue;
            }
            let Some(f) = self.fields(c) else { continue };
            let better = match best.get(&c.derived_rnti) {
                None => true,
                Some((b, _)) => (c.worst_cce_flip, c.flip_ratio) < (b.worst_cce_flip, b.flip_ratio),
            };
            if better {
                best.insert(c.derived_rnti, (c, f));
            }
        }
        best.into_values()
            .filter_map(|(c, f)| {
                DciMessage::from_fields(
                    self.sub.sfn,
                    self.cfg.cell_id,
                    c.derived_rnti,
                    c.format,
                    f,
                    c.level as u8,
                    c.cce_start as u16,
                )
                .ok()
                .map(|msg| DecodedMessage {
                    msg,
                    flip_ratio: c.flip_ratio,
                    validated_by: ValidatedBy::Tracker,
                })
            })
            .collect()
    }
}

/// Decode one subframe. `hints` is a read-only snapshot of the detected UEs.
pub fn decode_subframe(sub: &LlrSubframe, cfg: &DecoderConfig, hints: &[UeHint]) -> Result<DecodeReport> {
    let n_cce = cfg.n_cce();
    if sub.llrs.len() != n_cce * CCE_BITS {
        return Err(Error::MalformedSubframe {
            sfn: sub.sfn,
            expected: n_cce * CCE_BITS,
            got: sub.llrs.len(),
        });
    }
    let norm = normalize_llrs(sub, cfg.usable_cces);
    let empty = mark_empty_cces(&norm, cfg.empty_threshold);
    let pruned_cces = empty.iter().filter(|&&e| e).count();
    let mut w = Work {
        sub: norm,
        cfg,
        cache: HashMap::new(),
        attempts: 0,
        used: vec![false; n_cce],
        empty,
        prb: 0,
        validated: Vec::new(),
    };
    w.hint_pass(hints)?;
    w.tree_pass()?;
    let candidates = w.tracker_candidates();
    let mut validated = std::mem::take(&mut w.validated);
    validated.sort_by_key(|d| d.msg.cce_start);
    Ok(DecodeReport {
        sfn: sub.sfn,
        cell_id: cfg.cell_id,
        validated,
        candidates,
        attempts: w.attempts,
        pruned_cces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{build_occupancy, channel_apply, Bandwidth};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn msg(rnti: u16, format: DciFormat, level: u8, start: u16, nof_prb: u16) -> DciMessage {
        let f = DciFields {
            mcs1: 12,
            mcs2: (format == DciFormat::B).then_some(12),
            nof_prb,
            ndi: true,
            harq: 1,
        };
        DciMessage::from_fields(0, 1, rnti, format, f, level, start).unwrap()
    }

    /// An RNTI whose search space at `level` and sfn 0 starts at `start`.
    fn rnti_at(level: usize, start: usize, usable: usize) -> u16 {
        (0x100u16..0xF000)
            .find(|&r| crate::phy::search_space(r, 0, level, usable).contains(&start))
            .unwrap()
    }

    #[test]
    fn empty_subframe_costs_nothing() {
        let cell = CellConfig::new(1, Bandwidth::Mhz20);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sub = channel_apply(&crate::sim::Occupancy::empty(88), 0, 1, 5.0, &mut rng);
        let r = decode_subframe(&sub, &DecoderConfig::for_cell(&cell), &[]).unwrap();
        assert!(r.validated.is_empty());
        assert_eq!(r.attempts, 0);
        assert_eq!(r.pruned_cces, 88);
    }

    #[test]
    fn malformed_subframe_rejected() {
        let cell = CellConfig::new(1, Bandwidth::Mhz5);
        let sub = LlrSubframe::zeros(0, 1, 8);
        assert!(matches!(
            decode_subframe(&sub, &DecoderConfig::for_cell(&cell), &[]),
            Err(Error::MalformedSubframe { .. })
        ));
    }

    #[test]
    fn full_allocation_halts_traversal() {
        let cell = CellConfig::new(1, Bandwidth::Mhz10);
        let r = rnti_at(8, 0, cell.usable_cces);
        let m = msg(r, DciFormat::A, 8, 0, cell.n_prb);
        // A second message in a later segment is never reached.
        let r2 = rnti_at(2, 16, cell.usable_cces);
        let m2 = msg(r2, DciFormat::C, 2, 16, 1);
        let occ = build_occupancy(&[m.clone(), m2], &cell).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sub = channel_apply(&occ, 0, 1, 10.0, &mut rng);
        let rep = decode_subframe(&sub, &DecoderConfig::for_cell(&cell), &[]).unwrap();
        assert_eq!(rep.validated.len(), 1);
        assert_eq!(rep.validated[0].msg, m);
        assert_eq!(rep.validated[0].validated_by, ValidatedBy::Ancestor);
        assert!(rep.attempts <= 6);
    }

    #[test]
    fn level_one_goes_to_tracker_unless_hinted() {
        let cell = CellConfig::new(1, Bandwidth::Mhz10);
        let r = rnti_at(1, 5, cell.usable_cces);
        let m = msg(r, DciFormat::A, 1, 5, 10);
        let occ = build_occupancy(std::slice::from_ref(&m), &cell).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sub = channel_apply(&occ, 0, 1, 10.0, &mut rng);
        let cfg = DecoderConfig::for_cell(&cell);
        let rep = decode_subframe(&sub, &cfg, &[]).unwrap();
        assert!(rep.validated.is_empty());
        assert!(rep.candidates.iter().any(|d| d.msg == m));

        let hint = UeHint {
            rnti: r,
            formats: vec![DciFormat::A],
            recent_messages: 5,
        };
        let rep = decode_subframe(&sub, &cfg, &[hint]).unwrap();
        assert_eq!(rep.validated.len(), 1);
        assert_eq!(rep.validated[0].msg, m);
        assert_eq!(rep.validated[0].validated_by, ValidatedBy::Tracker);
        assert!(rep.candidates.iter().all(|d| d.msg.rnti != r));
    }

    #[test]
    fn max_attempts_caps_work() {
        let cell = CellConfig::new(1, Bandwidth::Mhz10);
        let r = rnti_at(1, 5, cell.usable_cces);
        let occ = build_occupancy(&[msg(r, DciFormat::A, 1, 5, 10)], &cell).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sub = channel_apply(&occ, 0, 1, 10.0, &mut rng);
        let mut cfg = DecoderConfig::for_cell(&cell);
        cfg.max_attempts = 4;
        assert_eq!(decode_subframe(&sub, &cfg, &[]).unwrap().attempts, 4);
    }
}
