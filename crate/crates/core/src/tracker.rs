//! Temporal validation of derived RNTIs and the per-cell detected-UE list.
//!
//! Candidates that the decoder could not validate are buffered for 16
//! subframes. An RNTI seen in more than two of those subframes is promoted to
//! a detected UE and its buffered messages are released; later candidates
//! for a detected RNTI are accepted at once. UEs silent for 10 s are dropped.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::decoder::{DecodeReport, DecodedMessage, UeHint, ValidatedBy};
use crate::phy::DciFormat;

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerConfig {
    /// Subframes a candidate stays buffered.
    pub window: u64,
    /// Promotion needs strictly more appearances than this.
    pub promote_after: u32,
    /// Subframes of silence after which a detected UE is removed.
    pub expiry: u64,
    /// Length of the activity window used for hints and rate estimates.
    pub activity_window: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            window: 16,
            promote_after: 2,
            expiry: 10_000,
            activity_window: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerEventKind {
    Promoted,
    Expired,
    CaDetected,
}

impl TrackerEventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TrackerEventKind::Promoted => "promoted",
            TrackerEventKind::Expired => "expired",
            TrackerEventKind::CaDetected => "ca_detected",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrackerEvent {
    pub sfn: u64,
    pub cell_id: u32,
    pub rnti: u16,
    pub kind: TrackerEventKind,
    pub primary_cell: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectedUe {
    pub rnti: u16,
    pub first_seen_sfn: u64,
    pub last_active_sfn: u64,
    pub formats: Vec<DciFormat>,
    recent: VecDeque<(u64, u32)>,
    recent_bits: u64,
}

impl DetectedUe {
    pub fn recent_messages(&self) -> u32 {
        self.recent.len() as u32
    }

    /// Bits scheduled over the activity window.
    pub fn recent_bits(&self) -> u64 {
        self.recent_bits
    }

    fn note(&mut self, sfn: u64, tbs: u32, format: DciFormat) {
        self.last_active_sfn = self.last_active_sfn.max(sfn);
        self.recent.push_back((sfn, tbs));
        self.recent_bits += tbs as u64;
        if !self.formats.contains(&format) {
            self.formats.push(format);
            self.formats.sort();
        }
    }

    fn prune(&mut self, now: u64, window: u64) {
        while let Some(&(s, tbs)) = self.recent.front() {
            if s + window > now {
                break;
            }
            self.recent.pop_front();
            self.recent_bits -= tbs as u64;
        }
    }
}

/// One buffered appearance. Messages the decoder already validated are not
/// `pending`: they count towards promotion but are not released again.
#[derive(Clone, Debug, PartialEq)]
struct Appearance {
    sfn: u64,
    rnti: u16,
    msg: DecodedMessage,
    pending: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerState {
    pub cell_id: u32,
    cfg: TrackerConfig,
    ring: VecDeque<Appearance>,
    /// Distinct subframes each buffered RNTI appeared in.
    counts: HashMap<u16, u32>,
    detected: BTreeMap<u16, DetectedUe>,
    events: Vec<TrackerEvent>,
    now: u64,
}

impl TrackerState {
    pub fn new(cell_id: u32, cfg: TrackerConfig) -> Self {
        Self {
            cell_id,
            cfg,
            ring: VecDeque::new(),
            counts: HashMap::new(),
            detected: BTreeMap::new(),
            events: Vec::new(),
            now: 0,
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn is_detected(&self, rnti: u16) -> bool {
        self.detected.contains_key(&rnti)
    }

    pub fn detected(&self) -> impl Iterator<Item = &DetectedUe> {
        self.detected.values()
    }

    pub fn appearance_count(&self, rnti: u16) -> u32 {
        self.counts.get(&rnti).copied().unwrap_or(0)
    }

    /// Events since the last call.
    pub fn take_events(&mut self) -> Vec<TrackerEvent> {
        std::mem::take(&mut self.events)
    }

    fn evict(&mut self, sfn: u64) {
        while let Some(a) = self.ring.front() {
            if a.sfn + self.cfg.window > sfn {
                break;
            }
            let a = self.ring.pop_front().unwrap();
            let last_in_sfn = !self.ring.iter().any(|b| b.sfn == a.sfn && b.rnti == a.rnti);
            if last_in_sfn {
                if let Some(c) = self.counts.get_mut(&a.rnti) {
                    *c -= 1;
                    if *c == 0 {
                        self.counts.remove(&a.rnti);
                    }
                }
            }
        }
    }

    fn advance(&mut self, sfn: u64) {
        self.now = self.now.max(sfn);
        self.evict(sfn);
        self.expire(sfn);
        for ue in self.detected.values_mut() {
            ue.prune(sfn, self.cfg.activity_window);
        }
    }

    fn note_active(&mut self, m: &DecodedMessage) {
        if let Some(ue) = self.detected.get_mut(&m.msg.rnti) {
            ue.note(m.msg.sfn, m.msg.tbs, m.msg.format);
        }
    }

    /// Buffer one appearance; returns the released messages if it promotes.
    fn appear(&mut self, sfn: u64, msg: DecodedMessage, pending: bool) -> Vec<DecodedMessage> {
        let rnti = msg.msg.rnti;
        let new_sfn = !self.ring.iter().any(|a| a.sfn == sfn && a.rnti == rnti);
        self.ring.push_back(Appearance {
            sfn,
            rnti,
            msg,
            pending,
        });
        if new_sfn {
            *self.counts.entry(rnti).or_insert(0) += 1;
        }
        if self.counts[&rnti] <= self.cfg.promote_after {
            return Vec::new();
        }
        self.counts.remove(&rnti);
        let mut first_seen = sfn;
        let mut mine = Vec::new();
        self.ring.retain(|a| {
            if a.rnti == rnti {
                first_seen = first_seen.min(a.sfn);
                mine.push(a.clone());
                false
            } else {
                true
            }
        });
        self.detected.insert(
            rnti,
            DetectedUe {
                rnti,
                first_seen_sfn: first_seen,
                last_active_sfn: sfn,
                formats: Vec::new(),
                recent: VecDeque::new(),
                recent_bits: 0,
            },
        );
        self.events.push(TrackerEvent {
            sfn,
            cell_id: self.cell_id,
            rnti,
            kind: TrackerEventKind::Promoted,
            primary_cell: None,
        });
        let mut released = Vec::new();
        let ue = self.detected.get_mut(&rnti).unwrap();
        for a in mine {
            let mut m = a.msg;
            ue.note(m.msg.sfn, m.msg.tbs, m.msg.format);
            if a.pending {
                m.validated_by = ValidatedBy::Tracker;
                released.push(m);
            }
        }
        released
    }

    /// Record messages the decoder validated in subframe `sfn`. They count
    /// as appearances of their RNTI and may promote it; returns the buffered
    /// candidates released by such a promotion.
    pub fn record_validated(&mut self, validated: &[DecodedMessage], sfn: u64) -> Vec<DecodedMessage> {
        self.advance(sfn);
        let mut released = Vec::new();
        for m in validated {
            if self.is_detected(m.msg.rnti) {
                self.note_active(m);
            } else {
                released.extend(self.appear(sfn, m.clone(), false));
            }
        }
        released
    }

    /// Feed unvalidated candidates of subframe `sfn` (already through the
    /// flip filter). Returns the messages validated by this call: candidates
    /// of detected UEs, and everything buffered for an RNTI that this call
    /// promoted.
    pub fn observe(&mut self, candidates: Vec<DecodedMessage>, sfn: u64) -> Vec<DecodedMessage> {
        self.advance(sfn);
        let mut out = Vec::new();
        for mut c in candidates {
            if self.is_detected(c.msg.rnti) {
                c.validated_by = ValidatedBy::Tracker;
                self.note_active(&c);
                out.push(c);
            } else {
                out.extend(self.appear(sfn, c, true));
            }
        }
        out
    }

    /// Decoder-validated messages plus tracker output for one report.
    pub fn observe_report(&mut self, report: &DecodeReport) -> Vec<DecodedMessage> {
        let mut out = self.record_validated(&report.validated, report.sfn);
        out.extend(self.observe(report.candidates.clone(), report.sfn));
        out
    }

    /// Remove detected UEs silent for at least the expiry period.
    pub fn expire(&mut self, now_sfn: u64) -> Vec<u16> {
        let expiry = self.cfg.expiry;
        let gone: Vec<u16> = self
            .detected
            .values()
            .filter(|u| now_sfn.saturating_sub(u.last_active_sfn) >= expiry)
            .map(|u| u.rnti)
            .collect();
        for &r in &gone {
            self.detected.remove(&r);
            self.events.push(TrackerEvent {
                sfn: now_sfn,
                cell_id: self.cell_id,
                rnti: r,
                kind: TrackerEventKind::Expired,
                primary_cell: None,
            });
        }
        gone
    }

    /// Decode-priority hints for the detected UEs.
    pub fn hints(&self) -> Vec<UeHint> {
        self.detected
            .values()
            .map(|u| UeHint {
                rnti: u.rnti,
                formats: if u.formats.is_empty() {
                    DciFormat::ALL.to_vec()
                } else {
                    u.formats.clone()
                },
                recent_messages: u.recent_messages(),
            })
            .collect()
    }

    pub fn snapshot(&self) -> TrackerSnapshot {
        TrackerSnapshot {
            cell_id: self.cell_id,
            sfn: self.now,
            activity_window: self.cfg.activity_window,
            ues: self
                .detected
                .values()
                .map(|u| SnapshotUe {
                    rnti: u.rnti,
                    first_seen_sfn: u.first_seen_sfn,
                    last_active_sfn: u.last_active_sfn,
                    recent_bits: u.recent_bits,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotUe {
    pub rnti: u16,
    pub first_seen_sfn: u64,
    pub last_active_sfn: u64,
    pub recent_bits: u64,
}

/// Immutable copy of one cell's detected-UE list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerSnapshot {
    pub cell_id: u32,
    pub sfn: u64,
    pub activity_window: u64,
    pub ues: Vec<SnapshotUe>,
}

/// Carrier-aggregation rate threshold.
pub const CA_MIN_RATE_BPS: f64 = 3e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaEntry {
    /// `(cell_id, first_seen_sfn)`, primary first.
    pub cells: Vec<(u32, u64)>,
    pub rate_bps: f64,
}

impl CaEntry {
    pub fn primary(&self) -> u32 {
        self.cells[0].0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaMap {
    pub entries: BTreeMap<u16, CaEntry>,
}

impl CaMap {
    pub fn cells_of(&self, rnti: u16) -> Option<Vec<u32>> {
        self.entries.get(&rnti).map(|e| e.cells.iter().map(|c| c.0).collect())
    }
}

/// RNTIs detected in two or more cells with a combined recent rate of at
/// least `min_rate_bps`. Cells are ordered by first appearance; equal times
/// go to the lower cell id.
pub fn ca_intersect(snapshots: &[TrackerSnapshot], min_rate_bps: f64) -> CaMap {
    let mut seen: BTreeMap<u16, (Vec<(u32, u64)>, f64)> = BTreeMap::new();
    for s in snapshots {
        let secs = s.activity_window.max(1) as f64 / 1000.0;
        for u in &s.ues {
            let e = seen.entry(u.rnti).or_default();
            e.0.push((s.cell_id, u.first_seen_sfn));
            e.1 += u.recent_bits as f64 / secs;
        }
    }
    let entries = seen
        .into_iter()
        .filter(|(_, (cells, rate))| cells.len() >= 2 && *rate >= min_rate_bps)
        .map(|(rnti, (mut cells, rate))| {
            cells.sort_by_key(|&(c, t)| (t, c));
            (rnti, CaEntry { cells, rate_bps: rate })
        })
        .collect();
    CaMap { entries }
}
