//! Ground-truth downlink scheduler with stop-and-wait HARQ.
//!
//! Each subframe and cell: due retransmissions go first, then backlogged UEs
//! are served round-robin (at most `max_messages` messages per subframe) and
//! the remaining PRBs are water-filled among them. Every transport block
//! fails independently with probability `1 - (1 - ber)^tbs`; a failed block is
//! retransmitted on the same HARQ process exactly 8 subframes later.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};

use crate::error::{Error, Result};
use crate::message::DciMessage;
use crate::phy::{tbs_lookup, DciFields, DciFormat, LEVELS};

use super::config::{CellConfig, CellRole, TrafficModel, UeProfile};
use super::placement::{place_messages, PlacementRequest};

pub const HARQ_PROCESSES: usize = 8;
pub const HARQ_RTT: u64 = 8;
/// Transmissions per transport block, including the first.
pub const MAX_TRANSMISSIONS: u8 = 4;

const FULL_BUFFER_BITS: f64 = 1e12;

/// Ground truth for one cell and subframe.
#[derive(Clone, Debug, PartialEq)]
pub struct SubframeTruth {
    pub sfn: u64,
    pub cell_id: u32,
    pub messages: Vec<DciMessage>,
    pub idle_prb: u16,
    /// `(rnti, harq)` of the retransmissions (ndi = false) in this subframe.
    pub retransmissions: Vec<(u16, u8)>,
    /// `(rnti, harq)` of blocks sent in this subframe that the UE failed to decode.
    pub failed: Vec<(u16, u8)>,
}

impl SubframeTruth {
    pub fn allocated_prb(&self) -> u32 {
        self.messages.iter().map(|m| m.nof_prb as u32).sum()
    }
}

/// Probability that a block of `tbs` bits contains at least one error when
/// bits fail independently with probability `ber`.
pub fn tb_failure_probability(ber: f64, tbs: u32) -> f64 {
    if ber <= 0.0 {
        return 0.0;
    }
    if ber >= 1.0 {
        return if tbs > 0 { 1.0 } else { 0.0 };
    }
    -(tbs as f64 * (-ber).ln_1p()).exp_m1()
}

#[derive(Clone, Debug, Default)]
struct HarqProcess {
    busy_until: u64,
    pending: Option<PendingRetx>,
}

#[derive(Clone, Debug)]
struct PendingRetx {
    due: u64,
    fields: DciFields,
    level: usize,
    transmissions: u8,
}

#[derive(Clone, Debug)]
pub(crate) struct UeState {
    pub profile: UeProfile,
    pub backlog_bits: f64,
    pub mcs: u8,
    traffic_on: bool,
    traffic_left_ms: f64,
    pub seen_on_primary: bool,
    harq: HashMap<u32, Vec<HarqProcess>>,
}

impl UeState {
    pub fn new(profile: UeProfile) -> Self {
        let harq = profile
            .ca_cells
            .iter()
            .map(|&c| (c, vec![HarqProcess::default(); HARQ_PROCESSES]))
            .collect();
        Self {
            mcs: profile.mcs.initial,
            backlog_bits: 0.0,
            traffic_on: true,
            traffic_left_ms: 0.0,
            seen_on_primary: false,
            harq,
            profile,
        }
    }

    pub fn advance_traffic(&mut self, rng: &mut ChaCha8Rng) {
        match self.profile.traffic {
            TrafficModel::FullBuffer => self.backlog_bits = FULL_BUFFER_BITS,
            TrafficModel::ConstantRate { bps } => self.backlog_bits += bps / 1000.0,
            TrafficModel::Bursty {
                bps,
                mean_on_ms,
                mean_off_ms,
            } => {
                if self.traffic_left_ms <= 0.0 {
                    self.traffic_on = !self.traffic_on;
                    let mean = if self.traffic_on { mean_on_ms } else { mean_off_ms };
                    self.traffic_left_ms = Exp::new(1.0 / mean.max(1e-3))
                        .map(|d| d.sample(rng))
                        .unwrap_or(1.0);
                }
                if self.traffic_on {
                    self.backlog_bits += bps / 1000.0;
                }
                self.traffic_left_ms -= 1.0;
            }
            TrafficModel::WebLike {
                flows_per_s,
                mean_flow_bytes,
            } => {
                let lambda = flows_per_s / 1000.0;
                if lambda > 0.0 {
                    let arrivals = Poisson::new(lambda).map(|d| d.sample(rng)).unwrap_or(0.0) as usize;
                    if let Ok(size) = Exp::new(1.0 / mean_flow_bytes.max(1.0)) {
                        for _ in 0..arrivals {
                            self.backlog_bits += 8.0 * size.sample(rng).ceil();
                        }
                    }
                }
            }
        }
    }

    pub fn advance_mcs(&mut self, rng: &mut ChaCha8Rng) {
        let p = self.profile.mcs;
        if p.step_prob > 0.0 && rng.gen_bool(p.step_prob.min(1.0)) {
            self.mcs = if rng.gen_bool(0.5) {
                self.mcs.saturating_add(1)
            } else {
                self.mcs.saturating_sub(1)
            }
            .clamp(p.min, p.max);
        }
    }

    fn draw_level(&self, rng: &mut ChaCha8Rng) -> usize {
        let w = &self.profile.level_weights;
        let total: f64 = w.iter().sum();
        let mut x = rng.gen::<f64>() * total;
        for (i, &wi) in w.iter().enumerate() {
            if x < wi {
                return LEVELS[i];
            }
            x -= wi;
        }
        LEVELS[3]
    }

    fn fields_for(&self, nof_prb: u16, harq: u8) -> DciFields {
        DciFields {
            mcs1: self.mcs,
            mcs2: (self.profile.dci_format() == DciFormat::B).then_some(self.mcs),
            nof_prb,
            ndi: true,
            harq,
        }
    }

    /// Smallest PRB count whose block holds the backlog, capped at `cap`.
    fn prbs_needed(&self, cap: u16) -> u16 {
        let format = self.profile.dci_format();
        let mcs2 = (format == DciFormat::B).then_some(self.mcs);
        let fits = |n: u16| {
            tbs_lookup(self.mcs, mcs2, n, format.streams()).unwrap_or(0) as f64 >= self.backlog_bits
        };
        if fits(0) {
            return 0;
        }
        let (mut lo, mut hi) = (0u16, cap);
        if !fits(hi) {
            return cap;
        }
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if fits(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SchedulerStats {
    pub placement_overflows: u64,
    pub dropped_retransmissions: u64,
    pub blocks_sent: u64,
    pub blocks_failed: u64,
}

#[derive(Clone, Debug)]
pub(crate) struct CellScheduler {
    pub cfg: CellConfig,
    rr_next: usize,
    max_messages: usize,
}

struct Selected {
    ue: usize,
    level: usize,
    nof_prb: u16,
}

impl CellScheduler {
    pub fn new(cfg: CellConfig, max_messages: usize) -> Self {
        Self {
            cfg,
            rr_next: 0,
            max_messages: max_messages.max(1),
        }
    }

    pub fn schedule(
        &mut self,
        sfn: u64,
        ues: &mut [UeState],
        ber: f64,
        rng: &mut ChaCha8Rng,
        stats: &mut SchedulerStats,
    ) -> Result<SubframeTruth> {
        let cell_id = self.cfg.cell_id;
        let n_ues = ues.len();

        // Due retransmissions.
        let mut retx: Vec<(usize, usize, PendingRetx)> = Vec::new();
        for (ui, ue) in ues.iter_mut().enumerate() {
            if let Some(procs) = ue.harq.get_mut(&cell_id) {
                for (h, p) in procs.iter_mut().enumerate() {
                    if p.pending.as_ref().is_some_and(|r| r.due == sfn) {
                        retx.push((ui, h, p.pending.take().unwrap()));
                    }
                }
            }
        }

        // Backlogged UEs with a free process, in round-robin order.
        let mut eligible: Vec<usize> = (0..n_ues)
            .filter(|&ui| {
                let ue = &ues[ui];
                let Some(procs) = ue.harq.get(&cell_id) else {
                    return false;
                };
                let is_primary = ue.profile.primary_cell() == Some(cell_id);
                (is_primary || ue.seen_on_primary)
                    && ue.backlog_bits >= 1.0
                    && !retx.iter().any(|r| r.0 == ui)
                    && procs.iter().any(|p| p.busy_until <= sfn && p.pending.is_none())
            })
            .collect();
        eligible.sort_by_key(|&ui| (ui + n_ues - self.rr_next % n_ues.max(1)) % n_ues.max(1));
        eligible.truncate(self.max_messages.saturating_sub(retx.len()));
        let mut levels: Vec<usize> = eligible.iter().map(|&ui| ues[ui].draw_level(rng)).collect();

        let retx_prb: u16 = retx.iter().map(|r| r.2.fields.nof_prb).sum();
        let mut selected: Vec<Selected>;
        let placements = loop {
            let avail = self.cfg.n_prb.saturating_sub(retx_prb);
            selected = allocate_prbs(&eligible, &levels, ues, avail);
            let mut requests: Vec<PlacementRequest> = retx
                .iter()
                .map(|(ui, _, p)| PlacementRequest {
                    rnti: ues[*ui].profile.rnti,
                    levels: std::iter::once(p.level)
                        .chain(LEVELS.iter().rev().copied().filter(|&l| l != p.level))
                        .collect(),
                })
                .collect();
            requests.extend(selected.iter().map(|s| PlacementRequest {
                rnti: ues[s.ue].profile.rnti,
                levels: vec![s.level],
            }));
            match place_messages(&requests, sfn, &self.cfg) {
                Ok(p) => break p,
                Err(overflow) => {
                    stats.placement_overflows += 1;
                    let idx = overflow.0;
                    if idx < retx.len() {
                        let (ui, h, _) = retx.remove(idx);
                        log::debug!(
                            "cell {cell_id} sfn {sfn}: retransmission for {:#06x}/{h} dropped, no CCEs",
                            ues[ui].profile.rnti
                        );
                        stats.dropped_retransmissions += 1;
                        ues[ui].harq.get_mut(&cell_id).unwrap()[h].busy_until = sfn;
                    } else {
                        let s = &selected[idx - retx.len()];
                        let pos = eligible.iter().position(|&u| u == s.ue).unwrap();
                        log::debug!(
                            "cell {cell_id} sfn {sfn}: {:#06x} unscheduled, control region full",
                            ues[s.ue].profile.rnti
                        );
                        eligible.remove(pos);
                        levels.remove(pos);
                    }
                }
            }
        };

        let mut messages = Vec::with_capacity(placements.len());
        let mut truth_retx = Vec::new();
        let mut failed = Vec::new();

        for ((ui, h, pending), place) in retx.iter().zip(&placements) {
            let ue = &mut ues[*ui];
            let mut fields = pending.fields;
            fields.ndi = false;
            let msg = DciMessage::from_fields(
                sfn,
                cell_id,
                ue.profile.rnti,
                ue.profile.dci_format(),
                fields,
                place.level as u8,
                place.cce_start as u16,
            )?;
            truth_retx.push((msg.rnti, *h as u8));
            let fail = rng.gen_bool(tb_failure_probability(ber, msg.tbs));
            stats.blocks_sent += 1;
            let proc_ = &mut ue.harq.get_mut(&cell_id).unwrap()[*h];
            proc_.busy_until = sfn + HARQ_RTT;
            if fail {
                stats.blocks_failed += 1;
                failed.push((msg.rnti, *h as u8));
                if pending.transmissions < MAX_TRANSMISSIONS {
                    proc_.pending = Some(PendingRetx {
                        due: sfn + HARQ_RTT,
                        fields: pending.fields,
                        level: place.level,
                        transmissions: pending.transmissions + 1,
                    });
                }
            }
            messages.push(msg);
        }

        for (s, place) in selected.iter().zip(&placements[retx.len()..]) {
            let ue = &mut ues[s.ue];
            let procs = ue.harq.get_mut(&cell_id).unwrap();
            let h = procs
                .iter()
                .position(|p| p.busy_until <= sfn && p.pending.is_none())
                .ok_or_else(|| Error::OutOfRange("no free HARQ process".into()))?;
            let fields = ue.fields_for(s.nof_prb, h as u8);
            let msg = DciMessage::from_fields(
                sfn,
                cell_id,
                ue.profile.rnti,
                ue.profile.dci_format(),
                fields,
                place.level as u8,
                place.cce_start as u16,
            )?;
            let fail = rng.gen_bool(tb_failure_probability(ber, msg.tbs));
            stats.blocks_sent += 1;
            let procs = ue.harq.get_mut(&cell_id).unwrap();
            procs[h].busy_until = sfn + HARQ_RTT;
            if fail {
                stats.blocks_failed += 1;
                failed.push((msg.rnti, h as u8));
                procs[h].pending = Some(PendingRetx {
                    due: sfn + HARQ_RTT,
                    fields,
                    level: place.level,
                    transmissions: 1,
                });
            }
            ue.backlog_bits = (ue.backlog_bits - msg.tbs as f64).max(0.0);
            if ue.profile.primary_cell() == Some(cell_id) {
                ue.seen_on_primary = true;
            }
            self.rr_next = (s.ue + 1) % n_ues.max(1);
            messages.push(msg);
        }
        for (ui, _, _) in &retx {
            if ues[*ui].profile.primary_cell() == Some(cell_id) {
                ues[*ui].seen_on_primary = true;
            }
        }

        let used: u32 = messages.iter().map(|m| m.nof_prb as u32).sum();
        debug_assert!(used <= self.cfg.n_prb as u32);
        Ok(SubframeTruth {
            sfn,
            cell_id,
            idle_prb: self.cfg.n_prb - used as u16,
            messages,
            retransmissions: truth_retx,
            failed,
        })
    }
}

/// Water-fill `avail` PRBs over the eligible UEs (in round-robin order).
/// UEs left without a PRB are not selected.
fn allocate_prbs(eligible: &[usize], levels: &[usize], ues: &[UeState], avail: u16) -> Vec<Selected> {
    let n = eligible.len();
    let mut given = vec![0u16; n];
    if n == 0 || avail == 0 {
        return Vec::new();
    }
    let needs: Vec<u16> = eligible.iter().map(|&ui| ues[ui].prbs_needed(avail).max(1)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (needs[i], i));
    let mut remaining = avail;
    for (k, &i) in order.iter().enumerate() {
        let share = remaining / (n - k) as u16;
        let g = needs[i].min(share);
        given[i] = g;
        remaining -= g;
    }
    // Hand out the division remainder in round-robin order.
    for i in 0..n {
        if remaining == 0 {
            break;
        }
        if given[i] < needs[i] {
            given[i] += 1;
            remaining -= 1;
        }
    }
    eligible
        .iter()
        .zip(levels)
        .zip(given)
        .filter(|(_, g)| *g > 0)
        .map(|((&ue, &level), nof_prb)| Selected { ue, level, nof_prb })
        .collect()
}

/// Config-level validation shared by the simulator entry points.
pub(crate) fn check_roles(cells: &[CellConfig], ues: &[UeProfile]) -> Result<()> {
    for ue in ues {
        ue.validate()?;
        for cid in &ue.ca_cells {
            if !cells.iter().any(|c| c.cell_id == *cid) {
                return Err(Error::Config(format!("UE {:#06x} references unknown cell {cid}", ue.rnti)));
            }
        }
        if let Some(p) = ue.primary_cell() {
            let cell = cells.iter().find(|c| c.cell_id == p).unwrap();
            if cell.role == CellRole::SecondaryOnly {
                return Err(Error::Config(format!(
                    "UE {:#06x}: cell {p} is secondary-only and cannot be primary",
                    ue.rnti
                )));
            }
        }
    }
    let mut rntis: Vec<u16> = ues.iter().map(|u| u.rnti).collect();
    rntis.sort_unstable();
    if rntis.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("duplicate RNTI".into()));
    }
    Ok(())
}
