//! Per-millisecond capacity estimates for one target UE.
//!
//! Capacity at a subframe is the PRBs the target could use (its own plus the
//! idle ones) times the bits each PRB carries for the target. Estimates are
//! smoothed over a sliding window and summed over the target's aggregated
//! cells.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::message::DciMessage;
use crate::phy::tbs::{EFFICIENCY, RE_PER_PRB};
use crate::sim::CellConfig;

/// Default smoothing window in subframes.
pub const DEFAULT_WINDOW: usize = 100;

/// Values kept for the cell-wide bits-per-PRB median.
const MEDIAN_HISTORY: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityConfig {
    pub target: u16,
    /// Subframes a bits-per-PRB value is held after the target was last
    /// scheduled.
    pub hold_ms: u64,
    /// Time constant of the decay towards the cell median after the hold.
    pub decay_ms: f64,
    /// Used until the target has been scheduled once.
    pub default_bits_per_prb: f64,
}

impl CapacityConfig {
    pub fn new(target: u16) -> Self {
        Self {
            target,
            hold_ms: 1000,
            decay_ms: 1000.0,
            // MCS 16, single stream.
            default_bits_per_prb: RE_PER_PRB * EFFICIENCY[16],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacitySample {
    pub sfn: u64,
    pub cell_id: u32,
    pub target_prb: u16,
    pub other_prb: u16,
    pub idle_prb: u16,
    pub bits_per_prb: f64,
    /// Bits per millisecond.
    pub capacity_bits: f64,
    /// No bits-per-PRB value was known yet; the configured default was used.
    pub provisional: bool,
}

impl CapacitySample {
    pub fn available_prb(&self) -> u16 {
        self.target_prb + self.idle_prb
    }
}

/// Stateful per-cell estimator; feed it every subframe in order.
#[derive(Clone, Debug)]
pub struct CapacityEstimator {
    cell_id: u32,
    n_prb: u16,
    cfg: CapacityConfig,
    last: Option<(u64, f64)>,
    history: VecDeque<f64>,
}

impl CapacityEstimator {
    pub fn new(cell: &CellConfig, cfg: CapacityConfig) -> Self {
        Self {
            cell_id: cell.cell_id,
            n_prb: cell.n_prb,
            cfg,
            last: None,
            history: VecDeque::new(),
        }
    }

    fn cell_median(&self) -> Option<f64> {
        if self.history.is_empty() {
            return None;
        }
        let mut v: Vec<f64> = self.history.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
    }

    fn held_bits_per_prb(&self, sfn: u64) -> (f64, bool) {
        let Some((at, value)) = self.last else {
            return (self.cfg.default_bits_per_prb, true);
        };
        let age = sfn.saturating_sub(at);
        if age <= self.cfg.hold_ms {
            return (value, false);
        }
        let Some(median) = self.cell_median() else {
            return (value, false);
        };
        let k = (-((age - self.cfg.hold_ms) as f64) / self.cfg.decay_ms.max(1e-9)).exp();
        (median + (value - median) * k, false)
    }

    /// Capacity for one subframe given all messages decoded in it.
    ///
    /// Retransmissions use PRBs but carry no new data, so the target's own
    /// retransmissions count as PRBs taken by others.
    pub fn update(&mut self, sfn: u64, msgs: &[DciMessage]) -> CapacitySample {
        let (mut target_prb, mut other_prb, mut target_bits) = (0u32, 0u32, 0u64);
        for m in msgs {
            if m.rnti == self.cfg.target && m.ndi {
                target_prb += m.nof_prb as u32;
                target_bits += m.tbs as u64;
            } else {
                other_prb += m.nof_prb as u32;
            }
            if m.ndi && m.nof_prb > 0 {
                if self.history.len() == MEDIAN_HISTORY {
                    self.history.pop_front();
                }
                self.history.push_back(m.tbs as f64 / m.nof_prb as f64);
            }
        }
        let n = self.n_prb as u32;
        if target_prb + other_prb > n {
            log::warn!(
                "cell {} sfn {sfn}: {} PRBs allocated out of {n}",
                self.cell_id,
                target_prb + other_prb
            );
            target_prb = target_prb.min(n);
            other_prb = n - target_prb;
        }
        let idle_prb = n - target_prb - other_prb;

        let (bits_per_prb, provisional) = if target_prb > 0 {
            let v = target_bits as f64 / target_prb as f64;
            self.last = Some((sfn, v));
            (v, false)
        } else {
            self.held_bits_per_prb(sfn)
        };
        CapacitySample {
            sfn,
            cell_id: self.cell_id,
            target_prb: target_prb as u16,
            other_prb: other_prb as u16,
            idle_prb: idle_prb as u16,
            bits_per_prb,
            capacity_bits: (target_prb + idle_prb) as f64 * bits_per_prb,
            provisional,
        }
    }
}

/// Capacity for every subframe in `sfns` from a message log of one cell.
/// Subframes without messages count as fully idle.
pub fn capacity_from_log(
    messages: &[DciMessage],
    cell: &CellConfig,
    cfg: CapacityConfig,
    sfns: std::ops::Range<u64>,
) -> Vec<CapacitySample> {
    let mut by_sfn: BTreeMap<u64, Vec<DciMessage>> = BTreeMap::new();
    for m in messages.iter().filter(|m| m.cell_id == cell.cell_id) {
        by_sfn.entry(m.sfn).or_default().push(m.clone());
    }
    let mut est = CapacityEstimator::new(cell, cfg);
    sfns.map(|sfn| est.update(sfn, by_sfn.get(&sfn).map_or(&[][..], |v| v)))
        .collect()
}

/// Fraction of PRBs allocated in one subframe.
pub fn cell_utilization(msgs: &[DciMessage], n_prb: u16) -> f64 {
    if n_prb == 0 {
        return 0.0;
    }
    let used: u32 = msgs.iter().map(|m| m.nof_prb as u32).sum();
    (used.min(n_prb as u32)) as f64 / n_prb as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothedCapacity {
    pub sfn: u64,
    pub cell_id: u32,
    pub mean_available_prb: f64,
    pub mean_bits_per_prb: f64,
    pub capacity_bits: f64,
}

/// Sliding-window means of available PRBs and bits per PRB, multiplied.
#[derive(Clone, Debug)]
pub struct Smoother {
    window: usize,
    prb: VecDeque<f64>,
    bpp: VecDeque<f64>,
}

impl Smoother {
    pub fn new(window: usize) -> Self {
        let window = window.max(1);
        Self {
            window,
            prb: VecDeque::with_capacity(window),
            bpp: VecDeque::with_capacity(window),
        }
    }

    pub fn push(&mut self, s: &CapacitySample) -> SmoothedCapacity {
        if self.prb.len() == self.window {
            self.prb.pop_front();
            self.bpp.pop_front();
        }
        self.prb.push_back(s.available_prb() as f64);
        self.bpp.push_back(s.bits_per_prb);
        let mean_available_prb = window_mean(&self.prb);
        let mean_bits_per_prb = window_mean(&self.bpp);
        SmoothedCapacity {
            sfn: s.sfn,
            cell_id: s.cell_id,
            mean_available_prb,
            mean_bits_per_prb,
            capacity_bits: mean_available_prb * mean_bits_per_prb,
        }
    }
}

/// Mean as an offset from the first value, summed afresh each time: exact
/// for constant windows and free of running-sum drift.
fn window_mean(v: &VecDeque<f64>) -> f64 {
    let base = v[0];
    base + v.iter().map(|x| x - base).sum::<f64>() / v.len() as f64
}

pub fn smooth(samples: &[CapacitySample], window: usize) -> Vec<SmoothedCapacity> {
    let mut s = Smoother::new(window);
    samples.iter().map(|x| s.push(x)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatedCapacity {
    pub sfn: u64,
    pub capacity_bits: f64,
    /// Cells that had no sample at this subframe and contributed their last
    /// value.
    pub stale_cells: Vec<u32>,
}

/// Sum the smoothed streams of `cells` per subframe, over the union of the
/// streams' subframe ranges. Streams of other cells are ignored. A cell
/// without a sample at some subframe contributes its last value (zero before
/// its first sample).
pub fn aggregate_ca(streams: &BTreeMap<u32, Vec<SmoothedCapacity>>, cells: &[u32]) -> Vec<AggregatedCapacity> {
    let used: Vec<(u32, &Vec<SmoothedCapacity>)> =
        cells.iter().filter_map(|c| streams.get(c).map(|s| (*c, s))).collect();
    let lo = used.iter().filter_map(|(_, s)| s.first().map(|x| x.sfn)).min();
    let hi = used.iter().filter_map(|(_, s)| s.last().map(|x| x.sfn)).max();
    let (Some(lo), Some(hi)) = (lo, hi) else {
        return Vec::new();
    };
    let mut pos = vec![0usize; used.len()];
    let mut last = vec![0.0f64; used.len()];
    let mut out = Vec::with_capacity((hi - lo + 1) as usize);
    for sfn in lo..=hi {
        let mut total = 0.0;
        let mut stale_cells = Vec::new();
        for (i, (cell, s)) in used.iter().enumerate() {
            while pos[i] < s.len() && s[pos[i]].sfn < sfn {
                pos[i] += 1;
            }
            if pos[i] < s.len() && s[pos[i]].sfn == sfn {
                last[i] = s[pos[i]].capacity_bits;
            } else {
                log::debug!("cell {cell} has no capacity sample at sfn {sfn}");
                stale_cells.push(*cell);
            }
            total += last[i];
        }
        out.push(AggregatedCapacity {
            sfn,
            capacity_bits: total,
            stale_cells,
        });
    }
    out
}
