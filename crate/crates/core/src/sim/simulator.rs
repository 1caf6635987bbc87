//! Multi-cell simulator: scheduling ground truth plus channel output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::channel::{channel_apply, LlrSubframe};
use super::config::{CellConfig, UeProfile};
use super::placement::build_occupancy;
use super::scheduler::{check_roles, CellScheduler, SchedulerStats, SubframeTruth, UeState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub cells: Vec<CellConfig>,
    pub ues: Vec<UeProfile>,
    pub snr_db: f64,
    /// Bit error rate applied to every transport block.
    pub ber: f64,
    pub seed: u64,
    pub duration_ms: u64,
    pub max_messages_per_subframe: usize,
}

impl SimConfig {
    pub fn new(cells: Vec<CellConfig>, ues: Vec<UeProfile>) -> Self {
        Self {
            cells,
            ues,
            snr_db: 10.0,
            ber: 1e-6,
            seed: 1,
            duration_ms: 1000,
            max_messages_per_subframe: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::Config("no cells".into()));
        }
        for c in &self.cells {
            c.validate()?;
        }
        let mut ids: Vec<u32> = self.cells.iter().map(|c| c.cell_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate cell id".into()));
        }
        if !(0.0..=1.0).contains(&self.ber) {
            return Err(Error::Config(format!("ber {} outside [0, 1]", self.ber)));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Config("snr is NaN".into()));
        }
        check_roles(&self.cells, &self.ues)
    }

    pub fn cell(&self, cell_id: u32) -> Option<&CellConfig> {
        self.cells.iter().find(|c| c.cell_id == cell_id)
    }
}

/// Steps all cells one subframe at a time. Scheduling and channel noise use
/// separate random streams, so the ground truth does not depend on whether
/// LLRs are generated.
pub struct Simulator {
    cfg: SimConfig,
    ues: Vec<UeState>,
    cells: Vec<CellScheduler>,
    sched_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    sfn: u64,
    stats: SchedulerStats,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let mut sched_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        sched_rng.set_stream(1);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        noise_rng.set_stream(2);
        Ok(Self {
            ues: cfg.ues.iter().cloned().map(UeState::new).collect(),
            cells: cfg
                .cells
                .iter()
                .cloned()
                .map(|c| CellScheduler::new(c, cfg.max_messages_per_subframe))
                .collect(),
            cfg,
            sched_rng,
            noise_rng,
            sfn: 0,
            stats: SchedulerStats::default(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn sfn(&self) -> u64 {
        self.sfn
    }

    pub fn stats(&self) -> &SchedulerStats {
        &self.stats
    }

    pub fn finished(&self) -> bool {
        self.sfn >= self.cfg.duration_ms
    }

    /// Advance one subframe; returns one truth record per cell, in config order.
    pub fn step(&mut self) -> Result<Vec<SubframeTruth>> {
        for ue in &mut self.ues {
            ue.advance_traffic(&mut self.sched_rng);
            ue.advance_mcs(&mut self.sched_rng);
        }
        let mut out = Vec::with_capacity(self.cells.len());
        for cell in &mut self.cells {
            out.push(cell.schedule(
                self.sfn,
                &mut self.ues,
                self.cfg.ber,
                &mut self.sched_rng,
                &mut self.stats,
            )?);
        }
        self.sfn += 1;
        Ok(out)
    }

    /// Like [`Simulator::step`], also passing each cell's control region
    /// through the channel.
    pub fn step_with_llr(&mut self) -> Result<Vec<(SubframeTruth, LlrSubframe)>> {
        let truths = self.step()?;
        truths
            .into_iter()
            .zip(&self.cfg.cells)
            .map(|(t, cell)| {
                let occ = build_occupancy(&t.messages, cell)?;
                let llr = channel_apply(&occ, t.sfn, t.cell_id, self.cfg.snr_db, &mut self.noise_rng);
                Ok((t, llr))
            })
            .collect()
    }

    /// Run to the configured duration, keeping only ground truth.
    pub fn run_truth(mut self) -> Result<Vec<SubframeTruth>> {
        let mut all = Vec::new();
        while !self.finished() {
            all.extend(self.step()?);
        }
        Ok(all)
    }
}

/// Single-cell ground-truth stream.
pub fn schedule_generator(
    cell: CellConfig,
    ues: Vec<UeProfile>,
    duration_ms: u64,
    ber: f64,
    seed: u64,
) -> Result<impl Iterator<Item = SubframeTruth>> {
    let mut cfg = SimConfig::new(vec![cell], ues);
    cfg.duration_ms = duration_ms;
    cfg.ber = ber;
    cfg.seed = seed;
    let mut sim = Simulator::new(cfg)?;
    Ok(std::iter::from_fn(move || {
        if sim.finished() {
            return None;
        }
        sim.step().ok().and_then(|mut v| v.pop())
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::{Bandwidth, McsProcess, TrafficModel};

    fn two_cell_cfg() -> SimConfig {
        let cells = vec![CellConfig::new(1, Bandwidth::Mhz20), CellConfig::new(2, Bandwidth::Mhz10)];
        let mut ues = vec![
            UeProfile::new(0x1001, TrafficModel::FullBuffer, vec![1, 2]),
            UeProfile::new(0x1002, TrafficModel::ConstantRate { bps: 2e6 }, vec![1]),
            UeProfile::new(
                0x1003,
                TrafficModel::Bursty {
                    bps: 5e6,
                    mean_on_ms: 50.0,
                    mean_off_ms: 50.0,
                },
                vec![2],
            ),
            UeProfile::new(
                0x1004,
                TrafficModel::WebLike {
                    flows_per_s: 5.0,
                    mean_flow_bytes: 50_000.0,
                },
                vec![1],
            ),
        ];
        ues[1].streams = 2;
        ues[2].mcs = McsProcess::fixed(10);
        let mut cfg = SimConfig::new(cells, ues);
        cfg.ber = 1e-5;
        cfg.duration_ms = 400;
        cfg
    }

    #[test]
    fn prb_conservation_and_disjoint_cces() {
        let cfg = two_cell_cfg();
        let truths = Simulator::new(cfg.clone()).unwrap().run_truth().unwrap();
        assert_eq!(truths.len(), 800);
        for t in &truths {
            let cell = cfg.cell(t.cell_id).unwrap();
            assert_eq!(t.allocated_prb() + t.idle_prb as u32, cell.n_prb as u32);
            let mut used = vec![false; cell.n_cce()];
            for m in &t.messages {
                for c in m.cce_range() {
                    assert!(c < cell.usable_cces);
                    assert!(!used[c]);
                    used[c] = true;
                }
            }
            assert!(t.messages.len() <= cfg.max_messages_per_subframe);
        }
    }

    #[test]
    fn retransmissions_follow_failures_by_eight() {
        let mut cfg = two_cell_cfg();
        cfg.ber = 1e-4;
        let truths = Simulator::new(cfg).unwrap().run_truth().unwrap();
        let mut n_retx = 0;
        for t in &truths {
            for m in t.messages.iter().filter(|m| !m.ndi) {
                n_retx += 1;
                let prev = truths
                    .iter()
                    .find(|p| p.cell_id == t.cell_id && p.sfn + 8 == t.sfn)
                    .unwrap();
                assert!(prev.failed.contains(&(m.rnti, m.harq)));
                let orig = prev.messages.iter().find(|o| o.rnti == m.rnti && o.harq == m.harq).unwrap();
                assert_eq!(orig.mcs1, m.mcs1);
                assert_eq!(orig.nof_prb, m.nof_prb);
                assert_eq!(orig.tbs, m.tbs);
            }
        }
        assert!(n_retx > 0);
    }

    #[test]
    fn secondary_cell_waits_for_primary() {
        let cfg = two_cell_cfg();
        let truths = Simulator::new(cfg).unwrap().run_truth().unwrap();
        let first = |cell: u32| {
            truths
                .iter()
                .find(|t| t.cell_id == cell && t.messages.iter().any(|m| m.rnti == 0x1001))
                .map(|t| t.sfn)
        };
        assert!(first(1).unwrap() <= first(2).unwrap());
    }

    #[test]
    fn deterministic_and_llr_independent() {
        let cfg = two_cell_cfg();
        let a = Simulator::new(cfg.clone()).unwrap().run_truth().unwrap();
        let mut sim = Simulator::new(cfg).unwrap();
        let mut b = Vec::new();
        while !sim.finished() {
            b.extend(sim.step_with_llr().unwrap().into_iter().map(|(t, _)| t));
        }
        assert_eq!(a, b);
    }

    #[test]
    fn secondary_only_cell_cannot_be_primary() {
        let cells = vec![CellConfig::new(1, Bandwidth::Mhz5).secondary_only()];
        let ues = vec![UeProfile::new(0x100, TrafficModel::FullBuffer, vec![1])];
        assert!(Simulator::new(SimConfig::new(cells, ues)).is_err());
    }

    #[test]
    fn generator_yields_duration_records() {
        let ues = vec![UeProfile::new(0x100, TrafficModel::FullBuffer, vec![1])];
        let g = schedule_generator(CellConfig::new(1, Bandwidth::Mhz5), ues, 50, 0.0, 3).unwrap();
        let v: Vec<_> = g.collect();
        assert_eq!(v.len(), 50);
        assert!(v.iter().all(|t| t.idle_prb == 0));
    }
}
