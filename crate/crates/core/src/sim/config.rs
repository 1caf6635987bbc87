//! Cell and UE configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::message::is_usable_rnti;
use crate::phy::DciFormat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bandwidth {
    Mhz5,
    Mhz10,
    Mhz20,
}

impl Bandwidth {
    pub fn from_mhz(mhz: u32) -> Result<Self> {
        match mhz {
            5 => Ok(Bandwidth::Mhz5),
            10 => Ok(Bandwidth::Mhz10),
            20 => Ok(Bandwidth::Mhz20),
            other => Err(Error::Config(format!("unsupported bandwidth {other} MHz"))),
        }
    }

    pub fn mhz(self) -> u32 {
        match self {
            Bandwidth::Mhz5 => 5,
            Bandwidth::Mhz10 => 10,
            Bandwidth::Mhz20 => 20,
        }
    }

    pub fn n_prb(self) -> u16 {
        match self {
            Bandwidth::Mhz5 => 25,
            Bandwidth::Mhz10 => 50,
            Bandwidth::Mhz20 => 100,
        }
    }

    /// CCEs carrying control messages, before padding.
    pub fn usable_cces(self) -> usize {
        match self {
            Bandwidth::Mhz5 => 12,
            Bandwidth::Mhz10 => 28,
            Bandwidth::Mhz20 => 84,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellRole {
    PrimaryCapable,
    SecondaryOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub cell_id: u32,
    pub bandwidth_mhz: u32,
    pub n_prb: u16,
    /// CCEs that can carry messages. The control region is padded up to a
    /// multiple of 8 with always-empty CCEs, see [`CellConfig::n_cce`].
    pub usable_cces: usize,
    pub antennas: u8,
    pub role: CellRole,
}

impl CellConfig {
    pub fn new(cell_id: u32, bandwidth: Bandwidth) -> Self {
        Self {
            cell_id,
            bandwidth_mhz: bandwidth.mhz(),
            n_prb: bandwidth.n_prb(),
            usable_cces: bandwidth.usable_cces(),
            antennas: 2,
            role: CellRole::PrimaryCapable,
        }
    }

    /// A cell with explicit sizes, for tests and odd configurations.
    pub fn custom(cell_id: u32, n_prb: u16, usable_cces: usize) -> Self {
        Self {
            cell_id,
            bandwidth_mhz: 0,
            n_prb,
            usable_cces,
            antennas: 1,
            role: CellRole::PrimaryCapable,
        }
    }

    pub fn secondary_only(mut self) -> Self {
        self.role = CellRole::SecondaryOnly;
        self
    }

    /// Control-region size in CCEs, padded to a multiple of 8.
    pub fn n_cce(&self) -> usize {
        self.usable_cces.div_ceil(8).max(1) * 8
    }

    pub fn validate(&self) -> Result<()> {
        if self.usable_cces == 0 {
            return Err(Error::Config(format!("cell {} has no CCEs", self.cell_id)));
        }
        if self.n_prb == 0 || self.n_prb > 127 {
            return Err(Error::Config(format!("cell {} has {} PRBs", self.cell_id, self.n_prb)));
        }
        if self.bandwidth_mhz != 0 {
            let bw = Bandwidth::from_mhz(self.bandwidth_mhz)?;
            if bw.n_prb() != self.n_prb {
                return Err(Error::Config(format!(
                    "cell {}: {} MHz implies {} PRBs, got {}",
                    self.cell_id,
                    self.bandwidth_mhz,
                    bw.n_prb(),
                    self.n_prb
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TrafficModel {
    /// Always has data.
    FullBuffer,
    ConstantRate { bps: f64 },
    /// Exponentially distributed on and off periods; sends at `bps` while on.
    Bursty { bps: f64, mean_on_ms: f64, mean_off_ms: f64 },
    /// Poisson flow arrivals with exponentially distributed sizes.
    WebLike { flows_per_s: f64, mean_flow_bytes: f64 },
}

/// Bounded random walk over MCS indices: each subframe the index moves one
/// step up or down with probability `step_prob`, clamped to `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McsProcess {
    pub initial: u8,
    pub min: u8,
    pub max: u8,
    pub step_prob: f64,
}

impl Default for McsProcess {
    fn default() -> Self {
        Self {
            initial: 16,
            min: 5,
            max: 28,
            step_prob: 0.1,
        }
    }
}

impl McsProcess {
    pub fn fixed(mcs: u8) -> Self {
        Self {
            initial: mcs,
            min: mcs,
            max: mcs,
            step_prob: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UeProfile {
    pub rnti: u16,
    pub traffic: TrafficModel,
    pub mcs: McsProcess,
    pub streams: u8,
    /// Serving cells, primary first.
    pub ca_cells: Vec<u32>,
    /// Single-stream format; two-stream UEs always use format B.
    pub format: DciFormat,
    /// Relative weights of aggregation levels 1, 2, 4, 8.
    pub level_weights: [f64; 4],
}

impl UeProfile {
    pub fn new(rnti: u16, traffic: TrafficModel, cells: Vec<u32>) -> Self {
        Self {
            rnti,
            traffic,
            mcs: McsProcess::default(),
            streams: 1,
            ca_cells: cells,
            format: DciFormat::A,
            level_weights: [0.3, 0.3, 0.25, 0.15],
        }
    }

    pub fn dci_format(&self) -> DciFormat {
        if self.streams == 2 {
            DciFormat::B
        } else {
            self.format
        }
    }

    pub fn primary_cell(&self) -> Option<u32> {
        self.ca_cells.first().copied()
    }

    pub fn validate(&self) -> Result<()> {
        if !is_usable_rnti(self.rnti) {
            return Err(Error::InvalidRnti(self.rnti));
        }
        if !(1..=2).contains(&self.streams) {
            return Err(Error::Config(format!("UE {:#06x}: streams must be 1 or 2", self.rnti)));
        }
        if self.streams == 1 && self.format == DciFormat::B {
            return Err(Error::Config(format!(
                "UE {:#06x}: format B needs two streams",
                self.rnti
            )));
        }
        let m = &self.mcs;
        if m.max > 28 || m.min > m.max || !(m.min..=m.max).contains(&m.initial) {
            return Err(Error::Config(format!("UE {:#06x}: bad MCS walk bounds", self.rnti)));
        }
        if self.ca_cells.is_empty() {
            return Err(Error::Config(format!("UE {:#06x}: no serving cell", self.rnti)));
        }
        if self.level_weights.iter().any(|w| *w < 0.0) || self.level_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!("UE {:#06x}: bad level weights", self.rnti)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandwidth_tables() {
        for (mhz, prb, cce, padded) in [(5, 25, 12, 16), (10, 50, 28, 32), (20, 100, 84, 88)] {
            let cell = CellConfig::new(1, Bandwidth::from_mhz(mhz).unwrap());
            assert_eq!(cell.n_prb, prb);
            assert_eq!(cell.usable_cces, cce);
            assert_eq!(cell.n_cce(), padded);
            assert_eq!(cell.n_cce() % 8, 0);
            cell.validate().unwrap();
        }
        assert!(Bandwidth::from_mhz(15).is_err());
    }

    #[test]
    fn mismatched_prb_rejected() {
        let mut cell = CellConfig::new(1, Bandwidth::Mhz10);
        cell.n_prb = 100;
        assert!(cell.validate().is_err());
    }

    #[test]
    fn rnti_range_enforced() {
        let mut ue = UeProfile::new(0x003C, TrafficModel::FullBuffer, vec![1]);
        assert!(ue.validate().is_err());
        ue.rnti = 0x003D;
        ue.validate().unwrap();
        ue.rnti = 0xFFF4;
        assert!(ue.validate().is_err());
    }

    #[test]
    fn two_streams_use_format_b() {
        let mut ue = UeProfile::new(0x100, TrafficModel::FullBuffer, vec![1]);
        ue.streams = 2;
        assert_eq!(ue.dci_format(), DciFormat::B);
        ue.streams = 1;
        ue.format = DciFormat::B;
        assert!(ue.validate().is_err());
    }
}
