//! Placing messages on the control region and building its bit contents.

use crate::error::{Error, Result};
use crate::message::DciMessage;
use crate::phy::{encode_dci, search_space, CCE_BITS};

use super::config::CellConfig;

/// A message waiting for CCEs: levels are tried in the given order.
#[derive(Clone, Debug)]
pub struct PlacementRequest {
    pub rnti: u16,
    pub levels: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub level: usize,
    pub cce_start: usize,
}

/// Index of the first request that could not be placed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlacementOverflow(pub usize);

/// Greedy placement in request order. Each request takes the first free
/// candidate of its UE-specific search space, trying its levels in order.
/// Only usable (unpadded) CCEs are ever assigned.
pub fn place_messages(
    requests: &[PlacementRequest],
    sfn: u64,
    cfg: &CellConfig,
) -> std::result::Result<Vec<Placement>, PlacementOverflow> {
    let mut used = vec![false; cfg.n_cce()];
    let mut out = Vec::with_capacity(requests.len());
    for (idx, req) in requests.iter().enumerate() {
        let found = req.levels.iter().find_map(|&level| {
            search_space(req.rnti, sfn, level, cfg.usable_cces)
                .into_iter()
                .find(|&s| used[s..s + level].iter().all(|u| !u))
                .map(|s| Placement { level, cce_start: s })
        });
        match found {
            Some(p) => {
                used[p.cce_start..p.cce_start + p.level].iter_mut().for_each(|u| *u = true);
                out.push(p);
            }
            None => return Err(PlacementOverflow(idx)),
        }
    }
    Ok(out)
}

/// Coded contents of every CCE in one subframe; `None` marks an empty CCE.
#[derive(Clone, Debug, PartialEq)]
pub struct Occupancy {
    pub cces: Vec<Option<Vec<u8>>>,
}

impl Occupancy {
    pub fn empty(n_cce: usize) -> Self {
        Self { cces: vec![None; n_cce] }
    }

    pub fn n_cce(&self) -> usize {
        self.cces.len()
    }

    pub fn occupied(&self) -> usize {
        self.cces.iter().filter(|c| c.is_some()).count()
    }
}

/// Encode `messages` at their recorded positions.
pub fn build_occupancy(messages: &[DciMessage], cfg: &CellConfig) -> Result<Occupancy> {
    let mut occ = Occupancy::empty(cfg.n_cce());
    for m in messages {
        let level = m.aggregation_level as usize;
        let start = m.cce_start as usize;
        if !start.is_multiple_of(level) || start + level > cfg.usable_cces {
            return Err(Error::OutOfRange(format!(
                "message for {:#06x} at CCE {start} level {level}",
                m.rnti
            )));
        }
        let bits = encode_dci(&m.fields(), m.format, m.rnti, level)?;
        for (i, chunk) in bits.chunks(CCE_BITS).enumerate() {
            let slot = &mut occ.cces[start + i];
            if slot.is_some() {
                return Err(Error::OutOfRange(format!("CCE {} double-booked", start + i)));
            }
            *slot = Some(chunk.to_vec());
        }
    }
    Ok(occ)
}
