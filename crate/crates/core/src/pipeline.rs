//! Per-cell decode workers.
//!
//! A worker queues subframes in sfn order, decodes them on a private pool
//! one 10-subframe block at a time, then runs the UE tracker over the block
//! sequentially. Hints for a block come from the tracker as it stood after
//! the previous block, so the output does not depend on the pool size or on
//! the order in which decode tasks finish.
//!
//! A subframe is final once the tracker can no longer release buffered
//! messages into it (one tracker window later). Final messages are filtered
//! to one per RNTI and disjoint CCEs, appended to the ordered output and to a
//! 320-subframe history ring.

use std::collections::{BTreeMap, VecDeque};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::capacity::{CapacityConfig, CapacityEstimator, CapacitySample};
use crate::decoder::{decode_subframe, DecodeReport, DecodedMessage, DecoderConfig, ValidatedBy};
use crate::error::{Error, Result};
use crate::message::DciMessage;
use crate::sim::{CellConfig, LlrSubframe};
use crate::tracker::{ca_intersect, CaMap, SnapshotUe, TrackerConfig, TrackerSnapshot, TrackerState};

pub const HISTORY_SUBFRAMES: usize = 320;
pub const DEFAULT_QUEUE_DEPTH: usize = 64;
pub const SNAPSHOT_PERIOD: u64 = 10;
pub const MAX_POOL: usize = 8;

pub fn default_pool_size() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(MAX_POOL)
}

#[derive(Clone, Debug)]
pub struct WorkerConfig {
    pub cell: CellConfig,
    pub decoder: DecoderConfig,
    pub tracker: TrackerConfig,
    pub pool_size: usize,
    pub queue_depth: usize,
    /// When set, per-subframe capacity for this target is kept for snapshots.
    pub capacity: Option<CapacityConfig>,
    /// Capacity samples carried in each snapshot.
    pub capacity_window: usize,
}

impl WorkerConfig {
    pub fn new(cell: CellConfig) -> Self {
        Self {
            decoder: DecoderConfig::for_cell(&cell),
            cell,
            tracker: TrackerConfig::default(),
            pool_size: default_pool_size(),
            queue_depth: DEFAULT_QUEUE_DEPTH,
            capacity: None,
            capacity_window: crate::capacity::DEFAULT_WINDOW,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Submit {
    Accepted,
    /// Queue is full; the subframe was not taken. Call `process` and retry.
    Backpressure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub cell_id: u32,
    /// Last final subframe covered; `None` before the first one.
    pub watermark: Option<u64>,
    pub ues: Vec<SnapshotUe>,
    pub capacity: Vec<CapacitySample>,
    pub activity_window: u64,
}

impl Snapshot {
    fn empty(cell_id: u32, activity_window: u64) -> Self {
        Self {
            cell_id,
            watermark: None,
            ues: Vec::new(),
            capacity: Vec::new(),
            activity_window,
        }
    }

    pub fn tracker_view(&self) -> TrackerSnapshot {
        TrackerSnapshot {
            cell_id: self.cell_id,
            sfn: self.watermark.unwrap_or(0),
            activity_window: self.activity_window,
            ues: self.ues.clone(),
        }
    }
}

/// Reorders items tagged with consecutive sequence numbers.
#[derive(Debug)]
pub struct OrderedAssembler<T> {
    next: u64,
    waiting: BTreeMap<u64, T>,
}

impl<T> Default for OrderedAssembler<T> {
    fn default() -> Self {
        Self {
            next: 0,
            waiting: BTreeMap::new(),
        }
    }
}

impl<T> OrderedAssembler<T> {
    pub fn new(first: u64) -> Self {
        Self {
            next: first,
            waiting: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, seq: u64, item: T) {
        debug_assert!(seq >= self.next, "sequence {seq} already released");
        self.waiting.insert(seq, item);
    }

    /// The contiguous run starting at the next expected sequence number.
    pub fn pop_ready(&mut self) -> Vec<T> {
        let mut out = Vec::new();
        while let Some(item) = self.waiting.remove(&self.next) {
            out.push(item);
            self.next += 1;
        }
        out
    }

    pub fn pending(&self) -> usize {
        self.waiting.len()
    }
}

/// A tracked subframe waiting for late tracker releases.
#[derive(Debug)]
struct Open {
    sfn: u64,
    attempts: usize,
    pruned: usize,
    messages: Vec<DecodedMessage>,
}

pub struct CellWorker {
    cfg: WorkerConfig,
    pool: rayon::ThreadPool,
    queue: VecDeque<LlrSubframe>,
    last_submitted: Option<u64>,
    tracker: TrackerState,
    open: VecDeque<Open>,
    finalized: VecDeque<DecodeReport>,
    history: VecDeque<(u64, Vec<DciMessage>)>,
    estimator: Option<CapacityEstimator>,
    capacity: VecDeque<CapacitySample>,
    /// Tracker views taken at block ends, waiting for their sfn to be final.
    staged: VecDeque<TrackerSnapshot>,
    snapshot: Snapshot,
    total_attempts: u64,
}

impl CellWorker {
    pub fn new(cfg: WorkerConfig) -> Result<Self> {
        if cfg.pool_size == 0 || cfg.queue_depth == 0 {
            return Err(Error::Config("pool size and queue depth must be positive".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.pool_size)
            .thread_name(move |i| format!("decode-{i}"))
            .build()
            .map_err(|e| Error::Config(format!("decoder pool: {e}")))?;
        let estimator = cfg.capacity.clone().map(|c| CapacityEstimator::new(&cfg.cell, c));
        Ok(Self {
            pool,
            queue: VecDeque::new(),
            last_submitted: None,
            tracker: TrackerState::new(cfg.cell.cell_id, cfg.tracker.clone()),
            open: VecDeque::new(),
            finalized: VecDeque::new(),
            history: VecDeque::new(),
            estimator,
            capacity: VecDeque::new(),
            staged: VecDeque::new(),
            snapshot: Snapshot::empty(cfg.cell.cell_id, cfg.tracker.activity_window),
            total_attempts: 0,
            cfg,
        })
    }

    pub fn cell_id(&self) -> u32 {
        self.cfg.cell.cell_id
    }

    pub fn config(&self) -> &WorkerConfig {
        &self.cfg
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn history(&self) -> impl Iterator<Item = &(u64, Vec<DciMessage>)> {
        self.history.iter()
    }

    pub fn tracker(&self) -> &TrackerState {
        &self.tracker
    }

    /// Tracker promotions and expiries since the last call.
    pub fn take_events(&mut self) -> Vec<crate::tracker::TrackerEvent> {
        self.tracker.take_events()
    }

    pub fn total_attempts(&self) -> u64 {
        self.total_attempts
    }

    /// Queue one subframe. Sfns must be strictly increasing per cell.
    pub fn submit(&mut self, sub: LlrSubframe) -> Result<Submit> {
        if sub.cell_id != self.cell_id() {
            return Err(Error::Format(format!(
                "subframe for cell {} submitted to worker of cell {}",
                sub.cell_id,
                self.cell_id()
            )));
        }
        if let Some(last) = self.last_submitted {
            if sub.sfn <= last {
                return Err(Error::Format(format!("subframe {} submitted after {last}", sub.sfn)));
            }
        }
        let expected = self.cfg.decoder.n_cce() * crate::phy::CCE_BITS;
        if sub.llrs.len() != expected {
            return Err(Error::MalformedSubframe {
                sfn: sub.sfn,
                expected: self.cfg.decoder.n_cce(),
                got: sub.llrs.len() / crate::phy::CCE_BITS,
            });
        }
        if self.queue.len() >= self.cfg.queue_depth {
            return Ok(Submit::Backpressure);
        }
        self.last_submitted = Some(sub.sfn);
        self.queue.push_back(sub);
        Ok(Submit::Accepted)
    }

    /// Decode and track everything queued.
    pub fn process(&mut self) -> Result<()> {
        while let Some(front) = self.queue.front() {
            let block = front.sfn / SNAPSHOT_PERIOD;
            let n = self.queue.iter().take_while(|s| s.sfn / SNAPSHOT_PERIOD == block).count();
            let batch: Vec<LlrSubframe> = self.queue.drain(..n).collect();
            let reports = self.decode_batch(batch)?;
            for r in reports {
                self.track(r);
            }
            self.stage_snapshot();
        }
        Ok(())
    }

    fn decode_batch(&self, batch: Vec<LlrSubframe>) -> Result<Vec<DecodeReport>> {
        let hints = self.tracker.hints();
        let cfg = &self.cfg.decoder;
        let (tx, rx) = mpsc::channel();
        self.pool.scope(|s| {
            for (seq, sub) in batch.iter().enumerate() {
                let tx = tx.clone();
                let hints = &hints;
                s.spawn(move |_| {
                    let _ = tx.send((seq as u64, decode_subframe(sub, cfg, hints)));
                });
            }
        });
        drop(tx);
        let mut asm = OrderedAssembler::new(0);
        for (seq, r) in rx {
            asm.insert(seq, r);
        }
        let out: Vec<DecodeReport> = asm.pop_ready().into_iter().collect::<Result<_>>()?;
        debug_assert_eq!(out.len(), batch.len());
        Ok(out)
    }

    fn track(&mut self, report: DecodeReport) {
        let sfn = report.sfn;
        self.total_attempts += report.attempts as u64;
        let released = self.tracker.observe_report(&report);
        self.open.push_back(Open {
            sfn,
            attempts: report.attempts,
            pruned: report.pruned_cces,
            messages: report.validated,
        });
        for m in released {
            // Releases older than the open window cannot happen: the tracker
            // buffers for exactly one window.
            if let Some(o) = self.open.iter_mut().rev().find(|o| o.sfn == m.msg.sfn) {
                o.messages.push(m);
            } else {
                log::warn!("cell {}: late release for closed subframe {}", self.cell_id(), m.msg.sfn);
            }
        }
        let window = self.cfg.tracker.window;
        while self.open.front().is_some_and(|o| o.sfn + window <= sfn + 1) {
            let o = self.open.pop_front().unwrap();
            self.finalize(o);
        }
    }

    fn stage_snapshot(&mut self) {
        let snap = self.tracker.snapshot();
        if self.staged.back().is_some_and(|s| s.sfn == snap.sfn) {
            return;
        }
        self.staged.push_back(snap);
        // A tracker view is only published once its sfn is final, so at most
        // one tracker window of views is ever staged.
    }

    fn finalize(&mut self, o: Open) {
        let messages = final_filter(o.messages);
        let plain: Vec<DciMessage> = messages.iter().map(|m| m.msg.clone()).collect();
        if let Some(est) = self.estimator.as_mut() {
            let sample = est.update(o.sfn, &plain);
            self.capacity.push_back(sample);
            while self.capacity.len() > self.cfg.capacity_window.max(1) {
                self.capacity.pop_front();
            }
        }
        self.history.push_back((o.sfn, plain));
        while self.history.len() > HISTORY_SUBFRAMES {
            self.history.pop_front();
        }
        self.finalized.push_back(DecodeReport {
            sfn: o.sfn,
            cell_id: self.cell_id(),
            validated: messages,
            candidates: Vec::new(),
            attempts: o.attempts,
            pruned_cces: o.pruned,
        });
        while self.staged.front().is_some_and(|s| s.sfn <= o.sfn) {
            let view = self.staged.pop_front().unwrap();
            self.publish(view);
        }
    }

    fn publish(&mut self, view: TrackerSnapshot) {
        let watermark = view.sfn;
        self.snapshot = Snapshot {
            cell_id: view.cell_id,
            watermark: Some(watermark),
            ues: view.ues,
            capacity: self.capacity.iter().filter(|c| c.sfn <= watermark).cloned().collect(),
            activity_window: view.activity_window,
        };
    }

    /// Final reports with sfn ≤ `up_to`, in sfn order.
    pub fn drain_ordered(&mut self, up_to: u64) -> Vec<DecodeReport> {
        let n = self.finalized.iter().take_while(|r| r.sfn <= up_to).count();
        self.finalized.drain(..n).collect()
    }

    /// Process the queue and close every open subframe. Use at end of input.
    pub fn flush(&mut self) -> Result<()> {
        self.process()?;
        while let Some(o) = self.open.pop_front() {
            self.finalize(o);
        }
        let views: Vec<_> = self.staged.drain(..).collect();
        if let Some(v) = views.into_iter().last() {
            self.publish(v);
        }
        Ok(())
    }

    /// The latest published snapshot.
    pub fn snapshot(&self) -> Snapshot {
        self.snapshot.clone()
    }
}

/// Keep at most one message per RNTI and no two sharing a CCE. Decoder
/// validations win over tracker releases, then lower flip ratio, then
/// lower CCE start.
pub fn final_filter(mut messages: Vec<DecodedMessage>) -> Vec<DecodedMessage> {
    messages.sort_by(|a, b| {
        let rank = |m: &DecodedMessage| (m.validated_by != ValidatedBy::Ancestor) as u8;
        rank(a)
            .cmp(&rank(b))
            .then(a.flip_ratio.total_cmp(&b.flip_ratio))
            .then(a.msg.cce_start.cmp(&b.msg.cce_start))
            .then(a.msg.aggregation_level.cmp(&b.msg.aggregation_level))
    });
    let mut kept: Vec<DecodedMessage> = Vec::with_capacity(messages.len());
    for m in messages {
        let r = m.msg.cce_range();
        let clash = kept.iter().any(|k| {
            let kr = k.msg.cce_range();
            k.msg.rnti == m.msg.rnti || (r.start < kr.end && kr.start < r.end)
        });
        if !clash {
            kept.push(m);
        }
    }
    kept.sort_by_key(|m| m.msg.cce_start);
    kept
}

/// Snapshots of several cells plus the carrier-aggregation map built from them.
pub fn publish_snapshots(workers: &[CellWorker], min_rate_bps: f64) -> (Vec<Snapshot>, CaMap) {
    let snaps: Vec<Snapshot> = workers.iter().map(CellWorker::snapshot).collect();
    let views: Vec<TrackerSnapshot> = snaps.iter().map(Snapshot::tracker_view).collect();
    let ca = ca_intersect(&views, min_rate_bps);
    (snaps, ca)
}

/// Run a whole stream of one cell through a worker and return the final
/// reports in order.
pub fn decode_stream<I>(cfg: WorkerConfig, subframes: I) -> Result<Vec<DecodeReport>>
where
    I: IntoIterator<Item = LlrSubframe>,
{
    let mut w = CellWorker::new(cfg)?;
    let mut out = Vec::new();
    for sub in subframes {
        let mut sub = Some(sub);
        while let Some(s) = sub.take() {
            if w.submit(s.clone())? == Submit::Backpressure {
                w.process()?;
                out.extend(w.drain_ordered(u64::MAX));
                sub = Some(s);
            }
        }
    }
    w.flush()?;
    out.extend(w.drain_ordered(u64::MAX));
    Ok(out)
}
