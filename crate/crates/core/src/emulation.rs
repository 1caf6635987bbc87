//! Trace-driven bottleneck emulator and congestion controllers.
//!
//! Time advances in 1 ms steps. A link trace lists, per millisecond, how many
//! MTU-sized packets the bottleneck may deliver; packets wait in a FIFO at the
//! bottleneck, and one-way delay is propagation plus queueing.

use std::collections::{BTreeMap, VecDeque};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capacity::{capacity_from_log, cell_utilization, smooth, CapacityConfig};
use crate::error::{Error, Result};
use crate::fusion::PacketRecord;
use crate::message::DciMessage;
use crate::sim::CellConfig;

pub const MTU_BYTES: u32 = 1500;
const MTU_BITS: f64 = MTU_BYTES as f64 * 8.0;

/// Delivery opportunities, one timestamp (ms) per MTU-sized packet.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkTrace {
    pub opportunities_ms: Vec<u64>,
    /// Length of the trace; it repeats with this period.
    pub duration_ms: u64,
}

impl LinkTrace {
    /// Opportunities per millisecond over one period.
    pub fn per_ms(&self) -> Vec<u32> {
        let mut v = vec![0u32; self.duration_ms as usize];
        for &t in &self.opportunities_ms {
            if let Some(c) = v.get_mut(t as usize) {
                *c += 1;
            }
        }
        v
    }

    /// Bits the trace can deliver in each millisecond of one period.
    pub fn capacity_bits_per_ms(&self) -> Vec<f64> {
        self.per_ms().into_iter().map(|n| n as f64 * MTU_BITS).collect()
    }

    pub fn mean_capacity_bps(&self) -> f64 {
        if self.duration_ms == 0 {
            return 0.0;
        }
        self.opportunities_ms.len() as f64 * MTU_BITS * 1000.0 / self.duration_ms as f64
    }
}

/// Per-millisecond packet counts from capacities in bits per ms, carrying the
/// fractional remainder from one millisecond to the next.
pub fn opportunities_from_capacity(capacity_bits: &[f64]) -> Vec<u32> {
    let mut carry = 0.0f64;
    capacity_bits
        .iter()
        .map(|&c| {
            carry += c.max(0.0) / MTU_BITS;
            let n = carry.floor();
            carry -= n;
            n as u32
        })
        .collect()
}

pub fn trace_from_capacity(capacity_bits: &[f64]) -> LinkTrace {
    let mut opportunities_ms = Vec::new();
    for (t, n) in opportunities_from_capacity(capacity_bits).into_iter().enumerate() {
        opportunities_ms.extend(std::iter::repeat_n(t as u64, n as usize));
    }
    LinkTrace {
        opportunities_ms,
        duration_ms: capacity_bits.len() as u64,
    }
}

/// Remove each message independently with probability `p` in `[0, 0.5]`.
pub fn drop_messages(log: &[DciMessage], p: f64, seed: u64) -> Result<Vec<DciMessage>> {
    if !(0.0..=0.5).contains(&p) {
        return Err(Error::OutOfRange(format!("drop probability {p} outside [0, 0.5]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(log.iter().filter(|_| !rng.gen_bool(p)).cloned().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub throughput_bps: f64,
    pub mean_delay_ms: f64,
    pub p95_delay_ms: f64,
    pub delivered: usize,
    pub empty: bool,
}

/// Nearest-rank percentile of an unsorted sample, `q` in (0, 1].
pub fn nearest_rank(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

/// Throughput over `duration_ms` and delay statistics of a receiver log.
pub fn metrics(log: &[PacketRecord], duration_ms: u64) -> FlowMetrics {
    if log.is_empty() {
        return FlowMetrics {
            throughput_bps: 0.0,
            mean_delay_ms: 0.0,
            p95_delay_ms: 0.0,
            delivered: 0,
            empty: true,
        };
    }
    let delays: Vec<f64> = log.iter().map(|p| p.one_way_delay_us as f64 / 1000.0).collect();
    let bits: f64 = log.iter().map(|p| p.size_bytes as f64 * 8.0).sum();
    FlowMetrics {
        throughput_bps: if duration_ms == 0 { 0.0 } else { bits * 1000.0 / duration_ms as f64 },
        mean_delay_ms: delays.iter().sum::<f64>() / delays.len() as f64,
        p95_delay_ms: nearest_rank(&delays, 0.95).unwrap_or(0.0),
        delivered: log.len(),
        empty: false,
    }
}

/// Standard CUBIC window growth, in packets and seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cubic {
    pub cwnd: f64,
    pub w_max: f64,
    pub epoch_start_s: f64,
    pub slow_start: bool,
    pub beta: f64,
    pub c: f64,
    /// Receive-window cap on `cwnd`.
    pub max_cwnd: f64,
}

impl Default for Cubic {
    fn default() -> Self {
        Self {
            cwnd: 10.0,
            w_max: 0.0,
            epoch_start_s: 0.0,
            slow_start: true,
            beta: 0.7,
            c: 0.4,
            max_cwnd: 4096.0,
        }
    }
}

impl Cubic {
    /// Time after the epoch start at which the window regains `w_max`.
    pub fn k(&self) -> f64 {
        (self.w_max * (1.0 - self.beta) / self.c).cbrt()
    }

    /// Window `t` seconds after the epoch start.
    pub fn window_at(&self, t: f64) -> f64 {
        self.c * (t - self.k()).powi(3) + self.w_max
    }

    pub fn on_ack(&mut self, now_s: f64) -> f64 {
        if self.slow_start {
            self.cwnd += 1.0;
        } else {
            self.cwnd = self.cwnd.max(self.window_at(now_s - self.epoch_start_s));
        }
        self.cwnd = self.cwnd.min(self.max_cwnd);
        self.cwnd
    }

    pub fn on_loss(&mut self, now_s: f64) -> f64 {
        self.slow_start = false;
        self.w_max = self.cwnd;
        self.cwnd = (self.cwnd * self.beta).max(1.0);
        self.epoch_start_s = now_s;
        self.cwnd
    }

    /// Restart as after a loss at window `w_max`.
    pub fn restart(&mut self, w_max: f64, now_s: f64) {
        self.cwnd = w_max.max(1.0);
        self.on_loss(now_s);
    }
}

/// What a sender sees when deciding how much to send this millisecond.
#[derive(Clone, Copy, Debug)]
pub struct SendContext {
    pub now_ms: u64,
    pub in_flight: usize,
}

pub trait SenderPolicy {
    fn packets_to_send(&mut self, ctx: SendContext) -> usize;
    fn on_ack(&mut self, _now_ms: u64, _rtt_ms: f64) {}
    fn on_loss(&mut self, _now_ms: u64) {}
}

/// Window-limited CUBIC sender.
#[derive(Clone, Debug, Default)]
pub struct CubicSender {
    pub cubic: Cubic,
}

impl SenderPolicy for CubicSender {
    fn packets_to_send(&mut self, ctx: SendContext) -> usize {
        (self.cubic.cwnd.floor() as usize).saturating_sub(ctx.in_flight)
    }

    fn on_ack(&mut self, now_ms: u64, _rtt_ms: f64) {
        self.cubic.on_ack(now_ms as f64 / 1000.0);
    }

    fn on_loss(&mut self, now_ms: u64) {
        self.cubic.on_loss(now_ms as f64 / 1000.0);
    }
}

/// Sends at a fixed rate.
#[derive(Clone, Debug)]
pub struct ConstantRateSender {
    pub bits_per_ms: f64,
    carry: f64,
}

impl ConstantRateSender {
    pub fn new(bps: f64) -> Self {
        Self {
            bits_per_ms: bps / 1000.0,
            carry: 0.0,
        }
    }
}

impl SenderPolicy for ConstantRateSender {
    fn packets_to_send(&mut self, _ctx: SendContext) -> usize {
        self.carry += self.bits_per_ms / MTU_BITS;
        let n = self.carry.floor();
        self.carry -= n;
        n as usize
    }
}

/// One telemetry reading: the UE's capacity estimate and cell utilization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub capacity_bits_per_ms: f64,
    pub utilization: f64,
}

/// Telemetry indexed by millisecond. At time `t` the sender reads entry
/// `t + lead_ms`; a lead equal to the propagation delay gives the capacity
/// the bottleneck offers when the packets arrive there.
#[derive(Clone, Debug, Default)]
pub struct TelemetryFeed {
    pub samples: Vec<Option<TelemetrySample>>,
    pub lead_ms: u64,
}

impl TelemetryFeed {
    pub fn at(&self, now_ms: u64) -> Option<TelemetrySample> {
        self.samples.get((now_ms + self.lead_ms) as usize).copied().flatten()
    }

    /// The exact per-ms capacity, looked up `lead_ms` ahead, with the cell
    /// reported as fully used.
    pub fn perfect(capacity_bits_per_ms: &[f64], lead_ms: u64) -> Self {
        Self {
            samples: capacity_bits_per_ms
                .iter()
                .map(|&c| {
                    Some(TelemetrySample {
                        capacity_bits_per_ms: c,
                        utilization: 1.0,
                    })
                })
                .collect(),
            lead_ms,
        }
    }

    /// Telemetry as a decoder would produce it from a message log: the
    /// target's capacity smoothed over `window` subframes and the cell
    /// utilization averaged over the same window.
    pub fn from_log(
        msgs: &[DciMessage],
        cell: &CellConfig,
        cfg: CapacityConfig,
        sfns: Range<u64>,
        window: usize,
    ) -> Self {
        let window = window.max(1);
        let mut by_sfn: BTreeMap<u64, Vec<DciMessage>> = BTreeMap::new();
        for m in msgs.iter().filter(|m| m.cell_id == cell.cell_id) {
            by_sfn.entry(m.sfn).or_default().push(m.clone());
        }
        let smoothed = smooth(&capacity_from_log(msgs, cell, cfg, sfns), window);
        let mut recent: VecDeque<f64> = VecDeque::with_capacity(window + 1);
        let mut sum = 0.0;
        let samples = smoothed
            .iter()
            .map(|s| {
                let u = cell_utilization(by_sfn.get(&s.sfn).map_or(&[][..], Vec::as_slice), cell.n_prb);
                recent.push_back(u);
                sum += u;
                if recent.len() > window {
                    sum -= recent.pop_front().unwrap();
                }
                Some(TelemetrySample {
                    capacity_bits_per_ms: s.capacity_bits,
                    utilization: (sum / recent.len() as f64).clamp(0.0, 1.0),
                })
            })
            .collect();
        Self { samples, lead_ms: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CcMode {
    CapacityDriven,
    CubicFallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NgCcConfig {
    /// RTT above the minimum by more than this counts as inflated.
    pub rtt_inflation_ms: f64,
    /// Inflation only signals a bottleneck elsewhere while the cell is less
    /// utilized than this.
    pub busy_utilization: f64,
    /// Telemetry older than this is stale.
    pub staleness_ms: u64,
}

impl Default for NgCcConfig {
    fn default() -> Self {
        Self {
            rtt_inflation_ms: 100.0,
            busy_utilization: 0.9,
            staleness_ms: 100,
        }
    }
}

/// Capacity-driven congestion control with CUBIC fallback.
#[derive(Clone, Debug)]
pub struct NgCc {
    pub cfg: NgCcConfig,
    pub mode: CcMode,
    /// Pacing rate in capacity-driven mode, bits per ms.
    pub rate_bits_per_ms: f64,
    pub cubic: Cubic,
    pub min_rtt_ms: f64,
    pub srtt_ms: f64,
    pub stale: bool,
    last_fresh_ms: Option<u64>,
    carry: f64,
    feed: TelemetryFeed,
    /// Mode changes as `(ms, new mode)`.
    pub transitions: Vec<(u64, CcMode)>,
}

impl NgCc {
    pub fn new(cfg: NgCcConfig, feed: TelemetryFeed) -> Self {
        Self {
            cfg,
            mode: CcMode::CapacityDriven,
            rate_bits_per_ms: 0.0,
            cubic: Cubic::default(),
            min_rtt_ms: f64::INFINITY,
            srtt_ms: 0.0,
            stale: false,
            last_fresh_ms: None,
            carry: 0.0,
            feed,
            transitions: Vec::new(),
        }
    }

    fn cubic_rate_bits_per_ms(&self) -> f64 {
        if self.srtt_ms <= 0.0 {
            return 0.0;
        }
        self.cubic.cwnd * MTU_BITS / self.srtt_ms
    }

    fn set_mode(&mut self, now_ms: u64, mode: CcMode) {
        if self.mode != mode {
            self.mode = mode;
            self.transitions.push((now_ms, mode));
        }
    }

    /// Advance the controller by one telemetry reading and optional RTT
    /// sample; returns the capacity-driven rate in bits per ms.
    pub fn step(&mut self, now_ms: u64, telemetry: Option<TelemetrySample>, rtt_ms: Option<f64>) -> f64 {
        if let Some(r) = rtt_ms {
            self.min_rtt_ms = self.min_rtt_ms.min(r);
            self.srtt_ms = if self.srtt_ms == 0.0 { r } else { 0.875 * self.srtt_ms + 0.125 * r };
        }
        match telemetry {
            Some(t) => {
                self.last_fresh_ms = Some(now_ms);
                self.stale = false;
                self.rate_bits_per_ms = t.capacity_bits_per_ms;
                match self.mode {
                    CcMode::CapacityDriven => {
                        let inflated = rtt_ms.is_some_and(|r| r > self.min_rtt_ms + self.cfg.rtt_inflation_ms);
                        if inflated && t.utilization < self.cfg.busy_utilization {
                            let bdp = t.capacity_bits_per_ms * self.srtt_ms / MTU_BITS;
                            self.cubic.restart(bdp, now_ms as f64 / 1000.0);
                            self.set_mode(now_ms, CcMode::CubicFallback);
                        }
                    }
                    CcMode::CubicFallback => {
                        if self.cubic_rate_bits_per_ms() >= t.capacity_bits_per_ms {
                            self.set_mode(now_ms, CcMode::CapacityDriven);
                        }
                    }
                }
            }
            None => {
                let age = self.last_fresh_ms.map_or(u64::MAX, |t| now_ms - t);
                if age > self.cfg.staleness_ms {
                    self.stale = true;
                }
            }
        }
        self.rate_bits_per_ms
    }
}

impl SenderPolicy for NgCc {
    fn packets_to_send(&mut self, ctx: SendContext) -> usize {
        let telemetry = self.feed.at(ctx.now_ms);
        self.step(ctx.now_ms, telemetry, None);
        match self.mode {
            CcMode::CapacityDriven => {
                self.carry += self.rate_bits_per_ms / MTU_BITS;
                let n = self.carry.floor();
                self.carry -= n;
                n as usize
            }
            CcMode::CubicFallback => (self.cubic.cwnd.floor() as usize).saturating_sub(ctx.in_flight),
        }
    }

    fn on_ack(&mut self, now_ms: u64, rtt_ms: f64) {
        if self.mode == CcMode::CubicFallback {
            self.cubic.on_ack(now_ms as f64 / 1000.0);
        }
        let telemetry = self.feed.at(now_ms);
        self.step(now_ms, telemetry, Some(rtt_ms));
    }

    fn on_loss(&mut self, now_ms: u64) {
        if self.mode == CcMode::CubicFallback {
            self.cubic.on_loss(now_ms as f64 / 1000.0);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmuConfig {
    /// One-way propagation delay, paid before the bottleneck; acknowledgments
    /// take the same time back.
    pub prop_delay_ms: u64,
    pub duration_ms: u64,
    /// Drop-tail limit; `None` is the unbounded cellular buffer.
    pub buffer_packets: Option<usize>,
}

impl Default for EmuConfig {
    fn default() -> Self {
        Self {
            prop_delay_ms: 20,
            duration_ms: 10_000,
            buffer_packets: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmuResult {
    pub log: Vec<PacketRecord>,
    pub metrics: FlowMetrics,
    /// Queue length at the end of each millisecond.
    pub queue_len: Vec<u32>,
    pub sent: u64,
    pub dropped: u64,
}

/// Run one flow over the trace (repeated if shorter than the run).
pub fn emulate(trace: &LinkTrace, sender: &mut dyn SenderPolicy, cfg: &EmuConfig) -> EmuResult {
    let per_ms = trace.per_ms();
    let prop = cfg.prop_delay_ms;
    // (arrival at bottleneck, send time, seq)
    let mut on_wire: VecDeque<(u64, u64, u64)> = VecDeque::new();
    let mut queue: VecDeque<(u64, u64)> = VecDeque::new();
    // (ack arrival, send time)
    let mut acks: VecDeque<(u64, u64)> = VecDeque::new();
    let mut losses: VecDeque<u64> = VecDeque::new();
    let mut log = Vec::new();
    let mut queue_len = Vec::with_capacity(cfg.duration_ms as usize);
    let (mut sent, mut dropped, mut in_flight) = (0u64, 0u64, 0usize);

    for now in 0..cfg.duration_ms {
        while acks.front().is_some_and(|a| a.0 <= now) {
            let (_, send) = acks.pop_front().unwrap();
            in_flight -= 1;
            sender.on_ack(now, (now - send) as f64);
        }
        while losses.front().is_some_and(|&t| t <= now) {
            losses.pop_front();
            in_flight -= 1;
            sender.on_loss(now);
        }
        let n = sender.packets_to_send(SendContext { now_ms: now, in_flight });
        for _ in 0..n {
            on_wire.push_back((now + prop, now, sent));
            sent += 1;
            in_flight += 1;
        }
        while on_wire.front().is_some_and(|p| p.0 <= now) {
            let (_, send, seq) = on_wire.pop_front().unwrap();
            if cfg.buffer_packets.is_some_and(|cap| queue.len() >= cap) {
                dropped += 1;
                // The sender learns of the loss about one round trip later.
                losses.push_back(now + prop);
            } else {
                queue.push_back((send, seq));
            }
        }
        let slots = if per_ms.is_empty() { 0 } else { per_ms[(now % per_ms.len() as u64) as usize] };
        for _ in 0..slots {
            let Some((send, seq)) = queue.pop_front() else {
                break;
            };
            log.push(PacketRecord {
                recv_time_us: now as i64 * 1000,
                size_bytes: MTU_BYTES,
                one_way_delay_us: (now - send) as i64 * 1000,
                seq,
            });
            acks.push_back((now + prop, send));
        }
        queue_len.push(queue.len() as u32);
    }
    let metrics = metrics(&log, cfg.duration_ms);
    EmuResult {
        log,
        metrics,
        queue_len,
        sent,
        dropped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant_trace(bits_per_ms: f64, ms: usize) -> LinkTrace {
        trace_from_capacity(&vec![bits_per_ms; ms])
    }

    fn alloc(sfn: u64, rnti: u16, prb: u16, tbs: u32) -> DciMessage {
        DciMessage {
            sfn,
            cell_id: 1,
            rnti,
            format: crate::phy::DciFormat::A,
            mcs1: 10,
            mcs2: None,
            nof_prb: prb,
            tbs,
            ndi: true,
            harq: 0,
            aggregation_level: 1,
            cce_start: 0,
        }
    }

    #[test]
    fn log_telemetry_on_a_steady_cell() {
        let cell = CellConfig::custom(1, 50, 8);
        let msgs: Vec<DciMessage> = (0..300)
            .flat_map(|t| [alloc(t, 0x100, 10, 5000), alloc(t, 0x200, 20, 9000)])
            .collect();
        let feed = TelemetryFeed::from_log(&msgs, &cell, CapacityConfig::new(0x100), 0..300, 100);
        assert_eq!(feed.samples.len(), 300);
        for s in feed.samples.iter().flatten() {
            // 10 target + 20 idle PRBs at 500 bits each; 30 of 50 PRBs used.
            assert!((s.capacity_bits_per_ms - 15_000.0).abs() < 1e-9);
            assert!((s.utilization - 0.6).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_feed_reads_ahead() {
        let feed = TelemetryFeed::perfect(&[1.0, 2.0, 3.0], 2);
        assert_eq!(feed.at(0).unwrap().capacity_bits_per_ms, 3.0);
        assert!(feed.at(1).is_none());
        let t = LinkTrace {
            opportunities_ms: vec![0, 0, 2],
            duration_ms: 3,
        };
        assert_eq!(t.capacity_bits_per_ms(), vec![2.0 * MTU_BITS, 0.0, MTU_BITS]);
    }

    #[test]
    fn trace_conversion_examples() {
        assert_eq!(opportunities_from_capacity(&[12_000.0; 5]), vec![1; 5]);
        assert!(trace_from_capacity(&[0.0; 100]).opportunities_ms.is_empty());
        let v = opportunities_from_capacity(&[18_000.0; 6]);
        assert_eq!(v, vec![1, 2, 1, 2, 1, 2]);
        let t = constant_trace(12_000.0, 10);
        assert_eq!(t.opportunities_ms, (0..10).collect::<Vec<_>>());
        assert!((t.mean_capacity_bps() - 12e6).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn trace_conserves_bytes(caps in proptest::collection::vec(0.0f64..200_000.0, 1..300)) {
            let n: u32 = opportunities_from_capacity(&caps).iter().sum();
            let total = caps.iter().sum::<f64>() / MTU_BITS;
            prop_assert!(total - (n as f64) < 1.0 + 1e-9 && total - (n as f64) >= -1e-9);
        }

        #[test]
        fn perfect_telemetry_bounds_queue(caps in proptest::collection::vec(0.0f64..150_000.0, 200..1500)) {
            let trace = trace_from_capacity(&caps);
            let cfg = EmuConfig { prop_delay_ms: 20, duration_ms: caps.len() as u64, buffer_packets: None };
            let feed = TelemetryFeed {
                samples: caps.iter().map(|&c| Some(TelemetrySample { capacity_bits_per_ms: c, utilization: 1.0 })).collect(),
                lead_ms: cfg.prop_delay_ms,
            };
            let mut cc = NgCc::new(NgCcConfig::default(), feed);
            let r = emulate(&trace, &mut cc, &cfg);
            prop_assert!(r.queue_len.iter().all(|&q| q <= 2));
        }

        #[test]
        fn emulator_is_work_conserving(rate in 1_000.0f64..60_000.0, caps in proptest::collection::vec(0.0f64..50_000.0, 50..400)) {
            let trace = trace_from_capacity(&caps);
            let cfg = EmuConfig { prop_delay_ms: 5, duration_ms: caps.len() as u64, buffer_packets: None };
            let r = emulate(&trace, &mut ConstantRateSender::new(rate * 1000.0), &cfg);
            let per = trace.per_ms();
            // Every slot is used unless the queue was empty when it came up.
            let mut used = vec![0u32; per.len()];
            for p in &r.log {
                used[(p.recv_time_us / 1000) as usize] += 1;
            }
            for t in 0..per.len() {
                prop_assert!(used[t] == per[t] || r.queue_len[t] == 0);
            }
            prop_assert!(r.log.windows(2).all(|w| w[0].seq < w[1].seq));
            prop_assert!(r.log.len() + *r.queue_len.last().unwrap() as usize <= r.sent as usize);
        }
    }

    #[test]
    fn light_load_sees_propagation_delay() {
        let trace = constant_trace(120_000.0, 1000);
        let cfg = EmuConfig { prop_delay_ms: 20, duration_ms: 5000, buffer_packets: None };
        let r = emulate(&trace, &mut ConstantRateSender::new(2e6), &cfg);
        assert_eq!(r.metrics.p95_delay_ms, 20.0);
    }

    #[test]
    fn overload_grows_queue_linearly() {
        let trace = constant_trace(12_000.0, 1000);
        let cfg = EmuConfig { prop_delay_ms: 10, duration_ms: 2000, buffer_packets: None };
        let r = emulate(&trace, &mut ConstantRateSender::new(24e6), &cfg);
        // Two packets arrive and one leaves every millisecond.
        for t in [500usize, 1000, 1999] {
            assert_eq!(r.queue_len[t] as usize, t + 1 - 10);
        }
    }

    #[test]
    fn matched_load_keeps_queue_bounded() {
        let trace = constant_trace(18_000.0, 1000);
        let cfg = EmuConfig { prop_delay_ms: 10, duration_ms: 3000, buffer_packets: None };
        let r = emulate(&trace, &mut ConstantRateSender::new(18e6), &cfg);
        assert!(r.queue_len.iter().all(|&q| q <= 1));
        assert!((r.metrics.throughput_bps - 18e6).abs() / 18e6 < 0.01);
    }

    #[test]
    fn identical_runs_match() {
        let caps: Vec<f64> = (0..2000).map(|t| 20_000.0 + 15_000.0 * ((t as f64) / 90.0).sin()).collect();
        let trace = trace_from_capacity(&caps);
        let cfg = EmuConfig { prop_delay_ms: 15, duration_ms: 4000, buffer_packets: Some(200) };
        let a = emulate(&trace, &mut CubicSender::default(), &cfg);
        let b = emulate(&trace, &mut CubicSender::default(), &cfg);
        assert_eq!(a.log, b.log);
        assert!(a.dropped > 0);
        assert!(a.metrics.throughput_bps <= trace.mean_capacity_bps() * 1.0001);
    }

    #[test]
    fn cubic_growth_and_decrease() {
        let mut c = Cubic::default();
        let mut prev = c.cwnd;
        for i in 0..100 {
            let w = c.on_ack(i as f64 * 0.01);
            assert!(w >= prev);
            prev = w;
        }
        let before = c.cwnd;
        assert!((c.on_loss(1.0) - before * 0.7).abs() < 1e-9);
        // Independent evaluation of w(t) = C (t - K)^3 + w_max.
        let k = (before * 0.3 / 0.4f64).cbrt();
        for t in [0.1, 0.5, 1.0, 2.0, 4.0] {
            let w = c.on_ack(1.0 + t);
            let expect = 0.4 * (t - k).powi(3) + before;
            assert!((w - expect.max(before * 0.7)).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn ngcc_follows_capacity_and_exits_fallback() {
        let t = |c: f64| Some(TelemetrySample { capacity_bits_per_ms: c, utilization: 1.0 });
        let mut cc = NgCc::new(NgCcConfig::default(), TelemetryFeed::default());
        assert_eq!(cc.step(0, t(30_000.0), Some(40.0)), 30_000.0);
        assert_eq!(cc.step(1, t(50_000.0), None), 50_000.0);

        // Fallback entry needs inflation while the cell is not busy.
        cc.step(2, Some(TelemetrySample { capacity_bits_per_ms: 50_000.0, utilization: 0.95 }), Some(400.0));
        assert_eq!(cc.mode, CcMode::CapacityDriven);
        cc.step(3, Some(TelemetrySample { capacity_bits_per_ms: 50_000.0, utilization: 0.5 }), Some(400.0));
        assert_eq!(cc.mode, CcMode::CubicFallback);

        // CUBIC at 60 against a reported 50 hands control back.
        cc.cubic.cwnd = 60_000.0 * cc.srtt_ms / MTU_BITS;
        cc.step(4, t(50_000.0), None);
        assert_eq!(cc.mode, CcMode::CapacityDriven);
    }

    #[test]
    fn ngcc_holds_rate_when_stale() {
        let mut cc = NgCc::new(NgCcConfig::default(), TelemetryFeed::default());
        cc.step(0, Some(TelemetrySample { capacity_bits_per_ms: 7.0, utilization: 1.0 }), None);
        cc.step(100, None, None);
        assert!(!cc.stale);
        assert_eq!(cc.step(101, None, None), 7.0);
        assert!(cc.stale);
    }

    #[test]
    fn metrics_examples() {
        let m = metrics(&[], 1000);
        assert!(m.empty && m.throughput_bps == 0.0);
        let rec = |d: i64| PacketRecord { recv_time_us: 0, size_bytes: 1500, one_way_delay_us: d * 1000, seq: 0 };
        let constant: Vec<_> = (0..50).map(|_| rec(10)).collect();
        assert_eq!(metrics(&constant, 1000).p95_delay_ms, 10.0);
        let mixed: Vec<_> = (0..100).map(|i| rec(if i < 90 { 10 } else { 100 })).collect();
        assert_eq!(metrics(&mixed, 1000).p95_delay_ms, 100.0);
    }

    #[test]
    fn message_dropping() {
        let m = DciMessage {
            sfn: 0,
            cell_id: 1,
            rnti: 100,
            format: crate::phy::DciFormat::A,
            mcs1: 1,
            mcs2: None,
            nof_prb: 1,
            tbs: 10,
            ndi: true,
            harq: 0,
            aggregation_level: 1,
            cce_start: 0,
        };
        let log: Vec<_> = (0..10_000u64).map(|sfn| DciMessage { sfn, ..m.clone() }).collect();
        assert_eq!(drop_messages(&log, 0.0, 1).unwrap(), log);
        assert!(drop_messages(&log, 1.0, 1).is_err());
        let kept = drop_messages(&log, 0.5, 1).unwrap().len() as f64;
        // Binomial(10^4, 0.5): sigma = 50.
        assert!((kept - 5000.0).abs() <= 150.0);
        assert_eq!(drop_messages(&log, 0.5, 1).unwrap(), drop_messages(&log, 0.5, 1).unwrap());
    }
}
