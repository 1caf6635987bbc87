//! Packet-log and control-message fusion via HARQ retransmission signatures.
//!
//! A failed transport block is resent 8 ms later, and in-order delivery holds
//! everything behind it until then. The packet log therefore shows a silence
//! of about 8 ms followed by a burst, at the same instant the control stream
//! shows a retransmission. Lining the two up recovers the receiver's clock
//! offset and tells which C-RNTI belongs to the logged UE.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::message::DciMessage;
use crate::sim::SubframeTruth;

/// Minimum silence before a burst, in microseconds (8 ms less the tolerance).
pub const MIN_GAP_US: i64 = 7_500;
/// Packets that must arrive within `BURST_SPAN_US` after the silence.
pub const MIN_BURST: usize = 2;
pub const BURST_SPAN_US: i64 = 1_000;
/// Half-width of the matching window, in microseconds.
pub const MATCH_TOLERANCE_US: i64 = 500;
pub const DEFAULT_SEARCH_MS: i64 = 500;

const HARQ_RTT_MS: i64 = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub recv_time_us: i64,
    pub size_bytes: u32,
    pub one_way_delay_us: i64,
    pub seq: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventSource {
    Log,
    Messages,
}

/// One retransmission, located by the time its data finally arrived.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetxEvent {
    pub source: EventSource,
    /// Time of the retransmission (message side) or of the burst (log side),
    /// in microseconds on the source's clock.
    pub time_us: i64,
    /// Packets in the burst; zero for message-side events.
    pub burst_size: usize,
    /// `(rnti, harq)` for message-side events.
    pub harq: Option<(u16, u8)>,
}

impl RetxEvent {
    /// Time of the failed original transmission.
    pub fn original_time_us(&self) -> i64 {
        self.time_us - HARQ_RTT_MS * 1000
    }
}

pub fn detect_retx_from_log(log: &[PacketRecord]) -> Vec<RetxEvent> {
    let mut out = Vec::new();
    for i in 1..log.len() {
        let t = log[i].recv_time_us;
        if t - log[i - 1].recv_time_us < MIN_GAP_US {
            continue;
        }
        let burst = log[i..].iter().take_while(|p| p.recv_time_us < t + BURST_SPAN_US).count();
        if burst >= MIN_BURST {
            out.push(RetxEvent {
                source: EventSource::Log,
                time_us: t,
                burst_size: burst,
                harq: None,
            });
        }
    }
    out
}

/// One event per retransmission message (ndi = false), at its subframe.
pub fn detect_retx_from_msgs(msgs: &[DciMessage]) -> Vec<RetxEvent> {
    let mut out: Vec<RetxEvent> = msgs
        .iter()
        .filter(|m| m.is_retx())
        .map(|m| RetxEvent {
            source: EventSource::Messages,
            time_us: m.sfn as i64 * 1000,
            burst_size: 0,
            harq: Some((m.rnti, m.harq)),
        })
        .collect();
    out.sort_by_key(|e| e.time_us);
    out
}

/// Count message events with a log event within the tolerance once the log
/// is moved back by `offset_ms`. Both lists sorted by time.
fn matches_at(log: &[i64], msgs: &[i64], offset_ms: i64) -> usize {
    let shift = offset_ms * 1000;
    let (mut i, mut n) = (0usize, 0usize);
    for &m in msgs {
        while i < log.len() && log[i] - shift < m - MATCH_TOLERANCE_US {
            i += 1;
        }
        if i < log.len() && log[i] - shift <= m + MATCH_TOLERANCE_US {
            n += 1;
            i += 1;
        }
    }
    n
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    /// Milliseconds the log clock runs ahead of the subframe clock.
    pub offset_ms: i64,
    pub matched: usize,
}

/// Offset in `[-search_ms, search_ms]` matching the most events. Ties go to
/// the smallest |offset|, then to the negative one.
pub fn align(log_events: &[RetxEvent], msg_events: &[RetxEvent], search_ms: i64) -> Result<Alignment> {
    if log_events.is_empty() || msg_events.is_empty() {
        return Err(Error::AlignmentUnavailable);
    }
    let mut log: Vec<i64> = log_events.iter().map(|e| e.time_us).collect();
    let mut msgs: Vec<i64> = msg_events.iter().map(|e| e.time_us).collect();
    log.sort_unstable();
    msgs.sort_unstable();
    let mut best = Alignment {
        offset_ms: 0,
        matched: matches_at(&log, &msgs, 0),
    };
    for d in 1..=search_ms.max(0) {
        for offset_ms in [-d, d] {
            let matched = matches_at(&log, &msgs, offset_ms);
            if matched > best.matched {
                best = Alignment { offset_ms, matched };
            }
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Association {
    pub rnti: u16,
    pub alignment: Alignment,
    /// Matches over the runner-up.
    pub margin: usize,
    pub ambiguous: bool,
}

/// Pick the C-RNTI whose retransmissions best explain the log.
pub fn associate_rnti(
    log: &[PacketRecord],
    per_rnti: &BTreeMap<u16, Vec<DciMessage>>,
    search_ms: i64,
) -> Result<Association> {
    let log_events = detect_retx_from_log(log);
    let mut scored: Vec<(u16, Alignment)> = Vec::new();
    for (&rnti, msgs) in per_rnti {
        let alignment = match align(&log_events, &detect_retx_from_msgs(msgs), search_ms) {
            Ok(a) => a,
            Err(Error::AlignmentUnavailable) => Alignment {
                offset_ms: 0,
                matched: 0,
            },
            Err(e) => return Err(e),
        };
        scored.push((rnti, alignment));
    }
    if scored.is_empty() {
        return Err(Error::AlignmentUnavailable);
    }
    scored.sort_by(|a, b| b.1.matched.cmp(&a.1.matched).then(a.0.cmp(&b.0)));
    let (rnti, alignment) = scored[0];
    let margin = scored.get(1).map_or(alignment.matched, |r| alignment.matched - r.1.matched);
    Ok(Association {
        rnti,
        alignment,
        margin,
        ambiguous: scored.len() > 1 && margin == 0,
    })
}

pub fn shift_log(log: &[PacketRecord], offset_ms: i64) -> Vec<PacketRecord> {
    log.iter()
        .map(|p| PacketRecord {
            recv_time_us: p.recv_time_us + offset_ms * 1000,
            ..p.clone()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedRow {
    pub sfn: u64,
    pub rnti: u16,
    pub bytes_delivered: u64,
    pub retx_flag: bool,
}

/// Per message of the UE, the bytes the log shows arriving in that subframe
/// once the log is moved onto the subframe clock.
pub fn fuse(log: &[PacketRecord], msgs: &[DciMessage], offset_ms: i64) -> Vec<FusedRow> {
    let mut bytes: HashMap<i64, u64> = HashMap::new();
    for p in log {
        *bytes.entry((p.recv_time_us - offset_ms * 1000).div_euclid(1000)).or_default() += p.size_bytes as u64;
    }
    msgs.iter()
        .map(|m| FusedRow {
            sfn: m.sfn,
            rnti: m.rnti,
            bytes_delivered: bytes.get(&(m.sfn as i64)).copied().unwrap_or(0),
            retx_flag: m.is_retx(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketLogConfig {
    pub rnti: u16,
    pub clock_offset_ms: i64,
    pub payload_bytes: u32,
    /// Sender-to-tower delay added to every packet.
    pub base_delay_ms: i64,
    pub seed: u64,
}

impl PacketLogConfig {
    pub fn new(rnti: u16) -> Self {
        Self {
            rnti,
            clock_offset_ms: 0,
            payload_bytes: 1400,
            base_delay_ms: 20,
            seed: 1,
        }
    }
}

struct Block {
    first_sfn: u64,
    bits: u32,
    done_sfn: u64,
    delivered: bool,
}

/// Receiver-side packet log of one UE from the ground truth of its cells.
///
/// Blocks are released in order of first transmission: a block that needs
/// retransmissions holds back every later block until it succeeds. A block
/// that exhausts its transmissions is lost and releases the queue at its last
/// attempt.
pub fn synthesize_packet_log(truths: &[SubframeTruth], cfg: &PacketLogConfig) -> Vec<PacketRecord> {
    let mut sorted: Vec<&SubframeTruth> = truths.iter().collect();
    sorted.sort_by_key(|t| (t.sfn, t.cell_id));
    let mut blocks: Vec<Block> = Vec::new();
    let mut open: HashMap<(u32, u8), usize> = HashMap::new();
    for t in sorted {
        for m in t.messages.iter().filter(|m| m.rnti == cfg.rnti) {
            let key = (t.cell_id, m.harq);
            let idx = if m.ndi {
                blocks.push(Block {
                    first_sfn: t.sfn,
                    bits: m.tbs,
                    done_sfn: t.sfn,
                    delivered: false,
                });
                blocks.len() - 1
            } else if let Some(&i) = open.get(&key) {
                i
            } else {
                continue;
            };
            blocks[idx].done_sfn = t.sfn;
            if t.failed.contains(&(m.rnti, m.harq)) {
                open.insert(key, idx);
            } else {
                blocks[idx].delivered = true;
                open.remove(&key);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    let mut release = 0u64;
    let mut carry = 0.0f64;
    let mut in_ms = 0usize;
    let mut last_ms: Option<u64> = None;
    let mut base_us = 0i64;
    for b in &blocks {
        release = release.max(b.done_sfn);
        if !b.delivered {
            continue;
        }
        carry += b.bits as f64 / 8.0;
        let n = (carry / cfg.payload_bytes as f64).floor();
        carry -= n * cfg.payload_bytes as f64;
        if last_ms != Some(release) {
            last_ms = Some(release);
            in_ms = 0;
            base_us = rng.gen_range(100..400);
        }
        for _ in 0..n as usize {
            let within = base_us + (5 * in_ms as i64).min(599);
            in_ms += 1;
            out.push(PacketRecord {
                recv_time_us: (release as i64 + cfg.clock_offset_ms) * 1000 + within,
                size_bytes: cfg.payload_bytes,
                one_way_delay_us: cfg.base_delay_ms * 1000 + (release - b.first_sfn) as i64 * 1000 + within,
                seq: out.len() as u64,
            });
        }
    }
    out
}
