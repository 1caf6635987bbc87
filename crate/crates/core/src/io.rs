//! File formats: message logs, LLR streams, capacity and link traces, packet
//! logs, metrics, and a key=value config reader.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::abr::SessionLog;
use crate::capacity::{AggregatedCapacity, CapacitySample, SmoothedCapacity};
use crate::decoder::DecodeReport;
use crate::emulation::LinkTrace;
use crate::error::{Error, Result};
use crate::fusion::{FusedRow, PacketRecord};
use crate::message::{is_usable_rnti, DciMessage};
use crate::phy::{DciFormat, CCE_BITS};
use crate::sim::LlrSubframe;
use crate::tracker::TrackerEvent;

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(true).from_writer(w)
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r)
}

/// Row errors in input files are format errors, not IO errors.
fn bad_row(e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Csv(e),
        _ => Error::Format(e.to_string()),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MessageRow {
    sfn: u64,
    cell_id: u32,
    rnti: u16,
    format: String,
    #[serde(rename = "L")]
    level: u8,
    cce_start: u16,
    mcs1: u8,
    mcs2: Option<u8>,
    nof_prb: u16,
    tbs: u32,
    ndi: u8,
    harq: u8,
}

impl From<&DciMessage> for MessageRow {
    fn from(m: &DciMessage) -> Self {
        Self {
            sfn: m.sfn,
            cell_id: m.cell_id,
            rnti: m.rnti,
            format: m.format.to_string(),
            level: m.aggregation_level,
            cce_start: m.cce_start,
            mcs1: m.mcs1,
            mcs2: m.mcs2,
            nof_prb: m.nof_prb,
            tbs: m.tbs,
            ndi: m.ndi as u8,
            harq: m.harq,
        }
    }
}

impl MessageRow {
    fn into_message(self) -> Result<DciMessage> {
        let format = DciFormat::from_str(&self.format)?;
        if !matches!(self.level, 1 | 2 | 4 | 8) {
            return Err(Error::Format(format!("sfn {}: aggregation level {}", self.sfn, self.level)));
        }
        if self.ndi > 1 || self.harq > 7 || self.mcs1 > 31 {
            return Err(Error::Format(format!("sfn {}: field out of range", self.sfn)));
        }
        if !is_usable_rnti(self.rnti) {
            return Err(Error::Format(format!("sfn {}: RNTI {:#06x} not usable", self.sfn, self.rnti)));
        }
        if (format == DciFormat::B) != self.mcs2.is_some() {
            return Err(Error::Format(format!("sfn {}: mcs2 must be set exactly for format B", self.sfn)));
        }
        Ok(DciMessage {
            sfn: self.sfn,
            cell_id: self.cell_id,
            rnti: self.rnti,
            format,
            mcs1: self.mcs1,
            mcs2: self.mcs2,
            nof_prb: self.nof_prb,
            tbs: self.tbs,
            ndi: self.ndi == 1,
            harq: self.harq,
            aggregation_level: self.level,
            cce_start: self.cce_start,
        })
    }
}

pub fn write_messages<W: Write>(w: W, msgs: &[DciMessage]) -> Result<()> {
    let mut out = csv_writer(w);
    if msgs.is_empty() {
        out.write_record(MESSAGE_HEADER)?;
    }
    for m in msgs {
        out.serialize(MessageRow::from(m))?;
    }
    out.flush()?;
    Ok(())
}

const MESSAGE_HEADER: [&str; 12] = [
    "sfn", "cell_id", "rnti", "format", "L", "cce_start", "mcs1", "mcs2", "nof_prb", "tbs", "ndi", "harq",
];

/// Reads a ground-truth or decoded log; extra decoded columns are ignored.
pub fn read_messages<R: Read>(r: R) -> Result<Vec<DciMessage>> {
    let mut rd = csv_reader(r);
    let headers = rd.headers().map_err(bad_row)?.clone();
    for h in MESSAGE_HEADER {
        if !headers.iter().any(|x| x == h) {
            return Err(Error::Format(format!("message log lacks column `{h}`")));
        }
    }
    rd.deserialize::<MessageRow>()
        .map(|row| row.map_err(bad_row)?.into_message())
        .collect()
}


/// Decoded messages with their flip ratio, the subframe's attempt count and
/// how they were validated.
pub fn write_decoded<W: Write>(w: W, reports: &[DecodeReport]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let mut h: Vec<&str> = MESSAGE_HEADER.to_vec();
    h.extend(["flip_ratio", "attempts", "validated_by"]);
    out.write_record(h)?;
    for r in reports {
        for m in &r.validated {
            out.serialize((
                MessageRow::from(&m.msg),
                m.flip_ratio,
                r.attempts,
                m.validated_by.as_str(),
            ))?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ReportRow {
    sfn: u64,
    cell_id: u32,
    attempts: usize,
    pruned_cces: usize,
    messages: usize,
}

/// One row per subframe.
pub fn write_reports<W: Write>(w: W, reports: &[DecodeReport]) -> Result<()> {
    let mut out = csv_writer(w);
    if reports.is_empty() {
        out.write_record(["sfn", "cell_id", "attempts", "pruned_cces", "messages"])?;
    }
    for r in reports {
        out.serialize(ReportRow {
            sfn: r.sfn,
            cell_id: r.cell_id,
            attempts: r.attempts,
            pruned_cces: r.pruned_cces,
            messages: r.validated.len(),
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_tracker_events<W: Write>(w: W, events: &[TrackerEvent]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["sfn", "cell_id", "rnti", "event", "primary_cell"])?;
    for e in events {
        out.write_record([
            e.sfn.to_string(),
            e.cell_id.to_string(),
            e.rnti.to_string(),
            e.kind.as_str().to_string(),
            e.primary_cell.map(|c| c.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Header of a binary LLR stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LlrHeader {
    pub cell_id: u32,
    pub n_cce: u32,
}

pub struct LlrWriter<W: Write> {
    inner: W,
    header: LlrHeader,
}

impl<W: Write> LlrWriter<W> {
    pub fn new(mut inner: W, header: LlrHeader) -> Result<Self> {
        inner.write_all(&header.cell_id.to_le_bytes())?;
        inner.write_all(&header.n_cce.to_le_bytes())?;
        Ok(Self { inner, header })
    }

    pub fn write(&mut self, sub: &LlrSubframe) -> Result<()> {
        let expected = self.header.n_cce as usize * CCE_BITS;
        if sub.cell_id != self.header.cell_id || sub.llrs.len() != expected {
            return Err(Error::MalformedSubframe {
                sfn: sub.sfn,
                expected: self.header.n_cce as usize,
                got: sub.llrs.len() / CCE_BITS,
            });
        }
        self.inner.write_all(&sub.sfn.to_le_bytes())?;
        let mut buf = Vec::with_capacity(expected * 4);
        for v in &sub.llrs {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.inner.write_all(&buf)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Reads a binary LLR stream subframe by subframe.
pub struct LlrReader<R: Read> {
    inner: R,
    header: LlrHeader,
    buf: Vec<u8>,
}

/// Fills `buf`; `Ok(false)` on a clean end of input before any byte.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) if got == 0 => return Ok(false),
            Ok(0) => {
                return Err(Error::Format(format!(
                    "truncated LLR stream: {got} of {} bytes",
                    buf.len()
                )))
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

/// Largest control region accepted in a header.
const MAX_N_CCE: u32 = 1024;

impl<R: Read> LlrReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut h = [0u8; 8];
        if !read_full(&mut inner, &mut h)? {
            return Err(Error::Format("empty LLR stream".into()));
        }
        let header = LlrHeader {
            cell_id: u32::from_le_bytes(h[..4].try_into().unwrap()),
            n_cce: u32::from_le_bytes(h[4..].try_into().unwrap()),
        };
        if header.n_cce == 0 || !header.n_cce.is_multiple_of(8) || header.n_cce > MAX_N_CCE {
            return Err(Error::Format(format!("bad LLR header: n_cce = {}", header.n_cce)));
        }
        let buf = vec![0u8; header.n_cce as usize * CCE_BITS * 4];
        Ok(Self { inner, header, buf })
    }

    pub fn header(&self) -> LlrHeader {
        self.header
    }

    pub fn next_subframe(&mut self) -> Result<Option<LlrSubframe>> {
        let mut s = [0u8; 8];
        if !read_full(&mut self.inner, &mut s)? {
            return Ok(None);
        }
        if !read_full(&mut self.inner, &mut self.buf)? {
            return Err(Error::Format("LLR stream ends after a subframe number".into()));
        }
        let llrs = self
            .buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect::<Vec<_>>();
        if llrs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite LLR value".into()));
        }
        Ok(Some(LlrSubframe {
            sfn: u64::from_le_bytes(s),
            cell_id: self.header.cell_id,
            llrs,
        }))
    }
}

impl<R: Read> Iterator for LlrReader<R> {
    type Item = Result<LlrSubframe>;
    fn next(&mut self) -> Option<Self::Item> {
        self.next_subframe().transpose()
    }
}

#[derive(Debug, Serialize)]
struct CapacityRow {
    sfn: u64,
    cell_id: String,
    target_prb: Option<u16>,
    idle_prb: Option<u16>,
    bits_per_prb: Option<f64>,
    capacity_bits: f64,
}

/// Per-cell rows take PRB counts from the raw sample and bits-per-PRB and
/// capacity from the smoothed series; CA rows carry only the capacity.
pub fn write_capacity<W: Write>(
    w: W,
    cells: &BTreeMap<u32, (Vec<CapacitySample>, Vec<SmoothedCapacity>)>,
    ca: Option<&[AggregatedCapacity]>,
) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["sfn", "cell_id", "target_prb", "idle_prb", "bits_per_prb", "capacity_bits"])?;
    let mut rows = Vec::new();
    for (cell, (raw, smooth)) in cells {
        for (r, s) in raw.iter().zip(smooth) {
            rows.push(CapacityRow {
                sfn: r.sfn,
                cell_id: cell.to_string(),
                target_prb: Some(r.target_prb),
                idle_prb: Some(r.idle_prb),
                bits_per_prb: Some(s.mean_bits_per_prb),
                capacity_bits: s.capacity_bits,
            });
        }
    }
    for a in ca.unwrap_or_default() {
        rows.push(CapacityRow {
            sfn: a.sfn,
            cell_id: "CA".into(),
            target_prb: None,
            idle_prb: None,
            bits_per_prb: None,
            capacity_bits: a.capacity_bits,
        });
    }
    // Cells before "CA" within a subframe.
    rows.sort_by(|a, b| a.sfn.cmp(&b.sfn).then((a.cell_id == "CA").cmp(&(b.cell_id == "CA"))));
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Delivery-opportunity trace as Mahimahi expects it: one timestamp per
/// line, starting at 1, with the last line setting the loop period. An
/// opportunity at millisecond `t` is written as `t + 1`.
pub fn write_link_trace<W: Write>(mut w: W, trace: &LinkTrace) -> Result<()> {
    for t in &trace.opportunities_ms {
        writeln!(w, "{}", t + 1)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_link_trace<R: BufRead>(r: R) -> Result<LinkTrace> {
    let mut ops = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: u64 = t
            .parse()
            .map_err(|_| Error::Format(format!("trace line {}: `{t}` is not a timestamp", i + 1)))?;
        if v == 0 || ops.last().is_some_and(|&p| v - 1 < p) {
            return Err(Error::Format(format!("trace line {}: timestamps must be positive and non-decreasing", i + 1)));
        }
        ops.push(v - 1);
    }
    let Some(&last) = ops.last() else {
        return Err(Error::Format("empty link trace".into()));
    };
    Ok(LinkTrace {
        opportunities_ms: ops,
        duration_ms: last + 1,
    })
}

pub fn write_packet_log<W: Write>(w: W, log: &[PacketRecord]) -> Result<()> {
    let mut out = csv_writer(w);
    if log.is_empty() {
        out.write_record(["recv_time_us", "size_bytes", "one_way_delay_us", "seq"])?;
    }
    for p in log {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_packet_log<R: Read>(r: R) -> Result<Vec<PacketRecord>> {
    csv_reader(r).deserialize().map(|x| x.map_err(bad_row)).collect()
}

pub fn write_fused<W: Write>(w: W, rows: &[FusedRow]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["sfn", "rnti", "bytes_delivered", "retx_flag"])?;
    for r in rows {
        out.write_record([
            r.sfn.to_string(),
            r.rnti.to_string(),
            r.bytes_delivered.to_string(),
            (r.retx_flag as u8).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub algorithm: String,
    pub run: String,
    pub throughput_bps: f64,
    pub p95_delay_ms: f64,
}

pub fn write_metrics<W: Write>(w: W, rows: &[MetricsRow]) -> Result<()> {
    let mut out = csv_writer(w);
    if rows.is_empty() {
        out.write_record(["algorithm", "run", "throughput_bps", "p95_delay_ms"])?;
    }
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Chunk-by-chunk session logs, tagged by policy.
pub fn write_sessions<W: Write>(w: W, sessions: &[(String, SessionLog)]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record([
        "policy",
        "chunk",
        "level",
        "bitrate_bps",
        "start_s",
        "download_s",
        "rebuffer_s",
        "buffer_s",
    ])?;
    for (policy, s) in sessions {
        for (i, c) in s.chunks.iter().enumerate() {
            out.write_record([
                policy.clone(),
                i.to_string(),
                c.level.to_string(),
                c.bitrate_bps.to_string(),
                c.start_s.to_string(),
                c.download_s.to_string(),
                c.rebuffer_s.to_string(),
                c.buffer_s.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QoeRow {
    pub policy: String,
    pub metric: String,
    pub mean: f64,
    pub stdev: f64,
}

pub fn write_qoe<W: Write>(w: W, rows: &[QoeRow]) -> Result<()> {
    let mut out = csv_writer(w);
    if rows.is_empty() {
        out.write_record(["policy", "metric", "mean", "stdev"])?;
    }
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Flat `key = value` settings. `[section]` lines prefix the keys after
/// them with `section.`; `#` starts a comment.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let k = k.trim();
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(Error::Config(format!("line {}: bad key `{k}`", i + 1)));
            }
            let key = if section.is_empty() {
                k.to_string()
            } else {
                format!("{section}.{k}")
            };
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    /// Distinct names directly under `prefix`, e.g. `cell` → `1`, `2` for
    /// keys `cell.1.bw` and `cell.2.bw`.
    pub fn children(&self, prefix: &str) -> Vec<String> {
        let p = format!("{prefix}.");
        let mut out: Vec<String> = self
            .entries
            .keys()
            .filter_map(|k| k.strip_prefix(&p))
            .filter_map(|rest| rest.split('.').next())
            .map(str::to_string)
            .collect();
        out.dedup();
        out
    }

    /// Canonical text: sorted `key=value` lines. Hash this for manifests.
    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
