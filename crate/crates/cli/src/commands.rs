use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use ngkit_core::abr::{
    download_sim, qoe, telemetry_from_capacity, AbrLink, AbrPolicy, BufferBased, Mpc, MpcConfig, NgMpc, PlayerConfig,
    QoeParams, QualityMap, SessionLog, VideoSpec,
};
use ngkit_core::capacity::{aggregate_ca, capacity_from_log, smooth, CapacityConfig};
use ngkit_core::decoder::DecodeReport;
use ngkit_core::emulation::{
    drop_messages, emulate, nearest_rank, trace_from_capacity, CubicSender, EmuConfig, LinkTrace, NgCc, NgCcConfig,
    TelemetryFeed,
};
use ngkit_core::fusion::{
    align, associate_rnti, detect_retx_from_log, detect_retx_from_msgs, fuse, synthesize_packet_log, PacketLogConfig,
    DEFAULT_SEARCH_MS,
};
use ngkit_core::io::{self, KvConfig, LlrHeader, LlrReader, LlrWriter, MetricsRow, QoeRow};
use ngkit_core::message::DciMessage;
use ngkit_core::pipeline::{publish_snapshots, CellWorker, Submit, WorkerConfig};
use ngkit_core::sim::{CellConfig, LlrSubframe, Simulator};
use ngkit_core::tracker::{TrackerEvent, TrackerEventKind, CA_MIN_RATE_BPS};
use ngkit_core::Error;

use crate::fail::{ensure, CliError, CliResult};
use crate::setup::{create, load_config, open, out_dir, parse_rnti, resolve_cell, resolve_seed, sim_config, Manifest};

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// key = value file describing cells, UEs and duration.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the LLR streams and write only the ground-truth log.
    #[arg(long)]
    pub truth_only: bool,
    /// Also write a receiver packet log for this RNTI.
    #[arg(long, value_parser = parse_rnti)]
    pub packet_log: Option<u16>,
    /// Receiver clock offset of the packet log.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub clock_offset_ms: i64,
}

pub fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let cfg = load_config(Some(&a.config))?;
    let seed = resolve_seed(&cfg)?;
    let sim_cfg = sim_config(&cfg, seed)?;
    out_dir(&a.out)?;
    let mut writers = BTreeMap::new();
    if !a.truth_only {
        for c in &sim_cfg.cells {
            let header = LlrHeader {
                cell_id: c.cell_id,
                n_cce: c.n_cce() as u32,
            };
            let w = LlrWriter::new(create(&a.out.join(format!("cell{}.llr", c.cell_id)))?, header)?;
            writers.insert(c.cell_id, w);
        }
    }
    let n_prb: BTreeMap<u32, u16> = sim_cfg.cells.iter().map(|c| (c.cell_id, c.n_prb)).collect();
    let mut sim = Simulator::new(sim_cfg)?;
    let mut messages = Vec::new();
    let mut truths = Vec::new();
    while !sim.finished() {
        let step = if a.truth_only {
            sim.step()?.into_iter().map(|t| (t, None)).collect::<Vec<_>>()
        } else {
            sim.step_with_llr()?.into_iter().map(|(t, l)| (t, Some(l))).collect()
        };
        for (truth, llr) in step {
            ensure(truth.allocated_prb() + truth.idle_prb as u32 == n_prb[&truth.cell_id] as u32, || {
                format!("subframe {} of cell {} does not account for every PRB", truth.sfn, truth.cell_id)
            })?;
            if let Some(l) = llr {
                writers.get_mut(&l.cell_id).unwrap().write(&l)?;
            }
            messages.extend(truth.messages.iter().cloned());
            if a.packet_log.is_some() {
                truths.push(truth);
            }
        }
    }
    for w in writers.into_values() {
        w.finish()?;
    }
    io::write_messages(create(&a.out.join("truth.csv"))?, &messages)?;
    let mut manifest = Manifest::new("simulate", &cfg, seed);
    manifest.flag("truth_only", a.truth_only);
    if let Some(rnti) = a.packet_log {
        let pcfg = PacketLogConfig {
            clock_offset_ms: a.clock_offset_ms,
            seed,
            ..PacketLogConfig::new(rnti)
        };
        let log = synthesize_packet_log(&truths, &pcfg);
        io::write_packet_log(create(&a.out.join("packets.csv"))?, &log)?;
        manifest.flag("packet_log", rnti).flag("clock_offset_ms", a.clock_offset_ms);
    }
    manifest.write(&a.out)?;
    println!("simulated {} ms, {} messages", sim.sfn(), messages.len());
    Ok(())
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// LLR streams, one per cell, decoded in lockstep.
    #[arg(long, required = true, num_args = 1..)]
    pub llr: Vec<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Channel bandwidth for cells not described in the config.
    #[arg(long)]
    pub bandwidth: Option<u32>,
    /// Cap on Viterbi runs per subframe.
    #[arg(long)]
    pub max_attempts: Option<usize>,
    /// Decoder threads per cell.
    #[arg(long)]
    pub pool: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn open_llr(path: &Path) -> CliResult<LlrReader<std::io::BufReader<std::fs::File>>> {
    LlrReader::new(open(path)?).map_err(|e| match e {
        Error::Format(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other.into(),
    })
}

fn worker_for(
    cfg: &KvConfig,
    header: LlrHeader,
    bandwidth: Option<u32>,
    max_attempts: Option<usize>,
    pool: Option<usize>,
) -> CliResult<CellWorker> {
    let cell = resolve_cell(cfg, header.cell_id, bandwidth, Some(header.n_cce))?;
    if cell.n_cce() as u32 != header.n_cce {
        return Err(CliError::Data(format!(
            "cell {}: stream has {} CCEs, configuration implies {}",
            cell.cell_id,
            header.n_cce,
            cell.n_cce()
        )));
    }
    let mut wc = WorkerConfig::new(cell);
    if let Some(m) = max_attempts {
        if m == 0 {
            return Err(CliError::Usage("--max-attempts must be positive".into()));
        }
        wc.decoder.max_attempts = m;
    }
    if let Some(p) = pool {
        wc.pool_size = p;
    }
    Ok(CellWorker::new(wc)?)
}

fn feed(w: &mut CellWorker, sub: LlrSubframe) -> CliResult<()> {
    if w.submit(sub.clone())? == Submit::Backpressure {
        w.process()?;
        ensure(w.submit(sub)? == Submit::Accepted, || "queue still full after processing".into())?;
    }
    Ok(())
}

fn check_reports(reports: &[DecodeReport]) -> CliResult<()> {
    ensure(reports.windows(2).all(|p| p[0].sfn < p[1].sfn), || "decoded subframes out of order".into())?;
    for r in reports {
        let mut used = BTreeSet::new();
        for m in &r.validated {
            for c in m.msg.cce_range() {
                ensure(used.insert(c), || format!("subframe {}: overlapping messages on CCE {c}", r.sfn))?;
            }
        }
    }
    Ok(())
}

pub fn decode(a: &DecodeArgs) -> CliResult<()> {
    let cfg = load_config(a.config.as_deref())?;
    let seed = resolve_seed(&cfg)?;
    let mut readers = Vec::new();
    let mut workers = Vec::new();
    for p in &a.llr {
        let r = open_llr(p)?;
        workers.push(worker_for(&cfg, r.header(), a.bandwidth, a.max_attempts, a.pool)?);
        readers.push(r);
    }
    let ids: BTreeSet<u32> = workers.iter().map(CellWorker::cell_id).collect();
    if ids.len() != workers.len() {
        return Err(CliError::Usage("two LLR streams carry the same cell".into()));
    }
    out_dir(&a.out)?;
    let mut reports: Vec<Vec<DecodeReport>> = vec![Vec::new(); workers.len()];
    let mut events = Vec::new();
    let mut ca_seen = BTreeSet::new();
    let mut ca_check = |workers: &mut [CellWorker], events: &mut Vec<TrackerEvent>| {
        let (snaps, ca) = publish_snapshots(workers, CA_MIN_RATE_BPS);
        let sfn = snaps.iter().filter_map(|s| s.watermark).max().unwrap_or(0);
        for (rnti, e) in ca.entries {
            if ca_seen.insert(rnti) {
                events.push(TrackerEvent {
                    sfn,
                    cell_id: e.primary(),
                    rnti,
                    kind: TrackerEventKind::CaDetected,
                    primary_cell: Some(e.primary()),
                });
            }
        }
    };
    loop {
        let mut any = false;
        let mut block_end = false;
        for (r, w) in readers.iter_mut().zip(workers.iter_mut()) {
            if let Some(sub) = r.next_subframe()? {
                any = true;
                block_end |= sub.sfn % ngkit_core::pipeline::SNAPSHOT_PERIOD == ngkit_core::pipeline::SNAPSHOT_PERIOD - 1;
                feed(w, sub)?;
            }
        }
        if !any {
            break;
        }
        if block_end {
            for (i, w) in workers.iter_mut().enumerate() {
                w.process()?;
                reports[i].extend(w.drain_ordered(u64::MAX));
                events.extend(w.take_events());
            }
            ca_check(&mut workers, &mut events);
        }
    }
    for (i, w) in workers.iter_mut().enumerate() {
        w.flush()?;
        reports[i].extend(w.drain_ordered(u64::MAX));
        events.extend(w.take_events());
    }
    ca_check(&mut workers, &mut events);
    for r in &reports {
        check_reports(r)?;
    }
    let mut all: Vec<DecodeReport> = reports.into_iter().flatten().collect();
    all.sort_by_key(|r| (r.sfn, r.cell_id));
    events.sort_by_key(|e| (e.sfn, e.cell_id, e.rnti));
    io::write_decoded(create(&a.out.join("decoded.csv"))?, &all)?;
    io::write_reports(create(&a.out.join("reports.csv"))?, &all)?;
    io::write_tracker_events(create(&a.out.join("ues.csv"))?, &events)?;
    let mut manifest = Manifest::new("decode", &cfg, seed);
    manifest.flag("llr", join_paths(&a.llr));
    if let Some(m) = a.max_attempts {
        manifest.flag("max_attempts", m);
    }
    manifest.write(&a.out)?;
    let n: usize = all.iter().map(|r| r.validated.len()).sum();
    println!("decoded {} subframes, {n} messages", all.len());
    Ok(())
}

fn join_paths(p: &[PathBuf]) -> String {
    p.iter().map(|x| x.display().to_string()).collect::<Vec<_>>().join(",")
}

fn read_logs(paths: &[PathBuf]) -> CliResult<Vec<DciMessage>> {
    let mut msgs = Vec::new();
    for p in paths {
        let got = io::read_messages(open(p)?).map_err(|e| match e {
            Error::Format(m) => CliError::Data(format!("{}: {m}", p.display())),
            other => other.into(),
        })?;
        msgs.extend(got);
    }
    Ok(msgs)
}

fn cells_of(msgs: &[DciMessage], cfg: &KvConfig, bandwidth: Option<u32>) -> CliResult<Vec<CellConfig>> {
    let ids: BTreeSet<u32> = msgs.iter().map(|m| m.cell_id).collect();
    if ids.is_empty() {
        return Err(CliError::Data("message log is empty".into()));
    }
    ids.into_iter().map(|id| resolve_cell(cfg, id, Some(bandwidth.unwrap_or(20)), None)).collect()
}

#[derive(Args, Debug)]
pub struct CapacityArgs {
    /// Decoded or ground-truth message logs.
    #[arg(long, required = true, num_args = 1..)]
    pub log: Vec<PathBuf>,
    /// The UE whose capacity is estimated.
    #[arg(long, value_parser = parse_rnti)]
    pub target: u16,
    /// Sum the capacity of all cells in the logs.
    #[arg(long)]
    pub ca: bool,
    /// Drop each message with this probability first.
    #[arg(long, default_value_t = 0.0)]
    pub drop: f64,
    /// Sliding-mean window in subframes; 1 keeps raw per-subframe values.
    #[arg(long, default_value_t = 1)]
    pub window: usize,
    /// Cell bandwidth in MHz for cells not in the config.
    #[arg(long)]
    pub bandwidth: Option<u32>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of subframes; defaults to one past the last logged sfn.
    #[arg(long)]
    pub subframes: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn capacity(a: &CapacityArgs) -> CliResult<()> {
    let cfg = load_config(a.config.as_deref())?;
    let seed = resolve_seed(&cfg)?;
    if a.window == 0 {
        return Err(CliError::Usage("--window must be positive".into()));
    }
    let mut msgs = read_logs(&a.log)?;
    let cells = cells_of(&msgs, &cfg, a.bandwidth)?;
    if cells.len() > 1 && !a.ca {
        return Err(CliError::Usage("logs cover several cells; pass --ca".into()));
    }
    let end = a.subframes.unwrap_or_else(|| msgs.iter().map(|m| m.sfn + 1).max().unwrap_or(0));
    if a.drop > 0.0 {
        msgs = drop_messages(&msgs, a.drop, seed)?;
    }
    let mut per_cell = BTreeMap::new();
    let mut smoothed = BTreeMap::new();
    for cell in &cells {
        let raw = capacity_from_log(&msgs, cell, CapacityConfig::new(a.target), 0..end);
        for s in &raw {
            ensure(s.target_prb + s.other_prb + s.idle_prb == cell.n_prb, || {
                format!("capacity sample {} of cell {} does not sum to the cell PRBs", s.sfn, cell.cell_id)
            })?;
        }
        let sm = smooth(&raw, a.window);
        smoothed.insert(cell.cell_id, sm.clone());
        per_cell.insert(cell.cell_id, (raw, sm));
    }
    out_dir(&a.out)?;
    let ids: Vec<u32> = cells.iter().map(|c| c.cell_id).collect();
    let ca = a.ca.then(|| aggregate_ca(&smoothed, &ids));
    io::write_capacity(create(&a.out.join("capacity.csv"))?, &per_cell, ca.as_deref())?;
    let series: Vec<f64> = match &ca {
        Some(agg) => agg.iter().map(|x| x.capacity_bits).collect(),
        None => smoothed[&ids[0]].iter().map(|x| x.capacity_bits).collect(),
    };
    let trace = trace_from_capacity(&series);
    io::write_link_trace(create(&a.out.join("trace.txt"))?, &trace)?;
    let mut manifest = Manifest::new("capacity", &cfg, seed);
    manifest
        .flag("log", join_paths(&a.log))
        .flag("target", a.target)
        .flag("ca", a.ca)
        .flag("drop", a.drop)
        .flag("window", a.window)
        .flag("subframes", end);
    manifest.write(&a.out)?;
    println!(
        "{end} subframes, mean capacity {:.2} Mbit/s",
        series.iter().sum::<f64>() / series.len().max(1) as f64 / 1e3
    );
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CcChoice {
    Ngcc,
    Cubic,
    Both,
}

#[derive(Args, Debug)]
pub struct EmulateArgs {
    /// Delivery-opportunity trace (one ms timestamp per line).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CcChoice::Both)]
    pub cc: CcChoice,
    /// Defaults to the trace length.
    #[arg(long)]
    pub duration_ms: Option<u64>,
    #[arg(long, default_value_t = 20)]
    pub prop_delay_ms: u64,
    /// Drop-tail buffer in packets; unbounded when absent.
    #[arg(long)]
    pub buffer: Option<usize>,
    /// Message-drop sweep `start:stop:step`; needs --log and --target.
    #[arg(long)]
    pub sweep_drop: Option<String>,
    /// Message log whose capacity drives the link in a sweep.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, value_parser = parse_rnti)]
    pub target: Option<u16>,
    #[arg(long)]
    pub bandwidth: Option<u32>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Telemetry smoothing window in subframes for sweeps.
    #[arg(long, default_value_t = 100)]
    pub window: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_sweep(s: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("sweep `{s}`: expected start:stop:step")))?;
    let [start, stop, step] = parts[..] else {
        return Err(CliError::Usage(format!("sweep `{s}`: expected start:stop:step")));
    };
    if step.is_nan() || step <= 0.0 || stop < start {
        return Err(CliError::Usage(format!("sweep `{s}`: empty range")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect())
}

fn tiled(v: &[f64], len: usize) -> Vec<f64> {
    if v.is_empty() {
        return vec![0.0; len];
    }
    v.iter().copied().cycle().take(len.max(v.len())).collect()
}

fn row(algorithm: &str, run: String, r: &ngkit_core::emulation::EmuResult) -> MetricsRow {
    MetricsRow {
        algorithm: algorithm.into(),
        run,
        throughput_bps: r.metrics.throughput_bps,
        p95_delay_ms: r.metrics.p95_delay_ms,
    }
}

pub fn emulate_cmd(a: &EmulateArgs) -> CliResult<()> {
    let cfg = load_config(a.config.as_deref())?;
    let seed = resolve_seed(&cfg)?;
    let mut manifest = Manifest::new("emulate", &cfg, seed);
    manifest.flag("cc", format!("{:?}", a.cc)).flag("prop_delay_ms", a.prop_delay_ms);
    let mut rows = Vec::new();
    let run_cubic = a.cc != CcChoice::Ngcc;
    let run_ngcc = a.cc != CcChoice::Cubic;
    match &a.sweep_drop {
        None => {
            let path = a
                .trace
                .as_ref()
                .ok_or_else(|| CliError::Usage("--trace is required without --sweep-drop".into()))?;
            let trace = io::read_link_trace(open(path)?)?;
            let duration = a.duration_ms.unwrap_or(trace.duration_ms);
            let ecfg = EmuConfig {
                prop_delay_ms: a.prop_delay_ms,
                duration_ms: duration,
                buffer_packets: a.buffer,
            };
            let cap = tiled(&trace.capacity_bits_per_ms(), (duration + a.prop_delay_ms) as usize);
            let mut ng = None;
            let mut cu = None;
            if run_ngcc {
                let mut cc = NgCc::new(NgCcConfig::default(), TelemetryFeed::perfect(&cap, a.prop_delay_ms));
                let r = emulate(&trace, &mut cc, &ecfg);
                rows.push(row("ngcc", "0".into(), &r));
                ng = Some(r);
            }
            if run_cubic {
                let r = emulate(&trace, &mut CubicSender::default(), &ecfg);
                rows.push(row("cubic", "0".into(), &r));
                cu = Some(r);
            }
            if let (Some(n), Some(c)) = (ng, cu) {
                rows.push(MetricsRow {
                    algorithm: "ngcc_minus_cubic".into(),
                    run: "0".into(),
                    throughput_bps: n.metrics.throughput_bps - c.metrics.throughput_bps,
                    p95_delay_ms: n.metrics.p95_delay_ms - c.metrics.p95_delay_ms,
                });
            }
            manifest.flag("trace", path.display()).flag("duration_ms", duration);
        }
        Some(sweep) => {
            let probs = parse_sweep(sweep)?;
            let (Some(log), Some(target)) = (&a.log, a.target) else {
                return Err(CliError::Usage("--sweep-drop needs --log and --target".into()));
            };
            let msgs = read_logs(std::slice::from_ref(log))?;
            let cells = cells_of(&msgs, &cfg, a.bandwidth)?;
            if cells.len() != 1 {
                return Err(CliError::Usage("--sweep-drop works on a single-cell log".into()));
            }
            let cell = &cells[0];
            let end = a.duration_ms.unwrap_or_else(|| msgs.iter().map(|m| m.sfn + 1).max().unwrap_or(0));
            let truth: Vec<f64> = capacity_from_log(&msgs, cell, CapacityConfig::new(target), 0..end)
                .iter()
                .map(|s| s.capacity_bits)
                .collect();
            let trace: LinkTrace = trace_from_capacity(&truth);
            let ecfg = EmuConfig {
                prop_delay_ms: a.prop_delay_ms,
                duration_ms: end,
                buffer_packets: a.buffer,
            };
            if run_ngcc {
                for &p in &probs {
                    let kept = drop_messages(&msgs, p, seed)?;
                    let feed = TelemetryFeed::from_log(&kept, cell, CapacityConfig::new(target), 0..end, a.window);
                    let mut cc = NgCc::new(NgCcConfig::default(), feed);
                    rows.push(row("ngcc", format!("drop={p}"), &emulate(&trace, &mut cc, &ecfg)));
                }
            }
            if run_cubic {
                rows.push(row("cubic", "drop=none".into(), &emulate(&trace, &mut CubicSender::default(), &ecfg)));
            }
            manifest
                .flag("sweep_drop", sweep)
                .flag("log", log.display())
                .flag("target", target)
                .flag("window", a.window)
                .flag("duration_ms", end);
        }
    }
    out_dir(&a.out)?;
    io::write_metrics(create(&a.out.join("metrics.csv"))?, &rows)?;
    manifest.write(&a.out)?;
    for r in &rows {
        println!(
            "{:<18} {:<12} {:>9.3} Mbit/s  p95 {:>8.1} ms",
            r.algorithm,
            r.run,
            r.throughput_bps / 1e6,
            r.p95_delay_ms
        );
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyChoice {
    Mpc,
    Ngmpc,
    Buffer,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum QoeChoice {
    Linear,
    Log,
    Hd,
    All,
}

#[derive(Args, Debug)]
pub struct AbrArgs {
    /// Delivery-opportunity traces; QoE mean and stdev are over these.
    #[arg(long, required = true, num_args = 1..)]
    pub trace: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = PolicyChoice::All)]
    pub policy: PolicyChoice,
    #[arg(long, value_enum, default_value_t = QoeChoice::All)]
    pub qoe: QoeChoice,
    #[arg(long, default_value_t = 40)]
    pub rtt_ms: u64,
    /// Telemetry smoothing window in ms for NG-MPC.
    #[arg(long, default_value_t = 100)]
    pub window: usize,
    #[arg(long, default_value_t = 48)]
    pub chunks: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn mean_stdev(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn abr(a: &AbrArgs) -> CliResult<()> {
    let cfg = load_config(a.config.as_deref())?;
    let seed = resolve_seed(&cfg)?;
    let spec = VideoSpec {
        chunks: a.chunks,
        ..VideoSpec::default()
    };
    spec.validate()?;
    let metrics: Vec<QualityMap> = match a.qoe {
        QoeChoice::Linear => vec![QualityMap::Linear],
        QoeChoice::Log => vec![QualityMap::Log],
        QoeChoice::Hd => vec![QualityMap::Hd],
        QoeChoice::All => QualityMap::ALL.to_vec(),
    };
    let policies: Vec<PolicyChoice> = match a.policy {
        PolicyChoice::All => vec![PolicyChoice::Mpc, PolicyChoice::Ngmpc, PolicyChoice::Buffer],
        p => vec![p],
    };
    let player = PlayerConfig::default();
    let mut scores: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let mut sessions: Vec<(String, SessionLog)> = Vec::new();
    for (ti, path) in a.trace.iter().enumerate() {
        let trace = io::read_link_trace(open(path)?)?;
        let cap = trace.capacity_bits_per_ms();
        // Telemetry covers a few loops of the trace for long sessions.
        let horizon = (spec.chunks as f64 * spec.chunk_s * 1000.0 * 3.0) as usize + cap.len();
        let telemetry = telemetry_from_capacity(&tiled(&cap, horizon), a.window);
        let link = AbrLink {
            capacity_bits_per_ms: cap,
            rtt_ms: a.rtt_ms,
        };
        for (mi, &map) in metrics.iter().enumerate() {
            let params = QoeParams::new(map);
            for (pi, &p) in policies.iter().enumerate() {
                let mut policy: Box<dyn AbrPolicy> = match p {
                    PolicyChoice::Mpc => Box::new(Mpc { cfg: MpcConfig::new(map) }),
                    PolicyChoice::Ngmpc => Box::new(NgMpc::new(MpcConfig::new(map), telemetry.clone())),
                    _ => Box::new(BufferBased::default()),
                };
                let s = download_sim(&spec, policy.as_mut(), &link, &player);
                scores.entry((pi, mi)).or_default().push(qoe(&s, &spec, &params));
                sessions.push((format!("{}/{}/{ti}", policy.name(), map.name()), s));
            }
        }
    }
    let mut rows = Vec::new();
    for (&(pi, mi), v) in &scores {
        let (mean, stdev) = mean_stdev(v);
        rows.push(QoeRow {
            policy: policy_name(policies[pi]).into(),
            metric: metrics[mi].name().into(),
            mean,
            stdev,
        });
    }
    rows.sort_by(|x, y| x.metric.cmp(&y.metric).then(x.policy.cmp(&y.policy)));
    out_dir(&a.out)?;
    io::write_qoe(create(&a.out.join("qoe.csv"))?, &rows)?;
    io::write_sessions(create(&a.out.join("sessions.csv"))?, &sessions)?;
    let mut manifest = Manifest::new("abr", &cfg, seed);
    manifest
        .flag("trace", join_paths(&a.trace))
        .flag("policy", format!("{:?}", a.policy))
        .flag("qoe", format!("{:?}", a.qoe))
        .flag("rtt_ms", a.rtt_ms)
        .flag("window", a.window)
        .flag("chunks", a.chunks);
    manifest.write(&a.out)?;
    for r in &rows {
        println!("{:<7} {:<7} mean {:>9.2}  stdev {:>8.2}", r.metric, r.policy, r.mean, r.stdev);
    }
    Ok(())
}

fn policy_name(p: PolicyChoice) -> &'static str {
    match p {
        PolicyChoice::Mpc => "mpc",
        PolicyChoice::Ngmpc => "ngmpc",
        PolicyChoice::Buffer => "buffer",
        PolicyChoice::All => "all",
    }
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub llr: Vec<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bandwidth: Option<u32>,
    #[arg(long)]
    pub max_attempts: Option<usize>,
    #[arg(long)]
    pub pool: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn bench(a: &BenchArgs) -> CliResult<()> {
    let cfg = load_config(a.config.as_deref())?;
    let seed = resolve_seed(&cfg)?;
    let mut attempts = Vec::new();
    for p in &a.llr {
        let mut r = open_llr(p)?;
        let mut w = worker_for(&cfg, r.header(), a.bandwidth, a.max_attempts, a.pool)?;
        while let Some(sub) = r.next_subframe()? {
            feed(&mut w, sub)?;
            attempts.extend(w.drain_ordered(u64::MAX).iter().map(|x| x.attempts));
        }
        w.flush()?;
        attempts.extend(w.drain_ordered(u64::MAX).iter().map(|x| x.attempts));
    }
    let mut hist: BTreeMap<usize, u64> = BTreeMap::new();
    for &x in &attempts {
        *hist.entry(x).or_default() += 1;
    }
    out_dir(&a.out)?;
    let mut w = csv_out(&a.out.join("attempts.csv"))?;
    w.write_record(["attempts", "subframes"]).map_err(Error::from)?;
    for (k, v) in &hist {
        w.write_record([k.to_string(), v.to_string()]).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    let vals: Vec<f64> = attempts.iter().map(|&x| x as f64).collect();
    let pct = |q| nearest_rank(&vals, q).map(|v| v.to_string()).unwrap_or_default();
    let mut s = csv_out(&a.out.join("summary.csv"))?;
    s.write_record(["subframes", "mean", "p50", "p99", "max"]).map_err(Error::from)?;
    let mean = if vals.is_empty() {
        String::new()
    } else {
        (vals.iter().sum::<f64>() / vals.len() as f64).to_string()
    };
    s.write_record([vals.len().to_string(), mean, pct(0.5), pct(0.99), pct(1.0)])
        .map_err(Error::from)?;
    s.flush().map_err(Error::from)?;
    let mut manifest = Manifest::new("bench", &cfg, seed);
    manifest.flag("llr", join_paths(&a.llr));
    if let Some(m) = a.max_attempts {
        manifest.flag("max_attempts", m);
    }
    manifest.write(&a.out)?;
    match nearest_rank(&vals, 0.99) {
        Some(p99) => println!("{} subframes, p99 attempts {p99}", vals.len()),
        None => println!("no subframes"),
    }
    Ok(())
}

fn csv_out(path: &Path) -> CliResult<csv::Writer<std::io::BufWriter<std::fs::File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    /// Receiver packet log.
    #[arg(long)]
    pub packets: PathBuf,
    /// Decoded message log of the cell(s) serving the receiver.
    #[arg(long)]
    pub log: PathBuf,
    /// Skip association and use this RNTI.
    #[arg(long, value_parser = parse_rnti)]
    pub rnti: Option<u16>,
    #[arg(long, default_value_t = DEFAULT_SEARCH_MS)]
    pub search_ms: i64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn fuse_cmd(a: &FuseArgs) -> CliResult<()> {
    let seed = resolve_seed(&KvConfig::default())?;
    let packets = io::read_packet_log(open(&a.packets)?)?;
    let msgs = read_logs(std::slice::from_ref(&a.log))?;
    let mut per_rnti: BTreeMap<u16, Vec<DciMessage>> = BTreeMap::new();
    for m in msgs {
        per_rnti.entry(m.rnti).or_default().push(m);
    }
    let (rnti, offset, matched, margin, ambiguous) = match a.rnti {
        Some(r) => {
            let mine = per_rnti.get(&r).map_or(&[][..], Vec::as_slice);
            let al = align(&detect_retx_from_log(&packets), &detect_retx_from_msgs(mine), a.search_ms)?;
            (r, al.offset_ms, al.matched, None, false)
        }
        None => {
            let asn = associate_rnti(&packets, &per_rnti, a.search_ms)?;
            (asn.rnti, asn.alignment.offset_ms, asn.alignment.matched, Some(asn.margin), asn.ambiguous)
        }
    };
    let rows = fuse(&packets, per_rnti.get(&rnti).map_or(&[][..], Vec::as_slice), offset);
    out_dir(&a.out)?;
    io::write_fused(create(&a.out.join("fused.csv"))?, &rows)?;
    let mut w = csv_out(&a.out.join("alignment.csv"))?;
    w.write_record(["rnti", "offset_ms", "matched", "margin", "ambiguous"]).map_err(Error::from)?;
    w.write_record([
        rnti.to_string(),
        offset.to_string(),
        matched.to_string(),
        margin.map(|m| m.to_string()).unwrap_or_default(),
        (ambiguous as u8).to_string(),
    ])
    .map_err(Error::from)?;
    w.flush().map_err(Error::from)?;
    let mut manifest = Manifest::new("fuse", &KvConfig::default(), seed);
    manifest
        .flag("packets", a.packets.display())
        .flag("log", a.log.display())
        .flag("search_ms", a.search_ms);
    manifest.write(&a.out)?;
    println!("rnti {rnti} offset {offset} ms ({matched} retransmissions matched)");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_ranges() {
        assert_eq!(parse_sweep("0:0.5:0.1").unwrap(), vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(parse_sweep("0.2:0.2:0.1").unwrap(), vec![0.2]);
        assert!(parse_sweep("0:1").is_err());
        assert!(parse_sweep("0:1:0").is_err());
        assert!(parse_sweep("1:0:0.1").is_err());
    }

    #[test]
    fn sample_stdev() {
        assert_eq!(mean_stdev(&[3.0]), (3.0, 0.0));
        let (m, s) = mean_stdev(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
