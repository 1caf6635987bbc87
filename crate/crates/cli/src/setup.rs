//! Config files, seeds, cell lookup and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use ngkit_core::io::KvConfig;
use ngkit_core::phy::DciFormat;
use ngkit_core::sim::{Bandwidth, CellConfig, McsProcess, SimConfig, TrafficModel, UeProfile};
use ngkit_core::Error;

use crate::fail::{CliError, CliResult};

pub const SEED_ENV: &str = "NGKIT_SEED";
pub const DEFAULT_SEED: u64 = 1;

pub fn load_config(path: Option<&Path>) -> CliResult<KvConfig> {
    match path {
        None => Ok(KvConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            Ok(KvConfig::parse(&text)?)
        }
    }
}

/// Config seed, overridden by the environment.
pub fn resolve_seed(cfg: &KvConfig) -> CliResult<u64> {
    if let Ok(v) = std::env::var(SEED_ENV) {
        return v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer")));
    }
    Ok(cfg.get_or("seed", DEFAULT_SEED)?)
}

/// Decimal or `0x`-prefixed hex.
pub fn parse_rnti(s: &str) -> Result<u16, String> {
    let s = s.trim();
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(h) => u16::from_str_radix(h, 16),
        None => s.parse(),
    };
    parsed.map_err(|_| format!("`{s}` is not an RNTI"))
}

fn sorted_ids<T: std::str::FromStr + Ord>(cfg: &KvConfig, prefix: &str, parse: impl Fn(&str) -> Option<T>) -> CliResult<Vec<(String, T)>> {
    let mut ids = Vec::new();
    for name in cfg.children(prefix) {
        let id = parse(&name).ok_or_else(|| CliError::Usage(format!("bad id `{prefix}.{name}`")))?;
        ids.push((name, id));
    }
    ids.sort_by(|a, b| a.1.cmp(&b.1));
    Ok(ids)
}

pub fn cell_from_config(cfg: &KvConfig, name: &str, id: u32) -> CliResult<CellConfig> {
    let key = |k: &str| format!("cell.{name}.{k}");
    let mut cell = match cfg.get::<u32>(&key("bandwidth_mhz"))? {
        Some(mhz) => CellConfig::new(id, Bandwidth::from_mhz(mhz)?),
        None => CellConfig::custom(id, cfg.require(&key("n_prb"))?, cfg.require(&key("usable_cces"))?),
    };
    if cfg.get_or(&key("secondary_only"), false)? {
        cell = cell.secondary_only();
    }
    cell.validate()?;
    Ok(cell)
}

pub fn cells_from_config(cfg: &KvConfig) -> CliResult<Vec<CellConfig>> {
    sorted_ids(cfg, "cell", |s| s.parse::<u32>().ok())?
        .into_iter()
        .map(|(name, id)| cell_from_config(cfg, &name, id))
        .collect()
}

fn traffic(cfg: &KvConfig, key: &dyn Fn(&str) -> String) -> CliResult<TrafficModel> {
    let kind: String = cfg.get_or(&key("traffic"), "full".to_string())?;
    Ok(match kind.as_str() {
        "full" => TrafficModel::FullBuffer,
        "cbr" => TrafficModel::ConstantRate {
            bps: cfg.require(&key("rate_bps"))?,
        },
        "bursty" => TrafficModel::Bursty {
            bps: cfg.require(&key("rate_bps"))?,
            mean_on_ms: cfg.get_or(&key("on_ms"), 500.0)?,
            mean_off_ms: cfg.get_or(&key("off_ms"), 500.0)?,
        },
        "web" => TrafficModel::WebLike {
            flows_per_s: cfg.get_or(&key("flows_per_s"), 1.0)?,
            mean_flow_bytes: cfg.get_or(&key("flow_bytes"), 100_000.0)?,
        },
        other => return Err(CliError::Usage(format!("{}: unknown traffic `{other}`", key("traffic")))),
    })
}

/// Simulation settings from a config file.
///
/// ```text
/// seed = 1
/// duration_ms = 1000
/// snr_db = 10
/// [cell.1]
/// bandwidth_mhz = 20
/// [ue.0x100]
/// cells = 1
/// traffic = cbr
/// rate_bps = 2e6
/// ```
pub fn sim_config(cfg: &KvConfig, seed: u64) -> CliResult<SimConfig> {
    let cells = cells_from_config(cfg)?;
    if cells.is_empty() {
        return Err(CliError::Usage("missing required key `cell.<id>.bandwidth_mhz`".into()));
    }
    let mut ues = Vec::new();
    for (name, rnti) in sorted_ids(cfg, "ue", |s| parse_rnti(s).ok())? {
        let key = |k: &str| format!("ue.{name}.{k}");
        let serving: Vec<u32> = match cfg.raw(&key("cells")) {
            Some(list) => list
                .split(',')
                .map(|c| c.trim().parse().map_err(|_| CliError::Usage(format!("{}: bad cell list", key("cells")))))
                .collect::<CliResult<_>>()?,
            None => vec![cells[0].cell_id],
        };
        let mut ue = UeProfile::new(rnti, traffic(cfg, &key)?, serving);
        let defaults = McsProcess::default();
        let initial = cfg.get_or(&key("mcs"), defaults.initial)?;
        ue.mcs = McsProcess {
            initial,
            min: cfg.get_or(&key("mcs_min"), defaults.min.min(initial))?,
            max: cfg.get_or(&key("mcs_max"), defaults.max.max(initial))?,
            step_prob: cfg.get_or(&key("mcs_step_prob"), defaults.step_prob)?,
        };
        ue.streams = cfg.get_or(&key("streams"), 1)?;
        ue.format = cfg.get_or(&key("format"), DciFormat::A)?;
        ues.push(ue);
    }
    if ues.is_empty() {
        return Err(CliError::Usage("missing required key `ue.<rnti>.traffic`".into()));
    }
    let mut sim = SimConfig::new(cells, ues);
    sim.duration_ms = cfg.require("duration_ms")?;
    sim.snr_db = cfg.get_or("snr_db", sim.snr_db)?;
    sim.ber = cfg.get_or("ber", sim.ber)?;
    sim.max_messages_per_subframe = cfg.get_or("max_messages", sim.max_messages_per_subframe)?;
    sim.seed = seed;
    sim.validate()?;
    Ok(sim)
}

/// Cell `id` from the config if it is described there, else from an
/// explicit bandwidth, else from the control-region size of an LLR file.
pub fn resolve_cell(cfg: &KvConfig, id: u32, bandwidth_mhz: Option<u32>, n_cce: Option<u32>) -> CliResult<CellConfig> {
    if cfg.children("cell").iter().any(|c| c.parse::<u32>().ok() == Some(id)) {
        let name = cfg.children("cell").into_iter().find(|c| c.parse::<u32>().ok() == Some(id)).unwrap();
        return cell_from_config(cfg, &name, id);
    }
    if let Some(mhz) = bandwidth_mhz {
        return Ok(CellConfig::new(id, Bandwidth::from_mhz(mhz)?));
    }
    if let Some(n) = n_cce {
        for bw in [Bandwidth::Mhz5, Bandwidth::Mhz10, Bandwidth::Mhz20] {
            let c = CellConfig::new(id, bw);
            if c.n_cce() as u32 == n {
                return Ok(c);
            }
        }
        return Err(CliError::Data(format!(
            "cell {id}: {n} CCEs match no standard bandwidth; describe the cell in --config"
        )));
    }
    Err(CliError::Usage(format!("cell {id}: pass --bandwidth or describe it in --config")))
}

/// Records what produced the files in `dir`.
pub struct Manifest {
    pub command: &'static str,
    pub effective: KvConfig,
    pub seed: u64,
}

impl Manifest {
    pub fn new(command: &'static str, base: &KvConfig, seed: u64) -> Self {
        Self {
            command,
            effective: base.clone(),
            seed,
        }
    }

    /// Record a flag value so it enters the config hash.
    pub fn flag(&mut self, name: &str, value: impl ToString) -> &mut Self {
        self.effective.set(&format!("flag.{name}"), value);
        self
    }

    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let mut hasher = Sha256::new();
        hasher.update(self.effective.canonical().as_bytes());
        let hash = hasher.finalize();
        let text = format!(
            "command={}\nconfig_sha256={:x}\nseed={}\nngkit_version={}\ncore_version={}\n",
            self.command,
            hash,
            self.seed,
            env!("CARGO_PKG_VERSION"),
            ngkit_core::VERSION,
        );
        let path = dir.join("manifest.txt");
        fs::write(&path, text).map_err(Error::from)?;
        Ok(path)
    }
}

pub fn out_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn create(path: &Path) -> CliResult<std::io::BufWriter<fs::File>> {
    let f = fs::File::create(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(std::io::BufWriter::new(f))
}

pub fn open(path: &Path) -> CliResult<std::io::BufReader<fs::File>> {
    let f = fs::File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rnti_forms() {
        assert_eq!(parse_rnti("256"), Ok(256));
        assert_eq!(parse_rnti("0x100"), Ok(256));
        assert!(parse_rnti("0xzz").is_err());
    }

    #[test]
    fn minimal_sim_config() {
        let cfg = KvConfig::parse("duration_ms = 50\n[cell.1]\nbandwidth_mhz = 5\n[ue.0x100]\ntraffic = cbr\nrate_bps = 1e6\n").unwrap();
        let sim = sim_config(&cfg, 3).unwrap();
        assert_eq!(sim.cells.len(), 1);
        assert_eq!(sim.ues[0].rnti, 0x100);
        assert_eq!(sim.ues[0].ca_cells, vec![1]);
        assert_eq!(sim.seed, 3);
    }

    #[test]
    fn missing_duration_is_a_usage_error() {
        let cfg = KvConfig::parse("[cell.1]\nbandwidth_mhz = 5\n[ue.256]\ntraffic = full\n").unwrap();
        assert!(matches!(sim_config(&cfg, 1), Err(CliError::Usage(_))));
    }

    #[test]
    fn cells_are_inferred_from_llr_size() {
        let cfg = KvConfig::default();
        assert_eq!(resolve_cell(&cfg, 4, None, Some(88)).unwrap().n_prb, 100);
        assert!(matches!(resolve_cell(&cfg, 4, None, Some(40)), Err(CliError::Data(_))));
        assert_eq!(resolve_cell(&cfg, 4, Some(10), Some(88)).unwrap().n_prb, 50);
    }
}
