//! Experiment orchestration: per-mode cluster map construction, run
//! execution, and the metrics CSV.

use super::{workload::WorkloadSpec, ShellError};
use crate::engine::{self, RunMetrics, RunOptions};
use crate::events::EventLog;
use crate::heuristic::{compute_allocation, exhaustive_optimal, normalize_trend, sum_raw_trends};
use crate::isocheck::{self, ViolationReport};
use crate::machine::{Cluster, ClusterMap, MachineConfig};
use crate::memsim::HomingMode;
use crate::secmodel::ArchMode;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Sweep grid used when a cluster-mode run must profile trends on demand.
/// Spans the full machine so the exhaustive search stays applicable.
pub const DEFAULT_SWEEP: [u32; 12] = [1, 2, 4, 8, 16, 24, 32, 40, 48, 56, 63, 64];

/// Column set of the metrics CSV, fixed and in order.
pub const METRICS_COLUMNS: [&str; 18] = [
    "workload",
    "mode",
    "seed",
    "homing",
    "completion_s",
    "compute_s",
    "purge_s",
    "entry_exit_s",
    "reconfig_s",
    "interactions",
    "cores_secure",
    "cores_insecure",
    "l1_miss_rate",
    "l2_miss_rate",
    "l1_miss_rates",
    "l2_miss_rates",
    "mpkis",
    "isocheck",
];

/// One metrics CSV row. Per-process fields are packed `pid=value`
/// semicolon-joined so the schema stays one row per run.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricsRow {
    pub workload: String,
    pub mode: String,
    pub seed: u64,
    pub homing: String,
    pub completion_s: f64,
    pub compute_s: f64,
    pub purge_s: f64,
    pub entry_exit_s: f64,
    pub reconfig_s: f64,
    pub interactions: u64,
    pub cores_secure: u32,
    pub cores_insecure: u32,
    pub l1_miss_rate: f64,
    pub l2_miss_rate: f64,
    pub l1_miss_rates: String,
    pub l2_miss_rates: String,
    pub mpkis: String,
    pub isocheck: String,
}

fn packed<F: Fn(&engine::ProcMetrics) -> f64>(metrics: &RunMetrics, f: F) -> String {
    metrics
        .processes
        .iter()
        .map(|p| format!("{}={}", p.pid, f(p)))
        .collect::<Vec<_>>()
        .join(";")
}

impl MetricsRow {
    pub fn new(
        workload: &str,
        mode: ArchMode,
        seed: u64,
        homing: HomingMode,
        metrics: &RunMetrics,
        isocheck: &str,
    ) -> MetricsRow {
        MetricsRow {
            workload: workload.to_string(),
            mode: mode.name().to_string(),
            seed,
            homing: match homing {
                HomingMode::LocalHoming => "local".into(),
                HomingMode::HashedPerLine => "hashed".into(),
            },
            completion_s: metrics.completion_s,
            compute_s: metrics.compute_s,
            purge_s: metrics.purge_s,
            entry_exit_s: metrics.entry_exit_s,
            reconfig_s: metrics.reconfig_s,
            interactions: metrics.interactions,
            cores_secure: metrics.cores_secure,
            cores_insecure: metrics.cores_insecure,
            l1_miss_rate: metrics.aggregate_l1_miss_rate(),
            l2_miss_rate: metrics.aggregate_l2_miss_rate(),
            l1_miss_rates: packed(metrics, |p| p.l1_miss_rate),
            l2_miss_rates: packed(metrics, |p| p.l2_miss_rate),
            mpkis: packed(metrics, |p| p.mpki),
            isocheck: isocheck.to_string(),
        }
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<(), ShellError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ShellError::Csv {
        path: path.display().to_string(),
        source: e,
    })?;
    for row in rows {
        w.serialize(row).map_err(|e| ShellError::Csv {
            path: path.display().to_string(),
            source: e,
        })?;
    }
    w.flush().map_err(|e| ShellError::io(path, e))?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>, ShellError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| ShellError::Csv {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec.map_err(|e| ShellError::Csv {
            path: path.display().to_string(),
            source: e,
        })?);
    }
    Ok(rows)
}

/// One planned run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunEntry {
    pub workload: PathBuf,
    pub mode: ArchMode,
    pub seed: u64,
    #[serde(default = "default_homing")]
    pub homing: HomingMode,
    /// Write the event log next to the metrics.
    #[serde(default)]
    pub log: bool,
    /// Verify the log and embed the verdict in the CSV row.
    #[serde(default)]
    pub check: bool,
    /// Use the exhaustive search instead of the gradient heuristic.
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub label: Option<String>,
}

fn default_homing() -> HomingMode {
    HomingMode::LocalHoming
}

/// A reproducible batch of runs. Seeds are explicit per entry.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentPlan {
    #[serde(default)]
    pub machine_config: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub runs: Vec<RunEntry>,
}

impl ExperimentPlan {
    pub fn load(path: &Path) -> Result<ExperimentPlan, ShellError> {
        let text = std::fs::read_to_string(path).map_err(|e| ShellError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| ShellError::json(path, e))
    }
}

/// Everything one run produced.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub row: MetricsRow,
    pub metrics: RunMetrics,
    pub log: Option<EventLog>,
    pub report: Option<ViolationReport>,
    pub map: ClusterMap,
}

/// Builds the initial cluster map for a mode. The enclave modes and the
/// cluster modes start from the half/half split; the insecure baseline runs
/// one big cluster.
pub fn initial_map(cfg: &MachineConfig, mode: ArchMode) -> ClusterMap {
    match mode {
        ArchMode::InsecureBase => ClusterMap::single_cluster(cfg),
        ArchMode::SgxLike | ArchMode::Mi6 | ArchMode::Ironhide => {
            ClusterMap::contiguous_split(cfg, cfg.usable_cores / 2)
        }
    }
}

/// Normalized trends for the two cluster sides, from supplied trend files
/// or an on-demand profiling sweep. Multiple mutually trusting processes on
/// one side sum their raw trends before normalization.
fn side_trends(
    cfg: &MachineConfig,
    spec: &WorkloadSpec,
    base: &Path,
    seed: u64,
) -> Result<(crate::heuristic::MpkiTrend, crate::heuristic::MpkiTrend), ShellError> {
    let mut raws: [Vec<Vec<(u32, f64)>>; 2] = [Vec::new(), Vec::new()];
    for proc in &spec.app.processes {
        let side = match proc.security {
            Cluster::Secure => 0,
            Cluster::Insecure => 1,
        };
        let raw = match spec.trend_for(&proc.name, base)? {
            Some(raw) => raw,
            None => engine::profile_mpki(cfg, proc, &DEFAULT_SWEEP, seed)?.raw,
        };
        raws[side].push(raw);
    }
    if raws[0].is_empty() || raws[1].is_empty() {
        return Err(ShellError::Validation(
            "cluster allocation needs a trend for each side".into(),
        ));
    }
    let secure = normalize_trend(&sum_raw_trends(&raws[0])?)?;
    let insecure = normalize_trend(&sum_raw_trends(&raws[1])?)?;
    Ok((secure, insecure))
}

/// Executes one workload under one mode: builds the per-mode maps (including
/// the cluster modes' one reconfiguration target), runs the engine, and
/// optionally verifies the log.
pub fn execute_run(
    cfg: &MachineConfig,
    spec: &WorkloadSpec,
    base: &Path,
    mode: ArchMode,
    seed: u64,
    homing: HomingMode,
    use_oracle: bool,
    collect_log: bool,
    check: bool,
) -> Result<RunArtifacts, ShellError> {
    let map = initial_map(cfg, mode);
    let n = cfg.usable_cores as u32;
    let reconfig_target = if mode == ArchMode::Ironhide && homing == HomingMode::LocalHoming {
        if spec.app.secure_count() == 0 {
            Some(ClusterMap::single_cluster(cfg))
        } else {
            let (ts, ti) = side_trends(cfg, spec, base, seed)?;
            let cores_secure = if use_oracle {
                exhaustive_optimal(&ts, &ti, n)?.0
            } else {
                compute_allocation(&ts, &ti, n)?.cores_secure
            };
            // Each cluster keeps at least its two controller host tiles.
            let cores_secure = cores_secure.clamp(2, n - 2) as usize;
            Some(ClusterMap::contiguous_split(cfg, cores_secure))
        }
    } else {
        None
    };
    let opts = RunOptions {
        homing,
        reconfig_target,
        collect_events: collect_log || check,
        workload_name: spec.app.name.clone(),
    };
    let out = engine::run(cfg, &map, &spec.app, mode, seed, &opts)?;
    let report = if check {
        out.log.as_ref().map(isocheck::check)
    } else {
        None
    };
    let verdict = match &report {
        None => String::new(),
        Some(r) if r.clean() => "clean".into(),
        Some(_) => "violated".into(),
    };
    let row = MetricsRow::new(&spec.app.name, mode, seed, homing, &out.metrics, &verdict);
    Ok(RunArtifacts {
        row,
        metrics: out.metrics,
        log: if collect_log { out.log } else { None },
        report,
        map,
    })
}

/// Outcome of a full plan: the combined CSV plus per-run artifacts on disk.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub csv_path: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub log_paths: Vec<Option<PathBuf>>,
    pub reports: Vec<Option<ViolationReport>>,
}

/// Runs every entry of a plan, writing one metrics CSV plus per-run event
/// logs and verification reports into the plan's output directory. All
/// referenced files are validated before the first run starts.
pub fn run_experiment(plan: &ExperimentPlan, base: &Path) -> Result<ExperimentOutcome, ShellError> {
    let cfg = match &plan.machine_config {
        None => MachineConfig::default(),
        Some(rel) => {
            let path = if rel.is_absolute() {
                rel.clone()
            } else {
                base.join(rel)
            };
            let text = std::fs::read_to_string(&path).map_err(|e| ShellError::io(&path, e))?;
            serde_json::from_str(&text).map_err(|e| ShellError::json(&path, e))?
        }
    };
    cfg.validate()
        .map_err(|e| ShellError::Validation(e.to_string()))?;

    // Validate everything up front; a broken entry aborts the whole plan.
    let mut specs = Vec::new();
    for entry in &plan.runs {
        let path = if entry.workload.is_absolute() {
            entry.workload.clone()
        } else {
            base.join(&entry.workload)
        };
        let spec = WorkloadSpec::load(&path)?;
        spec.app
            .validate(&cfg)
            .map_err(ShellError::Validation)?;
        let wl_base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        for proc in &spec.app.processes {
            // Referenced trend files must exist and parse.
            spec.trend_for(&proc.name, &wl_base)?;
        }
        specs.push((spec, wl_base));
    }

    let out_dir = if plan.out_dir.is_absolute() {
        plan.out_dir.clone()
    } else {
        base.join(&plan.out_dir)
    };
    std::fs::create_dir_all(&out_dir).map_err(|e| ShellError::io(&out_dir, e))?;

    let mut rows = Vec::new();
    let mut log_paths = Vec::new();
    let mut reports = Vec::new();
    for (entry, (spec, wl_base)) in plan.runs.iter().zip(&specs) {
        let artifacts = execute_run(
            &cfg,
            spec,
            wl_base,
            entry.mode,
            entry.seed,
            entry.homing,
            entry.oracle,
            entry.log,
            entry.check,
        )?;
        let label = entry.label.clone().unwrap_or_else(|| {
            format!("{}-{}-s{}", spec.app.name, entry.mode.name(), entry.seed)
        });
        let log_path = match &artifacts.log {
            Some(log) => {
                let p = out_dir.join(format!("{label}.events.jsonl"));
                log.write_file(&p)?;
                Some(p)
            }
            None => None,
        };
        if let Some(report) = &artifacts.report {
            let p = out_dir.join(format!("{label}.check.json"));
            let text = serde_json::to_string_pretty(report)
                .map_err(|e| ShellError::json(&p, e))?;
            std::fs::write(&p, text).map_err(|e| ShellError::io(&p, e))?;
        }
        rows.push(artifacts.row);
        log_paths.push(log_path);
        reports.push(artifacts.report);
    }

    let csv_path = out_dir.join("metrics.csv");
    write_metrics_csv(&csv_path, &rows)?;
    Ok(ExperimentOutcome {
        csv_path,
        rows,
        log_paths,
        reports,
    })
}
