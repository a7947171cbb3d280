//! Workload files and the two synthetic templates.

use super::{trends, ShellError};
use crate::engine::{AccessPattern, InteractiveApp, Phase, Process};
use crate::events::AppId;
use crate::heuristic::normalize_trend;
use crate::machine::Cluster;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// A workload file: the application plus optional per-process trend CSVs
/// (paths relative to the workload file).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    #[serde(flatten)]
    pub app: InteractiveApp,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub trend_files: BTreeMap<String, PathBuf>,
}

impl WorkloadSpec {
    pub fn load(path: &Path) -> Result<WorkloadSpec, ShellError> {
        let text = std::fs::read_to_string(path).map_err(|e| ShellError::io(path, e))?;
        let spec: WorkloadSpec =
            serde_json::from_str(&text).map_err(|e| ShellError::json(path, e))?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<(), ShellError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| ShellError::json(path, e))?;
        std::fs::write(path, text).map_err(|e| ShellError::io(path, e))
    }

    /// Raw trend samples for `process`, read from the referenced CSV.
    /// Paths resolve relative to `base` (the workload file's directory).
    pub fn trend_for(
        &self,
        process: &str,
        base: &Path,
    ) -> Result<Option<Vec<(u32, f64)>>, ShellError> {
        match self.trend_files.get(process) {
            None => Ok(None),
            Some(rel) => {
                let path = if rel.is_absolute() {
                    rel.clone()
                } else {
                    base.join(rel)
                };
                Ok(Some(trends::read_trend_csv(&path)?))
            }
        }
    }
}

/// The two shipped workload shapes.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Template {
    /// Human-paced interactivity: ~400 events/s over the app's life.
    UserInteractive,
    /// OS-call-paced interactivity: ~220K events/s.
    OsInteractive,
}

impl std::str::FromStr for Template {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "user" | "user-interactive" => Ok(Template::UserInteractive),
            "os" | "os-interactive" => Ok(Template::OsInteractive),
            other => Err(format!("unknown template '{other}'")),
        }
    }
}

/// Template knobs. Footprints are in 4KB pages; tier shares shape the
/// miss-vs-cores curve of each process.
#[derive(Clone, Debug)]
pub struct GenParams {
    pub name: String,
    pub app_id: u32,
    pub interaction_total: Option<u64>,
    pub instructions_per_interaction: u64,
    pub secure_footprint_pages: u64,
    pub insecure_footprint_pages: u64,
    pub secure_hot_pages: u64,
    pub insecure_hot_pages: u64,
    pub hot_weight: f64,
    pub mem_per_kilo: u32,
    pub write_fraction: f64,
    pub secure_sync_coeff: f64,
    pub insecure_sync_coeff: f64,
    pub secure_barriers: u32,
    pub ipc_payload_bytes: Option<u32>,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            name: String::new(),
            app_id: 1,
            interaction_total: None,
            instructions_per_interaction: 200,
            secure_footprint_pages: 2048,
            insecure_footprint_pages: 1536,
            secure_hot_pages: 8,
            insecure_hot_pages: 8,
            hot_weight: 0.6,
            mem_per_kilo: 80,
            write_fraction: 0.3,
            secure_sync_coeff: 8.0,
            insecure_sync_coeff: 2.0,
            secure_barriers: 2,
            ipc_payload_bytes: None,
        }
    }
}

/// Expands a template into a two-process workload: an insecure driver that
/// produces one IPC payload per interaction and a secure worker that
/// consumes them. Working sets and sync coefficients are sized so that the
/// per-process MPKI trends show the non-linear / linear / saturation shape.
pub fn generate_workload(template: Template, params: &GenParams) -> WorkloadSpec {
    let (rate, default_total, default_payload) = match template {
        Template::UserInteractive => (400.0, 13_300, 256),
        Template::OsInteractive => (220_000.0, 88_000, 128),
    };
    let total = params.interaction_total.unwrap_or(default_total);
    let payload = params.ipc_payload_bytes.unwrap_or(default_payload);
    let name = if params.name.is_empty() {
        match template {
            Template::UserInteractive => "user-interactive".to_string(),
            Template::OsInteractive => "os-interactive".to_string(),
        }
    } else {
        params.name.clone()
    };
    let signature = format!("sig-{name}");
    let instr_total = total.max(1) * params.instructions_per_interaction;

    let pattern = |footprint: u64, hot: u64| {
        let hot = hot.min(footprint.saturating_sub(1)).max(1);
        let mid = ((footprint - hot) / 8).min(footprint - hot);
        AccessPattern {
            mem_per_kilo: params.mem_per_kilo,
            write_fraction: params.write_fraction,
            tier_pages: [hot, mid, footprint - hot - mid],
            tier_weights: [params.hot_weight, 0.25, 1.0 - params.hot_weight - 0.25],
            probe_per_kilo: 0,
        }
    };

    let driver = Process {
        name: format!("{name}-driver"),
        security: Cluster::Insecure,
        threads: 64,
        sync_coeff: params.insecure_sync_coeff,
        footprint_pages: params.insecure_footprint_pages,
        attestation_token: None,
        phases: vec![Phase {
            instructions: instr_total,
            access: pattern(params.insecure_footprint_pages, params.insecure_hot_pages),
            interactions: total,
            barriers: 0,
        }],
        trend: None,
    };
    let worker = Process {
        name: format!("{name}-worker"),
        security: Cluster::Secure,
        threads: 64,
        sync_coeff: params.secure_sync_coeff,
        footprint_pages: params.secure_footprint_pages,
        attestation_token: Some(signature.clone()),
        phases: vec![Phase {
            instructions: instr_total,
            access: pattern(params.secure_footprint_pages, params.secure_hot_pages),
            interactions: 0,
            barriers: params.secure_barriers,
        }],
        trend: None,
    };

    WorkloadSpec {
        app: InteractiveApp {
            app_id: AppId(params.app_id),
            name,
            processes: vec![driver, worker],
            interaction_rate: rate,
            interaction_total: total,
            ipc_payload_bytes: payload,
            declared_signature: Some(signature),
        },
        trend_files: BTreeMap::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::default_config;

    #[test]
    fn user_template_defaults() {
        let spec = generate_workload(Template::UserInteractive, &GenParams::default());
        assert_eq!(spec.app.interaction_rate, 400.0);
        assert_eq!(spec.app.interaction_total, 13_300);
        let markers: u64 = spec
            .app
            .processes
            .iter()
            .flat_map(|p| p.phases.iter())
            .map(|ph| ph.interactions)
            .sum();
        assert_eq!(markers, 13_300);
        spec.app.validate(&default_config()).unwrap();
    }

    #[test]
    fn os_template_rate() {
        let spec = generate_workload(Template::OsInteractive, &GenParams::default());
        assert_eq!(spec.app.interaction_rate, 220_000.0);
        spec.app.validate(&default_config()).unwrap();
    }

    #[test]
    fn interaction_total_override() {
        let params = GenParams {
            interaction_total: Some(13_300),
            ..GenParams::default()
        };
        let spec = generate_workload(Template::OsInteractive, &params);
        assert_eq!(spec.app.interaction_total, 13_300);
    }

    #[test]
    fn workload_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        let spec = generate_workload(Template::UserInteractive, &GenParams::default());
        spec.save(&path).unwrap();
        let loaded = WorkloadSpec::load(&path).unwrap();
        assert_eq!(loaded, spec);
    }
}
