//! Process and application descriptions consumed by the simulation loop.

use crate::events::AppId;
use crate::heuristic::MpkiTrend;
use crate::machine::{Cluster, MachineConfig};
use serde::{Deserialize, Serialize};

/// Synthetic access-pattern parameters of one phase.
///
/// The working set is split into three tiers of pages: two shared read-only
/// tiers and one per-core-partitioned tier that takes the writes. Each
/// access picks a tier by weight, then a page, line, and word uniformly
/// within it. Tier capacities against the available cache turn these knobs
/// into the familiar miss-curve shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccessPattern {
    /// Memory operations per 1000 instructions.
    pub mem_per_kilo: u32,
    /// Probability that a partitioned-tier access is a write.
    pub write_fraction: f64,
    /// Pages per tier; tiers 0 and 1 are shared read-only, tier 2 is
    /// partitioned per core and writable.
    pub tier_pages: [u64; 3],
    pub tier_weights: [f64; 3],
    /// Speculative probes into the foreign cluster per 1000 instructions
    /// (issued by insecure processes under the guarded modes).
    pub probe_per_kilo: u32,
}

impl Default for AccessPattern {
    fn default() -> Self {
        AccessPattern {
            mem_per_kilo: 100,
            write_fraction: 0.3,
            tier_pages: [2, 0, 14],
            tier_weights: [0.9, 0.0, 0.1],
            probe_per_kilo: 0,
        }
    }
}

/// One phase of a process's program: an instruction budget, the access
/// pattern it draws from, and its barrier and interaction markers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub instructions: u64,
    #[serde(flatten)]
    pub access: AccessPattern,
    /// Interaction markers carried by this phase (producer side).
    #[serde(default)]
    pub interactions: u64,
    /// Thread barriers at the end of this phase.
    #[serde(default)]
    pub barriers: u32,
}

/// One process of an interactive application.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Process {
    pub name: String,
    pub security: Cluster,
    pub threads: u32,
    /// Barrier penalty coefficient, cycles per active core.
    #[serde(default)]
    pub sync_coeff: f64,
    pub footprint_pages: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attestation_token: Option<String>,
    pub phases: Vec<Phase>,
    /// Pre-supplied MPKI trend (otherwise profiled on demand).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trend: Option<MpkiTrend>,
}

/// An interactive application: one or more processes exchanging
/// `interaction_total` IPC payloads at a characteristic rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractiveApp {
    pub app_id: AppId,
    pub name: String,
    pub processes: Vec<Process>,
    /// Characteristic interactivity, events per second (descriptive).
    pub interaction_rate: f64,
    pub interaction_total: u64,
    pub ipc_payload_bytes: u32,
    /// Signature that secure processes' attestation tokens must match.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_signature: Option<String>,
}

impl InteractiveApp {
    /// The process driving interactions: the first to carry markers.
    pub fn producer_index(&self) -> Option<usize> {
        self.processes
            .iter()
            .position(|p| p.phases.iter().any(|ph| ph.interactions > 0))
            .or_else(|| {
                self.processes
                    .iter()
                    .position(|p| p.security == Cluster::Insecure)
            })
    }

    /// The interaction peer: the first secure process, else any process
    /// other than the producer.
    pub fn consumer_index(&self) -> Option<usize> {
        self.processes
            .iter()
            .position(|p| p.security == Cluster::Secure)
            .or_else(|| {
                let prod = self.producer_index()?;
                (0..self.processes.len()).find(|&i| i != prod)
            })
            .or(self.producer_index())
    }

    pub fn secure_count(&self) -> usize {
        self.processes
            .iter()
            .filter(|p| p.security == Cluster::Secure)
            .count()
    }

    pub fn validate(&self, cfg: &MachineConfig) -> Result<(), String> {
        if self.processes.is_empty() {
            return Err("application needs at least one process".into());
        }
        if !self
            .processes
            .iter()
            .any(|p| p.security == Cluster::Insecure)
        {
            return Err("application needs at least one insecure process".into());
        }
        if self.interaction_rate <= 0.0 {
            return Err("interaction_rate must be positive".into());
        }
        if self.ipc_payload_bytes == 0 || self.ipc_payload_bytes as u64 > cfg.page_bytes {
            return Err(format!(
                "ipc_payload_bytes must be in [1, {}]",
                cfg.page_bytes
            ));
        }
        let mut markers = 0u64;
        for p in &self.processes {
            if p.threads < 1 {
                return Err(format!("process '{}' needs at least one thread", p.name));
            }
            if p.phases.is_empty() {
                return Err(format!("process '{}' has an empty phase program", p.name));
            }
            if p.footprint_pages < 1 {
                return Err(format!("process '{}' needs a non-empty footprint", p.name));
            }
            for (i, ph) in p.phases.iter().enumerate() {
                markers += ph.interactions;
                let tiers: u64 = ph.access.tier_pages.iter().sum();
                if tiers == 0 || tiers > p.footprint_pages {
                    return Err(format!(
                        "process '{}' phase {i}: tier pages must be in [1, footprint]",
                        p.name
                    ));
                }
                if ph.access.tier_weights.iter().any(|&w| w < 0.0)
                    || ph.access.tier_weights.iter().sum::<f64>() <= 0.0
                {
                    return Err(format!(
                        "process '{}' phase {i}: tier weights must be non-negative, not all zero",
                        p.name
                    ));
                }
                if !(0.0..=1.0).contains(&ph.access.write_fraction) {
                    return Err(format!(
                        "process '{}' phase {i}: write_fraction outside [0, 1]",
                        p.name
                    ));
                }
            }
        }
        if markers != self.interaction_total {
            return Err(format!(
                "interaction markers ({markers}) must sum to interaction_total ({})",
                self.interaction_total
            ));
        }
        Ok(())
    }
}
