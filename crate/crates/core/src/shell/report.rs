//! Cross-mode comparison: geometric means, normalized columns, and the
//! purge-component ratio.

use super::{experiment::MetricsRow, ShellError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Geometric mean computed in log space.
pub fn geometric_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let sum: f64 = values.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).sum();
    (sum / values.len() as f64).exp()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: String,
    pub runs: usize,
    pub geomean_completion_s: f64,
    pub geomean_compute_s: f64,
    /// Completion normalized to the insecure baseline (when present).
    pub vs_insecure: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareReport {
    pub modes: Vec<ModeSummary>,
    /// Per-workload purge-component ratio mi6 / ironhide, where the
    /// ironhide component is its purge plus its one-time reconfiguration.
    pub purge_ratio_rows: Vec<(String, f64)>,
    pub purge_ratio_geomean: Option<f64>,
}

impl CompareReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,runs,geomean_completion_s,geomean_compute_s,vs_insecure\n");
        for m in &self.modes {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                m.mode,
                m.runs,
                m.geomean_completion_s,
                m.geomean_compute_s,
                m.vs_insecure.map(|v| v.to_string()).unwrap_or_default()
            ));
        }
        if let Some(g) = self.purge_ratio_geomean {
            out.push_str(&format!("purge_ratio_mi6_over_ironhide,,{g},,\n"));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12} {:>5} {:>20} {:>18} {:>12}\n",
            "mode", "runs", "geomean completion", "geomean compute", "vs insecure"
        ));
        for m in &self.modes {
            out.push_str(&format!(
                "{:<12} {:>5} {:>19.6}s {:>17.6}s {:>12}\n",
                m.mode,
                m.runs,
                m.geomean_completion_s,
                m.geomean_compute_s,
                m.vs_insecure
                    .map(|v| format!("{v:.3}x"))
                    .unwrap_or_else(|| "-".into()),
            ));
        }
        if !self.purge_ratio_rows.is_empty() {
            out.push_str("\npurge component, mi6 vs ironhide:\n");
            for (w, r) in &self.purge_ratio_rows {
                out.push_str(&format!("  {w:<32} {r:>10.1}x\n"));
            }
            if let Some(g) = self.purge_ratio_geomean {
                out.push_str(&format!("  {:<32} {g:>10.1}x\n", "geomean"));
            }
        }
        out
    }
}

/// Compares metrics rows across modes. Every mode must cover the same
/// (workload, seed) set; a mismatch is refused with a listing of the
/// difference.
pub fn compare_report(rows: &[MetricsRow]) -> Result<CompareReport, ShellError> {
    if rows.is_empty() {
        return Err(ShellError::Validation(
            "no metrics rows to compare".into(),
        ));
    }
    let mut by_mode: BTreeMap<String, Vec<&MetricsRow>> = BTreeMap::new();
    for row in rows {
        by_mode.entry(row.mode.clone()).or_default().push(row);
    }

    let keys_of = |rs: &[&MetricsRow]| -> Vec<(String, u64)> {
        let mut keys: Vec<_> = rs.iter().map(|r| (r.workload.clone(), r.seed)).collect();
        keys.sort();
        keys
    };
    let reference = keys_of(by_mode.values().next().expect("non-empty"));
    for (mode, rs) in &by_mode {
        let keys = keys_of(rs);
        if keys != reference {
            let missing: Vec<_> = reference.iter().filter(|k| !keys.contains(k)).collect();
            let extra: Vec<_> = keys.iter().filter(|k| !reference.contains(k)).collect();
            return Err(ShellError::ModeMismatch(format!(
                "mode {mode}: missing {missing:?}, extra {extra:?}"
            )));
        }
    }

    let insecure_geomean = by_mode.get("insecure").map(|rs| {
        geometric_mean(&rs.iter().map(|r| r.completion_s).collect::<Vec<_>>())
    });
    let modes = by_mode
        .iter()
        .map(|(mode, rs)| {
            let completion: Vec<f64> = rs.iter().map(|r| r.completion_s).collect();
            let compute: Vec<f64> = rs.iter().map(|r| r.compute_s).collect();
            let g = geometric_mean(&completion);
            ModeSummary {
                mode: mode.clone(),
                runs: rs.len(),
                geomean_completion_s: g,
                geomean_compute_s: geometric_mean(&compute),
                vs_insecure: insecure_geomean.map(|base| g / base),
            }
        })
        .collect();

    // Purge-component ratio needs both cluster architectures present.
    let mut purge_ratio_rows = Vec::new();
    if let (Some(mi6), Some(iron)) = (by_mode.get("mi6"), by_mode.get("ironhide")) {
        let iron_by_key: BTreeMap<(String, u64), &MetricsRow> = iron
            .iter()
            .map(|r| ((r.workload.clone(), r.seed), *r))
            .collect();
        for row in mi6 {
            if let Some(ir) = iron_by_key.get(&(row.workload.clone(), row.seed)) {
                let denom = ir.purge_s + ir.reconfig_s;
                if denom > 0.0 && row.purge_s > 0.0 {
                    purge_ratio_rows.push((row.workload.clone(), row.purge_s / denom));
                }
            }
        }
    }
    let purge_ratio_geomean = if purge_ratio_rows.is_empty() {
        None
    } else {
        Some(geometric_mean(
            &purge_ratio_rows.iter().map(|(_, r)| *r).collect::<Vec<_>>(),
        ))
    };

    Ok(CompareReport {
        modes,
        purge_ratio_rows,
        purge_ratio_geomean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(workload: &str, mode: &str, seed: u64, completion: f64, purge: f64, reconfig: f64) -> MetricsRow {
        MetricsRow {
            workload: workload.into(),
            mode: mode.into(),
            seed,
            homing: "local".into(),
            completion_s: completion,
            compute_s: completion - purge - reconfig,
            purge_s: purge,
            entry_exit_s: 0.0,
            reconfig_s: reconfig,
            interactions: 0,
            cores_secure: 32,
            cores_insecure: 32,
            l1_miss_rate: 0.0,
            l2_miss_rate: 0.0,
            l1_miss_rates: String::new(),
            l2_miss_rates: String::new(),
            mpkis: String::new(),
            isocheck: String::new(),
        }
    }

    #[test]
    fn single_pair_ratio_is_direct_quotient() {
        let rows = vec![
            row("w", "mi6", 1, 3.0, 2.527, 0.0),
            row("w", "ironhide", 1, 0.5, 0.0, 0.015),
        ];
        let report = compare_report(&rows).unwrap();
        let ratio = report.purge_ratio_rows[0].1;
        assert!((ratio - 2.527 / 0.015).abs() < 1e-9);
    }

    #[test]
    fn geometric_mean_matches_product_root() {
        let vals = [2.0, 8.0];
        assert!((geometric_mean(&vals) - 4.0).abs() < 1e-12);
        let vals = [1.0, 10.0, 100.0];
        assert!((geometric_mean(&vals) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn mismatched_sets_are_refused() {
        let rows = vec![
            row("a", "mi6", 1, 1.0, 0.1, 0.0),
            row("b", "ironhide", 1, 1.0, 0.0, 0.1),
        ];
        assert!(matches!(
            compare_report(&rows),
            Err(ShellError::ModeMismatch(_))
        ));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(compare_report(&[]).is_err());
    }
}
