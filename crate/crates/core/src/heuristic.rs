//! Gradient-based allocation of cores to the two clusters.
//!
//! A process's shared-cache MPKI as a function of core count falls through
//! three regions: a steep non-linear region, a linear region, and a
//! saturation region. The heuristic detects the region boundaries (points A
//! and B) from slope thresholds, sums the per-cluster saturation points into
//! the desired core budget, and adjusts for the machine's actual core count
//! by splitting any surplus evenly or removing a deficit in proportion to
//! the two linear slopes. An exhaustive search over every split serves as
//! the optimal reference.
//!
//! Slopes are computed on doubly-normalized axes: core counts divided by the
//! machine's total cores, MPKI divided by the trend's maximum. The 0.5 and
//! 0.1 thresholds that bound the linear region are dimensionless in those
//! units.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const POINT_B_SLOPE: f64 = 0.1;
const POINT_A_SLOPE: f64 = 0.5;

/// Normalized MPKI as a function of core count. `mpki_norm` peaks at 1.0
/// unless the trend is degenerate (all-zero raw MPKI).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpkiTrend {
    pub samples: Vec<TrendSample>,
    #[serde(default)]
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendSample {
    pub cores: u32,
    pub mpki_norm: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum TrendError {
    #[error("trend must contain at least one sample")]
    Empty,
    #[error("core counts must be strictly increasing and at least 1")]
    BadCores,
    #[error("normalized MPKI must lie in [0, 1] with maximum 1.0")]
    BadNormalization,
    #[error("raw MPKI values must be non-negative")]
    NegativeMpki,
    #[error("total cores must be at least 2")]
    TooFewCores,
    #[error("trend samples must span [1, {0}] for the exhaustive search")]
    InsufficientSpan(u32),
}

impl MpkiTrend {
    pub fn validate(&self) -> Result<(), TrendError> {
        if self.samples.is_empty() {
            return Err(TrendError::Empty);
        }
        if self.samples[0].cores < 1
            || self.samples.windows(2).any(|w| w[0].cores >= w[1].cores)
        {
            return Err(TrendError::BadCores);
        }
        let max = self
            .samples
            .iter()
            .map(|s| s.mpki_norm)
            .fold(f64::NEG_INFINITY, f64::max);
        if self.degenerate {
            if self.samples.iter().any(|s| s.mpki_norm != 0.0) {
                return Err(TrendError::BadNormalization);
            }
        } else if !(max == 1.0 && self.samples.iter().all(|s| (0.0..=1.0).contains(&s.mpki_norm)))
        {
            return Err(TrendError::BadNormalization);
        }
        Ok(())
    }

    /// Linear interpolation at integer core count `c`, clamped to the
    /// sampled span.
    pub fn at(&self, c: u32) -> f64 {
        let s = &self.samples;
        if c <= s[0].cores {
            return s[0].mpki_norm;
        }
        if c >= s[s.len() - 1].cores {
            return s[s.len() - 1].mpki_norm;
        }
        let i = s.partition_point(|p| p.cores < c);
        let (lo, hi) = (s[i - 1], s[i]);
        if hi.cores == c {
            return hi.mpki_norm;
        }
        let t = (c - lo.cores) as f64 / (hi.cores - lo.cores) as f64;
        lo.mpki_norm + t * (hi.mpki_norm - lo.mpki_norm)
    }

    pub fn min_cores(&self) -> u32 {
        self.samples[0].cores
    }

    pub fn max_cores(&self) -> u32 {
        self.samples[self.samples.len() - 1].cores
    }
}

/// Divides raw MPKI values by their maximum, preserving core counts. An
/// all-zero input is flagged degenerate and left as zeros.
pub fn normalize_trend(raw: &[(u32, f64)]) -> Result<MpkiTrend, TrendError> {
    if raw.is_empty() {
        return Err(TrendError::Empty);
    }
    if raw[0].0 < 1 || raw.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(TrendError::BadCores);
    }
    if raw.iter().any(|&(_, m)| m < 0.0) {
        return Err(TrendError::NegativeMpki);
    }
    let max = raw.iter().map(|&(_, m)| m).fold(0.0f64, f64::max);
    let degenerate = max == 0.0;
    let samples = raw
        .iter()
        .map(|&(cores, m)| TrendSample {
            cores,
            mpki_norm: if degenerate { 0.0 } else { m / max },
        })
        .collect();
    Ok(MpkiTrend {
        samples,
        degenerate,
    })
}

/// Absolute slope of the segment between adjacent samples `i` and `i+1` on
/// doubly-normalized axes.
fn segment_slope(trend: &MpkiTrend, i: usize, n: u32) -> f64 {
    let a = trend.samples[i];
    let b = trend.samples[i + 1];
    let dy = (b.mpki_norm - a.mpki_norm).abs();
    let dx = (b.cores - a.cores) as f64 / n as f64;
    dy / dx
}

/// Saturation point: scanning segments from the largest core count downward,
/// the larger-core endpoint of the first segment steeper than 0.1. Falls
/// back to the smallest sampled core count when every segment is flat.
pub fn find_point_b(trend: &MpkiTrend, n: u32) -> u32 {
    let s = &trend.samples;
    if s.len() == 1 {
        return s[0].cores;
    }
    for i in (0..s.len() - 1).rev() {
        if segment_slope(trend, i, n) > POINT_B_SLOPE {
            return s[i + 1].cores;
        }
    }
    s[0].cores
}

/// Linear-region start: scanning segments from the smallest core count
/// upward, the smaller-core endpoint of the first segment flatter than 0.5.
/// Falls back to the largest sampled core count when every segment is steep.
pub fn find_point_a(trend: &MpkiTrend, n: u32) -> u32 {
    let s = &trend.samples;
    if s.len() == 1 {
        return s[0].cores;
    }
    for i in 0..s.len() - 1 {
        if segment_slope(trend, i, n) < POINT_A_SLOPE {
            return s[i].cores;
        }
    }
    s[s.len() - 1].cores
}

/// Region boundaries of one trend plus its linear-region slope.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionPoints {
    pub point_a: u32,
    pub point_b: u32,
    pub linear_slope: f64,
}

/// Detects points A and B and the slope of the linear region between them.
pub fn region_points(trend: &MpkiTrend, n: u32) -> RegionPoints {
    let b = find_point_b(trend, n);
    let a = find_point_a(trend, n).min(b);
    let linear_slope = if a == b {
        0.0
    } else {
        let dy = (trend.at(a) - trend.at(b)).abs();
        let dx = (b - a) as f64 / n as f64;
        dy / dx
    };
    RegionPoints {
        point_a: a,
        point_b: b,
        linear_slope,
    }
}

/// Which adjustment case the allocation fell into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationBranch {
    /// Desired resources equal the machine: saturation points are used as-is.
    Exact,
    /// Spare cores are split evenly (odd remainder to the insecure side).
    Surplus,
    /// Cores are removed in proportion to the linear-region slopes.
    Deficit,
}

/// The allocation and every intermediate used to derive it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationDecision {
    pub cores_secure: u32,
    pub cores_insecure: u32,
    pub r_desired: u32,
    pub anomaly: u32,
    /// Ratio of the smaller linear slope to the larger (1.0 outside the
    /// deficit branch).
    pub sr: f64,
    pub adjust_factor: u32,
    pub branch: AllocationBranch,
    pub secure_points: RegionPoints,
    pub insecure_points: RegionPoints,
}

/// Computes the cores-per-cluster distribution for one secure and one
/// insecure trend on an `n`-core machine.
///
/// The desired budget is the sum of the saturation points. A surplus is
/// split evenly between the clusters. A deficit is removed from the two
/// sides in proportion to their linear slopes: the steeper (more sensitive)
/// side loses `ceil(anomaly * SR)` cores and the flatter side the remainder,
/// so that the total removed equals the anomaly. Both sides are kept at one
/// core minimum.
pub fn compute_allocation(
    trend_secure: &MpkiTrend,
    trend_insecure: &MpkiTrend,
    n: u32,
) -> Result<AllocationDecision, TrendError> {
    if n < 2 {
        return Err(TrendError::TooFewCores);
    }
    trend_secure.validate()?;
    trend_insecure.validate()?;
    let sp = region_points(trend_secure, n);
    let ip = region_points(trend_insecure, n);
    let r_desired = sp.point_b + ip.point_b;

    let mut decision = AllocationDecision {
        cores_secure: sp.point_b,
        cores_insecure: ip.point_b,
        r_desired,
        anomaly: r_desired.abs_diff(n),
        sr: 1.0,
        adjust_factor: 0,
        branch: AllocationBranch::Exact,
        secure_points: sp,
        insecure_points: ip,
    };

    match r_desired.cmp(&n) {
        std::cmp::Ordering::Equal => {}
        std::cmp::Ordering::Less => {
            decision.branch = AllocationBranch::Surplus;
            let half = decision.anomaly / 2;
            decision.cores_secure = sp.point_b + half;
            // Odd remainder goes to the insecure side.
            decision.cores_insecure = ip.point_b + decision.anomaly - half;
        }
        std::cmp::Ordering::Greater => {
            decision.branch = AllocationBranch::Deficit;
            // Equal slopes resolve with the secure side treated as the
            // steeper one; SR stays within (0, 1].
            let secure_is_larger = sp.linear_slope >= ip.linear_slope;
            let (larger, smaller) = if secure_is_larger {
                (sp.linear_slope, ip.linear_slope)
            } else {
                (ip.linear_slope, sp.linear_slope)
            };
            decision.sr = if larger == 0.0 { 1.0 } else { smaller / larger };
            decision.adjust_factor = (decision.anomaly as f64 * decision.sr).ceil() as u32;
            let from_larger = decision.adjust_factor.min(decision.anomaly);
            let from_smaller = decision.anomaly - from_larger;
            let (sec_cut, ins_cut) = if secure_is_larger {
                (from_larger, from_smaller)
            } else {
                (from_smaller, from_larger)
            };
            decision.cores_secure = sp.point_b.saturating_sub(sec_cut).max(1);
            decision.cores_insecure = n - decision.cores_secure;
            let _ = ins_cut; // implied by conservation
            if decision.cores_insecure < 1 {
                decision.cores_insecure = 1;
                decision.cores_secure = n - 1;
            }
        }
    }
    Ok(decision)
}

/// Exhaustive search: the split of `n` cores minimizing the aggregate
/// normalized MPKI, scanning every secure allocation in `[1, n-1]`. Ties
/// break toward the larger secure allocation. Trends must span `[1, n-1]`.
pub fn exhaustive_optimal(
    trend_secure: &MpkiTrend,
    trend_insecure: &MpkiTrend,
    n: u32,
) -> Result<(u32, u32), TrendError> {
    if n < 2 {
        return Err(TrendError::TooFewCores);
    }
    trend_secure.validate()?;
    trend_insecure.validate()?;
    for t in [trend_secure, trend_insecure] {
        if t.min_cores() > 1 || t.max_cores() < n - 1 {
            return Err(TrendError::InsufficientSpan(n - 1));
        }
    }
    let mut best = (1u32, f64::INFINITY);
    for c in 1..n {
        let aggregate = trend_secure.at(c) + trend_insecure.at(n - c);
        if aggregate <= best.1 {
            best = (c, aggregate);
        }
    }
    Ok((best.0, n - best.0))
}

/// Aggregate normalized MPKI of a split, the quantity the oracle minimizes.
pub fn aggregate_mpki(
    trend_secure: &MpkiTrend,
    trend_insecure: &MpkiTrend,
    cores_secure: u32,
    cores_insecure: u32,
) -> f64 {
    trend_secure.at(cores_secure) + trend_insecure.at(cores_insecure)
}

/// Sums raw MPKI trends pointwise (used when a cluster hosts several
/// mutually trusting processes); inputs must share their core-count grid.
pub fn sum_raw_trends(trends: &[Vec<(u32, f64)>]) -> Result<Vec<(u32, f64)>, TrendError> {
    let first = trends.first().ok_or(TrendError::Empty)?;
    let mut out = first.clone();
    for t in &trends[1..] {
        if t.len() != out.len() || t.iter().zip(&out).any(|(a, b)| a.0 != b.0) {
            return Err(TrendError::BadCores);
        }
        for (acc, s) in out.iter_mut().zip(t) {
            acc.1 += s.1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trend(points: &[(u32, f64)]) -> MpkiTrend {
        MpkiTrend {
            samples: points
                .iter()
                .map(|&(cores, mpki_norm)| TrendSample { cores, mpki_norm })
                .collect(),
            degenerate: false,
        }
    }

    fn example_trend() -> MpkiTrend {
        trend(&[
            (8, 1.0),
            (16, 0.6),
            (24, 0.35),
            (32, 0.2),
            (40, 0.12),
            (48, 0.10),
            (56, 0.095),
            (64, 0.094),
        ])
    }

    #[test]
    fn point_b_on_the_worked_trend() {
        assert_eq!(find_point_b(&example_trend(), 64), 48);
    }

    #[test]
    fn point_b_flat_trend_falls_back_to_smallest() {
        let t = trend(&[(8, 1.0), (16, 1.0), (24, 1.0)]);
        assert_eq!(find_point_b(&t, 64), 8);
    }

    #[test]
    fn point_b_single_sample() {
        let t = trend(&[(32, 1.0)]);
        assert_eq!(find_point_b(&t, 64), 32);
    }

    #[test]
    fn point_a_on_the_worked_trend() {
        assert_eq!(find_point_a(&example_trend(), 64), 40);
    }

    #[test]
    fn point_a_immediately_flat() {
        let t = trend(&[(8, 1.0), (16, 0.98), (24, 0.97), (64, 0.95)]);
        assert_eq!(find_point_a(&t, 64), 8);
    }

    #[test]
    fn point_a_all_steep_falls_back_to_largest() {
        let t = trend(&[(8, 1.0), (16, 0.5), (24, 0.1)]);
        // Segment slopes are 4.0 and 3.2, never below 0.5.
        assert_eq!(find_point_a(&t, 64), 24);
    }

    /// Synthetic three-region trend sampled at every integer core count:
    /// steep until A, linear with `slope` (doubly normalized, must lie in
    /// (0.1, 0.5)) until B, flat beyond. Saturation floor 1/16 keeps the
    /// arithmetic dyadic so slope ratios come out exact.
    fn three_region(a: u32, b: u32, slope: f64, n: u32) -> MpkiTrend {
        let y_b = 0.0625;
        let y_a = y_b + slope * (b - a) as f64 / n as f64;
        let raw: Vec<(u32, f64)> = (1..=n)
            .map(|c| {
                let y = if c <= a {
                    y_a + (1.0 - y_a) * (a - c) as f64 / (a - 1).max(1) as f64
                } else if c <= b {
                    y_b + slope * (b - c) as f64 / n as f64
                } else {
                    y_b
                };
                (c, y)
            })
            .collect();
        normalize_trend(&raw).unwrap()
    }

    #[test]
    fn allocation_exact_branch() {
        let s = three_region(20, 30, 0.3, 64);
        let i = three_region(24, 34, 0.3, 64);
        assert_eq!(find_point_b(&s, 64), 30);
        assert_eq!(find_point_b(&i, 64), 34);
        let d = compute_allocation(&s, &i, 64).unwrap();
        assert_eq!(d.branch, AllocationBranch::Exact);
        assert_eq!((d.cores_secure, d.cores_insecure), (30, 34));
        assert_eq!(d.anomaly, 0);
    }

    #[test]
    fn allocation_surplus_branch_splits_evenly() {
        let s = three_region(12, 20, 0.3, 64);
        let i = three_region(20, 30, 0.3, 64);
        assert_eq!(find_point_b(&s, 64), 20);
        assert_eq!(find_point_b(&i, 64), 30);
        let d = compute_allocation(&s, &i, 64).unwrap();
        assert_eq!(d.branch, AllocationBranch::Surplus);
        assert_eq!(d.anomaly, 14);
        assert_eq!((d.cores_secure, d.cores_insecure), (27, 37));
    }

    #[test]
    fn allocation_deficit_branch_worked_example() {
        // Slope ratio 0.25 with both slopes inside the linear band.
        let s = three_region(24, 40, 0.4375, 64);
        let i = three_region(20, 36, 0.109375, 64);
        assert_eq!(find_point_b(&s, 64), 40);
        assert_eq!(find_point_b(&i, 64), 36);
        let d = compute_allocation(&s, &i, 64).unwrap();
        assert_eq!(d.branch, AllocationBranch::Deficit);
        assert_eq!(d.r_desired, 76);
        assert_eq!(d.anomaly, 12);
        assert_eq!(d.sr, 0.25);
        assert_eq!(d.adjust_factor, 3);
        assert_eq!((d.cores_secure, d.cores_insecure), (37, 27));
    }

    #[test]
    fn allocation_conserves_cores() {
        for (a1, b1, m1, a2, b2, m2) in [
            (10u32, 20u32, 0.2f64, 15u32, 25u32, 0.4f64),
            (20, 40, 0.45, 25, 45, 0.3),
            (8, 30, 0.25, 30, 50, 0.25),
        ] {
            let s = three_region(a1, b1, m1, 64);
            let i = three_region(a2, b2, m2, 64);
            let d = compute_allocation(&s, &i, 64).unwrap();
            assert_eq!(d.cores_secure + d.cores_insecure, 64);
            assert!(d.cores_secure >= 1 && d.cores_insecure >= 1);
        }
    }

    #[test]
    fn equal_slopes_remove_everything_from_secure() {
        let s = three_region(20, 40, 0.3, 64);
        let i = three_region(20, 40, 0.3, 64);
        let d = compute_allocation(&s, &i, 64).unwrap();
        assert_eq!(d.branch, AllocationBranch::Deficit);
        assert_eq!(d.sr, 1.0);
        assert_eq!(d.adjust_factor, d.anomaly);
        assert_eq!(d.cores_secure, 40 - d.anomaly);
    }

    #[test]
    fn n_below_two_is_invalid() {
        let t = trend(&[(1, 1.0)]);
        assert_eq!(
            compute_allocation(&t, &t, 1).unwrap_err(),
            TrendError::TooFewCores
        );
    }

    #[test]
    fn oracle_gives_everything_to_the_scaling_side() {
        let flat = trend(&[(1, 1.0), (64, 1.0)]);
        let falling = trend(&[(1, 1.0), (64, 0.0)]);
        let (s, i) = exhaustive_optimal(&falling, &flat, 64).unwrap();
        assert_eq!((s, i), (63, 1));
    }

    #[test]
    fn oracle_tie_breaks_toward_secure() {
        let sym = three_region(10, 20, 0.3, 64);
        let (s, i) = exhaustive_optimal(&sym, &sym, 64).unwrap();
        // Every split leaving both sides saturated (20..=44 secure) ties;
        // the largest secure share among the minimizers wins.
        assert_eq!(s + i, 64);
        assert_eq!(s, 44);
    }

    #[test]
    fn oracle_matches_independent_rescan() {
        // Straightforward second implementation used as the test oracle.
        fn rescan(s: &MpkiTrend, i: &MpkiTrend, n: u32) -> (u32, u32) {
            let mut best_c = 1;
            let mut best = f64::INFINITY;
            for c in 1..n {
                let v = s.at(c) + i.at(n - c);
                if v < best || (v == best && c > best_c) {
                    best = v;
                    best_c = c;
                }
            }
            (best_c, n - best_c)
        }
        for seed in 0..20u32 {
            let a1 = 4 + (seed * 7) % 20;
            let b1 = a1 + 8 + (seed * 3) % 16;
            let a2 = 6 + (seed * 5) % 18;
            let b2 = a2 + 6 + (seed * 11) % 20;
            let s = three_region(a1, b1, 0.15 + seed as f64 * 0.015, 64);
            let i = three_region(a2, b2, 0.45 - seed as f64 * 0.01, 64);
            assert_eq!(
                exhaustive_optimal(&s, &i, 64).unwrap(),
                rescan(&s, &i, 64),
                "seed {seed}"
            );
        }
    }

    #[test]
    fn normalize_divides_by_maximum() {
        let t = normalize_trend(&[(8, 50.0), (16, 25.0)]).unwrap();
        assert_eq!(t.samples[0].mpki_norm, 1.0);
        assert_eq!(t.samples[1].mpki_norm, 0.5);
        assert!(!t.degenerate);
    }

    #[test]
    fn normalize_single_point() {
        let t = normalize_trend(&[(32, 7.0)]).unwrap();
        assert_eq!(t.samples[0].mpki_norm, 1.0);
    }

    #[test]
    fn normalize_all_zero_is_degenerate() {
        let t = normalize_trend(&[(8, 0.0), (16, 0.0)]).unwrap();
        assert!(t.degenerate);
        assert!(t.samples.iter().all(|s| s.mpki_norm == 0.0));
        assert_eq!(find_point_b(&t, 64), 8);
    }
}
