//! Post-processing of simulated batches: terminal convergence, histograms of
//! the limiting lift, coupled agreement between two models, and drift
//! profiles.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::{DriftModel, DriftVariant};
use crate::engine::{check_coupling, simulate_coupled_pair, BatchResult, PathSample, SimConfig};
use crate::error::{Error, Result};
use crate::geometry::{nearest_offset, project, torus_distance, EuclideanPoint, LatticeOffset, LatticeTarget};

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub n: usize,
    pub median: f64,
    pub q90: f64,
    pub q99: f64,
}

/// Torus distance from each terminal state to the target.
pub fn terminal_distances(batch: &BatchResult, target: &LatticeTarget) -> Result<Vec<f64>> {
    batch
        .terminal_points
        .iter()
        .map(|x| Ok(torus_distance(&project(*x)?, &target.a)))
        .collect()
}

/// Quantiles (50%, 90%, 99%) of the terminal torus distance to `target`.
pub fn terminal_convergence(batch: &BatchResult, target: &LatticeTarget) -> Result<ConvergenceSummary> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut d = terminal_distances(batch, target)?;
    d.sort_by(f64::total_cmp);
    Ok(ConvergenceSummary {
        n: d.len(),
        median: quantile_sorted(&d, 0.5),
        q90: quantile_sorted(&d, 0.9),
        q99: quantile_sorted(&d, 0.99),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EndpointHistogram {
    pub counts: BTreeMap<LatticeOffset, usize>,
    pub n_total: usize,
    pub n_unresolved: usize,
}

impl EndpointHistogram {
    pub fn from_offsets<'a>(offsets: impl IntoIterator<Item = &'a Option<LatticeOffset>>) -> Self {
        let mut h = EndpointHistogram::default();
        for k in offsets {
            h.record(*k);
        }
        h
    }

    fn record(&mut self, k: Option<LatticeOffset>) {
        self.n_total += 1;
        match k {
            Some(k) => *self.counts.entry(k).or_insert(0) += 1,
            None => self.n_unresolved += 1,
        }
    }

    /// Combines two histograms; associative and commutative.
    pub fn merge(mut self, other: &EndpointHistogram) -> Self {
        for (k, c) in &other.counts {
            *self.counts.entry(*k).or_insert(0) += c;
        }
        self.n_total += other.n_total;
        self.n_unresolved += other.n_unresolved;
        self
    }

    pub fn count(&self, k: LatticeOffset) -> usize {
        self.counts.get(&k).copied().unwrap_or(0)
    }

    pub fn fraction(&self, k: LatticeOffset) -> f64 {
        if self.n_total == 0 {
            0.0
        } else {
            self.count(k) as f64 / self.n_total as f64
        }
    }

    /// Largest `|n_k - n_{-k}| / sqrt(n_k + n_{-k})` over bins with `k ≠ 0`.
    ///
    /// Under `k → -k` symmetry the difference of the two counts has variance
    /// close to their sum, so this is a z-score.
    pub fn max_antipodal_z(&self) -> f64 {
        self.counts
            .keys()
            .filter(|k| **k != (0, 0))
            .map(|&(k1, k2)| {
                let a = self.count((k1, k2)) as f64;
                let b = self.count((-k1, -k2)) as f64;
                (a - b).abs() / (a + b).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

pub fn lattice_endpoint_histogram(batch: &BatchResult) -> EndpointHistogram {
    EndpointHistogram::from_offsets(&batch.limiting_lattice_points)
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub pair_id: usize,
    pub k_a: Option<LatticeOffset>,
    pub k_b: Option<LatticeOffset>,
    pub agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n_pairs: usize,
    pub n_agree: usize,
    pub rate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub config_digest: String,
}

impl AgreementReport {
    pub fn from_outcomes(outcomes: &[PairOutcome], config_digest: String) -> Self {
        let n_pairs = outcomes.len();
        let n_agree = outcomes.iter().filter(|o| o.agree).count();
        let (wilson_low, wilson_high) = wilson_interval(n_agree, n_pairs, 1.96);
        Self {
            n_pairs,
            n_agree,
            rate: if n_pairs == 0 { 0.0 } else { n_agree as f64 / n_pairs as f64 },
            wilson_low,
            wilson_high,
            config_digest,
        }
    }
}

fn model_digest(model: &DriftModel) -> String {
    match model.variant {
        DriftVariant::TrueBridge { truncation, .. } => format!("true-bridge(K={truncation})"),
        v => v.name().to_string(),
    }
}

pub fn config_digest(a: &SimConfig, b: &SimConfig) -> String {
    format!(
        "sigma={} T={} dt={} steps={} seed={} a={} b={}",
        a.model.sigma,
        a.model.horizon,
        a.dt(),
        a.n_steps,
        a.seed,
        model_digest(&a.model),
        model_digest(&b.model)
    )
}

/// Limiting lifts of `n_pairs` coupled paths. Two paths agree when both end
/// off the cut locus at the same lift.
pub fn coupled_outcomes(
    config_a: &SimConfig,
    config_b: &SimConfig,
    n_pairs: usize,
) -> Result<Vec<PairOutcome>> {
    if n_pairs == 0 {
        return Err(Error::Config("n_pairs must be >= 1".into()));
    }
    check_coupling(config_a, config_b)?;
    let mut a = config_a.clone();
    let mut b = config_b.clone();
    a.n_paths = n_pairs;
    b.n_paths = n_pairs;
    let target_a = a.diagnostic_target()?;
    let target_b = b.diagnostic_target()?;
    (0..n_pairs)
        .into_par_iter()
        .map(|i| {
            let (pa, pb) = simulate_coupled_pair(&a, &b, i)?;
            let k_a = nearest_offset(pa.terminal(), &target_a)?;
            let k_b = nearest_offset(pb.terminal(), &target_b)?;
            Ok(PairOutcome {
                pair_id: i,
                k_a,
                k_b,
                agree: k_a.is_some() && k_a == k_b,
            })
        })
        .collect()
}

pub fn agreement_rate(config_a: &SimConfig, config_b: &SimConfig, n_pairs: usize) -> Result<AgreementReport> {
    let outcomes = coupled_outcomes(config_a, config_b, n_pairs)?;
    Ok(AgreementReport::from_outcomes(
        &outcomes,
        config_digest(config_a, config_b),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSample {
    pub t: f64,
    pub drift: EuclideanPoint,
    pub magnitude: f64,
}

/// Model drift at every stored state with `t < T`.
pub fn drift_profile(path: &PathSample, model: &DriftModel) -> Result<Vec<DriftSample>> {
    let horizon = model.horizon;
    if path
        .times
        .iter()
        .any(|&t| !(t >= 0.0 && t <= horizon * (1.0 + 1e-12)))
    {
        return Err(Error::Config(format!(
            "path times fall outside the model horizon [0, {horizon}]"
        )));
    }
    path.times
        .iter()
        .zip(&path.states)
        .filter(|(t, _)| **t < horizon)
        .map(|(&t, &x)| {
            let drift = model.drift(t, x)?;
            Ok(DriftSample {
                t,
                drift,
                magnitude: drift.norm(),
            })
        })
        .collect()
}

/// Plane rectangle `[x1_lo, x1_hi] × [x2_lo, x2_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lo: EuclideanPoint,
    pub hi: EuclideanPoint,
}

impl Default for Rect {
    fn default() -> Self {
        Rect {
            lo: EuclideanPoint::new(-1.0, -1.0),
            hi: EuclideanPoint::new(1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub x: EuclideanPoint,
    pub drift: EuclideanPoint,
}

fn grid_coord(lo: f64, hi: f64, i: usize, m: usize) -> f64 {
    lo + (hi - lo) * (i as f64 / (m - 1) as f64)
}

/// Drift vector field at fixed `t` on an `m × m` grid over `rect`, row-major
/// with `x2` varying fastest.
pub fn drift_field(model: &DriftModel, t: f64, rect: Rect, m: usize) -> Result<Vec<FieldSample>> {
    if m < 2 {
        return Err(Error::InvalidInput("grid size must be >= 2".into()));
    }
    rect.lo.checked()?;
    rect.hi.checked()?;
    if !(rect.lo.x1 < rect.hi.x1 && rect.lo.x2 < rect.hi.x2) {
        return Err(Error::InvalidInput("rectangle must have lo < hi".into()));
    }
    model.remaining_time(t)?;
    let mut out = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            let x = EuclideanPoint::new(
                grid_coord(rect.lo.x1, rect.hi.x1, i, m),
                grid_coord(rect.lo.x2, rect.hi.x2, j, m),
            );
            out.push(FieldSample {
                x,
                drift: model.drift(t, x)?,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::simulate_batch;
    use crate::geometry::{is_on_cut_locus, lift_nearest};

    fn pt(x1: f64, x2: f64) -> EuclideanPoint {
        EuclideanPoint::new(x1, x2)
    }

    #[test]
    fn quantiles() {
        let v: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        assert_eq!(quantile_sorted(&v, 0.5), 50.0);
        assert_eq!(quantile_sorted(&v, 0.99), 99.0);
        assert_eq!(quantile_sorted(&[3.0], 0.9), 3.0);
        assert_eq!(quantile_sorted(&[0.0, 1.0], 0.25), 0.25);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let batch = BatchResult {
            target: LatticeTarget::default(),
            paths: vec![],
            terminal_points: vec![],
            limiting_lattice_points: vec![],
            log_weights: None,
        };
        assert_eq!(
            terminal_convergence(&batch, &LatticeTarget::default()),
            Err(Error::EmptyBatch)
        );
    }

    #[test]
    fn euclidean_bridge_convergence_is_plane_distance() {
        let b = pt(0.0, 0.0);
        let model = DriftModel::euclidean_bridge(b, 1.0, 1.0).unwrap();
        let cfg = SimConfig::new(model, pt(0.2, -0.3), 500, 300, 4);
        let batch = simulate_batch(&cfg).unwrap();
        let summary = terminal_convergence(&batch, &LatticeTarget::default()).unwrap();
        let mut plane: Vec<f64> = batch.terminal_points.iter().map(|x| (*x - b).norm()).collect();
        plane.sort_by(f64::total_cmp);
        assert!((summary.median - quantile_sorted(&plane, 0.5)).abs() < 1e-15);
        assert!((summary.q99 - quantile_sorted(&plane, 0.99)).abs() < 1e-15);
    }

    #[test]
    fn histogram_counts_and_merge() {
        let offsets = vec![Some((0, 0)), Some((1, 0)), None, Some((0, 0)), Some((-1, 0))];
        let h = EndpointHistogram::from_offsets(&offsets);
        assert_eq!(h.n_total, 5);
        assert_eq!(h.n_unresolved, 1);
        assert_eq!(h.count((0, 0)), 2);
        assert_eq!(h.counts.values().sum::<usize>() + h.n_unresolved, h.n_total);
        assert_eq!(h.max_antipodal_z(), 0.0);

        let left = EndpointHistogram::from_offsets(&offsets[..2]);
        let right = EndpointHistogram::from_offsets(&offsets[2..]);
        assert_eq!(left.clone().merge(&right), h);
        assert_eq!(right.merge(&left), h);
    }

    #[test]
    fn euclidean_bridge_histogram_single_bin() {
        let model = DriftModel::euclidean_bridge(pt(1.2, -0.1), 1.0, 1.0).unwrap();
        let cfg = SimConfig::new(model, pt(0.0, 0.0), 500, 200, 8);
        let h = lattice_endpoint_histogram(&simulate_batch(&cfg).unwrap());
        // target is the projection (0.2, -0.1); the endpoint is its (1, 0) lift
        assert_eq!(h.counts.len(), 1);
        assert_eq!(h.count((1, 0)), 200);
    }

    #[test]
    fn wilson_interval_contains_rate() {
        let (lo, hi) = wilson_interval(80, 100, 1.96);
        assert!(lo < 0.8 && 0.8 < hi);
        assert!((lo - 0.7111).abs() < 1e-3 && (hi - 0.8666).abs() < 1e-3);
        assert_eq!(wilson_interval(0, 0, 1.96), (0.0, 1.0));
    }

    #[test]
    fn self_agreement_is_exact() {
        let model = DriftModel::proposed(LatticeTarget::default(), 0.8, 1.0).unwrap();
        let cfg = SimConfig::new(model, pt(0.0, 0.0), 200, 1, 3);
        let r = agreement_rate(&cfg, &cfg, 200).unwrap();
        // self-coupled pairs only disagree if both end exactly on the cut locus
        assert_eq!(r.rate, 1.0);
        assert_eq!(r.n_pairs, 200);
    }

    #[test]
    fn agreement_rejects_mismatch() {
        let a = SimConfig::new(
            DriftModel::proposed(LatticeTarget::default(), 0.8, 1.0).unwrap(),
            pt(0.0, 0.0),
            200,
            1,
            3,
        );
        let mut b = a.clone();
        b.n_steps = 100;
        assert!(agreement_rate(&a, &b, 10).is_err());
        assert!(agreement_rate(&a, &a, 0).is_err());
    }

    #[test]
    fn drift_profile_free_is_zero() {
        let model = DriftModel::free_bm(1.0, 1.0).unwrap();
        let cfg = SimConfig::new(model, pt(0.0, 0.0), 50, 1, 3);
        let p = crate::engine::simulate_path(&cfg, 0).unwrap();
        let prof = drift_profile(&p, &model).unwrap();
        assert_eq!(prof.len(), 50);
        assert!(prof.iter().all(|s| s.magnitude == 0.0));
    }

    #[test]
    fn drift_profile_pinned_path_scaling() {
        let model = DriftModel::proposed(LatticeTarget::default(), 1.0, 1.0).unwrap();
        let x = pt(0.3, 0.4);
        let path = PathSample {
            times: vec![0.5, 0.9, 1.0],
            states: vec![x, x, x],
            increments: None,
            steps: vec![0, 1, 2],
        };
        let prof = drift_profile(&path, &model).unwrap();
        assert_eq!(prof.len(), 2);
        assert!((prof[1].magnitude / prof[0].magnitude - 5.0).abs() < 1e-12);

        let short = DriftModel::proposed(LatticeTarget::default(), 1.0, 0.8).unwrap();
        assert!(drift_profile(&path, &short).is_err());
    }

    #[test]
    fn field_points_toward_lifts() {
        let model = DriftModel::proposed(LatticeTarget::default(), 1.0, 1.0).unwrap();
        let field = drift_field(&model, 0.3, Rect::default(), 9).unwrap();
        assert_eq!(field.len(), 81);
        let target = LatticeTarget::default();
        for s in &field {
            if is_on_cut_locus(s.x, &target).unwrap() {
                assert_eq!(s.drift, EuclideanPoint::ZERO);
            } else {
                let to_lift = lift_nearest(s.x, &target).unwrap() - s.x;
                assert!(s.drift.dot(&to_lift) >= 0.0);
                assert!((s.drift - to_lift * (1.0 / 0.7)).norm() < 1e-12);
            }
        }
        // x = ±0.5 rows lie on tie lines
        assert!(field.iter().filter(|s| s.x.x1 == 0.5).all(|s| s.drift == EuclideanPoint::ZERO));
    }

    #[test]
    fn field_errors() {
        let model = DriftModel::proposed(LatticeTarget::default(), 1.0, 1.0).unwrap();
        assert!(drift_field(&model, 0.0, Rect::default(), 1).is_err());
        assert!(drift_field(&model, 1.0, Rect::default(), 3).is_err());
        let flipped = Rect {
            lo: pt(1.0, 1.0),
            hi: pt(-1.0, -1.0),
        };
        assert!(drift_field(&model, 0.0, flipped, 3).is_err());
    }

    #[test]
    fn field_refinement_is_superset() {
        let model = DriftModel::proposed(LatticeTarget::default(), 1.0, 1.0).unwrap();
        let rect = Rect {
            lo: pt(-0.7, -0.3),
            hi: pt(1.1, 0.9),
        };
        let coarse = drift_field(&model, 0.1, rect, 5).unwrap();
        let fine = drift_field(&model, 0.1, rect, 9).unwrap();
        for c in &coarse {
            assert!(fine.iter().any(|f| (f.x - c.x).norm() < 1e-12));
        }
    }
}
