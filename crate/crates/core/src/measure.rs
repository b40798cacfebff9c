//! Girsanov change of measure for the proposal diffusion.
//!
//! Along a simulated path the Doléans-Dade exponential
//! `exp(-∫ b dW - ½ ∫ ‖b‖² ds)` is discretized with the left-point rule on the
//! simulation grid, using the increments that actually drove the path. For the
//! proposal drift, `‖b(t, x)‖ ≤ (√2/2) / (T - S)` on `[0, S]`, which gives the
//! constant `C_S = ½ / (T - S)²` and the Novikov bound `exp(t C_S)`.

use crate::drift::{DriftModel, DriftVariant};
use crate::engine::PathSample;
use crate::error::{Error, Result};
use crate::geometry::EuclideanPoint;

/// Tolerance for matching a cutoff against grid times.
const CUTOFF_GRID_TOL: f64 = 1e-9;

/// A path with its log-weight on `[0, cutoff]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPath {
    pub path: PathSample,
    pub log_weight: f64,
    pub cutoff: f64,
}

impl WeightedPath {
    pub fn new(path: PathSample, model: &DriftModel, cutoff: f64) -> Result<Self> {
        let log_weight = log_girsanov_weight(&path, model, cutoff)?;
        Ok(Self {
            path,
            log_weight,
            cutoff,
        })
    }

    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }
}

/// Number of grid steps `i` with `t_i < cutoff`; the cutoff must be a grid time.
fn steps_before(path: &PathSample, model: &DriftModel, cutoff: f64) -> Result<usize> {
    let horizon = model.horizon;
    if !(cutoff > 0.0 && cutoff < horizon) {
        return Err(Error::InvalidInput(format!(
            "cutoff S must satisfy 0 < S < T = {horizon}, got {cutoff}"
        )));
    }
    let tol = CUTOFF_GRID_TOL * horizon.max(1.0);
    if (path.times.last().copied().unwrap_or(f64::NAN) - horizon).abs() > tol {
        return Err(Error::Config("path horizon does not match the model".into()));
    }
    path.times
        .iter()
        .position(|t| (t - cutoff).abs() <= tol)
        .ok_or_else(|| Error::InvalidInput(format!("cutoff {cutoff} is not a grid time")))
}

fn increments(path: &PathSample) -> Result<&[EuclideanPoint]> {
    path.increments.as_deref().ok_or(Error::MissingIncrements)
}

/// `-Σ_{t_i < S} b(t_i, x_i)·ΔW_i - ½ Σ_{t_i < S} ‖b(t_i, x_i)‖² Δt`.
pub fn log_girsanov_weight(path: &PathSample, model: &DriftModel, cutoff: f64) -> Result<f64> {
    Ok(*log_weight_trajectory(path, model, cutoff)?
        .last()
        .expect("trajectory starts at 0"))
}

/// Running log-weight at every grid time `t_0 = 0, …, t_m = S`.
pub fn log_weight_trajectory(
    path: &PathSample,
    model: &DriftModel,
    cutoff: f64,
) -> Result<Vec<f64>> {
    let dws = increments(path)?;
    let m = steps_before(path, model, cutoff)?;
    let mut out = Vec::with_capacity(m + 1);
    let mut acc = 0.0;
    out.push(acc);
    for i in 0..m {
        let dt = path.times[i + 1] - path.times[i];
        let b = model.drift(path.times[i], path.states[i])?;
        acc += -b.dot(&dws[i]) - 0.5 * b.norm_sq() * dt;
        out.push(acc);
    }
    Ok(out)
}

/// `Σ_{t_i < t} ‖b(t_i, x_i)‖² Δt` along the path; `t` must be a grid time.
pub fn drift_energy(path: &PathSample, model: &DriftModel, t: f64) -> Result<f64> {
    let m = steps_before(path, model, t)?;
    let mut acc = 0.0;
    for i in 0..m {
        let dt = path.times[i + 1] - path.times[i];
        acc += model.drift(path.times[i], path.states[i])?.norm_sq() * dt;
    }
    Ok(acc)
}

/// `C_S = sup ‖b‖²` over `x ∉ G`, `t ≤ S` for the proposal drift.
pub fn drift_bound_constant(model: &DriftModel, cutoff: f64) -> Result<f64> {
    if !matches!(model.variant, DriftVariant::Proposed { .. }) {
        return Err(Error::WrongVariant {
            expected: "proposed",
        });
    }
    if !(cutoff >= 0.0 && cutoff < model.horizon) {
        return Err(Error::InvalidInput(format!(
            "cutoff S must satisfy 0 <= S < T = {}, got {cutoff}",
            model.horizon
        )));
    }
    let scale = if model.scale_proposed_drift_by_sigma_sq {
        model.sigma * model.sigma
    } else {
        1.0
    };
    let remaining = model.horizon - cutoff;
    Ok(0.5 * scale * scale / (remaining * remaining))
}

/// `exp(t C_S)`, an upper bound on `E[exp(∫₀ᵗ ‖b‖² ds)]`.
pub fn novikov_bound(model: &DriftModel, t: f64, cutoff: f64) -> Result<f64> {
    if !(t >= 0.0 && t <= cutoff) {
        return Err(Error::InvalidInput(format!(
            "need 0 <= t <= S, got t={t}, S={cutoff}"
        )));
    }
    Ok((t * drift_bound_constant(model, cutoff)?).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{simulate_path, SimConfig};
    use crate::geometry::LatticeTarget;

    fn pt(x1: f64, x2: f64) -> EuclideanPoint {
        EuclideanPoint::new(x1, x2)
    }

    fn proposed() -> DriftModel {
        DriftModel::proposed(LatticeTarget::default(), 1.0, 1.0).unwrap()
    }

    #[test]
    fn free_bm_weight_is_zero() {
        let model = DriftModel::free_bm(1.3, 1.0).unwrap();
        let mut cfg = SimConfig::new(model, pt(0.2, 0.1), 100, 3, 8);
        cfg.record_increments = true;
        for i in 0..3 {
            let p = simulate_path(&cfg, i).unwrap();
            assert_eq!(log_girsanov_weight(&p, &model, 0.5).unwrap(), 0.0);
        }
    }

    #[test]
    fn one_step_arithmetic() {
        // b(0.5, (0.3, 0.4)) = (-0.6, -0.8) with T = 1
        let path = PathSample {
            times: vec![0.5, 0.6, 1.0],
            states: vec![pt(0.3, 0.4), pt(0.0, 0.0), pt(0.0, 0.0)],
            increments: Some(vec![pt(0.1, 0.1), pt(0.0, 0.0)]),
            steps: vec![0, 1, 2],
        };
        let w = log_girsanov_weight(&path, &proposed(), 0.6).unwrap();
        assert!((w - 0.09).abs() < 1e-15, "{w}");
    }

    #[test]
    fn weight_errors() {
        let model = proposed();
        let cfg = SimConfig::new(model, pt(0.0, 0.0), 10, 1, 1);
        let bare = simulate_path(&cfg, 0).unwrap();
        assert_eq!(
            log_girsanov_weight(&bare, &model, 0.5),
            Err(Error::MissingIncrements)
        );
        let mut cfg = cfg;
        cfg.record_increments = true;
        let p = simulate_path(&cfg, 0).unwrap();
        assert!(log_girsanov_weight(&p, &model, 0.55).is_err());
        assert!(log_girsanov_weight(&p, &model, 1.0).is_err());
        assert!(log_girsanov_weight(&p, &model, 0.0).is_err());
        assert!(log_girsanov_weight(&p, &model, 0.5).is_ok());
    }

    #[test]
    fn trajectory_ends_at_weight() {
        let model = proposed();
        let mut cfg = SimConfig::new(model, pt(0.0, 0.0), 100, 1, 2);
        cfg.record_increments = true;
        let p = simulate_path(&cfg, 0).unwrap();
        let traj = log_weight_trajectory(&p, &model, 0.5).unwrap();
        assert_eq!(traj.len(), 51);
        assert_eq!(traj[0], 0.0);
        assert_eq!(*traj.last().unwrap(), log_girsanov_weight(&p, &model, 0.5).unwrap());
    }

    #[test]
    fn bound_constant_examples() {
        let m = proposed();
        assert_eq!(drift_bound_constant(&m, 0.5).unwrap(), 2.0);
        assert_eq!(drift_bound_constant(&m, 0.0).unwrap(), 0.5);
        let mut prev = 0.0;
        for i in 0..20 {
            let c = drift_bound_constant(&m, i as f64 * 0.049).unwrap();
            assert!(c > prev);
            prev = c;
        }
        assert!(drift_bound_constant(&m, 1.0).is_err());
        let free = DriftModel::free_bm(1.0, 1.0).unwrap();
        assert!(matches!(
            drift_bound_constant(&free, 0.5),
            Err(Error::WrongVariant { .. })
        ));
    }

    #[test]
    fn novikov_examples() {
        let m = proposed();
        assert_eq!(novikov_bound(&m, 0.0, 0.5).unwrap(), 1.0);
        assert!((novikov_bound(&m, 0.5, 0.5).unwrap() - std::f64::consts::E).abs() < 1e-15);
        assert!(novikov_bound(&m, 0.6, 0.5).is_err());
    }

    #[test]
    fn drift_energy_is_pathwise_bounded() {
        let model = DriftModel::proposed(LatticeTarget::default(), 0.8, 1.0).unwrap();
        let cfg = SimConfig::new(model, pt(0.0, 0.0), 200, 40, 6);
        let c = drift_bound_constant(&model, 0.5).unwrap();
        for i in 0..40 {
            let p = simulate_path(&cfg, i).unwrap();
            for &t in &[0.1, 0.25, 0.5] {
                assert!(drift_energy(&p, &model, t).unwrap() <= t * c);
            }
        }
    }
}
