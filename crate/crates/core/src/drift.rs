//! Drift coefficients `b(t, x)` for the simulated diffusions.
//!
//! Four models share the constant diffusion coefficient `σ` and horizon `T`:
//!
//! * free Brownian motion, `b ≡ 0`;
//! * the plane Brownian bridge to a single endpoint, `(b - x) / (T - t)`;
//! * the proposal, pulling toward the nearest lift `α(x)` of the target and
//!   switched off on the cut locus;
//! * the exact torus bridge from the h-transform, a softmax-weighted average
//!   of the pulls toward every lift in a truncated lattice window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    is_within_cut_band, lift_nearest, EuclideanPoint, LatticeTarget, TorusPoint,
};

/// Smallest remaining time `T - t` used in drift evaluation.
pub const MIN_REMAINING_TIME: f64 = 1e-12;

/// Default half-width of the true-bridge lattice window (7×7 lifts).
pub const DEFAULT_TRUNCATION: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DriftVariant {
    FreeBm,
    EuclideanBridge { endpoint: EuclideanPoint },
    Proposed { target: LatticeTarget },
    TrueBridge { target: LatticeTarget, truncation: u32 },
}

impl DriftVariant {
    pub fn name(&self) -> &'static str {
        match self {
            DriftVariant::FreeBm => "free-bm",
            DriftVariant::EuclideanBridge { .. } => "euclid-bridge",
            DriftVariant::Proposed { .. } => "proposed",
            DriftVariant::TrueBridge { .. } => "true-bridge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftModel {
    pub variant: DriftVariant,
    pub sigma: f64,
    pub horizon: f64,
    /// Multiply the proposal drift by `σ²`. Off by default.
    #[serde(default)]
    pub scale_proposed_drift_by_sigma_sq: bool,
    /// Width of the band around the cut locus where the proposal drift is zero.
    #[serde(default)]
    pub cut_band: f64,
}

impl DriftModel {
    pub fn new(variant: DriftVariant, sigma: f64, horizon: f64) -> Result<Self> {
        let model = Self {
            variant,
            sigma,
            horizon,
            scale_proposed_drift_by_sigma_sq: false,
            cut_band: 0.0,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn free_bm(sigma: f64, horizon: f64) -> Result<Self> {
        Self::new(DriftVariant::FreeBm, sigma, horizon)
    }

    pub fn euclidean_bridge(endpoint: EuclideanPoint, sigma: f64, horizon: f64) -> Result<Self> {
        Self::new(DriftVariant::EuclideanBridge { endpoint }, sigma, horizon)
    }

    pub fn proposed(target: LatticeTarget, sigma: f64, horizon: f64) -> Result<Self> {
        Self::new(DriftVariant::Proposed { target }, sigma, horizon)
    }

    pub fn true_bridge(
        target: LatticeTarget,
        truncation: u32,
        sigma: f64,
        horizon: f64,
    ) -> Result<Self> {
        Self::new(DriftVariant::TrueBridge { target, truncation }, sigma, horizon)
    }

    pub fn with_sigma_sq_scaling(mut self, on: bool) -> Self {
        self.scale_proposed_drift_by_sigma_sq = on;
        self
    }

    pub fn with_cut_band(mut self, band: f64) -> Result<Self> {
        self.cut_band = band;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::Config(format!(
                "horizon T must be > 0, got {}",
                self.horizon
            )));
        }
        if !(self.cut_band.is_finite() && self.cut_band >= 0.0) {
            return Err(Error::Config(format!(
                "cut band must be >= 0, got {}",
                self.cut_band
            )));
        }
        if let DriftVariant::EuclideanBridge { endpoint } = self.variant {
            endpoint.checked()?;
        }
        Ok(())
    }

    /// The lattice target for lattice-conditioned models.
    pub fn lattice_target(&self) -> Option<LatticeTarget> {
        match self.variant {
            DriftVariant::Proposed { target } | DriftVariant::TrueBridge { target, .. } => {
                Some(target)
            }
            _ => None,
        }
    }

    /// Remaining time `T - t`, clamped below at [`MIN_REMAINING_TIME`].
    pub fn remaining_time(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0 && t < self.horizon) {
            return Err(Error::OutOfHorizon {
                t,
                horizon: self.horizon,
            });
        }
        Ok((self.horizon - t).max(MIN_REMAINING_TIME))
    }

    /// Drift `b(t, x)` of whichever model this is.
    pub fn drift(&self, t: f64, x: EuclideanPoint) -> Result<EuclideanPoint> {
        let x = x.checked()?;
        let tau = self.remaining_time(t)?;
        match self.variant {
            DriftVariant::FreeBm => Ok(EuclideanPoint::ZERO),
            DriftVariant::EuclideanBridge { endpoint } => Ok((endpoint - x) * (1.0 / tau)),
            DriftVariant::Proposed { target } => {
                if is_within_cut_band(x, &target, self.cut_band)? {
                    return Ok(EuclideanPoint::ZERO);
                }
                let pull = (lift_nearest(x, &target)? - x) * (1.0 / tau);
                if self.scale_proposed_drift_by_sigma_sq {
                    Ok(pull * (self.sigma * self.sigma))
                } else {
                    Ok(pull)
                }
            }
            DriftVariant::TrueBridge { target, truncation } => {
                Ok(softmax_pull(x, &target, truncation, self.sigma, tau))
            }
        }
    }
}

/// Proposal drift `1_{G^c}(x) (α(x) - x) / (T - t)`.
pub fn proposed_drift(t: f64, x: EuclideanPoint, model: &DriftModel) -> Result<EuclideanPoint> {
    require(model, "proposed", |v| matches!(v, DriftVariant::Proposed { .. }))?;
    model.drift(t, x)
}

/// Exact torus-bridge drift `Σ_y g_y(t, x) (y - x) / (T - t)` over the truncated lifts.
pub fn true_bridge_drift(t: f64, x: EuclideanPoint, model: &DriftModel) -> Result<EuclideanPoint> {
    require(model, "true-bridge", |v| matches!(v, DriftVariant::TrueBridge { .. }))?;
    model.drift(t, x)
}

/// Plane Brownian bridge drift `(b - x) / (T - t)`; zero for free Brownian motion.
pub fn euclidean_bridge_drift(
    t: f64,
    x: EuclideanPoint,
    model: &DriftModel,
) -> Result<EuclideanPoint> {
    require(model, "euclid-bridge or free-bm", |v| {
        matches!(v, DriftVariant::EuclideanBridge { .. } | DriftVariant::FreeBm)
    })?;
    model.drift(t, x)
}

fn require(
    model: &DriftModel,
    expected: &'static str,
    ok: impl Fn(&DriftVariant) -> bool,
) -> Result<()> {
    if ok(&model.variant) {
        Ok(())
    } else {
        Err(Error::WrongVariant { expected })
    }
}

/// Normalized h-transform weights `g_y` over the truncated lift window.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxWeights {
    pub lattice_points: Vec<EuclideanPoint>,
    pub weights: Vec<f64>,
}

impl SoftmaxWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weight_of(&self, y: EuclideanPoint) -> Option<f64> {
        self.lattice_points
            .iter()
            .position(|p| *p == y)
            .map(|i| self.weights[i])
    }
}

pub fn softmax_weights(t: f64, x: EuclideanPoint, model: &DriftModel) -> Result<SoftmaxWeights> {
    let DriftVariant::TrueBridge { target, truncation } = model.variant else {
        return Err(Error::WrongVariant {
            expected: "true-bridge",
        });
    };
    let x = x.checked()?;
    let tau = model.remaining_time(t)?;
    let scale = 1.0 / (2.0 * model.sigma * model.sigma * tau);

    let lattice_points: Vec<EuclideanPoint> = target.lifts_within(truncation).collect();
    let exponents: Vec<f64> = lattice_points
        .iter()
        .map(|y| -(*y - x).norm_sq() * scale)
        .collect();
    let shift = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = exponents.iter().map(|e| (e - shift).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(SoftmaxWeights {
        lattice_points,
        weights,
    })
}

/// `Σ_y g_y (y - x) / τ`, computed with the max exponent shifted to zero.
fn softmax_pull(
    x: EuclideanPoint,
    target: &LatticeTarget,
    truncation: u32,
    sigma: f64,
    tau: f64,
) -> EuclideanPoint {
    let scale = 1.0 / (2.0 * sigma * sigma * tau);
    let shift = target
        .lifts_within(truncation)
        .map(|y| -(y - x).norm_sq() * scale)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut acc = EuclideanPoint::ZERO;
    for y in target.lifts_within(truncation) {
        let d = y - x;
        let w = (-d.norm_sq() * scale - shift).exp();
        total += w;
        acc += d * w;
    }
    acc * (1.0 / (total * tau))
}

/// Log of the Brownian transition density on the torus (wrapped Gaussian),
/// truncated to the lattice shifts `‖k‖∞ ≤ truncation`.
///
/// `p = Σ_k (2πσ²(t - s))⁻¹ exp(-‖x - y - k‖² / (2σ²(t - s)))`.
pub fn wrapped_gaussian_log_density(
    s: f64,
    x: TorusPoint,
    t: f64,
    y: TorusPoint,
    sigma: f64,
    truncation: u32,
) -> Result<f64> {
    if !(s.is_finite() && t.is_finite() && s < t) {
        return Err(Error::InvalidInput(format!(
            "transition density needs s < t, got s={s}, t={t}"
        )));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidInput(format!("sigma must be > 0, got {sigma}")));
    }
    let var = sigma * sigma * (t - s);
    let d = x.embed() - y.embed();
    let r = truncation as i64;
    let exponent = |k1: i64, k2: i64| {
        let e = d - EuclideanPoint::new(k1 as f64, k2 as f64);
        -e.norm_sq() / (2.0 * var)
    };
    let mut shift = f64::NEG_INFINITY;
    for k1 in -r..=r {
        for k2 in -r..=r {
            shift = shift.max(exponent(k1, k2));
        }
    }
    let mut sum = 0.0;
    for k1 in -r..=r {
        for k2 in -r..=r {
            sum += (exponent(k1, k2) - shift).exp();
        }
    }
    Ok(shift + sum.ln() - (2.0 * std::f64::consts::PI * var).ln())
}
