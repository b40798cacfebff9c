//! End-to-end acceptance checks, shared by `torus-bridge check` and the
//! `acceptance` test target. Every tolerance is fixed here.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{agreement_rate, terminal_convergence};
use crate::cli::{self, Cli, Command};
use crate::drift::{wrapped_gaussian_log_density, DriftModel};
use crate::engine::{map_paths, simulate_batch, SimConfig};
use crate::error::{Error, Result};
use crate::geometry::{EuclideanPoint, LatticeTarget, TorusPoint};
use crate::measure::{drift_bound_constant, drift_energy, log_girsanov_weight};

pub const AGREEMENT_BAND: (f64, f64) = (0.65, 0.92);
pub const TERMINAL_Q99_MAX: f64 = 0.10;
pub const REFINEMENT_SLACK: f64 = 1.10;
pub const N_STANDARD_ERRORS: f64 = 3.0;
pub const GRADIENT_RTOL: f64 = 1e-5;
pub const GRADIENT_STEP: f64 = 1e-5;
pub const NORMALIZATION_TOL: f64 = 1e-6;

pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    run: fn() -> Result<Check>,
}

pub struct Check {
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CriterionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] criterion {} ({}): {}", self.id, self.name, self.detail)
    }
}

pub const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, name: "coupled agreement rate", run: coupled_agreement },
    Criterion { id: 2, name: "terminal convergence", run: terminal_convergence_check },
    Criterion { id: 3, name: "euclidean bridge law", run: euclidean_bridge_law },
    Criterion { id: 4, name: "girsanov martingale and consistency", run: girsanov_consistency },
    Criterion { id: 5, name: "drift bound", run: drift_bound },
    Criterion { id: 6, name: "h-transform gradient identity", run: gradient_identity },
    Criterion { id: 7, name: "density normalization", run: density_normalization },
    Criterion { id: 8, name: "determinism", run: determinism },
];

pub fn criterion(id: u8) -> Option<&'static Criterion> {
    CRITERIA.iter().find(|c| c.id == id)
}

pub fn run_criterion(c: &Criterion) -> CriterionOutcome {
    let (passed, detail) = match (c.run)() {
        Ok(check) => (check.passed, check.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    CriterionOutcome {
        id: c.id,
        name: c.name,
        passed,
        detail,
    }
}

pub fn run_all() -> Vec<CriterionOutcome> {
    CRITERIA.iter().map(run_criterion).collect()
}

/// Sample mean and its standard error.
fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Unbiased sample variance and its large-sample standard error.
fn variance_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (m2 * n / (n - 1.0), ((m4 - m2 * m2) / n).sqrt())
}

fn origin() -> LatticeTarget {
    LatticeTarget::default()
}

fn coupled_agreement() -> Result<Check> {
    let target = origin();
    let start = target.a.embed();
    let proposed = DriftModel::proposed(target, 0.8, 1.0)?;
    let truth = DriftModel::true_bridge(target, 2, 0.8, 1.0)?;
    let a = SimConfig::new(proposed, start, 1000, 2000, 0xF163);
    let b = SimConfig::new(truth, start, 1000, 2000, 0xF163);
    let r = agreement_rate(&a, &b, 2000)?;
    let passed = r.rate >= AGREEMENT_BAND.0 && r.rate <= AGREEMENT_BAND.1;
    Ok(Check {
        passed,
        detail: format!(
            "rate {:.4} ({}/{}), 95% Wilson [{:.4}, {:.4}], band [{}, {}]",
            r.rate, r.n_agree, r.n_pairs, r.wilson_low, r.wilson_high, AGREEMENT_BAND.0, AGREEMENT_BAND.1
        ),
    })
}

fn terminal_q99(n_steps: usize, seed: u64) -> Result<f64> {
    let target = origin();
    let model = DriftModel::proposed(target, 0.8, 1.0)?;
    let mut cfg = SimConfig::new(model, target.a.embed(), n_steps, 2000, seed);
    cfg.store_paths = false;
    Ok(terminal_convergence(&simulate_batch(&cfg)?, &target)?.q99)
}

fn terminal_convergence_check() -> Result<Check> {
    let q: Vec<f64> = [250, 500, 1000]
        .iter()
        .map(|&n| terminal_q99(n, 0x0C02))
        .collect::<Result<_>>()?;
    let monotone = q.windows(2).all(|w| w[1] <= w[0] * REFINEMENT_SLACK);
    let passed = q[2] <= TERMINAL_Q99_MAX && monotone;
    Ok(Check {
        passed,
        detail: format!(
            "q99 at dt=4e-3/2e-3/1e-3: {:.4}/{:.4}/{:.4} (max {TERMINAL_Q99_MAX}, monotone within 10%: {monotone})",
            q[0], q[1], q[2]
        ),
    })
}

fn euclidean_bridge_law() -> Result<Check> {
    let b = EuclideanPoint::new(0.3, 0.2);
    let model = DriftModel::euclidean_bridge(b, 1.0, 1.0)?;
    let cfg = SimConfig::new(model, EuclideanPoint::ZERO, 1000, 10_000, 0xB1D3);
    let mid = map_paths(&cfg, |_, p| Ok(p.states[500]))?;
    let xs: Vec<f64> = mid.iter().map(|p| p.x1).collect();
    let ys: Vec<f64> = mid.iter().map(|p| p.x2).collect();

    let mut passed = true;
    let mut parts = Vec::new();
    for (name, v, mean_target) in [("x1", &xs, 0.15), ("x2", &ys, 0.10)] {
        let (m, se) = mean_se(v);
        let (var, var_se) = variance_se(v);
        let zm = (m - mean_target).abs() / se;
        let zv = (var - 0.25).abs() / var_se;
        passed &= zm <= N_STANDARD_ERRORS && zv <= N_STANDARD_ERRORS;
        parts.push(format!(
            "{name}: mean {m:.4} (z={zm:.2}), var {var:.4} (z={zv:.2})"
        ));
    }
    Ok(Check {
        passed,
        detail: parts.join("; "),
    })
}

fn girsanov_consistency() -> Result<Check> {
    let s = 0.5;
    let start = EuclideanPoint::new(0.3, -0.2);
    let model = DriftModel::proposed(origin(), 1.0, 1.0)?;
    let cfg = SimConfig::new(model, start, 1000, 10_000, 0x6125);
    let cut = 500;
    let weighted = map_paths(&cfg, |_, p| {
        Ok((log_girsanov_weight(p, &model, s)?.exp(), p.states[cut]))
    })?;
    let free = DriftModel::free_bm(1.0, 1.0)?;
    let direct_cfg = SimConfig::new(free, start, 1000, 10_000, 0xD1EC7);
    let direct = map_paths(&direct_cfg, |_, p| Ok(p.states[cut]))?;

    let w: Vec<f64> = weighted.iter().map(|(w, _)| *w).collect();
    let (wm, wse) = mean_se(&w);
    let zw = (wm - 1.0).abs() / wse;
    let mut passed = zw <= N_STANDARD_ERRORS;
    let mut parts = vec![format!("E[w] {wm:.4}±{wse:.4} (z={zw:.2})")];

    let functionals: [(&str, fn(&EuclideanPoint) -> f64); 4] = [
        ("x1", |p| p.x1),
        ("x2", |p| p.x2),
        ("x1^2", |p| p.x1 * p.x1),
        ("x2^2", |p| p.x2 * p.x2),
    ];
    for (name, f) in functionals {
        let est: Vec<f64> = weighted.iter().map(|(w, x)| w * f(x)).collect();
        let dir: Vec<f64> = direct.iter().map(f).collect();
        let (me, se_e) = mean_se(&est);
        let (md, se_d) = mean_se(&dir);
        let z = (me - md).abs() / (se_e * se_e + se_d * se_d).sqrt();
        passed &= z <= N_STANDARD_ERRORS;
        parts.push(format!("{name}: {me:.4} vs {md:.4} (z={z:.2})"));
    }
    Ok(Check {
        passed,
        detail: parts.join("; "),
    })
}

fn drift_bound() -> Result<Check> {
    let horizon = 1.0;
    let model = DriftModel::proposed(origin(), 1.0, horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x0B05);
    let mut violations = 0usize;
    for _ in 0..100_000 {
        let cutoff: f64 = rng.random_range(0.0..0.99);
        let t = rng.random_range(0.0..=cutoff);
        let x = EuclideanPoint::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let bound = std::f64::consts::FRAC_1_SQRT_2 / (horizon - cutoff);
        if model.drift(t, x)?.norm() > bound {
            violations += 1;
        }
    }

    let s = 0.5;
    let c_s = drift_bound_constant(&model, s)?;
    let sim_model = DriftModel::proposed(origin(), 0.8, horizon)?;
    let cfg = SimConfig::new(sim_model, EuclideanPoint::ZERO, 1000, 2000, 0x0B06);
    let checkpoints = [0.1, 0.25, 0.4, 0.5];
    let path_violations: usize = map_paths(&cfg, |_, p| {
        let mut bad = 0;
        for &t in &checkpoints {
            if drift_energy(p, &sim_model, t)? > t * c_s {
                bad += 1;
            }
        }
        Ok(bad)
    })?
    .into_iter()
    .sum();

    Ok(Check {
        passed: violations == 0 && path_violations == 0,
        detail: format!(
            "{violations} pointwise violations in 1e5 draws, {path_violations} pathwise violations of sum|b|^2 dt <= t*C_S (C_S={c_s})"
        ),
    })
}

fn gradient_identity() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x96AD);
    let truncation = 3;
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..100 {
        let sigma: f64 = rng.random_range(0.5..1.2);
        let a = TorusPoint::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))?;
        let target = LatticeTarget::new(a);
        let model = DriftModel::true_bridge(target, truncation, sigma, 1.0)?;
        let t: f64 = rng.random_range(0.0..0.95);
        let x = EuclideanPoint::new(rng.random_range(-0.49..0.49), rng.random_range(-0.49..0.49));

        let log_h = |p: EuclideanPoint| -> Result<f64> {
            wrapped_gaussian_log_density(t, TorusPoint::new(p.x1, p.x2)?, 1.0, a, sigma, truncation)
        };
        let h = GRADIENT_STEP;
        let g1 = (log_h(x + EuclideanPoint::new(h, 0.0))? - log_h(x - EuclideanPoint::new(h, 0.0))?) / (2.0 * h);
        let g2 = (log_h(x + EuclideanPoint::new(0.0, h))? - log_h(x - EuclideanPoint::new(0.0, h))?) / (2.0 * h);
        let fd = EuclideanPoint::new(g1, g2) * (sigma * sigma);
        let drift = model.drift(t, x)?;
        let rel = (fd - drift).norm() / drift.norm().max(1.0);
        worst = worst.max(rel);
        if rel > GRADIENT_RTOL {
            failures += 1;
        }
    }
    Ok(Check {
        passed: failures == 0,
        detail: format!("{failures}/100 points above rtol {GRADIENT_RTOL}; worst relative error {worst:.2e}"),
    })
}

fn density_normalization() -> Result<Check> {
    let n = 400;
    let h = 1.0 / n as f64;
    let y = TorusPoint::ORIGIN;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = TorusPoint::new(-0.5 + (i as f64 + 0.5) * h, -0.5 + (j as f64 + 0.5) * h)?;
            total += wrapped_gaussian_log_density(0.0, x, 0.1, y, 1.0, 5)?.exp();
        }
    }
    let integral = total * h * h;
    let err = (integral - 1.0).abs();
    Ok(Check {
        passed: err <= NORMALIZATION_TOL,
        detail: format!("integral {integral:.12} (|err| = {err:.2e}, tol {NORMALIZATION_TOL})"),
    })
}

fn run_cli(args: &[&str]) -> Result<()> {
    let cli = <Cli as clap::Parser>::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    match &cli.command {
        Command::Simulate(a) => cli::cmd_simulate(a).map(|_| ()),
        Command::Compare(a) => cli::cmd_compare(a).map(|_| ()),
        Command::Field(a) => cli::cmd_field(a).map(|_| ()),
        Command::Weights(a) => cli::cmd_weights(a).map(|_| ()),
        Command::Check(_) => Err(Error::Config("nested check".into())),
    }
}

fn same_bytes(a: &Path, b: &Path, files: &[&str]) -> Result<Vec<String>> {
    let mut differing = Vec::new();
    for f in files {
        if fs::read(a.join(f))? != fs::read(b.join(f))? {
            differing.push((*f).to_string());
        }
    }
    Ok(differing)
}

fn determinism() -> Result<Check> {
    let root = tempfile::tempdir()?;
    let dir = |name: &str| root.path().join(name);
    let mut differing = Vec::new();

    let simulate = |out: &Path, workers: &str| {
        run_cli(&[
            "torus-bridge", "simulate", "--model", "proposed", "--target", "0.1,-0.2",
            "--sigma", "0.8", "--T", "1", "--steps", "500", "--paths", "300", "--seed", "7",
            "--cutoff", "0.5", "--thin", "10", "--workers", workers, "--out",
            out.to_str().unwrap(),
        ])
    };
    simulate(&dir("sim1"), "1")?;
    simulate(&dir("sim4"), "4")?;
    simulate(&dir("sim4b"), "4")?;
    differing.extend(same_bytes(&dir("sim1"), &dir("sim4"), &["paths.csv", "endpoints.csv"])?);
    differing.extend(same_bytes(&dir("sim4"), &dir("sim4b"), &["paths.csv", "endpoints.csv"])?);

    let compare = |out: &Path, workers: &str| {
        run_cli(&[
            "torus-bridge", "compare", "--sigma", "0.8", "--T", "1", "--steps", "500",
            "--pairs", "300", "--truncation", "2", "--seed", "7", "--workers", workers,
            "--out", out.to_str().unwrap(),
        ])
    };
    compare(&dir("cmp1"), "1")?;
    compare(&dir("cmp4"), "4")?;
    differing.extend(same_bytes(&dir("cmp1"), &dir("cmp4"), &["agreement.csv", "agreement_report.csv"])?);

    for (name, workers) in [("w1", "1"), ("w4", "4")] {
        run_cli(&[
            "torus-bridge", "weights", "--run", dir("sim1").to_str().unwrap(), "--cutoff",
            "0.25", "--workers", workers, "--out", dir(name).to_str().unwrap(),
        ])?;
    }
    differing.extend(same_bytes(&dir("w1"), &dir("w4"), &["weights.csv"])?);

    for name in ["f1", "f2"] {
        run_cli(&[
            "torus-bridge", "field", "--model", "proposed", "--time", "0.5", "--grid", "11",
            "--out", dir(name).to_str().unwrap(),
        ])?;
    }
    differing.extend(same_bytes(&dir("f1"), &dir("f2"), &["field.csv"])?);

    let manifest = dir("sim1").join("manifest.json");
    run_cli(&[
        "torus-bridge", "simulate", "--config", manifest.to_str().unwrap(), "--workers", "3",
        "--out", dir("replay").to_str().unwrap(),
    ])?;
    differing.extend(same_bytes(&dir("sim1"), &dir("replay"), &["paths.csv", "endpoints.csv"])?);

    Ok(Check {
        passed: differing.is_empty(),
        detail: if differing.is_empty() {
            "simulate/compare/weights/field outputs byte-identical across 1, 3 and 4 workers and manifest replay".into()
        } else {
            format!("differing files: {}", differing.join(", "))
        },
    })
}
