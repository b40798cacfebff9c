//! Explicit Euler–Maruyama simulation of the drift models.
//!
//! Each path draws its Wiener increments from its own ChaCha8 stream, selected
//! by `(seed, path_index)`, so a batch gives the same result for any worker
//! count or scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::DriftModel;
use crate::drift::DriftVariant;
use crate::error::{Error, Result};
use crate::geometry::{nearest_offset, project, EuclideanPoint, LatticeOffset, LatticeTarget};
use crate::measure::log_girsanov_weight;

/// Relative slack when comparing grid times against the horizon.
const GRID_EPS: f64 = 1e-12;

fn default_true() -> bool {
    true
}

fn default_thin() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: DriftModel,
    pub start: EuclideanPoint,
    pub n_steps: usize,
    pub seed: u64,
    pub n_paths: usize,
    #[serde(default)]
    pub record_increments: bool,
    /// Keep paths in the batch result; diagnostics are always computed.
    #[serde(default = "default_true")]
    pub store_paths: bool,
    /// Keep every `thin`-th state of stored paths (the final state is always kept).
    #[serde(default = "default_thin")]
    pub thin: usize,
    /// Compute Girsanov log-weights on `[0, cutoff]` for every path.
    #[serde(default)]
    pub weight_cutoff: Option<f64>,
}

impl SimConfig {
    pub fn new(model: DriftModel, start: EuclideanPoint, n_steps: usize, n_paths: usize, seed: u64) -> Self {
        Self {
            model,
            start,
            n_steps,
            seed,
            n_paths,
            record_increments: false,
            store_paths: true,
            thin: 1,
            weight_cutoff: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.start.checked()?;
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be >= 1".into()));
        }
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be >= 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be >= 1".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.model.horizon / self.n_steps as f64
    }

    /// Grid time `t_i = i T / n`; `t_n` is exactly `T`.
    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.model.horizon
        } else {
            i as f64 * self.model.horizon / self.n_steps as f64
        }
    }

    /// Lattice target used for terminal diagnostics.
    ///
    /// Lattice models use their own target; the Euclidean bridge uses the
    /// projection of its endpoint and free Brownian motion that of its start.
    pub fn diagnostic_target(&self) -> Result<LatticeTarget> {
        Ok(match self.model.variant {
            DriftVariant::Proposed { target } | DriftVariant::TrueBridge { target, .. } => target,
            DriftVariant::EuclideanBridge { endpoint } => LatticeTarget::new(project(endpoint)?),
            DriftVariant::FreeBm => LatticeTarget::new(project(self.start)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub states: Vec<EuclideanPoint>,
    /// Wiener increments `ΔW_i` driving step `i`; absent unless recorded.
    pub increments: Option<Vec<EuclideanPoint>>,
    /// Grid index of each stored state (differs from `0..` only when thinned).
    pub steps: Vec<usize>,
}

impl PathSample {
    pub fn terminal(&self) -> EuclideanPoint {
        *self.states.last().expect("paths hold at least the start state")
    }

    fn thinned(self, every: usize) -> PathSample {
        if every <= 1 {
            return self;
        }
        let last = self.states.len() - 1;
        let keep = |i: &usize| i.is_multiple_of(every) || *i == last;
        let idx: Vec<usize> = (0..=last).filter(keep).collect();
        PathSample {
            times: idx.iter().map(|&i| self.times[i]).collect(),
            states: idx.iter().map(|&i| self.states[i]).collect(),
            steps: idx.iter().map(|&i| self.steps[i]).collect(),
            increments: None,
        }
    }
}

/// Per-path Gaussian increment stream.
pub struct NoiseStream {
    rng: ChaCha8Rng,
    sqrt_dt: f64,
}

impl NoiseStream {
    pub fn new(seed: u64, path_index: u64, dt: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path_index);
        Self {
            rng,
            sqrt_dt: dt.sqrt(),
        }
    }

    /// Next `ΔW ~ N(0, dt I₂)`.
    pub fn next_increment(&mut self) -> EuclideanPoint {
        let z1: f64 = StandardNormal.sample(&mut self.rng);
        let z2: f64 = StandardNormal.sample(&mut self.rng);
        EuclideanPoint::new(z1 * self.sqrt_dt, z2 * self.sqrt_dt)
    }
}

/// One explicit step `x + b(t, x) dt + σ dW`.
pub fn euler_step(
    t: f64,
    x: EuclideanPoint,
    dt: f64,
    dw: EuclideanPoint,
    model: &DriftModel,
) -> Result<EuclideanPoint> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("step size must be > 0, got {dt}")));
    }
    if t + dt > model.horizon * (1.0 + GRID_EPS) {
        return Err(Error::OutOfHorizon {
            t: t + dt,
            horizon: model.horizon,
        });
    }
    let b = model.drift(t, x)?;
    Ok(x + b * dt + dw * model.sigma)
}

fn check_path_index(config: &SimConfig, path_index: usize) -> Result<()> {
    if path_index >= config.n_paths {
        return Err(Error::Config(format!(
            "path index {path_index} out of range for {} paths",
            config.n_paths
        )));
    }
    Ok(())
}

/// Full-resolution path with increments always recorded.
fn simulate_full(config: &SimConfig, path_index: usize) -> Result<PathSample> {
    let n = config.n_steps;
    let dt = config.dt();
    let mut noise = NoiseStream::new(config.seed, path_index as u64, dt);
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut increments = Vec::with_capacity(n);
    let mut x = config.start;
    times.push(0.0);
    states.push(x);
    for i in 0..n {
        let dw = noise.next_increment();
        x = euler_step(config.time(i), x, dt, dw, &config.model)?;
        times.push(config.time(i + 1));
        states.push(x);
        increments.push(dw);
    }
    Ok(PathSample {
        times,
        states,
        increments: Some(increments),
        steps: (0..=n).collect(),
    })
}

/// Simulates path `path_index`; the noise depends only on `(seed, path_index)`.
pub fn simulate_path(config: &SimConfig, path_index: usize) -> Result<PathSample> {
    config.validate()?;
    check_path_index(config, path_index)?;
    let mut path = simulate_full(config, path_index)?;
    if !config.record_increments {
        path.increments = None;
    }
    Ok(path)
}

/// Simulates every path and applies `f` to it on the current rayon pool,
/// returning results in path order. Paths are not retained.
pub fn map_paths<R, F>(config: &SimConfig, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize, &PathSample) -> Result<R> + Sync,
{
    config.validate()?;
    (0..config.n_paths)
        .into_par_iter()
        .map(|i| simulate_full(config, i).and_then(|p| f(i, &p)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub target: LatticeTarget,
    pub paths: Vec<PathSample>,
    pub terminal_points: Vec<EuclideanPoint>,
    /// `k` with `α(X_T) = a + k`, or `None` when `X_T` is on the cut locus.
    pub limiting_lattice_points: Vec<Option<LatticeOffset>>,
    pub log_weights: Option<Vec<f64>>,
}

impl BatchResult {
    pub fn len(&self) -> usize {
        self.terminal_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terminal_points.is_empty()
    }
}

struct PathRecord {
    path: Option<PathSample>,
    terminal: EuclideanPoint,
    offset: Option<LatticeOffset>,
    log_weight: Option<f64>,
}

fn batch_on_current_pool(config: &SimConfig) -> Result<BatchResult> {
    let target = config.diagnostic_target()?;
    let records = map_paths(config, |_, full| {
        let terminal = full.terminal();
        let offset = nearest_offset(terminal, &target)?;
        let log_weight = match config.weight_cutoff {
            Some(s) => Some(log_girsanov_weight(full, &config.model, s)?),
            None => None,
        };
        let path = config.store_paths.then(|| {
            let mut p = full.clone();
            if !config.record_increments {
                p.increments = None;
            }
            p.thinned(config.thin)
        });
        Ok(PathRecord {
            path,
            terminal,
            offset,
            log_weight,
        })
    })?;

    let mut batch = BatchResult {
        target,
        paths: Vec::with_capacity(if config.store_paths { records.len() } else { 0 }),
        terminal_points: Vec::with_capacity(records.len()),
        limiting_lattice_points: Vec::with_capacity(records.len()),
        log_weights: config.weight_cutoff.map(|_| Vec::with_capacity(records.len())),
    };
    for r in records {
        if let Some(p) = r.path {
            batch.paths.push(p);
        }
        batch.terminal_points.push(r.terminal);
        batch.limiting_lattice_points.push(r.offset);
        if let (Some(ws), Some(w)) = (batch.log_weights.as_mut(), r.log_weight) {
            ws.push(w);
        }
    }
    Ok(batch)
}

/// Simulates `n_paths` independent paths on the global rayon pool.
pub fn simulate_batch(config: &SimConfig) -> Result<BatchResult> {
    batch_on_current_pool(config)
}

/// Runs `job` on a dedicated pool with `workers` threads (0 = rayon default).
pub fn with_workers<R: Send>(workers: usize, job: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

/// [`simulate_batch`] on a pool of exactly `workers` threads.
pub fn simulate_batch_with_workers(config: &SimConfig, workers: usize) -> Result<BatchResult> {
    with_workers(workers, || batch_on_current_pool(config))?
}

/// Checks that two configurations can share one noise sequence.
pub fn check_coupling(a: &SimConfig, b: &SimConfig) -> Result<()> {
    let same = a.seed == b.seed
        && a.n_steps == b.n_steps
        && a.model.horizon == b.model.horizon
        && a.model.sigma == b.model.sigma
        && a.start == b.start;
    if same {
        Ok(())
    } else {
        Err(Error::Config(
            "coupled configs must share seed, n_steps, T, sigma and start".into(),
        ))
    }
}

/// Drives both models with the identical increment sequence of `path_index`.
pub fn simulate_coupled_pair(
    config_a: &SimConfig,
    config_b: &SimConfig,
    path_index: usize,
) -> Result<(PathSample, PathSample)> {
    config_a.validate()?;
    config_b.validate()?;
    check_coupling(config_a, config_b)?;
    check_path_index(config_a, path_index)?;

    let n = config_a.n_steps;
    let dt = config_a.dt();
    let mut noise = NoiseStream::new(config_a.seed, path_index as u64, dt);
    let times: Vec<f64> = (0..=n).map(|i| config_a.time(i)).collect();
    let mut xa = config_a.start;
    let mut xb = config_b.start;
    let mut sa = Vec::with_capacity(n + 1);
    let mut sb = Vec::with_capacity(n + 1);
    let mut incs = Vec::with_capacity(n);
    sa.push(xa);
    sb.push(xb);
    for &t in times.iter().take(n) {
        let dw = noise.next_increment();
        xa = euler_step(t, xa, dt, dw, &config_a.model)?;
        xb = euler_step(t, xb, dt, dw, &config_b.model)?;
        sa.push(xa);
        sb.push(xb);
        incs.push(dw);
    }
    let record = config_a.record_increments || config_b.record_increments;
    let make = |states| PathSample {
        times: times.clone(),
        states,
        increments: record.then(|| incs.clone()),
        steps: (0..=n).collect(),
    };
    Ok((make(sa), make(sb)))
}
