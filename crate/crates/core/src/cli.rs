//! Command-line front-end: argument parsing, config assembly and CSV/JSON
//! output. The binary in `src/bin` only forwards to [`main_with_args`].

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::acceptance;
use crate::analysis::{coupled_outcomes, config_digest, drift_field, AgreementReport, Rect};
use crate::drift::{DriftModel, DriftVariant, DEFAULT_TRUNCATION};
use crate::engine::{simulate_batch, with_workers, SimConfig};
use crate::error::{Error, Result};
use crate::geometry::{EuclideanPoint, LatticeOffset, LatticeTarget, TorusPoint};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "torus-bridge", version, about = "Brownian bridges on the flat torus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a batch of paths and write paths.csv, endpoints.csv, manifest.json.
    Simulate(SimulateArgs),
    /// Couple two models through shared noise and write agreement.csv.
    Compare(CompareArgs),
    /// Evaluate a drift vector field on a grid and write field.csv.
    Field(FieldArgs),
    /// Recompute Girsanov log-weights for an existing run and write weights.csv.
    Weights(WeightsArgs),
    /// Run the acceptance checks.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum ModelKind {
    FreeBm,
    EuclidBridge,
    Proposed,
    TrueBridge,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[arg(long, allow_negative_numbers = true)]
    pub sigma: Option<f64>,
    #[arg(long = "T", allow_negative_numbers = true)]
    pub horizon: Option<f64>,
    /// Torus representative of the conditioning point.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub target: Option<(f64, f64)>,
    /// Endpoint of the Euclidean bridge.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub endpoint: Option<(f64, f64)>,
    /// Half-width K of the true-bridge lattice window.
    #[arg(long)]
    pub truncation: Option<u32>,
    /// Scale the proposal drift by sigma².
    #[arg(long)]
    pub scale_sigma_sq: bool,
    /// Width of the zero-drift band around the cut locus.
    #[arg(long, allow_negative_numbers = true)]
    pub cut_band: Option<f64>,
}

impl ModelArgs {
    fn any_set(&self) -> bool {
        self.model.is_some()
            || self.sigma.is_some()
            || self.horizon.is_some()
            || self.target.is_some()
            || self.endpoint.is_some()
            || self.truncation.is_some()
            || self.scale_sigma_sq
            || self.cut_band.is_some()
    }

    fn lattice_target(&self) -> Result<LatticeTarget> {
        let (u1, u2) = self.target.unwrap_or((0.0, 0.0));
        Ok(LatticeTarget::new(TorusPoint::new(u1, u2)?))
    }

    /// Builds the model for `kind`; `allow_truncation` permits `--truncation`
    /// even when `kind` is not the true bridge.
    fn build(&self, kind: ModelKind, allow_truncation: bool) -> Result<DriftModel> {
        let sigma = self.sigma.unwrap_or(1.0);
        let horizon = self.horizon.unwrap_or(1.0);
        if self.endpoint.is_some() && kind != ModelKind::EuclidBridge {
            return Err(Error::Config("--endpoint only applies to euclid-bridge".into()));
        }
        if self.truncation.is_some() && kind != ModelKind::TrueBridge && !allow_truncation {
            return Err(Error::Config("--truncation only applies to true-bridge".into()));
        }
        let variant = match kind {
            ModelKind::FreeBm => DriftVariant::FreeBm,
            ModelKind::EuclidBridge => {
                let (x1, x2) = self
                    .endpoint
                    .ok_or_else(|| Error::Config("euclid-bridge requires --endpoint".into()))?;
                DriftVariant::EuclideanBridge {
                    endpoint: EuclideanPoint::new(x1, x2),
                }
            }
            ModelKind::Proposed => DriftVariant::Proposed {
                target: self.lattice_target()?,
            },
            ModelKind::TrueBridge => DriftVariant::TrueBridge {
                target: self.lattice_target()?,
                truncation: self.truncation.unwrap_or(DEFAULT_TRUNCATION),
            },
        };
        DriftModel::new(variant, sigma, horizon)?
            .with_sigma_sq_scaling(self.scale_sigma_sq)
            .with_cut_band(self.cut_band.unwrap_or(0.0))
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Start point; defaults to the target representative (or the origin).
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub start: Option<(f64, f64)>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads (0 = one per core). Output does not depend on it.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// JSON file holding a config block (or a manifest with one).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl RunArgs {
    fn uses_inline_flags(&self) -> bool {
        self.model.any_set() || self.steps.is_some() || self.seed.is_some() || self.start.is_some()
    }

    fn start_for(&self, model: &DriftModel) -> EuclideanPoint {
        match self.start {
            Some((x1, x2)) => EuclideanPoint::new(x1, x2),
            None => model
                .lattice_target()
                .map(|t| t.a.embed())
                .unwrap_or(EuclideanPoint::ZERO),
        }
    }

    fn sim_config(&self, model: DriftModel, n_paths: usize) -> SimConfig {
        SimConfig::new(
            model,
            self.start_for(&model),
            self.steps.unwrap_or(1000),
            n_paths,
            self.seed.unwrap_or(0),
        )
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub paths: Option<usize>,
    /// Write every m-th state to paths.csv.
    #[arg(long)]
    pub thin: Option<usize>,
    /// Fill the log_weight column with weights on [0, S].
    #[arg(long, allow_negative_numbers = true)]
    pub cutoff: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 1)]
    pub pairs: usize,
    #[arg(long, value_enum, default_value = "proposed")]
    pub model_a: ModelKind,
    #[arg(long, value_enum, default_value = "true-bridge")]
    pub model_b: ModelKind,
}

#[derive(Debug, Clone, Args)]
pub struct FieldArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Fixed time t < T at which the field is evaluated.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub time: f64,
    /// Grid points per axis.
    #[arg(long, default_value_t = 21)]
    pub grid: usize,
    /// Rectangle x1_lo,x2_lo,x1_hi,x2_hi.
    #[arg(long, value_parser = parse_rect, allow_hyphen_values = true)]
    pub rect: Option<Rect>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct WeightsArgs {
    /// Directory of a previous `simulate` run.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub cutoff: f64,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    /// Comma-separated criterion numbers to run (default: all).
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<u8>,
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(format!("expected x,y but got '{s}'"));
    }
    let a = parts[0].parse::<f64>().map_err(|e| e.to_string())?;
    let b = parts[1].parse::<f64>().map_err(|e| e.to_string())?;
    if !(a.is_finite() && b.is_finite()) {
        return Err(format!("non-finite coordinates in '{s}'"));
    }
    Ok((a, b))
}

fn parse_rect(s: &str) -> std::result::Result<Rect, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    if v.len() != 4 {
        return Err(format!("expected x1_lo,x2_lo,x1_hi,x2_hi but got '{s}'"));
    }
    Ok(Rect {
        lo: EuclideanPoint::new(v[0], v[1]),
        hi: EuclideanPoint::new(v[2], v[3]),
    })
}

/// Floats are written with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_offset(k: Option<LatticeOffset>) -> (String, String) {
    match k {
        Some((a, b)) => (a.to_string(), b.to_string()),
        None => (String::new(), String::new()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: SimConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_b: Option<SimConfig>,
    pub artifacts: Vec<String>,
    pub wall_time: f64,
    pub version: String,
    pub workers: usize,
}

/// Reads a bare config block or a manifest and returns its config.
pub fn load_config(path: &Path) -> Result<SimConfig> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let block = match value.get("config") {
        Some(inner) => inner.clone(),
        None => value,
    };
    let cfg: SimConfig = serde_json::from_value(block)?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_manifest(dir: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let mut f = BufWriter::new(File::create(dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut f, manifest)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<RunManifest> {
    let clock = Instant::now();
    let run = &args.run;
    let mut config = if let Some(path) = &run.config {
        if run.uses_inline_flags() || args.paths.is_some() {
            return Err(Error::Config("--config cannot be combined with model flags".into()));
        }
        load_config(path)?
    } else {
        let kind = run.model.model.unwrap_or(ModelKind::FreeBm);
        let model = run.model.build(kind, false)?;
        run.sim_config(model, args.paths.unwrap_or(1))
    };
    if let Some(m) = args.thin {
        config.thin = m;
    }
    if args.cutoff.is_some() {
        config.weight_cutoff = args.cutoff;
        config.record_increments = true;
    }
    config.validate()?;

    let batch = with_workers(run.workers, || simulate_batch(&config))??;

    fs::create_dir_all(&run.out)?;
    let mut paths = create(&run.out, "paths.csv")?;
    writeln!(paths, "path_id,step,t,x1,x2")?;
    for (id, p) in batch.paths.iter().enumerate() {
        for ((step, t), x) in p.steps.iter().zip(&p.times).zip(&p.states) {
            writeln!(
                paths,
                "{id},{step},{},{},{}",
                fmt_f64(*t),
                fmt_f64(x.x1),
                fmt_f64(x.x2)
            )?;
        }
    }
    paths.flush()?;

    let mut ends = create(&run.out, "endpoints.csv")?;
    writeln!(ends, "path_id,xT1,xT2,k1,k2,unresolved,log_weight")?;
    for id in 0..batch.len() {
        let x = batch.terminal_points[id];
        let k = batch.limiting_lattice_points[id];
        let (k1, k2) = fmt_offset(k);
        let w = batch
            .log_weights
            .as_ref()
            .map(|ws| fmt_f64(ws[id]))
            .unwrap_or_default();
        writeln!(
            ends,
            "{id},{},{},{k1},{k2},{},{w}",
            fmt_f64(x.x1),
            fmt_f64(x.x2),
            u8::from(k.is_none())
        )?;
    }
    ends.flush()?;

    let manifest = RunManifest {
        command: "simulate".into(),
        config,
        config_b: None,
        artifacts: vec!["paths.csv".into(), "endpoints.csv".into()],
        wall_time: clock.elapsed().as_secs_f64(),
        version: VERSION.into(),
        workers: run.workers,
    };
    write_manifest(&run.out, &manifest)?;
    Ok(manifest)
}

pub fn cmd_compare(args: &CompareArgs) -> Result<AgreementReport> {
    let clock = Instant::now();
    let run = &args.run;
    let (config_a, config_b) = if let Some(path) = &run.config {
        if run.uses_inline_flags() {
            return Err(Error::Config("--config cannot be combined with model flags".into()));
        }
        let base = load_config(path)?;
        let rebuild = |kind: ModelKind| -> Result<SimConfig> {
            let mut flags = ModelArgs {
                model: Some(kind),
                sigma: Some(base.model.sigma),
                horizon: Some(base.model.horizon),
                target: None,
                endpoint: None,
                truncation: None,
                scale_sigma_sq: base.model.scale_proposed_drift_by_sigma_sq,
                cut_band: Some(base.model.cut_band),
            };
            if let Some(t) = base.model.lattice_target() {
                flags.target = Some((t.a.u1(), t.a.u2()));
            }
            if let DriftVariant::TrueBridge { truncation, .. } = base.model.variant {
                flags.truncation = Some(truncation);
            }
            if let DriftVariant::EuclideanBridge { endpoint } = base.model.variant {
                flags.endpoint = Some((endpoint.x1, endpoint.x2));
            }
            let mut cfg = base.clone();
            cfg.model = flags.build(kind, true)?;
            Ok(cfg)
        };
        (rebuild(args.model_a)?, rebuild(args.model_b)?)
    } else {
        let a = run.model.build(args.model_a, true)?;
        let b = run.model.build(args.model_b, true)?;
        (run.sim_config(a, args.pairs), run.sim_config(b, args.pairs))
    };

    let outcomes = with_workers(run.workers, || {
        coupled_outcomes(&config_a, &config_b, args.pairs)
    })??;
    let report = AgreementReport::from_outcomes(&outcomes, config_digest(&config_a, &config_b));

    fs::create_dir_all(&run.out)?;
    let mut f = create(&run.out, "agreement.csv")?;
    writeln!(f, "pair_id,k1_prop,k2_prop,k1_true,k2_true,agree")?;
    for o in &outcomes {
        let (a1, a2) = fmt_offset(o.k_a);
        let (b1, b2) = fmt_offset(o.k_b);
        writeln!(f, "{},{a1},{a2},{b1},{b2},{}", o.pair_id, u8::from(o.agree))?;
    }
    f.flush()?;

    let mut s = create(&run.out, "agreement_report.csv")?;
    writeln!(s, "n_pairs,n_agree,rate,wilson_low,wilson_high")?;
    writeln!(
        s,
        "{},{},{},{},{}",
        report.n_pairs,
        report.n_agree,
        fmt_f64(report.rate),
        fmt_f64(report.wilson_low),
        fmt_f64(report.wilson_high)
    )?;
    s.flush()?;

    let manifest = RunManifest {
        command: "compare".into(),
        config: config_a,
        config_b: Some(config_b),
        artifacts: vec!["agreement.csv".into(), "agreement_report.csv".into()],
        wall_time: clock.elapsed().as_secs_f64(),
        version: VERSION.into(),
        workers: run.workers,
    };
    write_manifest(&run.out, &manifest)?;
    Ok(report)
}

pub fn cmd_field(args: &FieldArgs) -> Result<usize> {
    let kind = args.model.model.unwrap_or(ModelKind::Proposed);
    let model = args.model.build(kind, false)?;
    let field = drift_field(&model, args.time, args.rect.unwrap_or_default(), args.grid)?;
    fs::create_dir_all(&args.out)?;
    let mut f = create(&args.out, "field.csv")?;
    writeln!(f, "x1,x2,b1,b2")?;
    for s in &field {
        writeln!(
            f,
            "{},{},{},{}",
            fmt_f64(s.x.x1),
            fmt_f64(s.x.x2),
            fmt_f64(s.drift.x1),
            fmt_f64(s.drift.x2)
        )?;
    }
    f.flush()?;
    Ok(field.len())
}

pub fn cmd_weights(args: &WeightsArgs) -> Result<Vec<f64>> {
    let manifest = load_manifest(&args.run)?;
    let mut config = manifest.config;
    config.record_increments = true;
    config.store_paths = false;
    config.weight_cutoff = Some(args.cutoff);
    let batch = with_workers(args.workers, || simulate_batch(&config))??;
    let weights = batch.log_weights.unwrap_or_default();

    let out = args.out.clone().unwrap_or_else(|| args.run.clone());
    fs::create_dir_all(&out)?;
    let mut f = create(&out, "weights.csv")?;
    writeln!(f, "path_id,log_weight")?;
    for (id, w) in weights.iter().enumerate() {
        writeln!(f, "{id},{}", fmt_f64(*w))?;
    }
    f.flush()?;
    Ok(weights)
}

/// Returns `true` when every selected check passes.
pub fn cmd_check(args: &CheckArgs) -> bool {
    let mut all = true;
    for c in acceptance::CRITERIA {
        if !args.only.is_empty() && !args.only.contains(&c.id) {
            continue;
        }
        let outcome = acceptance::run_criterion(c);
        println!("{outcome}");
        all &= outcome.passed;
    }
    all
}

pub fn execute(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Simulate(a) => {
            let m = cmd_simulate(a)?;
            println!(
                "simulated {} paths ({}) in {:.2}s -> {}",
                m.config.n_paths,
                m.config.model.variant.name(),
                m.wall_time,
                a.run.out.display()
            );
        }
        Command::Compare(a) => {
            let r = cmd_compare(a)?;
            println!(
                "agreement {}/{} = {:.4} (95% Wilson [{:.4}, {:.4}]) {}",
                r.n_agree, r.n_pairs, r.rate, r.wilson_low, r.wilson_high, r.config_digest
            );
        }
        Command::Field(a) => {
            let n = cmd_field(a)?;
            println!("wrote {n} field samples -> {}", a.out.display());
        }
        Command::Weights(a) => {
            let w = cmd_weights(a)?;
            println!("wrote {} log-weights", w.len());
        }
        Command::Check(a) => return Ok(cmd_check(a)),
    }
    Ok(true)
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> Result<bool>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    execute(&cli)
}
