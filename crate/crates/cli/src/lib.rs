//! The `gfpic` command line: training, calibration, evaluation, sweeps, baselines and plots.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gfpic_core::config::{parse_config, parse_config_str};
use gfpic_core::evalkit::{
    calibrate, sweep, sweep_with, Detector, PriorMode, SparseMethod, SparseReceiver, SweepAxis, SweepRow,
};
use gfpic_core::io::{load_checkpoint, results_csv, save_checkpoint, line_chart_svg, Checkpoint, Model, Table};
use gfpic_core::picnet::PicKind;
use gfpic_core::trainer::{self, system_codebook, validation_samples};
use gfpic_core::{Scheme, SystemConfig, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "gfpic", version, about = "Grant-free NOMA receivers: learned PIC, LASSO, AMP and FCNN")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Base seed; overrides the config file seed for training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 uses every core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Write 0 for every wall-time column so that output bytes are reproducible.
    #[arg(long, global = true)]
    pub no_timing: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a receiver and write a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch training log (CSV).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Calibrate the threshold on this many validation samples after training.
        #[arg(long)]
        calibrate: Option<usize>,
    },
    /// Set the decision threshold of a checkpoint so that P_fa = P_md on validation data.
    Calibrate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 50_000)]
        samples: usize,
        /// Write the calibrated checkpoint here instead of in place.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint at one activity probability.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 50_000)]
        samples: usize,
        /// Decision threshold; defaults to the stored one.
        #[arg(long)]
        tau_thr: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep one axis over a grid for checkpoints and/or classical baselines.
    Sweep {
        #[arg(long)]
        axis: String,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        /// Trained receivers (axes eps, rho, tau_thr).
        #[arg(long = "ckpt")]
        ckpts: Vec<PathBuf>,
        /// Classical baselines to include.
        #[arg(long = "method", value_enum, value_delimiter = ',')]
        methods: Vec<MethodArg>,
        /// System for baseline-only sweeps; checkpoints carry their own.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 50_000)]
        samples: usize,
        /// Validation samples for calibrating baseline thresholds at every grid point.
        #[arg(long, default_value_t = 50_000)]
        cal_samples: usize,
        #[arg(long, value_enum, default_value_t = PriorArg::Pooled)]
        prior: PriorArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate and evaluate a classical baseline.
    Baseline {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 50_000)]
        samples: usize,
        #[arg(long, default_value_t = 50_000)]
        cal_samples: usize,
        #[arg(long, value_enum, default_value_t = PriorArg::Pooled)]
        prior: PriorArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Line chart (SVG) of one CSV column against another, one series per framework.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Pilot,
    DataAided,
    NonCoherent,
    Fcnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Lasso,
    Amp,
    NcLasso,
    NcAmp,
}

impl MethodArg {
    fn split(self) -> (SparseMethod, Scheme) {
        match self {
            MethodArg::Lasso => (SparseMethod::Lasso, Scheme::Coherent),
            MethodArg::Amp => (SparseMethod::Amp, Scheme::Coherent),
            MethodArg::NcLasso => (SparseMethod::Lasso, Scheme::NonCoherent),
            MethodArg::NcAmp => (SparseMethod::Amp, Scheme::NonCoherent),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriorArg {
    Known,
    Pooled,
}

impl From<PriorArg> for PriorMode {
    fn from(p: PriorArg) -> Self {
        match p {
            PriorArg::Known => PriorMode::Known,
            PriorArg::Pooled => PriorMode::Pooled,
        }
    }
}

/// Parses `argv` (program name first) and runs the command. Returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.common.threads > 0 {
        // A pool may already exist when several commands run in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.common.threads).build_global();
    }
    let c = &cli.common;
    match cli.command {
        Command::Train {
            config,
            kind,
            out,
            log,
            calibrate: n_cal,
        } => cmd_train(c, config.as_deref(), kind, &out, log.as_deref(), n_cal),
        Command::Calibrate { ckpt, samples, out } => cmd_calibrate(c, &ckpt, samples, out.as_deref().unwrap_or(&ckpt)),
        Command::Eval {
            ckpt,
            eps,
            samples,
            tau_thr,
            out,
        } => cmd_eval(c, &ckpt, eps, samples, tau_thr, &out),
        Command::Sweep {
            axis,
            grid,
            ckpts,
            methods,
            config,
            samples,
            cal_samples,
            prior,
            out,
        } => {
            let axis = SweepAxis::parse(&axis)
                .with_context(|| format!("unknown sweep axis {axis:?} (eps, tau_coh, rho, tau_thr, J)"))?;
            let spec = SweepSpec {
                axis,
                grid: &grid,
                ckpts: &ckpts,
                methods: &methods,
                config: config.as_deref(),
                samples,
                cal_samples,
                prior: prior.into(),
            };
            cmd_sweep(c, &spec, &out)
        }
        Command::Baseline {
            method,
            config,
            eps,
            samples,
            cal_samples,
            prior,
            out,
        } => cmd_baseline(c, method, config.as_deref(), eps, samples, cal_samples, prior.into(), &out),
        Command::Plot { input, x, y, out } => {
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let svg = line_chart_svg(&Table::parse(&text)?, &x, &y)?;
            write(&out, svg.as_bytes())
        }
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<(SystemConfig, TrainConfig)> {
    match path {
        Some(p) => parse_config(p).with_context(|| format!("config {}", p.display())),
        None => Ok(parse_config_str("")?),
    }
}

fn detector(model: Model) -> Box<dyn Detector> {
    match model {
        Model::Pic(m) => Box::new(m),
        Model::Fcnn(m) => Box::new(m),
    }
}

fn cmd_train(
    c: &Common,
    config: Option<&Path>,
    kind: KindArg,
    out: &Path,
    log: Option<&Path>,
    n_cal: Option<usize>,
) -> Result<()> {
    let (mut sys, mut train) = load_config(config)?;
    if let Some(seed) = c.seed {
        train.seed = seed;
    }
    let pic = match kind {
        KindArg::Pilot => Some(PicKind::PilotOnly),
        KindArg::DataAided => Some(PicKind::DataAided),
        KindArg::NonCoherent => Some(PicKind::NonCoherent),
        KindArg::Fcnn => None,
    };
    if let Some(k) = pic {
        if sys.scheme != k.scheme() {
            eprintln!("note: --kind {} uses the {} scheme", k.as_str(), k.scheme().as_str());
            sys.scheme = k.scheme();
        }
    }
    sys.validate()?;
    train.validate(sys.n_stages)?;
    let (model, log_data) = match pic {
        Some(k) => {
            let (mut m, log) = trainer::train(k, &sys, &train)?;
            if let Some(n) = n_cal {
                let cal = trainer::calibrate_threshold(&mut m, &val_set(&sys, &train, n)?)?;
                eprintln!("threshold {:.6}  P_fa {:.4}  P_md {:.4}", cal.threshold, cal.p_fa, cal.p_md);
            }
            (Model::Pic(m), log)
        }
        None => {
            let (mut m, log) = trainer::train_fcnn_baseline(&sys, &train)?;
            if let Some(n) = n_cal {
                let cal = trainer::calibrate_fcnn(&mut m, &val_set(&sys, &train, n)?)?;
                eprintln!("threshold {:.6}  P_fa {:.4}  P_md {:.4}", cal.threshold, cal.p_fa, cal.p_md);
            }
            (Model::Fcnn(m), log)
        }
    };
    if let Some(last) = log_data.records.last() {
        eprintln!("trained {} epochs, final mean loss {:.5}", last.epoch, last.mean_loss);
    }
    if let Some(path) = log {
        write(path, log_data.to_csv(!c.no_timing).as_bytes())?;
    }
    save_checkpoint(&Checkpoint { model, sys, train }, out).with_context(|| format!("writing {}", out.display()))
}

fn val_set(sys: &SystemConfig, train: &TrainConfig, n: usize) -> Result<Vec<gfpic_core::sysmodel::Sample>> {
    let cb = system_codebook(sys)?;
    let t = TrainConfig {
        n_val_samples: n,
        ..train.clone()
    };
    Ok(validation_samples(sys, &t, &cb)?)
}

fn cmd_calibrate(c: &Common, ckpt: &Path, n: usize, out: &Path) -> Result<()> {
    let mut ck = load_checkpoint(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let mut train = ck.train.clone();
    if let Some(seed) = c.seed {
        train.seed = seed;
    }
    let samples = val_set(&ck.sys, &train, n)?;
    let cal = match &mut ck.model {
        Model::Pic(m) => trainer::calibrate_threshold(m, &samples)?,
        Model::Fcnn(m) => trainer::calibrate_fcnn(m, &samples)?,
    };
    println!(
        "threshold {:.6}  P_fa {:.4}  P_md {:.4}  ({} bisection steps)",
        cal.threshold, cal.p_fa, cal.p_md, cal.iterations
    );
    save_checkpoint(&ck, out).with_context(|| format!("writing {}", out.display()))
}

fn cmd_eval(c: &Common, ckpt: &Path, eps: Option<f64>, n: usize, tau: Option<f64>, out: &Path) -> Result<()> {
    let ck = load_checkpoint(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let eps = eps.unwrap_or(ck.sys.activity_prob);
    let mut det = detector(ck.model);
    if let Some(t) = tau {
        det.set_threshold(t);
    }
    let rows = sweep(SweepAxis::Eps, &[eps], &ck.sys, std::slice::from_mut(&mut det), n, c.seed.unwrap_or(0))?;
    print_rows(&rows);
    write(out, results_csv(&rows, !c.no_timing).as_bytes())
}

fn print_rows(rows: &[SweepRow]) {
    for r in rows {
        println!(
            "{:<16} eps {:<5} P_fa {:.4}  P_md {:.4}  P_err {:.4}  NMSE {:>7.2} dB  BER {:.4}",
            r.framework, r.sys.activity_prob, r.report.p_fa, r.report.p_md, r.report.p_err, r.report.nmse_db, r.report.ber
        );
    }
}

fn baseline(
    method: MethodArg,
    sys: &SystemConfig,
    train: &TrainConfig,
    prior: PriorMode,
    cal_samples: usize,
) -> Result<Box<dyn Detector>> {
    let (m, scheme) = method.split();
    if sys.scheme != scheme {
        bail!("method {method:?} needs the {} scheme; the system uses {}", scheme.as_str(), sys.scheme.as_str());
    }
    let cb = system_codebook(sys)?;
    let mut det = SparseReceiver::new(m, sys, cb)?;
    det.prior = prior;
    let cal = calibrate(&mut det, &val_set(sys, train, cal_samples)?)?;
    eprintln!(
        "{}: threshold {:.6}  P_fa {:.4}  P_md {:.4}",
        det.framework(),
        cal.threshold,
        cal.p_fa,
        cal.p_md
    );
    Ok(Box::new(det))
}

#[allow(clippy::too_many_arguments)]
fn cmd_baseline(
    c: &Common,
    method: MethodArg,
    config: Option<&Path>,
    eps: Option<f64>,
    n: usize,
    cal_samples: usize,
    prior: PriorMode,
    out: &Path,
) -> Result<()> {
    let (mut sys, mut train) = load_config(config)?;
    sys.scheme = method.split().1;
    sys.validate()?;
    if let Some(seed) = c.seed {
        train.seed = seed;
    }
    let eps = eps.unwrap_or(sys.activity_prob);
    let mut dets = vec![baseline(method, &sys, &train, prior, cal_samples)?];
    let rows = sweep(SweepAxis::Eps, &[eps], &sys, &mut dets, n, train.seed)?;
    print_rows(&rows);
    write(out, results_csv(&rows, !c.no_timing).as_bytes())
}

struct SweepSpec<'a> {
    axis: SweepAxis,
    grid: &'a [f64],
    ckpts: &'a [PathBuf],
    methods: &'a [MethodArg],
    config: Option<&'a Path>,
    samples: usize,
    cal_samples: usize,
    prior: PriorMode,
}

fn cmd_sweep(c: &Common, s: &SweepSpec, out: &Path) -> Result<()> {
    if s.ckpts.is_empty() && s.methods.is_empty() {
        bail!("nothing to sweep: pass --ckpt and/or --method");
    }
    let seed = c.seed.unwrap_or(0);
    let mut checkpoints = Vec::new();
    for p in s.ckpts {
        checkpoints.push(load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?);
    }
    let (base_sys, base_train) = match (checkpoints.first(), s.config) {
        (Some(ck), None) => (ck.sys.clone(), ck.train.clone()),
        _ => load_config(s.config)?,
    };
    let rows = if s.axis.reuses_models() {
        let mut dets: Vec<Box<dyn Detector>> = Vec::new();
        for ck in checkpoints {
            dets.push(detector(ck.model));
        }
        for &m in s.methods {
            let mut sys = base_sys.clone();
            sys.scheme = m.split().1;
            dets.push(baseline(m, &sys, &base_train, s.prior, s.cal_samples)?);
        }
        sweep(s.axis, s.grid, &base_sys, &mut dets, s.samples, seed)?
    } else {
        if !checkpoints.is_empty() {
            bail!("axis {:?} changes the network dimensions; trained checkpoints cannot be swept over it", s.axis);
        }
        let mut rows = Vec::new();
        for &m in s.methods {
            let mut sys = base_sys.clone();
            sys.scheme = m.split().1;
            rows.extend(sweep_with(s.axis, s.grid, &sys, s.samples, seed, |point| {
                baseline(m, point, &base_train, s.prior, s.cal_samples)
                    .map(|d| vec![d])
                    .map_err(|e| gfpic_core::Error::InvalidArgument(format!("{e:#}")))
            })?);
        }
        rows
    };
    print_rows(&rows);
    write(out, results_csv(&rows, !c.no_timing).as_bytes())
}
