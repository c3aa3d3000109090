//! Command-line entry points.
//!
//! Each subcommand is a [`Command`] registered by name in a
//! [`CommandRegistry`]. Failures print a single `error: <command>: <cause>`
//! line and exit nonzero.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser};

use crate::autodiff::gradcheck::{check_case, GradCheckRegistry};
use crate::autodiff::{Graph, Tensor};
use crate::bench::{benchmark_sets, mu_sweep, run_benchmark, sweep_csv};
use crate::config::Config;
use crate::data::{
    generate_synthetic, load_sequence, parse_groundtruth, save_sequence, write_boxes, DirFrames, GROUNDTRUTH_FILE,
};
use crate::eval::{evaluate, report_csv, write_reports};
use crate::model::{load_checkpoint, ArchitectureSpec};
use crate::tracker::Tracker;
use crate::trainer::{train, TrainOutputs};

/// Exit code for usage errors (unknown subcommand or flag).
pub const EXIT_USAGE: i32 = 2;
/// Exit code for every other failure.
pub const EXIT_FAILURE: i32 = 1;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.txt";

pub trait Command {
    fn name(&self) -> &'static str;
    fn about(&self) -> &'static str;
    /// `args` excludes the program and subcommand names.
    fn run(&self, args: &[String], out: &mut dyn Write) -> Result<()>;
}

#[derive(Default)]
pub struct CommandRegistry {
    commands: BTreeMap<&'static str, Box<dyn Command>>,
}

impl CommandRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_builtin() -> Self {
        let mut r = Self::new();
        r.register(Box::new(TrainCmd));
        r.register(Box::new(TrackCmd));
        r.register(Box::new(EvalCmd));
        r.register(Box::new(PruneReportCmd));
        r.register(Box::new(SynthCmd));
        r.register(Box::new(SelftestCmd));
        r.register(Box::new(BenchCmd));
        r.register(Box::new(SweepCmd));
        r
    }

    pub fn register(&mut self, cmd: Box<dyn Command>) {
        self.commands.insert(cmd.name(), cmd);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Command> {
        self.commands.get(name).map(|c| c.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.commands.keys().copied()
    }

    pub fn usage(&self) -> String {
        let mut s = String::from("usage: drmim <command> [options]\n\ncommands:\n");
        for c in self.commands.values() {
            let _ = writeln!(s, "  {:<14}{}", c.name(), c.about());
        }
        s.push_str("\nrun 'drmim <command> --help' for the options of one command\n");
        s
    }
}

/// Marks errors that should also print usage text.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
struct UsageError {
    message: String,
    usage: String,
}

fn one_line(e: &anyhow::Error) -> String {
    let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
    chain.join(": ").split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Runs `argv` (program name first) and returns the exit code.
pub fn run(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let registry = CommandRegistry::with_builtin();
    let Some(name) = argv.get(1) else {
        let _ = write!(err, "{}", registry.usage());
        let _ = writeln!(err, "error: usage: missing command");
        return EXIT_USAGE;
    };
    if name == "--help" || name == "-h" || name == "help" {
        let _ = write!(out, "{}", registry.usage());
        return 0;
    }
    let Some(cmd) = registry.get(name) else {
        let _ = write!(err, "{}", registry.usage());
        let _ = writeln!(err, "error: usage: unknown command '{name}'");
        return EXIT_USAGE;
    };
    match cmd.run(&argv[2..], out) {
        Ok(()) => 0,
        Err(e) => match e.downcast_ref::<UsageError>() {
            Some(u) if u.usage.is_empty() => {
                // `--help` and `--version` land here with their text as the message.
                let _ = write!(out, "{}", u.message);
                0
            }
            Some(u) => {
                let _ = write!(err, "{}", u.usage);
                let _ = writeln!(err, "error: usage: {name}: {}", u.message);
                EXIT_USAGE
            }
            None => {
                let _ = writeln!(err, "error: {name}: {}", one_line(&e));
                EXIT_FAILURE
            }
        },
    }
}

fn parse_args<T: Parser>(name: &str, args: &[String]) -> Result<T> {
    let argv = std::iter::once(format!("drmim {name}")).chain(args.iter().cloned());
    T::try_parse_from(argv).map_err(|e| {
        use clap::error::ErrorKind;
        let text = e.render().to_string();
        let informational = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
        let (message, usage) = if informational {
            (text, String::new())
        } else {
            let first = text.lines().next().unwrap_or("invalid arguments");
            let message = first.trim_start_matches("error: ").to_string();
            (message, text)
        };
        anyhow::Error::new(UsageError { message, usage })
    })
}

/// Options shared by commands that read a run configuration.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single `key=value` override, applied after the file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the `mu` key.
    #[arg(long)]
    mu: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config> {
        let mut c = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        for o in &self.overrides {
            let (k, v) = o.split_once('=').with_context(|| format!("override '{o}' is not key=value"))?;
            c.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            c.train.seed = s;
            c.synth.seed = s;
        }
        if let Some(mu) = self.mu {
            c.train.mu = mu;
        }
        Ok(c)
    }
}

struct TrainCmd;

/// Trains a model and writes checkpoint, log and the resolved config.
#[derive(Parser, Debug)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Output directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Sequence directories to train on; the synthetic training split is
    /// generated when none are given.
    #[arg(long = "data")]
    data: Vec<PathBuf>,
    /// Continue from this checkpoint up to `steps`.
    #[arg(long)]
    resume: Option<PathBuf>,
}

impl Command for TrainCmd {
    fn name(&self) -> &'static str {
        "train"
    }

    fn about(&self) -> &'static str {
        "train on sequence directories or the synthetic split"
    }

    fn run(&self, args: &[String], out: &mut dyn Write) -> Result<()> {
        let a: TrainArgs = parse_args(self.name(), args)?;
        let c = a.cfg.resolve()?;
        c.train.validate()?;
        let dataset = if a.data.is_empty() {
            benchmark_sets(&c.bench, &c.synth)?.0
        } else {
            a.data.iter().map(|d| load_sequence(d)).collect::<Result<Vec<_>, _>>()?
        };
        fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
        let config_path = a.out.join(CONFIG_FILE);
        fs::write(&config_path, c.render()).with_context(|| format!("writing {}", config_path.display()))?;
        let resume = match &a.resume {
            Some(p) => Some(load_checkpoint(p, &c.train.spec()?)?),
            None => None,
        };
        let outputs = TrainOutputs { checkpoint: a.out.join(CHECKPOINT_FILE), log: a.out.join(LOG_FILE) };
        let summary = train(&c.train, &dataset, Some(&outputs), resume)?;
        if let Some(last) = summary.records.last() {
            writeln!(out, "step {} total {:.6} cr {:.6}", last.step, last.total, last.cr)?;
        }
        writeln!(out, "checkpoint {}", outputs.checkpoint.display())?;
        Ok(())
    }
}

struct TrackCmd;

/// Tracks one sequence directory from its first ground-truth box.
#[derive(Parser, Debug)]
struct TrackArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory with numbered frames and groundtruth.txt.
    #[arg(long)]
    sequence: PathBuf,
    /// Result file, one `x,y,w,h` line per frame.
    #[arg(long, default_value = "result.txt")]
    out: PathBuf,
}

fn load_model(c: &Config, checkpoint: &Path) -> Result<(ArchitectureSpec, crate::model::ModelParams)> {
    let spec = c.train.spec()?;
    let params = load_checkpoint(checkpoint, &spec).with_context(|| format!("loading {}", checkpoint.display()))?;
    Ok((spec, params))
}

impl Command for TrackCmd {
    fn name(&self) -> &'static str {
        "track"
    }

    fn about(&self) -> &'static str {
        "one-pass tracking of a sequence directory"
    }

    fn run(&self, args: &[String], out: &mut dyn Write) -> Result<()> {
        let a: TrackArgs = parse_args(self.name(), args)?;
        let c = a.cfg.resolve()?;
        let (spec, params) = load_model(&c, &a.checkpoint)?;
        let tracker = Tracker::new(&spec, &params, c.tracker.clone())?;
        let mut frames = DirFrames::open(&a.sequence)?;
        let first = *frames.boxes.first().context("empty ground truth")?;
        let result = tracker.track_sequence(&mut frames, &first)?;
        if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        write_boxes(&result.boxes, &a.out)?;
        let fps = crate::eval::fps_report(&result.times)?;
        writeln!(out, "frames {} fps {fps:.1} result {}", result.boxes.len(), a.out.display())?;
        Ok(())
    }
}

struct EvalCmd;

/// Scores result files against ground truth and writes CSV and SVG reports.
#[derive(Parser, Debug)]
struct EvalArgs {
    /// Result files, paired in order with `--gt`.
    #[arg(long = "pred", required = true)]
    pred: Vec<PathBuf>,
    /// Ground-truth files or sequence directories.
    #[arg(long = "gt", required = true)]
    gt: Vec<PathBuf>,
    /// Report directory.
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

fn read_boxes(path: &Path) -> Result<(String, Vec<crate::geometry::BBox>)> {
    let (file, name) = if path.is_dir() {
        (path.join(GROUNDTRUTH_FILE), path.file_name())
    } else {
        (path.to_path_buf(), path.file_stem())
    };
    let name = name.map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "sequence".into());
    let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    Ok((name, parse_groundtruth(&text, &file.display().to_string())?))
}

impl Command for EvalCmd {
    fn name(&self) -> &'static str {
        "eval"
    }

    fn about(&self) -> &'static str {
        "precision/success report from result and ground-truth files"
    }

    fn run(&self, args: &[String], out: &mut dyn Write) -> Result<()> {
        let a: EvalArgs = parse_args(self.name(), args)?;
        ensure!(a.pred.len() == a.gt.len(), "{} --pred files for {} --gt entries", a.pred.len(), a.gt.len());
        let mut results = Vec::new();
        for (p, g) in a.pred.iter().zip(&a.gt) {
            let (_, pred) = read_boxes(p)?;
            let (name, gt) = read_boxes(g)?;
            results.push(evaluate(&name, &pred, &gt, None).with_context(|| format!("sequence {name}"))?);
        }
        write_reports(&results, &a.out)?;
        write!(out, "{}", report_csv(&results)?)?;
        Ok(())
    }
}

struct PruneReportCmd;

/// Per-layer channel and parameter counts at a pruning ratio.
#[derive(Parser, Debug)]
struct PruneReportArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Also write the table to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Tab-separated table: layer, unpruned and pruned output channels,
/// unpruned and pruned parameters, then a total row.
pub fn prune_table(spec: &ArchitectureSpec, mu: f64) -> String {
    let mut s = String::from("layer\tbase_channels\tchannels\tbase_params\tparams\n");
    for l in spec.layers() {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            l.name,
            l.out.base(),
            l.out.resolve(mu),
            l.param_count(0.0),
            l.param_count(mu)
        );
    }
    let (base, pruned) = (spec.param_count(0.0), spec.param_count(mu));
    let _ = writeln!(s, "total\t\t\t{base}\t{pruned}");
    let _ = writeln!(s, "# mu {mu} keeps {:.4} of the parameters", pruned as f64 / base as f64);
    s
}

impl Command for PruneReportCmd {
    fn name(&self) -> &'static str {
        "prune-report"
    }

    fn about(&self) -> &'static str {
        "per-layer channel counts at pruning ratio mu"
    }

    fn run(&self, args: &[String], out: &mut dyn Write) -> Result<()> {
        let a: PruneReportArgs = parse_args(self.name(), args)?;
        let c = a.cfg.resolve()?;
        crate::model::PruneConfig::new(c.train.mu)?;
        let table = prune_table(&c.train.spec()?, c.train.mu);
        if let Some(p) = &a.out {
            fs::write(p, &table).with_context(|| format!("writing {}", p.display()))?;
        }
        write!(out, "{table}")?;
        Ok(())
    }
}

struct SynthCmd;

/// Writes one synthetic sequence directory.
#[derive(Parser, Debug)]
struct SynthArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value = "synth")]
    out: PathBuf,
}

impl Command for SynthCmd {
    fn name(&self) -> &'static str {
        "synth"
    }

    fn about(&self) -> &'static str {
        "render a synthetic sequence directory"
    }

    fn run(&self, args: &[String], out: &mut dyn Write) -> Result<()> {
        let a: SynthArgs = parse_args(self.name(), args)?;
        let c = a.cfg.resolve()?;
        let seq = generate_synthetic(&c.synth)?;
        save_sequence(&seq, &a.out)?;
        writeln!(out, "{} frames {}", seq.len(), a.out.display())?;
        Ok(())
    }
}

struct SelftestCmd;

/// Finite-difference checks of every registered operation and loss, then
/// estimator and metric invariants.
#[derive(Parser, Debug)]
struct SelftestArgs {
    /// Largest accepted relative gradient error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Primitive operations and composite losses in one registry.
pub fn full_gradcheck_registry() -> GradCheckRegistry {
    let mut r = GradCheckRegistry::with_primitives();
    for case in crate::loss::gradcheck_cases() {
        r.register(case);
    }
    r
}

fn invariant_checks(seed: u64) -> Result<Vec<(&'static str, bool)>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let jsd = |j: f64, m: f64| -> Result<f64> {
        let mut g = Graph::new();
        let (jv, mv) = (g.scalar(j), g.scalar(m));
        let v = crate::loss::jsd_mi(&mut g, jv, mv)?;
        Ok(g.item(v))
    };
    checks.push(("jsd_at_zero", (jsd(0.0, 0.0)? + 2.0 * std::f64::consts::LN_2).abs() < 1e-12));
    checks.push(("jsd_saturates", jsd(60.0, -60.0)?.abs() < 1e-12));
    let mut bounded = true;
    for _ in 0..1000 {
        bounded &= jsd(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0))? <= 0.0;
    }
    checks.push(("jsd_nonpositive", bounded));

    let mut xcorr_ok = true;
    for _ in 0..10 {
        let (c, h, w) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
        let (hh, ww) = (h + rng.random_range(0..4), w + rng.random_range(0..4));
        let k = Tensor::randn(&[c, h, w], 1.0, &mut rng);
        let x = Tensor::randn(&[c, hh, ww], 1.0, &mut rng);
        let mut g = Graph::new();
        let (kv, xv) = (g.constant(k.clone()), g.constant(x.clone()));
        let y = g.depthwise_xcorr(kv, xv)?;
        let y = g.value(y).data().to_vec();
        let (oh, ow) = (hh - h + 1, ww - w + 1);
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = 0.0;
                    for u in 0..h {
                        for v in 0..w {
                            s += k.data()[(ch * h + u) * w + v] * x.data()[(ch * hh + i + u) * ww + j + v];
                        }
                    }
                    xcorr_ok &= (y[(ch * oh + i) * ow + j] - s).abs() < 1e-12;
                }
            }
        }
    }
    checks.push(("xcorr_matches_sliding_window", xcorr_ok));

    let gt: Vec<_> = (0..10).map(|i| crate::geometry::BBox::new(i as f64, 0.0, 10.0, 10.0)).collect();
    let r = evaluate("identity", &gt, &gt, None)?;
    checks.push(("metrics_on_perfect_prediction", r.precision20 == 1.0 && (r.auc - 20.0 / 21.0).abs() < 1e-12));
    Ok(checks)
}

impl Command for SelftestCmd {
    fn name(&self) -> &'static str {
        "selftest"
    }

    fn about(&self) -> &'static str {
        "gradient checks and invariant suite"
    }

    fn run(&self, args: &[String], out: &mut dyn Write) -> Result<()> {
        let a: SelftestArgs = parse_args(self.name(), args)?;
        ensure!(a.tol > 0.0 && a.tol.is_finite(), "tolerance must be positive, got {}", a.tol);
        let mut failed = Vec::new();
        for case in full_gradcheck_registry().iter() {
            let rep = check_case(case, a.seed, a.instances)?;
            let ok = rep.passed(a.tol);
            writeln!(
                out,
                "{} grad {} max_rel_err {:.3e}",
                if ok { "PASS" } else { "FAIL" },
                rep.name,
                rep.max_rel_err
            )?;
            if !ok {
                failed.push(rep.name);
            }
        }
        for (name, ok) in invariant_checks(a.seed)? {
            writeln!(out, "{} invariant {name}", if ok { "PASS" } else { "FAIL" })?;
            if !ok {
                failed.push(name.to_string());
            }
        }
        if !failed.is_empty() {
            bail!("{} checks failed: {}", failed.len(), failed.join(","));
        }
        Ok(())
    }
}

struct BenchCmd;

/// Trains on the synthetic split and evaluates on its held-out part.
#[derive(Parser, Debug)]
struct BenchArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value = "bench")]
    out: PathBuf,
}

impl Command for BenchCmd {
    fn name(&self) -> &'static str {
        "bench"
    }

    fn about(&self) -> &'static str {
        "synthetic train/evaluate run with reports"
    }

    fn run(&self, args: &[String], out: &mut dyn Write) -> Result<()> {
        let a: BenchArgs = parse_args(self.name(), args)?;
        let c = a.cfg.resolve()?;
        fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
        fs::write(a.out.join(CONFIG_FILE), c.render())?;
        let outputs = TrainOutputs { checkpoint: a.out.join(CHECKPOINT_FILE), log: a.out.join(LOG_FILE) };
        let report = run_benchmark(&c, Some(&outputs))?;
        write_reports(&report.results, &a.out)?;
        let o = &report.overall;
        writeln!(
            out,
            "precision20 {:.4} auc {:.4} fps {:.1} train_s {:.1} eval_s {:.1}",
            o.precision20,
            o.auc,
            o.fps.unwrap_or(0.0),
            report.train_secs,
            report.eval_secs
        )?;
        Ok(())
    }
}

struct SweepCmd;

/// Pruning-ratio sweep on the synthetic benchmark.
#[derive(Parser, Debug)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Comma-separated pruning ratios.
    #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8", value_delimiter = ',')]
    mus: Vec<f64>,
    /// CSV output file.
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

impl Command for SweepCmd {
    fn name(&self) -> &'static str {
        "sweep"
    }

    fn about(&self) -> &'static str {
        "pruning ratio vs precision CSV"
    }

    fn run(&self, args: &[String], out: &mut dyn Write) -> Result<()> {
        let a: SweepArgs = parse_args(self.name(), args)?;
        let c = a.cfg.resolve()?;
        let rows = mu_sweep(&c, &a.mus)?;
        let csv = sweep_csv(&rows);
        fs::write(&a.out, &csv).with_context(|| format!("writing {}", a.out.display()))?;
        write!(out, "{csv}")?;
        Ok(())
    }
}
