//! The `efnet` command line: `train`, `eval`, `bench` and `verify`.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 data error, 4 divergence,
//! 5 op-count mismatch, 6 verification failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::constructions::{
    verify_relu_conversion, verify_sign_network, verify_superposition, SuiteReport,
};
use crate::data::{load_mnist, Checkpoint, Dataset, MetricsLog, RunRecord, Split};
use crate::error::Error;
use crate::layers::{Activation, GradMode};
use crate::network::{Layer, Network, Operator};
use crate::ops::{self, theoretical_counts, LayerDesc, OpCounter};
use crate::tensor::Rng;
use crate::training::{
    confusion, sgd_train, Arch, EpochMetrics, MetricsSink, SgdConfig, DEFAULT_BATCH_SIZE,
    XOR_EPOCHS,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_COUNT_MISMATCH: i32 = 5;
pub const EXIT_VERIFY_FAILED: i32 = 6;

pub const DEFAULT_TRAIN_LIMIT: usize = 10_000;
pub const DEFAULT_TEST_LIMIT: usize = 2_000;
pub const DEFAULT_EPOCHS: usize = 5;

#[derive(Parser, Debug)]
#[command(
    name = "efnet",
    version,
    about = "Additive (multiplication-light) neural networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a network, write its metrics log and checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on its test set.
    Eval(EvalArgs),
    /// Compare measured and predicted operation counts per layer shape.
    Bench(BenchArgs),
    /// Fuzz the sign network, ReLU conversion and superposition builders.
    Verify(VerifyArgs),
}

/// A sample limit: a count or `all`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limit(pub Option<usize>);

impl FromStr for Limit {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Limit(None));
        }
        s.parse()
            .map(|n| Limit(Some(n)))
            .map_err(|_| format!("`{s}` is neither a count nor `all`"))
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// xor, mlp2, mlp3 or lenet.
    #[arg(long)]
    pub arch: Arch,
    /// ef or classic, used by every hidden layer.
    #[arg(long, default_value = "ef")]
    pub operator: Operator,
    /// relu, tanh, sigmoid or identity [default: tanh for lenet, relu otherwise; xor is always relu]
    #[arg(long)]
    pub activation: Option<Activation>,
    /// Learning rate [default: 0.01 for xor, 0.3 for lenet, 0.005 otherwise]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 1000 for xor, 5 otherwise]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 4 (full batch) for xor, 150 otherwise]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seeds initialization, shuffling and the data subset.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// paper-literal or sign-consistent weight gradient.
    #[arg(long, default_value = "paper-literal")]
    pub grad_mode: GradMode,
    /// Directory holding the four MNIST IDX files.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Training samples drawn from the shuffled MNIST train split, or `all`.
    #[arg(long, default_value = "10000")]
    pub train_limit: Limit,
    /// Test samples drawn from the shuffled MNIST test split, or `all`.
    #[arg(long, default_value = "2000")]
    pub test_limit: Limit,
    /// Directory for the default metrics and checkpoint paths.
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
    /// Metrics log path [default: <out-dir>/<arch>-<operator>-s<seed>.metrics.jsonl]
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Checkpoint path [default: <out-dir>/<arch>-<operator>-s<seed>.checkpoint.json]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory holding the MNIST IDX files (not needed for xor).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Test subset size or `all` [default: as recorded in the checkpoint]
    #[arg(long)]
    pub test_limit: Option<Limit>,
    /// Subset seed [default: as recorded in the checkpoint]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Layer shape to bench, repeatable: additive:DxM, additive1:DxM (unit
    /// scale), classic:DxM, additive-conv:CxHxW/KxF[/S], classic-conv:...,
    /// maxpool:CxHxW [default: a sweep over d in {16,784}, M in {10,300}
    /// and the lenet conv shapes]
    #[arg(long = "shape")]
    pub shapes: Vec<LayerDesc>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Input dimensions, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,5")]
    pub dims: Vec<usize>,
    /// Cases per dimension.
    #[arg(long, default_value_t = 1000)]
    pub cases: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// all, sign, relu or superposition.
    #[arg(long, default_value = "all")]
    pub suite: String,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parameter(_) => EXIT_CONFIG,
            Error::Divergence { .. } => EXIT_DIVERGENCE,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

type CliResult = std::result::Result<(), CliError>;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Bench(a) => cmd_bench(&a, out),
        Command::Verify(a) => cmd_verify(&a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

struct TrainDefaults {
    lr: f64,
    epochs: usize,
    batch_size: usize,
    activation: Activation,
}

fn defaults(arch: Arch) -> TrainDefaults {
    match arch {
        Arch::Xor => TrainDefaults {
            lr: 0.01,
            epochs: XOR_EPOCHS,
            batch_size: 4,
            activation: Activation::Relu,
        },
        Arch::Lenet => TrainDefaults {
            lr: 0.3,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            activation: Activation::Tanh,
        },
        Arch::Mlp2 | Arch::Mlp3 => TrainDefaults {
            lr: 0.005,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            activation: Activation::Relu,
        },
    }
}

fn require_data_dir<'a>(dir: &'a Option<PathBuf>, arch: Arch) -> Result<&'a Path, CliError> {
    dir.as_deref().ok_or_else(|| {
        CliError::data(format!(
            "--data-dir is required for arch {arch}: point it at the MNIST IDX files"
        ))
    })
}

/// Train and test sets for a run. MNIST subsets are the first samples of a
/// seeded shuffle of each split.
pub fn load_run_data(
    arch: Arch,
    data_dir: Option<&Path>,
    train_limit: Option<usize>,
    test_limit: Option<usize>,
    seed: u64,
) -> crate::Result<(Dataset, Dataset)> {
    if arch == Arch::Xor {
        return Ok((Dataset::xor(), Dataset::xor()));
    }
    let dir = data_dir.ok_or_else(|| Error::param("MNIST architectures need a data directory"))?;
    let train = load_mnist(dir, Split::Train)?.limited(train_limit, seed);
    let test = load_mnist(dir, Split::Test)?.limited(test_limit, seed);
    Ok((train, test))
}

struct EchoSink<'a> {
    log: MetricsLog,
    out: &'a mut dyn Write,
}

impl MetricsSink for EchoSink<'_> {
    fn record(&mut self, m: &EpochMetrics) -> crate::Result<()> {
        self.log.append(m)?;
        let _ = writeln!(
            self.out,
            "epoch {:>4}  loss {:.6}  train_acc {:.4}  test_acc {:.4}  mults {}  adds {}",
            m.epoch, m.train_loss, m.train_acc, m.test_acc, m.mult_count, m.add_count
        );
        Ok(())
    }
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> CliResult {
    let d = defaults(a.arch);
    let cfg = SgdConfig {
        learning_rate: a.lr.unwrap_or(d.lr),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        epochs: a.epochs.unwrap_or(d.epochs),
        seed: a.seed,
        grad_mode: a.grad_mode,
    };
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(CliError::config(format!(
            "--lr must be positive, got {}",
            cfg.learning_rate
        )));
    }
    cfg.validate()?;
    let activation = if a.arch == Arch::Xor {
        Activation::Relu
    } else {
        a.activation.unwrap_or(d.activation)
    };
    let data_dir = if a.arch.uses_mnist() {
        Some(require_data_dir(&a.data_dir, a.arch)?)
    } else {
        None
    };

    let stem = format!("{}-{}-s{}", a.arch, a.operator, a.seed);
    let metrics_path = a
        .metrics
        .clone()
        .unwrap_or_else(|| a.out_dir.join(format!("{stem}.metrics.jsonl")));
    let ckpt_path = a
        .checkpoint
        .clone()
        .unwrap_or_else(|| a.out_dir.join(format!("{stem}.checkpoint.json")));

    let (train, test) = load_run_data(a.arch, data_dir, a.train_limit.0, a.test_limit.0, a.seed)?;
    let net = a.arch.build(a.operator, activation, a.seed)?;
    writeln!(
        out,
        "arch {}  operator {}  activation {}  params {}  train {}  test {}  lr {}  batch {}  epochs {}  grad {}",
        a.arch,
        a.operator,
        activation,
        net.param_count(),
        train.len(),
        test.len(),
        cfg.learning_rate,
        cfg.batch_size,
        cfg.epochs,
        cfg.grad_mode
    )?;

    for p in [&metrics_path, &ckpt_path] {
        if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::data(format!("{}: {e}", parent.display())))?;
        }
    }
    let mut sink = EchoSink {
        log: MetricsLog::create(&metrics_path)?,
        out: &mut *out,
    };
    let (net, history) = sgd_train(net, &train, &test, &cfg, &mut sink)?;
    let last = history.last().expect("at least one epoch");

    let record = RunRecord {
        arch: a.arch.to_string(),
        operator: a.operator.to_string(),
        activation: activation.to_string(),
        sgd: cfg,
        train_limit: a.train_limit.0,
        test_limit: a.test_limit.0,
        data_seed: a.seed,
        final_test_acc: Some(last.test_acc),
    };
    Checkpoint::new(net, Some(record)).save(&ckpt_path)?;
    writeln!(out, "test accuracy: {:?}", last.test_acc)?;
    writeln!(out, "multiplications: {}", last.mult_count)?;
    writeln!(out, "metrics: {}", metrics_path.display())?;
    writeln!(out, "checkpoint: {}", ckpt_path.display())?;
    Ok(())
}

fn infer_arch(net: &Network) -> Result<Arch, CliError> {
    match net.input_len() {
        2 => Ok(Arch::Xor),
        784 => Ok(Arch::Mlp2),
        n => Err(CliError::data(format!(
            "cannot tell which data a {n}-input network expects"
        ))),
    }
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let arch = match &ckpt.config {
        Some(r) => r.arch.parse::<Arch>()?,
        None => infer_arch(&ckpt.network)?,
    };
    let recorded_limit = ckpt
        .config
        .as_ref()
        .map_or(Some(DEFAULT_TEST_LIMIT), |r| r.test_limit);
    let test_limit = a.test_limit.map_or(recorded_limit, |l| l.0);
    let seed = a
        .seed
        .or(ckpt.config.as_ref().map(|r| r.data_seed))
        .unwrap_or(1);

    let test = if arch.uses_mnist() {
        let dir = require_data_dir(&a.data_dir, arch)?;
        load_mnist(dir, Split::Test)?.limited(test_limit, seed)
    } else {
        Dataset::xor()
    };
    let net = &ckpt.network;
    let operator = net
        .hidden_operator()
        .map_or_else(|| "mixed".to_string(), |o| o.to_string());
    let c = confusion(net, &test)?;
    writeln!(out, "operator: {operator}")?;
    writeln!(out, "arch: {arch}  samples: {}", test.len())?;
    writeln!(out, "accuracy: {:?}", c.accuracy())?;
    writeln!(out, "confusion (rows: label, columns: predicted):")?;
    let k = c.counts.len();
    write!(out, "     ")?;
    for j in 0..k {
        write!(out, "{j:>6}")?;
    }
    writeln!(out)?;
    for (i, row) in c.counts.iter().enumerate() {
        write!(out, "{i:>4} ")?;
        for v in row {
            write!(out, "{v:>6}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// The shape sweep run by `bench` when no `--shape` is given.
pub fn default_bench_shapes() -> Vec<LayerDesc> {
    let mut shapes = Vec::new();
    for d in [16, 784] {
        for m in [10, 300] {
            for kind in ["additive", "additive1", "classic"] {
                shapes.push(format!("{kind}:{d}x{m}").parse().expect("valid shape"));
            }
        }
    }
    for s in [
        "additive-conv:1x28x28/5x6",
        "classic-conv:1x28x28/5x6",
        "maxpool:6x24x24",
        "additive-conv:6x12x12/5x16",
        "classic-conv:6x12x12/5x16",
        "maxpool:16x8x8",
    ] {
        shapes.push(s.parse().expect("valid shape"));
    }
    shapes
}

/// Number of scored output units (neurons, or positions times filters).
fn units(desc: &LayerDesc) -> Option<u64> {
    match desc {
        LayerDesc::AdditiveDense { outputs, .. } | LayerDesc::ClassicDense { outputs, .. } => {
            Some(*outputs as u64)
        }
        LayerDesc::AdditiveConv(c) | LayerDesc::ClassicConv(c) => {
            let (h, w) = c.output_hw();
            Some((h * w * c.filters) as u64)
        }
        LayerDesc::MaxPool2 { .. } => None,
    }
}

/// One bench row: measured forward-pass counts against the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub desc: LayerDesc,
    pub measured: OpCounter,
    pub predicted: OpCounter,
}

pub fn bench_layer(desc: &LayerDesc, rng: &mut Rng) -> crate::Result<BenchRow> {
    let predicted = theoretical_counts(desc)?;
    let layer = Layer::from_desc(desc, Activation::Identity, rng)?;
    let x = rng.vector(layer.input_len(), -1.0, 1.0);
    let (res, measured) = ops::scoped_count(|| layer.predict(&x));
    res?;
    Ok(BenchRow {
        desc: *desc,
        measured,
        predicted,
    })
}

fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> CliResult {
    let shapes = if a.shapes.is_empty() {
        default_bench_shapes()
    } else {
        a.shapes.clone()
    };
    let mut rng = Rng::new(a.seed);
    writeln!(
        out,
        "{:<30} {:>21} {:>21} {:>21} {:>19} {:>19} {:>19} {:>10}  status",
        "layer", "mults", "adds", "signs", "compares", "abs", "negations", "mults/unit"
    )?;
    let mut mismatches = 0;
    for desc in &shapes {
        let row = bench_layer(desc, &mut rng)?;
        let pair = |m: u64, p: u64| format!("{m}/{p}");
        let (m, p) = (row.measured, row.predicted);
        let per_unit = units(desc).map_or_else(
            || "-".to_string(),
            |u| format!("{}", m.mults as f64 / u as f64),
        );
        let ok = m == p;
        mismatches += usize::from(!ok);
        writeln!(
            out,
            "{:<30} {:>21} {:>21} {:>21} {:>19} {:>19} {:>19} {:>10}  {}",
            desc.to_string(),
            pair(m.mults, p.mults),
            pair(m.adds, p.adds),
            pair(m.signs, p.signs),
            pair(m.compares, p.compares),
            pair(m.abs_ops, p.abs_ops),
            pair(m.negations, p.negations),
            per_unit,
            if ok { "ok" } else { "MISMATCH" }
        )?;
    }
    writeln!(
        out,
        "(measured/predicted per forward pass; {} shapes)",
        shapes.len()
    )?;
    if mismatches > 0 {
        return Err(CliError {
            code: EXIT_COUNT_MISMATCH,
            message: format!("{mismatches} shape(s) with measured != predicted counts"),
        });
    }
    Ok(())
}

fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> CliResult {
    if a.dims.is_empty() || a.dims.contains(&0) {
        return Err(CliError::config("--dims needs positive dimensions"));
    }
    if a.cases == 0 {
        return Err(CliError::config("--cases must be at least 1"));
    }
    type Suite = fn(&[usize], usize, u64) -> crate::Result<SuiteReport>;
    let all: [(&str, Suite); 3] = [
        ("sign", verify_sign_network),
        ("relu", verify_relu_conversion),
        ("superposition", verify_superposition),
    ];
    let chosen: Vec<_> = match a.suite.as_str() {
        "all" => all.to_vec(),
        name => all.iter().filter(|(n, _)| *n == name).copied().collect(),
    };
    if chosen.is_empty() {
        return Err(CliError::config(format!("unknown suite `{}`", a.suite)));
    }
    let dims: Vec<String> = a.dims.iter().map(|d| d.to_string()).collect();
    writeln!(
        out,
        "dims {}  cases {}  seed {}",
        dims.join(","),
        a.cases,
        a.seed
    )?;
    let mut failed = 0;
    for (_, suite) in chosen {
        let report = suite(&a.dims, a.cases, a.seed)?;
        write!(out, "{report}")?;
        failed += usize::from(!report.ok());
    }
    if failed > 0 {
        return Err(CliError {
            code: EXIT_VERIFY_FAILED,
            message: format!("{failed} suite(s) failed"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("efnet").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn unknown_flags_are_config_errors() {
        assert_eq!(run_capture(&["bench", "--nope"]).0, EXIT_CONFIG);
        assert_eq!(
            run_capture(&["train", "--arch", "xor", "--operator", "quantum"]).0,
            EXIT_CONFIG
        );
        assert_eq!(
            run_capture(&["train", "--arch", "xor", "--lr", "0"]).0,
            EXIT_CONFIG
        );
    }

    #[test]
    fn help_mentions_flags() {
        let (code, out, _) = run_capture(&["train", "--help"]);
        assert_eq!(code, EXIT_OK);
        for flag in [
            "--arch",
            "--operator",
            "--lr",
            "--data-dir",
            "--train-limit",
            "--grad-mode",
            "--metrics",
        ] {
            assert!(out.contains(flag), "{flag}");
        }
    }

    #[test]
    fn missing_data_dir_names_the_flag() {
        let (code, _, err) = run_capture(&["train", "--arch", "mlp2"]);
        assert_eq!(code, EXIT_DATA);
        assert!(err.contains("--data-dir"));
    }

    #[test]
    fn bench_default_sweep_passes() {
        let (code, out, _) = run_capture(&["bench"]);
        assert_eq!(code, EXIT_OK, "{out}");
        assert!(out.contains("additive:784x300"));
        assert!(out.contains("300/300"));
        assert!(out.contains("235200/235200"));
        assert!(out.contains("additive:16x10"));
        assert!(!out.contains("MISMATCH"));
    }

    #[test]
    fn verify_echoes_config() {
        let (code, out, _) =
            run_capture(&["verify", "--dims", "1,2", "--cases", "50", "--seed", "3"]);
        assert_eq!(code, EXIT_OK, "{out}");
        assert!(out.contains("dims 1,2  cases 50  seed 3"));
        assert!(out.contains("boundary(sign(0)=0)"));
        assert_eq!(run_capture(&["verify", "--suite", "nope"]).0, EXIT_CONFIG);
    }

    #[test]
    fn limits_parse() {
        assert_eq!("all".parse::<Limit>().unwrap(), Limit(None));
        assert_eq!("12".parse::<Limit>().unwrap(), Limit(Some(12)));
        assert!("x".parse::<Limit>().is_err());
    }
}
