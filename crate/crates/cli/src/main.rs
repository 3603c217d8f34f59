use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use reprolab::io::{self, read_task};
use reprolab::mapping::{self, build_aggregation, build_frequency, top_k_from_alpha, Method};
use reprolab::parallel::{threads_from_env, Workers};
use reprolab::synth::{generate_task, SubclassTaskSpec};
use reprolab::theory::enumerate_and_check;
use reprolab::vr::{self, Ablation, RefitMode, TrainConfig, VrKind, VrPattern};
use reprolab::{Dataset, Error, MappingMatrix};

const EXIT_VIOLATIONS: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "reprolab", version, about = "Label mapping for visual reprogramming")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic subclass task (task.json, train.csv, test.csv).
    GenTask(GenTaskArgs),
    /// Train a reprogramming pattern together with a label mapping.
    Train(TrainArgs),
    /// Fit a label mapping on a logits CSV without training.
    FitLm(FitLmArgs),
    /// Write the frozen model's logits on a task split as CSV.
    ExportLogits(ExportArgs),
    /// Evaluate a trained pattern and mapping on a task split.
    Eval(EvalArgs),
    /// Exhaustively check the binary expected-accuracy bounds.
    VerifyTheory(TheoryArgs),
}

#[derive(Args)]
struct GenTaskArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    k_s: usize,
    #[arg(long, default_value_t = 5)]
    k_t: usize,
    #[arg(long, default_value_t = 3)]
    m: usize,
    #[arg(long, default_value_t = 16)]
    side_s: usize,
    #[arg(long, default_value_t = 8)]
    side_t: usize,
    #[arg(long, default_value_t = 0.1)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 500)]
    n_train: usize,
    #[arg(long, default_value_t = 200)]
    n_test: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Quick,
    Exact,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AblationFlag {
    NoIter,
    NoTopk,
    NoBayes,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Padding,
    Watermark,
    None,
}

impl From<Kind> for VrKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Padding => VrKind::Padding,
            Kind::Watermark => VrKind::Watermark,
            Kind::None => VrKind::None,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Task directory or its task.json.
    #[arg(long)]
    task: PathBuf,
    #[arg(long, default_value = "blm")]
    lm: Method,
    #[arg(long, value_enum, default_value = "padding")]
    vr: Kind,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    lr_decay: f64,
    #[arg(long, value_delimiter = ',', default_value = "100,145")]
    milestones: Vec<usize>,
    /// Step size of the learned linear mapping (dense only).
    #[arg(long, default_value_t = vr::DEFAULT_OMEGA_LR)]
    omega_lr: f64,
    #[arg(long, default_value_t = mapping::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = mapping::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "quick")]
    mode: Mode,
    #[arg(long, value_enum, value_delimiter = ',')]
    ablate: Vec<AblationFlag>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitLmArgs {
    /// CSV with header id,y_true,l0,...
    #[arg(long)]
    logits: PathBuf,
    #[arg(long, default_value = "blm")]
    method: Method,
    /// Number of downstream labels; defaults to the largest label + 1.
    #[arg(long)]
    k_t: Option<usize>,
    #[arg(long, default_value_t = mapping::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = mapping::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pretrained labels listed per downstream label in top_labels.json.
    #[arg(long, default_value_t = 5)]
    top: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    task: PathBuf,
    /// Trained pattern JSON; a zero pattern of kind --vr is used otherwise.
    #[arg(long)]
    pattern: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "padding")]
    vr: Kind,
    #[arg(long, value_enum, default_value = "train")]
    split: Split,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    task: PathBuf,
    #[arg(long)]
    mapping: PathBuf,
    #[arg(long)]
    pattern: PathBuf,
    /// Model JSON overriding the one embedded in the task.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
}

#[derive(Args)]
struct TheoryArgs {
    /// Joint grid resolution N (entries are multiples of 1/N).
    #[arg(long, default_value_t = 20)]
    joint_step: usize,
    /// Mapping grid resolution M (entries are multiples of 1/M).
    #[arg(long, default_value_t = 10)]
    omega_step: usize,
    #[arg(long, default_value_t = 20)]
    max_witnesses: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn pick(split: Split, train: Dataset, test: Dataset) -> Dataset {
    match split {
        Split::Train => train,
        Split::Test => test,
    }
}

fn gen_task(a: GenTaskArgs) -> anyhow::Result<u8> {
    let spec = SubclassTaskSpec {
        k_s: a.k_s,
        k_t: a.k_t,
        m: a.m,
        side_s: a.side_s,
        side_t: a.side_t,
        noise_sigma: a.noise_sigma,
        n_train: a.n_train,
        n_test: a.n_test,
        seed: a.seed,
    };
    let task = generate_task(&spec)?;
    for path in io::write_task(&a.out, &task, &spec)? {
        println!("{}", path.display());
    }
    Ok(0)
}

fn train(a: TrainArgs) -> anyhow::Result<u8> {
    let loaded = read_task(&a.task)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        lr_decay: a.lr_decay,
        milestones: a.milestones,
        omega_lr: a.omega_lr,
        lambda: a.lambda,
        alpha: a.alpha,
        lm_method: a.lm,
        vr_kind: a.vr.into(),
        seed: a.seed,
        mode: match a.mode {
            Mode::Quick => RefitMode::Quick,
            Mode::Exact => RefitMode::Exact,
        },
        ablation: Ablation {
            no_iter: a.ablate.contains(&AblationFlag::NoIter),
            no_topk: a.ablate.contains(&AblationFlag::NoTopk),
            no_bayes: a.ablate.contains(&AblationFlag::NoBayes),
        },
        threads: threads_from_env(),
    };
    let log_path = a.out.join("log.jsonl");
    let outcome = match vr::run_training(&loaded.train, &loaded.test, &loaded.manifest.model, &cfg) {
        Ok(o) => o,
        Err(Error::NonFiniteLoss { epoch, records }) => {
            io::write_log(&log_path, &records)?;
            eprintln!(
                "error: non-finite loss at epoch {epoch}; partial log written to {}",
                log_path.display()
            );
            return Ok(EXIT_RUNTIME);
        }
        Err(e) => return Err(e.into()),
    };
    io::write_json(&a.out.join("mapping.json"), &outcome.mapping)?;
    io::write_json(&a.out.join("pattern.json"), &outcome.pattern)?;
    io::write_log(&log_path, &outcome.records)?;
    let last = outcome.records.last().context("no epochs were run")?;
    println!("test_acc={}", last.test_acc);
    Ok(0)
}

fn fit_lm(a: FitLmArgs) -> anyhow::Result<u8> {
    let lt = io::read_logits(&a.logits)?;
    let k_t = match a.k_t {
        Some(k) => k,
        None => lt.labels().iter().max().map_or(0, |&y| y + 1),
    };
    let m = match a.method {
        Method::Rlm => mapping::rlm_fit(lt.k_s(), k_t, a.seed)?,
        Method::Flm | Method::Ilm => {
            let mut m = mapping::flm_fit(&build_frequency(&lt, k_t)?)?;
            m.method = a.method;
            m
        }
        Method::Blm => mapping::blm_fit(&build_frequency(&lt, k_t)?, a.lambda)?,
        Method::BlmPlus => {
            let k_top = top_k_from_alpha(a.alpha, k_t, lt.k_s());
            let mut m = mapping::blm_plus_fit(&build_aggregation(&lt, k_t, k_top)?, a.lambda)?;
            m.alpha = Some(a.alpha);
            m
        }
        Method::Dense => bail!(Error::InvalidArgument(
            "the dense mapping is learned during training; use `train --lm dense`".into()
        )),
    };
    io::write_json(&a.out.join("mapping.json"), &m)?;
    let columns: Vec<_> = m
        .top_weighted(a.top)?
        .into_iter()
        .enumerate()
        .map(|(t, labels)| {
            let weights: Vec<f64> = labels.iter().map(|&s| m.omega().get(s, t)).collect();
            json!({"downstream": t, "pretrained": labels, "weights": weights})
        })
        .collect();
    io::write_json(
        &a.out.join("top_labels.json"),
        &json!({"method": m.method, "count": a.top.min(m.k_s()), "columns": columns}),
    )?;
    Ok(0)
}

fn load_pattern(path: Option<&Path>, kind: VrKind, d_s: usize, d_t: usize) -> anyhow::Result<VrPattern> {
    Ok(match path {
        Some(p) => io::read_json(p)?,
        None => VrPattern::new(kind, d_s, d_t)?,
    })
}

fn export_logits(a: ExportArgs) -> anyhow::Result<u8> {
    let loaded = read_task(&a.task)?;
    let model = &loaded.manifest.model;
    let data = pick(a.split, loaded.train, loaded.test);
    let pattern = load_pattern(a.pattern.as_deref(), a.vr.into(), model.d_s(), data.d_t())?;
    let lt = vr::forward_batch(model, &pattern, &data, &Workers::from_env())?;
    io::write_logits(&a.out, &lt)?;
    Ok(0)
}

fn eval(a: EvalArgs) -> anyhow::Result<u8> {
    let loaded = read_task(&a.task)?;
    let model = match &a.model {
        Some(p) => io::read_json(p)?,
        None => loaded.manifest.model.clone(),
    };
    let data = pick(a.split, loaded.train, loaded.test);
    let m: MappingMatrix = io::read_json(&a.mapping)?;
    let pattern: VrPattern = io::read_json(&a.pattern)?;
    if m.k_s() != model.k_s() {
        bail!(Error::DimensionMismatch {
            what: "mapping rows vs model outputs",
            expected: model.k_s(),
            got: m.k_s(),
        });
    }
    if m.k_t() != data.k_t() {
        bail!(Error::DimensionMismatch {
            what: "mapping columns vs downstream labels",
            expected: data.k_t(),
            got: m.k_t(),
        });
    }
    let (preds, acc) = vr::evaluate(&model, &pattern, &m, &data, &Workers::from_env())?;
    let per_class = mapping::per_class_accuracy(&preds, data.labels(), data.k_t());
    println!("{}", json!({"test_acc": acc, "per_class_acc": per_class}));
    Ok(0)
}

fn verify_theory(a: TheoryArgs) -> anyhow::Result<u8> {
    let report = enumerate_and_check(a.joint_step, a.omega_step, a.max_witnesses, &Workers::from_env())?;
    if let Some(out) = &a.out {
        io::write_json(out, &report)?;
    }
    println!(
        "joints={} omegas={} lemma1: {}/{} violated, lemma2: {}/{} violated, corollary: {} identity / {} flip counterexamples of {} checked",
        report.n_joints,
        report.n_omegas,
        report.lemma1_violations,
        report.lemma1_checked,
        report.lemma2_violations,
        report.lemma2_checked,
        report.corollary_identity_violations,
        report.corollary_flip_violations,
        report.corollary_checked,
    );
    Ok(if report.lemma_violations() == 0 { 0 } else { EXIT_VIOLATIONS })
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_usage() => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTask(a) => gen_task(a),
        Command::Train(a) => train(a),
        Command::FitLm(a) => fit_lm(a),
        Command::ExportLogits(a) => export_logits(a),
        Command::Eval(a) => eval(a),
        Command::VerifyTheory(a) => verify_theory(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
