//! Command-line harness: train / eval / ablate / inspect / gen-data / check.
//!
//! Reports are written as line-delimited JSON; a human-readable table goes
//! to stdout. Exit codes: 0 success, 2 config, 3 data, 4 shape contract,
//! 5 numeric failure.

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sure::data::{
    generate_synthetic, load_dataset, save_dataset, split_dataset, Dims, ModalityMask,
    SyntheticSpec,
};
use sure::error::{Result, SureError};
use sure::gradcheck;
use sure::metrics::MetricsReport;
use sure::model::{ModelConfig, SureModel};
use sure::rng::PortableRng;
use sure::tensor::ParamStore;
use sure::train::{ablate, evaluate_checkpoint, inspect, train_dispatch, Checkpoint, RunConfig};

#[derive(Parser)]
#[command(name = "sure", about = "Uncertainty-aware multimodal emotion recognition harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML file mirroring the run configuration field names.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config field, e.g. --set k=2 --set dropout=0.1.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_toml_file(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                SureError::Config(format!("override '{kv}' is not KEY=VALUE"))
            })?;
            cfg.apply_override(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the best-validation checkpoint.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Master seed (initialization, data order, noise draws).
        #[arg(long)]
        seed: u64,
        /// Training dataset (JSONL).
        #[arg(long)]
        data: PathBuf,
        /// Validation dataset (JSONL); defaults to a 90/10 split of --data.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Checkpoint output path.
        #[arg(long, default_value = "checkpoint.json")]
        out: PathBuf,
        /// Training log output path (JSONL, one line per epoch).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Override the modality keep set, e.g. "text+audio".
        #[arg(long)]
        modalities: Option<String>,
        /// Where to write the JSON metrics report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the ablation grid (full, module removals, modality subsets).
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump routing, retrieval, and fusion traces for every dialogue.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// JSONL output path (one line per dialogue); stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        num_labels: usize,
        #[arg(long, default_value_t = 40)]
        dialogues: usize,
        /// Feature dims as text,audio,visual.
        #[arg(long, default_value = "16,12,8")]
        dims: String,
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
        /// Per-modality noise overrides.
        #[arg(long)]
        noise_text: Option<f64>,
        #[arg(long)]
        noise_audio: Option<f64>,
        #[arg(long)]
        noise_visual: Option<f64>,
        #[arg(long, default_value_t = 4)]
        utterances_min: usize,
        #[arg(long, default_value_t = 12)]
        utterances_max: usize,
        #[arg(long, default_value_t = 0.4)]
        label_corr: f64,
    },
    /// Validate a dataset file and run the runtime invariant suite.
    Check {
        /// Dataset to validate; without it only the invariants run.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            data,
            val,
            out,
            log,
        } => {
            let cfg = config.build()?;
            let (train_set, val_set) = match val {
                Some(v) => (load_dataset(&data)?, load_dataset(v)?),
                None => {
                    let full = load_dataset(&data)?;
                    let mut parts = split_dataset(&full, &[0.9, 0.1], seed)?;
                    let val = parts.pop().unwrap();
                    (parts.pop().unwrap(), val)
                }
            };
            let outcome = train_dispatch(&cfg, &train_set, &val_set, seed)?;
            outcome.checkpoint.save(&out)?;
            if let Some(log_path) = log {
                let mut f = fs::File::create(&log_path)
                    .map_err(|e| SureError::Io(format!("{}: {e}", log_path.display())))?;
                for entry in &outcome.log.epochs {
                    writeln!(f, "{}", serde_json::to_string(entry).unwrap())
                        .map_err(|e| SureError::Io(e.to_string()))?;
                }
            }
            println!("epoch  train_loss  val_loss  val_acc  val_wf1");
            for e in &outcome.log.epochs {
                println!(
                    "{:>5}  {:>10.4}  {:>8.4}  {:>7.4}  {:>7.4}",
                    e.epoch, e.train_loss, e.val_loss, e.val_accuracy, e.val_weighted_f1
                );
            }
            println!(
                "best epoch {} (val weighted F1 {:.4}); checkpoint -> {}",
                outcome.log.best_epoch,
                outcome.log.best_val_weighted_f1,
                out.display()
            );
            Ok(())
        }
        Command::Eval {
            checkpoint,
            data,
            modalities,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let dataset = load_dataset(&data)?;
            check_dims(&ckpt, &dataset)?;
            let mask = match modalities {
                Some(m) => ModalityMask::parse(&m)?,
                None => ckpt.config.mask(),
            };
            let (loss, report) = evaluate_checkpoint(&ckpt, &dataset, mask)?;
            print_report(&report, loss);
            if let Some(path) = out {
                fs::write(&path, serde_json::to_string(&report).unwrap())
                    .map_err(|e| SureError::Io(format!("{}: {e}", path.display())))?;
            }
            Ok(())
        }
        Command::Ablate {
            config,
            seed,
            data,
            val,
            test,
            out,
        } => {
            let cfg = config.build()?;
            let (train_set, val_set, test_set) = match (val, test) {
                (Some(v), Some(t)) => (load_dataset(&data)?, load_dataset(v)?, load_dataset(t)?),
                (Some(v), None) => {
                    let v = load_dataset(v)?;
                    (load_dataset(&data)?, v.clone(), v)
                }
                _ => {
                    let full = load_dataset(&data)?;
                    let mut parts = split_dataset(&full, &[0.7, 0.15, 0.15], seed)?;
                    let test = parts.pop().unwrap();
                    let val = parts.pop().unwrap();
                    (parts.pop().unwrap(), val, test)
                }
            };
            let rows = ablate(&cfg, &train_set, &val_set, &test_set, seed)?;
            println!("{:<26} {:>8} {:>12}", "variant", "accuracy", "weighted_f1");
            for r in &rows {
                println!("{:<26} {:>8.4} {:>12.4}", r.name, r.accuracy, r.weighted_f1);
            }
            if let Some(path) = out {
                let mut f = fs::File::create(&path)
                    .map_err(|e| SureError::Io(format!("{}: {e}", path.display())))?;
                for r in &rows {
                    writeln!(f, "{}", serde_json::to_string(r).unwrap())
                        .map_err(|e| SureError::Io(e.to_string()))?;
                }
            }
            Ok(())
        }
        Command::Inspect {
            checkpoint,
            data,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let dataset = load_dataset(&data)?;
            check_dims(&ckpt, &dataset)?;
            let traces = inspect(&ckpt, &dataset)?;
            let lines: Vec<String> = traces
                .iter()
                .map(|t| serde_json::to_string(t).unwrap())
                .collect();
            match out {
                Some(path) => fs::write(&path, lines.join("\n") + "\n")
                    .map_err(|e| SureError::Io(format!("{}: {e}", path.display())))?,
                None => lines.iter().for_each(|l| println!("{l}")),
            }
            Ok(())
        }
        Command::GenData {
            out,
            seed,
            num_labels,
            dialogues,
            dims,
            noise,
            noise_text,
            noise_audio,
            noise_visual,
            utterances_min,
            utterances_max,
            label_corr,
        } => {
            let parts: Vec<usize> = dims
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| SureError::Config(format!("bad --dims '{dims}'")))?;
            if parts.len() != 3 {
                return Err(SureError::Config(
                    "--dims needs three comma-separated extents".into(),
                ));
            }
            let spec = SyntheticSpec {
                num_labels,
                dims: Dims {
                    text: parts[0],
                    audio: parts[1],
                    visual: parts[2],
                },
                num_dialogues: dialogues,
                utterances_min,
                utterances_max,
                noise_text: noise_text.unwrap_or(noise),
                noise_audio: noise_audio.unwrap_or(noise),
                noise_visual: noise_visual.unwrap_or(noise),
                label_corr,
                seed,
                ..SyntheticSpec::default()
            };
            let ds = generate_synthetic(&spec)?;
            save_dataset(&ds, &out)?;
            println!(
                "wrote {} dialogues / {} utterances to {}",
                ds.dialogues.len(),
                ds.num_utterances(),
                out.display()
            );
            Ok(())
        }
        Command::Check { data } => {
            if let Some(path) = data {
                let ds = load_dataset(&path)?;
                println!(
                    "dataset ok: {} dialogues, {} utterances, {} labels, dims {}/{}/{}",
                    ds.dialogues.len(),
                    ds.num_utterances(),
                    ds.header.num_labels,
                    ds.header.dims.text,
                    ds.header.dims.audio,
                    ds.header.dims.visual
                );
            }
            run_invariant_suite()
        }
    }
}

fn check_dims(ckpt: &Checkpoint, dataset: &sure::data::Dataset) -> Result<()> {
    let want = &ckpt.model.config.dims;
    let got = &dataset.header.dims;
    if want != got || ckpt.model.config.num_labels != dataset.header.num_labels {
        return Err(SureError::ShapeMismatch {
            op: "checkpoint/dataset dims",
            lhs: vec![want.text, want.audio, want.visual, ckpt.model.config.num_labels],
            rhs: vec![got.text, got.audio, got.visual, dataset.header.num_labels],
        });
    }
    Ok(())
}

fn print_report(report: &MetricsReport, loss: f64) {
    println!("loss {:.4}  accuracy {:.4}  weighted F1 {:.4}", loss, report.accuracy, report.weighted_f1);
    println!("{:<6} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support");
    for c in &report.per_class {
        println!(
            "{:<6} {:>9.4} {:>9.4} {:>9.4} {:>8}",
            c.label, c.precision, c.recall, c.f1, c.support
        );
    }
}

/// Fast runtime invariants: routing sparsity, normalization sums, a tiny
/// full-pipeline gradient check. Prints one line per check.
fn run_invariant_suite() -> Result<()> {
    let spec = SyntheticSpec {
        num_labels: 3,
        dims: Dims {
            text: 8,
            audio: 6,
            visual: 5,
        },
        num_dialogues: 4,
        utterances_min: 2,
        utterances_max: 4,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&spec)?;
    let mut cfg = ModelConfig {
        dims: ds.header.dims.clone(),
        num_labels: 3,
        d_z: 6,
        d: 8,
        d_ff: 16,
        num_experts: 4,
        k: 2,
        lambda_u: 1.0,
        renormalize: false,
        iterations: 2,
        heads: 2,
        dropout: 0.0,
        sigmoid_gate: false,
        positional: false,
        beta_kl: 0.1,
        disable_moe: false,
        disable_reasoning: false,
    };
    let mut rng = PortableRng::new(99);
    let mut store: ParamStore<f64> = ParamStore::new();
    let model = SureModel::init(&mut store, cfg.clone(), &mut rng)?;

    // routing sparsity + fusion simplex over the whole set
    for dlg in &ds.dialogues {
        let out = model.forward(&store, dlg, ModalityMask::all(), false, &mut rng)?;
        for per_mod in &out.trace.routing {
            for rd in per_mod {
                let nonzero = rd.gate_scores.iter().filter(|&&s| s != 0.0).count();
                if nonzero != cfg.k {
                    return Err(SureError::InvalidArgument(format!(
                        "routing produced {nonzero} nonzero scores, expected {}",
                        cfg.k
                    )));
                }
            }
        }
        for per_mod in &out.trace.fusion {
            for w in per_mod {
                if (w.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                    return Err(SureError::NonFinite("fusion weights off the simplex".into()));
                }
            }
        }
        for per_mod in &out.trace.retrieval {
            for iter_w in per_mod {
                let n = out.trace.fusion[0].len();
                for row in iter_w.chunks(n) {
                    if (row.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                        return Err(SureError::NonFinite("retrieval row off the simplex".into()));
                    }
                }
            }
        }
    }
    println!("routing/normalization invariants: pass");

    // tiny full-pipeline gradient check, dense routing for smoothness
    cfg.k = cfg.num_experts;
    let mut store2: ParamStore<f64> = ParamStore::new();
    let model2 = SureModel::init(&mut store2, cfg, &mut rng)?;
    let dlg = &ds.dialogues[0];
    let labels = dlg.labels();
    let forward = |store: &ParamStore<f64>| -> Result<f64> {
        let mut out = model2.forward(store, dlg, ModalityMask::all(), true, &mut PortableRng::new(1))?;
        let loss = model2.loss(&mut out, &labels, None)?;
        Ok(out.graph.scalar(loss))
    };
    let mut out = model2.forward(&store2, dlg, ModalityMask::all(), true, &mut PortableRng::new(1))?;
    let loss = model2.loss(&mut out, &labels, None)?;
    out.graph.backward(loss)?;
    let grads = out.graph.param_grads(&store2);
    let err = gradcheck::check_params(&mut store2, &grads, 1e-5, forward)?;
    if err > 1e-4 {
        return Err(SureError::NonFinite(format!(
            "pipeline gradient check failed: max relative error {err}"
        )));
    }
    println!("pipeline gradient check: pass (max relative error {err:.2e})");
    Ok(())
}
