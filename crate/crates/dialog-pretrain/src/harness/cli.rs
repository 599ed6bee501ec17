//! Command-line interface. The binary is a thin wrapper over the library;
//! every subcommand writes a self-describing artifact directory.

use super::config::{ExperimentConfig, Precision};
use super::protocols::{regenerate_tables, run_experiment, Protocol, RunManifest};
use super::report::{write_metric_rows, write_reports, EvalReport, MetricRow};
use crate::checkpoint::{Checkpoint, Provenance};
use crate::data::schema::BeliefSchema;
use crate::data::{
    convert_multiwoz, generate_synthetic, subsample, Corpus, DownstreamTask, SyntheticSpec,
};
use crate::downstream::finetune;
use crate::error::{Error, Result};
use crate::objectives::{pretrain, Objective};
use crate::tensor::Real;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "dialog-pretrain",
    version,
    about = "Unsupervised pretraining of dialog context representations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Experiment configuration file (JSON); defaults are used if absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Belief schema file (JSON); the built-in MultiWoz schema if absent.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Numeric precision for training and evaluation.
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    Precision::parse(s).ok_or_else(|| format!("unknown precision {s:?} (use f32 or f64)"))
}

fn parse_objective(s: &str) -> std::result::Result<Objective, String> {
    Objective::parse(s).ok_or_else(|| format!("unknown objective {s:?} (nur, nug, mur, ini)"))
}

fn parse_task(s: &str) -> std::result::Result<DownstreamTask, String> {
    DownstreamTask::parse(s).ok_or_else(|| format!("unknown task {s:?} (bsp, dap, nur, nug)"))
}

fn parse_protocol(s: &str) -> std::result::Result<Protocol, String> {
    Protocol::parse(s)
        .ok_or_else(|| format!("unknown protocol {s:?} (full, convergence, limited, domain, ctxlen)"))
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw MultiWoz distribution directory into the corpus format.
    ConvertData {
        /// Directory with data.json, valListFile.txt, testListFile.txt,
        /// dialogue_acts.json.
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Generate a synthetic corpus with planted next-utterance structure.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        /// Training dialogs.
        #[arg(long, default_value_t = 200)]
        dialogs: usize,
        #[arg(long, default_value_t = 40)]
        valid: usize,
        #[arg(long, default_value_t = 40)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one pretraining objective and save the encoder checkpoint.
    Pretrain {
        #[arg(long, value_parser = parse_objective)]
        objective: Objective,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Fine-tune a downstream task, optionally from a pretrained encoder.
    Finetune {
        #[arg(long, value_parser = parse_task)]
        task: DownstreamTask,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pretrained checkpoint to transfer the encoder from.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Fine-tuning data fraction in (0, 1].
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        /// Accept a checkpoint whose recorded config hash differs.
        #[arg(long, default_value_t = false)]
        allow_hash_mismatch: bool,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Evaluate a fine-tuned checkpoint on one split.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_task)]
        task: Option<DownstreamTask>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run a full experiment protocol over the pretraining-by-task matrix.
    Experiment {
        #[arg(long, value_parser = parse_protocol)]
        protocol: Protocol,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seed list, e.g. 1,2,3.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Single seed (shorthand for --seeds N).
        #[arg(long)]
        seed: Option<u64>,
        /// Fine-tuning fraction override for the limited protocol.
        #[arg(long)]
        fraction: Option<f64>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Regenerate tables for an existing run directory from its logs.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

/// Entry point, returning a process exit code.
pub fn run<I>(args: I) -> i32
where
    I: IntoIterator<Item = String>,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_schema(common: &CommonOpts) -> Result<BeliefSchema> {
    match &common.schema {
        Some(path) => BeliefSchema::load(path),
        None => Ok(BeliefSchema::multiwoz()),
    }
}

fn load_config(common: &CommonOpts) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = common.precision {
        config.precision = p;
    }
    Ok(config)
}

fn load_corpus(path: &Path, schema: &BeliefSchema) -> Result<Corpus> {
    let (corpus, report) = Corpus::load(path, schema)?;
    for message in &report.messages {
        eprintln!("warning: {message}");
    }
    if report.skipped_dialogs > 0 {
        eprintln!("warning: skipped {} invalid dialogs", report.skipped_dialogs);
    }
    Ok(corpus)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::ConvertData { raw, out, common } => {
            let schema = load_schema(&common)?;
            let (corpus, report) = convert_multiwoz(&raw, &schema)?;
            for message in &report.messages {
                eprintln!("warning: {message}");
            }
            corpus.save(&out)?;
            println!(
                "wrote {} ({} train / {} valid / {} test dialogs)",
                out.display(),
                corpus.train.len(),
                corpus.valid.len(),
                corpus.test.len()
            );
            Ok(())
        }
        Command::GenSynthetic {
            out,
            dialogs,
            valid,
            test,
            seed,
        } => {
            let corpus = generate_synthetic(&SyntheticSpec {
                train: dialogs,
                valid,
                test,
                seed,
            });
            corpus.save(&out)?;
            println!(
                "wrote {} ({} train / {} valid / {} test dialogs)",
                out.display(),
                dialogs,
                valid,
                test
            );
            Ok(())
        }
        Command::Pretrain {
            objective,
            data,
            out,
            seed,
            common,
        } => {
            let schema = load_schema(&common)?;
            let config = load_config(&common)?;
            let corpus = load_corpus(&data, &schema)?;
            match config.precision {
                Precision::F64 => pretrain_cmd::<f64>(objective, &corpus, &config, seed, &data, &out),
                Precision::F32 => pretrain_cmd::<f32>(objective, &corpus, &config, seed, &data, &out),
            }
        }
        Command::Finetune {
            task,
            data,
            out,
            init,
            seed,
            fraction,
            allow_hash_mismatch,
            common,
        } => {
            let schema = load_schema(&common)?;
            let config = load_config(&common)?;
            let corpus = load_corpus(&data, &schema)?;
            match config.precision {
                Precision::F64 => finetune_cmd::<f64>(
                    task,
                    &corpus,
                    &schema,
                    &config,
                    seed,
                    fraction,
                    init.as_deref(),
                    allow_hash_mismatch,
                    &data,
                    &out,
                ),
                Precision::F32 => finetune_cmd::<f32>(
                    task,
                    &corpus,
                    &schema,
                    &config,
                    seed,
                    fraction,
                    init.as_deref(),
                    allow_hash_mismatch,
                    &data,
                    &out,
                ),
            }
        }
        Command::Evaluate {
            ckpt,
            data,
            task,
            split,
            out,
            common,
        } => {
            let schema = load_schema(&common)?;
            let config = load_config(&common)?;
            let corpus = load_corpus(&data, &schema)?;
            match config.precision {
                Precision::F64 => {
                    evaluate_cmd::<f64>(&ckpt, &corpus, &schema, &config, task, &split, out.as_deref())
                }
                Precision::F32 => {
                    evaluate_cmd::<f32>(&ckpt, &corpus, &schema, &config, task, &split, out.as_deref())
                }
            }
        }
        Command::Experiment {
            protocol,
            data,
            out,
            seeds,
            seed,
            fraction,
            common,
        } => {
            let schema = load_schema(&common)?;
            let mut config = load_config(&common)?;
            if let Some(seeds) = seeds {
                config.seeds = seeds;
            }
            if let Some(seed) = seed {
                config.seeds = vec![seed];
            }
            if let Some(fraction) = fraction {
                config.fractions = vec![fraction];
            }
            let corpus = load_corpus(&data, &schema)?;
            match config.precision {
                Precision::F64 => {
                    run_experiment::<f64>(protocol, &config, &corpus, &schema, &data, &out)
                }
                Precision::F32 => {
                    run_experiment::<f32>(protocol, &config, &corpus, &schema, &data, &out)
                }
            }?;
            println!("experiment artifacts in {}", out.display());
            Ok(())
        }
        Command::Report { run } => {
            regenerate_tables(&run)?;
            println!("tables regenerated in {}", run.join("tables").display());
            Ok(())
        }
    }
}

fn write_manifest(
    out: &Path,
    kind: &str,
    config: &ExperimentConfig,
    data_path: &Path,
) -> Result<String> {
    let run_hash = super::run_hash(config, data_path)?;
    let manifest = RunManifest {
        protocol: kind.into(),
        config_hash: config.hash(),
        run_hash: run_hash.clone(),
        data_path: data_path.display().to_string(),
        config: config.clone(),
    };
    let text =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::json("config.json", e))?;
    super::write_atomic(&out.join("config.json"), text.as_bytes())?;
    Ok(run_hash)
}

fn pretrain_cmd<F: Real>(
    objective: Objective,
    corpus: &Corpus,
    config: &ExperimentConfig,
    seed: u64,
    data_path: &Path,
    out: &Path,
) -> Result<()> {
    let run_hash = write_manifest(out, "pretrain", config, data_path)?;
    let outcome = pretrain::<F>(objective, corpus, &config.pipeline, seed)?;
    let ckpt_path = out
        .join("checkpoints")
        .join(format!("pretrain_{}_s{seed}.ckpt", objective.name()));
    let ckpt = Checkpoint::from_model(
        &outcome.model,
        &outcome.vocab,
        Provenance {
            config_hash: run_hash,
            kind: "pretrain".into(),
            objective: Some(objective.name().into()),
            task: None,
            seed,
            best_epoch: outcome.best_epoch,
            best_value: outcome.best_valid_loss,
        },
    );
    ckpt.save(&ckpt_path)?;
    let mut rows = Vec::new();
    for entry in &outcome.log {
        for (split, value) in [("train", entry.train_loss), ("valid", entry.valid_value)] {
            rows.push(MetricRow {
                task: "pretrain".into(),
                objective: objective.name().into(),
                fraction: 1.0,
                seed,
                epoch: entry.epoch,
                split: split.into(),
                metric: "loss".into(),
                value,
            });
        }
    }
    write_metric_rows(&out.join("metrics.csv"), &rows)?;
    println!(
        "pretrained {} (seed {seed}): best valid loss {:.6} at epoch {}; checkpoint {}",
        objective.name(),
        outcome.best_valid_loss,
        outcome.best_epoch,
        ckpt_path.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finetune_cmd<F: Real>(
    task: DownstreamTask,
    corpus: &Corpus,
    schema: &BeliefSchema,
    config: &ExperimentConfig,
    seed: u64,
    fraction: f64,
    init: Option<&Path>,
    allow_hash_mismatch: bool,
    data_path: &Path,
    out: &Path,
) -> Result<()> {
    let run_hash = write_manifest(out, "finetune", config, data_path)?;
    let checkpoint = init
        .map(|path| Checkpoint::<F>::load_checked(path, &run_hash, allow_hash_mismatch))
        .transpose()?;
    let corpus_for_run;
    let base = if fraction < 1.0 {
        corpus_for_run = subsample(corpus, fraction, seed)?;
        &corpus_for_run
    } else {
        corpus
    };
    let outcome = finetune::<F>(
        task,
        base,
        checkpoint.as_ref(),
        &config.pipeline,
        schema,
        seed,
        config.eval_seed,
    )?;
    let objective = checkpoint
        .as_ref()
        .and_then(|c| c.meta.objective.clone())
        .unwrap_or_else(|| "none".into());
    let report = EvalReport {
        task: task.name().into(),
        objective: objective.clone(),
        fraction,
        seed,
        metric: task.metric_name().into(),
        value: outcome.test_value,
        value_x100: outcome.test_value * 100.0,
        best_epoch: outcome.best_epoch,
        curve: outcome.log.clone(),
        buckets: outcome.buckets.clone().map(|buckets| {
            buckets
                .into_iter()
                .map(|(b, v, n)| (b.name().to_string(), v, n))
                .collect()
        }),
    };
    let (metrics, curves) = report.rows();
    write_metric_rows(&out.join("metrics.csv"), &metrics)?;
    write_metric_rows(&out.join("curves.csv"), &curves)?;
    write_reports(&out.join("reports.json"), &[report])?;
    let ckpt_path = out
        .join("checkpoints")
        .join(format!("finetune_{}_{objective}_s{seed}.ckpt", task.name()));
    let ckpt = Checkpoint::from_model(
        &outcome.model,
        &outcome.vocab,
        Provenance {
            config_hash: run_hash,
            kind: "finetune".into(),
            objective: Some(objective),
            task: Some(task.name().into()),
            seed,
            best_epoch: outcome.best_epoch,
            best_value: outcome.best_valid,
        },
    );
    ckpt.save(&ckpt_path)?;
    println!(
        "finetuned {} (seed {seed}): test {} = {:.4} ({:.2} x100) at epoch {}",
        task.name(),
        task.metric_name(),
        outcome.test_value,
        outcome.test_value * 100.0,
        outcome.best_epoch
    );
    Ok(())
}

fn evaluate_cmd<F: Real>(
    ckpt_path: &Path,
    corpus: &Corpus,
    schema: &BeliefSchema,
    config: &ExperimentConfig,
    task: Option<DownstreamTask>,
    split: &str,
    out: Option<&Path>,
) -> Result<()> {
    let ckpt = Checkpoint::<F>::load(ckpt_path)?;
    let task = match task {
        Some(t) => t,
        None => ckpt
            .meta
            .task
            .as_deref()
            .and_then(DownstreamTask::parse)
            .ok_or_else(|| {
                Error::InvalidArgument(
                    "checkpoint has no task provenance; pass --task".into(),
                )
            })?,
    };
    let model = ckpt.to_model()?;
    let vocab = ckpt.vocabulary();
    let dialogs = corpus.split(split);
    let (examples, _) = crate::data::make_downstream_examples(dialogs, task, &vocab, schema);
    let value = match &examples {
        crate::data::TaskExamples::Bsp(examples) => {
            let mut preds = Vec::new();
            let mut golds = Vec::new();
            for ex in examples {
                preds.push(crate::downstream::bsp_predict(&model, schema, &ex.context)?);
                golds.push(ex.targets.clone());
            }
            crate::downstream::metrics::f1_belief(&preds, &golds, schema)
        }
        crate::data::TaskExamples::Dap(examples) => {
            let mut preds = Vec::new();
            let mut golds = Vec::new();
            for ex in examples {
                preds.push(crate::downstream::dap_predict(&model, &ex.context)?);
                golds.push(ex.target_bits.clone());
            }
            crate::downstream::metrics::f1_acts(&preds, &golds)
        }
        crate::data::TaskExamples::Nur(examples) => {
            let pool = crate::data::NegativeSampler::new(crate::data::system_utterances(
                dialogs, &vocab,
            ));
            let candidates = crate::downstream::retrieval_candidates(
                examples,
                &pool,
                config.pipeline.hits_k,
                config.eval_seed,
            )?;
            crate::downstream::nur_eval(&model, examples, &candidates)?
        }
        crate::data::TaskExamples::Nug(examples) => {
            let mut hyps = Vec::new();
            let mut refs = Vec::new();
            for ex in examples {
                hyps.push(crate::encoder::decode_greedy(
                    &model,
                    &ex.context,
                    config.pipeline.max_decode_len,
                )?);
                refs.push(
                    ex.target
                        .iter()
                        .copied()
                        .filter(|&t| t > crate::data::EOS_ID)
                        .collect(),
                );
            }
            crate::downstream::metrics::bleu4(&hyps, &refs)?
        }
    };
    println!(
        "{} {} on {split}: {:.4} ({:.2} x100) over {} examples",
        task.name(),
        task.metric_name(),
        value,
        value * 100.0,
        examples.len()
    );
    if let Some(out) = out {
        let row = MetricRow {
            task: task.name().into(),
            objective: ckpt.meta.objective.clone().unwrap_or_else(|| "none".into()),
            fraction: 1.0,
            seed: ckpt.meta.seed,
            epoch: ckpt.meta.best_epoch,
            split: split.into(),
            metric: task.metric_name().into(),
            value,
        };
        write_metric_rows(&out.join("metrics.csv"), &[row])?;
    }
    Ok(())
}
