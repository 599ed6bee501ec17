//! The experiment protocols: full-data, convergence, limited-data,
//! domain-generalization, and context-length analysis.
//!
//! A protocol run writes a self-describing directory: `config.json`
//! (manifest), `metrics.csv` (test values), `curves.csv` (per-epoch
//! validation), `reports.json`, `checkpoints/` (pretrained encoders), and
//! `tables/*.csv` regenerated purely from the CSV logs.

use super::config::ExperimentConfig;
use super::report::{
    ctxlen_table_csv, fraction_label, read_metric_rows, write_metric_rows, write_reports,
    EvalReport, MetricRow, ResultsTable,
};
use crate::checkpoint::{Checkpoint, Provenance};
use crate::data::schema::BeliefSchema;
use crate::data::{domain_split_indices, subsample, Corpus, DownstreamTask, Vocabulary};
use crate::downstream::{finetune_data, retrieval_candidates, TaskData};
use crate::error::{Error, Result};
use crate::objectives::{pretrain, Objective};
use crate::tensor::Real;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Full,
    Convergence,
    Limited,
    Domain,
    CtxLen,
}

impl Protocol {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_lowercase().as_str() {
            "full" => Some(Protocol::Full),
            "convergence" => Some(Protocol::Convergence),
            "limited" => Some(Protocol::Limited),
            "domain" => Some(Protocol::Domain),
            "ctxlen" => Some(Protocol::CtxLen),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Full => "full",
            Protocol::Convergence => "convergence",
            Protocol::Limited => "limited",
            Protocol::Domain => "domain",
            Protocol::CtxLen => "ctxlen",
        }
    }
}

/// What a run directory was produced by; everything `report` needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub protocol: String,
    pub config_hash: String,
    /// Hash over the configuration plus the dataset bytes; recorded in
    /// checkpoints so stale caches are refused.
    pub run_hash: String,
    pub data_path: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    objective: Option<Objective>,
    task: DownstreamTask,
    fraction: f64,
    seed: u64,
}

fn objective_name(objective: Option<Objective>) -> &'static str {
    objective.map(Objective::name).unwrap_or("none")
}

fn build_cells(protocol: Protocol, config: &ExperimentConfig) -> Vec<Cell> {
    let fractions: Vec<f64> = match protocol {
        Protocol::Limited => config.fractions.clone(),
        _ => vec![1.0],
    };
    let conditions: Vec<Option<Objective>> = match protocol {
        Protocol::CtxLen => vec![
            None,
            Some(Objective::Nur),
            Some(Objective::Mur),
            Some(Objective::Ini),
        ],
        _ => {
            let mut v = vec![None];
            v.extend(Objective::ALL.map(Some));
            v
        }
    };
    let tasks: Vec<DownstreamTask> = match protocol {
        Protocol::CtxLen => vec![DownstreamTask::Nug],
        _ => DownstreamTask::ALL.to_vec(),
    };
    let mut cells = Vec::new();
    for &fraction in &fractions {
        for &seed in &config.seeds {
            for &objective in &conditions {
                for &task in &tasks {
                    if protocol != Protocol::CtxLen
                        && config
                            .exclusion
                            .excludes(objective_name(objective), task.name())
                    {
                        continue;
                    }
                    cells.push(Cell {
                        objective,
                        task,
                        fraction,
                        seed,
                    });
                }
            }
        }
    }
    cells
}

fn checkpoint_path(out_dir: &Path, objective: Objective, seed: u64) -> PathBuf {
    out_dir
        .join("checkpoints")
        .join(format!("pretrain_{}_s{seed}.ckpt", objective.name()))
}

/// Pretrain (or reload) the checkpoint for one objective and seed.
fn ensure_pretrained<F: Real>(
    objective: Objective,
    seed: u64,
    corpus: &Corpus,
    config: &ExperimentConfig,
    run_hash: &str,
    out_dir: &Path,
) -> Result<(Checkpoint<F>, Vec<MetricRow>)> {
    let path = checkpoint_path(out_dir, objective, seed);
    let hash = run_hash.to_string();
    if path.exists() {
        return Ok((Checkpoint::load_checked(&path, &hash, false)?, Vec::new()));
    }
    let outcome = pretrain::<F>(objective, corpus, &config.pipeline, seed)?;
    let ckpt = Checkpoint::from_model(
        &outcome.model,
        &outcome.vocab,
        Provenance {
            config_hash: hash,
            kind: "pretrain".into(),
            objective: Some(objective.name().into()),
            task: None,
            seed,
            best_epoch: outcome.best_epoch,
            best_value: outcome.best_valid_loss,
        },
    );
    ckpt.save(&path)?;
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
    Ok((ckpt, rows))
}

fn run_cell<F: Real>(
    cell: Cell,
    protocol: Protocol,
    corpus: &Corpus,
    vocab: &Vocabulary,
    schema: &BeliefSchema,
    config: &ExperimentConfig,
    checkpoint: Option<&Checkpoint<F>>,
) -> Result<EvalReport> {
    let cell_corpus;
    let base = if cell.fraction < 1.0 {
        cell_corpus = subsample(corpus, cell.fraction, cell.seed)?;
        &cell_corpus
    } else {
        corpus
    };
    let mut data = TaskData::from_corpus(base, cell.task, vocab, schema);
    if protocol == Protocol::Domain {
        let train_domains: Vec<_> = (0..data.train.len()).map(|i| data.train.domains(i)).collect();
        let valid_domains: Vec<_> = (0..data.valid.len()).map(|i| data.valid.domains(i)).collect();
        let test_domains: Vec<_> = (0..data.test.len()).map(|i| data.test.domains(i)).collect();
        let (train_idx, test_idx) = domain_split_indices(
            &train_domains,
            &test_domains,
            &config.target_domain,
            config.n_in,
            config.n_out,
            cell.seed,
        )?;
        let valid_idx: Vec<usize> = valid_domains
            .iter()
            .enumerate()
            .filter(|(_, d)| d.contains(&config.target_domain))
            .map(|(i, _)| i)
            .collect();
        data.filter_train(&train_idx);
        data.filter_eval(&valid_idx, &test_idx);
    }
    let outcome = finetune_data::<F>(
        &data,
        checkpoint,
        &config.pipeline,
        schema,
        cell.seed,
        config.eval_seed,
    )?;
    let buckets = outcome.buckets.map(|buckets| {
        buckets
            .into_iter()
            .map(|(bucket, value, count)| (bucket.name().to_string(), value, count))
            .collect()
    });
    Ok(EvalReport {
        task: cell.task.name().into(),
        objective: objective_name(cell.objective).into(),
        fraction: cell.fraction,
        seed: cell.seed,
        metric: cell.task.metric_name().into(),
        value: outcome.test_value,
        value_x100: outcome.test_value * 100.0,
        best_epoch: outcome.best_epoch,
        curve: outcome.log,
        buckets,
    })
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("DIALOG_PRETRAIN_THREADS") {
        match raw.parse::<usize>() {
            Ok(n) if n > 0 => builder = builder.num_threads(n),
            _ => {
                return Err(Error::Config(format!(
                    "DIALOG_PRETRAIN_THREADS must be a positive integer, got {raw:?}"
                )))
            }
        }
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Run one experiment protocol end to end and write all artifacts.
pub fn run_experiment<F: Real>(
    protocol: Protocol,
    config: &ExperimentConfig,
    corpus: &Corpus,
    schema: &BeliefSchema,
    data_path: &Path,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let run_hash = super::run_hash(config, data_path)?;
    let manifest = RunManifest {
        protocol: protocol.name().into(),
        config_hash: config.hash(),
        run_hash: run_hash.clone(),
        data_path: data_path.display().to_string(),
        config: config.clone(),
    };
    let manifest_text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::json("config.json", e))?;
    super::write_atomic(&out_dir.join("config.json"), manifest_text.as_bytes())?;

    // One vocabulary for every cell, built from the full training split;
    // it matches what pretraining embeds and keeps evaluation candidates
    // identical across all conditions.
    let vocab = Vocabulary::build(corpus, config.pipeline.vocab_size);

    let cells = build_cells(protocol, config);
    let needed: Vec<(Objective, u64)> = {
        let mut set = std::collections::BTreeSet::new();
        for cell in &cells {
            if let Some(objective) = cell.objective {
                set.insert((objective, cell.seed));
            }
        }
        set.into_iter().collect()
    };

    let pool = thread_pool()?;
    let (checkpoints, pretrain_rows) = pool.install(|| -> Result<_> {
        let results: Vec<Result<((Objective, u64), (Checkpoint<F>, Vec<MetricRow>))>> = needed
            .par_iter()
            .map(|&(objective, seed)| {
                ensure_pretrained::<F>(objective, seed, corpus, config, &run_hash, out_dir)
                    .map(|out| ((objective, seed), out))
            })
            .collect();
        let mut map = BTreeMap::new();
        let mut rows = Vec::new();
        for result in results {
            let (key, (ckpt, mut log_rows)) = result?;
            map.insert((key.0.name(), key.1), ckpt);
            rows.append(&mut log_rows);
        }
        Ok((map, rows))
    })?;

    let reports: Vec<EvalReport> = pool.install(|| -> Result<_> {
        let results: Vec<Result<EvalReport>> = cells
            .par_iter()
            .map(|&cell| {
                let ckpt = cell
                    .objective
                    .map(|o| checkpoints.get(&(o.name(), cell.seed)).expect("pretrained"));
                run_cell::<F>(cell, protocol, corpus, &vocab, schema, config, ckpt)
            })
            .collect();
        results.into_iter().collect()
    })?;

    let mut metric_rows = pretrain_rows;
    let mut curve_rows = Vec::new();
    for report in &reports {
        let (mut metrics, mut curves) = report.rows();
        metric_rows.append(&mut metrics);
        curve_rows.append(&mut curves);
    }
    write_metric_rows(&out_dir.join("metrics.csv"), &metric_rows)?;
    write_metric_rows(&out_dir.join("curves.csv"), &curve_rows)?;
    write_reports(&out_dir.join("reports.json"), &reports)?;

    // Freeze the retrieval evaluation candidates into the run directory
    // whenever a retrieval task was scored.
    if cells.iter().any(|c| c.task == DownstreamTask::Nur) {
        let data = TaskData::from_corpus(corpus, DownstreamTask::Nur, &vocab, schema);
        if let crate::data::TaskExamples::Nur(examples) = &data.test {
            let candidates = retrieval_candidates(
                examples,
                &data.test_pool,
                config.pipeline.hits_k,
                config.eval_seed,
            )?;
            let mut text = String::from("example,candidate,token_ids\n");
            for (i, cands) in candidates.iter().enumerate() {
                for (j, cand) in cands.iter().enumerate() {
                    let ids: Vec<String> = cand.iter().map(|t| t.to_string()).collect();
                    text.push_str(&format!("{i},{j},{}\n", ids.join(" ")));
                }
            }
            super::write_atomic(&out_dir.join("candidates.csv"), text.as_bytes())?;
        }
    }

    regenerate_tables(out_dir)
}

/// Rebuild `tables/*.csv` from the run directory's logs alone.
pub fn regenerate_tables(out_dir: &Path) -> Result<()> {
    let manifest_path = out_dir.join("config.json");
    if !manifest_path.exists() {
        return Err(Error::Config(format!(
            "{} is not a run directory (missing config.json)",
            out_dir.display()
        )));
    }
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| Error::json(manifest_path.display().to_string(), e))?;
    let rows = read_metric_rows(&out_dir.join("metrics.csv"))?;
    let protocol = Protocol::parse(&manifest.protocol)
        .ok_or_else(|| Error::Config(format!("unknown protocol {}", manifest.protocol)))?;

    let tables_dir = out_dir.join("tables");
    match protocol {
        Protocol::Full | Protocol::Convergence | Protocol::Domain => {
            let table = ResultsTable::from_rows(&rows, 1.0, manifest.config.exclusion);
            let name = format!("{}.csv", protocol.name());
            super::write_atomic(&tables_dir.join(name), table.to_csv().as_bytes())?;
        }
        Protocol::Limited => {
            for &fraction in &manifest.config.fractions {
                let table = ResultsTable::from_rows(&rows, fraction, manifest.config.exclusion);
                let name = format!("limited_{}.csv", fraction_label(fraction));
                super::write_atomic(&tables_dir.join(name), table.to_csv().as_bytes())?;
            }
        }
        Protocol::CtxLen => {
            let csv = ctxlen_table_csv(&rows, &["none", "nur", "mur", "ini"]);
            super::write_atomic(&tables_dir.join("ctxlen.csv"), csv.as_bytes())?;
        }
    }
    Ok(())
}
