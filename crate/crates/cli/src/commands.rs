//! The `generate`, `train`, `evaluate`, `benchmark` and `orthocheck`
//! commands. Each returns whether all requested work succeeded.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use cdpo_core::data::{save_tabular_dataset, PODataset};
use cdpo_core::eval::{avg_log_prob, evaluate_w2, Conditioning, EvalResult, Metric};
use cdpo_core::exec::Exec;
use cdpo_core::genmodels::{Family, GenerativeModel};
use cdpo_core::losses::LossKind;
use cdpo_core::orthocheck::{run_suite, scaling_studies};
use cdpo_core::train::{train_two_stage, TrainConfig, TrainedLearner};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BenchmarkSpec, DatasetSpec, EvalSpec, ExperimentConfig};
use crate::record::{config_hash, list_records, read_record, write_json, Checkpoints, RecordKind, RunRecord};

pub const SCALING_FILE: &str = "scaling.json";

fn short(hash: &str) -> &str {
    &hash[..12]
}

fn conditioning(learner: LossKind) -> Conditioning {
    if learner == LossKind::PlugIn {
        Conditioning::FullX
    } else {
        Conditioning::Masked
    }
}

/// Evaluates `model` on `test` for each requested metric and both arms.
pub fn evaluate_model(
    model: &GenerativeModel,
    learner: LossKind,
    cfg: &ExperimentConfig,
    test: &PODataset,
    seed: u64,
    exec: Exec,
) -> Result<Vec<EvalResult>> {
    let cond = conditioning(learner);
    let mut out = Vec::new();
    for &metric in &cfg.eval.metrics {
        for a in 0..2u8 {
            let r = match metric {
                Metric::W2 => evaluate_w2(model, test, a, cfg.eval.p, cfg.eval.n_points.min(test.len()), cond, seed, exec)?,
                Metric::LogProb => avg_log_prob(model, test, a, cond)?,
            };
            out.push(r);
        }
    }
    Ok(out)
}

fn checkpoints(t: &TrainedLearner) -> Checkpoints {
    Checkpoints {
        target: t.target.to_checkpoint(Some(&t.ema.shadow)),
        nuisance: t.nuisance.as_ref().map(|n| n.to_checkpoint()),
    }
}

/// Frozen model carrying the evaluated (EMA) weights of a record.
pub fn model_from_record(rec: &RunRecord) -> Result<GenerativeModel> {
    let ck = rec
        .checkpoints
        .as_ref()
        .ok_or_else(|| anyhow!("record has no checkpoint"))?;
    let mut m = GenerativeModel::from_checkpoint(&ck.target)?;
    if let Some(ema) = &ck.target.ema_params {
        m.set_params(ema)?;
    }
    m.freeze();
    Ok(m)
}

pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<bool> {
    let DatasetSpec::Moons(moons) = &cfg.dataset else {
        bail!("generate needs a moons dataset spec");
    };
    for &seed in &cfg.seeds {
        let dir = cfg.out_root().join("data").join(format!("seed-{seed}"));
        std::fs::create_dir_all(&dir)?;
        let (train, test) = cfg.datasets(seed, None)?;
        save_atomic(&train, &dir.join("train.csv"))?;
        if let Some(t) = test {
            save_atomic(&t, &dir.join("test.csv"))?;
        }
        let mut m = moons.clone();
        m.seed = seed;
        write_json(&dir.join("dataset.json"), &m)?;
        println!("wrote {}", dir.display());
    }
    Ok(true)
}

fn save_atomic(ds: &PODataset, path: &Path) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    save_tabular_dataset(ds, &tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Snapshot of one grid cell, free of grid-wide and output settings so that
/// extending a grid or moving its output leaves existing cell keys intact.
fn cell_config(cfg: &ExperimentConfig, family: Family, learner: LossKind, seed: u64, n_train: Option<usize>) -> ExperimentConfig {
    let mut cell = cfg.clone();
    cell.family = family;
    cell.learner = learner;
    cell.seeds = vec![seed];
    cell.out = None;
    cell.jobs = 1;
    cell.benchmark = BenchmarkSpec {
        learners: vec![learner],
        families: vec![family],
        n_train: n_train.into_iter().collect(),
        overrides: cfg
            .benchmark
            .overrides
            .iter()
            .filter(|(k, _)| k.as_str() == family.name())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
    };
    cell
}

#[derive(Serialize)]
struct CellKey<'a> {
    config: &'a ExperimentConfig,
    train: &'a TrainConfig,
    n_train: Option<usize>,
}

/// Trains one cell and, when a test split exists and `evaluate` is set,
/// evaluates it. Failures are captured in the record.
fn run_cell(
    cfg: &ExperimentConfig,
    kind: RecordKind,
    family: Family,
    learner: LossKind,
    seed: u64,
    n_train: Option<usize>,
    evaluate: bool,
) -> RunRecord {
    let cell = cell_config(cfg, family, learner, seed, n_train);
    let mut rec = RunRecord::new(kind, &cell, seed, n_train);
    let start = Instant::now();
    let result = (|| -> Result<()> {
        let tc = cell.train_config(family, learner, seed)?;
        rec.config_hash = config_hash(&CellKey {
            config: &cell,
            train: &tc,
            n_train,
        })?;
        rec.train_config = Some(tc.clone());
        let (train, test) = cell.datasets(seed, n_train)?;
        let trained = train_two_stage(&train, &tc)?;
        rec.checkpoints = Some(checkpoints(&trained));
        rec.target_history = trained.target_history.clone();
        if evaluate {
            let test = test.ok_or_else(|| anyhow!("no test split to evaluate on"))?;
            rec.evals = evaluate_model(&trained.eval_model(), learner, &cell, &test, seed, tc.exec)?;
        }
        Ok(())
    })();
    if let Err(e) = result {
        rec.fail(&e);
    }
    rec.wall_clock_secs = start.elapsed().as_secs_f64();
    rec
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<bool> {
    let mut ok = true;
    for &seed in &cfg.seeds {
        let rec = run_cell(cfg, RecordKind::Train, cfg.family, cfg.learner, seed, None, false);
        let hash = if rec.config_hash.is_empty() { "invalid".to_string() } else { short(&rec.config_hash).to_string() };
        let path = cfg
            .out_root()
            .join("runs")
            .join(format!("{}-{}-seed{seed}-{hash}", cfg.learner, cfg.family))
            .join("record.json");
        write_json(&path, &rec)?;
        match &rec.error {
            Some(e) => {
                eprintln!("error: seed {seed}: {e}");
                ok = false;
            }
            None => println!("wrote {}", path.display()),
        }
    }
    Ok(ok)
}

/// Evaluates the checkpoint in `record_path`. The dataset comes from the
/// record's own config; `eval` replaces its evaluation spec when given.
pub fn cmd_evaluate(record_path: &Path, eval: Option<EvalSpec>, seed: Option<u64>, out: Option<&Path>) -> Result<bool> {
    let path = if record_path.is_dir() {
        record_path.join("record.json")
    } else {
        record_path.to_path_buf()
    };
    let trained = read_record(&path)?;
    let mut rcfg = trained.config.clone();
    if let Some(e) = eval {
        rcfg.eval = e;
    }
    let eval_seed = seed.unwrap_or(trained.seed);
    let mut rec = RunRecord::new(RecordKind::Evaluate, &rcfg, eval_seed, trained.n_train);
    rec.config_hash = trained.config_hash.clone();
    rec.train_config = trained.train_config.clone();
    let start = Instant::now();
    let result = (|| -> Result<Vec<EvalResult>> {
        let model = model_from_record(&trained)?;
        let (_, test) = rcfg.datasets(trained.seed, trained.n_train)?;
        let test = test.ok_or_else(|| anyhow!("the record's dataset has no test split"))?;
        let exec = trained.train_config.as_ref().map_or(Exec::default(), |t| t.exec);
        evaluate_model(&model, rcfg.learner, &rcfg, &test, eval_seed, exec)
    })();
    let ok = match result {
        Ok(evals) => {
            rec.evals = evals;
            true
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            rec.fail(&e);
            false
        }
    };
    rec.wall_clock_secs = start.elapsed().as_secs_f64();
    let dest = match out {
        Some(dir) => dir.join("eval.json"),
        None => path.with_file_name("eval.json"),
    };
    write_json(&dest, &rec)?;
    for e in &rec.evals {
        println!(
            "{:?} a={} {:.5} ± {:.5}",
            e.metric, e.arm, e.aggregate.center, e.aggregate.spread
        );
    }
    println!("wrote {}", dest.display());
    Ok(ok)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BenchmarkSummary {
    pub trained: usize,
    pub skipped: usize,
    pub failed: usize,
}

pub fn benchmark_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_root().join("benchmark").join("records")
}

pub fn cmd_benchmark(cfg: &ExperimentConfig) -> Result<BenchmarkSummary> {
    let dir = benchmark_dir(cfg);
    std::fs::create_dir_all(&dir)?;
    let existing: std::collections::HashSet<String> = list_records(&dir)?
        .into_iter()
        .filter(|(_, r)| r.is_ok())
        .map(|(_, r)| r.config_hash)
        .collect();
    let n_grid: Vec<Option<usize>> = match cfg.dataset {
        DatasetSpec::Moons(_) => cfg.benchmark.n_train.iter().map(|&n| Some(n)).collect(),
        DatasetSpec::File { .. } => vec![None],
    };
    let mut cells = Vec::new();
    for &family in &cfg.benchmark.families {
        for &learner in &cfg.benchmark.learners {
            for &n in &n_grid {
                for &seed in &cfg.seeds {
                    cells.push((family, learner, n, seed));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .context("building worker pool")?;
    let outcomes: Vec<Result<Option<bool>>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(family, learner, n, seed)| -> Result<Option<bool>> {
                // the key must be known before training to decide whether to skip
                let cell = cell_config(cfg, family, learner, seed, n);
                let key = match cell.train_config(family, learner, seed) {
                    Ok(tc) => Some(config_hash(&CellKey {
                        config: &cell,
                        train: &tc,
                        n_train: n,
                    })?),
                    Err(_) => None,
                };
                if key.as_ref().is_some_and(|k| existing.contains(k)) {
                    return Ok(None);
                }
                let rec = run_cell(cfg, RecordKind::BenchmarkCell, family, learner, seed, n, true);
                let tag = key.as_deref().map_or("invalid", short);
                let name = format!(
                    "{}-{}-n{}-seed{seed}-{tag}.json",
                    family,
                    learner,
                    n.map_or("file".to_string(), |n| n.to_string())
                );
                write_json(&dir.join(name), &rec)?;
                if let Some(e) = &rec.error {
                    eprintln!("cell {family}/{learner}/n={n:?}/seed={seed} failed: {e}");
                }
                Ok(Some(rec.is_ok()))
            })
            .collect()
    });
    let mut s = BenchmarkSummary::default();
    for o in outcomes {
        match o? {
            None => s.skipped += 1,
            Some(true) => s.trained += 1,
            Some(false) => {
                s.trained += 1;
                s.failed += 1;
            }
        }
    }
    println!(
        "benchmark: {} cells run, {} skipped, {} failed -> {}",
        s.trained,
        s.skipped,
        s.failed,
        dir.display()
    );
    Ok(s)
}

pub fn cmd_orthocheck(cfg: &ExperimentConfig, inject_sign_error: bool, exec: Exec) -> Result<bool> {
    let mut suite = cfg.orthocheck.clone();
    suite.seed = cfg.seeds[0];
    suite.inject_sign_error |= inject_sign_error;
    let start = Instant::now();
    let report = run_suite(&suite, exec);
    let mut rec = RunRecord::new(RecordKind::Orthocheck, cfg, suite.seed, None);
    rec.config_hash = config_hash(&suite)?;
    for r in &report.records {
        println!(
            "{} {:<40} value={:.3e} bounds=[{}, {}]",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.value,
            r.lower.map_or("-".into(), |v| format!("{v:.3e}")),
            r.upper.map_or("-".into(), |v| format!("{v:.3e}")),
        );
    }
    let passed = report.all_passed();
    if !passed {
        rec.status = crate::record::Status::Error;
        rec.error = Some(format!("{} check(s) failed", report.failures().count()));
    }
    rec.orthocheck = Some(report);
    rec.wall_clock_secs = start.elapsed().as_secs_f64();
    let dir = cfg.out_root().join("orthocheck");
    write_json(&dir.join("report.json"), &rec)?;
    match scaling_studies(&suite) {
        Ok(s) => write_json(&dir.join(SCALING_FILE), &s)?,
        Err(e) => eprintln!("scaling study unavailable: {e}"),
    }
    println!("wrote {}", dir.display());
    Ok(passed)
}
