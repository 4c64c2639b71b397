//! Experiment configuration: TOML file, command-line overrides and
//! per-family training defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cdpo_core::data::{generate_moons_dataset, load_tabular_dataset, MoonsConfig, PODataset};
use cdpo_core::eval::Metric;
use cdpo_core::genmodels::Family;
use cdpo_core::losses::LossKind;
use cdpo_core::nn::Restriction;
use cdpo_core::orthocheck::SuiteConfig;
use cdpo_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

pub const OUT_ENV: &str = "CDPO_LAB_OUT";
pub const DEFAULT_OUT: &str = "cdpo-lab-out";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Moons(MoonsConfig),
    File {
        train: PathBuf,
        test: Option<PathBuf>,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Moons(MoonsConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub metrics: Vec<Metric>,
    /// Samples per side for W2.
    pub p: usize,
    pub n_points: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            metrics: vec![Metric::W2],
            p: 200,
            n_points: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub learners: Vec<LossKind>,
    pub families: Vec<Family>,
    pub n_train: Vec<usize>,
    /// Training overrides applied to one family only, keyed by family name.
    pub overrides: BTreeMap<String, toml::Table>,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            learners: LossKind::ALL.to_vec(),
            families: Family::ALL.to_vec(),
            n_train: vec![500, 2000, 4000],
            overrides: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub learner: LossKind,
    pub family: Family,
    pub restriction: Restriction,
    /// Covariate indices forming V; all of X when absent.
    pub v_mask: Option<Vec<usize>>,
    pub seeds: Vec<u64>,
    /// Overrides on top of the per-family training defaults.
    pub train: toml::Table,
    pub eval: EvalSpec,
    pub benchmark: BenchmarkSpec,
    pub orthocheck: SuiteConfig,
    pub out: Option<PathBuf>,
    /// Worker threads for grid cells; 0 uses all cores.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::default(),
            learner: LossKind::Gdr,
            family: Family::Cnf,
            restriction: Restriction::Full,
            v_mask: None,
            seeds: vec![0],
            train: toml::Table::new(),
            eval: EvalSpec::default(),
            benchmark: BenchmarkSpec::default(),
            orthocheck: SuiteConfig::default(),
            out: None,
            jobs: 1,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub learner: Option<LossKind>,
    pub family: Option<Family>,
    pub restriction: Option<Restriction>,
    pub jobs: Option<usize>,
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>, over: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(s) = over.seed {
            cfg.seeds = vec![s];
        }
        if let Some(o) = &over.out {
            cfg.out = Some(o.clone());
        } else if let Ok(env) = std::env::var(OUT_ENV) {
            cfg.out = Some(PathBuf::from(env));
        }
        if let Some(l) = over.learner {
            cfg.learner = l;
            cfg.benchmark.learners = vec![l];
        }
        if let Some(f) = over.family {
            cfg.family = f;
            cfg.benchmark.families = vec![f];
        }
        if let Some(r) = over.restriction {
            cfg.restriction = r;
        }
        if let Some(j) = over.jobs {
            cfg.jobs = j;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seed list is empty");
        }
        if let DatasetSpec::File { train, test } = &self.dataset {
            for p in std::iter::once(train).chain(test) {
                if !p.exists() {
                    bail!("dataset file {} does not exist", p.display());
                }
            }
        }
        if self.eval.p == 0 || self.eval.n_points == 0 {
            bail!("eval.p and eval.n_points must be positive");
        }
        for name in self.benchmark.overrides.keys() {
            if !Family::ALL.iter().any(|f| f.name() == name) {
                bail!("benchmark override for unknown family '{name}'");
            }
        }
        for family in Family::ALL {
            self.train_config(family, self.learner, 0)
                .with_context(|| format!("training settings for {family}"))?;
        }
        Ok(())
    }

    pub fn out_root(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    /// Effective training configuration for one cell.
    pub fn train_config(&self, family: Family, learner: LossKind, seed: u64) -> Result<TrainConfig> {
        let base = TrainConfig::for_family(family, learner);
        let mut table = toml::Table::try_from(&base).context("serializing training defaults")?;
        merge(&mut table, &self.train);
        if let Some(o) = self.benchmark.overrides.get(family.name()) {
            merge(&mut table, o);
        }
        let mut cfg: TrainConfig = table.try_into().context("invalid [train] section")?;
        cfg.family = family;
        cfg.learner = learner;
        cfg.seed = seed;
        cfg.target_restriction = self.restriction;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Train and test splits for `seed`; `n_train` overrides the moons size.
    pub fn datasets(&self, seed: u64, n_train: Option<usize>) -> Result<(PODataset, Option<PODataset>)> {
        let (mut train, mut test) = match &self.dataset {
            DatasetSpec::Moons(m) => {
                let mut m = m.clone();
                m.seed = seed;
                if let Some(n) = n_train {
                    m.n_train = n;
                }
                let d = generate_moons_dataset(&m)?;
                let test = (!d.test.is_empty()).then_some(d.test);
                (d.train, test)
            }
            DatasetSpec::File { train, test } => {
                if n_train.is_some() {
                    bail!("n_train grids need a moons dataset");
                }
                let tr = load_tabular_dataset(train)?;
                let te = test.as_deref().map(load_tabular_dataset).transpose()?;
                (tr, te)
            }
        };
        if let Some(mask) = &self.v_mask {
            train.set_v_mask(mask.clone())?;
            if let Some(t) = test.as_mut() {
                t.set_v_mask(mask.clone())?;
            }
        }
        Ok((train, test))
    }
}
