use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::{
    generate_synthetic, load_dataset, split_train_test, FederatedDataset, SizeSpec, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::fl::{
    Accounting, CoefficientSchedule, Comparison, LambdaSchedule, PrivacySpec, RunConfig,
    StrategyKind, UpcycledSpec,
};
use crate::models::SolverSpec;
use crate::privacy::{Mechanism, ObjectiveNoiseSpec, OutputNoiseSpec};

pub const STRATEGIES: [&str; 4] = ["fedavg", "fedavgm", "fedprox", "scaffold"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic {
        beta: f64,
        gamma: f64,
        iid: bool,
        devices: usize,
        dim_x: usize,
        classes: usize,
        sizes: SizeSpec,
        /// Fixed generation seed; without one each run seed generates its own.
        seed: Option<u64>,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    #[serde(flatten)]
    pub source: DatasetSource,
    /// `None` keeps a loaded file's own split.
    pub test_fraction: Option<f64>,
    /// Scale features so that every ‖x‖ ≤ 1.
    pub normalize: bool,
}

impl DatasetConfig {
    /// Dataset used by the run with master seed `run_seed`.
    pub fn build(&self, run_seed: u64) -> Result<FederatedDataset> {
        let (ds, split_seed) = match &self.source {
            DatasetSource::Synthetic {
                beta,
                gamma,
                iid,
                devices,
                dim_x,
                classes,
                sizes,
                seed,
            } => {
                let seed = seed.unwrap_or(run_seed);
                let spec = SyntheticSpec {
                    beta: *beta,
                    gamma: *gamma,
                    iid: *iid,
                    num_devices: *devices,
                    dim_x: *dim_x,
                    classes: *classes,
                    sizes: *sizes,
                    seed,
                };
                (generate_synthetic(&spec)?, seed)
            }
            DatasetSource::File { path } => {
                let ds = load_dataset(path)?;
                // The file is shared by every seed, and so is its split.
                let split = ds.seed().unwrap_or(0);
                (ds, split)
            }
        };
        let ds = match self.test_fraction {
            Some(f) => split_train_test(&ds, f, split_seed)?,
            None => ds,
        };
        Ok(if self.normalize { ds.normalized() } else { ds })
    }

    /// True when every seed sees the same data.
    pub fn is_fixed(&self) -> bool {
        match &self.source {
            DatasetSource::Synthetic { seed, .. } => seed.is_some(),
            DatasetSource::File { .. } => true,
        }
    }
}

/// A validated experiment: dataset, one run template and its seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// `master_seed` is overwritten per seed.
    pub run: RunConfig,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    /// Append a `selected` column to `rounds.csv`.
    pub debug_selected: bool,
}

impl ExperimentConfig {
    pub fn run_for_seed(&self, seed: u64) -> RunConfig {
        RunConfig {
            master_seed: seed,
            ..self.run.clone()
        }
    }

    pub fn label(&self) -> String {
        match &self.run.upcycled {
            Some(_) => format!("upcycled-{}", self.run.strategy.name()),
            None => self.run.strategy.name().to_string(),
        }
    }
}

const SECTIONS: [&str; 6] = ["dataset", "strategy", "upcycled", "privacy", "solver", "run"];
const DATASET_KEYS: [&str; 11] = [
    "path",
    "beta",
    "gamma",
    "iid",
    "devices",
    "dim_x",
    "classes",
    "sizes",
    "seed",
    "test_fraction",
    "normalize",
];
const STRATEGY_KEYS: [&str; 3] = ["name", "mu", "server_momentum"];
const UPCYCLED_KEYS: [&str; 7] = [
    "enabled",
    "comparison",
    "mode",
    "mu",
    "lambda",
    "lambda_slope",
    "c0",
];
const PRIVACY_KEYS: [&str; 8] = [
    "mechanism",
    "tau",
    "sigma",
    "alpha",
    "u1",
    "u2",
    "delta",
    "accounting",
];
const SOLVER_KEYS: [&str; 4] = ["epochs", "batch_size", "learning_rate", "momentum"];
const RUN_KEYS: [&str; 8] = [
    "rounds",
    "participation",
    "stragglers",
    "seeds",
    "out",
    "init_scale",
    "dissimilarity_every",
    "debug_selected",
];

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut cfg = parse_config_str(&text)?;
    if let DatasetSource::File { path: data } = &mut cfg.dataset.source {
        if data.is_relative() {
            if let Some(dir) = path.parent() {
                *data = dir.join(&*data);
            }
        }
    }
    Ok(cfg)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(format!("TOML syntax: {e}")))?;
    parse_config_table(&table)
}

/// Reads one section, recording unknown keys and type errors.
struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
    bad: &'a mut Vec<String>,
}

impl<'a> Section<'a> {
    fn new(
        root: &'a Table,
        name: &'static str,
        allowed: &[&str],
        bad: &'a mut Vec<String>,
    ) -> Self {
        let table = match root.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                bad.push(format!("[{name}] must be a table"));
                None
            }
        };
        if let Some(t) = table {
            for key in t.keys() {
                if !allowed.contains(&key.as_str()) {
                    bad.push(format!(
                        "unknown key {name}.{key} (allowed: {})",
                        allowed.join(", ")
                    ));
                }
            }
        }
        Self { name, table, bad }
    }

    fn present(&self) -> bool {
        self.table.is_some()
    }

    fn has(&self, key: &str) -> bool {
        self.table.is_some_and(|t| t.contains_key(key))
    }

    fn get<T: for<'de> Deserialize<'de>>(&mut self, key: &str) -> Option<T> {
        let v = self.table?.get(key)?;
        match v.clone().try_into::<T>() {
            Ok(x) => Some(x),
            Err(e) => {
                self.bad.push(format!("{}.{key}: {}", self.name, e.message()));
                None
            }
        }
    }

    fn float(&mut self, key: &str) -> Option<f64> {
        let v = self.table?.get(key)?;
        match v {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.bad.push(format!("{}.{key}: expected a number", self.name));
                None
            }
        }
    }

    fn uint(&mut self, key: &str) -> Option<u64> {
        let v = self.table?.get(key)?;
        match v {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            _ => {
                self.bad
                    .push(format!("{}.{key}: expected a non-negative integer", self.name));
                None
            }
        }
    }
}

pub fn parse_config_table(root: &Table) -> Result<ExperimentConfig> {
    let mut bad = Vec::new();
    for key in root.keys() {
        if !SECTIONS.contains(&key.as_str()) {
            bad.push(format!(
                "unknown section [{key}] (allowed: {})",
                SECTIONS.join(", ")
            ));
        }
    }

    // [strategy]
    let strategy = {
        let mut s = Section::new(root, "strategy", &STRATEGY_KEYS, &mut bad);
        let name: Option<String> = s.get("name");
        let mu = s.float("mu");
        let momentum = s.float("server_momentum");
        let has_mu = s.has("mu");
        let has_momentum = s.has("server_momentum");
        let present = s.present();
        match name.as_deref() {
            None if present && s.has("name") => None,
            None => {
                bad.push("strategy.name is required".to_string());
                None
            }
            Some("fedavg") => Some(StrategyKind::FedAvg),
            Some("fedavgm") => Some(StrategyKind::FedAvgM {
                server_momentum: momentum.unwrap_or(0.9),
            }),
            Some("fedprox") => match mu {
                Some(mu) => Some(StrategyKind::FedProx { mu }),
                None => {
                    if !has_mu {
                        bad.push("strategy.mu is required for fedprox".to_string());
                    }
                    None
                }
            },
            Some("scaffold") => Some(StrategyKind::Scaffold),
            Some(other) => {
                bad.push(format!(
                    "unknown strategy {other:?}; allowed: {}",
                    STRATEGIES.join(", ")
                ));
                None
            }
        }
        .inspect(|k| {
            if has_mu && !matches!(k, StrategyKind::FedProx { .. }) {
                bad.push(format!("strategy.mu only applies to fedprox, not {}", k.name()));
            }
            if has_momentum && !matches!(k, StrategyKind::FedAvgM { .. }) {
                bad.push(format!(
                    "strategy.server_momentum only applies to fedavgm, not {}",
                    k.name()
                ));
            }
        })
    };

    // [solver]
    let solver = {
        let mut s = Section::new(root, "solver", &SOLVER_KEYS, &mut bad);
        let d = SolverSpec::default();
        SolverSpec {
            epochs: s.uint("epochs").map_or(d.epochs, |v| v as usize),
            batch_size: s.uint("batch_size").map_or(d.batch_size, |v| v as usize),
            learning_rate: s.float("learning_rate").unwrap_or(d.learning_rate),
            momentum: s.float("momentum").unwrap_or(d.momentum),
        }
    };

    // [upcycled]
    let upcycled = {
        let mut s = Section::new(root, "upcycled", &UPCYCLED_KEYS, &mut bad);
        let enabled: bool = s.get("enabled").unwrap_or(s.present());
        let comparison: Option<String> = s.get("comparison");
        let mode: Option<String> = s.get("mode");
        let mu = s.float("mu");
        let lambda = s.float("lambda");
        let slope = s.float("lambda_slope").unwrap_or(0.0);
        let c0 = s.float("c0");
        if !enabled {
            None
        } else {
            let comparison = match comparison.as_deref().unwrap_or("double") {
                "double" => Some(Comparison::Double),
                "fused" => Some(Comparison::Fused),
                other => {
                    bad.push(format!(
                        "unknown upcycled.comparison {other:?}; allowed: double, fused"
                    ));
                    None
                }
            };
            let mode = mode.unwrap_or_else(|| "prox".to_string());
            let mu = mu.or(strategy.map(|k| k.prox_mu()).filter(|m| *m > 0.0));
            let needs_lambda = mode == "prox" || mode == "alg1";
            if needs_lambda && lambda.is_none() {
                bad.push(format!("upcycled.lambda is required for mode {mode:?}"));
            }
            let schedule = CoefficientSchedule::parse(
                &mode,
                mu,
                LambdaSchedule {
                    lambda0: lambda.unwrap_or(0.0),
                    slope,
                },
                c0,
            );
            match (comparison, schedule) {
                (Some(comparison), Ok(schedule)) => Some(UpcycledSpec {
                    comparison,
                    schedule,
                }),
                (_, Err(e)) => {
                    let msg = match e {
                        Error::Config(m) => m,
                        other => other.to_string(),
                    };
                    let hint = if msg.contains("needs mu") {
                        " (set upcycled.mu or use a fedprox strategy)"
                    } else {
                        ""
                    };
                    bad.push(format!("upcycled: {msg}{hint}"));
                    None
                }
                _ => None,
            }
        }
    };

    // [privacy]
    let privacy = {
        let mut s = Section::new(root, "privacy", &PRIVACY_KEYS, &mut bad);
        if !s.present() {
            None
        } else {
            let mechanism: Option<String> = s.get("mechanism");
            let delta = s.float("delta").unwrap_or(1e-5);
            let accounting = match s.get::<String>("accounting").as_deref().unwrap_or("all_rounds") {
                "all_rounds" => Some(Accounting::AllRounds),
                "participation" => Some(Accounting::Participation),
                other => {
                    s.bad.push(format!(
                        "unknown privacy.accounting {other:?}; allowed: all_rounds, participation"
                    ));
                    None
                }
            };
            let mech = match mechanism.as_deref() {
                Some("output") => {
                    let tau = s.float("tau").unwrap_or(1.0);
                    match s.float("sigma") {
                        None => {
                            s.bad.push("privacy.sigma is required for output perturbation".into());
                            None
                        }
                        Some(sigma) => match OutputNoiseSpec::new(tau, sigma) {
                            Ok(o) => Some(Mechanism::Output(o)),
                            Err(e) => {
                                s.bad.push(e.to_string());
                                None
                            }
                        },
                    }
                }
                Some("objective") => {
                    let u1 = s.float("u1").unwrap_or(ObjectiveNoiseSpec::DEFAULT_U1);
                    let u2 = s.float("u2").unwrap_or(ObjectiveNoiseSpec::DEFAULT_U2);
                    match s.float("alpha") {
                        None => {
                            s.bad
                                .push("privacy.alpha is required for objective perturbation".into());
                            None
                        }
                        Some(alpha) => match ObjectiveNoiseSpec::new(alpha, u1, u2) {
                            Ok(o) => Some(Mechanism::Objective(o)),
                            Err(e) => {
                                s.bad.push(e.to_string());
                                None
                            }
                        },
                    }
                }
                Some(other) => {
                    s.bad.push(format!(
                        "unknown privacy.mechanism {other:?}; allowed: output, objective"
                    ));
                    None
                }
                None => {
                    s.bad.push("privacy.mechanism is required".into());
                    None
                }
            };
            match (mech, accounting) {
                (Some(mechanism), Some(accounting)) => Some(PrivacySpec {
                    mechanism,
                    delta,
                    accounting,
                }),
                _ => None,
            }
        }
    };
    let objective = matches!(
        privacy,
        Some(PrivacySpec {
            mechanism: Mechanism::Objective(_),
            ..
        })
    );

    // [dataset]
    let dataset = {
        let mut s = Section::new(root, "dataset", &DATASET_KEYS, &mut bad);
        let normalize: bool = s.get("normalize").unwrap_or(objective);
        let test_fraction = s.float("test_fraction");
        let seed = s.uint("seed");
        let source = if let Some(path) = s.get::<String>("path") {
            for key in ["beta", "gamma", "iid", "devices", "dim_x", "classes", "sizes", "seed"] {
                if s.has(key) {
                    s.bad.push(format!(
                        "dataset.{key} cannot be combined with dataset.path"
                    ));
                }
            }
            Some(DatasetSource::File { path: path.into() })
        } else {
            let sizes: SizeSpec = s.get("sizes").unwrap_or_default();
            Some(DatasetSource::Synthetic {
                beta: s.float("beta").unwrap_or(0.0),
                gamma: s.float("gamma").unwrap_or(0.0),
                iid: s.get("iid").unwrap_or(false),
                devices: s.uint("devices").unwrap_or(30) as usize,
                dim_x: s.uint("dim_x").unwrap_or(20) as usize,
                classes: s.uint("classes").unwrap_or(10) as usize,
                sizes,
                seed,
            })
        };
        let test_fraction = match source {
            Some(DatasetSource::Synthetic { .. }) => Some(test_fraction.unwrap_or(0.2)),
            _ => test_fraction,
        };
        if let Some(f) = test_fraction {
            if !(0.0..1.0).contains(&f) {
                bad.push(format!("dataset.test_fraction must lie in [0, 1), got {f}"));
            }
        }
        if let Some(DatasetSource::Synthetic {
            beta,
            gamma,
            devices,
            dim_x,
            classes,
            ..
        }) = &source
        {
            if *devices < 1 || *dim_x < 1 || *classes < 2 {
                bad.push("dataset needs devices ≥ 1, dim_x ≥ 1, classes ≥ 2".to_string());
            }
            if !(*beta >= 0.0 && *gamma >= 0.0) {
                bad.push("dataset.beta and dataset.gamma must be ≥ 0".to_string());
            }
        }
        if objective && !normalize {
            bad.push(
                "objective perturbation assumes normalized features; set dataset.normalize = true"
                    .to_string(),
            );
        }
        source.map(|source| DatasetConfig {
            source,
            test_fraction,
            normalize,
        })
    };

    // [run]
    let (rounds, participation, stragglers, seeds, out, init_scale, every, debug) = {
        let mut s = Section::new(root, "run", &RUN_KEYS, &mut bad);
        let rounds = s.uint("rounds");
        if rounds.is_none() && !s.has("rounds") {
            s.bad.push("run.rounds is required".to_string());
        }
        (
            rounds.map(|r| r as usize),
            s.float("participation").unwrap_or(0.3),
            s.float("stragglers").unwrap_or(0.0),
            s.get::<Vec<u64>>("seeds").unwrap_or_else(|| vec![0]),
            s.get::<String>("out").map(PathBuf::from),
            s.float("init_scale").unwrap_or(0.0),
            s.uint("dissimilarity_every").unwrap_or(10) as usize,
            s.get::<bool>("debug_selected").unwrap_or(false),
        )
    };
    if seeds.is_empty() {
        bad.push("run.seeds must list at least one seed".to_string());
    }
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        bad.push("run.seeds contains duplicates".to_string());
    }

    // Missing pieces are already reported; placeholders keep the remaining
    // checks running so every violation surfaces at once.
    let complete = strategy.is_some() && rounds.is_some();
    let run = RunConfig {
        strategy: strategy.unwrap_or(StrategyKind::FedProx { mu: 1.0 }),
        upcycled,
        rounds: rounds.unwrap_or(2),
        participation,
        stragglers,
        solver,
        privacy,
        master_seed: 0,
        init_scale,
        dissimilarity_every: every,
    };
    if let Err(Error::ConfigViolations(v)) = run.validate() {
        bad.extend(v);
    }
    if complete && bad.is_empty() {
        return Ok(ExperimentConfig {
            dataset: dataset.expect("dataset parsed"),
            run,
            seeds,
            out,
            debug_selected: debug,
        });
    }
    Err(Error::ConfigViolations(bad))
}
