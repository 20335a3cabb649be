use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fl::{run, NoObserver, RoundObserver, RoundRecord, RunOutput, Trajectory};
use crate::privacy::Parity;

use super::config::ExperimentConfig;

pub const CSV_COLUMNS: [&str; 9] = [
    "round",
    "parity",
    "train_loss",
    "test_acc",
    "test_acc_std",
    "wall_s",
    "eps_min",
    "eps_avg",
    "eps_max",
];

/// Mean and sample standard deviation; `std` is `None` below two values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: Option<f64>,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        Some(Stat { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSummary {
    pub min: f64,
    pub avg: f64,
    pub max: f64,
    pub per_client: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub completed: bool,
    pub error: Option<String>,
    pub rounds_completed: usize,
    pub final_train_loss: Option<f64>,
    pub final_test_acc: Option<f64>,
    pub final_test_acc_std: Option<f64>,
    pub best_train_loss: Option<f64>,
    pub epsilon: Option<EpsilonSummary>,
    pub wall_odd_s: f64,
    pub wall_even_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub label: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedSummary>,
    pub final_test_acc: Option<Stat>,
    pub final_train_loss: Option<Stat>,
    pub eps_avg: Option<Stat>,
    /// Best train loss over every seed, an empirical stand-in for f*.
    pub empirical_fstar: Option<f64>,
    pub wall_odd_s: f64,
    pub wall_even_s: f64,
    pub all_completed: bool,
}

impl SummaryReport {
    /// JSON with every wall-time field zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> SummaryReport {
        let mut r = self.clone();
        r.wall_odd_s = 0.0;
        r.wall_even_s = 0.0;
        for s in &mut r.seeds {
            s.wall_odd_s = 0.0;
            s.wall_even_s = 0.0;
        }
        r
    }
}

/// The per-seed artefacts kept in memory by [`run_suite_with`].
#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub output: RunOutput,
    pub error: Option<Error>,
}

pub fn run_suite(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<SummaryReport> {
    Ok(run_suite_with(cfg, out_dir, |_| Box::new(NoObserver))?.0)
}

/// Runs every seed in order. A failing seed is recorded and the suite moves
/// on; only I/O and dataset errors abort the suite.
pub fn run_suite_with(
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
    mut observer: impl FnMut(u64) -> Box<dyn RoundObserver>,
) -> Result<(SummaryReport, Vec<SeedRun>)> {
    let out_dir: Option<PathBuf> = out_dir.map(Path::to_path_buf).or_else(|| cfg.out.clone());
    if let Some(dir) = &out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut seeds = Vec::new();
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let dataset = cfg.dataset.build(seed)?;
        let run_cfg = cfg.run_for_seed(seed);
        let mut obs = observer(seed);
        let (output, error) = match run(&dataset, &run_cfg, obs.as_mut()) {
            Ok(out) => (out, None),
            Err(aborted) => (aborted.partial, Some(aborted.error)),
        };
        if let Some(dir) = &out_dir {
            let seed_dir = dir.join(format!("seed-{seed}"));
            fs::create_dir_all(&seed_dir)?;
            write_rounds_csv(
                &seed_dir.join("rounds.csv"),
                &output.records,
                cfg.debug_selected,
            )?;
            write_json(&seed_dir.join("trajectory.json"), &output.trajectory)?;
            write_json(&seed_dir.join("final_model.json"), &output.final_global)?;
            if let Some(ledger) = &output.ledger {
                write_json(&seed_dir.join("ledger.json"), ledger)?;
            }
        }
        seeds.push(summarize_seed(seed, &output, error.as_ref(), cfg)?);
        runs.push(SeedRun {
            seed,
            output,
            error,
        });
    }
    let report = build_report(cfg, seeds);
    if let Some(dir) = &out_dir {
        write_json(&dir.join("summary.json"), &report)?;
    }
    Ok((report, runs))
}

fn summarize_seed(
    seed: u64,
    out: &RunOutput,
    error: Option<&Error>,
    cfg: &ExperimentConfig,
) -> Result<SeedSummary> {
    let last = out.records.last();
    let wall = |p: Parity| {
        out.records
            .iter()
            .filter(|r| r.parity == p)
            .map(|r| r.wall_s)
            .sum::<f64>()
    };
    let best = out
        .records
        .iter()
        .map(|r| r.train_loss)
        .chain(out.trajectory.points.iter().map(|p| p.train_loss))
        .chain(std::iter::once(out.trajectory.initial_loss).filter(|v| v.is_finite()))
        .min_by(f64::total_cmp);
    let epsilon = match (&out.ledger, &cfg.run.privacy) {
        (Some(ledger), Some(p)) if !out.records.is_empty() => {
            let per_client = ledger.epsilons(Some(p.delta))?;
            let (min, avg, max) = ledger.epsilon_stats(Some(p.delta))?;
            Some(EpsilonSummary {
                min,
                avg,
                max,
                per_client,
            })
        }
        _ => None,
    };
    Ok(SeedSummary {
        seed,
        completed: error.is_none(),
        error: error.map(|e| e.to_string()),
        rounds_completed: out.records.len(),
        final_train_loss: last.map(|r| r.train_loss),
        final_test_acc: last.map(|r| r.test_acc),
        final_test_acc_std: last.map(|r| r.test_acc_std),
        best_train_loss: best,
        epsilon,
        wall_odd_s: wall(Parity::Odd),
        wall_even_s: wall(Parity::Even),
    })
}

fn build_report(cfg: &ExperimentConfig, seeds: Vec<SeedSummary>) -> SummaryReport {
    let done: Vec<&SeedSummary> = seeds.iter().filter(|s| s.completed).collect();
    let collect = |f: &dyn Fn(&SeedSummary) -> Option<f64>| -> Vec<f64> {
        done.iter().filter_map(|s| f(s)).collect()
    };
    SummaryReport {
        label: cfg.label(),
        config: cfg.clone(),
        final_test_acc: Stat::of(&collect(&|s| s.final_test_acc)),
        final_train_loss: Stat::of(&collect(&|s| s.final_train_loss)),
        eps_avg: Stat::of(&collect(&|s| s.epsilon.as_ref().map(|e| e.avg))),
        empirical_fstar: seeds
            .iter()
            .filter_map(|s| s.best_train_loss)
            .min_by(f64::total_cmp),
        wall_odd_s: seeds.iter().map(|s| s.wall_odd_s).sum(),
        wall_even_s: seeds.iter().map(|s| s.wall_even_s).sum(),
        all_completed: seeds.iter().all(|s| s.completed),
        seeds,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_rounds_csv(path: &Path, records: &[RoundRecord], debug_selected: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = CSV_COLUMNS.to_vec();
    if debug_selected {
        header.push("selected");
    }
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.round.to_string(),
            match r.parity {
                Parity::Odd => "odd".to_string(),
                Parity::Even => "even".to_string(),
            },
            r.train_loss.to_string(),
            r.test_acc.to_string(),
            r.test_acc_std.to_string(),
            r.wall_s.to_string(),
            opt(r.eps_min),
            opt(r.eps_avg),
            opt(r.eps_max),
        ];
        if debug_selected {
            row.push(
                r.selected
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(";"),
            );
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back a `rounds.csv`, checking the column order.
pub fn read_rounds_csv(path: &Path) -> Result<Vec<RoundRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < CSV_COLUMNS.len() || cols[..CSV_COLUMNS.len()] != CSV_COLUMNS {
        return Err(Error::Contract(format!(
            "{}: unexpected columns {cols:?}",
            path.display()
        )));
    }
    let has_selected = cols.get(CSV_COLUMNS.len()) == Some(&"selected");
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let bad = |m: &str| Error::Parse {
            line: i + 2,
            message: m.to_string(),
        };
        let num = |k: usize| -> Result<f64> {
            row.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(CSV_COLUMNS[k]))
        };
        let opt_num = |k: usize| -> Result<Option<f64>> {
            match row.get(k) {
                Some("") | None => Ok(None),
                Some(s) => s.parse().map(Some).map_err(|_| bad(CSV_COLUMNS[k])),
            }
        };
        let selected = if has_selected {
            row.get(CSV_COLUMNS.len())
                .unwrap_or("")
                .split(';')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| bad("selected")))
                .collect::<Result<Vec<usize>>>()?
        } else {
            Vec::new()
        };
        out.push(RoundRecord {
            round: row
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("round"))?,
            parity: match row.get(1) {
                Some("odd") => Parity::Odd,
                Some("even") => Parity::Even,
                _ => return Err(bad("parity")),
            },
            train_loss: num(2)?,
            test_acc: num(3)?,
            test_acc_std: num(4)?,
            wall_s: num(5)?,
            eps_min: opt_num(6)?,
            eps_avg: opt_num(7)?,
            eps_max: opt_num(8)?,
            selected,
        });
    }
    Ok(out)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_summary(dir: &Path) -> Result<SummaryReport> {
    read_json(&dir.join("summary.json"))
}

pub fn load_trajectory(dir: &Path, seed: u64) -> Result<Trajectory> {
    read_json(&dir.join(format!("seed-{seed}")).join("trajectory.json"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedDelta {
    pub seed: u64,
    pub test_acc: Option<f64>,
    pub train_loss: Option<f64>,
    pub eps_avg: Option<f64>,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline: String,
    pub candidate: String,
    pub deltas: Vec<SeedDelta>,
    pub mean_test_acc_delta: Option<f64>,
    pub mean_train_loss_delta: Option<f64>,
    pub mean_eps_delta: Option<f64>,
    /// Seeds where the candidate's accuracy is higher.
    pub acc_wins: usize,
    /// Seeds where the candidate's final loss is lower.
    pub loss_wins: usize,
    /// Seeds where the candidate spends less privacy budget.
    pub eps_wins: usize,
}

/// Paired per-seed differences `candidate − baseline`.
pub fn compare(baseline: &SummaryReport, candidate: &SummaryReport) -> Result<ComparisonReport> {
    let bs: Vec<u64> = baseline.seeds.iter().map(|s| s.seed).collect();
    let cs: Vec<u64> = candidate.seeds.iter().map(|s| s.seed).collect();
    if bs != cs {
        return Err(Error::Contract(format!(
            "reports cover different seeds: {bs:?} vs {cs:?}"
        )));
    }
    if baseline.config.dataset != candidate.config.dataset {
        return Err(Error::Contract("reports use different datasets".into()));
    }
    let diff = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| a - b);
    let deltas: Vec<SeedDelta> = baseline
        .seeds
        .iter()
        .zip(&candidate.seeds)
        .map(|(b, c)| SeedDelta {
            seed: b.seed,
            test_acc: diff(c.final_test_acc, b.final_test_acc),
            train_loss: diff(c.final_train_loss, b.final_train_loss),
            eps_avg: diff(
                c.epsilon.as_ref().map(|e| e.avg),
                b.epsilon.as_ref().map(|e| e.avg),
            ),
            wall_s: (c.wall_odd_s + c.wall_even_s) - (b.wall_odd_s + b.wall_even_s),
        })
        .collect();
    let mean = |f: &dyn Fn(&SeedDelta) -> Option<f64>| {
        let v: Vec<f64> = deltas.iter().filter_map(f).collect();
        Stat::of(&v).map(|s| s.mean)
    };
    Ok(ComparisonReport {
        baseline: baseline.label.clone(),
        candidate: candidate.label.clone(),
        mean_test_acc_delta: mean(&|d| d.test_acc),
        mean_train_loss_delta: mean(&|d| d.train_loss),
        mean_eps_delta: mean(&|d| d.eps_avg),
        acc_wins: deltas.iter().filter(|d| d.test_acc.is_some_and(|v| v > 0.0)).count(),
        loss_wins: deltas.iter().filter(|d| d.train_loss.is_some_and(|v| v < 0.0)).count(),
        eps_wins: deltas.iter().filter(|d| d.eps_avg.is_some_and(|v| v < 0.0)).count(),
        deltas,
    })
}
