use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};

use super::config::parse_config_table;
use super::suite::{run_suite, write_json, SummaryReport};

/// One `section.key=v1,v2,…` override axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub section: String,
    pub key: String,
    pub values: Vec<Value>,
}

impl Axis {
    /// Parses `section.key=v1,v2`; each value is read as a TOML literal,
    /// falling back to a bare string.
    pub fn parse(spec: &str) -> Result<Axis> {
        let (path, values) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=values")))?;
        let (section, key) = path
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override key {path:?} is not section.key")))?;
        let values = values
            .split(',')
            .map(|v| {
                let v = v.trim();
                format!("x = {v}")
                    .parse::<Table>()
                    .ok()
                    .and_then(|t| t.get("x").cloned())
                    .unwrap_or_else(|| Value::String(v.to_string()))
            })
            .collect::<Vec<_>>();
        if values.is_empty() {
            return Err(Error::Config(format!("override {spec:?} has no values")));
        }
        Ok(Axis {
            section: section.to_string(),
            key: key.to_string(),
            values,
        })
    }
}

fn label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Cross product of the axes applied to `base`, each with a directory-safe
/// name such as `solver.learning_rate=0.03+strategy.mu=1.0`.
pub fn expand_grid(base: &Table, axes: &[Axis]) -> Result<Vec<(String, Table)>> {
    let mut out = vec![(String::new(), base.clone())];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.values.len());
        for (name, table) in &out {
            for v in &axis.values {
                let mut t = table.clone();
                let section = t
                    .entry(axis.section.clone())
                    .or_insert_with(|| Value::Table(Table::new()));
                match section {
                    Value::Table(s) => {
                        s.insert(axis.key.clone(), v.clone());
                    }
                    _ => {
                        return Err(Error::Config(format!(
                            "[{}] is not a table",
                            axis.section
                        )))
                    }
                }
                let part = format!("{}.{}={}", axis.section, axis.key, label(v))
                    .replace(['/', '\\', ' ', '"'], "_");
                let name = if name.is_empty() {
                    part
                } else {
                    format!("{name}+{part}")
                };
                next.push((name, t));
            }
        }
        out = next;
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridEntry {
    pub name: String,
    pub mean_test_acc: Option<f64>,
    pub mean_train_loss: Option<f64>,
    pub all_completed: bool,
}

/// [`run_grid`] over a base config file.
pub fn run_grid_file(
    base: &Path,
    axes: &[Axis],
    out: &Path,
    dry_run: bool,
) -> Result<Vec<(GridEntry, Option<SummaryReport>)>> {
    let text = fs::read_to_string(base)?;
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(format!("TOML syntax: {e}")))?;
    run_grid(&table, axes, out, dry_run)
}

/// Validates every grid point first, then runs each into `out/<name>/`.
pub fn run_grid(
    base: &Table,
    axes: &[Axis],
    out: &Path,
    dry_run: bool,
) -> Result<Vec<(GridEntry, Option<SummaryReport>)>> {
    let points = expand_grid(base, axes)?;
    let mut parsed = Vec::new();
    let mut bad = Vec::new();
    for (name, table) in &points {
        match parse_config_table(table) {
            Ok(c) => parsed.push(c),
            Err(e) => bad.push(format!("{name}: {e}")),
        }
    }
    if !bad.is_empty() {
        return Err(Error::ConfigViolations(bad));
    }
    fs::create_dir_all(out)?;
    let mut results = Vec::new();
    for ((name, table), cfg) in points.iter().zip(parsed) {
        let dir = out.join(name);
        fs::create_dir_all(&dir)?;
        fs::write(
            dir.join("config.toml"),
            toml::to_string(table).map_err(|e| Error::Config(e.to_string()))?,
        )?;
        if dry_run {
            results.push((
                GridEntry {
                    name: name.clone(),
                    mean_test_acc: None,
                    mean_train_loss: None,
                    all_completed: false,
                },
                None,
            ));
            continue;
        }
        let report = run_suite(&cfg, Some(&dir))?;
        results.push((
            GridEntry {
                name: name.clone(),
                mean_test_acc: report.final_test_acc.map(|s| s.mean),
                mean_train_loss: report.final_train_loss.map(|s| s.mean),
                all_completed: report.all_completed,
            },
            Some(report),
        ));
    }
    let index: Vec<&GridEntry> = results.iter().map(|(e, _)| e).collect();
    write_json(&out.join("grid.json"), &index)?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing() {
        let a = Axis::parse("solver.learning_rate=0.01,0.03").unwrap();
        assert_eq!(a.values, vec![Value::Float(0.01), Value::Float(0.03)]);
        let b = Axis::parse("strategy.name=fedavg,fedprox").unwrap();
        assert_eq!(b.values[1], Value::String("fedprox".into()));
        assert!(Axis::parse("nokey").is_err());
    }

    #[test]
    fn cross_product_size_and_names() {
        let base: Table = "[run]\nrounds = 2\n".parse().unwrap();
        let axes = [
            Axis::parse("solver.learning_rate=0.01,0.03").unwrap(),
            Axis::parse("run.rounds=2,4,6").unwrap(),
        ];
        let pts = expand_grid(&base, &axes).unwrap();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0].0, "solver.learning_rate=0.01+run.rounds=2");
        assert_eq!(pts[5].1["run"]["rounds"].as_integer(), Some(6));
    }
}
