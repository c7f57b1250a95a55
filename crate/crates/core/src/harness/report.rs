//! Run manifests, check records and the long-format plot table.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

impl std::fmt::Display for Relation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub seed: Option<u64>,
    pub value: f64,
    pub relation: Relation,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, seed: Option<u64>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            seed,
            value,
            relation: Relation::AtMost,
            threshold,
            pass: value <= threshold,
        }
    }

    pub fn at_least(name: impl Into<String>, seed: Option<u64>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            seed,
            value,
            relation: Relation::AtLeast,
            threshold,
            pass: value >= threshold,
        }
    }

    /// A yes/no outcome recorded as 1 or 0 against a threshold of 1.
    pub fn holds(name: impl Into<String>, seed: Option<u64>, ok: bool) -> Self {
        Check::at_least(name, seed, if ok { 1.0 } else { 0.0 }, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: PathBuf,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub version: String,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputFile>,
    pub checks: Vec<Check>,
    /// Set when a driver stopped with an error.
    pub failure: Option<String>,
    pub pass: bool,
}

impl RunManifest {
    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_manifest(path: &Path, m: &RunManifest) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(m)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub experiment: String,
    pub method: String,
    pub x: f64,
    pub y: f64,
    pub seed: u64,
}

pub const PLOT_HEADER: [&str; 5] = ["experiment", "method", "x", "y", "seed"];

/// Experiment tables the tidier understands: header, then the columns giving
/// method, x and y (an empty x column means x = 0).
/// (table, header, method, x, y, seed) column names.
type Layout = (
    &'static str,
    &'static [&'static str],
    &'static str,
    &'static str,
    &'static str,
    &'static str,
);

const LAYOUTS: &[Layout] = &[
    (
        "maximizer",
        &["divergence", "lambda", "v_lambda", "n_samples", "seed"],
        "divergence",
        "lambda",
        "v_lambda",
        "seed",
    ),
    ("ratio", &["method", "seed", "mse"], "method", "", "mse", "seed"),
    (
        "duality",
        &[
            "seed",
            "instance",
            "divergence",
            "n_states",
            "n_actions",
            "primal",
            "dual_v",
            "dual_q",
            "gap_v",
            "gap_q",
            "flow_residual",
            "restart_spread",
        ],
        "divergence",
        "instance",
        "gap_v",
        "seed",
    ),
    (
        "recoil",
        &[
            "seed",
            "env",
            "beta",
            "match_fraction",
            "chi2",
            "root_mass",
            "reward_top1",
            "iterations",
            "converged",
        ],
        "env",
        "beta",
        "match_fraction",
        "seed",
    ),
    (
        "reward",
        &["seed", "top1_fraction", "identity_error"],
        "",
        "",
        "top1_fraction",
        "seed",
    ),
    (
        "reductions",
        &["name", "seed", "discrepancy", "tolerance", "negative_control", "pass"],
        "name",
        "",
        "discrepancy",
        "seed",
    ),
    (
        "fdvl",
        &["case", "divergence", "lambda", "seed", "value", "target", "pass"],
        "case",
        "lambda",
        "value",
        "seed",
    ),
];

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Invalid(format!("column {what}: '{s}' is not a number")))
}

/// Reads one experiment table (or a plot table) into long-format rows.
pub fn tidy_csv(path: &Path) -> Result<Vec<PlotRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    if header == PLOT_HEADER {
        let mut out = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            out.push(PlotRow {
                experiment: rec[0].to_string(),
                method: rec[1].to_string(),
                x: parse_f64(&rec[2], "x")?,
                y: parse_f64(&rec[3], "y")?,
                seed: parse_f64(&rec[4], "seed")? as u64,
            });
        }
        return Ok(out);
    }
    let (exp, _, m, x, y, s) = LAYOUTS
        .iter()
        .find(|l| l.1.len() == header.len() && l.1.iter().zip(&header).all(|(a, b)| a == b))
        .ok_or_else(|| Error::Invalid(format!("{}: unrecognized table header", path.display())))?;
    let (mi, xi, yi, si) = (col(m), col(x), col(y).expect("layout"), col(s).expect("layout"));
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(PlotRow {
            experiment: exp.to_string(),
            method: mi.map(|i| rec[i].to_string()).unwrap_or_else(|| exp.to_string()),
            x: match xi {
                Some(i) => parse_f64(&rec[i], x)?,
                None => 0.0,
            },
            y: if rec[yi].is_empty() {
                f64::NAN
            } else {
                parse_f64(&rec[yi], y)?
            },
            seed: parse_f64(&rec[si], s)? as u64,
        });
    }
    Ok(out)
}

/// Tidies the given tables into one long-format CSV; returns the row count.
pub fn emit_plot_data(inputs: &[PathBuf], out: &Path) -> Result<usize> {
    let mut rows = Vec::new();
    for p in inputs {
        rows.extend(tidy_csv(p)?);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PLOT_HEADER)?;
    for r in &rows {
        w.write_record([
            r.experiment.clone(),
            r.method.clone(),
            r.x.to_string(),
            r.y.to_string(),
            r.seed.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(out, &bytes)?;
    Ok(rows.len())
}
