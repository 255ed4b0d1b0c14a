//! Result files: raw and aggregate CSV, the learning-curve chart, the run
//! manifest, and the diagnostic outputs.
//!
//! The header line of each CSV is its schema identifier; readers reject any
//! other header.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::agents::Algorithm;
use crate::error::{Error, Result};
use crate::experiment::{DiagnosticsResult, ExperimentResult, Mode};
use crate::svg::{color, BarChart, LineChart, Series};

pub const RAW_HEADER: &str = "repetition,algorithm,mode,agent_seed,step,mean_R,min_R,max_R,n_excluded_states";
pub const AGG_HEADER: &str = "algorithm,mode,step,n_runs,mean_R,std_R,min_R,max_R,n_excluded_states";
pub const MANIFEST_SCHEMA: &str = "latent-bandit-manifest 1";
pub const TABLE_HEADER_PREFIX: &str = "state";
pub const CORRELATION_HEADER: &str = "cluster,members,pairs,rho,status";

pub const RAW_FILE: &str = "raw.csv";
pub const AGG_FILE: &str = "agg.csv";
pub const CURVES_FILE: &str = "curves.svg";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Tolerance for `min <= mean <= max` after floating-point averaging.
const ORDER_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub repetition: usize,
    pub algorithm: Algorithm,
    pub mode: Mode,
    pub agent_seed: usize,
    pub step: u64,
    pub mean_r: f64,
    pub min_r: f64,
    pub max_r: f64,
    pub n_excluded: usize,
}

impl RawRow {
    fn sort_key(&self) -> (usize, Algorithm, Mode, usize, u64) {
        (self.repetition, self.algorithm, self.mode, self.agent_seed, self.step)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggRow {
    pub algorithm: Algorithm,
    pub mode: Mode,
    pub step: u64,
    pub n_runs: usize,
    pub mean_r: f64,
    pub std_r: f64,
    pub min_r: f64,
    pub max_r: f64,
    pub n_excluded: usize,
}

pub fn raw_rows(result: &ExperimentResult) -> Vec<RawRow> {
    let mut rows: Vec<RawRow> = result
        .runs
        .iter()
        .flat_map(|run| {
            run.records.iter().map(move |rec| RawRow {
                repetition: run.key.repetition,
                algorithm: run.key.algorithm,
                mode: run.key.mode,
                agent_seed: run.key.seed_index,
                step: rec.step,
                mean_r: rec.summary.mean,
                min_r: rec.summary.min,
                max_r: rec.summary.max,
                n_excluded: rec.summary.n_excluded,
            })
        })
        .collect();
    rows.sort_by_key(RawRow::sort_key);
    rows
}

pub fn write_raw(rows: &[RawRow]) -> String {
    let mut out = String::from(RAW_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:?},{:?},{:?},{}\n",
            r.repetition, r.algorithm, r.mode, r.agent_seed, r.step, r.mean_r, r.min_r, r.max_r, r.n_excluded
        ));
    }
    out
}

fn field<T: std::str::FromStr>(line: usize, name: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::parse(line, format!("bad {name} `{raw}`")))
}

fn real(line: usize, name: &str, raw: &str) -> Result<f64> {
    let v: f64 = field(line, name, raw)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::parse(line, format!("{name} must be finite")))
    }
}

/// Strict reader for raw CSV: exact header, nine fields per row, finite
/// values with `min <= mean <= max <= 1`, and no duplicate keys.
pub fn parse_raw(text: &str) -> Result<Vec<RawRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == RAW_HEADER => {}
        _ => return Err(Error::parse(1, format!("expected header `{RAW_HEADER}`"))),
    }
    let mut rows = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::parse(n, format!("expected 9 fields, found {}", f.len())));
        }
        let row = RawRow {
            repetition: field(n, "repetition", f[0])?,
            algorithm: field(n, "algorithm", f[1])?,
            mode: field(n, "mode", f[2])?,
            agent_seed: field(n, "agent_seed", f[3])?,
            step: field(n, "step", f[4])?,
            mean_r: real(n, "mean_R", f[5])?,
            min_r: real(n, "min_R", f[6])?,
            max_r: real(n, "max_R", f[7])?,
            n_excluded: field(n, "n_excluded_states", f[8])?,
        };
        if row.min_r > row.mean_r + ORDER_SLACK || row.mean_r > row.max_r + ORDER_SLACK {
            return Err(Error::parse(n, "expected min_R <= mean_R <= max_R"));
        }
        if row.max_r > 1.0 + ORDER_SLACK {
            return Err(Error::parse(n, "normalized return above 1"));
        }
        if !seen.insert(row.sort_key()) {
            return Err(Error::parse(n, "duplicate row key"));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Group raw rows by (algorithm, mode, step). Within a group the rows are
/// summed in (repetition, agent_seed) order.
pub fn aggregate(rows: &[RawRow]) -> Vec<AggRow> {
    let mut groups: BTreeMap<(Algorithm, Mode, u64), Vec<&RawRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.algorithm, r.mode, r.step)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((algorithm, mode, step), mut g)| {
            g.sort_by_key(|r| (r.repetition, r.agent_seed));
            let n = g.len();
            let mean = g.iter().map(|r| r.mean_r).sum::<f64>() / n as f64;
            let std = if n > 1 {
                (g.iter().map(|r| (r.mean_r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            AggRow {
                algorithm,
                mode,
                step,
                n_runs: n,
                mean_r: mean,
                std_r: std,
                min_r: g.iter().map(|r| r.min_r).fold(f64::INFINITY, f64::min),
                max_r: g.iter().map(|r| r.max_r).fold(f64::NEG_INFINITY, f64::max),
                n_excluded: g.iter().map(|r| r.n_excluded).sum(),
            }
        })
        .collect()
}

pub fn write_agg(rows: &[AggRow]) -> String {
    let mut out = String::from(AGG_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:?},{:?},{:?},{:?},{}\n",
            r.algorithm, r.mode, r.step, r.n_runs, r.mean_r, r.std_r, r.min_r, r.max_r, r.n_excluded
        ));
    }
    out
}

/// Mean curve per (algorithm, mode); clustered curves are dashed.
pub fn curves_chart(agg: &[AggRow]) -> LineChart {
    let mut by_series: BTreeMap<(Algorithm, Mode), Vec<(f64, f64)>> = BTreeMap::new();
    for r in agg {
        by_series
            .entry((r.algorithm, r.mode))
            .or_default()
            .push((r.step as f64, r.mean_r));
    }
    let mut algos: Vec<Algorithm> = by_series.keys().map(|k| k.0).collect();
    algos.dedup();
    let series = by_series
        .into_iter()
        .map(|((algorithm, mode), points)| Series {
            label: format!("{algorithm} ({mode})"),
            points,
            color: color(algos.iter().position(|a| *a == algorithm).unwrap_or(0)),
            dashed: mode == Mode::Clustered,
            markers: false,
        })
        .collect();
    LineChart {
        title: "Mean normalized return".into(),
        x_label: "timestep".into(),
        y_label: "normalized return".into(),
        series,
        y_range: None,
        reference_y: Some(0.0),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
struct ManifestRun {
    repetition: usize,
    algorithm: String,
    mode: String,
    agent_seed_index: usize,
    agent_seed: u64,
    steps_completed: u64,
    state_digest: String,
    seconds: f64,
}

#[derive(Debug, Serialize)]
struct ManifestRepetition {
    repetition: usize,
    env_seed: u64,
    eval_excluded_states: usize,
    cluster_inertia: Option<f64>,
    cluster_iterations: Option<usize>,
    setup_seconds: f64,
}

#[derive(Debug, Serialize)]
struct ManifestFailure {
    repetition: usize,
    algorithm: String,
    mode: String,
    agent_seed_index: usize,
    step: u64,
    kind: String,
    message: String,
}

#[derive(Debug, Serialize)]
struct ManifestStream {
    master: u64,
    label: String,
    owner: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    schema: &'static str,
    software: &'static str,
    version: &'static str,
    name: String,
    config_hash: String,
    master_seed: u64,
    total_seconds: f64,
    files: BTreeMap<String, String>,
    repetitions: Vec<ManifestRepetition>,
    runs: Vec<ManifestRun>,
    failures: Vec<ManifestFailure>,
    streams: Vec<ManifestStream>,
    config: String,
}

fn manifest(result: &ExperimentResult, files: BTreeMap<String, String>) -> Manifest {
    let cfg = &result.config;
    Manifest {
        schema: MANIFEST_SCHEMA,
        software: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        master_seed: cfg.master_seed,
        total_seconds: result.total_seconds,
        files,
        repetitions: result
            .repetitions
            .iter()
            .map(|r| ManifestRepetition {
                repetition: r.repetition,
                env_seed: r.env_seed,
                eval_excluded_states: r.eval_excluded,
                cluster_inertia: r.cluster_inertia,
                cluster_iterations: r.cluster_iterations,
                setup_seconds: r.setup_seconds,
            })
            .collect(),
        runs: result
            .runs
            .iter()
            .map(|r| ManifestRun {
                repetition: r.key.repetition,
                algorithm: r.key.algorithm.to_string(),
                mode: r.key.mode.to_string(),
                agent_seed_index: r.key.seed_index,
                agent_seed: r.agent_seed,
                steps_completed: r.steps_completed,
                state_digest: r.state_digest.clone(),
                seconds: r.seconds,
            })
            .collect(),
        failures: result
            .failures()
            .map(|(k, f)| ManifestFailure {
                repetition: k.repetition,
                algorithm: k.algorithm.to_string(),
                mode: k.mode.to_string(),
                agent_seed_index: k.seed_index,
                step: f.step,
                kind: f.kind.to_owned(),
                message: f.message.clone(),
            })
            .collect(),
        streams: result
            .stream_ledger()
            .into_iter()
            .map(|s| ManifestStream {
                master: s.master,
                label: s.label,
                owner: s.owner.to_owned(),
            })
            .collect(),
        config: cfg.to_text(),
    }
}

/// Write all files, each first to a temporary name and then renamed into
/// place. On error the temporaries are removed.
fn write_files(dir: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut staged = Vec::new();
    let outcome = (|| -> Result<Vec<PathBuf>> {
        for (name, content) in files {
            let tmp = dir.join(format!(".{name}.tmp"));
            staged.push(tmp.clone());
            fs::write(&tmp, content)?;
        }
        let mut written = Vec::new();
        for ((name, _), tmp) in files.iter().zip(&staged) {
            let path = dir.join(name);
            fs::rename(tmp, &path)?;
            written.push(path);
        }
        Ok(written)
    })();
    if outcome.is_err() {
        for tmp in &staged {
            let _ = fs::remove_file(tmp);
        }
    }
    outcome
}

/// Write raw.csv, agg.csv, curves.svg and manifest.json into `dir`.
pub fn emit_results(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = raw_rows(result);
    let raw = write_raw(&rows);
    let agg_rows = aggregate(&rows);
    let agg = write_agg(&agg_rows);
    let svg = curves_chart(&agg_rows).render();
    let mut hashes = BTreeMap::new();
    hashes.insert(RAW_FILE.to_owned(), sha256_hex(raw.as_bytes()));
    hashes.insert(AGG_FILE.to_owned(), sha256_hex(agg.as_bytes()));
    hashes.insert(CURVES_FILE.to_owned(), sha256_hex(svg.as_bytes()));
    let manifest = serde_json::to_string_pretty(&manifest(result, hashes))
        .map_err(|e| Error::InvalidConfig(format!("manifest serialization: {e}")))?;
    write_files(
        dir,
        &[
            (RAW_FILE, raw),
            (AGG_FILE, agg),
            (CURVES_FILE, svg),
            (MANIFEST_FILE, manifest + "\n"),
        ],
    )
}

/// Regenerate agg.csv and curves.svg from raw.csv alone.
pub fn replot(dir: &Path) -> Result<Vec<PathBuf>> {
    let raw = fs::read_to_string(dir.join(RAW_FILE))?;
    let agg_rows = aggregate(&parse_raw(&raw)?);
    write_files(
        dir,
        &[
            (AGG_FILE, write_agg(&agg_rows)),
            (CURVES_FILE, curves_chart(&agg_rows).render()),
        ],
    )
}

pub fn write_table_csv(diag: &DiagnosticsResult) -> String {
    let t = &diag.table;
    let mut out = String::from(TABLE_HEADER_PREFIX);
    for j in 0..t.cols() {
        out.push_str(&format!(",action_{j}"));
    }
    out.push('\n');
    for (i, row) in t.iter_rows().enumerate() {
        out.push_str(&i.to_string());
        for v in row {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out
}

pub fn write_correlation_csv(diag: &DiagnosticsResult) -> String {
    let mut out = String::from(CORRELATION_HEADER);
    out.push('\n');
    for c in &diag.correlations.clusters {
        let (rho, status) = match c.rho {
            Ok(v) => (format!("{v:?}"), "defined".to_owned()),
            Err(reason) => (String::new(), reason.to_string()),
        };
        out.push_str(&format!("{},{},{},{},{}\n", c.cluster, c.members, c.pairs, rho, status));
    }
    out
}

/// Write the adjacent-state reward table and per-cluster correlations as
/// CSV and SVG into `dir`.
pub fn emit_diagnostics(diag: &DiagnosticsResult, dir: &Path) -> Result<Vec<PathBuf>> {
    let t = &diag.table;
    let table_chart = LineChart {
        title: "Rewards of near-identical states".into(),
        x_label: "action index".into(),
        y_label: "reward".into(),
        series: t
            .iter_rows()
            .enumerate()
            .map(|(i, row)| Series {
                label: format!("state {i}"),
                points: row.iter().enumerate().map(|(j, v)| (j as f64, *v)).collect(),
                color: color(i),
                dashed: false,
                markers: true,
            })
            .collect(),
        y_range: Some((-1.0, 1.0)),
        reference_y: None,
    };
    let mean = diag
        .correlations
        .mean_defined()
        .map_or_else(|| "undefined".to_owned(), |m| format!("{m:.3}"));
    let corr_chart = BarChart {
        title: format!("Within-cluster distance correlation (mean {mean})"),
        x_label: "cluster".into(),
        y_label: "Pearson correlation".into(),
        values: diag.correlations.clusters.iter().map(|c| c.rho.ok()).collect(),
        y_range: (-1.0, 1.0),
    };
    write_files(
        dir,
        &[
            ("adjacent_rewards.csv", write_table_csv(diag)),
            ("adjacent_rewards.svg", table_chart.render()),
            ("correlations.csv", write_correlation_csv(diag)),
            ("correlations.svg", corr_chart.render()),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(rep: usize, algorithm: Algorithm, mode: Mode, seed: usize, step: u64, mean: f64) -> RawRow {
        RawRow {
            repetition: rep,
            algorithm,
            mode,
            agent_seed: seed,
            step,
            mean_r: mean,
            min_r: mean - 0.5,
            max_r: 1.0,
            n_excluded: 1,
        }
    }

    #[test]
    fn raw_round_trip_and_header() {
        let rows = vec![
            row(0, Algorithm::Dqn, Mode::Full, 0, 500, 0.1),
            row(0, Algorithm::Dqn, Mode::Clustered, 0, 500, 1.0 / 3.0),
        ];
        let text = write_raw(&rows);
        assert!(text.starts_with(
            "repetition,algorithm,mode,agent_seed,step,mean_R,min_R,max_R,n_excluded_states\n"
        ));
        assert_eq!(parse_raw(&text).unwrap(), rows);
    }

    #[test]
    fn parse_rejects_malformed() {
        let good = write_raw(&[row(0, Algorithm::Ppo, Mode::Full, 0, 1, 0.0)]);
        assert!(parse_raw("").is_err());
        assert!(parse_raw(&good.replace("n_excluded_states", "n")).is_err());
        assert!(parse_raw(&good.replace("ppo", "sarsa")).is_err());
        assert!(parse_raw(&good.replace(",1\n", ",1,9\n")).is_err());
        assert!(parse_raw(&good.replace("1.0", "NaN")).is_err());
        assert!(parse_raw(&good.replace("1.0", "2.0")).is_err());
        let dup = format!("{good}{}", good.lines().nth(1).unwrap());
        assert!(parse_raw(&dup).is_err());
    }

    #[test]
    fn aggregate_groups_and_averages() {
        let rows = vec![
            row(0, Algorithm::Dqn, Mode::Full, 0, 10, 0.2),
            row(0, Algorithm::Dqn, Mode::Full, 1, 10, 0.4),
            row(1, Algorithm::Dqn, Mode::Full, 0, 10, 0.6),
            row(0, Algorithm::Dqn, Mode::Full, 0, 20, 0.5),
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].n_runs, 3);
        assert!((agg[0].mean_r - 0.4).abs() < 1e-15);
        assert!((agg[0].std_r - 0.2).abs() < 1e-12);
        assert_eq!(agg[0].n_excluded, 3);
        assert_eq!(agg[1].std_r, 0.0);
        assert!(write_agg(&agg).starts_with(AGG_HEADER));
    }
}
