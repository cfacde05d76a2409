//! Result emission: a flat CSV (one row per run and output dimension),
//! a JSON mirror of the configuration and full results, and a plotting
//! script that consumes the CSV.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::learner::RunResult;

/// One CSV row. Field order defines the column order; renames here
/// would break downstream consumers of the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub experiment: String,
    pub matcher: String,
    pub noise: f64,
    pub seed: u64,
    pub output_dim: usize,
    pub nmse: f64,
    pub mnll: f64,
    pub seconds: f64,
    pub max_inducing: usize,
}

pub const CSV_HEADER: &str =
    "experiment,matcher,noise,seed,output_dim,nmse,mnll,seconds,max_inducing";

/// Flattens results into rows, one per GP output dimension.
pub fn rows_from_results(results: &[RunResult]) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    for r in results {
        for (dim, (nm, ml)) in r.nmse.iter().zip(&r.mnll).enumerate() {
            rows.push(CsvRow {
                experiment: r.experiment.clone(),
                matcher: r.matcher.clone(),
                noise: r.noise,
                seed: r.seed,
                output_dim: dim,
                nmse: *nm,
                mnll: *ml,
                seconds: r.seconds,
                max_inducing: r.max_inducing,
            });
        }
    }
    rows
}

/// Writes the CSV, header always included, even with no rows.
pub fn write_csv<W: Write>(results: &[RunResult], writer: W) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows_from_results(results) {
        w.serialize(row)?;
    }
    // serde-driven writers only emit the header alongside a first
    // record, so an empty run writes it explicitly.
    if results.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows back from CSV text.
pub fn read_csv<R: std::io::Read>(reader: R) -> anyhow::Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// JSON mirror of a benchmark invocation: the exact configuration, all
/// per-seed results, and any per-seed failures.
#[derive(Serialize)]
struct ResultsFile<'a> {
    config: &'a ExperimentConfig,
    results: &'a [RunResult],
    failures: &'a [String],
}

pub fn write_json<W: Write>(
    cfg: &ExperimentConfig,
    results: &[RunResult],
    failures: &[String],
    writer: W,
) -> anyhow::Result<()> {
    serde_json::to_writer_pretty(
        writer,
        &ResultsFile {
            config: cfg,
            results,
            failures,
        },
    )?;
    Ok(())
}

pub const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plot benchmark results produced next to this script.

Reads results.csv and writes one PNG per metric with the noise level on
the x axis, one line per matcher, and the per-seed spread shaded.
"""
import argparse
import collections
import csv
import pathlib

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt


def load(path):
    with open(path, newline="") as fh:
        return [
            {
                "matcher": row["matcher"],
                "noise": float(row["noise"]),
                "output_dim": int(row["output_dim"]),
                "nmse": float(row["nmse"]),
                "mnll": float(row["mnll"]),
            }
            for row in csv.DictReader(fh)
        ]


def plot_metric(rows, metric, out_path):
    dims = sorted({r["output_dim"] for r in rows})
    fig, axes = plt.subplots(1, len(dims), figsize=(5 * len(dims), 4), squeeze=False)
    for ax, dim in zip(axes[0], dims):
        per = collections.defaultdict(lambda: collections.defaultdict(list))
        for r in rows:
            if r["output_dim"] == dim:
                per[r["matcher"]][r["noise"]].append(r[metric])
        for matcher, by_noise in sorted(per.items()):
            noises = sorted(by_noise)
            med = [sorted(by_noise[n])[len(by_noise[n]) // 2] for n in noises]
            lo = [min(by_noise[n]) for n in noises]
            hi = [max(by_noise[n]) for n in noises]
            ax.plot(noises, med, marker="o", label=matcher)
            ax.fill_between(noises, lo, hi, alpha=0.2)
        ax.set_xscale("log")
        if metric == "nmse":
            ax.set_yscale("log")
        ax.set_xlabel("noise level")
        ax.set_ylabel(metric)
        ax.set_title(f"output {dim}")
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    print(f"wrote {out_path}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv", nargs="?", default=None, help="results CSV path")
    args = ap.parse_args()
    here = pathlib.Path(__file__).resolve().parent
    path = pathlib.Path(args.csv) if args.csv else here / "results.csv"
    rows = load(path)
    if not rows:
        print("no rows to plot")
        return
    for metric in ("nmse", "mnll"):
        plot_metric(rows, metric, path.with_name(f"{metric}.png"))


if __name__ == "__main__":
    main()
"#;

/// Writes results.csv, results.json, and plot_results.py into `dir`,
/// creating it if needed.
pub fn emit_all(
    dir: &Path,
    cfg: &ExperimentConfig,
    results: &[RunResult],
    failures: &[String],
) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv_path = dir.join("results.csv");
    write_csv(
        results,
        fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?,
    )?;
    let json_path = dir.join("results.json");
    write_json(
        cfg,
        results,
        failures,
        fs::File::create(&json_path)
            .with_context(|| format!("creating {}", json_path.display()))?,
    )?;
    fs::write(dir.join("plot_results.py"), PLOT_SCRIPT)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentKind;

    fn sample_results() -> Vec<RunResult> {
        vec![
            RunResult {
                experiment: "kink".into(),
                matcher: "adf".into(),
                noise: 0.008,
                seed: 0,
                nmse: vec![0.011],
                mnll: vec![-1.25],
                seconds: 3.5,
                max_inducing: 15,
                inducing_trace: vec![1, 2, 3],
                dense_fallbacks: 0,
                measurements_used: 600,
                lengthscales_end: vec![vec![0.7]],
            },
            RunResult {
                experiment: "tvparam".into(),
                matcher: "ekf".into(),
                noise: 0.05,
                seed: 2,
                nmse: vec![0.04, 0.11],
                mnll: vec![-0.8, -0.3],
                seconds: 9.0,
                max_inducing: 50,
                inducing_trace: vec![2, 4],
                dense_fallbacks: 1,
                measurements_used: 700,
                lengthscales_end: vec![vec![1.9], vec![6.0]],
            },
        ]
    }

    #[test]
    fn empty_results_still_write_the_header() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.trim_end(), CSV_HEADER);
    }

    #[test]
    fn header_schema_is_stable() {
        let mut buf = Vec::new();
        write_csv(&sample_results(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    }

    #[test]
    fn rows_round_trip_through_csv() {
        let results = sample_results();
        let rows = rows_from_results(&results);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].output_dim, 1);
        assert_eq!(rows[2].nmse, 0.11);

        let mut buf = Vec::new();
        write_csv(&results, &mut buf).unwrap();
        let parsed = read_csv(buf.as_slice()).unwrap();
        assert_eq!(parsed, rows);
    }

    #[test]
    fn json_mirrors_config_and_results() {
        let cfg = ExperimentConfig::defaults(ExperimentKind::Kink);
        let mut buf = Vec::new();
        write_json(&cfg, &sample_results(), &["seed 7: boom".into()], &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["config"]["experiment"], "kink");
        assert_eq!(v["config"]["budget"], 15);
        assert_eq!(v["results"].as_array().unwrap().len(), 2);
        assert_eq!(v["results"][1]["nmse"][1], 0.11);
        assert_eq!(v["failures"][0], "seed 7: boom");
    }

    #[test]
    fn emitted_directory_contains_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::defaults(ExperimentKind::Kink);
        emit_all(dir.path(), &cfg, &sample_results(), &[]).unwrap();
        assert!(dir.path().join("results.csv").exists());
        assert!(dir.path().join("results.json").exists());
        let script = std::fs::read_to_string(dir.path().join("plot_results.py")).unwrap();
        assert!(script.contains("results.csv"));
    }
}
