//! CSV and JSON output of sweeps.
//!
//! Reals are written in Rust's shortest round-trip decimal form, so parsing a
//! file back gives the same bits. Unreached epsilon targets are empty fields.

use std::path::Path;

use serde::Serialize;

use super::{AggregateRow, CellRow, SweepResult, SweepSpec};
use crate::error::{Error, Result};
use crate::optim::{Method, RunRecord};

pub fn format_real(x: f64) -> String {
    format!("{x}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(file))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn cell_header(epsilons: &[f64]) -> Vec<String> {
    let mut h: Vec<String> = [
        "method",
        "lambda",
        "seed",
        "initial_gap",
        "final_subopt",
        "relative_subopt",
        "diverged",
        "capped",
    ]
    .map(String::from)
    .to_vec();
    h.extend(epsilons.iter().map(|e| format!("iters_to_eps@{}", format_real(*e))));
    h
}

const AGGREGATE_HEADER: [&str; 10] = [
    "method",
    "lambda",
    "seeds",
    "diverged",
    "median_subopt",
    "min_subopt",
    "max_subopt",
    "median_relative",
    "min_relative",
    "max_relative",
];

#[derive(Serialize)]
struct Manifest<'a> {
    spec: &'a SweepSpec,
    f_star: f64,
    reference_sha256: &'a str,
    crate_version: &'a str,
    cells: usize,
}

fn trace_name(method: Method, lambda: f64, seed: u64) -> String {
    format!("trace_{}_{}_{seed}.csv", method.name(), format_real(lambda))
}

/// Trace CSV with columns `iteration, averaged_objective, suboptimality, aux`;
/// `suboptimality` is empty without an `f_star`.
pub fn write_trace(path: &Path, record: &RunRecord, f_star: Option<f64>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["iteration", "averaged_objective", "suboptimality", "aux"])?;
    for p in &record.trace {
        w.write_record([
            p.iteration.to_string(),
            format_real(p.averaged_objective),
            f_star.map(|f| format_real(p.averaged_objective - f)).unwrap_or_default(),
            p.aux.map(format_real).unwrap_or_default(),
        ])?;
    }
    finish(w, path)
}

/// Writes `cells.csv`, `aggregate.csv`, `timings.csv`, `manifest.json` and,
/// when the spec asks for them, one trace file per cell.
pub fn emit_results(result: &SweepResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join("cells.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(cell_header(&result.spec.epsilon_targets))?;
    for c in &result.cells {
        let r = &c.row;
        let mut rec = vec![
            r.method.name().to_string(),
            format_real(r.lambda),
            r.seed.to_string(),
            format_real(r.initial_gap),
            format_real(r.final_subopt),
            format_real(r.relative_subopt),
            r.diverged.to_string(),
            r.capped.to_string(),
        ];
        rec.extend(r.iters_to_eps.iter().map(|i| i.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(rec)?;
    }
    finish(w, &path)?;

    let path = dir.join("aggregate.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(AGGREGATE_HEADER)?;
    for a in &result.aggregates {
        w.write_record([
            a.method.name().to_string(),
            format_real(a.lambda),
            a.seeds.to_string(),
            a.diverged.to_string(),
            format_real(a.median_subopt),
            format_real(a.min_subopt),
            format_real(a.max_subopt),
            format_real(a.median_relative),
            format_real(a.min_relative),
            format_real(a.max_relative),
        ])?;
    }
    finish(w, &path)?;

    let path = dir.join("timings.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["method", "lambda", "seed", "wall_seconds"])?;
    for c in &result.cells {
        w.write_record([
            c.row.method.name().to_string(),
            format_real(c.row.lambda),
            c.row.seed.to_string(),
            format_real(c.wall_seconds),
        ])?;
    }
    finish(w, &path)?;

    let manifest = Manifest {
        spec: &result.spec,
        f_star: result.f_star,
        reference_sha256: &result.reference_sha256,
        crate_version: env!("CARGO_PKG_VERSION"),
        cells: result.cells.len(),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;

    if result.spec.write_traces {
        for c in &result.cells {
            let path = dir.join(trace_name(c.row.method, c.row.lambda, c.row.seed));
            write_trace(&path, &c.record, Some(result.f_star))?;
        }
    }
    Ok(())
}

fn field(rec: &csv::StringRecord, i: usize, line: usize) -> Result<&str> {
    rec.get(i).ok_or_else(|| Error::Parse {
        line,
        message: format!("missing column {i}"),
    })
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    let s = field(rec, i, line)?;
    s.parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse {s:?} in column {i}"),
    })
}

fn line_of(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

/// Parses a `cells.csv` file back into rows.
pub fn read_cells_csv(path: &Path) -> Result<Vec<CellRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let n_eps = reader.headers()?.len().saturating_sub(8);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let iters_to_eps = (0..n_eps)
            .map(|k| {
                let s = field(&rec, 8 + k, line)?;
                if s.is_empty() {
                    Ok(None)
                } else {
                    parse_field(&rec, 8 + k, line).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(CellRow {
            method: parse_field(&rec, 0, line)?,
            lambda: parse_field(&rec, 1, line)?,
            seed: parse_field(&rec, 2, line)?,
            initial_gap: parse_field(&rec, 3, line)?,
            final_subopt: parse_field(&rec, 4, line)?,
            relative_subopt: parse_field(&rec, 5, line)?,
            diverged: parse_field(&rec, 6, line)?,
            capped: parse_field(&rec, 7, line)?,
            iters_to_eps,
        });
    }
    Ok(rows)
}

/// Parses an `aggregate.csv` file back into rows.
pub fn read_aggregate_csv(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = line_of(&rec);
        rows.push(AggregateRow {
            method: parse_field(&rec, 0, line)?,
            lambda: parse_field(&rec, 1, line)?,
            seeds: parse_field(&rec, 2, line)?,
            diverged: parse_field(&rec, 3, line)?,
            median_subopt: parse_field(&rec, 4, line)?,
            min_subopt: parse_field(&rec, 5, line)?,
            max_subopt: parse_field(&rec, 6, line)?,
            median_relative: parse_field(&rec, 7, line)?,
            min_relative: parse_field(&rec, 8, line)?,
            max_relative: parse_field(&rec, 9, line)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;
    use crate::data::{Noise, SyntheticSpec, Task};
    use crate::reference::solve_reference;

    fn small_spec() -> SweepSpec {
        let mut spec = SweepSpec::new(Problem::Synthetic(SyntheticSpec {
            task: Task::AbsoluteRegression,
            noise: Noise::gumbel(),
            d: 2,
            n: 100,
            seed: 0,
        }));
        spec.lambda_grid = vec![1e-3, 0.1, 10.0, 1e4];
        spec.seeds = vec![5, 9];
        spec.horizon = 300;
        spec.epsilon_targets = vec![10.0, 1e-9];
        spec.write_traces = true;
        spec
    }

    #[test]
    fn empty_result_gives_header_only() {
        let mut spec = small_spec();
        spec.write_traces = false;
        let empty = SweepResult {
            spec,
            f_star: 1.0,
            reference_sha256: String::new(),
            cells: vec![],
            aggregates: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        emit_results(&empty, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("cells.csv")).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("method,lambda,seed,"));
        assert!(read_cells_csv(&dir.path().join("cells.csv")).unwrap().is_empty());
    }

    #[test]
    fn roundtrip_and_manifest() {
        let spec = small_spec();
        let (data, model) = spec.problem.load().unwrap();
        let reference = solve_reference(&data, model, spec.beta, &[0.0; 2], 100_000, 1e-10).unwrap();
        let result = run_sweep_on(&spec, &data, model, &reference, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_results(&result, dir.path()).unwrap();

        let rows = read_cells_csv(&dir.path().join("cells.csv")).unwrap();
        let expected: Vec<CellRow> = result.cells.iter().map(|c| c.row.clone()).collect();
        assert_eq!(rows, expected);
        assert!(rows.iter().any(|r| r.iters_to_eps[1].is_none()));
        assert_eq!(read_aggregate_csv(&dir.path().join("aggregate.csv")).unwrap(), result.aggregates);

        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["spec"]["seeds"], serde_json::json!([5, 9]));
        assert_eq!(manifest["reference_sha256"].as_str().unwrap().len(), 64);
        let spec_back: SweepSpec = serde_json::from_value(manifest["spec"].clone()).unwrap();
        assert_eq!(spec_back, spec);

        let trace = dir.path().join("trace_splplus_0.1_9.csv");
        let text = std::fs::read_to_string(trace).unwrap();
        assert!(text.starts_with("iteration,averaged_objective,suboptimality,aux"));
        assert_eq!(text.lines().count(), 1 + result.cells[0].record.trace.len());
    }
}
