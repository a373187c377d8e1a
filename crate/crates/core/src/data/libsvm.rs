//! LIBSVM text format: `<label> <idx>:<val> ...` with 1-based indices.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Features, Sample, SparseVec};

/// How labels are interpreted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMapping {
    /// Labels are kept as read (regression).
    #[default]
    Raw,
    /// Two-class labels `{-1,1}`, `{0,1}` or `{1,2}` are mapped to `{-1,+1}`.
    Binary,
}

/// Rows with 0-based indices. `dim` is the largest 1-based index seen.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseDataset {
    pub rows: Vec<SparseVec>,
    pub labels: Vec<f64>,
    pub dim: usize,
}

impl SparseDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Converts to a [`Dataset`]. `dim` can widen the feature space (for
    /// example to match a training file); it cannot shrink it.
    pub fn to_dataset(&self, dim: Option<usize>) -> Result<Dataset> {
        let dim = match dim {
            Some(d) if d < self.dim => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: self.dim,
                })
            }
            Some(d) => d,
            None => self.dim,
        };
        let samples = self
            .rows
            .iter()
            .zip(&self.labels)
            .map(|(row, &y)| Sample::new(Features::sparse(dim, row.clone())?, y))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples)
    }

    /// Divides every feature by its largest absolute value. Returns the
    /// per-feature scales (1 for features that never appear).
    pub fn max_abs_scale(&mut self) -> Vec<f64> {
        let mut scale = vec![0.0f64; self.dim];
        for row in &self.rows {
            for (&i, &v) in row.indices().iter().zip(row.values()) {
                scale[i as usize] = scale[i as usize].max(v.abs());
            }
        }
        scale.iter_mut().filter(|s| **s == 0.0).for_each(|s| *s = 1.0);
        for row in &mut self.rows {
            let values = row.values().iter().zip(row.indices()).map(|(v, &i)| v / scale[i as usize]).collect();
            *row = SparseVec::new(row.indices().to_vec(), values).expect("indices unchanged");
        }
        scale
    }
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_line(text: &str, line: usize) -> Result<Option<(f64, SparseVec)>> {
    let content = text.split('#').next().unwrap_or("").trim();
    if content.is_empty() {
        return Ok(None);
    }
    let mut tokens = content.split_ascii_whitespace();
    let label_tok = tokens.next().expect("content is nonempty");
    let label: f64 = label_tok
        .parse()
        .map_err(|_| parse_error(line, format!("label {label_tok:?} is not a number")))?;
    if !label.is_finite() {
        return Err(parse_error(line, format!("label {label_tok:?} is not finite")));
    }
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| parse_error(line, format!("expected index:value, found {tok:?}")))?;
        let idx: u32 = idx
            .parse()
            .map_err(|_| parse_error(line, format!("bad feature index in {tok:?}")))?;
        if idx == 0 {
            return Err(parse_error(line, "feature indices are 1-based"));
        }
        let val: f64 = val
            .parse()
            .map_err(|_| parse_error(line, format!("bad feature value in {tok:?}")))?;
        if !val.is_finite() {
            return Err(parse_error(line, format!("feature value in {tok:?} is not finite")));
        }
        if indices.last().is_some_and(|&last| idx - 1 <= last) {
            return Err(parse_error(line, format!("index {idx} is not increasing")));
        }
        indices.push(idx - 1);
        values.push(val);
    }
    let row = SparseVec::new(indices, values).map_err(|e| parse_error(line, e.to_string()))?;
    Ok(Some((label, row)))
}

fn map_labels(labels: &mut [f64]) -> Result<()> {
    let within = |set: [f64; 2]| labels.iter().all(|l| set.contains(l));
    let negative = if within([-1.0, 1.0]) {
        return Ok(());
    } else if within([0.0, 1.0]) {
        0.0
    } else if within([1.0, 2.0]) {
        1.0
    } else {
        let bad = labels.iter().find(|l| ![-1.0, 0.0, 1.0, 2.0].contains(*l)).copied().unwrap_or(f64::NAN);
        return Err(Error::InvalidLabel(bad));
    };
    labels
        .iter_mut()
        .for_each(|l| *l = if *l == negative { -1.0 } else { 1.0 });
    Ok(())
}

pub fn parse_libsvm<R: BufRead>(reader: R, mapping: LabelMapping) -> Result<SparseDataset> {
    let mut out = SparseDataset::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|e| parse_error(line_no, e.to_string()))?;
        if let Some((label, row)) = parse_line(&text, line_no)? {
            if let Some(&last) = row.indices().last() {
                out.dim = out.dim.max(last as usize + 1);
            }
            out.labels.push(label);
            out.rows.push(row);
        }
    }
    if mapping == LabelMapping::Binary {
        map_labels(&mut out.labels)?;
    }
    Ok(out)
}

pub fn read_libsvm(path: &Path, mapping: LabelMapping) -> Result<SparseDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_libsvm(BufReader::new(file), mapping).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Writes rows with shortest round-trip formatting for every number.
pub fn write_libsvm<W: Write>(mut w: W, data: &SparseDataset) -> std::io::Result<()> {
    for (row, label) in data.rows.iter().zip(&data.labels) {
        write!(w, "{label}")?;
        for (i, v) in row.indices().iter().zip(row.values()) {
            write!(w, " {}:{v}", i + 1)?;
        }
        writeln!(w)?;
    }
    Ok(())
}
