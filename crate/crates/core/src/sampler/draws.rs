//! Thinned posterior snapshots and their file formats.
//!
//! CSV: `# deconv-draws v1`, `# layout=<json>`, a header row
//! `iteration,<fields...>`, then one row per snapshot with shortest
//! round-trip floats. Binary: magic `DCVDRAW1`, little-endian `u64` layout
//! length, layout JSON, `u64` rows, `u64` columns, then `u64` iteration and
//! `f64` values per row.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use super::{Dims, Parameters, SamplerError};

const CSV_MAGIC: &str = "# deconv-draws v1";
const BIN_MAGIC: &[u8; 8] = b"DCVDRAW1";

/// Post-burn-in acceptance rate per Metropolis–Hastings block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AcceptanceSummary {
    pub rates: BTreeMap<String, f64>,
}

/// Everything needed to interpret the snapshot rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawLayout {
    pub version: u32,
    pub names: Vec<String>,
    pub subject_ids: Vec<String>,
    pub dims: Dims,
    pub scale_factors: Vec<f64>,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub acceptance: AcceptanceSummary,
    /// Posterior mean intakes per subject on the scaled axis.
    pub posterior_mean_x: Vec<Vec<f64>>,
    pub fields: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DrawFormat {
    #[default]
    Csv,
    Binary,
}

/// Retained snapshots of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    layout: DrawLayout,
    iterations: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl PosteriorDraws {
    pub fn new(layout: DrawLayout, iterations: Vec<usize>, rows: Vec<Vec<f64>>) -> Result<Self, SamplerError> {
        if iterations.len() != rows.len() {
            return Err(SamplerError::Format(
                "iteration column and rows differ in length".into(),
            ));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != layout.fields.len()) {
            return Err(SamplerError::Format(format!(
                "row has {} values for {} fields",
                r.len(),
                layout.fields.len()
            )));
        }
        if layout.acceptance.rates.values().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(SamplerError::Format("acceptance rate outside [0, 1]".into()));
        }
        Ok(Self {
            layout,
            iterations,
            rows,
        })
    }

    pub fn layout(&self) -> &DrawLayout {
        &self.layout
    }
    pub fn len(&self) -> usize {
        self.rows.len()
    }
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
    pub fn iterations(&self) -> &[usize] {
        &self.iterations
    }
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Decoded parameters of snapshot `s`.
    pub fn parameters(&self, s: usize) -> Result<Parameters, SamplerError> {
        Parameters::from_row(&self.layout.dims, &self.rows[s])
    }

    pub fn write<W: Write>(&self, w: W, format: DrawFormat) -> Result<(), SamplerError> {
        match format {
            DrawFormat::Csv => self.write_csv(w),
            DrawFormat::Binary => self.write_binary(w),
        }
    }

    /// Reads either format, detected from the first bytes.
    pub fn read<R: Read>(r: R) -> Result<Self, SamplerError> {
        let mut reader = BufReader::new(r);
        let head = reader.fill_buf()?;
        if head.starts_with(BIN_MAGIC) {
            Self::read_binary(reader)
        } else {
            Self::read_csv(reader)
        }
    }

    fn layout_json(&self) -> Result<String, SamplerError> {
        serde_json::to_string(&self.layout).map_err(|e| SamplerError::Format(e.to_string()))
    }

    fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SamplerError> {
        writeln!(w, "{CSV_MAGIC}")?;
        writeln!(w, "# layout={}", self.layout_json()?)?;
        writeln!(w, "iteration,{}", self.layout.fields.join(","))?;
        for (t, row) in self.iterations.iter().zip(&self.rows) {
            write!(w, "{t}")?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    fn read_csv<R: BufRead>(r: R) -> Result<Self, SamplerError> {
        let mut lines = r.lines();
        let mut next = |what: &str| -> Result<String, SamplerError> {
            lines
                .next()
                .ok_or_else(|| SamplerError::Format(format!("missing {what}")))?
                .map_err(SamplerError::from)
        };
        if next("version line")?.trim_end() != CSV_MAGIC {
            return Err(SamplerError::Format("not a draw file (bad version line)".into()));
        }
        let layout_line = next("layout line")?;
        let json = layout_line
            .strip_prefix("# layout=")
            .ok_or_else(|| SamplerError::Format("missing layout line".into()))?;
        let layout: DrawLayout = serde_json::from_str(json).map_err(|e| SamplerError::Format(e.to_string()))?;
        let header = next("field header")?;
        let expected = format!("iteration,{}", layout.fields.join(","));
        if header.trim_end() != expected {
            return Err(SamplerError::Format("field header does not match layout".into()));
        }
        let mut iterations = Vec::new();
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let bad = |m: &str| SamplerError::Format(format!("data row {}: {m}", n + 1));
            let t: usize = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| bad("bad iteration"))?;
            let row = parts
                .map(|s| s.trim().parse::<f64>().map_err(|_| bad("bad number")))
                .collect::<Result<Vec<_>, _>>()?;
            iterations.push(t);
            rows.push(row);
        }
        Self::new(layout, iterations, rows)
    }

    fn write_binary<W: Write>(&self, mut w: W) -> Result<(), SamplerError> {
        let json = self.layout_json()?;
        w.write_all(BIN_MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(json.as_bytes())?;
        w.write_all(&(self.rows.len() as u64).to_le_bytes())?;
        w.write_all(&(self.layout.fields.len() as u64).to_le_bytes())?;
        for (t, row) in self.iterations.iter().zip(&self.rows) {
            w.write_all(&(*t as u64).to_le_bytes())?;
            for v in row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    fn read_binary<R: Read>(mut r: R) -> Result<Self, SamplerError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        let mut word = [0u8; 8];
        let mut read_u64 = |r: &mut R| -> Result<u64, SamplerError> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let len = read_u64(&mut r)? as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let layout: DrawLayout = serde_json::from_slice(&json).map_err(|e| SamplerError::Format(e.to_string()))?;
        let nrows = read_u64(&mut r)? as usize;
        let ncols = read_u64(&mut r)? as usize;
        if ncols != layout.fields.len() {
            return Err(SamplerError::Format("column count does not match layout".into()));
        }
        let mut iterations = Vec::with_capacity(nrows);
        let mut rows = Vec::with_capacity(nrows);
        for _ in 0..nrows {
            iterations.push(read_u64(&mut r)? as usize);
            let row = (0..ncols)
                .map(|_| read_u64(&mut r).map(f64::from_bits))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Self::new(layout, iterations, rows)
    }
}
