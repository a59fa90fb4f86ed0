//! Slot readout, bit classification and fidelity scoring.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::SpectrumStack;
use crate::waveform::{slot_frequency, BitImage};

/// Signed amplitude per image cell, `[row][col]`.
pub type SlotTable = Vec<Vec<f64>>;

/// Integrates row `r` of the stack over ±spacing/4 around each slot of image
/// row `r` and keeps the real part, phase-referenced to the pulse origin.
pub fn sample_slots(
    stack: &SpectrumStack,
    f_start_hz: f64,
    spacing_hz: f64,
    rows: usize,
    cols: usize,
) -> Result<SlotTable> {
    if stack.len() != rows {
        return Err(Error::DimensionMismatch {
            expected: rows,
            found: stack.len(),
        });
    }
    let half = spacing_hz / 4.0;
    stack
        .rows
        .iter()
        .enumerate()
        .map(|(r, spec)| {
            (0..cols)
                .map(|c| {
                    let f = slot_frequency(r, c, rows, f_start_hz, spacing_hz);
                    Ok(spec.referenced_integral(f, half)?.re)
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ThresholdMode {
    Otsu,
    Fixed { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeReport {
    pub recovered: BitImage,
    pub slot_amplitudes: SlotTable,
    pub threshold: f64,
    /// Smallest distance of a peak height from the threshold, relative to the threshold.
    pub margin: f64,
    /// Sign of the largest-magnitude slot. The peak height of a slot is
    /// `max(orientation · a, 0)`; a bit is set when it reaches the threshold.
    pub orientation: i8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_errors: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

/// Otsu split of sorted values; the threshold sits mid-gap between the classes.
fn otsu(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let total: f64 = sorted.iter().sum();
    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut low = 0.0;
    for k in 1..sorted.len() {
        low += sorted[k - 1];
        let w0 = k as f64 / n;
        let m0 = low / k as f64;
        let m1 = (total - low) / (n - k as f64);
        let between = w0 * (1.0 - w0) * (m0 - m1).powi(2);
        if between > best.0 {
            best = (between, 0.5 * (sorted[k - 1] + sorted[k]));
        }
    }
    best.1
}

pub fn decode(table: &SlotTable, mode: ThresholdMode) -> Result<DecodeReport> {
    let rows = table.len();
    let cols = table.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return Err(Error::validation("slot table is empty"));
    }
    if table.iter().any(|r| r.len() != cols) {
        return Err(Error::validation("ragged slot table"));
    }
    let flat: Vec<f64> = table.iter().flatten().copied().collect();
    if flat.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation("slot table contains non-finite values"));
    }
    let strongest = flat
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(0.0);
    let orientation: i8 = if strongest < 0.0 { -1 } else { 1 };
    let oriented: Vec<f64> = flat.iter().map(|x| (orientation as f64 * x).max(0.0)).collect();
    let mut sorted = oriented.clone();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let threshold = match mode {
        ThresholdMode::Otsu => {
            if hi == 0.0 || hi - lo <= 1e-12 * hi {
                return Err(Error::NoSeparation);
            }
            otsu(&sorted)
        }
        ThresholdMode::Fixed { value } => {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::validation("fixed threshold must be positive"));
            }
            value
        }
    };
    let bits = oriented
        .iter()
        .map(|&x| (x >= threshold) as u8)
        .collect::<Vec<u8>>();
    let margin = oriented
        .iter()
        .fold(f64::INFINITY, |m, x| m.min((x - threshold).abs() / threshold));
    Ok(DecodeReport {
        recovered: BitImage::new(rows, cols, bits)?,
        slot_amplitudes: table.clone(),
        threshold,
        margin,
        orientation,
        bit_errors: None,
        accuracy: None,
    })
}

/// Hamming distance and fraction of matching bits.
pub fn fidelity(recovered: &BitImage, reference: &BitImage) -> Result<(usize, f64)> {
    if (recovered.rows(), recovered.cols()) != (reference.rows(), reference.cols()) {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            found: recovered.len(),
        });
    }
    let errors = recovered
        .to_linear()
        .iter()
        .zip(reference.to_linear())
        .filter(|(a, b)| **a != *b)
        .count();
    Ok((errors, 1.0 - errors as f64 / reference.len() as f64))
}

impl DecodeReport {
    /// Fills in the error count against a known input.
    pub fn with_reference(mut self, reference: &BitImage) -> Result<Self> {
        let (errors, acc) = fidelity(&self.recovered, reference)?;
        self.bit_errors = Some(errors);
        self.accuracy = Some(acc);
        Ok(self)
    }

    /// Writes `decode_report.json` and `recovered.pbm`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::write(
            dir.join("decode_report.json"),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        self.recovered.save_pbm(dir.join("recovered.pbm"))
    }
}
