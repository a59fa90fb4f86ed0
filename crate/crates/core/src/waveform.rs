//! Bit images, harmonic sets and sampled multi-frequency pulse waveforms.
//!
//! A bit image is laid out as a one-dimensional array column after column,
//! starting at the upper-left cell, and bit `k` owns the frequency
//! `f_start + k * spacing`. A readout comb with interval `spacing * rows`
//! hits exactly one slot per column, so shifting it by `spacing` walks
//! through the image rows.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;

pub const MAX_IMAGE_BITS: usize = 4096;

/// Binary image, stored row-major. Serializes as a list of row strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct BitImage {
    rows: usize,
    cols: usize,
    bits: Vec<u8>,
}

impl BitImage {
    pub fn new(rows: usize, cols: usize, bits: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::validation("image must have at least one row and one column"));
        }
        if rows * cols > MAX_IMAGE_BITS {
            return Err(Error::validation(format!(
                "image has {} bits, limit is {MAX_IMAGE_BITS}",
                rows * cols
            )));
        }
        if bits.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: bits.len(),
            });
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::validation(format!("bit value {b} is not 0 or 1")));
        }
        Ok(BitImage { rows, cols, bits })
    }

    pub fn row_strings(&self) -> Vec<String> {
        self.bits
            .chunks(self.cols)
            .map(|r| r.iter().map(|b| if *b == 1 { '1' } else { '0' }).collect())
            .collect()
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0; rows * cols])
    }

    /// Builds an image from row slices.
    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::validation("ragged image rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.bits[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, bit: bool) {
        self.bits[row * self.cols + col] = bit as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    /// Column-major linear index of a cell.
    pub fn linear_index(&self, row: usize, col: usize) -> usize {
        col * self.rows + row
    }

    /// Bits in column-major order, row varying fastest.
    pub fn to_linear(&self) -> Vec<u8> {
        (0..self.cols)
            .flat_map(|c| (0..self.rows).map(move |r| (r, c)))
            .map(|(r, c)| self.get(r, c))
            .collect()
    }

    pub fn complement(&self) -> Self {
        BitImage {
            rows: self.rows,
            cols: self.cols,
            bits: self.bits.iter().map(|b| 1 - b).collect(),
        }
    }

    /// Plain PBM ("P1") text.
    pub fn to_pbm(&self) -> String {
        let mut out = format!("P1\n{} {}\n", self.cols, self.rows);
        for r in 0..self.rows {
            let line: Vec<&str> = (0..self.cols)
                .map(|c| if self.get(r, c) == 1 { "1" } else { "0" })
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_pbm(text: &str) -> Result<Self> {
        // strip comments, then tokenize; pixel digits may be run together
        let cleaned: String = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .collect::<Vec<_>>()
            .join("\n");
        let mut tokens = cleaned.split_whitespace();
        if tokens.next() != Some("P1") {
            return Err(Error::Parse("PBM magic \"P1\" missing".into()));
        }
        let mut dim = |what: &str| -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| Error::Parse(format!("PBM {what} missing")))?
                .parse()
                .map_err(|e| Error::Parse(format!("PBM {what}: {e}")))
        };
        let cols = dim("width")?;
        let rows = dim("height")?;
        let mut bits = Vec::with_capacity(rows * cols);
        for tok in tokens {
            for ch in tok.chars() {
                match ch {
                    '0' => bits.push(0),
                    '1' => bits.push(1),
                    other => return Err(Error::Parse(format!("invalid PBM pixel {other:?}"))),
                }
            }
        }
        Self::new(rows, cols, bits)
    }

    pub fn load_pbm(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_pbm(&std::fs::read_to_string(path)?)
    }

    pub fn save_pbm(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_pbm())?;
        Ok(())
    }
}

impl From<BitImage> for Vec<String> {
    fn from(img: BitImage) -> Self {
        img.row_strings()
    }
}

impl TryFrom<Vec<String>> for BitImage {
    type Error = Error;

    fn try_from(rows: Vec<String>) -> Result<Self> {
        let parsed: Vec<Vec<u8>> = rows
            .iter()
            .map(|r| {
                r.chars()
                    .map(|ch| match ch {
                        '0' => Ok(0),
                        '1' => Ok(1),
                        _ => Err(Error::Parse(format!("bad bit character {ch:?}"))),
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let slices: Vec<&[u8]> = parsed.iter().map(|r| r.as_slice()).collect();
        BitImage::from_rows(&slices)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    /// Offset from the carrier, Hz.
    pub freq_hz: f64,
    /// Field strength as a precession frequency γB1/2π, Hz.
    pub amp_hz: f64,
    pub phase_rad: f64,
}

/// Frequency-domain pulse program: circularly polarized harmonics at strictly increasing frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicSet {
    harmonics: Vec<Harmonic>,
}

impl HarmonicSet {
    pub fn new(harmonics: Vec<Harmonic>) -> Result<Self> {
        if harmonics.is_empty() {
            return Err(Error::validation("harmonic set is empty"));
        }
        for h in &harmonics {
            if !(h.freq_hz.is_finite() && h.amp_hz.is_finite() && h.phase_rad.is_finite()) {
                return Err(Error::validation("harmonic parameters must be finite"));
            }
            if h.amp_hz < 0.0 {
                return Err(Error::validation(format!(
                    "harmonic at {} Hz has negative amplitude",
                    h.freq_hz
                )));
            }
        }
        if harmonics.windows(2).any(|w| w[1].freq_hz <= w[0].freq_hz) {
            return Err(Error::validation("harmonic frequencies must be strictly increasing"));
        }
        Ok(HarmonicSet { harmonics })
    }

    /// Single harmonic with zero phase.
    pub fn single(freq_hz: f64, amp_hz: f64) -> Result<Self> {
        Self::new(vec![Harmonic {
            freq_hz,
            amp_hz,
            phase_rad: 0.0,
        }])
    }

    pub fn harmonics(&self) -> &[Harmonic] {
        &self.harmonics
    }

    pub fn len(&self) -> usize {
        self.harmonics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.harmonics.is_empty()
    }

    pub fn max_abs_freq(&self) -> f64 {
        self.harmonics
            .iter()
            .fold(0.0, |a, h| a.max(h.freq_hz.abs()))
    }

    pub fn total_amplitude(&self) -> f64 {
        self.harmonics.iter().map(|h| h.amp_hz).sum()
    }

    /// Same program with every phase advanced by `phase_rad`.
    pub fn with_phase_offset(&self, phase_rad: f64) -> Self {
        HarmonicSet {
            harmonics: self
                .harmonics
                .iter()
                .map(|h| Harmonic {
                    phase_rad: h.phase_rad + phase_rad,
                    ..*h
                })
                .collect(),
        }
    }

    /// Uniformly random phases, for taming the crest factor of large combs.
    pub fn with_random_phases(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HarmonicSet {
            harmonics: self
                .harmonics
                .iter()
                .map(|h| Harmonic {
                    phase_rad: rng.random_range(0.0..2.0 * PI),
                    ..*h
                })
                .collect(),
        }
    }

    pub fn with_amplitude(&self, freq_hz: f64, amp_hz: f64) -> Result<Self> {
        let mut hs = self.clone();
        let h = hs
            .harmonics
            .iter_mut()
            .find(|h| (h.freq_hz - freq_hz).abs() <= 1e-9 * freq_hz.abs().max(1.0))
            .ok_or_else(|| Error::validation(format!("no harmonic at {freq_hz} Hz")))?;
        h.amp_hz = amp_hz;
        Self::new(hs.harmonics)
    }

    /// Merges two programs with disjoint frequencies.
    pub fn union(&self, other: &HarmonicSet) -> Result<Self> {
        let mut all: Vec<Harmonic> = self
            .harmonics
            .iter()
            .chain(&other.harmonics)
            .copied()
            .collect();
        all.sort_by(|a, b| a.freq_hz.total_cmp(&b.freq_hz));
        Self::new(all)
    }
}

/// Centers the slot comb of a `rows x cols` image on the carrier.
pub fn centered_f_start(rows: usize, cols: usize, spacing_hz: f64) -> f64 {
    -spacing_hz * (rows * cols - 1) as f64 / 2.0
}

/// Frequency owned by image cell (row, col).
pub fn slot_frequency(row: usize, col: usize, rows: usize, f_start_hz: f64, spacing_hz: f64) -> f64 {
    f_start_hz + (col * rows + row) as f64 * spacing_hz
}

/// One harmonic per bit; "one" bits get `amp_one_hz`, "zero" bits keep their slot at zero amplitude.
pub fn bits_to_harmonics(
    img: &BitImage,
    f_start_hz: f64,
    spacing_hz: f64,
    amp_one_hz: f64,
) -> Result<HarmonicSet> {
    if img.is_empty() {
        return Err(Error::validation("image is empty"));
    }
    if !(spacing_hz > 0.0) {
        return Err(Error::validation("slot spacing must be positive"));
    }
    if !(amp_one_hz > 0.0) {
        return Err(Error::validation("amplitude of a one bit must be positive"));
    }
    HarmonicSet::new(
        img.to_linear()
            .into_iter()
            .enumerate()
            .map(|(k, bit)| Harmonic {
                freq_hz: f_start_hz + k as f64 * spacing_hz,
                amp_hz: if bit == 1 { amp_one_hz } else { 0.0 },
                phase_rad: 0.0,
            })
            .collect(),
    )
}

/// Reads an image back from the slot amplitudes of a bit-encoding program.
pub fn harmonics_to_bits(hs: &HarmonicSet, rows: usize, cols: usize) -> Result<BitImage> {
    if hs.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            expected: rows * cols,
            found: hs.len(),
        });
    }
    let mut img = BitImage::zeros(rows, cols)?;
    for (k, h) in hs.harmonics().iter().enumerate() {
        img.set(k % rows, k / rows, h.amp_hz > 0.0);
    }
    Ok(img)
}

/// Readout comb for one image row: `n_cols` equal teeth spaced `spacing * n_rows` apart.
pub fn row_harmonics(
    row: usize,
    f_start_hz: f64,
    spacing_hz: f64,
    n_cols: usize,
    n_rows: usize,
    amp_hz: f64,
) -> Result<HarmonicSet> {
    if row >= n_rows {
        return Err(Error::validation(format!(
            "row {row} out of range for {n_rows} rows"
        )));
    }
    if n_cols == 0 {
        return Err(Error::validation("comb needs at least one column"));
    }
    if !(spacing_hz > 0.0) || amp_hz < 0.0 {
        return Err(Error::validation("comb spacing must be positive and amplitude non-negative"));
    }
    let interval = spacing_hz * n_rows as f64;
    HarmonicSet::new(
        (0..n_cols)
            .map(|m| Harmonic {
                freq_hz: f_start_hz + row as f64 * spacing_hz + m as f64 * interval,
                amp_hz,
                phase_rad: 0.0,
            })
            .collect(),
    )
}

/// Rotating-frame field during one elementary step, Hz.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldStep {
    pub bx_hz: f64,
    pub by_hz: f64,
}

impl FieldStep {
    pub fn magnitude(&self) -> f64 {
        self.bx_hz.hypot(self.by_hz)
    }
}

/// Piecewise-constant sampled pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub duration_s: f64,
    pub n_steps: usize,
    pub steps: Vec<FieldStep>,
    /// Reference frequency this pulse was programmed against, Hz from the carrier.
    /// Informational: steps are always expressed in the carrier frame.
    pub reference_offset_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformMeta {
    pub duration_s: f64,
    pub n_steps: usize,
    pub reference_offset_hz: f64,
}

/// Minimum step count that samples `max_freq_hz` without aliasing.
pub fn required_steps(duration_s: f64, max_freq_hz: f64) -> usize {
    (2.0 * duration_s * max_freq_hz).ceil() as usize
}

/// Samples `hs` at step midpoints over `[0, duration]`.
pub fn synthesize(hs: &HarmonicSet, duration_s: f64, n_steps: usize) -> Result<Waveform> {
    synthesize_at(hs, duration_s, n_steps, 0.0)
}

/// As [`synthesize`], with step midpoints at `t0 + (s + 1/2) dt` so that
/// consecutive pulses can share one phase reference.
pub fn synthesize_at(
    hs: &HarmonicSet,
    duration_s: f64,
    n_steps: usize,
    t0_s: f64,
) -> Result<Waveform> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::validation("pulse duration must be positive"));
    }
    if n_steps == 0 {
        return Err(Error::validation("pulse needs at least one step"));
    }
    let max_freq = hs.max_abs_freq();
    let required = required_steps(duration_s, max_freq);
    if n_steps < required {
        return Err(Error::Aliasing {
            n_steps,
            duration_s,
            max_freq_hz: max_freq,
            required,
        });
    }
    let dt = duration_s / n_steps as f64;
    let active: Vec<&Harmonic> = hs.harmonics().iter().filter(|h| h.amp_hz != 0.0).collect();
    let steps = (0..n_steps)
        .map(|s| {
            let t = t0_s + (s as f64 + 0.5) * dt;
            let z: C64 = active
                .iter()
                .map(|h| C64::from_polar(h.amp_hz, 2.0 * PI * h.freq_hz * t + h.phase_rad))
                .sum();
            FieldStep {
                bx_hz: z.re,
                by_hz: z.im,
            }
        })
        .collect();
    Ok(Waveform {
        duration_s,
        n_steps,
        steps,
        reference_offset_hz: 0.0,
    })
}

impl Waveform {
    pub fn new(duration_s: f64, steps: Vec<FieldStep>, reference_offset_hz: f64) -> Result<Self> {
        let wf = Waveform {
            duration_s,
            n_steps: steps.len(),
            steps,
            reference_offset_hz,
        };
        wf.validate()?;
        Ok(wf)
    }

    /// Field-free interval.
    pub fn zero(duration_s: f64, n_steps: usize) -> Result<Self> {
        Self::new(duration_s, vec![FieldStep::default(); n_steps], 0.0)
    }

    /// Constant field for the whole duration.
    pub fn constant(duration_s: f64, n_steps: usize, bx_hz: f64, by_hz: f64) -> Result<Self> {
        Self::new(duration_s, vec![FieldStep { bx_hz, by_hz }; n_steps], 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::validation("waveform duration must be positive"));
        }
        if self.n_steps == 0 || self.n_steps != self.steps.len() {
            return Err(Error::validation(format!(
                "waveform declares {} steps but holds {}",
                self.n_steps,
                self.steps.len()
            )));
        }
        if self
            .steps
            .iter()
            .any(|s| !(s.bx_hz.is_finite() && s.by_hz.is_finite()))
        {
            return Err(Error::validation("waveform contains non-finite samples"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.duration_s / self.n_steps as f64
    }

    pub fn max_field(&self) -> f64 {
        self.steps.iter().fold(0.0, |a, s| a.max(s.magnitude()))
    }

    pub fn is_zero(&self) -> bool {
        self.steps.iter().all(|s| s.bx_hz == 0.0 && s.by_hz == 0.0)
    }

    /// Mean of bx² + by² over the steps.
    pub fn mean_power(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.bx_hz * s.bx_hz + s.by_hz * s.by_hz)
            .sum::<f64>()
            / self.n_steps as f64
    }

    /// Rotates every sample by `phase_rad` in the transverse plane.
    pub fn phase_shifted(&self, phase_rad: f64) -> Self {
        let rot = C64::from_polar(1.0, phase_rad);
        self.map_steps(|z| z * rot)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map_steps(|z| z * factor)
    }

    fn map_steps(&self, f: impl Fn(C64) -> C64) -> Self {
        Waveform {
            steps: self
                .steps
                .iter()
                .map(|s| {
                    let z = f(C64::new(s.bx_hz, s.by_hz));
                    FieldStep {
                        bx_hz: z.re,
                        by_hz: z.im,
                    }
                })
                .collect(),
            ..self.clone()
        }
    }

    /// Steps `start..start + len` as a standalone waveform.
    pub fn segment(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.n_steps {
            return Err(Error::validation(format!(
                "segment {start}..{} outside {} steps",
                start + len,
                self.n_steps
            )));
        }
        Self::new(
            len as f64 * self.dt(),
            self.steps[start..start + len].to_vec(),
            self.reference_offset_hz,
        )
    }

    pub fn with_reference_offset(mut self, hz: f64) -> Self {
        self.reference_offset_hz = hz;
        self
    }

    pub fn meta(&self) -> WaveformMeta {
        WaveformMeta {
            duration_s: self.duration_s,
            n_steps: self.n_steps,
            reference_offset_hz: self.reference_offset_hz,
        }
    }

    /// CSV with header `step,bx_hz,by_hz`, values at 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(48 * self.n_steps + 16);
        out.push_str("step,bx_hz,by_hz\n");
        for (i, s) in self.steps.iter().enumerate() {
            let _ = writeln!(out, "{i},{:.16e},{:.16e}", s.bx_hz, s.by_hz);
        }
        out
    }

    pub fn from_csv(text: &str, meta: &WaveformMeta) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("step,bx_hz,by_hz") {
            return Err(Error::Parse("waveform CSV header must be step,bx_hz,by_hz".into()));
        }
        let mut steps = Vec::with_capacity(meta.n_steps);
        for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Parse(format!("waveform CSV line {}: expected 3 fields", i + 2)));
            }
            let idx: usize = fields[0]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("step index: {e}")))?;
            if idx != i {
                return Err(Error::Parse(format!("step index {idx} out of sequence")));
            }
            let num = |s: &str| -> Result<f64> {
                s.trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("waveform sample {s:?}: {e}")))
            };
            steps.push(FieldStep {
                bx_hz: num(fields[1])?,
                by_hz: num(fields[2])?,
            });
        }
        if steps.len() != meta.n_steps {
            return Err(Error::DimensionMismatch {
                expected: meta.n_steps,
                found: steps.len(),
            });
        }
        Self::new(meta.duration_s, steps, meta.reference_offset_hz)
    }

    /// Writes `<stem>.csv` and the `<stem>.json` sidecar.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        std::fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&self.meta())? + "\n",
        )?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: WaveformMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        Self::from_csv(
            &std::fs::read_to_string(dir.join(format!("{stem}.csv")))?,
            &meta,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img4() -> BitImage {
        BitImage::from_rows(&[&[1, 0, 1, 1], &[0, 1, 0, 0], &[1, 1, 0, 1], &[0, 0, 1, 0]]).unwrap()
    }

    #[test]
    fn paper_scale_span() {
        let img = BitImage::zeros(32, 32).unwrap();
        let mut img = img;
        img.set(31, 31, true);
        let hs = bits_to_harmonics(&img, 0.0, 20.0, 1.2).unwrap();
        assert_eq!(hs.len(), 1024);
        assert_eq!(hs.harmonics().last().unwrap().freq_hz, 20460.0);
        assert_eq!(hs.harmonics().last().unwrap().amp_hz, 1.2);
    }

    #[test]
    fn column_major_slot_assignment() {
        // hand enumeration over 16 cells: (row 2, col 1) is the 7th visited cell
        let mut img = BitImage::zeros(4, 4).unwrap();
        img.set(2, 1, true);
        let mut visited = 0;
        let mut found = None;
        for c in 0..4 {
            for r in 0..4 {
                if (r, c) == (2, 1) {
                    found = Some(visited);
                }
                visited += 1;
            }
        }
        assert_eq!(found, Some(6));
        let hs = bits_to_harmonics(&img, -100.0, 20.0, 2.0).unwrap();
        let nonzero: Vec<(usize, f64)> = hs
            .harmonics()
            .iter()
            .enumerate()
            .filter(|(_, h)| h.amp_hz > 0.0)
            .map(|(k, h)| (k, h.freq_hz))
            .collect();
        assert_eq!(nonzero, vec![(6, -100.0 + 6.0 * 20.0)]);
        assert_eq!(slot_frequency(2, 1, 4, -100.0, 20.0), 20.0);
    }

    #[test]
    fn encode_rejects_bad_parameters() {
        assert!(bits_to_harmonics(&img4(), 0.0, 0.0, 1.0).is_err());
        assert!(bits_to_harmonics(&img4(), 0.0, 10.0, 0.0).is_err());
        assert!(BitImage::new(0, 4, vec![]).is_err());
        assert!(BitImage::new(2, 2, vec![0, 1, 2, 0]).is_err());
    }

    #[test]
    fn harmonics_round_trip_to_image() {
        let img = img4();
        let hs = bits_to_harmonics(&img, -150.0, 20.0, 1.0).unwrap();
        assert_eq!(harmonics_to_bits(&hs, 4, 4).unwrap(), img);
    }

    #[test]
    fn row_comb_geometry() {
        let hs = row_harmonics(0, 0.0, 20.0, 32, 32, 9.0).unwrap();
        let f: Vec<f64> = hs.harmonics().iter().map(|h| h.freq_hz).collect();
        assert_eq!(f[1] - f[0], 640.0);
        let next = row_harmonics(1, 0.0, 20.0, 32, 32, 9.0).unwrap();
        for (a, b) in hs.harmonics().iter().zip(next.harmonics()) {
            assert_eq!(b.freq_hz - a.freq_hz, 20.0);
        }
        let small = row_harmonics(0, -50.0, 20.0, 4, 4, 1.0).unwrap();
        let f: Vec<f64> = small.harmonics().iter().map(|h| h.freq_hz + 50.0).collect();
        assert_eq!(f, vec![0.0, 80.0, 160.0, 240.0]);
        assert!(row_harmonics(4, 0.0, 20.0, 4, 4, 1.0).is_err());
    }

    #[test]
    fn row_comb_hits_one_slot_per_column() {
        let (rows, cols, sp, f0) = (4, 4, 20.0, -150.0);
        for r in 0..rows {
            let comb = row_harmonics(r, f0, sp, cols, rows, 1.0).unwrap();
            for (c, h) in comb.harmonics().iter().enumerate() {
                assert_eq!(h.freq_hz, slot_frequency(r, c, rows, f0, sp));
            }
        }
    }

    #[test]
    fn constant_single_harmonic() {
        let wf = synthesize(&HarmonicSet::single(0.0, 2.1).unwrap(), 1.0, 100).unwrap();
        assert!(wf.steps.iter().all(|s| s.bx_hz == 2.1 && s.by_hz == 0.0));
    }

    #[test]
    fn all_zero_image_gives_zero_waveform() {
        let hs = bits_to_harmonics(&BitImage::zeros(4, 4).unwrap(), -150.0, 20.0, 1.0).unwrap();
        let wf = synthesize(&hs, 0.5, 2048).unwrap();
        assert!(wf.is_zero());
    }

    #[test]
    fn symmetric_pair_cancels_by() {
        let (f, a) = (37.0, 1.5);
        let hs = HarmonicSet::new(vec![
            Harmonic { freq_hz: -f, amp_hz: a, phase_rad: 0.0 },
            Harmonic { freq_hz: f, amp_hz: a, phase_rad: 0.0 },
        ])
        .unwrap();
        let wf = synthesize(&hs, 0.25, 500).unwrap();
        for (s, step) in wf.steps.iter().enumerate() {
            let t = (s as f64 + 0.5) * wf.dt();
            assert!(step.by_hz.abs() < 1e-12);
            assert!((step.bx_hz - 2.0 * a * (2.0 * PI * f * t).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn undersampling_is_rejected() {
        let hs = HarmonicSet::single(1000.0, 1.0).unwrap();
        let err = synthesize(&hs, 1.0, 1999).unwrap_err();
        assert!(matches!(err, Error::Aliasing { required: 2000, .. }));
        assert!(synthesize(&hs, 1.0, 2000).is_ok());
    }

    #[test]
    fn parseval_power() {
        // incommensurate frequencies, duration ≥ 10 / min spacing
        let hs = HarmonicSet::new(vec![
            Harmonic { freq_hz: -93.7, amp_hz: 1.0, phase_rad: 0.3 },
            Harmonic { freq_hz: 11.3, amp_hz: 2.0, phase_rad: 0.0 },
            Harmonic { freq_hz: 57.9, amp_hz: 0.5, phase_rad: 1.0 },
        ])
        .unwrap();
        let wf = synthesize(&hs, 1.0, 4096).unwrap();
        let expected: f64 = hs.harmonics().iter().map(|h| h.amp_hz * h.amp_hz).sum();
        assert!((wf.mean_power() - expected).abs() / expected < 0.02);
    }

    #[test]
    fn phase_shift_matches_harmonic_phase_offset() {
        let hs = HarmonicSet::new(vec![
            Harmonic { freq_hz: -20.0, amp_hz: 1.0, phase_rad: 0.0 },
            Harmonic { freq_hz: 60.0, amp_hz: 3.0, phase_rad: 0.7 },
        ])
        .unwrap();
        let a = synthesize(&hs, 0.1, 400).unwrap().phase_shifted(PI / 2.0);
        let b = synthesize(&hs.with_phase_offset(PI / 2.0), 0.1, 400).unwrap();
        for (x, y) in a.steps.iter().zip(&b.steps) {
            assert!((x.bx_hz - y.bx_hz).abs() < 1e-12 && (x.by_hz - y.by_hz).abs() < 1e-12);
        }
    }

    #[test]
    fn pbm_round_trip_and_parsing() {
        let img = img4();
        let text = img.to_pbm();
        assert_eq!(text, "P1\n4 4\n1 0 1 1\n0 1 0 0\n1 1 0 1\n0 0 1 0\n");
        assert_eq!(BitImage::from_pbm(&text).unwrap(), img);
        let packed = "P1\n# comment\n4 4\n1011\n0100\n1101 0010\n";
        assert_eq!(BitImage::from_pbm(packed).unwrap(), img);
        assert!(BitImage::from_pbm("P4\n1 1\n0\n").is_err());
        assert!(BitImage::from_pbm("P1\n2 2\n0 1 0\n").is_err());
    }

    #[test]
    fn waveform_csv_round_trip_is_byte_identical() {
        let hs = bits_to_harmonics(&img4(), -150.0, 20.0, 1.2).unwrap();
        let wf = synthesize(&hs, 0.1, 512).unwrap().with_reference_offset(-150.0);
        let csv = wf.to_csv();
        let back = Waveform::from_csv(&csv, &wf.meta()).unwrap();
        assert_eq!(back, wf);
        assert_eq!(back.to_csv(), csv);
    }
}
