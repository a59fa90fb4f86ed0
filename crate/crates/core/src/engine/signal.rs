//! FIDs, spectra and their text formats.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{C64, ZERO};

/// Tag written into FID and spectrum sidecars.
pub const PHASE_CONVENTION: &str = "receiver-i_hard90x-positive-absorption";

/// Detected transverse signal i·Tr(ρ(t)·F+).
#[derive(Debug, Clone, PartialEq)]
pub struct Fid {
    pub dwell_s: f64,
    pub samples: Vec<C64>,
    /// Total exponential broadening applied so far.
    pub lb_hz: f64,
    /// Acquisition time was not a whole number of dwells.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidMeta {
    pub dwell_s: f64,
    pub n_samples: usize,
    pub lb_hz: f64,
    pub truncated: bool,
    pub phase_convention: String,
}

impl Fid {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(move |m| m as f64 * self.dwell_s)
    }

    /// Σ|s|²·dwell.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.dwell_s
    }

    /// Relative L2 distance ‖self − other‖/‖other‖.
    pub fn relative_l2(&self, other: &Fid) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: other.len(),
                found: self.len(),
            });
        }
        let num: f64 = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        let den: f64 = other.samples.iter().map(|z| z.norm_sqr()).sum();
        Ok((num / den).sqrt())
    }

    /// Weighted sum `a·self + b·other` on a shared time grid.
    pub fn combine(&self, a: f64, other: &Fid, b: f64) -> Result<Fid> {
        if self.len() != other.len() || self.dwell_s != other.dwell_s {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(Fid {
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(x, y)| x * a + y * b)
                .collect(),
            truncated: self.truncated || other.truncated,
            ..self.clone()
        })
    }

    pub fn meta(&self) -> FidMeta {
        FidMeta {
            dwell_s: self.dwell_s,
            n_samples: self.len(),
            lb_hz: self.lb_hz,
            truncated: self.truncated,
            phase_convention: PHASE_CONVENTION.into(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,re,im\n");
        for (t, z) in self.times().zip(&self.samples) {
            let _ = writeln!(out, "{t:.16e},{:.16e},{:.16e}", z.re, z.im);
        }
        out
    }

    pub fn from_csv(text: &str, meta: &FidMeta) -> Result<Self> {
        let rows = parse_triples(text, "t_s,re,im")?;
        if rows.len() != meta.n_samples {
            return Err(Error::DimensionMismatch {
                expected: meta.n_samples,
                found: rows.len(),
            });
        }
        Ok(Fid {
            dwell_s: meta.dwell_s,
            samples: rows.into_iter().map(|(_, re, im)| C64::new(re, im)).collect(),
            lb_hz: meta.lb_hz,
            truncated: meta.truncated,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        save_pair(dir.as_ref(), stem, self.to_csv(), &self.meta())
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: FidMeta = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        Self::from_csv(&std::fs::read_to_string(dir.join(format!("{stem}.csv")))?, &meta)
    }
}

/// Exponential apodization exp(−π·lb·t), Lorentzian FWHM `lb`.
pub fn line_broaden(fid: &Fid, lb_hz: f64) -> Result<Fid> {
    if !(lb_hz >= 0.0 && lb_hz.is_finite()) {
        return Err(Error::validation("line broadening must be non-negative"));
    }
    let decay = (-PI * lb_hz * fid.dwell_s).exp();
    let mut w = 1.0;
    let samples = fid
        .samples
        .iter()
        .enumerate()
        .map(|(m, z)| {
            if m % 512 == 0 {
                w = (-PI * lb_hz * m as f64 * fid.dwell_s).exp();
            }
            let out = z * w;
            w *= decay;
            out
        })
        .collect();
    Ok(Fid {
        samples,
        lb_hz: fid.lb_hz + lb_hz,
        ..fid.clone()
    })
}

/// Frequency-domain signal on an ascending axis centered on the carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freqs_hz: Vec<f64>,
    pub values: Vec<C64>,
    pub df_hz: f64,
    pub dwell_s: f64,
    pub zero_fill: usize,
    pub lb_hz: f64,
    /// Start of acquisition relative to the pulse phase origin, s.
    pub origin_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMeta {
    pub dwell_s: f64,
    pub zero_fill: usize,
    pub lb_hz: f64,
    #[serde(default)]
    pub origin_s: f64,
    pub phase_convention: String,
}

/// dwell-scaled DFT of the zero-filled FID, fftshifted to ascending frequency.
pub fn spectrum(fid: &Fid, zero_fill: usize) -> Result<Spectrum> {
    if !zero_fill.is_power_of_two() {
        return Err(Error::validation(format!("zero fill {zero_fill} is not a power of two")));
    }
    if zero_fill < fid.len() {
        return Err(Error::validation(format!(
            "zero fill {zero_fill} is shorter than the FID ({} samples)",
            fid.len()
        )));
    }
    let mut buf = vec![ZERO; zero_fill];
    buf[..fid.len()].copy_from_slice(&fid.samples);
    FftPlanner::new().plan_fft_forward(zero_fill).process(&mut buf);
    let half = zero_fill / 2;
    let values: Vec<C64> = buf[half..]
        .iter()
        .chain(&buf[..half])
        .map(|z| z * fid.dwell_s)
        .collect();
    let df = 1.0 / (zero_fill as f64 * fid.dwell_s);
    Ok(Spectrum {
        freqs_hz: (0..zero_fill).map(|k| (k as f64 - half as f64) * df).collect(),
        values,
        df_hz: df,
        dwell_s: fid.dwell_s,
        zero_fill,
        lb_hz: fid.lb_hz,
        origin_s: 0.0,
    })
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Σ|X|²·df.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.df_hz
    }

    pub fn range_hz(&self) -> (f64, f64) {
        (self.freqs_hz[0], self.freqs_hz[self.len() - 1])
    }

    /// Bin nearest to `freq_hz`.
    pub fn index_of(&self, freq_hz: f64) -> Result<usize> {
        let (lo, hi) = self.range_hz();
        if !(freq_hz >= lo - self.df_hz / 2.0 && freq_hz <= hi + self.df_hz / 2.0) {
            return Err(Error::OutOfRange {
                freq_hz,
                lo_hz: lo,
                hi_hz: hi,
            });
        }
        let k = ((freq_hz - lo) / self.df_hz).round() as usize;
        Ok(k.min(self.len() - 1))
    }

    pub fn value_at(&self, freq_hz: f64) -> Result<C64> {
        Ok(self.values[self.index_of(freq_hz)?])
    }

    /// Carrier-frame value at `freq_hz` rotated back to the pulse phase origin,
    /// so that a coherence locked to a harmonic at that frequency reads with a fixed phase.
    pub fn referenced_value(&self, freq_hz: f64) -> Result<C64> {
        Ok(self.value_at(freq_hz)? * self.origin_phase(freq_hz))
    }

    /// [`Spectrum::window_integral`] rotated back to the pulse phase origin.
    pub fn referenced_integral(&self, center_hz: f64, half_width_hz: f64) -> Result<C64> {
        Ok(self.window_integral(center_hz, half_width_hz)? * self.origin_phase(center_hz))
    }

    fn origin_phase(&self, freq_hz: f64) -> C64 {
        C64::from_polar(1.0, -2.0 * PI * freq_hz * self.origin_s)
    }

    pub fn with_origin(mut self, origin_s: f64) -> Self {
        self.origin_s = origin_s;
        self
    }

    /// Σ X·df over the bins within `center ± half_width`.
    pub fn window_integral(&self, center_hz: f64, half_width_hz: f64) -> Result<C64> {
        let (lo, hi) = self.range_hz();
        for f in [center_hz - half_width_hz, center_hz + half_width_hz] {
            if f < lo || f > hi {
                return Err(Error::OutOfRange {
                    freq_hz: f,
                    lo_hz: lo,
                    hi_hz: hi,
                });
            }
        }
        let a = ((center_hz - half_width_hz - lo) / self.df_hz).ceil() as usize;
        let b = ((center_hz + half_width_hz - lo) / self.df_hz).floor() as usize;
        Ok(self.values[a..=b.min(self.len() - 1)].iter().sum::<C64>() * self.df_hz)
    }

    /// Bin with the largest |real part|.
    pub fn peak(&self) -> (f64, C64) {
        let k = (0..self.len())
            .max_by(|&a, &b| self.values[a].re.abs().total_cmp(&self.values[b].re.abs()))
            .unwrap_or(0);
        (self.freqs_hz[k], self.values[k])
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, z| a.max(z.norm()))
    }

    pub fn scaled(&self, k: f64) -> Spectrum {
        Spectrum {
            values: self.values.iter().map(|z| z * k).collect(),
            ..self.clone()
        }
    }

    /// Weighted sum `a·self + b·other` on a shared axis and origin.
    pub fn combine(&self, a: f64, other: &Spectrum, b: f64) -> Result<Spectrum> {
        if self.len() != other.len() || self.df_hz != other.df_hz {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        if self.origin_s != other.origin_s {
            return Err(Error::validation("cannot combine spectra acquired at different times"));
        }
        Ok(Spectrum {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x * a + y * b)
                .collect(),
            ..self.clone()
        })
    }

    pub fn meta(&self) -> SpectrumMeta {
        SpectrumMeta {
            dwell_s: self.dwell_s,
            zero_fill: self.zero_fill,
            lb_hz: self.lb_hz,
            origin_s: self.origin_s,
            phase_convention: PHASE_CONVENTION.into(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,re,im\n");
        for (f, z) in self.freqs_hz.iter().zip(&self.values) {
            let _ = writeln!(out, "{f:.16e},{:.16e},{:.16e}", z.re, z.im);
        }
        out
    }

    pub fn from_csv(text: &str, meta: &SpectrumMeta) -> Result<Self> {
        let rows = parse_triples(text, "freq_hz,re,im")?;
        if rows.len() != meta.zero_fill {
            return Err(Error::DimensionMismatch {
                expected: meta.zero_fill,
                found: rows.len(),
            });
        }
        Ok(Spectrum {
            freqs_hz: rows.iter().map(|r| r.0).collect(),
            values: rows.iter().map(|r| C64::new(r.1, r.2)).collect(),
            df_hz: 1.0 / (meta.zero_fill as f64 * meta.dwell_s),
            dwell_s: meta.dwell_s,
            zero_fill: meta.zero_fill,
            lb_hz: meta.lb_hz,
            origin_s: meta.origin_s,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        save_pair(dir.as_ref(), stem, self.to_csv(), &self.meta())
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: SpectrumMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        Self::from_csv(&std::fs::read_to_string(dir.join(format!("{stem}.csv")))?, &meta)
    }
}

fn save_pair<M: Serialize>(dir: &Path, stem: &str, csv: String, meta: &M) -> Result<()> {
    std::fs::write(dir.join(format!("{stem}.csv")), csv)?;
    std::fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(meta)? + "\n",
    )?;
    Ok(())
}

fn parse_triples(text: &str, header: &str) -> Result<Vec<(f64, f64, f64)>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(header) {
        return Err(Error::Parse(format!("CSV header must be {header}")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let v: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("{line:?}: {e}")))?;
            match v[..] {
                [a, b, c] => Ok((a, b, c)),
                _ => Err(Error::Parse(format!("{line:?}: expected 3 fields"))),
            }
        })
        .collect()
}
