//! Single-pulse, two-pulse locking and pseudo-2D photography experiments.
//!
//! Every experiment starts from the thermal deviation state. Two-pulse runs
//! evolve pulse 1 once and branch only for pulse 2. Both pulses are
//! synthesized against one time origin (t = 0 at the start of pulse 1), so a
//! pulse-2 harmonic stays phase coherent with the pulse-1 harmonic at the same
//! frequency and the cycle phases are relative to it.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{line_broaden, spectrum, Engine, FactoredState, Mode, Spectrum};
use crate::error::{Error, Result};
use crate::ops::SpinSystem;
use crate::waveform::{
    bits_to_harmonics, centered_f_start, row_harmonics, synthesize_at, BitImage, HarmonicSet,
    Waveform,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionParams {
    pub t_acq_s: f64,
    pub dwell_s: f64,
    pub lb_hz: f64,
    pub zero_fill: usize,
    /// Free evolution between the last pulse and the first sample.
    #[serde(default)]
    pub dead_time_s: f64,
}

impl Default for AcquisitionParams {
    fn default() -> Self {
        AcquisitionParams {
            t_acq_s: 0.4,
            dwell_s: 1.0 / 10240.0,
            lb_hz: 12.0,
            zero_fill: 8192,
            dead_time_s: 0.0,
        }
    }
}

impl AcquisitionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_acq_s > 0.0 && self.dwell_s > 0.0 && self.t_acq_s.is_finite()) {
            return Err(Error::validation("acquisition time and dwell must be positive"));
        }
        if !(self.lb_hz >= 0.0) || !(self.dead_time_s >= 0.0) {
            return Err(Error::validation("line broadening and dead time must be non-negative"));
        }
        let samples = (self.t_acq_s / self.dwell_s + 1e-9).floor() as usize;
        if !self.zero_fill.is_power_of_two() || self.zero_fill < samples {
            return Err(Error::validation(format!(
                "zero fill {} must be a power of two ≥ {samples} samples",
                self.zero_fill
            )));
        }
        Ok(())
    }
}

/// Pulse-2 phase cycle and receiver arithmetic.
///
/// The cycled spectrum is `Σ_k w_k·S(φ_k) + reference_weight·S_single`, where
/// `S(φ)` is the two-pulse spectrum with pulse 2 shifted by φ and `S_single` is
/// the pulse-1-only spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCycle {
    pub phases_rad: Vec<f64>,
    pub receiver_weights: Vec<f64>,
    #[serde(default)]
    pub reference_weight: f64,
}

impl Default for PhaseCycle {
    fn default() -> Self {
        Self::locking()
    }
}

impl PhaseCycle {
    /// ±90° with equal receiver weights. A pulse acting on the bare thermal
    /// state produces opposite signals in the two branches, so the sum cancels it.
    pub fn locking() -> Self {
        PhaseCycle {
            phases_rad: vec![FRAC_PI_2, -FRAC_PI_2],
            receiver_weights: vec![0.5, 0.5],
            reference_weight: 0.0,
        }
    }

    /// [`PhaseCycle::locking`] minus the pulse-1-only spectrum: only the change
    /// that pulse 2 makes to pulse-1 coherence survives.
    pub fn locked_difference() -> Self {
        PhaseCycle {
            reference_weight: -1.0,
            ..Self::locking()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases_rad.is_empty() {
            return Err(Error::validation("phase cycle is empty"));
        }
        if self.phases_rad.len() != self.receiver_weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.phases_rad.len(),
                found: self.receiver_weights.len(),
            });
        }
        if !self
            .phases_rad
            .iter()
            .chain(&self.receiver_weights)
            .chain(std::iter::once(&self.reference_weight))
            .all(|x| x.is_finite())
        {
            return Err(Error::validation("phase cycle entries must be finite"));
        }
        Ok(())
    }
}

/// A pulse program: harmonics, duration and step count. `start_s` sets the
/// phase origin; a pulse 2 without one starts where pulse 1 ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub harmonics: HarmonicSet,
    pub duration_s: f64,
    pub n_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_s: Option<f64>,
}

impl PulseSpec {
    pub fn new(harmonics: HarmonicSet, duration_s: f64, n_steps: usize) -> Self {
        PulseSpec {
            harmonics,
            duration_s,
            n_steps,
            start_s: None,
        }
    }

    pub fn starting_at(mut self, start_s: f64) -> Self {
        self.start_s = Some(start_s);
        self
    }

    /// Sampled waveform, or `None` for a zero-length pulse.
    pub fn waveform(&self, default_start_s: f64) -> Result<Option<Waveform>> {
        if self.duration_s == 0.0 {
            return Ok(None);
        }
        synthesize_at(
            &self.harmonics,
            self.duration_s,
            self.n_steps,
            self.start_s.unwrap_or(default_start_s),
        )
        .map(Some)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub sys: SpinSystem,
    #[serde(default)]
    pub pulse1: Option<PulseSpec>,
    #[serde(default)]
    pub pulse2: Option<PulseSpec>,
    #[serde(default)]
    pub pulse2_phase_cycle: PhaseCycle,
    pub acquisition: AcquisitionParams,
    #[serde(default)]
    pub mode: Mode,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        self.sys.validate()?;
        self.acquisition.validate()?;
        if self.pulse1.is_none() && self.pulse2.is_none() {
            return Err(Error::validation("plan has no pulse"));
        }
        if self.pulse2.is_some() {
            self.pulse2_phase_cycle.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: ExperimentPlan = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    fn waveforms(&self) -> Result<(Option<Waveform>, Option<Waveform>)> {
        let w1 = match &self.pulse1 {
            Some(p) => p.waveform(0.0)?,
            None => None,
        };
        let t1 = self.pulse1.as_ref().map_or(0.0, |p| p.duration_s);
        let w2 = match &self.pulse2 {
            Some(p) => p.waveform(t1)?,
            None => None,
        };
        Ok((w1, w2))
    }
}

/// Dead time, acquisition, broadening and transform. `origin_s` is the end of
/// the last pulse measured from the phase origin.
pub fn detect(
    eng: &Engine,
    state: &FactoredState,
    acq: &AcquisitionParams,
    origin_s: f64,
) -> Result<Spectrum> {
    let fid = if acq.dead_time_s > 0.0 {
        let mut s = state.clone();
        eng.free_evolve(&mut s, acq.dead_time_s)?;
        eng.acquire(&s, acq.t_acq_s, acq.dwell_s)?
    } else {
        eng.acquire(state, acq.t_acq_s, acq.dwell_s)?
    };
    Ok(spectrum(&line_broaden(&fid, acq.lb_hz)?, acq.zero_fill)?.with_origin(origin_s + acq.dead_time_s))
}

/// 90°x pulse short enough that couplings do not act during it: 100 kHz for 2.5 µs.
pub fn hard_pulse() -> Waveform {
    Waveform::constant(2.5e-6, 4, 100_000.0, 0.0).expect("static waveform")
}

/// Spectrum of the thermal state after [`hard_pulse`].
pub fn hard_pulse_spectrum(eng: &Engine, acq: &AcquisitionParams) -> Result<Spectrum> {
    let wf = hard_pulse();
    let st = prepare(eng, Some(&wf), Mode::Exact)?;
    detect(eng, &st, acq, wf.duration_s)
}

/// Frequency of the largest absorption value within ±`band_hz` of the carrier.
pub fn strongest_line(spec: &Spectrum, band_hz: f64) -> Result<f64> {
    spec.freqs_hz
        .iter()
        .zip(&spec.values)
        .filter(|(f, _)| f.abs() <= band_hz)
        .max_by(|a, b| a.1.re.total_cmp(&b.1.re))
        .map(|(f, _)| *f)
        .ok_or_else(|| Error::validation("no spectral points inside the band"))
}

/// Thermal state after `pulse1` (or untouched when absent).
pub fn prepare(eng: &Engine, pulse1: Option<&Waveform>, mode: Mode) -> Result<FactoredState> {
    let mut state = eng.thermal();
    if let Some(wf) = pulse1 {
        eng.evolve(&mut state, wf, mode)?;
    }
    Ok(state)
}

/// Phase-cycled two-pulse spectrum from the state left by a pulse 1 ending at `t1_s`.
///
/// The reference term uses `state1` evolved freely over the pulse-2 duration,
/// i.e. the same experiment with pulse 2 switched off.
pub fn cycled(
    eng: &Engine,
    state1: &FactoredState,
    pulse2: Option<&Waveform>,
    cycle: &PhaseCycle,
    acq: &AcquisitionParams,
    mode: Mode,
    t1_s: f64,
) -> Result<Spectrum> {
    cycle.validate()?;
    let dur2 = pulse2.map_or(0.0, |w| w.duration_s);
    let origin = t1_s + dur2;
    let branches: Vec<Spectrum> = match pulse2 {
        None => vec![detect(eng, state1, acq, origin)?; cycle.phases_rad.len()],
        Some(wf) => cycle
            .phases_rad
            .par_iter()
            .map(|&phi| {
                let mut st = state1.clone();
                eng.evolve(&mut st, &wf.phase_shifted(phi), mode)?;
                detect(eng, &st, acq, origin)
            })
            .collect::<Result<_>>()?,
    };
    let mut out = branches[0].scaled(0.0);
    if cycle.reference_weight != 0.0 {
        let mut free = state1.clone();
        if dur2 > 0.0 {
            eng.free_evolve(&mut free, dur2)?;
        }
        out = detect(eng, &free, acq, origin)?.scaled(cycle.reference_weight);
    }
    for (s, &w) in branches.iter().zip(&cycle.receiver_weights) {
        out = out.combine(1.0, s, w)?;
    }
    Ok(out)
}

pub fn run_single_pulse(plan: &ExperimentPlan) -> Result<Spectrum> {
    plan.validate()?;
    if plan.pulse2.is_some() {
        return Err(Error::validation("single-pulse run given a second pulse"));
    }
    let eng = Engine::new(&plan.sys)?;
    let (w1, _) = plan.waveforms()?;
    let t1 = w1.as_ref().map_or(0.0, |w| w.duration_s);
    detect(&eng, &prepare(&eng, w1.as_ref(), plan.mode)?, &plan.acquisition, t1)
}

pub fn run_two_pulse(plan: &ExperimentPlan) -> Result<Spectrum> {
    plan.validate()?;
    if plan.pulse2.is_none() {
        return Err(Error::validation("two-pulse run needs a second pulse"));
    }
    let eng = Engine::new(&plan.sys)?;
    let (w1, w2) = plan.waveforms()?;
    let state1 = prepare(&eng, w1.as_ref(), plan.mode)?;
    cycled(
        &eng,
        &state1,
        w2.as_ref(),
        &plan.pulse2_phase_cycle,
        &plan.acquisition,
        plan.mode,
        w1.as_ref().map_or(0.0, |w| w.duration_s),
    )
}

/// Second-pulse duration sweep on a single harmonic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2bConfig {
    pub seed: u64,
    pub n_spins: usize,
    pub coupling_bound_hz: f64,
    /// Frequency shared by both pulses, Hz from the carrier. When absent the
    /// strongest hard-pulse line within `line_band_hz` is used.
    #[serde(default)]
    pub freq_hz: Option<f64>,
    #[serde(default = "default_line_band")]
    pub line_band_hz: f64,
    /// Half width of the readout window; the line broadening when absent.
    #[serde(default)]
    pub window_half_width_hz: Option<f64>,
    pub amp1_hz: f64,
    pub dur1_s: f64,
    pub steps1: usize,
    pub amp2_hz: f64,
    pub dur2_max_s: f64,
    pub dur2_increment_s: f64,
    pub steps_per_increment: usize,
    pub acquisition: AcquisitionParams,
    #[serde(default)]
    pub cycle: PhaseCycle,
    #[serde(default)]
    pub mode: Mode,
}

impl Default for Fig2bConfig {
    fn default() -> Self {
        Fig2bConfig {
            seed: 1,
            n_spins: 8,
            coupling_bound_hz: 792.0,
            freq_hz: Some(50.0),
            line_band_hz: default_line_band(),
            window_half_width_hz: None,
            amp1_hz: 1.0,
            dur1_s: 1.0,
            steps1: 10240,
            amp2_hz: 4.0,
            dur2_max_s: 0.2,
            dur2_increment_s: 0.01,
            steps_per_increment: 103,
            acquisition: AcquisitionParams::default(),
            cycle: PhaseCycle::locking(),
            mode: Mode::Split,
        }
    }
}

fn default_line_band() -> f64 {
    500.0
}

impl Fig2bConfig {
    pub fn increments(&self) -> Result<usize> {
        let k = self.dur2_max_s / self.dur2_increment_s;
        if !(self.dur2_increment_s > 0.0) || (k - k.round()).abs() > 1e-9 {
            return Err(Error::validation(
                "sweep maximum must be a whole number of increments",
            ));
        }
        Ok(k.round() as usize)
    }

    pub fn system(&self) -> Result<SpinSystem> {
        SpinSystem::random(self.n_spins, self.coupling_bound_hz, self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub duration_s: f64,
    pub signed_amplitude: f64,
}

#[derive(Debug, Clone)]
pub struct Fig2bResult {
    pub freq_hz: f64,
    pub points: Vec<SweepPoint>,
    pub spectra: Vec<Spectrum>,
}

impl Fig2bResult {
    /// Some pair of sweep points has strictly opposite signs.
    pub fn sign_flips(&self) -> bool {
        let pos = self.points.iter().any(|p| p.signed_amplitude > 0.0);
        let neg = self.points.iter().any(|p| p.signed_amplitude < 0.0);
        pos && neg
    }

    /// Largest |amplitude| over nonzero durations divided by |amplitude| at duration zero.
    pub fn amplification(&self) -> f64 {
        let a0 = self.points[0].signed_amplitude.abs();
        let best = self.points[1..]
            .iter()
            .fold(0.0f64, |a, p| a.max(p.signed_amplitude.abs()));
        best / a0
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("duration_s,signed_amplitude\n");
        for p in &self.points {
            let _ = writeln!(out, "{:.16e},{:.16e}", p.duration_s, p.signed_amplitude);
        }
        out
    }
}

pub fn run_fig2b(cfg: &Fig2bConfig) -> Result<Fig2bResult> {
    let eng = Engine::new(&cfg.system()?)?;
    run_fig2b_on(&eng, cfg)
}

/// Sweep on a prebuilt engine: pulse 1 once, then each cycle branch is
/// extended by one increment at a time with a spectrum recorded at every checkpoint.
pub fn run_fig2b_on(eng: &Engine, cfg: &Fig2bConfig) -> Result<Fig2bResult> {
    cfg.acquisition.validate()?;
    cfg.cycle.validate()?;
    let n_inc = cfg.increments()?;
    if cfg.steps_per_increment == 0 {
        return Err(Error::validation("steps per increment must be positive"));
    }
    let freq = match cfg.freq_hz {
        Some(f) => f,
        None => strongest_line(&hard_pulse_spectrum(eng, &cfg.acquisition)?, cfg.line_band_hz)?,
    };
    let pulse1 = PulseSpec::new(HarmonicSet::single(freq, cfg.amp1_hz)?, cfg.dur1_s, cfg.steps1);
    let w1 = pulse1.waveform(0.0)?;
    let state1 = prepare(eng, w1.as_ref(), cfg.mode)?;
    let single = detect(eng, &state1, &cfg.acquisition, cfg.dur1_s)?;

    let n2 = n_inc * cfg.steps_per_increment;
    let w2 = synthesize_at(
        &HarmonicSet::single(freq, cfg.amp2_hz)?,
        cfg.dur2_max_s,
        n2,
        cfg.dur1_s,
    )?;
    let dt2 = w2.dt();
    let origin = |k: usize| cfg.dur1_s + ((k + 1) * cfg.steps_per_increment) as f64 * dt2;
    // per branch: spectra after 1..=n_inc increments
    let branches: Vec<Vec<Spectrum>> = cfg
        .cycle
        .phases_rad
        .par_iter()
        .map(|&phi| {
            let shifted = w2.phase_shifted(phi);
            let mut st = state1.clone();
            let mut out = Vec::with_capacity(n_inc);
            for k in 0..n_inc {
                let seg = shifted.segment(k * cfg.steps_per_increment, cfg.steps_per_increment)?;
                eng.evolve(&mut st, &seg, cfg.mode)?;
                out.push(detect(eng, &st, &cfg.acquisition, origin(k))?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let total = cfg.cycle.reference_weight + cfg.cycle.receiver_weights.iter().sum::<f64>();
    let mut spectra = vec![single.scaled(total)];
    let mut free = state1.clone();
    for k in 0..n_inc {
        let mut s = branches[0][k].scaled(0.0);
        if cfg.cycle.reference_weight != 0.0 {
            eng.free_evolve(&mut free, cfg.steps_per_increment as f64 * dt2)?;
            s = detect(eng, &free, &cfg.acquisition, origin(k))?.scaled(cfg.cycle.reference_weight);
        }
        for (b, &w) in branches.iter().zip(&cfg.cycle.receiver_weights) {
            s = s.combine(1.0, &b[k], w)?;
        }
        spectra.push(s);
    }
    let hw = cfg.window_half_width_hz.unwrap_or(cfg.acquisition.lb_hz);
    let points = spectra
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let v = if hw > 0.0 {
                s.referenced_integral(freq, hw)?
            } else {
                s.referenced_value(freq)?
            };
            Ok(SweepPoint {
                duration_s: k as f64 * cfg.dur2_increment_s,
                signed_amplitude: v.re,
            })
        })
        .collect::<Result<_>>()?;
    info!("fig2b sweep done: {} points at {} Hz", n_inc + 1, freq);
    Ok(Fig2bResult {
        freq_hz: freq,
        points,
        spectra,
    })
}

/// Pseudo-2D photography parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotographyConfig {
    pub seed: u64,
    pub n_spins: usize,
    pub coupling_bound_hz: f64,
    pub spacing_hz: f64,
    /// Frequency of slot 0; centered on the carrier when absent.
    #[serde(default)]
    pub f_start_hz: Option<f64>,
    pub amp1_hz: f64,
    pub dur1_s: f64,
    pub steps1: usize,
    pub amp2_hz: f64,
    pub dur2_s: f64,
    pub steps2: usize,
    pub acquisition: AcquisitionParams,
    #[serde(default = "PhaseCycle::locked_difference")]
    pub cycle: PhaseCycle,
    #[serde(default)]
    pub mode: Mode,
}

impl PhotographyConfig {
    pub fn f_start(&self, rows: usize, cols: usize) -> f64 {
        self.f_start_hz
            .unwrap_or_else(|| centered_f_start(rows, cols, self.spacing_hz))
    }

    pub fn system(&self) -> Result<SpinSystem> {
        SpinSystem::random(self.n_spins, self.coupling_bound_hz, self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.acquisition.validate()?;
        self.cycle.validate()?;
        if !(self.spacing_hz > 0.0) {
            return Err(Error::validation("slot spacing must be positive"));
        }
        if self.spacing_hz / self.acquisition.lb_hz.max(f64::MIN_POSITIVE) < 1.5 {
            log::warn!("slot spacing below 1.5 line widths; neighboring slots will overlap");
        }
        Ok(())
    }

    /// Pulse-1 program for `img`.
    pub fn pulse1(&self, img: &BitImage) -> Result<HarmonicSet> {
        bits_to_harmonics(
            img,
            self.f_start(img.rows(), img.cols()),
            self.spacing_hz,
            self.amp1_hz,
        )
    }

    /// Readout combs, one per image row.
    pub fn row_combs(&self, rows: usize, cols: usize) -> Result<Vec<HarmonicSet>> {
        let f0 = self.f_start(rows, cols);
        (0..rows)
            .map(|r| row_harmonics(r, f0, self.spacing_hz, cols, rows, self.amp2_hz))
            .collect()
    }
}

/// Row spectra of a pseudo-2D run, indexed by the reference frequency of each readout comb.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumStack {
    pub rows: Vec<Spectrum>,
    pub row_freqs_hz: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackIndexEntry {
    pub row: usize,
    pub ref_freq_hz: f64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackIndex {
    pub rows: Vec<StackIndexEntry>,
}

impl SpectrumStack {
    pub fn new(rows: Vec<Spectrum>, row_freqs_hz: Vec<f64>) -> Result<Self> {
        if rows.len() != row_freqs_hz.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                found: row_freqs_hz.len(),
            });
        }
        if rows.windows(2).any(|w| w[0].freqs_hz != w[1].freqs_hz) {
            return Err(Error::validation("stack rows must share one frequency axis"));
        }
        Ok(SpectrumStack { rows, row_freqs_hz })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.rows.iter().fold(0.0, |a, s| a.max(s.max_abs()))
    }

    /// Writes `row_NN.csv`/`row_NN.json` per row and `index.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for (r, (s, &f)) in self.rows.iter().zip(&self.row_freqs_hz).enumerate() {
            let stem = format!("row_{r:02}");
            s.save(dir, &stem)?;
            entries.push(StackIndexEntry {
                row: r,
                ref_freq_hz: f,
                file: format!("{stem}.csv"),
            });
        }
        let index = StackIndex { rows: entries };
        std::fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let index: StackIndex = serde_json::from_str(&std::fs::read_to_string(dir.join("index.json"))?)?;
        let mut rows = Vec::new();
        let mut freqs = Vec::new();
        for e in &index.rows {
            let stem = e.file.trim_end_matches(".csv");
            rows.push(Spectrum::load(dir, stem)?);
            freqs.push(e.ref_freq_hz);
        }
        Self::new(rows, freqs)
    }
}

pub fn run_photography(img: &BitImage, cfg: &PhotographyConfig) -> Result<SpectrumStack> {
    cfg.validate()?;
    let eng = Engine::new(&cfg.system()?)?;
    let combs = cfg.row_combs(img.rows(), img.cols())?;
    photograph(&eng, &cfg.pulse1(img)?, &combs, cfg)
}

/// Runs pulse 1 once, then one phase-cycled readout per comb. Rows run in
/// parallel and come back in comb order.
pub fn photograph(
    eng: &Engine,
    pulse1: &HarmonicSet,
    combs: &[HarmonicSet],
    cfg: &PhotographyConfig,
) -> Result<SpectrumStack> {
    cfg.validate()?;
    let w1 = PulseSpec::new(pulse1.clone(), cfg.dur1_s, cfg.steps1).waveform(0.0)?;
    let state1 = prepare(eng, w1.as_ref(), cfg.mode)?;
    let rows: Vec<Spectrum> = combs
        .par_iter()
        .enumerate()
        .map(|(r, comb)| {
            let run = || -> Result<Spectrum> {
                let w2 = PulseSpec::new(comb.clone(), cfg.dur2_s, cfg.steps2).waveform(cfg.dur1_s)?;
                cycled(eng, &state1, w2.as_ref(), &cfg.cycle, &cfg.acquisition, cfg.mode, cfg.dur1_s)
            };
            run().map_err(|e| Error::Row {
                row: r,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let freqs = combs
        .iter()
        .map(|c| c.harmonics()[0].freq_hz)
        .collect();
    SpectrumStack::new(rows, freqs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_acq() -> AcquisitionParams {
        AcquisitionParams {
            t_acq_s: 0.1,
            dwell_s: 1.0 / 2048.0,
            lb_hz: 12.0,
            zero_fill: 256,
            dead_time_s: 0.0,
        }
    }

    fn plan(pulse2: Option<PulseSpec>, amp1: f64) -> ExperimentPlan {
        ExperimentPlan {
            sys: SpinSystem::random(4, 400.0, 2).unwrap(),
            pulse1: Some(PulseSpec::new(HarmonicSet::single(60.0, amp1).unwrap(), 0.2, 512)),
            pulse2,
            pulse2_phase_cycle: PhaseCycle::locking(),
            acquisition: small_acq(),
            mode: Mode::Split,
        }
    }

    fn pulse2(amp: f64, dur: f64) -> PulseSpec {
        PulseSpec::new(HarmonicSet::single(60.0, amp).unwrap(), dur, 128)
    }

    #[test]
    fn zero_length_second_pulse_reduces_to_single_pulse() {
        let single = run_single_pulse(&plan(None, 3.0)).unwrap();
        let two = run_two_pulse(&plan(Some(pulse2(8.0, 0.0)), 3.0)).unwrap();
        assert_eq!(single.values, two.values);
    }

    #[test]
    fn cycle_cancels_direct_response() {
        let full = run_two_pulse(&plan(Some(pulse2(8.0, 0.05)), 3.0)).unwrap();
        let direct = run_two_pulse(&plan(Some(pulse2(8.0, 0.05)), 0.0)).unwrap();
        assert!(direct.max_abs() < 1e-8 * full.max_abs(), "{}", direct.max_abs());
        assert!(full.max_abs() > 0.0);
    }

    #[test]
    fn zero_pulse_gives_zero_spectrum() {
        let s = run_single_pulse(&plan(None, 0.0)).unwrap();
        assert_eq!(s.max_abs(), 0.0);
    }

    #[test]
    fn plan_validation() {
        let mut p = plan(None, 1.0);
        p.pulse1 = None;
        assert!(run_single_pulse(&p).is_err());
        assert!(run_two_pulse(&plan(None, 1.0)).is_err());
        let mut p = plan(Some(pulse2(1.0, 0.01)), 1.0);
        p.pulse2_phase_cycle.phases_rad.clear();
        assert!(p.validate().is_err());
        let mut p = plan(None, 1.0);
        p.acquisition.zero_fill = 100;
        assert!(p.validate().is_err());
    }

    #[test]
    fn plan_json_uses_unit_suffixes() {
        let text = serde_json::to_string(&plan(Some(pulse2(1.0, 0.01)), 1.0)).unwrap();
        for key in ["duration_s", "freq_hz", "amp_hz", "t_acq_s", "dwell_s", "lb_hz"] {
            assert!(text.contains(key), "{key}");
        }
        let back = ExperimentPlan::from_json(&text).unwrap();
        assert_eq!(back, plan(Some(pulse2(1.0, 0.01)), 1.0));
    }

    #[test]
    fn sweep_first_point_is_single_pulse() {
        let cfg = Fig2bConfig {
            n_spins: 3,
            coupling_bound_hz: 300.0,
            freq_hz: Some(40.0),
            amp1_hz: 3.0,
            dur1_s: 0.1,
            steps1: 256,
            amp2_hz: 6.0,
            dur2_max_s: 0.03,
            dur2_increment_s: 0.01,
            steps_per_increment: 16,
            acquisition: small_acq(),
            ..Fig2bConfig::default()
        };
        let res = run_fig2b(&cfg).unwrap();
        assert_eq!(res.points.len(), 4);
        let single = run_single_pulse(&ExperimentPlan {
            sys: cfg.system().unwrap(),
            pulse1: Some(PulseSpec::new(HarmonicSet::single(40.0, 3.0).unwrap(), 0.1, 256)),
            pulse2: None,
            pulse2_phase_cycle: PhaseCycle::locking(),
            acquisition: small_acq(),
            mode: Mode::Split,
        })
        .unwrap();
        assert_eq!(res.points[0].signed_amplitude, single.referenced_integral(40.0, 12.0).unwrap().re);
        // checkpointed sweep agrees with a one-shot two-pulse run at the last duration
        let direct = run_two_pulse(&ExperimentPlan {
            pulse2: Some(PulseSpec::new(HarmonicSet::single(40.0, 6.0).unwrap(), 0.03, 48)),
            ..ExperimentPlan {
                sys: cfg.system().unwrap(),
                pulse1: Some(PulseSpec::new(HarmonicSet::single(40.0, 3.0).unwrap(), 0.1, 256)),
                pulse2: None,
                pulse2_phase_cycle: PhaseCycle::locking(),
                acquisition: small_acq(),
                mode: Mode::Split,
            }
        })
        .unwrap();
        let last = res.points[3].signed_amplitude;
        let one_shot = direct.referenced_integral(40.0, 12.0).unwrap().re;
        assert!((one_shot - last).abs() < 1e-12 * last.abs().max(1e-30), "{one_shot} {last}");
    }

    #[test]
    fn stack_round_trip() {
        let s = run_single_pulse(&plan(None, 3.0)).unwrap();
        let stack = SpectrumStack::new(vec![s.clone(), s], vec![-10.0, 10.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        stack.save(dir.path()).unwrap();
        assert_eq!(SpectrumStack::load(dir.path()).unwrap(), stack);
    }
}
