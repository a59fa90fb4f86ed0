//! Density-matrix propagation through sampled pulses, and FID acquisition.
//!
//! The deviation state is kept factored as ρ = W·diag(d)·W† with W stored in
//! sector order (see [`sectors`]). Unitary evolution only touches W, and the
//! thermal state starts as a set of unit columns, so nothing dense in 4^n is
//! ever formed on the hot path.
//!
//! Two propagation modes exist:
//!
//! * `split`: symmetric splitting of each step into free half-steps and an
//!   exact collective rf rotation, applied as a product of 2×2 site rotations.
//!   Adjacent free half-steps are merged.
//! * `exact`: exp(-i2π(H0 + bx·Fx + by·Fy)dt) per step. Since H0 conserves Fz,
//!   the step equals Dφ·exp(-i2π(H0 + |b|Fx)dt)·Dφ† with Dφ = exp(-iφFz), so only a
//!   real symmetric eigenproblem is needed per distinct |b|. Runs of steps with
//!   constant |b| and constant phase increment collapse into a matrix power.

mod sectors;
mod signal;

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use log::{debug, warn};
use ndarray::{s, Array2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

pub use sectors::{Sector, StaticEigensystem};
pub use signal::{line_broaden, spectrum, Fid, FidMeta, Spectrum, SpectrumMeta, PHASE_CONVENTION};

use crate::error::{Error, Result};
use crate::linalg::{
    dagger, eigh, eigh_real, expm_hermitian, reassemble_real, to_complex, CMatrix, C64, I, ONE,
    ZERO,
};
use crate::ops::{site_mask, DensityState, SpinSystem};
use crate::waveform::{FieldStep, Waveform};

/// Hermiticity tolerance for propagator inputs.
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Tolerance on Gram-matrix drift of the factored state after an evolution.
pub const STATE_DRIFT_TOL: f64 = 1e-9;

/// Runs at least this long are applied as a matrix power in exact mode.
const POWER_RUN_MIN: usize = 48;

const EXACT_CACHE_LIMIT: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    #[default]
    Split,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(Mode::Exact),
            "split" => Ok(Mode::Split),
            other => Err(Error::validation(format!(
                "unknown mode {other:?} (expected exact or split)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Exact => "exact",
            Mode::Split => "split",
        })
    }
}

/// exp(-i2π·H·dt) for a Hermitian `h` in Hz.
pub fn step_propagator_exact(h: &CMatrix, dt: f64) -> Result<CMatrix> {
    expm_hermitian(h, dt, HERMITIAN_TOL)
}

/// Single-spin rotation exp(-i2π·dt·(bx·Ix + by·Iy)), basis (up, down).
pub fn spin_rotation(bx: f64, by: f64, dt: f64) -> [[C64; 2]; 2] {
    let b = bx.hypot(by);
    if b == 0.0 {
        return [[ONE, ZERO], [ZERO, ONE]];
    }
    let (nx, ny) = (bx / b, by / b);
    let (s, c) = (PI * b * dt).sin_cos();
    [
        [C64::new(c, 0.0), C64::new(-s * ny, -s * nx)],
        [C64::new(s * ny, -s * nx), C64::new(c, 0.0)],
    ]
}

/// Collective rotation as the n-fold Kronecker power of [`spin_rotation`], computational basis.
pub fn collective_rotation(n: usize, bx: f64, by: f64, dt: f64) -> CMatrix {
    let r = spin_rotation(bx, by, dt);
    let dim = 1usize << n;
    CMatrix::from_shape_fn((dim, dim), |(i, j)| {
        (0..n).fold(ONE, |acc, site| {
            let m = site_mask(n, site);
            acc * r[(i & m != 0) as usize][(j & m != 0) as usize]
        })
    })
}

/// Dense second-order split step P(dt/2)·R·P(dt/2), computational basis.
pub fn step_propagator_split(eig: &StaticEigensystem, bx: f64, by: f64, dt: f64) -> CMatrix {
    let half = eig.free_propagator(dt / 2.0);
    let r = collective_rotation(eig.n(), bx, by, dt);
    half.dot(&r).dot(&half)
}

/// Deviation density matrix ρ = W·diag(d)·W†, rows of W in sector order.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredState {
    pub n: usize,
    pub w: Array2<C64>,
    pub d: Vec<f64>,
}

impl FactoredState {
    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn rank(&self) -> usize {
        self.d.len()
    }

    /// Tr ρ = Σ d_k ‖w_k‖².
    pub fn trace(&self) -> f64 {
        self.w
            .columns()
            .into_iter()
            .zip(&self.d)
            .map(|(col, &d)| d * col.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum()
    }

    /// W†W, invariant under unitary evolution.
    pub fn gram(&self) -> CMatrix {
        dagger(&self.w).dot(&self.w)
    }

    /// Weighted sum of two states with the same rank structure, `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &FactoredState, b: f64) -> Result<FactoredState> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        let mut w = Array2::zeros((self.dim(), self.rank() + other.rank()));
        w.slice_mut(s![.., ..self.rank()]).assign(&self.w);
        w.slice_mut(s![.., self.rank()..]).assign(&other.w);
        let d = self
            .d
            .iter()
            .map(|x| a * x)
            .chain(other.d.iter().map(|x| b * x))
            .collect();
        Ok(FactoredState { n: self.n, w, d })
    }
}

/// A single acquisition component: amplitude and frequency of one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub amplitude: C64,
    pub freq_hz: f64,
}

/// Propagation engine for one spin system. Immutable after construction and shareable across threads.
#[derive(Debug, Clone)]
pub struct Engine {
    sys: SpinSystem,
    eig: StaticEigensystem,
    /// Site rotation row pairs (up, down), sector-order positions.
    pairs: Vec<Vec<(usize, usize)>>,
    /// Total magnetization per sector-order row.
    fz: Vec<f64>,
    /// F+ between adjacent sectors in the H0 eigenbasis, `g[q]` maps sector q to q-1.
    g: Vec<Array2<f64>>,
    h0: Array2<f64>,
    fx: Array2<f64>,
    dt_warned: Arc<AtomicBool>,
}

impl Engine {
    pub fn new(sys: &SpinSystem) -> Result<Self> {
        let eig = StaticEigensystem::new(sys)?;
        let n = sys.n;
        let dim = eig.dim();
        let pos = eig.position();

        let pairs = (0..n)
            .map(|site| {
                let m = site_mask(n, site);
                let mut p: Vec<(usize, usize)> = (0..dim)
                    .filter(|s| s & m == 0)
                    .map(|s| (pos[s], pos[s | m]))
                    .collect();
                p.sort_unstable();
                p
            })
            .collect();

        let mut h0 = Array2::<f64>::zeros((dim, dim));
        let mut fx = Array2::<f64>::zeros((dim, dim));
        for s in 0..dim {
            h0[[pos[s], pos[s]]] = sys.diagonal_energy(s);
            for (partner, v) in sys.flip_flops(s) {
                h0[[pos[partner], pos[s]]] += v;
            }
            for site in 0..n {
                fx[[pos[s ^ site_mask(n, site)], pos[s]]] = 0.5;
            }
        }

        let secs = eig.sectors();
        let mut g = vec![Array2::zeros((0, 0))];
        for q in 1..secs.len() {
            let (lo, hi) = (&secs[q - 1], &secs[q]);
            let mut fp = Array2::<f64>::zeros((lo.len, hi.len));
            for a in 0..hi.len {
                let st = eig.order()[hi.start + a];
                for site in 0..n {
                    let m = site_mask(n, site);
                    if st & m != 0 {
                        fp[[pos[st ^ m] - lo.start, a]] = 1.0;
                    }
                }
            }
            g.push(lo.vectors.t().dot(&fp).dot(&hi.vectors));
        }

        Ok(Engine {
            sys: sys.clone(),
            fz: eig.fz_diagonal(),
            eig,
            pairs,
            g,
            h0,
            fx,
            dt_warned: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn system(&self) -> &SpinSystem {
        &self.sys
    }

    pub fn eigensystem(&self) -> &StaticEigensystem {
        &self.eig
    }

    pub fn n(&self) -> usize {
        self.sys.n
    }

    pub fn dim(&self) -> usize {
        self.eig.dim()
    }

    /// Thermal deviation state Fz/2^n: one unit column per basis state with nonzero magnetization.
    pub fn thermal(&self) -> FactoredState {
        let dim = self.dim();
        let scale = 1.0 / dim as f64;
        let rows: Vec<usize> = (0..dim).filter(|&p| self.fz[p] != 0.0).collect();
        let mut w = Array2::zeros((dim, rows.len()));
        for (k, &p) in rows.iter().enumerate() {
            w[[p, k]] = ONE;
        }
        FactoredState {
            n: self.n(),
            w,
            d: rows.iter().map(|&p| self.fz[p] * scale).collect(),
        }
    }

    /// Factors a dense state given in the computational basis.
    pub fn factor(&self, state: &DensityState) -> Result<FactoredState> {
        self.check_n(state.n)?;
        let herr = state.hermiticity_error();
        if herr > HERMITIAN_TOL {
            return Err(Error::validation(format!(
                "density matrix is not Hermitian (max |ρ - ρ†| = {herr:.3e})"
            )));
        }
        let (e, v) = eigh(&self.eig.to_sector_order(&state.matrix))?;
        let scale = e.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let keep: Vec<usize> = (0..e.len())
            .filter(|&k| e[k].abs() > 1e-14 * scale)
            .collect();
        let mut w = Array2::zeros((self.dim(), keep.len()));
        for (c, &k) in keep.iter().enumerate() {
            w.column_mut(c).assign(&v.column(k));
        }
        Ok(FactoredState {
            n: state.n,
            w,
            d: keep.iter().map(|&k| e[k]).collect(),
        })
    }

    /// Dense state in the computational basis.
    pub fn densify(&self, state: &FactoredState) -> Result<DensityState> {
        let mut wd = state.w.clone();
        for (mut col, &d) in wd.columns_mut().into_iter().zip(&state.d) {
            col.mapv_inplace(|z| z * d);
        }
        let rho = wd.dot(&dagger(&state.w));
        DensityState::new(state.n, self.eig.from_sector_order(&rho))
    }

    /// Tr(ρ·H0).
    pub fn energy(&self, state: &FactoredState) -> f64 {
        let hw = to_complex(&self.h0).dot(&state.w);
        state
            .w
            .columns()
            .into_iter()
            .zip(hw.columns())
            .zip(&state.d)
            .map(|((w, h), &d)| d * w.iter().zip(h.iter()).map(|(a, b)| (a.conj() * b).re).sum::<f64>())
            .sum()
    }

    fn check_n(&self, n: usize) -> Result<()> {
        if n != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: 1 << n,
            });
        }
        Ok(())
    }

    /// Largest step that passes the dt adequacy rule for fields up to `max_field_hz`.
    pub fn dt_limit(&self, max_field_hz: f64) -> f64 {
        let scale = self.eig.spectral_radius() + max_field_hz * self.n() as f64 / 2.0;
        if scale == 0.0 {
            f64::INFINITY
        } else {
            1.0 / (20.0 * scale)
        }
    }

    /// Propagates `state` through `wf` in place.
    pub fn evolve(&self, state: &mut FactoredState, wf: &Waveform, mode: Mode) -> Result<()> {
        self.check_n(state.n)?;
        wf.validate()?;
        let dt = wf.dt();
        let limit = self.dt_limit(wf.max_field());
        if dt > limit && !self.dt_warned.swap(true, Ordering::Relaxed) {
            warn!(
                "step {:.3e} s exceeds the adequacy bound {:.3e} s for this system",
                dt, limit
            );
        }
        let gram0 = state.gram();
        let tr0 = state.trace();
        match mode {
            Mode::Split => self.evolve_split(&mut state.w, &wf.steps, dt),
            Mode::Exact => self.evolve_exact(&mut state.w, &wf.steps, dt)?,
        }
        let drift = crate::linalg::max_abs((state.gram() - gram0).view());
        let tr_drift = (state.trace() - tr0).abs();
        debug!("evolve {mode}: {} steps, gram drift {drift:.2e}", wf.n_steps);
        if drift > STATE_DRIFT_TOL || tr_drift > STATE_DRIFT_TOL {
            return Err(Error::Numerical(format!(
                "state drift after {} steps: gram {drift:.3e}, trace {tr_drift:.3e}",
                wf.n_steps
            )));
        }
        Ok(())
    }

    /// Free evolution under H0 for `t` seconds.
    pub fn free_evolve(&self, state: &mut FactoredState, t: f64) -> Result<()> {
        self.check_n(state.n)?;
        let blocks = self.eig.free_blocks(t);
        let mut buf = Array2::zeros(state.w.raw_dim());
        self.apply_blocks(&blocks, &mut state.w, &mut buf);
        Ok(())
    }

    fn apply_blocks(&self, blocks: &[CMatrix], w: &mut Array2<C64>, buf: &mut Array2<C64>) {
        for (sec, b) in self.eig.sectors().iter().zip(blocks) {
            let r = sec.range();
            let src = w.slice(s![r.clone(), ..]);
            let mut dst = buf.slice_mut(s![r, ..]);
            ndarray::linalg::general_mat_mul(ONE, b, &src, ZERO, &mut dst);
        }
        std::mem::swap(w, buf);
    }

    fn apply_rotation(&self, r: &[[C64; 2]; 2], w: &mut Array2<C64>) {
        let cols = w.ncols();
        let data = w.as_slice_mut().expect("state matrix is contiguous");
        let c = r[0][0].re;
        let (r01, r10) = (r[0][1], r[1][0]);
        for pairs in &self.pairs {
            for &(a, b) in pairs {
                let (lo, hi) = data.split_at_mut(b * cols);
                let ra = &mut lo[a * cols..(a + 1) * cols];
                let rb = &mut hi[..cols];
                for (x, y) in ra.iter_mut().zip(rb.iter_mut()) {
                    let (u, v) = (*x, *y);
                    *x = u * c + r01 * v;
                    *y = r10 * u + v * c;
                }
            }
        }
    }

    fn evolve_split(&self, w: &mut Array2<C64>, steps: &[FieldStep], dt: f64) {
        let half = self.eig.free_blocks(dt / 2.0);
        let full = self.eig.free_blocks(dt);
        let mut buf = Array2::zeros(w.raw_dim());
        self.apply_blocks(&half, w, &mut buf);
        for (k, st) in steps.iter().enumerate() {
            if st.bx_hz != 0.0 || st.by_hz != 0.0 {
                self.apply_rotation(&spin_rotation(st.bx_hz, st.by_hz, dt), w);
            }
            let p = if k + 1 == steps.len() { &half } else { &full };
            self.apply_blocks(p, w, &mut buf);
        }
    }

    /// exp(-i2π(H0 + a·Fx)dt) in sector order.
    fn x_propagator(&self, a: f64, dt: f64) -> Result<CMatrix> {
        let h = &self.h0 + &(&self.fx * a);
        let (e, v) = eigh_real(&h)?;
        Ok(reassemble_real(&e, &v, dt))
    }

    /// Multiplies row p of `w` by exp(-iφ·m_p).
    fn apply_phase(&self, phi: f64, mut w: ArrayViewMut2<'_, C64>) {
        for (mut row, &m) in w.rows_mut().into_iter().zip(&self.fz) {
            let ph = C64::from_polar(1.0, -phi * m);
            row.mapv_inplace(|z| z * ph);
        }
    }

    fn evolve_exact(&self, w: &mut Array2<C64>, steps: &[FieldStep], dt: f64) -> Result<()> {
        let mut cache: HashMap<u64, CMatrix> = HashMap::new();
        let mut k = 0;
        while k < steps.len() {
            let a = steps[k].magnitude();
            if a == 0.0 {
                let len = steps[k..].iter().take_while(|s| s.magnitude() == 0.0).count();
                let blocks = self.eig.free_blocks(len as f64 * dt);
                let mut buf = Array2::zeros(w.raw_dim());
                self.apply_blocks(&blocks, w, &mut buf);
                k += len;
                continue;
            }
            let phase = |s: &FieldStep| s.by_hz.atan2(s.bx_hz);
            let len = exact_run_length(&steps[k..]);
            if cache.len() >= EXACT_CACHE_LIMIT {
                cache.clear();
            }
            let u = match cache.entry(a.to_bits()) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(e) => e.insert(self.x_propagator(a, dt)?),
            };
            let phi0 = phase(&steps[k]);
            if len < POWER_RUN_MIN {
                for st in &steps[k..k + len] {
                    let phi = phase(st);
                    self.apply_phase(-phi, w.view_mut());
                    *w = u.dot(&*w);
                    self.apply_phase(phi, w.view_mut());
                }
            } else {
                let delta = phase(&steps[k + 1]) - phi0;
                // D_last · (U·D(-Δ))^(len-1) · U · D_first†
                let mut m = u.clone();
                for (mut col, &mz) in m.columns_mut().into_iter().zip(&self.fz) {
                    let ph = C64::from_polar(1.0, delta * mz);
                    col.mapv_inplace(|z| z * ph);
                }
                let p = matrix_power(&m, len - 1);
                self.apply_phase(-phi0, w.view_mut());
                *w = p.dot(&u.dot(&*w));
                self.apply_phase(phi0 + (len - 1) as f64 * delta, w.view_mut());
            }
            k += len;
        }
        Ok(())
    }

    /// Transition amplitudes and frequencies of i·Tr(ρ(t)·F+) under free evolution.
    pub fn transitions(&self, state: &FactoredState) -> Result<Vec<Transition>> {
        self.check_n(state.n)?;
        let secs = self.eig.sectors();
        // W̃_q = V_qᵀ·W_q and W̃_q·diag(d)
        let wt: Vec<CMatrix> = secs
            .iter()
            .map(|sec| to_complex(&sec.vectors.t().to_owned()).dot(&state.w.slice(s![sec.range(), ..])))
            .collect();
        let mut out = Vec::new();
        for q in 1..secs.len() {
            let mut wd = wt[q].clone();
            for (mut col, &d) in wd.columns_mut().into_iter().zip(&state.d) {
                col.mapv_inplace(|z| z * d);
            }
            let x = wd.dot(&dagger(&wt[q - 1]));
            let g = &self.g[q];
            for a in 0..secs[q].len {
                for b in 0..secs[q - 1].len {
                    let amp = I * x[[a, b]] * g[[b, a]];
                    if amp != ZERO {
                        out.push(Transition {
                            amplitude: amp,
                            freq_hz: secs[q - 1].energies[b] - secs[q].energies[a],
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    /// Records i·Tr(ρ(t)·F+) at `t = m·dwell` for `m < floor(t_acq / dwell)`.
    pub fn acquire(&self, state: &FactoredState, t_acq: f64, dwell: f64) -> Result<Fid> {
        if !(dwell > 0.0 && dwell.is_finite()) || !(t_acq > 0.0 && t_acq.is_finite()) {
            return Err(Error::validation("acquisition time and dwell must be positive"));
        }
        let ratio = t_acq / dwell;
        let count = (ratio + 1e-9).floor();
        let truncated = (ratio - count).abs() > 1e-9;
        if truncated {
            warn!("acquisition time {t_acq} s is not a multiple of the dwell {dwell} s; rounded down");
        }
        let terms = self.transitions(state)?;
        Ok(Fid {
            dwell_s: dwell,
            samples: sample_transitions(&terms, count as usize, dwell),
            lb_hz: 0.0,
            truncated,
        })
    }
}

/// Length of the leading run of steps with equal |b| and a constant phase increment.
fn exact_run_length(steps: &[FieldStep]) -> usize {
    let a = steps[0].magnitude();
    let same = |s: &FieldStep| (s.magnitude() - a).abs() <= 1e-13 * a;
    if steps.len() < 2 || !same(&steps[1]) {
        return 1;
    }
    let phase = |s: &FieldStep| s.by_hz.atan2(s.bx_hz);
    let wrap = |x: f64| (x + PI).rem_euclid(2.0 * PI) - PI;
    let delta = wrap(phase(&steps[1]) - phase(&steps[0]));
    let mut len = 2;
    while len < steps.len()
        && same(&steps[len])
        && wrap(phase(&steps[len]) - phase(&steps[len - 1]) - delta).abs() < 1e-12
    {
        len += 1;
    }
    len
}

fn matrix_power(m: &CMatrix, mut e: usize) -> CMatrix {
    let mut result = crate::linalg::identity(m.nrows());
    let mut base = m.clone();
    while e > 0 {
        if e & 1 == 1 {
            result = result.dot(&base);
        }
        e >>= 1;
        if e > 0 {
            base = base.dot(&base);
        }
    }
    result
}

/// Sums `Σ c·exp(i2πνt)` at `t = m·dwell` with phasor recurrences, re-seeded periodically.
pub fn sample_transitions(terms: &[Transition], count: usize, dwell: f64) -> Vec<C64> {
    const RESYNC: usize = 256;
    let steps: Vec<C64> = terms
        .iter()
        .map(|t| C64::from_polar(1.0, 2.0 * PI * t.freq_hz * dwell))
        .collect();
    let mut cur: Vec<C64> = terms.iter().map(|t| t.amplitude).collect();
    let mut out = Vec::with_capacity(count);
    for m in 0..count {
        if m % RESYNC == 0 && m > 0 {
            let t = m as f64 * dwell;
            for (c, term) in cur.iter_mut().zip(terms) {
                *c = term.amplitude * C64::from_polar(1.0, 2.0 * PI * term.freq_hz * t);
            }
        }
        let mut acc = ZERO;
        for (c, p) in cur.iter_mut().zip(&steps) {
            acc += *c;
            *c *= p;
        }
        out.push(acc);
    }
    out
}

/// Dense-state convenience wrapper around [`Engine::evolve`].
pub fn evolve(state: &DensityState, sys: &SpinSystem, wf: &Waveform, mode: Mode) -> Result<DensityState> {
    let eng = Engine::new(sys)?;
    let mut f = eng.factor(state)?;
    eng.evolve(&mut f, wf, mode)?;
    eng.densify(&f)
}

/// Dense-state convenience wrapper around [`Engine::acquire`].
pub fn acquire(state: &DensityState, sys: &SpinSystem, t_acq: f64, dwell: f64) -> Result<Fid> {
    let eng = Engine::new(sys)?;
    eng.acquire(&eng.factor(state)?, t_acq, dwell)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, unitarity_error};
    use crate::ops::{build_hamiltonian, build_operators, thermal_state};

    #[test]
    fn zero_hamiltonian_gives_identity() {
        let u = step_propagator_exact(&CMatrix::zeros((4, 4)), 1e-3).unwrap();
        assert!(max_abs((u - crate::linalg::identity(4)).view()) < 1e-15);
    }

    #[test]
    fn exact_step_nutates_by_ninety_degrees() {
        let ops = build_operators(1).unwrap();
        let nu = 2.1;
        let u = step_propagator_exact(&(ops.ix(0) * C64::new(nu, 0.0)), 1.0 / (4.0 * nu)).unwrap();
        let rotated = u.dot(&ops.iz(0)).dot(&dagger(&u));
        assert!(max_abs((rotated + ops.iy(0)).view()) < 1e-14);
    }

    #[test]
    fn non_hermitian_input_rejected() {
        let mut h = CMatrix::zeros((2, 2));
        h[[0, 1]] = ONE;
        assert!(matches!(step_propagator_exact(&h, 1e-3), Err(Error::Validation(_))));
    }

    #[test]
    fn collective_rotation_matches_dense_exponential() {
        let ops = build_operators(3).unwrap();
        let (bx, by, dt) = (130.0, -70.0, 3e-4);
        let h = ops.fx() * C64::new(bx, 0.0) + ops.fy() * C64::new(by, 0.0);
        let reference = step_propagator_exact(&h, dt).unwrap();
        let e = max_abs((collective_rotation(3, bx, by, dt) - reference).view()); assert!(e < 1e-13, "{e}");
    }

    #[test]
    fn split_collapses_in_limits() {
        let sys = SpinSystem::random(4, 792.0, 5).unwrap();
        let eig = StaticEigensystem::new(&sys).unwrap();
        let dt = 2e-5;
        let free = step_propagator_split(&eig, 0.0, 0.0, dt);
        assert!(max_abs((free - eig.free_propagator(dt)).view()) < 1e-13);

        let zero = StaticEigensystem::new(&SpinSystem::uncoupled(4).unwrap()).unwrap();
        let rot = step_propagator_split(&zero, 40.0, 10.0, dt);
        assert!(max_abs((rot - collective_rotation(4, 40.0, 10.0, dt)).view()) < 1e-13);
    }

    #[test]
    fn random_eight_spin_step_is_unitary() {
        let sys = SpinSystem::random(8, 792.0, 2).unwrap();
        let ops = build_operators(8).unwrap();
        let h = build_hamiltonian(&sys).unwrap() + ops.fx() * C64::new(3.0, 0.0);
        let u = step_propagator_exact(&h, 2e-5).unwrap();
        assert!(unitarity_error(&u) < 1e-10);
        assert!(unitarity_error(&dagger(&u)) < 1e-10);
    }

    fn compare_modes(sys: &SpinSystem, wf: &Waveform) -> (FactoredState, FactoredState, Engine) {
        let eng = Engine::new(sys).unwrap();
        let mut a = eng.thermal();
        let mut b = eng.thermal();
        eng.evolve(&mut a, wf, Mode::Exact).unwrap();
        eng.evolve(&mut b, wf, Mode::Split).unwrap();
        (a, b, eng)
    }

    #[test]
    fn exact_mode_matches_dense_step_product() {
        let sys = SpinSystem::random(3, 300.0, 9).unwrap();
        let ops = build_operators(3).unwrap();
        let h0 = build_hamiltonian(&sys).unwrap();
        let hs = crate::waveform::HarmonicSet::new(vec![
            crate::waveform::Harmonic { freq_hz: -40.0, amp_hz: 30.0, phase_rad: 0.2 },
            crate::waveform::Harmonic { freq_hz: 55.0, amp_hz: 20.0, phase_rad: 0.0 },
        ])
        .unwrap();
        let wf = crate::waveform::synthesize(&hs, 0.02, 200).unwrap();
        let mut rho = thermal_state(&sys).unwrap().matrix;
        for st in &wf.steps {
            let h = &h0 + &(ops.fx() * C64::new(st.bx_hz, 0.0)) + ops.fy() * C64::new(st.by_hz, 0.0);
            let u = step_propagator_exact(&h, wf.dt()).unwrap();
            rho = u.dot(&rho).dot(&dagger(&u));
        }
        let eng = Engine::new(&sys).unwrap();
        let mut f = eng.thermal();
        eng.evolve(&mut f, &wf, Mode::Exact).unwrap();
        let got = eng.densify(&f).unwrap().matrix;
        assert!(max_abs((got - rho).view()) < 1e-12);
    }

    #[test]
    fn power_runs_match_stepwise_exact() {
        // single harmonic: constant |b| and constant phase increment
        let sys = SpinSystem::random(4, 400.0, 4).unwrap();
        let hs = crate::waveform::HarmonicSet::single(35.0, 6.0).unwrap();
        let wf = crate::waveform::synthesize(&hs, 0.05, 500).unwrap();
        assert_eq!(exact_run_length(&wf.steps), 500);
        let eng = Engine::new(&sys).unwrap();
        let mut fast = eng.thermal();
        eng.evolve(&mut fast, &wf, Mode::Exact).unwrap();
        let mut slow = eng.thermal();
        for st in &wf.steps {
            let one = Waveform::new(wf.dt(), vec![*st], 0.0).unwrap();
            eng.evolve(&mut slow, &one, Mode::Exact).unwrap();
        }
        assert!(max_abs((fast.w - slow.w).view()) < 1e-10);
    }

    #[test]
    fn split_converges_to_exact() {
        let sys = SpinSystem::random(4, 792.0, 8).unwrap();
        let hs = crate::waveform::HarmonicSet::single(120.0, 15.0).unwrap();
        let mut errs = Vec::new();
        for steps in [200, 400, 800] {
            let wf = crate::waveform::synthesize(&hs, 0.02, steps).unwrap();
            let (a, b, eng) = compare_modes(&sys, &wf);
            let da = eng.densify(&a).unwrap().matrix;
            let db = eng.densify(&b).unwrap().matrix;
            errs.push(max_abs((da - db).view()));
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.0..5.0).contains(&ratio), "ratio {ratio}, errors {errs:?}");
        }
    }

    #[test]
    fn thermal_state_is_stationary() {
        let sys = SpinSystem::random(5, 792.0, 1).unwrap();
        let eng = Engine::new(&sys).unwrap();
        let mut f = eng.thermal();
        let before = eng.densify(&f).unwrap();
        eng.evolve(&mut f, &Waveform::zero(0.1, 100).unwrap(), Mode::Split).unwrap();
        let after = eng.densify(&f).unwrap();
        let e = max_abs((after.matrix - &before.matrix).view()); assert!(e < 1e-12, "{e}");
        assert!(max_abs((before.matrix - thermal_state(&sys).unwrap().matrix).view()) < 1e-16);
    }

    #[test]
    fn on_resonance_nutation_gives_full_transverse_signal() {
        let sys = SpinSystem::uncoupled(1).unwrap();
        let nu = 2.1;
        let wf = Waveform::constant(1.0 / (4.0 * nu), 64, nu, 0.0).unwrap();
        for mode in [Mode::Exact, Mode::Split] {
            let eng = Engine::new(&sys).unwrap();
            let mut f = eng.thermal();
            eng.evolve(&mut f, &wf, mode).unwrap();
            let fid = eng.acquire(&f, 0.01, 1e-3).unwrap();
            for z in &fid.samples {
                assert!((z - C64::new(0.25, 0.0)).norm() < 1e-14, "{mode}: {z}");
            }
        }
    }

    #[test]
    fn offset_sets_oscillation_frequency() {
        let sys = SpinSystem::uncoupled(1).unwrap().with_offsets(vec![100.0]).unwrap();
        let eng = Engine::new(&sys).unwrap();
        let mut f = eng.thermal();
        eng.evolve(&mut f, &Waveform::constant(1e-6, 1, 250_000.0, 0.0).unwrap(), Mode::Exact)
            .unwrap();
        let fid = eng.acquire(&f, 0.256, 1e-3).unwrap();
        let spec = spectrum(&fid, 256).unwrap();
        let peak = (0..spec.len())
            .max_by(|&a, &b| spec.values[a].norm().total_cmp(&spec.values[b].norm()))
            .unwrap();
        assert!((spec.freqs_hz[peak] - 100.0).abs() <= spec.df_hz);
    }

    #[test]
    fn two_spin_fid_matches_dense_propagation() {
        let sys = SpinSystem::new(vec![vec![0.0, 100.0], vec![100.0, 0.0]]).unwrap();
        let ops = build_operators(2).unwrap();
        let h0 = build_hamiltonian(&sys).unwrap();
        let pulse = step_propagator_exact(&(ops.fx() * C64::new(50_000.0, 0.0)), 5e-6).unwrap();
        let rho = pulse.dot(&thermal_state(&sys).unwrap().matrix).dot(&dagger(&pulse));
        let dwell = 1e-4;
        let u = step_propagator_exact(&h0, dwell).unwrap();
        let fp = ops.f_plus();
        let mut r = rho.clone();
        let mut expected = Vec::new();
        for _ in 0..300 {
            expected.push(I * crate::linalg::trace(&r.dot(&fp)));
            r = u.dot(&r).dot(&dagger(&u));
        }
        let fid = acquire(&DensityState::new(2, rho).unwrap(), &sys, 0.03, dwell).unwrap();
        assert_eq!(fid.samples.len(), 300);
        for (a, b) in fid.samples.iter().zip(&expected) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn energy_conserved_under_free_evolution() {
        let sys = SpinSystem::random(5, 792.0, 6).unwrap();
        let eng = Engine::new(&sys).unwrap();
        // thermal state plus a little dipolar order
        let mut rho = thermal_state(&sys).unwrap();
        rho.matrix = rho.matrix + build_hamiltonian(&sys).unwrap() * C64::new(1e-5, 0.0);
        let mut f = eng.factor(&rho).unwrap();
        eng.evolve(&mut f, &Waveform::constant(2e-3, 20, 0.0, 120.0).unwrap(), Mode::Split)
            .unwrap();
        let e0 = eng.energy(&f);
        assert!(e0.abs() > 1e-3);
        eng.free_evolve(&mut f, 1.0).unwrap();
        assert!((eng.energy(&f) - e0).abs() <= 1e-8 * e0.abs());
    }

    #[test]
    fn truncated_acquisition_is_flagged() {
        let sys = SpinSystem::uncoupled(1).unwrap();
        let eng = Engine::new(&sys).unwrap();
        let fid = eng.acquire(&eng.thermal(), 0.0105, 1e-3).unwrap();
        assert!(fid.truncated);
        assert_eq!(fid.samples.len(), 10);
        assert!(!eng.acquire(&eng.thermal(), 0.01, 1e-3).unwrap().truncated);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = Engine::new(&SpinSystem::uncoupled(2).unwrap()).unwrap();
        let b = Engine::new(&SpinSystem::uncoupled(3).unwrap()).unwrap();
        let mut st = b.thermal();
        let wf = Waveform::zero(1e-3, 1).unwrap();
        assert!(matches!(a.evolve(&mut st, &wf, Mode::Split), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("split".parse::<Mode>().unwrap(), Mode::Split);
        assert_eq!("EXACT".parse::<Mode>().unwrap(), Mode::Exact);
        assert!("fast".parse::<Mode>().is_err());
        assert_eq!(serde_json::to_string(&Mode::Exact).unwrap(), "\"exact\"");
    }
}
