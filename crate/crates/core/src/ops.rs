//! Spin-1/2 operators, dipolar spin systems and their static Hamiltonian.
//!
//! Basis convention: spin `i` of an `n`-spin cluster is bit `n - 1 - i` of the
//! computational index, so Kronecker products run in spin order. A set bit
//! means spin down (Iz = -1/2).

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64, ZERO};

pub const MAX_SPINS: usize = 12;

/// Upper bound on any coupling or offset magnitude, Hz.
pub const MAX_COUPLING_HZ: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

pub(crate) fn check_spin_count(n: usize) -> Result<()> {
    if (1..=MAX_SPINS).contains(&n) {
        Ok(())
    } else {
        Err(Error::SpinCount(n))
    }
}

#[inline]
pub(crate) fn site_mask(n: usize, site: usize) -> usize {
    1 << (n - 1 - site)
}

/// Iz eigenvalue of `site` in basis state `state`.
#[inline]
pub(crate) fn mz(n: usize, state: usize, site: usize) -> f64 {
    if state & site_mask(n, site) == 0 {
        0.5
    } else {
        -0.5
    }
}

/// A single-spin operator lifted into the 2^n space.
///
/// Every spin-1/2 Cartesian operator has exactly one nonzero per row, so the
/// lift is stored implicitly and densified on request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SiteOp {
    pub n: usize,
    pub site: usize,
    pub axis: Axis,
}

impl SiteOp {
    /// The single nonzero of row `row`: (column, value).
    #[inline]
    pub fn row_entry(&self, row: usize) -> (usize, C64) {
        let mask = site_mask(self.n, self.site);
        let down = row & mask != 0;
        match self.axis {
            Axis::Z => (row, C64::new(if down { -0.5 } else { 0.5 }, 0.0)),
            Axis::X => (row ^ mask, C64::new(0.5, 0.0)),
            // σy/2 = [[0, -i/2], [i/2, 0]]: row "up" couples to column "down" with -i/2
            Axis::Y => (row ^ mask, C64::new(0.0, if down { 0.5 } else { -0.5 })),
        }
    }

    pub fn to_dense(&self) -> CMatrix {
        let dim = 1 << self.n;
        let mut m = CMatrix::zeros((dim, dim));
        for r in 0..dim {
            let (c, v) = self.row_entry(r);
            m[[r, c]] = v;
        }
        m
    }
}

/// Operator set of an `n`-spin cluster: per-spin Ix, Iy, Iz and the collective sums.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    n: usize,
}

/// Builds the operator set for `n` spins (1 ≤ n ≤ 12).
pub fn build_operators(n: usize) -> Result<SpinOperators> {
    check_spin_count(n)?;
    Ok(SpinOperators { n })
}

impl SpinOperators {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn site(&self, axis: Axis, site: usize) -> SiteOp {
        assert!(site < self.n, "site {site} out of range for {} spins", self.n);
        SiteOp {
            n: self.n,
            site,
            axis,
        }
    }

    pub fn ix(&self, site: usize) -> CMatrix {
        self.site(Axis::X, site).to_dense()
    }

    pub fn iy(&self, site: usize) -> CMatrix {
        self.site(Axis::Y, site).to_dense()
    }

    pub fn iz(&self, site: usize) -> CMatrix {
        self.site(Axis::Z, site).to_dense()
    }

    /// Collective operator Σ_i Iα_i.
    pub fn collective(&self, axis: Axis) -> CMatrix {
        let dim = self.dim();
        let mut m = CMatrix::zeros((dim, dim));
        for site in 0..self.n {
            let op = self.site(axis, site);
            for r in 0..dim {
                let (c, v) = op.row_entry(r);
                m[[r, c]] += v;
            }
        }
        m
    }

    pub fn fx(&self) -> CMatrix {
        self.collective(Axis::X)
    }

    pub fn fy(&self) -> CMatrix {
        self.collective(Axis::Y)
    }

    pub fn fz(&self) -> CMatrix {
        self.collective(Axis::Z)
    }

    /// Diagonal of Fz, i.e. the total magnetization of each basis state.
    pub fn fz_diagonal(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|s| (0..self.n).map(|i| mz(self.n, s, i)).sum())
            .collect()
    }

    /// F+ = Fx + i·Fy.
    pub fn f_plus(&self) -> CMatrix {
        let mut m = self.fx();
        m.scaled_add(C64::new(0.0, 1.0), &self.fy());
        m
    }
}

/// A cluster of dipolar-coupled spin-1/2 nuclei.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinSystem {
    pub n: usize,
    /// Full symmetric table of dipolar constants d_ij, Hz.
    pub couplings: Vec<Vec<f64>>,
    /// Resonance offsets from the carrier, Hz.
    #[serde(default)]
    pub offsets: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SpinSystem {
    /// Validated system with zero offsets.
    pub fn new(couplings: Vec<Vec<f64>>) -> Result<Self> {
        let n = couplings.len();
        let sys = SpinSystem {
            n,
            couplings,
            offsets: vec![0.0; n],
            seed: None,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn with_offsets(mut self, offsets: Vec<f64>) -> Result<Self> {
        self.offsets = offsets;
        self.validate()?;
        Ok(self)
    }

    /// Couplings drawn uniformly from [-bound, bound] Hz.
    pub fn random(n: usize, bound_hz: f64, seed: u64) -> Result<Self> {
        check_spin_count(n)?;
        let mut sys = SpinSystem::new(random_couplings(n, bound_hz, seed)?)?;
        sys.seed = Some(seed);
        Ok(sys)
    }

    /// Uncoupled spins.
    pub fn uncoupled(n: usize) -> Result<Self> {
        check_spin_count(n)?;
        SpinSystem::new(vec![vec![0.0; n]; n])
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn validate(&self) -> Result<()> {
        check_spin_count(self.n)?;
        if self.couplings.len() != self.n || self.couplings.iter().any(|r| r.len() != self.n) {
            return Err(Error::validation(format!(
                "coupling table must be {n}x{n}",
                n = self.n
            )));
        }
        if self.offsets.len() != self.n {
            return Err(Error::validation(format!(
                "expected {} offsets, found {}",
                self.n,
                self.offsets.len()
            )));
        }
        for i in 0..self.n {
            if self.couplings[i][i] != 0.0 {
                return Err(Error::validation(format!("coupling d[{i}][{i}] must be zero")));
            }
            for j in 0..self.n {
                let d = self.couplings[i][j];
                if !d.is_finite() || d.abs() > MAX_COUPLING_HZ {
                    return Err(Error::validation(format!(
                        "coupling d[{i}][{j}] = {d} is not a finite value within ±{MAX_COUPLING_HZ} Hz"
                    )));
                }
                if d != self.couplings[j][i] {
                    return Err(Error::validation(format!(
                        "coupling table is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if let Some(o) = self
            .offsets
            .iter()
            .find(|o| !o.is_finite() || o.abs() > MAX_COUPLING_HZ)
        {
            return Err(Error::validation(format!("offset {o} Hz out of bounds")));
        }
        Ok(())
    }

    /// Diagonal element of H0 for a basis state.
    pub(crate) fn diagonal_energy(&self, state: usize) -> f64 {
        let n = self.n;
        let mut e = 0.0;
        for i in 0..n {
            let mi = mz(n, state, i);
            e += self.offsets[i] * mi;
            for j in (i + 1)..n {
                e += 2.0 * self.couplings[i][j] * mi * mz(n, state, j);
            }
        }
        e
    }

    /// Flip-flop partners of `state`: (partner, matrix element) for every antiparallel pair.
    pub(crate) fn flip_flops(&self, state: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| {
            ((i + 1)..n).filter_map(move |j| {
                let mask = site_mask(n, i) | site_mask(n, j);
                let pair = state & mask;
                let d = self.couplings[i][j];
                // -d (IxIx + IyIy) = -d/2 (I+I- + I-I+)
                (pair != 0 && pair != mask && d != 0.0).then_some((state ^ mask, -0.5 * d))
            })
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut sys: SpinSystem = serde_json::from_str(text)?;
        if sys.offsets.is_empty() {
            sys.offsets = vec![0.0; sys.n];
        }
        sys.validate()?;
        Ok(sys)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Symmetric table with i.i.d. uniform entries in [-bound, bound] Hz and zero diagonal.
pub fn random_couplings(n: usize, bound_hz: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    check_spin_count(n)?;
    if !(bound_hz > 0.0 && bound_hz.is_finite()) {
        return Err(Error::validation(format!(
            "coupling bound must be positive, got {bound_hz}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = rng.random_range(-bound_hz..=bound_hz);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    Ok(d)
}

/// Dense secular dipolar Hamiltonian in Hz:
/// H0 = Σ_{i<j} d_ij (2 Izi Izj − Ixi Ixj − Iyi Iyj) + Σ_i offset_i Izi.
pub fn build_hamiltonian(sys: &SpinSystem) -> Result<CMatrix> {
    sys.validate()?;
    let dim = sys.dim();
    let mut h = CMatrix::zeros((dim, dim));
    for s in 0..dim {
        h[[s, s]] = C64::new(sys.diagonal_energy(s), 0.0);
        for (p, v) in sys.flip_flops(s) {
            h[[p, s]] += C64::new(v, 0.0);
        }
    }
    Ok(h)
}

/// Deviation density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    pub n: usize,
    pub matrix: CMatrix,
}

impl DensityState {
    pub fn new(n: usize, matrix: CMatrix) -> Result<Self> {
        check_spin_count(n)?;
        let dim = 1 << n;
        if matrix.dim() != (dim, dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: matrix.nrows(),
            });
        }
        Ok(DensityState { n, matrix })
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn trace(&self) -> C64 {
        crate::linalg::trace(&self.matrix)
    }

    pub fn hermiticity_error(&self) -> f64 {
        crate::linalg::hermiticity_error(&self.matrix)
    }

    /// Tr(ρ·A).
    pub fn expectation(&self, op: &CMatrix) -> C64 {
        let dim = self.dim();
        let mut acc = ZERO;
        for i in 0..dim {
            for j in 0..dim {
                acc += self.matrix[[i, j]] * op[[j, i]];
            }
        }
        acc
    }
}

/// High-temperature deviation state Fz / 2^n.
pub fn thermal_state(sys: &SpinSystem) -> Result<DensityState> {
    sys.validate()?;
    let ops = build_operators(sys.n)?;
    let scale = 1.0 / sys.dim() as f64;
    let diag: Vec<C64> = ops
        .fz_diagonal()
        .into_iter()
        .map(|m| C64::new(m * scale, 0.0))
        .collect();
    DensityState::new(sys.n, Array2::from_diag(&ndarray::Array1::from(diag)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{commutator, eigh, max_abs, I};

    fn sorted_eigs(m: &CMatrix) -> Vec<f64> {
        let (mut e, _) = eigh(m).unwrap();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        e
    }

    #[test]
    fn single_spin_iz_eigenvalues() {
        let ops = build_operators(1).unwrap();
        assert_eq!(sorted_eigs(&ops.iz(0)), vec![-0.5, 0.5]);
    }

    #[test]
    fn two_spin_fz_eigenvalues() {
        let ops = build_operators(2).unwrap();
        let e = sorted_eigs(&ops.fz());
        for (a, b) in e.iter().zip([-1.0, 0.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn collective_commutator() {
        let ops = build_operators(3).unwrap();
        let c = commutator(&ops.fx(), &ops.fy());
        let diff = c - ops.fz().mapv(|z| z * I);
        assert!(max_abs(diff.view()) < 1e-12);
    }

    #[test]
    fn distinct_sites_commute() {
        let ops = build_operators(3).unwrap();
        let axes = [Axis::X, Axis::Y, Axis::Z];
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                for a in axes {
                    for b in axes {
                        let c = commutator(&ops.site(a, i).to_dense(), &ops.site(b, j).to_dense());
                        assert!(max_abs(c.view()) < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn lift_matches_kronecker_product() {
        use crate::linalg::kron;
        let ops1 = build_operators(1).unwrap();
        let id = crate::linalg::identity(2);
        let ops = build_operators(3).unwrap();
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let s = ops1.site(axis, 0).to_dense();
            let expected = kron(&kron(&id, &s), &id);
            let got = ops.site(axis, 1).to_dense();
            assert!(max_abs((expected - got).view()) < 1e-15);
        }
    }

    #[test]
    fn spin_count_bounds() {
        assert!(matches!(build_operators(0), Err(Error::SpinCount(0))));
        assert!(matches!(build_operators(13), Err(Error::SpinCount(13))));
    }

    #[test]
    fn zero_couplings_give_zero_hamiltonian() {
        let sys = SpinSystem::uncoupled(2).unwrap();
        let h = build_hamiltonian(&sys).unwrap();
        assert!(max_abs(h.view()) == 0.0);
    }

    #[test]
    fn hamiltonian_matches_operator_sum() {
        let sys = SpinSystem::random(4, 792.0, 5)
            .unwrap()
            .with_offsets(vec![10.0, -20.0, 3.5, 0.0])
            .unwrap();
        let ops = build_operators(4).unwrap();
        let mut h = CMatrix::zeros((16, 16));
        for i in 0..4 {
            h.scaled_add(C64::new(sys.offsets[i], 0.0), &ops.iz(i));
            for j in (i + 1)..4 {
                let d = sys.couplings[i][j];
                h.scaled_add(C64::new(2.0 * d, 0.0), &ops.iz(i).dot(&ops.iz(j)));
                h.scaled_add(C64::new(-d, 0.0), &ops.ix(i).dot(&ops.ix(j)));
                h.scaled_add(C64::new(-d, 0.0), &ops.iy(i).dot(&ops.iy(j)));
            }
        }
        let built = build_hamiltonian(&sys).unwrap();
        assert!(max_abs((built.clone() - h).view()) < 1e-12);
        assert!(crate::linalg::hermiticity_error(&built) < 1e-12);
        assert!(max_abs(commutator(&built, &ops.fz()).view()) < 1e-10);
    }

    #[test]
    fn two_spin_spectrum_by_hand() {
        // d(2IzIz - IxIx - IyIy) on two spins: triplet |↑↑>,|↓↓> at d/2, the
        // flip-flop pair mixes into -d/2 ± d/2 → {0, -d}.
        let d = 100.0;
        let sys = SpinSystem::new(vec![vec![0.0, d], vec![d, 0.0]]).unwrap();
        let e = sorted_eigs(&build_hamiltonian(&sys).unwrap());
        let expected = [-d, 0.0, d / 2.0, d / 2.0];
        for (a, b) in e.iter().zip(expected) {
            assert!((a - b).abs() < 1e-9, "{e:?}");
        }
    }

    #[test]
    fn asymmetric_table_rejected() {
        let err = SpinSystem::new(vec![vec![0.0, 1.0], vec![2.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        let err = SpinSystem::new(vec![vec![1.0, 1.0], vec![1.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        let err = SpinSystem::new(vec![vec![0.0, 2e6], vec![2e6, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn thermal_state_values() {
        let one = thermal_state(&SpinSystem::uncoupled(1).unwrap()).unwrap();
        assert_eq!(one.matrix[[0, 0]], C64::new(0.25, 0.0));
        assert_eq!(one.matrix[[1, 1]], C64::new(-0.25, 0.0));

        // independent construction: Fz / 4 from explicit Kronecker sums
        let sys = SpinSystem::random(2, 50.0, 1).unwrap();
        let two = thermal_state(&sys).unwrap();
        let ops = build_operators(2).unwrap();
        let expected = (ops.iz(0) + ops.iz(1)).mapv(|z| z / 4.0);
        assert!(max_abs((two.matrix.clone() - expected).view()) < 1e-15);
        assert_eq!(two.matrix[[0, 0]].re, 0.25);
        assert_eq!(two.matrix[[3, 3]].re, -0.25);

        for n in 1..=6 {
            let st = thermal_state(&SpinSystem::uncoupled(n).unwrap()).unwrap();
            assert!(st.trace().norm() < 1e-15);
        }
    }

    #[test]
    fn random_couplings_deterministic_and_bounded() {
        let a = random_couplings(8, 792.0, 42).unwrap();
        let b = random_couplings(8, 792.0, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, random_couplings(8, 792.0, 43).unwrap());
        for i in 0..8 {
            assert_eq!(a[i][i], 0.0);
            for j in 0..8 {
                assert!(a[i][j].abs() <= 792.0);
                assert_eq!(a[i][j], a[j][i]);
            }
        }
        assert!(random_couplings(4, 0.0, 1).is_err());
    }

    #[test]
    fn random_couplings_are_uniform() {
        // at least 10^4 draws, chi-square against 10 equal bins
        let mut counts = [0usize; 10];
        let mut total = 0usize;
        let mut seed = 0;
        while total < 10_000 {
            let d = random_couplings(12, 1.0, seed).unwrap();
            for i in 0..12 {
                for j in (i + 1)..12 {
                    let bin = (((d[i][j] + 1.0) / 2.0) * 10.0).floor().min(9.0) as usize;
                    counts[bin] += 1;
                    total += 1;
                }
            }
            seed += 1;
        }
        let expected = total as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 9 degrees of freedom, p = 0.001 critical value
        assert!(chi2 < 27.88, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn json_round_trip_and_validation() {
        let sys = SpinSystem::random(3, 100.0, 9).unwrap();
        let back = SpinSystem::from_json(&sys.to_json().unwrap()).unwrap();
        assert_eq!(sys, back);
        let bad = r#"{"n": 2, "couplings": [[0, 1], [1.5, 0]], "offsets": [0, 0]}"#;
        assert!(SpinSystem::from_json(bad).is_err());
        let no_offsets = r#"{"n": 2, "couplings": [[0, 1], [1, 0]]}"#;
        assert_eq!(SpinSystem::from_json(no_offsets).unwrap().offsets, vec![0.0, 0.0]);
    }
}
