//! Block structure of the secular Hamiltonian.
//!
//! The secular dipolar Hamiltonian conserves total Fz, so in a basis sorted by
//! the number of down spins it is block diagonal with real symmetric blocks.
//! Everything the engine does with H0 (free propagators, acquisition) works
//! block by block in this "sector order".

use ndarray::Array2;

use crate::error::Result;
use crate::linalg::{eigh_real, reassemble_real, CMatrix};
use crate::ops::{mz, SpinSystem};

#[derive(Debug, Clone)]
pub struct Sector {
    /// Number of down spins.
    pub down: usize,
    pub start: usize,
    pub len: usize,
    pub energies: Vec<f64>,
    /// Eigenvectors in columns, rows in sector-local order.
    pub vectors: Array2<f64>,
}

impl Sector {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Precomputed eigensystem of the static Hamiltonian.
#[derive(Debug, Clone)]
pub struct StaticEigensystem {
    n: usize,
    /// Sector-order position → computational index.
    order: Vec<usize>,
    /// Computational index → sector-order position.
    position: Vec<usize>,
    sectors: Vec<Sector>,
}

impl StaticEigensystem {
    pub fn new(sys: &SpinSystem) -> Result<Self> {
        sys.validate()?;
        let n = sys.n;
        let dim = sys.dim();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by_key(|&s| (s.count_ones(), s));
        let mut position = vec![0; dim];
        for (p, &s) in order.iter().enumerate() {
            position[s] = p;
        }

        let mut sectors = Vec::with_capacity(n + 1);
        let mut start = 0;
        for down in 0..=n {
            let len = order[start..]
                .iter()
                .take_while(|s| s.count_ones() as usize == down)
                .count();
            let mut block = Array2::<f64>::zeros((len, len));
            for local in 0..len {
                let s = order[start + local];
                block[[local, local]] = sys.diagonal_energy(s);
                for (partner, v) in sys.flip_flops(s) {
                    block[[position[partner] - start, local]] += v;
                }
            }
            let (energies, vectors) = eigh_real(&block)?;
            sectors.push(Sector {
                down,
                start,
                len,
                energies,
                vectors,
            });
            start += len;
        }
        Ok(StaticEigensystem {
            n,
            order,
            position,
            sectors,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.order.len()
    }

    pub fn sectors(&self) -> &[Sector] {
        &self.sectors
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn position(&self) -> &[usize] {
        &self.position
    }

    /// All eigenvalues, sector order.
    pub fn energies(&self) -> Vec<f64> {
        self.sectors
            .iter()
            .flat_map(|s| s.energies.iter().copied())
            .collect()
    }

    /// Largest |E|, Hz.
    pub fn spectral_radius(&self) -> f64 {
        self.sectors
            .iter()
            .flat_map(|s| s.energies.iter())
            .fold(0.0, |a, e| a.max(e.abs()))
    }

    /// Total magnetization of each sector-order position.
    pub fn fz_diagonal(&self) -> Vec<f64> {
        self.order
            .iter()
            .map(|&s| (0..self.n).map(|i| mz(self.n, s, i)).sum())
            .collect()
    }

    /// Blocks of exp(-i 2π H0 t), sector order.
    pub fn free_blocks(&self, t: f64) -> Vec<CMatrix> {
        self.sectors
            .iter()
            .map(|s| reassemble_real(&s.energies, &s.vectors, t))
            .collect()
    }

    /// Dense exp(-i 2π H0 t) in the computational basis.
    pub fn free_propagator(&self, t: f64) -> CMatrix {
        let blocks = self.free_blocks(t);
        let mut u = CMatrix::zeros((self.dim(), self.dim()));
        for (sec, b) in self.sectors.iter().zip(&blocks) {
            for i in 0..sec.len {
                for j in 0..sec.len {
                    u[[self.order[sec.start + i], self.order[sec.start + j]]] = b[[i, j]];
                }
            }
        }
        u
    }

    /// Permutes a computational-basis matrix into sector order (rows and columns).
    pub fn to_sector_order(&self, m: &CMatrix) -> CMatrix {
        let dim = self.dim();
        CMatrix::from_shape_fn((dim, dim), |(i, j)| m[[self.order[i], self.order[j]]])
    }

    pub fn from_sector_order(&self, m: &CMatrix) -> CMatrix {
        let dim = self.dim();
        CMatrix::from_shape_fn((dim, dim), |(i, j)| m[[self.position[i], self.position[j]]])
    }
}
