//! P1 assembly on a [`Mesh`] and a banded Cholesky solver.

use crate::error::{Error, Result};

use super::mesh::{BoundaryTag, Mesh};

/// Symmetric matrix stored as its lower band, row by row: entry `(i, j)`
/// with `i - bw <= j <= i` sits at `i * (bw + 1) + bw - (i - j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (self.bw - (i - j))
    }

    /// Entry `(i, j)` of the symmetric matrix.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Adds `v` to entries `(i, j)` and `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn add_diagonal(&mut self, d: &[f64], scale: f64) {
        for (i, v) in d.iter().enumerate() {
            let s = self.slot(i, i);
            self.data[s] += scale * v;
        }
    }

    /// `self + scale * other`, same shape.
    pub fn axpy(&self, scale: f64, other: &BandMatrix) -> BandMatrix {
        assert_eq!((self.n, self.bw), (other.n, other.bw));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + scale * b).collect();
        BandMatrix {
            n: self.n,
            bw: self.bw,
            data,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..i {
                let a = self.data[self.slot(i, j)];
                y[i] += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += self.data[self.slot(i, i)] * x[i];
        }
        y
    }

    /// Cholesky factor `L` with `A = L L^T`, same band.
    pub fn cholesky(&self) -> Result<BandCholesky> {
        let mut l = self.clone();
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let jlo = j.saturating_sub(bw).max(lo);
                let mut s = l.data[l.slot(i, j)];
                for k in jlo..j {
                    s -= l.data[l.slot(i, k)] * l.data[l.slot(j, k)];
                }
                let slot = l.slot(i, j);
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::numerical(format!(
                            "system matrix is not positive definite at row {i}"
                        )));
                    }
                    l.data[slot] = s.sqrt();
                } else {
                    l.data[slot] = s / l.data[l.slot(j, j)];
                }
            }
        }
        Ok(BandCholesky { l })
    }
}

#[derive(Clone, Debug)]
pub struct BandCholesky {
    l: BandMatrix,
}

impl BandCholesky {
    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let l = &self.l;
        let bw = l.bw;
        for i in 0..l.n {
            let lo = i.saturating_sub(bw);
            let mut s = x[i];
            for k in lo..i {
                s -= l.data[l.slot(i, k)] * x[k];
            }
            x[i] = s / l.data[l.slot(i, i)];
        }
        for i in (0..l.n).rev() {
            x[i] /= l.data[l.slot(i, i)];
            let xi = x[i];
            let lo = i.saturating_sub(bw);
            for k in lo..i {
                x[k] -= l.data[l.slot(i, k)] * xi;
            }
        }
    }
}

/// Mesh operators that do not depend on parameters.
#[derive(Clone, Debug)]
pub struct Operators {
    /// Lumped mass matrix (nodal areas).
    pub mass: Vec<f64>,
    /// Stiffness matrix of the Laplacian.
    pub stiffness: BandMatrix,
    /// Lumped boundary mass per tag (nodal boundary lengths).
    pub boundary_interior: Vec<f64>,
    pub boundary_exterior: Vec<f64>,
    pub boundary_sun: Vec<f64>,
}

pub fn assemble(mesh: &Mesh) -> Operators {
    let n = mesh.n_nodes();
    let bw = mesh
        .triangles
        .iter()
        .flat_map(|t| [t[0].abs_diff(t[1]), t[1].abs_diff(t[2]), t[0].abs_diff(t[2])])
        .max()
        .unwrap_or(0);
    let mut stiffness = BandMatrix::zeros(n, bw);
    let mut mass = vec![0.0; n];
    for tri in &mesh.triangles {
        let p = tri.map(|k| mesh.nodes[k]);
        let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
        // Gradients of the barycentric basis: (y_{k+1} - y_{k+2}, x_{k+2} - x_{k+1}) / (2A)
        let g: [[f64; 2]; 3] = std::array::from_fn(|k| {
            let (a, b) = (p[(k + 1) % 3], p[(k + 2) % 3]);
            [(a[1] - b[1]) / (2.0 * area), (b[0] - a[0]) / (2.0 * area)]
        });
        for a in 0..3 {
            mass[tri[a]] += area / 3.0;
            for b in 0..=a {
                let v = area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                stiffness.add(tri[a], tri[b], v);
            }
        }
    }
    let mut by_tag = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for &(a, b, tag) in &mesh.boundary {
        let (p, q) = (mesh.nodes[a], mesh.nodes[b]);
        let len = (p[0] - q[0]).hypot(p[1] - q[1]);
        let slot = match tag {
            BoundaryTag::Interior => 0,
            BoundaryTag::Exterior => 1,
            BoundaryTag::Sun => 2,
        };
        by_tag[slot][a] += len / 2.0;
        by_tag[slot][b] += len / 2.0;
    }
    let [boundary_interior, boundary_exterior, boundary_sun] = by_tag;
    Operators {
        mass,
        stiffness,
        boundary_interior,
        boundary_exterior,
        boundary_sun,
    }
}
