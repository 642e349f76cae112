//! Solvers for the neighbor-mean system on one connected block of masked
//! pixels.
//!
//! For every unknown `p` the equation is `deg(p) * x_p - sum(x_q) = b_p`,
//! where `q` runs over masked 4-neighbors and `b_p` sums the unmasked
//! neighbor values. The matrix is a Dirichlet graph Laplacian: symmetric
//! positive definite as long as the block touches at least one unmasked pixel.

use crate::error::{Error, Result};

/// Sparse symmetric system for one component, unknowns in row-major order.
#[derive(Debug, Clone)]
pub(crate) struct NeighborSystem {
    /// Neighbor count of each unknown (2, 3 or 4).
    pub degree: Vec<f64>,
    /// Local indices of masked neighbors.
    pub links: Vec<Vec<usize>>,
}

impl NeighborSystem {
    pub fn len(&self) -> usize {
        self.degree.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            let mut v = self.degree[i] * x[i];
            for &j in &self.links[i] {
                v -= x[j];
            }
            out[i] = v;
        }
    }

    /// Largest equation residual in pixel units: `max |b - Ax|_i / deg_i`.
    pub fn residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut ax = vec![0.0; x.len()];
        self.apply(x, &mut ax);
        scaled_max(&self.degree, b, &ax)
    }

    fn bandwidth(&self) -> usize {
        self.links
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.iter().map(move |&j| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }
}

fn scaled_max(degree: &[f64], b: &[f64], ax: &[f64]) -> f64 {
    b.iter()
        .zip(ax)
        .zip(degree)
        .map(|((bi, ai), d)| ((bi - ai) / d).abs())
        .fold(0.0, f64::max)
}

/// Banded Cholesky factor `A = L L^T`, lower band stored row by row.
pub(crate) struct BandedCholesky {
    n: usize,
    band: usize,
    lower: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(system: &NeighborSystem) -> Result<Self> {
        let n = system.len();
        let band = system.bandwidth();
        let width = band + 1;
        // lower[i * width + (i - j)] holds L[i][j] for i - band <= j <= i.
        let mut lower = vec![0.0; n * width];
        for i in 0..n {
            lower[i * width] = system.degree[i];
            for &j in &system.links[i] {
                if j < i {
                    lower[i * width + (i - j)] = -1.0;
                }
            }
        }
        let at = |i: usize, j: usize| i * width + (i - j);
        for j in 0..n {
            let start = j.saturating_sub(band);
            let mut diag = lower[at(j, j)];
            for k in start..j {
                let l = lower[at(j, k)];
                diag -= l * l;
            }
            if !(diag > 0.0) {
                return Err(Error::SolverDivergence {
                    residual: f64::INFINITY,
                    iterations: 0,
                });
            }
            let diag = diag.sqrt();
            lower[at(j, j)] = diag;
            for i in j + 1..n.min(j + band + 1) {
                let mut v = lower[at(i, j)];
                for k in i.saturating_sub(band)..j {
                    v -= lower[at(i, k)] * lower[at(j, k)];
                }
                lower[at(i, j)] = v / diag;
            }
        }
        Ok(Self { n, band, lower })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let width = self.band + 1;
        let at = |i: usize, j: usize| i * width + (i - j);
        let mut y = b.to_vec();
        for i in 0..self.n {
            let mut v = y[i];
            for k in i.saturating_sub(self.band)..i {
                v -= self.lower[at(i, k)] * y[k];
            }
            y[i] = v / self.lower[at(i, i)];
        }
        for i in (0..self.n).rev() {
            let mut v = y[i];
            for k in i + 1..self.n.min(i + self.band + 1) {
                v -= self.lower[at(k, i)] * y[k];
            }
            y[i] = v / self.lower[at(i, i)];
        }
        y
    }
}

/// Jacobi-preconditioned conjugate gradient, started from zero.
///
/// Stops once the pixel-unit residual is at most `tolerance`.
pub(crate) fn conjugate_gradient(
    system: &NeighborSystem,
    b: &[f64],
    tolerance: f64,
    max_iterations: usize,
) -> Result<Vec<f64>> {
    let n = system.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let zeros = vec![0.0; n];
    if scaled_max(&system.degree, &r, &zeros) <= tolerance {
        return Ok(x);
    }
    let mut z: Vec<f64> = r.iter().zip(&system.degree).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..max_iterations {
        system.apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let residual = r
            .iter()
            .zip(&system.degree)
            .map(|(ri, d)| (ri / d).abs())
            .fold(0.0, f64::max);
        if residual <= tolerance {
            let true_residual = system.residual(&x, b);
            if true_residual <= tolerance {
                return Ok(x);
            }
            // drifted: restart the recurrences from the true residual
            system.apply(&x, &mut ap);
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
        }
        for i in 0..n {
            z[i] = r[i] / system.degree[i];
        }
        let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverDivergence {
        residual: system.residual(&x, b),
        iterations: max_iterations,
    })
}
