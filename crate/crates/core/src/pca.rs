//! Principal component analysis over flattened samples.
//!
//! One kernel serves both the shape space (flattened vertex positions) and
//! the texture space (flattened texel channels).

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result};

/// Mean, orthonormal components (row-major, `n_components × dim`) and the
/// singular values of the centered data matrix, in decreasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    pub components: Vec<f64>,
    pub singular_values: Vec<f64>,
    pub dim: usize,
    pub n_samples: usize,
    /// Set when the requested component count exceeded
    /// `min(n_samples - 1, dim)` and was reduced.
    pub clamped: bool,
}

impl PcaBasis {
    pub fn n_components(&self) -> usize {
        self.singular_values.len()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.dim..(i + 1) * self.dim]
    }

    /// `mean + sum_i coeffs[i] * component_i`
    pub fn reconstruct(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_len("coefficients", self.n_components(), coeffs.len())?;
        let mut out = self.mean.clone();
        for (i, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (o, s) in out.iter_mut().zip(self.component(i)) {
                *o += c * s;
            }
        }
        Ok(out)
    }

    /// Orthogonal projection coefficients of `sample - mean`.
    pub fn project(&self, sample: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_len("sample", self.dim, sample.len())?;
        Ok((0..self.n_components())
            .map(|i| {
                self.component(i)
                    .iter()
                    .zip(sample.iter().zip(&self.mean))
                    .map(|(s, (x, m))| s * (x - m))
                    .sum()
            })
            .collect())
    }

    /// Per-component standard deviation `sigma_i / sqrt(n_samples - 1)`.
    pub fn std_devs(&self) -> Vec<f64> {
        let denom = ((self.n_samples.max(2) - 1) as f64).sqrt();
        self.singular_values.iter().map(|s| s / denom).collect()
    }
}

/// Fits `n_components` principal directions to `samples` (each of equal
/// length). Uses the `samples × samples` Gram matrix when samples are fewer
/// than dimensions and the `dim × dim` covariance otherwise. Each
/// component's largest-magnitude entry is made positive.
pub fn fit(samples: &[&[f64]], n_components: usize) -> Result<PcaBasis> {
    let m = samples.len();
    if m < 2 {
        return Err(Error::Invalid(format!("PCA needs at least 2 samples, got {m}")));
    }
    if n_components == 0 {
        return Err(Error::Invalid("PCA needs at least one component".into()));
    }
    let dim = samples[0].len();
    for s in samples {
        crate::error::check_len("sample", dim, s.len())?;
    }
    let bound = (m - 1).min(dim);
    let clamped = n_components > bound;
    let k = n_components.min(bound);

    let mut mean = vec![0.0; dim];
    for s in samples {
        for (acc, x) in mean.iter_mut().zip(s.iter()) {
            *acc += x;
        }
    }
    mean.iter_mut().for_each(|x| *x /= m as f64);
    let centered: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.iter().zip(&mean).map(|(x, mu)| x - mu).collect())
        .collect();

    let (raw, values) = if m <= dim {
        gram_path(&centered, k)
    } else {
        covariance_path(&centered, dim, k)
    };

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut singular_values = Vec::with_capacity(k);
    let scale = values.first().copied().unwrap_or(0.0).max(0.0).sqrt().max(1.0);
    for (mut v, lambda) in raw.into_iter().zip(values) {
        let mut sigma = lambda.max(0.0).sqrt();
        orthogonalize(&mut v, &components);
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 * scale {
            v.iter_mut().for_each(|x| *x /= norm);
        } else {
            // no data left in this direction: complete the basis
            v = complete_basis(&components, dim);
            sigma = 0.0;
        }
        fix_sign(&mut v);
        components.push(v);
        singular_values.push(sigma);
    }

    Ok(PcaBasis {
        mean,
        components: components.concat(),
        singular_values,
        dim,
        n_samples: m,
        clamped,
    })
}

/// Returns unnormalized right singular directions and eigenvalues of XᵀX.
fn gram_path(centered: &[Vec<f64>], k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let m = centered.len();
    let gram = DMatrix::from_fn(m, m, |i, j| dot(&centered[i], &centered[j]));
    let eig = SymmetricEigen::new(gram);
    let order = descending(eig.eigenvalues.as_slice());
    let dim = centered[0].len();
    let mut dirs = Vec::with_capacity(k);
    let mut vals = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let u = eig.eigenvectors.column(idx);
        let mut v = vec![0.0; dim];
        for (row, &ui) in centered.iter().zip(u.iter()) {
            for (acc, x) in v.iter_mut().zip(row) {
                *acc += ui * x;
            }
        }
        dirs.push(v);
        vals.push(eig.eigenvalues[idx]);
    }
    (dirs, vals)
}

fn covariance_path(centered: &[Vec<f64>], dim: usize, k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for row in centered {
        for i in 0..dim {
            for j in i..dim {
                cov[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    let eig = SymmetricEigen::new(cov);
    let order = descending(eig.eigenvalues.as_slice());
    let dirs = order
        .iter()
        .take(k)
        .map(|&idx| eig.eigenvectors.column(idx).iter().copied().collect())
        .collect();
    let vals = order.iter().take(k).map(|&idx| eig.eigenvalues[idx]).collect();
    (dirs, vals)
}

fn descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two passes of modified Gram-Schmidt against `basis`.
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
    }
}

fn complete_basis(basis: &[Vec<f64>], dim: usize) -> Vec<f64> {
    // residual of axis e_j is 1 - sum_b b_j^2; take the largest
    let mut residual = vec![1.0; dim];
    for b in basis {
        for (r, x) in residual.iter_mut().zip(b) {
            *r -= x * x;
        }
    }
    let axis = descending(&residual)[0];
    let mut v = vec![0.0; dim];
    v[axis] = 1.0;
    orthogonalize(&mut v, basis);
    let norm = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}
