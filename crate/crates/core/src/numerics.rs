//! Dense linear-algebra and root-finding support: sorted symmetric spectra,
//! centered-difference Jacobians, the tangent basis of the simplex, and
//! Euclidean simplex projection.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("map returned a non-finite value near the evaluation point")]
    NonFiniteEvaluation,
    #[error("map changed output dimension between evaluations")]
    DimensionMismatch,
}

/// Eigenvalues of a symmetric matrix, sorted ascending. Degenerate
/// eigenvalues are kept as repeated entries.
pub fn symmetric_eigenvalues_sorted(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Centered finite-difference Jacobian of `map` at `point`: column `j` is
/// `(f(x + h e_j) - f(x - h e_j)) / 2h` with `h = step * max(1, |x_j|)`.
pub fn numeric_jacobian<F>(
    map: F,
    point: &[f64],
    step: f64,
) -> Result<DMatrix<f64>, NumericsError>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = point.len();
    let probe = map(point);
    let m = probe.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut x = point.to_vec();
    for j in 0..n {
        let h = step * point[j].abs().max(1.0);
        x[j] = point[j] + h;
        let plus = map(&x);
        x[j] = point[j] - h;
        let minus = map(&x);
        x[j] = point[j];
        if plus.len() != m || minus.len() != m {
            return Err(NumericsError::DimensionMismatch);
        }
        for i in 0..m {
            let d = (plus[i] - minus[i]) / (2.0 * h);
            if !d.is_finite() {
                return Err(NumericsError::NonFiniteEvaluation);
            }
            jac[(i, j)] = d;
        }
    }
    Ok(jac)
}

/// Orthonormal basis of the hyperplane orthogonal to the all-ones vector,
/// as the columns of a K×(K−1) matrix. Built from the Householder reflection
/// that sends `e_1` to `1/√K`.
pub fn ones_orthogonal_basis(k: usize) -> DMatrix<f64> {
    assert!(k >= 1);
    if k == 1 {
        return DMatrix::zeros(1, 0);
    }
    let u = 1.0 / (k as f64).sqrt();
    let mut v = DVector::from_element(k, -u);
    v[0] += 1.0; // v = e_1 - 1/sqrt(K)
    let norm_sq = v.dot(&v);
    let h = DMatrix::identity(k, k) - (&v * v.transpose()) * (2.0 / norm_sq);
    h.columns(1, k - 1).into_owned()
}

/// Restricts a K×K matrix to the tangent space of the simplex (the
/// hyperplane orthogonal to the all-ones direction): returns `Qᵀ M Q` with
/// `Q` from [`ones_orthogonal_basis`].
pub fn restrict_to_tangent(m: &DMatrix<f64>) -> DMatrix<f64> {
    let q = ones_orthogonal_basis(m.nrows());
    q.transpose() * m * q
}

/// Eigenvalues of a (generally non-symmetric) matrix restricted to the
/// simplex tangent space, sorted by descending real part.
pub fn tangent_eigenvalues(jacobian: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let reduced = restrict_to_tangent(jacobian);
    let mut ev: Vec<Complex<f64>> = reduced.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| {
        b.re.partial_cmp(&a.re)
            .unwrap()
            .then(b.im.partial_cmp(&a.im).unwrap())
    });
    ev
}

/// Euclidean projection onto the probability simplex `{y ≥ 0, Σy = 1}`.
pub fn project_to_simplex(x: &[f64]) -> Vec<f64> {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    let mut rho = 0;
    for (j, &v) in sorted.iter().enumerate() {
        cumulative += v;
        let t = (cumulative - 1.0) / (j as f64 + 1.0);
        if v - t > 0.0 {
            rho = j + 1;
            theta = t;
        }
    }
    debug_assert!(rho > 0);
    x.iter().map(|&v| (v - theta).max(0.0)).collect()
}
