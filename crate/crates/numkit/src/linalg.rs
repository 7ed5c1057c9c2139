use crate::error::{NumError, Result};
use crate::matrix::Matrix;

/// Ridge used by callers that ask for the "robust" least-squares path.
pub const ROBUST_RIDGE: f64 = 1e-6;

/// Pivot-ratio threshold above which the normal matrix is treated as singular.
const MAX_CONDITION: f64 = 1e12;

/// Solves `min ‖A M − B‖²_F + λ‖M‖²_F` through the normal equations,
/// `M = (AᵀA + λI)⁻¹ AᵀB`.
///
/// The normal matrix is factored with Cholesky; the ratio of the largest to
/// the smallest pivot is a lower bound on its condition number and is used as
/// the singularity test when `ridge == 0`. Two rounds of iterative refinement
/// follow the triangular solves.
pub fn least_squares(a: &Matrix, b: &Matrix, ridge: f64) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(NumError::Dimension {
            op: "least_squares",
            left: a.shape(),
            right: b.shape(),
        });
    }
    if a.rows() == 0 {
        return Err(NumError::Contract("least squares needs at least one row".into()));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(NumError::Contract(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(NumError::NonFinite("least_squares input".into()));
    }

    let mut gram = a.t_matmul(a)?;
    let p = gram.rows();
    for i in 0..p {
        let v = gram.get(i, i) + ridge;
        gram.set(i, i, v);
    }
    let rhs = a.t_matmul(b)?;

    let chol = cholesky(&gram).ok_or(NumError::Singular { condition: f64::INFINITY })?;
    let condition = pivot_condition(&chol);
    if ridge == 0.0 && condition > MAX_CONDITION {
        return Err(NumError::Singular { condition });
    }

    let mut m = chol_solve(&chol, &rhs);
    for _ in 0..2 {
        let resid = rhs.sub(&gram.matmul(&m)?)?;
        let delta = chol_solve(&chol, &resid);
        m.axpy(1.0, &delta)?;
    }
    if !m.is_finite() {
        return Err(NumError::Singular { condition });
    }
    Ok(m)
}

/// Lower-triangular `L` with `LLᵀ = g`, or `None` when a pivot is not positive.
fn cholesky(g: &Matrix) -> Option<Matrix> {
    let n = g.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = g.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in j + 1..n {
            let mut s = g.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / djj);
        }
    }
    Some(l)
}

fn pivot_condition(l: &Matrix) -> f64 {
    let pivots: Vec<f64> = (0..l.rows()).map(|i| l.get(i, i) * l.get(i, i)).collect();
    let max = pivots.iter().copied().fold(0.0, f64::max);
    let min = pivots.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn chol_solve(l: &Matrix, rhs: &Matrix) -> Matrix {
    let n = l.rows();
    let q = rhs.cols();
    let mut x = rhs.clone();
    for c in 0..q {
        // L y = b
        for i in 0..n {
            let mut s = x.get(i, c);
            for k in 0..i {
                s -= l.get(i, k) * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x.get(i, c);
            for k in i + 1..n {
                s -= l.get(k, i) * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn residual_gradient_norm(a: &Matrix, b: &Matrix, m: &Matrix, ridge: f64) -> (f64, f64) {
        let atb = a.t_matmul(b).unwrap();
        let mut r = a.t_matmul(&a.matmul(m).unwrap()).unwrap();
        r.axpy(ridge, m).unwrap();
        let r = r.sub(&atb).unwrap();
        (r.frobenius_norm(), atb.frobenius_norm())
    }

    #[test]
    fn identical_sides_give_identity() {
        let mut rng = Rng::new(11);
        let a = Matrix::random_normal(20, 5, 1.0, &mut rng);
        let m = least_squares(&a, &a, 0.0).unwrap();
        assert!(m.sub(&Matrix::identity(5)).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn recovers_planted_map() {
        let mut rng = Rng::new(12);
        let a = Matrix::random_normal(30, 6, 1.0, &mut rng);
        let r = Matrix::random_normal(6, 4, 1.0, &mut rng);
        let b = a.matmul(&r).unwrap();
        let m = least_squares(&a, &b, 0.0).unwrap();
        assert!(m.sub(&r).unwrap().frobenius_norm() < 1e-8);
    }

    #[test]
    fn duplicated_column_is_singular_without_ridge() {
        let mut rng = Rng::new(13);
        let base = Matrix::random_normal(10, 3, 1.0, &mut rng);
        let mut rows = Vec::new();
        for i in 0..10 {
            let r = base.row(i);
            rows.push(vec![r[0], r[1], r[2], r[1]]);
        }
        let a = Matrix::from_rows(&rows).unwrap();
        let b = Matrix::random_normal(10, 2, 1.0, &mut rng);
        assert!(matches!(least_squares(&a, &b, 0.0), Err(NumError::Singular { .. })));
        let m = least_squares(&a, &b, ROBUST_RIDGE).unwrap();
        let (g, atb) = residual_gradient_norm(&a, &b, &m, ROBUST_RIDGE);
        assert!(g <= 1e-8 * (1.0 + atb), "{g}");
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let err = least_squares(&Matrix::zeros(3, 2), &Matrix::zeros(4, 2), 0.0).unwrap_err();
        assert!(matches!(err, NumError::Dimension { .. }));
    }
}
