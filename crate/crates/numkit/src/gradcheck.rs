use crate::error::{NumError, Result};
use crate::matrix::Matrix;
use crate::tape::{Tape, Var};

/// Outcome of comparing analytic and finite-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub pass: bool,
    /// `(tensor, flat coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares two gradient sets coordinate by coordinate.
pub fn check_gradients(analytic: &[Matrix], numeric: &[Matrix], tol: f64) -> Result<GradReport> {
    if analytic.len() != numeric.len() {
        return Err(NumError::Contract(format!(
            "{} analytic vs {} numeric gradient tensors",
            analytic.len(),
            numeric.len()
        )));
    }
    let mut max_rel_err = 0.0;
    let mut worst = None;
    let mut coordinates = 0;
    for (t, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        if a.shape() != n.shape() {
            return Err(NumError::Dimension {
                op: "check_gradients",
                left: a.shape(),
                right: n.shape(),
            });
        }
        for (j, (x, y)) in a.data().iter().zip(n.data()).enumerate() {
            let e = relative_error(*x, *y);
            coordinates += 1;
            if e > max_rel_err || e.is_nan() {
                max_rel_err = e;
                worst = Some((t, j));
            }
        }
    }
    Ok(GradReport {
        max_rel_err,
        pass: max_rel_err <= tol,
        worst,
        coordinates,
    })
}

fn evaluate<F>(f: &F, points: &[Matrix]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = points
        .iter()
        .map(|p| tape.leaf(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    if tape.value(out).shape() != (1, 1) {
        return Err(NumError::Contract("gradient check needs a scalar function".into()));
    }
    Ok(tape.scalar(out))
}

/// Central differences `(f(x+h) - f(x-h)) / 2h` for every coordinate of every input.
pub fn numeric_gradient<F>(f: &F, points: &[Matrix], h: f64) -> Result<Vec<Matrix>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(NumError::Contract(format!("finite-difference step must be positive, got {h}")));
    }
    let mut work = points.to_vec();
    let mut out = Vec::with_capacity(points.len());
    for t in 0..points.len() {
        let (r, c) = points[t].shape();
        let mut g = Matrix::zeros(r, c);
        for j in 0..r * c {
            let orig = work[t].data()[j];
            work[t].data_mut()[j] = orig + h;
            let plus = evaluate(f, &work)?;
            work[t].data_mut()[j] = orig - h;
            let minus = evaluate(f, &work)?;
            work[t].data_mut()[j] = orig;
            g.data_mut()[j] = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Gradients of `f` at `points` from one backward pass.
pub fn analytic_gradient<F>(f: &F, points: &[Matrix]) -> Result<Vec<Matrix>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = points
        .iter()
        .map(|p| tape.leaf(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    Ok(vars.iter().map(|v| grads.wrt(*v)).collect())
}

/// Checks `backward` against central differences for a function of several tensors.
pub fn grad_check_many<F>(f: F, points: &[Matrix], h: f64, tol: f64) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let numeric = numeric_gradient(&f, points, h)?;
    let analytic = analytic_gradient(&f, points)?;
    check_gradients(&analytic, &numeric, tol)
}

/// Single-tensor form of [`grad_check_many`].
pub fn grad_check<F>(f: F, point: &Matrix, h: f64, tol: f64) -> Result<GradReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|t, vs| f(t, vs[0]), std::slice::from_ref(point), h, tol)
}
