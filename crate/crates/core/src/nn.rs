//! LSTM cell on the tape and parameter plumbing shared by the models.

use nvq_numkit::{Matrix, Rng, Tape, Var};

use crate::error::{CoreError, Result};

/// One LSTM layer. Gates are stacked `[i; f; o; g]` along the rows of
/// `w` (`4h × d_in`), `u` (`4h × h`) and `b` (`4h × 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Matrix,
}

impl LstmParams {
    /// Gaussian weights, zero biases except the forget gate at +1.
    pub fn new(d_in: usize, d_h: usize, std: f64, rng: &mut Rng) -> Self {
        let w = Matrix::random_normal(4 * d_h, d_in, std, rng);
        let u = Matrix::random_normal(4 * d_h, d_h, std, rng);
        let mut b = Matrix::zeros(4 * d_h, 1);
        for r in d_h..2 * d_h {
            b.set(r, 0, 1.0);
        }
        Self { w, u, b }
    }

    pub fn zeros(d_in: usize, d_h: usize) -> Self {
        Self {
            w: Matrix::zeros(4 * d_h, d_in),
            u: Matrix::zeros(4 * d_h, d_h),
            b: Matrix::zeros(4 * d_h, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.cols()
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let h = self.hidden_dim();
        expect_shape(&format!("{name}.u"), &self.u, (4 * h, h))?;
        expect_shape(&format!("{name}.w"), &self.w, (4 * h, self.input_dim()))?;
        expect_shape(&format!("{name}.b"), &self.b, (4 * h, 1))
    }

    /// Copies `other` into `self`, naming the first tensor whose shape differs.
    pub fn assign(&mut self, other: &LstmParams, name: &str) -> Result<()> {
        expect_shape(&format!("{name}.w"), &other.w, self.w.shape())?;
        expect_shape(&format!("{name}.u"), &other.u, self.u.shape())?;
        expect_shape(&format!("{name}.b"), &other.b, self.b.shape())?;
        self.clone_from(other);
        Ok(())
    }
}

pub fn expect_shape(tensor: &str, m: &Matrix, expected: (usize, usize)) -> Result<()> {
    if m.shape() != expected {
        return Err(CoreError::ShapeMismatch {
            tensor: tensor.to_string(),
            expected,
            found: m.shape(),
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
    pub hidden: usize,
}

impl LstmVars {
    pub fn from_slice(vars: &[Var], hidden: usize) -> Self {
        Self {
            w: vars[0],
            u: vars[1],
            b: vars[2],
            hidden,
        }
    }
}

/// `i, f, o = σ(·)`, `g = tanh(·)`, `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
pub fn lstm_step(t: &mut Tape, p: LstmVars, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let n = p.hidden;
    let wx = t.matmul(p.w, x)?;
    let uh = t.matmul(p.u, h)?;
    let z = t.add_n(&[wx, uh, p.b])?;
    let zi = t.slice_rows(z, 0, n)?;
    let zf = t.slice_rows(z, n, n)?;
    let zo = t.slice_rows(z, 2 * n, n)?;
    let zg = t.slice_rows(z, 3 * n, n)?;
    let i = t.sigmoid(zi);
    let f = t.sigmoid(zf);
    let o = t.sigmoid(zo);
    let g = t.tanh(zg);
    let fc = t.elementwise_mul(f, c)?;
    let ig = t.elementwise_mul(i, g)?;
    let c2 = t.add(fc, ig)?;
    let tc = t.tanh(c2);
    let h2 = t.elementwise_mul(o, tc)?;
    Ok((h2, c2))
}

/// Runs the cell over `inputs` from `(h, c)`; returns the final state.
pub fn run_lstm(t: &mut Tape, p: LstmVars, inputs: &[Var], mut h: Var, mut c: Var) -> Result<(Var, Var)> {
    for &x in inputs {
        (h, c) = lstm_step(t, p, x, h, c)?;
    }
    Ok((h, c))
}

/// Puts every tensor on the tape, as leaves or as constants.
pub fn bind(t: &mut Tape, tensors: &[&Matrix], trainable: bool) -> Result<Vec<Var>> {
    tensors
        .iter()
        .map(|m| {
            if trainable {
                t.leaf((*m).clone())
            } else {
                t.constant((*m).clone())
            }
            .map_err(Into::into)
        })
        .collect()
}

pub fn zeros_var(t: &mut Tape, n: usize) -> Result<Var> {
    Ok(t.constant(Matrix::zeros(n, 1))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero_state() {
        let p = LstmParams::zeros(3, 2);
        let mut t = Tape::new();
        let v = bind(&mut t, &[&p.w, &p.u, &p.b], false).unwrap();
        let lv = LstmVars::from_slice(&v, 2);
        let x = t.constant(Matrix::column(vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
        let h = zeros_var(&mut t, 2).unwrap();
        let c = zeros_var(&mut t, 2).unwrap();
        let (h2, c2) = lstm_step(&mut t, lv, x, h, c).unwrap();
        assert_eq!(t.value(h2).data(), &[0.0, 0.0]);
        assert_eq!(t.value(c2).data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_gates_keep_cell() {
        let mut p = LstmParams::zeros(1, 1);
        // i → 0, f → 1.
        p.b = Matrix::column(vec![-800.0, 800.0, 0.0, 0.0]).unwrap();
        let mut t = Tape::new();
        let v = bind(&mut t, &[&p.w, &p.u, &p.b], false).unwrap();
        let lv = LstmVars::from_slice(&v, 1);
        let x = t.constant(Matrix::column(vec![3.0]).unwrap()).unwrap();
        let h = zeros_var(&mut t, 1).unwrap();
        let c = t.constant(Matrix::column(vec![0.7]).unwrap()).unwrap();
        let (_, c2) = lstm_step(&mut t, lv, x, h, c).unwrap();
        assert_eq!(t.value(c2).data(), &[0.7]);
    }

    #[test]
    fn forget_bias_initialized_to_one() {
        let p = LstmParams::new(2, 3, 0.1, &mut Rng::new(1));
        let b = p.b.data();
        assert_eq!(&b[0..3], &[0.0; 3]);
        assert_eq!(&b[3..6], &[1.0; 3]);
        assert_eq!(&b[6..12], &[0.0; 6]);
    }
}
