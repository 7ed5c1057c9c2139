use crate::error::{NumError, Result};
use crate::matrix::Matrix;

fn check_pairs(op: &'static str, params: &[&mut Matrix], grads: &[Matrix]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(NumError::Contract(format!(
            "{op}: {} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(NumError::Dimension {
                op,
                left: p.shape(),
                right: g.shape(),
            });
        }
    }
    Ok(())
}

/// Plain gradient descent, `w ← w − lr·g`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    lr: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(NumError::Contract(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Self { lr })
    }

    pub fn step(&self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        check_pairs("sgd_step", params, grads)?;
        for (p, g) in params.iter_mut().zip(grads) {
            p.axpy(-self.lr, g)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates. Moment buffers are created on
/// the first step from the parameter shapes.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(NumError::Contract(format!(
                "learning rate must be positive, got {}",
                config.lr
            )));
        }
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(NumError::Contract("Adam betas must lie in [0, 1)".into()));
        }
        Ok(Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        })
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        check_pairs("adam_step", params, grads)?;
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self.m.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape())
        {
            return Err(NumError::Contract(
                "adam_step: parameter set changed between steps".into(),
            ));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                let mj = &mut m.data_mut()[j];
                *mj = beta1 * *mj + (1.0 - beta1) * gj;
                let mhat = *mj / bc1;
                let vj = &mut v.data_mut()[j];
                *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
                let vhat = *vj / bc2;
                pd[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint Frobenius norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::new(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn sgd_single_step() {
        let mut w = scalar(1.0);
        Sgd::new(0.1).unwrap().step(&mut [&mut w], &[scalar(2.0)]).unwrap();
        assert!((w.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_gradient_is_noop() {
        let mut w = scalar(3.25);
        Sgd::new(0.5).unwrap().step(&mut [&mut w], &[scalar(0.0)]).unwrap();
        assert_eq!(w.data()[0], 3.25);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut w = scalar(1.0);
        let mut adam = Adam::new(AdamConfig { lr: 0.01, ..Default::default() }).unwrap();
        adam.step(&mut [&mut w], &[scalar(1.0)]).unwrap();
        // mhat = 1, vhat = 1 => step = lr / (1 + eps)
        let expected = 1.0 - 0.01 / (1.0 + 1e-8);
        assert!((w.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Sgd::new(0.0).is_err());
        let mut w = Matrix::zeros(2, 1);
        let err = Sgd::new(0.1).unwrap().step(&mut [&mut w], &[Matrix::zeros(1, 2)]);
        assert!(matches!(err, Err(NumError::Dimension { .. })));
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![scalar(3.0), scalar(4.0)];
        let before = clip_global_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
    }
}
