use super::params::Params;
use crate::error::{Error, Result};
use crate::math::Real;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Step-decayed learning rate: `base * decay^floor(step / every)`.
pub fn lr_at(base: f64, decay: f64, every: u64, step: u64) -> f64 {
    let k = if every == 0 { 0 } else { step / every };
    base * decay.powi(k.min(i32::MAX as u64) as i32)
}

/// Adam moment estimates for every parameter array.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub step: u64,
    pub m: Params<F>,
    pub v: Params<F>,
}

impl<F: Real> Adam<F> {
    pub fn new(params: &Params<F>) -> Self {
        Adam {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update applied to every parameter.
pub fn adam_step<F: Real>(
    params: &mut Params<F>,
    grads: &Params<F>,
    state: &mut Adam<F>,
    lr: f64,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient passed to the optimizer".into()));
    }
    state.step += 1;
    let t = state.step.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let (b1, b2) = (F::of(ADAM_BETA1), F::of(ADAM_BETA2));
    let (one, eps) = (F::one(), F::of(ADAM_EPSILON));
    let step_size = F::of(lr / c1);
    let c2_sqrt = F::of(c2.sqrt());
    let arrays = params
        .arrays_mut()
        .into_iter()
        .zip(grads.arrays())
        .zip(state.m.arrays_mut())
        .zip(state.v.arrays_mut());
    for (((w, g), m), v) in arrays {
        for k in 0..w.len() {
            m[k] = b1 * m[k] + (one - b1) * g[k];
            v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
            w[k] -= step_size * m[k] / (v[k].sqrt() / c2_sqrt + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CellType, ModelConfig};

    #[test]
    fn schedule_steps() {
        assert_eq!(lr_at(1e-4, 0.85, 12_000, 0), 1e-4);
        assert_eq!(lr_at(1e-4, 0.85, 12_000, 11_999), 1e-4);
        assert!((lr_at(1e-4, 0.85, 12_000, 12_000) - 0.85e-4).abs() < 1e-18);
        assert!((lr_at(1e-4, 0.85, 12_000, 24_000) - 0.85f64.powi(2) * 1e-4).abs() < 1e-18);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first step is lr * g / (|g| + eps).
        let config = ModelConfig {
            embedding_dim: 2,
            hidden_size: 2,
            num_layers: 1,
            cell_type: CellType::Gru,
            ..ModelConfig::default()
        };
        let mut p = crate::model::init_params::<f64>(&config, 3, 1);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.head_bias[0] = 0.3;
        g.head_bias[1] = -2.0;
        let mut adam = Adam::new(&p);
        adam_step(&mut p, &g, &mut adam, 0.01).unwrap();
        let d0 = p.head_bias[0] - before.head_bias[0];
        let d1 = p.head_bias[1] - before.head_bias[1];
        assert!((d0 + 0.01 * 0.3 / (0.3 + 1e-8)).abs() < 1e-12);
        assert!((d1 - 0.01 * 2.0 / (2.0 + 1e-8)).abs() < 1e-12);
        assert_eq!(p.head_bias[2], before.head_bias[2]);
        assert_eq!(adam.step, 1);
    }

    fn tiny() -> Params<f64> {
        let config = ModelConfig {
            embedding_dim: 3,
            hidden_size: 2,
            num_layers: 1,
            ..ModelConfig::default()
        };
        crate::model::init_params(&config, 4, 2)
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = tiny();
        let before = p.clone();
        let g = p.zeros_like();
        let mut adam = Adam::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut adam, 0.1).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        // m_t / (1 - b1^t) = g and v_t / (1 - b2^t) = g^2 exactly, so every
        // step moves by lr * |g| / (|g| + eps).
        let mut p = tiny();
        let mut g = p.zeros_like();
        g.head_bias.iter_mut().for_each(|x| *x = -0.7);
        let mut adam = Adam::new(&p);
        let mut last = p.head_bias[0];
        for _ in 0..200 {
            adam_step(&mut p, &g, &mut adam, 1e-3).unwrap();
            let delta = p.head_bias[0] - last;
            assert!((delta - 1e-3).abs() < 1e-9, "{delta}");
            last = p.head_bias[0];
        }
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut p = tiny();
        let mut g = p.zeros_like();
        g.head_bias[3] = f64::NAN;
        let mut adam = Adam::new(&p);
        assert!(matches!(adam_step(&mut p, &g, &mut adam, 0.1), Err(Error::Numeric(_))));
    }
}
