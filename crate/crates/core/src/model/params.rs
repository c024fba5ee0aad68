use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CellType, ModelConfig};
use crate::math::Real;

/// Weights of one recurrent layer. Gate blocks are stacked row-wise:
/// `w_in` is `(gates * hidden) x input_size`, `w_rec` is
/// `(gates * hidden) x hidden`, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<F> {
    pub input_size: usize,
    pub w_in: Vec<F>,
    pub w_rec: Vec<F>,
    pub bias: Vec<F>,
}

/// All trainable arrays. Gradients and optimizer moments reuse the layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<F> {
    pub cell: CellType,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub hidden_size: usize,
    pub num_tasks: usize,
    /// `vocab_size x embedding_dim`, row-major.
    pub embedding: Vec<F>,
    pub layers: Vec<LayerParams<F>>,
    /// `num_tasks x hidden_size`, one row per head.
    pub head_weight: Vec<F>,
    pub head_bias: Vec<F>,
}

impl<F: Real> Params<F> {
    pub fn zeros(config: &ModelConfig, vocab_size: usize) -> Self {
        let h = config.hidden_size;
        let gh = config.cell_type.gates() * h;
        let layers = (0..config.num_layers)
            .map(|l| {
                let input_size = if l == 0 { config.embedding_dim } else { h };
                LayerParams {
                    input_size,
                    w_in: vec![F::zero(); gh * input_size],
                    w_rec: vec![F::zero(); gh * h],
                    bias: vec![F::zero(); gh],
                }
            })
            .collect();
        Params {
            cell: config.cell_type,
            vocab_size,
            embedding_dim: config.embedding_dim,
            hidden_size: h,
            num_tasks: config.num_tasks,
            embedding: vec![F::zero(); vocab_size * config.embedding_dim],
            layers,
            head_weight: vec![F::zero(); config.num_tasks * h],
            head_bias: vec![F::zero(); config.num_tasks],
        }
    }

    /// A zeroed array set with the same shapes.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.fill_zero();
        out
    }

    pub fn fill_zero(&mut self) {
        for array in self.arrays_mut() {
            array.fill(F::zero());
        }
    }

    pub fn gates(&self) -> usize {
        self.cell.gates()
    }

    /// Names and shapes in canonical order (matches [`Params::arrays`]).
    pub fn array_specs(&self) -> Vec<(String, Vec<usize>)> {
        let gh = self.gates() * self.hidden_size;
        let mut specs = vec![("embedding".to_string(), vec![self.vocab_size, self.embedding_dim])];
        for (l, layer) in self.layers.iter().enumerate() {
            specs.push((format!("layer{l}.w_in"), vec![gh, layer.input_size]));
            specs.push((format!("layer{l}.w_rec"), vec![gh, self.hidden_size]));
            specs.push((format!("layer{l}.bias"), vec![gh]));
        }
        specs.push(("heads.weight".to_string(), vec![self.num_tasks, self.hidden_size]));
        specs.push(("heads.bias".to_string(), vec![self.num_tasks]));
        specs
    }

    pub fn arrays(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = vec![&self.embedding];
        for layer in &self.layers {
            out.push(&layer.w_in);
            out.push(&layer.w_rec);
            out.push(&layer.bias);
        }
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = vec![&mut self.embedding];
        for layer in &mut self.layers {
            out.push(&mut layer.w_in);
            out.push(&mut layer.w_rec);
            out.push(&mut layer.bias);
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    pub fn num_params(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.iter().all(|v| v.is_finite()))
    }

    pub fn cast<G: Real>(&self) -> Params<G> {
        let conv = |v: &[F]| v.iter().map(|x| G::of(x.to_f64().expect("finite"))).collect::<Vec<G>>();
        Params {
            cell: self.cell,
            vocab_size: self.vocab_size,
            embedding_dim: self.embedding_dim,
            hidden_size: self.hidden_size,
            num_tasks: self.num_tasks,
            embedding: conv(&self.embedding),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    input_size: l.input_size,
                    w_in: conv(&l.w_in),
                    w_rec: conv(&l.w_rec),
                    bias: conv(&l.bias),
                })
                .collect(),
            head_weight: conv(&self.head_weight),
            head_bias: conv(&self.head_bias),
        }
    }
}

/// Half-width of the Xavier uniform distribution: `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn fill_xavier<F: Real>(values: &mut [F], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let bound = xavier_bound(fan_in, fan_out);
    for v in values {
        *v = F::of(rng.random_range(-bound..bound));
    }
}

/// Xavier-uniform weights, zero biases, deterministic in `seed`.
///
/// Fans per array: embedding `(V, E)`; input kernel `(input, gates*H)`;
/// recurrent kernel `(H, gates*H)`; each head `(H, 1)`.
pub fn init_params<F: Real>(config: &ModelConfig, vocab_size: usize, seed: u64) -> Params<F> {
    let mut params = Params::zeros(config, vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, gh) = (params.hidden_size, params.gates() * params.hidden_size);
    fill_xavier(&mut params.embedding, vocab_size, config.embedding_dim, &mut rng);
    for layer in &mut params.layers {
        fill_xavier(&mut layer.w_in, layer.input_size, gh, &mut rng);
        fill_xavier(&mut layer.w_rec, h, gh, &mut rng);
    }
    fill_xavier(&mut params.head_weight, h, 1, &mut rng);
    params
}
