//! Forward pass and backpropagation through time.
//!
//! Conventions per layer and time step `t` (masks default to all-ones):
//!
//! ```text
//! x~  = x_t * m_in          hp = h_{t-1} * m_rec
//! LSTM: a = b + W x~ + U hp;  i,f,o = sigmoid(a_i,a_f,a_o);  g = tanh(a_g)
//!       c_t = f c_{t-1} + i g;  h_t = o tanh(c_t)
//! GRU:  r,z = sigmoid(b + W x~ + U hp)  (r and z blocks)
//!       n = tanh(b_n + W_n x~ + U_n (r hp));  h_t = (1 - z) n + z h_{t-1}
//! y_t = h_t * m_out   (input of the next layer; the heads read y_{T-1})
//! ```

use rand::Rng;
use rayon::prelude::*;

use super::loss::bce_term;
use super::params::{LayerParams, Params};
use super::LabelRow;
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::math::{sigmoid, Real};

/// Variational dropout masks of one sequence: one mask per layer and
/// connection type, reused at every time step. Kept units carry the
/// inverted-dropout scale `1 / (1 - p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMasks<F> {
    pub input: Vec<F>,
    pub recurrent: Vec<F>,
    pub output: Vec<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks<F> {
    pub layers: Vec<LayerMasks<F>>,
}

impl<F: Real> DropoutMasks<F> {
    pub fn sample<R: Rng>(params: &Params<F>, prob: f64, rng: &mut R) -> Self {
        let keep = 1.0 - prob;
        let scale = F::of(1.0 / keep);
        let mut draw = |n: usize| -> Vec<F> {
            (0..n)
                .map(|_| if rng.random::<f64>() < keep { scale } else { F::zero() })
                .collect()
        };
        let h = params.hidden_size;
        DropoutMasks {
            layers: params
                .layers
                .iter()
                .map(|layer| LayerMasks {
                    input: draw(layer.input_size),
                    recurrent: draw(h),
                    output: draw(h),
                })
                .collect(),
        }
    }
}

/// Parameter gradients plus the embedding rows the batch touched.
#[derive(Clone, Debug)]
pub struct Gradients<F> {
    pub params: Params<F>,
    touched: Vec<bool>,
    touched_rows: Vec<usize>,
}

impl<F: Real> Gradients<F> {
    pub fn new(params: &Params<F>) -> Self {
        Gradients {
            params: params.zeros_like(),
            touched: vec![false; params.vocab_size],
            touched_rows: Vec::new(),
        }
    }

    fn touch(&mut self, row: usize) {
        if !self.touched[row] {
            self.touched[row] = true;
            self.touched_rows.push(row);
        }
    }

    /// Embedding rows that appeared in the batch, ascending.
    pub fn touched_rows(&self) -> Vec<usize> {
        let mut rows = self.touched_rows.clone();
        rows.sort_unstable();
        rows
    }

    pub fn is_touched(&self, row: usize) -> bool {
        self.touched[row]
    }

    fn clear(&mut self) {
        let e = self.params.embedding_dim;
        for &row in &self.touched_rows {
            self.params.embedding[row * e..(row + 1) * e].fill(F::zero());
            self.touched[row] = false;
        }
        self.touched_rows.clear();
        for array in self.params.arrays_mut().into_iter().skip(1) {
            array.fill(F::zero());
        }
    }

    fn add_from(&mut self, other: &Gradients<F>) {
        let e = self.params.embedding_dim;
        for &row in &other.touched_rows {
            self.touch(row);
            add_assign(
                &mut self.params.embedding[row * e..(row + 1) * e],
                &other.params.embedding[row * e..(row + 1) * e],
            );
        }
        for (dst, src) in self
            .params
            .arrays_mut()
            .into_iter()
            .zip(other.params.arrays())
            .skip(1)
        {
            add_assign(dst, src);
        }
    }
}

/// Loss weighting of [`backward`] and [`objective`].
///
/// The objective is `loss_scale * sum_i sum_j BCE_ij + l1_strength * sum |e|`
/// where the L1 sum runs over embedding rows present in the batch.
#[derive(Clone, Copy, Debug)]
pub struct BackwardOptions<F> {
    pub loss_scale: F,
    pub l1_strength: F,
}

impl<F: Real> Default for BackwardOptions<F> {
    /// The plain summed loss, no regularization.
    fn default() -> Self {
        BackwardOptions {
            loss_scale: F::one(),
            l1_strength: F::zero(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchGradient<F> {
    /// Summed binary cross-entropy over samples and tasks, unscaled.
    pub data_loss: f64,
    /// Value of the differentiated objective.
    pub objective: f64,
    pub grads: Gradients<F>,
}

// --- dense kernels -------------------------------------------------------

#[inline]
fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

#[inline]
fn axpy<F: Real>(y: &mut [F], a: F, x: &[F]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * *xi;
    }
}

#[inline]
fn add_assign<F: Real>(y: &mut [F], x: &[F]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += *xi;
    }
}

/// `out += W x` for row-major `W` with `x.len()` columns.
fn matvec_acc<F: Real>(out: &mut [F], w: &[F], x: &[F]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += W^T d`.
fn matvec_t_acc<F: Real>(out: &mut [F], w: &[F], d: &[F]) {
    let cols = out.len();
    for (di, row) in d.iter().zip(w.chunks_exact(cols)) {
        if *di != F::zero() {
            axpy(out, *di, row);
        }
    }
}

/// `G += d x^T`.
fn outer_acc<F: Real>(g: &mut [F], d: &[F], x: &[F]) {
    let cols = x.len();
    for (di, row) in d.iter().zip(g.chunks_exact_mut(cols)) {
        if *di != F::zero() {
            axpy(row, *di, x);
        }
    }
}

fn masked<F: Real>(dst: &mut [F], src: &[F], mask: Option<&[F]>) {
    match mask {
        Some(m) => {
            for ((d, s), k) in dst.iter_mut().zip(src).zip(m) {
                *d = *s * *k;
            }
        }
        None => dst.copy_from_slice(src),
    }
}

// --- per-sample workspace ------------------------------------------------

#[derive(Clone, Debug, Default)]
struct LayerCache<F> {
    input_size: usize,
    /// Masked inputs, `T x input_size`.
    x: Vec<F>,
    /// Masked previous hidden states, `T x H`.
    hp: Vec<F>,
    /// Hidden states `h_0..h_T`, `(T + 1) x H`.
    h: Vec<F>,
    /// LSTM cell states `c_0..c_T`.
    c: Vec<F>,
    /// Activated gates, `T x gates*H`.
    gates: Vec<F>,
    /// LSTM: `tanh(c_t)`; GRU: `r * hp`. `T x H`.
    aux: Vec<F>,
    /// Layer outputs `h_t * m_out`, `T x H`.
    y: Vec<F>,
}

#[derive(Clone, Debug)]
pub(crate) struct Workspace<F> {
    steps: usize,
    emb: Vec<F>,
    layers: Vec<LayerCache<F>>,
    probs: Vec<F>,
    dy: Vec<F>,
    dx: Vec<F>,
    da: Vec<F>,
    dh: Vec<F>,
    dh_next: Vec<F>,
    dc_next: Vec<F>,
    dhp: Vec<F>,
}

impl<F: Real> Workspace<F> {
    pub(crate) fn new(params: &Params<F>) -> Self {
        let h = params.hidden_size;
        Workspace {
            steps: 0,
            emb: Vec::new(),
            layers: params
                .layers
                .iter()
                .map(|l| LayerCache {
                    input_size: l.input_size,
                    ..LayerCache::default()
                })
                .collect(),
            probs: vec![F::zero(); params.num_tasks],
            dy: Vec::new(),
            dx: Vec::new(),
            da: vec![F::zero(); params.gates() * h],
            dh: vec![F::zero(); h],
            dh_next: vec![F::zero(); h],
            dc_next: vec![F::zero(); h],
            dhp: vec![F::zero(); h],
        }
    }

    fn resize(&mut self, params: &Params<F>, steps: usize) {
        if self.steps == steps && !self.emb.is_empty() {
            return;
        }
        self.steps = steps;
        let (h, gh, e) = (params.hidden_size, params.gates() * params.hidden_size, params.embedding_dim);
        self.emb = vec![F::zero(); steps * e];
        for cache in &mut self.layers {
            cache.x = vec![F::zero(); steps * cache.input_size];
            cache.hp = vec![F::zero(); steps * h];
            cache.h = vec![F::zero(); (steps + 1) * h];
            cache.c = vec![F::zero(); (steps + 1) * h];
            cache.gates = vec![F::zero(); steps * gh];
            cache.aux = vec![F::zero(); steps * h];
            cache.y = vec![F::zero(); steps * h];
        }
        let widest = self.layers.iter().map(|c| c.input_size).max().unwrap_or(0).max(h);
        self.dy = vec![F::zero(); steps * widest];
        self.dx = vec![F::zero(); steps * widest];
    }
}

// --- validation ----------------------------------------------------------

fn check_inputs<F: Real>(params: &Params<F>, batch: &[FeatureSequence]) -> Result<()> {
    if !params.is_finite() {
        return Err(Error::Numeric("model parameters contain non-finite values".into()));
    }
    for (i, seq) in batch.iter().enumerate() {
        if seq.is_empty() {
            return Err(Error::Shape(format!("sequence {i} has no time bins")));
        }
        for &(index, value) in seq.bins.iter().flatten() {
            if index as usize >= params.vocab_size {
                return Err(Error::Shape(format!(
                    "sequence {i}: code index {index} outside vocabulary of {}",
                    params.vocab_size
                )));
            }
            if !value.is_finite() {
                return Err(Error::Numeric(format!("sequence {i}: non-finite input value")));
            }
        }
    }
    Ok(())
}

fn check_masks<F: Real>(params: &Params<F>, masks: Option<&[DropoutMasks<F>]>, n: usize) -> Result<()> {
    let Some(masks) = masks else { return Ok(()) };
    if masks.len() != n {
        return Err(Error::Shape(format!("{} mask sets for {n} sequences", masks.len())));
    }
    for m in masks {
        let ok = m.layers.len() == params.layers.len()
            && m.layers.iter().zip(&params.layers).all(|(lm, lp)| {
                lm.input.len() == lp.input_size
                    && lm.recurrent.len() == params.hidden_size
                    && lm.output.len() == params.hidden_size
            });
        if !ok {
            return Err(Error::Shape("dropout mask shapes do not match the model".into()));
        }
    }
    Ok(())
}

// --- forward -------------------------------------------------------------

fn layer_forward<F: Real>(
    p: &LayerParams<F>,
    cell: super::CellType,
    hidden: usize,
    input: &[F],
    cache: &mut LayerCache<F>,
    mask: Option<&super::LayerMasks<F>>,
    steps: usize,
) {
    let (h, n_in) = (hidden, p.input_size);
    let gh = cell.gates() * h;
    cache.h[..h].fill(F::zero());
    cache.c[..h].fill(F::zero());
    for t in 0..steps {
        let (h_prev, h_rest) = cache.h[t * h..].split_at_mut(h);
        let h_next = &mut h_rest[..h];
        let x = &mut cache.x[t * n_in..(t + 1) * n_in];
        masked(x, &input[t * n_in..(t + 1) * n_in], mask.map(|m| m.input.as_slice()));
        let hp = &mut cache.hp[t * h..(t + 1) * h];
        masked(hp, h_prev, mask.map(|m| m.recurrent.as_slice()));
        let a = &mut cache.gates[t * gh..(t + 1) * gh];
        a.copy_from_slice(&p.bias);
        matvec_acc(a, &p.w_in, x);
        let aux = &mut cache.aux[t * h..(t + 1) * h];
        match cell {
            super::CellType::Lstm => {
                matvec_acc(a, &p.w_rec, hp);
                let (c_prev, c_rest) = cache.c[t * h..].split_at_mut(h);
                let c_next = &mut c_rest[..h];
                for k in 0..h {
                    let i = sigmoid(a[k]);
                    let f = sigmoid(a[h + k]);
                    let g = a[2 * h + k].tanh();
                    let o = sigmoid(a[3 * h + k]);
                    a[k] = i;
                    a[h + k] = f;
                    a[2 * h + k] = g;
                    a[3 * h + k] = o;
                    c_next[k] = f * c_prev[k] + i * g;
                    aux[k] = c_next[k].tanh();
                    h_next[k] = o * aux[k];
                }
            }
            super::CellType::Gru => {
                matvec_acc(&mut a[..2 * h], &p.w_rec[..2 * h * h], hp);
                for k in 0..2 * h {
                    a[k] = sigmoid(a[k]);
                }
                for k in 0..h {
                    aux[k] = a[k] * hp[k];
                }
                matvec_acc(&mut a[2 * h..], &p.w_rec[2 * h * h..], aux);
                for k in 0..h {
                    let n = a[2 * h + k].tanh();
                    a[2 * h + k] = n;
                    let z = a[h + k];
                    h_next[k] = (F::one() - z) * n + z * h_prev[k];
                }
            }
        }
        masked(
            &mut cache.y[t * h..(t + 1) * h],
            h_next,
            mask.map(|m| m.output.as_slice()),
        );
    }
}

/// Runs one sequence; probabilities land in `ws.probs`.
fn forward_sample<F: Real>(
    params: &Params<F>,
    seq: &FeatureSequence,
    masks: Option<&DropoutMasks<F>>,
    ws: &mut Workspace<F>,
) {
    let steps = seq.len();
    ws.resize(params, steps);
    let (e, h) = (params.embedding_dim, params.hidden_size);
    ws.emb.fill(F::zero());
    for (t, bin) in seq.bins.iter().enumerate() {
        let x = &mut ws.emb[t * e..(t + 1) * e];
        for &(index, value) in bin {
            let row = index as usize;
            axpy(x, F::of(value), &params.embedding[row * e..(row + 1) * e]);
        }
    }
    for l in 0..params.layers.len() {
        let (below, rest) = ws.layers.split_at_mut(l);
        let input: &[F] = if l == 0 { &ws.emb } else { &below[l - 1].y };
        layer_forward(
            &params.layers[l],
            params.cell,
            h,
            input,
            &mut rest[0],
            masks.map(|m| &m.layers[l]),
            steps,
        );
    }
    let top = ws.layers.last().expect("at least one layer");
    let last = &top.y[(steps - 1) * h..steps * h];
    for (j, p) in ws.probs.iter_mut().enumerate() {
        let z = params.head_bias[j] + dot(&params.head_weight[j * h..(j + 1) * h], last);
        *p = sigmoid(z);
    }
}

/// Probabilities for each sequence, `N x num_tasks`. Pass `masks` only in
/// training mode.
pub fn forward<F: Real>(
    params: &Params<F>,
    batch: &[FeatureSequence],
    masks: Option<&[DropoutMasks<F>]>,
) -> Result<Vec<Vec<F>>> {
    check_inputs(params, batch)?;
    check_masks(params, masks, batch.len())?;
    let run = |ws: &mut Workspace<F>, (i, seq): (usize, &FeatureSequence)| {
        forward_sample(params, seq, masks.map(|m| &m[i]), ws);
        ws.probs.clone()
    };
    let out: Vec<Vec<F>> = if rayon::current_num_threads() > 1 && batch.len() > 1 {
        batch
            .par_iter()
            .enumerate()
            .map_init(|| Workspace::new(params), run)
            .collect()
    } else {
        let mut ws = Workspace::new(params);
        batch.iter().enumerate().map(|item| run(&mut ws, item)).collect()
    };
    if out.iter().flatten().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("forward pass produced non-finite outputs".into()));
    }
    Ok(out)
}

fn sample_loss<F: Real>(probs: &[F], labels: &LabelRow) -> f64 {
    probs
        .iter()
        .zip(labels)
        .map(|(p, y)| bce_term(p.to_f64().unwrap_or(f64::NAN), *y))
        .sum()
}

fn l1_value<F: Real>(params: &Params<F>, rows: &[usize]) -> f64 {
    let e = params.embedding_dim;
    rows.iter()
        .flat_map(|&r| &params.embedding[r * e..(r + 1) * e])
        .map(|w| w.abs().to_f64().unwrap_or(f64::NAN))
        .sum()
}

fn batch_rows(batch: &[FeatureSequence], vocab_size: usize) -> Vec<usize> {
    let mut seen = vec![false; vocab_size];
    for &(index, _) in batch.iter().flat_map(|s| s.bins.iter().flatten()) {
        seen[index as usize] = true;
    }
    (0..vocab_size).filter(|&r| seen[r]).collect()
}

fn check_labels(batch: &[FeatureSequence], labels: &[LabelRow]) -> Result<()> {
    if batch.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} sequences but {} label rows",
            batch.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Forward-only value of the objective differentiated by [`backward`].
pub fn objective<F: Real>(
    params: &Params<F>,
    batch: &[FeatureSequence],
    labels: &[LabelRow],
    masks: Option<&[DropoutMasks<F>]>,
    options: BackwardOptions<F>,
) -> Result<f64> {
    check_labels(batch, labels)?;
    let probs = forward(params, batch, masks)?;
    let data: f64 = probs.iter().zip(labels).map(|(p, y)| sample_loss(p, y)).sum();
    let l1 = options.l1_strength.to_f64().unwrap_or(0.0);
    let scale = options.loss_scale.to_f64().unwrap_or(1.0);
    let reg = if l1 > 0.0 {
        l1 * l1_value(params, &batch_rows(batch, params.vocab_size))
    } else {
        0.0
    };
    Ok(scale * data + reg)
}

// --- backward ------------------------------------------------------------

/// Backpropagates `dy` (gradient w.r.t. the layer outputs) through one
/// layer. Leaves the gradient w.r.t. the layer's unmasked input in `dx`.
#[allow(clippy::too_many_arguments)]
fn layer_backward<F: Real>(
    p: &LayerParams<F>,
    g: &mut LayerParams<F>,
    cell: super::CellType,
    hidden: usize,
    cache: &LayerCache<F>,
    mask: Option<&super::LayerMasks<F>>,
    steps: usize,
    dy: &[F],
    dx: &mut [F],
    scratch: (&mut [F], &mut [F], &mut [F], &mut [F], &mut [F]),
) {
    let (da, dh, dh_next, dc_next, dhp) = scratch;
    let (h, n_in) = (hidden, p.input_size);
    let gh = cell.gates() * h;
    dh_next.fill(F::zero());
    dc_next.fill(F::zero());
    dx[..steps * n_in].fill(F::zero());
    let one = F::one();
    for t in (0..steps).rev() {
        let dy_t = &dy[t * h..(t + 1) * h];
        for k in 0..h {
            let m = mask.map_or(one, |m| m.output[k]);
            dh[k] = dy_t[k] * m + dh_next[k];
        }
        let a = &cache.gates[t * gh..(t + 1) * gh];
        let aux = &cache.aux[t * h..(t + 1) * h];
        let x = &cache.x[t * n_in..(t + 1) * n_in];
        let hp = &cache.hp[t * h..(t + 1) * h];
        let dx_t = &mut dx[t * n_in..(t + 1) * n_in];
        match cell {
            super::CellType::Lstm => {
                let c_prev = &cache.c[t * h..(t + 1) * h];
                for k in 0..h {
                    let (i, f, gg, o) = (a[k], a[h + k], a[2 * h + k], a[3 * h + k]);
                    let tc = aux[k];
                    let d_o = dh[k] * tc * o * (one - o);
                    let dc = dh[k] * o * (one - tc * tc) + dc_next[k];
                    da[k] = dc * gg * i * (one - i);
                    da[h + k] = dc * c_prev[k] * f * (one - f);
                    da[2 * h + k] = dc * i * (one - gg * gg);
                    da[3 * h + k] = d_o;
                    dc_next[k] = dc * f;
                }
                outer_acc(&mut g.w_in, da, x);
                outer_acc(&mut g.w_rec, da, hp);
                add_assign(&mut g.bias, da);
                matvec_t_acc(dx_t, &p.w_in, da);
                dhp.fill(F::zero());
                matvec_t_acc(dhp, &p.w_rec, da);
                for k in 0..h {
                    let m = mask.map_or(one, |m| m.recurrent[k]);
                    dh_next[k] = dhp[k] * m;
                }
            }
            super::CellType::Gru => {
                let h_prev = &cache.h[t * h..(t + 1) * h];
                for k in 0..h {
                    let (z, n) = (a[h + k], a[2 * h + k]);
                    let dn = dh[k] * (one - z);
                    let dz = dh[k] * (h_prev[k] - n);
                    da[2 * h + k] = dn * (one - n * n);
                    da[h + k] = dz * z * (one - z);
                }
                // d(r * hp) = U_n^T da_n
                dhp.fill(F::zero());
                matvec_t_acc(dhp, &p.w_rec[2 * h * h..], &da[2 * h..]);
                for k in 0..h {
                    let r = a[k];
                    let d_rh = dhp[k];
                    da[k] = d_rh * hp[k] * r * (one - r);
                    dhp[k] = d_rh * r;
                }
                outer_acc(&mut g.w_in, da, x);
                outer_acc(&mut g.w_rec[..2 * h * h], &da[..2 * h], hp);
                outer_acc(&mut g.w_rec[2 * h * h..], &da[2 * h..], aux);
                add_assign(&mut g.bias, da);
                matvec_t_acc(dx_t, &p.w_in, da);
                matvec_t_acc(dhp, &p.w_rec[..2 * h * h], &da[..2 * h]);
                for k in 0..h {
                    let m = mask.map_or(one, |m| m.recurrent[k]);
                    dh_next[k] = dh[k] * a[h + k] + dhp[k] * m;
                }
            }
        }
        if let Some(m) = mask {
            for (d, k) in dx_t.iter_mut().zip(&m.input) {
                *d *= *k;
            }
        }
    }
}

/// Forward + backward for one sequence, accumulating into `grads`.
/// Returns the sample's summed BCE.
fn backward_sample<F: Real>(
    params: &Params<F>,
    seq: &FeatureSequence,
    labels: &LabelRow,
    masks: Option<&DropoutMasks<F>>,
    loss_scale: F,
    ws: &mut Workspace<F>,
    grads: &mut Gradients<F>,
) -> f64 {
    forward_sample(params, seq, masks, ws);
    let loss = sample_loss(&ws.probs, labels);
    let steps = seq.len();
    let (e, h) = (params.embedding_dim, params.hidden_size);
    let n_layers = params.layers.len();

    // Heads: d/dz of BCE(sigmoid(z)) is p - y.
    let top_width = h;
    ws.dy[..steps * top_width].fill(F::zero());
    {
        let top = &ws.layers[n_layers - 1];
        let last = &top.y[(steps - 1) * h..steps * h];
        let dy_last = &mut ws.dy[(steps - 1) * h..steps * h];
        for j in 0..params.num_tasks {
            let y = if labels[j] { F::one() } else { F::zero() };
            let dz = loss_scale * (ws.probs[j] - y);
            grads.params.head_bias[j] += dz;
            axpy(&mut grads.params.head_weight[j * h..(j + 1) * h], dz, last);
            axpy(dy_last, dz, &params.head_weight[j * h..(j + 1) * h]);
        }
    }

    for l in (0..n_layers).rev() {
        layer_backward(
            &params.layers[l],
            &mut grads.params.layers[l],
            params.cell,
            h,
            &ws.layers[l],
            masks.map(|m| &m.layers[l]),
            steps,
            &ws.dy,
            &mut ws.dx,
            (&mut ws.da, &mut ws.dh, &mut ws.dh_next, &mut ws.dc_next, &mut ws.dhp),
        );
        std::mem::swap(&mut ws.dy, &mut ws.dx);
    }

    // ws.dy now holds the gradient w.r.t. the embedded inputs.
    for (t, bin) in seq.bins.iter().enumerate() {
        let dx_t = &ws.dy[t * e..(t + 1) * e];
        for &(index, value) in bin {
            let row = index as usize;
            grads.touch(row);
            axpy(&mut grads.params.embedding[row * e..(row + 1) * e], F::of(value), dx_t);
        }
    }
    loss
}

struct Slot<F> {
    ws: Workspace<F>,
    grads: Gradients<F>,
    loss: f64,
}

/// Gradient of the objective described by [`BackwardOptions`].
///
/// Each sample's gradient is computed separately and the results are summed
/// in batch order, so the output is bit-identical for any rayon pool size.
pub fn backward<F: Real>(
    params: &Params<F>,
    batch: &[FeatureSequence],
    labels: &[LabelRow],
    masks: Option<&[DropoutMasks<F>]>,
    options: BackwardOptions<F>,
) -> Result<BatchGradient<F>> {
    check_labels(batch, labels)?;
    check_inputs(params, batch)?;
    check_masks(params, masks, batch.len())?;

    let mut total = Gradients::new(params);
    let wave = rayon::current_num_threads().clamp(1, batch.len().max(1));
    let mut slots: Vec<Slot<F>> = (0..wave)
        .map(|_| Slot {
            ws: Workspace::new(params),
            grads: Gradients::new(params),
            loss: 0.0,
        })
        .collect();
    let mut data_loss = 0.0;
    for start in (0..batch.len()).step_by(wave) {
        let end = (start + wave).min(batch.len());
        let run = |k: usize, slot: &mut Slot<F>| {
            let i = start + k;
            slot.loss = backward_sample(
                params,
                &batch[i],
                &labels[i],
                masks.map(|m| &m[i]),
                options.loss_scale,
                &mut slot.ws,
                &mut slot.grads,
            );
        };
        if wave > 1 {
            slots[..end - start]
                .par_iter_mut()
                .enumerate()
                .for_each(|(k, slot)| run(k, slot));
        } else {
            run(0, &mut slots[0]);
        }
        for slot in &mut slots[..end - start] {
            data_loss += slot.loss;
            total.add_from(&slot.grads);
            slot.grads.clear();
        }
    }

    let mut reg = 0.0;
    if options.l1_strength > F::zero() {
        let rows = total.touched_rows();
        reg = options.l1_strength.to_f64().unwrap_or(0.0) * l1_value(params, &rows);
        let e = params.embedding_dim;
        for r in rows {
            let w = &params.embedding[r * e..(r + 1) * e];
            let gw = &mut total.params.embedding[r * e..(r + 1) * e];
            for (gi, wi) in gw.iter_mut().zip(w) {
                if *wi > F::zero() {
                    *gi += options.l1_strength;
                } else if *wi < F::zero() {
                    *gi -= options.l1_strength;
                }
            }
        }
    }

    if !data_loss.is_finite() || !total.params.is_finite() {
        return Err(Error::Numeric("backward pass overflowed".into()));
    }
    let scale = options.loss_scale.to_f64().unwrap_or(1.0);
    Ok(BatchGradient {
        data_loss,
        objective: scale * data_loss + reg,
        grads: total,
    })
}
