//! Loss, backpropagation through time, Adam and the epoch loop.

use crate::corpus::{encode_sentence, CharVocab, EncodedExample, LabelClass, TaggedSentence};
use crate::mathcore::{matmul_nn_acc, matmul_tn_acc, matvec_t_acc, Kernel, Matrix};
use crate::metrics;
use crate::network::{
    init_params, model_forward_with, DirectionTrace, ForwardTrace, LayerInput, LstmCellParams, ModelDims, ModelParams,
    NetworkError,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

/// Probabilities are clamped to this before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss is undefined: no unmasked positions")]
    EmptyMask,
    #[error("non-finite loss {loss} in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Mean over unmasked positions of `-ln p[label]`.
pub fn cross_entropy_loss(probs: &Matrix, labels: &[LabelClass], mask: &[bool]) -> Result<f32, TrainError> {
    assert_eq!(probs.rows(), labels.len(), "shape error: probabilities vs labels");
    assert_eq!(labels.len(), mask.len(), "shape error: labels vs mask");
    let (sum, n) = nll_sum(probs, labels, mask);
    if n == 0 {
        return Err(TrainError::EmptyMask);
    }
    Ok((sum / n as f64) as f32)
}

fn nll_sum(probs: &Matrix, labels: &[LabelClass], mask: &[bool]) -> (f64, usize) {
    let mut sum = 0.0f64;
    let mut n = 0;
    for (t, (label, &keep)) in labels.iter().zip(mask).enumerate() {
        if keep {
            sum -= f64::from(probs.get(t, label.code())).max(PROB_FLOOR).ln();
            n += 1;
        }
    }
    (sum, n)
}

/// Parameter-shaped gradient buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub ModelParams);

impl Gradients {
    pub fn zeros(dims: ModelDims) -> Self {
        Self(ModelParams::zeros(dims))
    }

    pub fn tensors(&self) -> Vec<&[f32]> {
        self.0.tensors()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.tensors_mut().into_iter().zip(other.0.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f32) {
        for t in self.0.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }

    /// Rescale so the global L2 norm is at most `threshold`. Returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, threshold: f64) -> f64 {
        let norm = self.global_norm();
        if norm > threshold && norm > 0.0 {
            self.scale((threshold / norm) as f32);
        }
        norm
    }
}

/// Gradient of the mean loss over the unmasked positions of one example.
pub fn backward(
    m: &ModelParams,
    trace: &ForwardTrace,
    labels: &[LabelClass],
    mask: &[bool],
) -> Result<Gradients, TrainError> {
    let n = mask.iter().filter(|&&k| k).count();
    if n == 0 {
        return Err(TrainError::EmptyMask);
    }
    let mut grads = Gradients::zeros(m.dims);
    accumulate_gradients(m, trace, labels, mask, 1.0 / n as f32, &mut grads, Kernel::Blocked);
    Ok(grads)
}

/// Add `weight · ∂(Σ_t −ln p_t[y_t])/∂θ` over unmasked `t` into `grads`.
pub fn accumulate_gradients(
    m: &ModelParams,
    trace: &ForwardTrace,
    labels: &[LabelClass],
    mask: &[bool],
    weight: f32,
    grads: &mut Gradients,
    kernel: Kernel,
) {
    let steps = trace.len();
    assert_eq!(labels.len(), steps, "shape error: labels vs trace");
    assert_eq!(mask.len(), steps, "shape error: mask vs trace");
    let hd = m.dims.hidden_dim;
    let g = &mut grads.0;

    // softmax + cross-entropy head
    let mut d_logits = Matrix::zeros(steps, m.dims.num_classes);
    for t in 0..steps {
        if !mask[t] {
            continue;
        }
        let y = labels[t].code();
        for (c, (d, &p)) in d_logits.row_mut(t).iter_mut().zip(trace.probs.row(t)).enumerate() {
            *d = weight * (p - if c == y { 1.0 } else { 0.0 });
        }
    }
    matmul_tn_acc(&d_logits, &trace.hidden, &mut g.output, kernel);
    for t in 0..steps {
        for (b, d) in g.output_bias.iter_mut().zip(d_logits.row(t)) {
            *b += d;
        }
    }
    let mut d_hidden = Matrix::zeros(steps, 2 * hd);
    matmul_nn_acc(&d_logits, &m.output, &mut d_hidden, kernel);

    for (params, dir_trace, dir_grads, offset) in [
        (&m.forward, &trace.forward, &mut g.forward, 0),
        (&m.backward, &trace.backward, &mut g.backward, hd),
    ] {
        let mut d_top = Matrix::zeros(steps, hd);
        for t in 0..steps {
            d_top.row_mut(dir_trace.step_of(t)).copy_from_slice(&d_hidden.row(t)[offset..offset + hd]);
        }
        backward_direction(params, dir_trace, d_top, dir_grads, kernel);
    }
}

fn backward_direction(
    layers: &[LstmCellParams],
    trace: &DirectionTrace,
    d_top: Matrix,
    grads: &mut [LstmCellParams],
    kernel: Kernel,
) {
    let mut d_h = d_top;
    for l in (0..layers.len()).rev() {
        let input = if l == 0 { LayerInput::OneHot(&trace.ids) } else { LayerInput::Dense(&trace.layers[l - 1].h) };
        let d_input = backward_layer(&layers[l], &trace.layers[l], input, &d_h, &mut grads[l], kernel);
        if let Some(d) = d_input {
            d_h = d;
        }
    }
}

/// BPTT through one layer given `∂L/∂h` from above (rows in processing
/// order). Returns `∂L/∂x` for dense inputs.
pub fn backward_layer(
    p: &LstmCellParams,
    tr: &crate::network::LayerTrace,
    input: LayerInput<'_>,
    d_h_above: &Matrix,
    grads: &mut LstmCellParams,
    kernel: Kernel,
) -> Option<Matrix> {
    let steps = d_h_above.rows();
    let hd = p.hidden_dim();
    let z = || Matrix::zeros(steps, hd);
    // pre-activation gradients per gate
    let (mut da_f, mut da_g, mut da_i, mut da_o) = (z(), z(), z(), z());
    let mut dh_next = vec![0.0f32; hd];
    let mut dc_next = vec![0.0f32; hd];
    for s in (0..steps).rev() {
        for r in 0..hd {
            let dh = d_h_above.get(s, r) + dh_next[r];
            let (f, g, i, o, c) = (tr.f.get(s, r), tr.g.get(s, r), tr.i.get(s, r), tr.o.get(s, r), tr.c.get(s, r));
            let c_prev = if s > 0 { tr.c.get(s - 1, r) } else { 0.0 };
            let tc = c.tanh();
            let d_o = dh * tc;
            let dc = dc_next[r] + dh * o * (1.0 - tc * tc);
            da_f.set(s, r, dc * c_prev * f * (1.0 - f));
            da_g.set(s, r, dc * i * (1.0 - g * g));
            da_i.set(s, r, dc * g * i * (1.0 - i));
            da_o.set(s, r, d_o * o * (1.0 - o));
            dc_next[r] = dc * f;
        }
        dh_next.iter_mut().for_each(|x| *x = 0.0);
        for (u, da) in [(&p.u_f, &da_f), (&p.u_g, &da_g), (&p.u_i, &da_i), (&p.u_o, &da_o)] {
            matvec_t_acc(u, da.row(s), &mut dh_next);
        }
    }

    let mut h_prev = Matrix::zeros(steps, hd);
    for s in 1..steps {
        h_prev.row_mut(s).copy_from_slice(tr.h.row(s - 1));
    }
    let LstmCellParams { u_f, w_f, u_g, w_g, u_i, w_i, u_o, w_o } = grads;
    let pairs: [(&Matrix, &mut Matrix, &mut Matrix, &Matrix); 4] =
        [(&da_f, u_f, w_f, &p.w_f), (&da_g, u_g, w_g, &p.w_g), (&da_i, u_i, w_i, &p.w_i), (&da_o, u_o, w_o, &p.w_o)];
    let mut d_input = match input {
        LayerInput::Dense(x) => Some(Matrix::zeros(steps, x.cols())),
        LayerInput::OneHot(_) => None,
    };
    for (da, du, dw, w) in pairs {
        matmul_tn_acc(da, &h_prev, du, kernel);
        match input {
            LayerInput::OneHot(ids) => {
                for (s, &id) in ids.iter().enumerate() {
                    for (r, &d) in da.row(s).iter().enumerate() {
                        let cur = dw.get(r, id);
                        dw.set(r, id, cur + d);
                    }
                }
            }
            LayerInput::Dense(x) => {
                matmul_tn_acc(da, x, dw, kernel);
                matmul_nn_acc(da, w, d_input.as_mut().expect("dense input"), kernel);
            }
        }
    }
    d_input
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f32>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { config, step: 0, first: zeros.clone(), second: zeros }
    }

    pub fn first_moments(&self) -> &[Vec<f32>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f32>] {
        &self.second
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(state: &mut AdamState, params: &mut ModelParams, grads: &Gradients) {
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, epsilon } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - f64::from(beta1).powi(t);
    let bc2 = 1.0 - f64::from(beta2).powi(t);
    let grad_tensors = grads.tensors();
    assert_eq!(grad_tensors.len(), state.first.len(), "shape error: gradient tensor count");
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grad_tensors).zip(&mut state.first).zip(&mut state.second)
    {
        assert_eq!(p.len(), g.len(), "shape error: gradient tensor size");
        for (((w, &gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = f64::from(*mi) / bc1;
            let v_hat = f64::from(*vi) / bc2;
            *w -= (f64::from(lr) * m_hat / (v_hat.sqrt() + f64::from(epsilon))) as f32;
        }
    }
}

/// Padding value for character slots past an example's end. It is never fed
/// to the network; it is out of range for every vocabulary.
pub const PAD_CHAR: usize = usize::MAX;

/// Padded mini-batch. Row `e` holds example `e`; `mask[e][t]` is true iff
/// `t < lengths[e]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Positions of the members in the source corpus.
    pub indices: Vec<usize>,
    pub lengths: Vec<usize>,
    pub max_len: usize,
    pub char_ids: Vec<Vec<usize>>,
    pub labels: Vec<Vec<LabelClass>>,
    pub mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn from_examples(corpus: &[EncodedExample], indices: Vec<usize>) -> Self {
        let lengths: Vec<usize> = indices.iter().map(|&i| corpus[i].len()).collect();
        let max_len = lengths.iter().copied().max().unwrap_or(0);
        let mut char_ids = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        let mut mask = Vec::with_capacity(indices.len());
        for &i in &indices {
            let ex = &corpus[i];
            let mut ids = ex.char_ids.clone();
            ids.resize(max_len, PAD_CHAR);
            let mut lab = ex.label_ids.clone();
            lab.resize(max_len, LabelClass::NoSpace);
            let mut m = vec![true; ex.len()];
            m.resize(max_len, false);
            char_ids.push(ids);
            labels.push(lab);
            mask.push(m);
        }
        Self { indices, lengths, max_len, char_ids, labels, mask }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Unpadded characters and labels of member `e`.
    pub fn example(&self, e: usize) -> (&[usize], &[LabelClass]) {
        let n = self.lengths[e];
        (&self.char_ids[e][..n], &self.labels[e][..n])
    }

    pub fn token_count(&self) -> usize {
        self.mask.iter().flatten().filter(|&&m| m).count()
    }
}

const BUCKET_POOL: usize = 32;

/// Split `corpus` into batches. Without shuffling, corpus order is kept.
/// With shuffling, examples are permuted by `seed`, sorted by length within
/// pools of `BUCKET_POOL` batches, and the resulting batches permuted again.
pub fn make_batches(corpus: &[EncodedExample], batch_size: usize, seed: u64, shuffle: bool) -> Vec<Batch> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        for pool in order.chunks(batch_size * BUCKET_POOL) {
            let mut pool = pool.to_vec();
            pool.sort_by_key(|&i| corpus[i].len());
            groups.extend(pool.chunks(batch_size).map(<[usize]>::to_vec));
        }
        groups.shuffle(&mut rng);
    } else {
        groups.extend(order.chunks(batch_size).map(<[usize]>::to_vec));
    }
    groups.into_iter().map(|idx| Batch::from_examples(corpus, idx)).collect()
}

/// Summed NLL, token count and gradients of the batch-mean loss.
///
/// Members are split into `threads` contiguous chunks; each chunk is
/// accumulated serially and chunk results are summed in chunk order, so the
/// result depends on `threads` only through rounding.
pub fn batch_gradients(
    m: &ModelParams,
    batch: &Batch,
    threads: usize,
    kernel: Kernel,
) -> Result<(f64, usize, Gradients), TrainError> {
    let tokens = batch.token_count();
    if tokens == 0 {
        return Err(TrainError::EmptyMask);
    }
    let weight = 1.0 / tokens as f32;
    let members: Vec<usize> = (0..batch.len()).collect();
    let chunk = members.len().div_ceil(threads.max(1)).max(1);
    let run_chunk = |chunk: &[usize]| -> Result<(f64, Gradients), TrainError> {
        let mut grads = Gradients::zeros(m.dims);
        let mut loss = 0.0;
        for &e in chunk {
            let (ids, labels) = batch.example(e);
            let trace = model_forward_with(m, ids, kernel)?;
            let mask = vec![true; ids.len()];
            loss += nll_sum(&trace.probs, labels, &mask).0;
            accumulate_gradients(m, &trace, labels, &mask, weight, &mut grads, kernel);
        }
        Ok((loss, grads))
    };
    let parts: Vec<Result<(f64, Gradients), TrainError>> = if threads <= 1 {
        vec![run_chunk(&members)]
    } else {
        members.par_chunks(chunk).map(run_chunk).collect()
    };
    let mut total = Gradients::zeros(m.dims);
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        total.add_assign(&g);
    }
    Ok((loss, tokens, total))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stacks: usize,
    pub hidden_dim: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub epochs: usize,
    pub seed: u64,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub clip: Option<f64>,
    pub shuffle: bool,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stacks: 2,
            hidden_dim: 100,
            batch_size: 128,
            lr: 0.001,
            epochs: 100,
            seed: 1,
            clip: Some(5.0),
            shuffle: true,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |what: &str| Err(TrainError::InvalidConfig(what.to_string()));
        if self.stacks == 0 {
            return bad("stacks must be positive");
        }
        if self.hidden_dim == 0 {
            return bad("hidden dimension must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.threads == 0 {
            return bad("thread count must be positive");
        }
        if matches!(self.clip, Some(c) if !(c > 0.0)) {
            return bad("clip threshold must be positive");
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub heldout_accuracy: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_params: ModelParams,
    /// Parameters with the best held-out overall accuracy; epoch 0 is the
    /// initialization. Equal to the final parameters without a held-out set.
    pub best_params: ModelParams,
    pub best_epoch: usize,
    pub best_accuracy: Option<f64>,
    pub log: Vec<EpochRecord>,
}

pub fn train(
    config: &TrainConfig,
    vocab: &CharVocab,
    train_corpus: &[TaggedSentence],
    heldout: &[TaggedSentence],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| TrainError::ThreadPool(e.to_string()))?;
    let examples: Vec<EncodedExample> = train_corpus.iter().map(|s| encode_sentence(s, vocab)).collect();
    let dims = ModelDims::new(vocab.one_hot_dim(), config.hidden_dim, config.stacks);
    let mut params = init_params(config.seed, dims);
    let mut adam = AdamState::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, &params);
    let mut best = (params.clone(), 0usize, None::<f64>);
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let batches = make_batches(&examples, config.batch_size, config.seed.wrapping_add(epoch as u64), config.shuffle);
        let mut loss_sum = 0.0;
        let mut token_sum = 0usize;
        for (b, batch) in batches.iter().enumerate() {
            let (loss, tokens, mut grads) = pool.install(|| batch_gradients(&params, batch, config.threads, Kernel::Blocked))?;
            let mean = loss / tokens as f64;
            if !mean.is_finite() || !grads.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b, loss: mean });
            }
            if let Some(threshold) = config.clip {
                grads.clip_global_norm(threshold);
            }
            adam_step(&mut adam, &mut params, &grads);
            loss_sum += loss;
            token_sum += tokens;
        }
        let heldout_accuracy = if heldout.is_empty() {
            None
        } else {
            Some(pool.install(|| metrics::evaluate(&params, heldout, vocab))?.overall_accuracy)
        };
        if let Some(acc) = heldout_accuracy {
            if best.2.is_none_or(|b| acc > b) {
                best = (params.clone(), epoch, Some(acc));
            }
        }
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / token_sum.max(1) as f64,
            heldout_accuracy,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.push(record);
    }

    let (best_params, best_epoch, best_accuracy) =
        if heldout.is_empty() { (params.clone(), config.epochs, None) } else { best };
    Ok(TrainOutcome { final_params: params, best_params, best_epoch, best_accuracy, log })
}
