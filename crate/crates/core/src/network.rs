//! Character-level bidirectional LSTM.
//!
//! Two independent directional stacks read the one-hot character sequence,
//! one left-to-right and one right-to-left. The top hidden vectors of the two
//! stacks are concatenated per timestep and projected to `num_classes`
//! logits, followed by a softmax. Gates carry no bias; the output projection
//! does.
//!
//! Gate equations, per step:
//!
//! ```text
//! f = σ(U_f h' + W_f x)     k = c' ⊙ f
//! g = tanh(U_g h' + W_g x)  i = σ(U_i h' + W_i x)   j = g ⊙ i
//! c = j + k                 o = σ(U_o h' + W_o x)   h = o ⊙ tanh(c)
//! ```

use crate::corpus::LabelClass;
use crate::mathcore::{
    argmax, concat, dot, hadamard, matmul_nt, matvec, matvec_into, sigmoid, sigmoid_scalar, softmax_in_place,
    tanh_act, Kernel, Matrix, Vector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetworkError {
    #[error("character index {index} at position {position} is outside the one-hot dimension {dim}")]
    IndexOutOfRange { index: usize, position: usize, dim: usize },
    #[error("empty input sequence")]
    EmptySequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub stacks: usize,
}

impl ModelDims {
    /// Dimensions for a vocabulary of `input_dim` one-hot slots and the
    /// 16 output classes.
    pub fn new(input_dim: usize, hidden_dim: usize, stacks: usize) -> Self {
        Self { input_dim, hidden_dim, num_classes: LabelClass::COUNT, stacks }
    }

    fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }
}

/// Simple recurrent cell `h = tanh(U h' + W x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ElmanParams {
    pub u: Matrix,
    pub w: Matrix,
}

pub fn elman_cell(p: &ElmanParams, h_prev: &Vector, x: &Vector) -> Vector {
    tanh_act(&matvec(&p.u, h_prev).add(&matvec(&p.w, x)))
}

/// The eight gate matrices of one LSTM layer. `u_*` are hidden×hidden,
/// `w_*` are hidden×input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmCellParams {
    pub u_f: Matrix,
    pub w_f: Matrix,
    pub u_g: Matrix,
    pub w_g: Matrix,
    pub u_i: Matrix,
    pub w_i: Matrix,
    pub u_o: Matrix,
    pub w_o: Matrix,
}

pub const CELL_TENSOR_NAMES: [&str; 8] = ["u_f", "w_f", "u_g", "w_g", "u_i", "w_i", "u_o", "w_o"];

impl LstmCellParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let u = || Matrix::zeros(hidden_dim, hidden_dim);
        let w = || Matrix::zeros(hidden_dim, input_dim);
        Self { u_f: u(), w_f: w(), u_g: u(), w_g: w(), u_i: u(), w_i: w(), u_o: u(), w_o: w() }
    }

    pub fn hidden_dim(&self) -> usize {
        self.u_f.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_f.cols()
    }

    pub fn matrices(&self) -> [&Matrix; 8] {
        [&self.u_f, &self.w_f, &self.u_g, &self.w_g, &self.u_i, &self.w_i, &self.u_o, &self.w_o]
    }

    pub fn matrices_mut(&mut self) -> [&mut Matrix; 8] {
        [
            &mut self.u_f,
            &mut self.w_f,
            &mut self.u_g,
            &mut self.w_g,
            &mut self.u_i,
            &mut self.w_i,
            &mut self.u_o,
            &mut self.w_o,
        ]
    }

    /// `(u, w)` per gate in forget, candidate, input, output order.
    pub fn gates(&self) -> [(&Matrix, &Matrix); 4] {
        [(&self.u_f, &self.w_f), (&self.u_g, &self.w_g), (&self.u_i, &self.w_i), (&self.u_o, &self.w_o)]
    }

    pub fn is_well_formed(&self) -> bool {
        let (h, x) = (self.hidden_dim(), self.input_dim());
        self.gates().iter().all(|(u, w)| u.rows() == h && u.cols() == h && w.rows() == h && w.cols() == x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vector,
    pub c: Vector,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self { h: Vector::zeros(hidden_dim), c: Vector::zeros(hidden_dim) }
    }
}

/// Every intermediate of one cell step.
#[derive(Clone, Debug, PartialEq)]
pub struct GateTrace {
    pub f: Vector,
    pub k: Vector,
    pub g: Vector,
    pub i: Vector,
    pub j: Vector,
    pub c: Vector,
    pub o: Vector,
    pub h: Vector,
}

/// Replacement gate values, used to probe the cell's masking behaviour.
#[derive(Clone, Debug, Default)]
pub struct GateOverrides {
    pub forget: Option<Vector>,
    pub add: Option<Vector>,
}

pub fn lstm_cell(p: &LstmCellParams, s: &LstmState, x: &Vector) -> (LstmState, GateTrace) {
    lstm_cell_patched(p, s, x, &GateOverrides::default())
}

pub fn lstm_cell_patched(
    p: &LstmCellParams,
    s: &LstmState,
    x: &Vector,
    overrides: &GateOverrides,
) -> (LstmState, GateTrace) {
    let pre = |u: &Matrix, w: &Matrix| matvec(u, &s.h).add(&matvec(w, x));
    let f = overrides.forget.clone().unwrap_or_else(|| sigmoid(&pre(&p.u_f, &p.w_f)));
    let k = hadamard(&s.c, &f);
    let g = tanh_act(&pre(&p.u_g, &p.w_g));
    let i = sigmoid(&pre(&p.u_i, &p.w_i));
    let j = overrides.add.clone().unwrap_or_else(|| hadamard(&g, &i));
    let c = j.add(&k);
    let o = sigmoid(&pre(&p.u_o, &p.w_o));
    let h = hadamard(&o, &tanh_act(&c));
    let state = LstmState { h: h.clone(), c: c.clone() };
    (state, GateTrace { f, k, g, i, j, c, o, h })
}

/// Run a directional stack over dense inputs and return the top layer's
/// hidden vectors in original timestep order.
pub fn run_direction(layers: &[LstmCellParams], inputs: &[Vector], reversed: bool) -> Vec<Vector> {
    let mut seq: Vec<Vector> = if reversed { inputs.iter().rev().cloned().collect() } else { inputs.to_vec() };
    for layer in layers {
        let mut state = LstmState::zeros(layer.hidden_dim());
        let mut out = Vec::with_capacity(seq.len());
        for x in &seq {
            state = lstm_cell(layer, &state, x).0;
            out.push(state.h.clone());
        }
        seq = out;
    }
    if reversed {
        seq.reverse();
    }
    seq
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub forward: Vec<LstmCellParams>,
    pub backward: Vec<LstmCellParams>,
    /// `num_classes × 2·hidden_dim`; columns are `[h_forward ; h_backward]`.
    pub output: Matrix,
    pub output_bias: Vector,
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        let stack = || {
            (0..dims.stacks)
                .map(|l| LstmCellParams::zeros(dims.layer_input_dim(l), dims.hidden_dim))
                .collect::<Vec<_>>()
        };
        Self {
            dims,
            forward: stack(),
            backward: stack(),
            output: Matrix::zeros(dims.num_classes, 2 * dims.hidden_dim),
            output_bias: Vector::zeros(dims.num_classes),
        }
    }

    pub fn stack(&self, dir: Direction) -> &[LstmCellParams] {
        match dir {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }

    /// All parameter tensors in the canonical order: forward stack layers,
    /// backward stack layers (eight matrices each, [`CELL_TENSOR_NAMES`]
    /// order), output matrix, output bias.
    pub fn tensors(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for layer in self.forward.iter().chain(&self.backward) {
            out.extend(layer.matrices().into_iter().map(Matrix::data));
        }
        out.push(self.output.data());
        out.push(&self.output_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for layer in self.forward.iter_mut().chain(self.backward.iter_mut()) {
            out.extend(layer.matrices_mut().into_iter().map(Matrix::data_mut));
        }
        out.push(self.output.data_mut());
        out.push(&mut self.output_bias);
        out
    }

    /// `(name, rows, cols)` for each tensor, matching [`Self::tensors`].
    pub fn tensor_shapes(&self) -> Vec<(String, usize, usize)> {
        tensor_shapes(&self.dims)
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Checks every tensor against `dims`.
    pub fn is_well_formed(&self) -> bool {
        let d = &self.dims;
        let stack_ok = |stack: &[LstmCellParams]| {
            stack.len() == d.stacks
                && stack.iter().enumerate().all(|(l, p)| {
                    p.is_well_formed() && p.hidden_dim() == d.hidden_dim && p.input_dim() == d.layer_input_dim(l)
                })
        };
        stack_ok(&self.forward)
            && stack_ok(&self.backward)
            && self.output.rows() == d.num_classes
            && self.output.cols() == 2 * d.hidden_dim
            && self.output_bias.dim() == d.num_classes
    }
}

/// Tensor inventory implied by `dims`, in canonical order.
pub fn tensor_shapes(dims: &ModelDims) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    for dir in ["forward", "backward"] {
        for l in 0..dims.stacks {
            for name in CELL_TENSOR_NAMES {
                let cols = if name.starts_with('u') { dims.hidden_dim } else { dims.layer_input_dim(l) };
                out.push((format!("{dir}.{l}.{name}"), dims.hidden_dim, cols));
            }
        }
    }
    out.push(("output.weight".to_string(), dims.num_classes, 2 * dims.hidden_dim));
    out.push(("output.bias".to_string(), dims.num_classes, 1));
    out
}

/// Uniform `±1/√fan_in` weights from a seeded ChaCha stream; zero output bias.
pub fn init_params(seed: u64, dims: ModelDims) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(dims);
    let shapes = params.tensor_shapes();
    let n = shapes.len();
    for (idx, (tensor, (_, _, cols))) in params.tensors_mut().into_iter().zip(shapes).enumerate() {
        if idx == n - 1 {
            continue;
        }
        let bound = 1.0 / (cols as f32).sqrt();
        for w in tensor.iter_mut() {
            *w = rng.gen_range(-bound..=bound);
        }
    }
    params
}

/// Activations of one layer over a sequence, rows in processing order.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    pub f: Matrix,
    pub k: Matrix,
    pub g: Matrix,
    pub i: Matrix,
    pub j: Matrix,
    pub c: Matrix,
    pub o: Matrix,
    pub h: Matrix,
}

/// One directional stack's trace. Row `s` of each layer is processing step
/// `s`; for the backward stack that is original timestep `len - 1 - s`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionTrace {
    pub reversed: bool,
    /// Character indices in processing order.
    pub ids: Vec<usize>,
    pub layers: Vec<LayerTrace>,
}

impl DirectionTrace {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Processing step that handled original timestep `t`.
    pub fn step_of(&self, t: usize) -> usize {
        if self.reversed {
            self.len() - 1 - t
        } else {
            t
        }
    }

    /// Top-layer hidden vector at original timestep `t`.
    pub fn output_at(&self, t: usize) -> &[f32] {
        self.layers.last().expect("at least one layer").h.row(self.step_of(t))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub forward: DirectionTrace,
    pub backward: DirectionTrace,
    /// `T × 2·hidden`, `[h_forward ; h_backward]` per original timestep.
    pub hidden: Matrix,
    pub logits: Matrix,
    pub probs: Matrix,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.rows() == 0
    }

    pub fn direction(&self, dir: Direction) -> &DirectionTrace {
        match dir {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }
}

/// Input to one layer: character indices (one-hot, never materialized) or
/// the dense hidden outputs of the layer below.
#[derive(Clone, Copy, Debug)]
pub enum LayerInput<'a> {
    OneHot(&'a [usize]),
    Dense(&'a Matrix),
}

impl LayerInput<'_> {
    pub fn len(&self) -> usize {
        match self {
            LayerInput::OneHot(ids) => ids.len(),
            LayerInput::Dense(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `W · x` for every step, as a `T × rows(W)` matrix.
pub fn input_projection(w: &Matrix, input: LayerInput<'_>, kernel: Kernel) -> Matrix {
    match input {
        LayerInput::OneHot(ids) => {
            let mut out = Matrix::zeros(ids.len(), w.rows());
            for (s, &id) in ids.iter().enumerate() {
                for (r, o) in out.row_mut(s).iter_mut().enumerate() {
                    *o = w.get(r, id);
                }
            }
            out
        }
        LayerInput::Dense(x) => match kernel {
            Kernel::Blocked => matmul_nt(x, w, Kernel::Blocked),
            Kernel::Reference => {
                let mut out = Matrix::zeros(x.rows(), w.rows());
                for s in 0..x.rows() {
                    matvec_into(w, x.row(s), out.row_mut(s));
                }
                out
            }
        },
    }
}

pub fn forward_layer(p: &LstmCellParams, input: LayerInput<'_>, kernel: Kernel) -> LayerTrace {
    let steps = input.len();
    let hd = p.hidden_dim();
    let [proj_f, proj_g, proj_i, proj_o] = [&p.w_f, &p.w_g, &p.w_i, &p.w_o].map(|w| input_projection(w, input, kernel));
    let z = || Matrix::zeros(steps, hd);
    let mut tr = LayerTrace { f: z(), k: z(), g: z(), i: z(), j: z(), c: z(), o: z(), h: z() };
    let mut h_prev = vec![0.0f32; hd];
    let mut c_prev = vec![0.0f32; hd];
    for s in 0..steps {
        for r in 0..hd {
            let f = sigmoid_scalar(dot(p.u_f.row(r), &h_prev) + proj_f.get(s, r));
            let g = (dot(p.u_g.row(r), &h_prev) + proj_g.get(s, r)).tanh();
            let i = sigmoid_scalar(dot(p.u_i.row(r), &h_prev) + proj_i.get(s, r));
            let o = sigmoid_scalar(dot(p.u_o.row(r), &h_prev) + proj_o.get(s, r));
            let k = c_prev[r] * f;
            let j = g * i;
            let c = j + k;
            tr.f.set(s, r, f);
            tr.g.set(s, r, g);
            tr.i.set(s, r, i);
            tr.o.set(s, r, o);
            tr.k.set(s, r, k);
            tr.j.set(s, r, j);
            tr.c.set(s, r, c);
            tr.h.set(s, r, o * c.tanh());
        }
        h_prev.copy_from_slice(tr.h.row(s));
        c_prev.copy_from_slice(tr.c.row(s));
    }
    tr
}

fn forward_direction(layers: &[LstmCellParams], char_ids: &[usize], reversed: bool, kernel: Kernel) -> DirectionTrace {
    let ids: Vec<usize> = if reversed { char_ids.iter().rev().copied().collect() } else { char_ids.to_vec() };
    let mut traces: Vec<LayerTrace> = Vec::with_capacity(layers.len());
    for (l, p) in layers.iter().enumerate() {
        let tr = if l == 0 {
            forward_layer(p, LayerInput::OneHot(&ids), kernel)
        } else {
            forward_layer(p, LayerInput::Dense(&traces[l - 1].h), kernel)
        };
        traces.push(tr);
    }
    DirectionTrace { reversed, ids, layers: traces }
}

fn check_ids(m: &ModelParams, char_ids: &[usize]) -> Result<(), NetworkError> {
    if char_ids.is_empty() {
        return Err(NetworkError::EmptySequence);
    }
    let dim = m.dims.input_dim;
    match char_ids.iter().position(|&i| i >= dim) {
        Some(position) => Err(NetworkError::IndexOutOfRange { index: char_ids[position], position, dim }),
        None => Ok(()),
    }
}

pub fn model_forward(m: &ModelParams, char_ids: &[usize]) -> Result<ForwardTrace, NetworkError> {
    model_forward_with(m, char_ids, Kernel::Blocked)
}

pub fn model_forward_with(m: &ModelParams, char_ids: &[usize], kernel: Kernel) -> Result<ForwardTrace, NetworkError> {
    check_ids(m, char_ids)?;
    let steps = char_ids.len();
    let hd = m.dims.hidden_dim;
    let fwd = forward_direction(&m.forward, char_ids, false, kernel);
    let bwd = forward_direction(&m.backward, char_ids, true, kernel);
    let mut hidden = Matrix::zeros(steps, 2 * hd);
    for t in 0..steps {
        let row = hidden.row_mut(t);
        row[..hd].copy_from_slice(fwd.output_at(t));
        row[hd..].copy_from_slice(bwd.output_at(t));
    }
    let mut logits = input_projection(&m.output, LayerInput::Dense(&hidden), kernel);
    for t in 0..steps {
        for (z, b) in logits.row_mut(t).iter_mut().zip(m.output_bias.iter()) {
            *z += b;
        }
    }
    let mut probs = logits.clone();
    for t in 0..steps {
        softmax_in_place(probs.row_mut(t));
    }
    Ok(ForwardTrace { forward: fwd, backward: bwd, hidden, logits, probs })
}

/// Per-row argmax over class probabilities, lowest index on ties.
pub fn argmax_labels(probs: &Matrix) -> Vec<LabelClass> {
    (0..probs.rows())
        .map(|t| LabelClass::from_code(argmax(probs.row(t))).expect("class index within the 16 labels"))
        .collect()
}

pub fn predict_tags(m: &ModelParams, char_ids: &[usize]) -> Result<Vec<LabelClass>, NetworkError> {
    Ok(argmax_labels(&model_forward(m, char_ids)?.probs))
}

/// Straight vector-op evaluation of the full model on dense one-hot inputs.
/// Slow; used to cross-check the sequence kernels.
pub fn model_forward_dense(m: &ModelParams, char_ids: &[usize]) -> Result<Vec<Vector>, NetworkError> {
    check_ids(m, char_ids)?;
    let inputs: Vec<Vector> = char_ids
        .iter()
        .map(|&id| {
            let mut v = Vector::zeros(m.dims.input_dim);
            v[id] = 1.0;
            v
        })
        .collect();
    let fwd = run_direction(&m.forward, &inputs, false);
    let bwd = run_direction(&m.backward, &inputs, true);
    Ok(fwd
        .iter()
        .zip(&bwd)
        .map(|(f, b)| {
            let mut z = matvec(&m.output, &concat(f, b)).add(&m.output_bias);
            softmax_in_place(&mut z);
            z
        })
        .collect())
}
