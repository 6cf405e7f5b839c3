//! Test-only oracles: a straight-loop `f64` re-implementation of the model
//! and central finite differences over it. Nothing here calls the library's
//! forward or backward code; it only reads parameters through the canonical
//! tensor order.

#![allow(dead_code)]

use jointtag::corpus::LabelClass;
use jointtag::network::{ModelDims, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

fn to_mat(data: &[f32], rows: usize, cols: usize) -> Mat {
    (0..rows).map(|r| (0..cols).map(|c| f64::from(data[r * cols + c])).collect()).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// 64-bit shadow copy of a model, one flat array per tensor.
#[derive(Clone, Debug)]
pub struct Shadow {
    pub dims: ModelDims,
    pub tensors: Vec<Vec<f64>>,
}

impl Shadow {
    pub fn of(m: &ModelParams) -> Self {
        Self { dims: m.dims, tensors: m.tensors().iter().map(|t| t.iter().map(|&x| f64::from(x)).collect()).collect() }
    }

    fn layer_in(&self, l: usize) -> usize {
        if l == 0 {
            self.dims.input_dim
        } else {
            self.dims.hidden_dim
        }
    }

    /// `[u_f, w_f, u_g, w_g, u_i, w_i, u_o, w_o]` for a direction (0 fwd, 1 bwd) and layer.
    fn cell(&self, dir: usize, layer: usize) -> Vec<Mat> {
        let base = (dir * self.dims.stacks + layer) * 8;
        let h = self.dims.hidden_dim;
        (0..8)
            .map(|k| {
                let cols = if k % 2 == 0 { h } else { self.layer_in(layer) };
                let t = &self.tensors[base + k];
                (0..h).map(|r| t[r * cols..(r + 1) * cols].to_vec()).collect()
            })
            .collect()
    }

    fn output(&self) -> (Mat, Vec<f64>) {
        let n = self.tensors.len();
        let cols = 2 * self.dims.hidden_dim;
        let w = &self.tensors[n - 2];
        let out = (0..self.dims.num_classes).map(|r| w[r * cols..(r + 1) * cols].to_vec()).collect();
        (out, self.tensors[n - 1].clone())
    }
}

fn mv(m: &Mat, v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// One LSTM step over plain nested vectors. Returns `(h, c)`.
pub fn ref_lstm_step(cell: &[Mat], h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let gate = |u: &Mat, w: &Mat| -> Vec<f64> { mv(u, h_prev).iter().zip(mv(w, x)).map(|(a, b)| a + b).collect() };
    let f: Vec<f64> = gate(&cell[0], &cell[1]).into_iter().map(sig).collect();
    let g: Vec<f64> = gate(&cell[2], &cell[3]).into_iter().map(f64::tanh).collect();
    let i: Vec<f64> = gate(&cell[4], &cell[5]).into_iter().map(sig).collect();
    let o: Vec<f64> = gate(&cell[6], &cell[7]).into_iter().map(sig).collect();
    let n = h_prev.len();
    let c: Vec<f64> = (0..n).map(|r| g[r] * i[r] + c_prev[r] * f[r]).collect();
    let h: Vec<f64> = (0..n).map(|r| o[r] * c[r].tanh()).collect();
    (h, c)
}

/// The eight gate matrices of a zero-bias cell, sized from `f32` slices.
pub fn cell_from_f32(mats: [&[f32]; 8], input: usize, hidden: usize) -> Vec<Mat> {
    mats.iter().enumerate().map(|(k, d)| to_mat(d, hidden, if k % 2 == 0 { hidden } else { input })).collect()
}

fn ref_direction(s: &Shadow, dir: usize, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut seq: Vec<Vec<f64>> = if dir == 1 { xs.iter().rev().cloned().collect() } else { xs.to_vec() };
    let h = s.dims.hidden_dim;
    for l in 0..s.dims.stacks {
        let cell = s.cell(dir, l);
        let (mut hp, mut cp) = (vec![0.0; h], vec![0.0; h]);
        let mut out = Vec::new();
        for x in &seq {
            let (hn, cn) = ref_lstm_step(&cell, &hp, &cp, x);
            out.push(hn.clone());
            hp = hn;
            cp = cn;
        }
        seq = out;
    }
    if dir == 1 {
        seq.reverse();
    }
    seq
}

/// Class probabilities per timestep.
pub fn ref_probs(s: &Shadow, ids: &[usize]) -> Vec<Vec<f64>> {
    let xs: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            let mut v = vec![0.0; s.dims.input_dim];
            v[id] = 1.0;
            v
        })
        .collect();
    let fwd = ref_direction(s, 0, &xs);
    let bwd = ref_direction(s, 1, &xs);
    let (w, b) = s.output();
    fwd.iter()
        .zip(&bwd)
        .map(|(f, bk)| {
            let hcat: Vec<f64> = f.iter().chain(bk).copied().collect();
            let z: Vec<f64> = mv(&w, &hcat).iter().zip(&b).map(|(a, c)| a + c).collect();
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = e.iter().sum();
            e.iter().map(|v| v / sum).collect()
        })
        .collect()
}

pub fn ref_loss(s: &Shadow, ids: &[usize], labels: &[LabelClass], mask: &[bool]) -> f64 {
    let p = ref_probs(s, ids);
    let n = mask.iter().filter(|&&m| m).count() as f64;
    let mut sum = 0.0;
    for t in 0..ids.len() {
        if mask[t] {
            sum -= p[t][labels[t].code()].max(1e-12).ln();
        }
    }
    sum / n
}

/// Central differences of [`ref_loss`] for every coordinate.
pub fn fd_gradient(m: &ModelParams, ids: &[usize], labels: &[LabelClass], mask: &[bool], h: f64) -> Vec<Vec<f64>> {
    let base = Shadow::of(m);
    let mut out = Vec::with_capacity(base.tensors.len());
    let mut probe = base.clone();
    for k in 0..base.tensors.len() {
        let mut g = vec![0.0; base.tensors[k].len()];
        for (i, gi) in g.iter_mut().enumerate() {
            let w = base.tensors[k][i];
            probe.tensors[k][i] = w + h;
            let up = ref_loss(&probe, ids, labels, mask);
            probe.tensors[k][i] = w - h;
            let down = ref_loss(&probe, ids, labels, mask);
            probe.tensors[k][i] = w;
            *gi = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// Random model with weights uniform in `[-scale, scale]`, including the output bias.
pub fn random_model(rng: &mut ChaCha8Rng, dims: ModelDims, scale: f32) -> ModelParams {
    let mut m = ModelParams::zeros(dims);
    for t in m.tensors_mut() {
        t.iter_mut().for_each(|w| *w = rng.gen_range(-scale..=scale));
    }
    m
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<LabelClass> {
    (0..n).map(|_| LabelClass::from_code(rng.gen_range(0..LabelClass::COUNT)).unwrap()).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Agreement rule for gradient checks: 1e-4 relative or 1e-6 absolute.
pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= 1e-6 || diff <= 1e-4 * analytic.abs().max(numeric.abs())
}

/// Run one randomized gradient check; returns the worst offending coordinate, if any.
pub fn gradient_check_case(seed: u64, masked: bool) -> Result<usize, String> {
    use jointtag::network::model_forward;
    use jointtag::training::backward;
    let mut r = rng(seed);
    let hidden = [2, 3, 4][r.gen_range(0..3)];
    let vocab = r.gen_range(2..=6);
    let len = r.gen_range(1..=5);
    let stacks = 2;
    let dims = ModelDims::new(vocab, hidden, stacks);
    let m = random_model(&mut r, dims, 0.8);
    let ids: Vec<usize> = (0..len).map(|_| r.gen_range(0..vocab)).collect();
    let labels = random_labels(&mut r, len);
    let mut mask = vec![true; len];
    if masked && len > 1 {
        let drop = r.gen_range(0..len);
        mask[drop] = false;
    }
    let trace = model_forward(&m, &ids).map_err(|e| e.to_string())?;
    let analytic = backward(&m, &trace, &labels, &mask).map_err(|e| e.to_string())?;
    let numeric = fd_gradient(&m, &ids, &labels, &mask, 1e-3);
    let shapes = m.tensor_shapes();
    let mut checked = 0;
    for ((a, n), (name, _, _)) in analytic.tensors().iter().zip(&numeric).zip(&shapes) {
        for (i, (&ai, &ni)) in a.iter().zip(n).enumerate() {
            checked += 1;
            if !grad_close(f64::from(ai), ni) {
                return Err(format!(
                    "seed {seed} (hidden {hidden}, vocab {vocab}, len {len}, masked {masked}): {name}[{i}] analytic {ai:e} vs numeric {ni:e}"
                ));
            }
        }
    }
    Ok(checked)
}

pub const OVERFIT_LINES: [&str; 2] = ["ខ្ញុំ/PRO ស្រឡាញ់/VB ខ្មែរ/PN ។/SYM", "សិស្ស/NN ដើរ/VB ទៅ/IN ភ្នំពេញ/PN ។/SYM"];

/// Configuration of the two-sentence memorisation run.
pub fn overfit_config() -> jointtag::training::TrainConfig {
    jointtag::training::TrainConfig { hidden_dim: 32, epochs: 300, lr: 0.01, seed: 1, ..Default::default() }
}

pub fn overfit_corpus() -> Vec<jointtag::corpus::TaggedSentence> {
    jointtag::corpus::parse_corpus(&OVERFIT_LINES.join("\n")).expect("fixture parses")
}

/// Word triples `(start, end, tag)` of a sentence, computed from scratch.
pub fn triples(s: &jointtag::corpus::TaggedSentence) -> std::collections::HashSet<(usize, usize, usize)> {
    let mut out = std::collections::HashSet::new();
    let mut pos = 0;
    for w in &s.words {
        let n = w.text.chars().count();
        out.insert((pos, pos + n, w.tag.code()));
        pos += n;
    }
    out
}

/// Brute-force scores: (correct spans, reference words, correct span+tag, per-tag correct, per-tag totals).
pub fn brute_force_scores(
    reference: &[jointtag::corpus::TaggedSentence],
    hypothesis: &[jointtag::corpus::TaggedSentence],
) -> (usize, usize, usize, [usize; 15], [usize; 15]) {
    let (mut seg, mut words, mut tagged) = (0, 0, 0);
    let (mut per_correct, mut per_total) = ([0usize; 15], [0usize; 15]);
    for (r, h) in reference.iter().zip(hypothesis) {
        let rt = triples(r);
        let ht = triples(h);
        let hspans: std::collections::HashSet<(usize, usize)> = ht.iter().map(|&(a, b, _)| (a, b)).collect();
        words += rt.len();
        for &(a, b, t) in &rt {
            per_total[t] += 1;
            if hspans.contains(&(a, b)) {
                seg += 1;
            }
            if ht.contains(&(a, b, t)) {
                tagged += 1;
                per_correct[t] += 1;
            }
        }
    }
    (seg, words, tagged, per_correct, per_total)
}

/// A random reference sentence over a tiny alphabet and a hypothesis that
/// re-segments and re-tags the same characters.
pub fn random_pair(r: &mut ChaCha8Rng) -> (jointtag::corpus::TaggedSentence, jointtag::corpus::TaggedSentence) {
    use jointtag::corpus::{PosTag, TaggedSentence, Word};
    let len = r.gen_range(1..=12);
    let chars: Vec<char> = (0..len).map(|_| ['ក', 'ខ', 'គ', 'ង'][r.gen_range(0..4)]).collect();
    let make = |r: &mut ChaCha8Rng, p_break: f64, tags: usize| {
        let mut words: Vec<Word> = Vec::new();
        for (i, &c) in chars.iter().enumerate() {
            if i == 0 || r.gen_bool(p_break) {
                words.push(Word::new(String::new(), PosTag::from_code(r.gen_range(0..tags)).unwrap()));
            }
            words.last_mut().unwrap().text.push(c);
        }
        TaggedSentence::new(words)
    };
    let reference = make(r, 0.4, 15);
    let hypothesis = if r.gen_bool(0.2) {
        reference.clone()
    } else {
        let p = r.gen_range(0.1..0.9);
        let tags = r.gen_range(1..=15);
        make(r, p, tags)
    };
    (reference, hypothesis)
}

pub fn random_corpus(seed: u64) -> (Vec<jointtag::corpus::TaggedSentence>, Vec<jointtag::corpus::TaggedSentence>) {
    let mut r = rng(seed);
    let n = r.gen_range(1..=6);
    (0..n).map(|_| random_pair(&mut r)).unzip()
}

/// Compare one corpus pair against the triple-intersection oracle.
pub fn agrees_with_oracle(reference: &[jointtag::corpus::TaggedSentence], hypothesis: &[jointtag::corpus::TaggedSentence]) -> Result<(), String> {
    let (seg, words, tagged, per_correct, per_total) = brute_force_scores(reference, hypothesis);
    let s = jointtag::metrics::segmentation_accuracy(reference, hypothesis).map_err(|e| e.to_string())?;
    if s != seg as f64 / words as f64 {
        return Err(format!("segmentation {s} vs {seg}/{words}"));
    }
    let t = jointtag::metrics::tag_accuracy(reference, hypothesis).map_err(|e| e.to_string())?;
    if t.overall != tagged as f64 / words as f64 {
        return Err(format!("overall {} vs {tagged}/{words}", t.overall));
    }
    for score in &t.per_tag {
        let k = score.tag.code();
        let expected = (per_total[k] > 0).then(|| per_correct[k] as f64 / per_total[k] as f64);
        if score.correct != per_correct[k] || score.total != per_total[k] || score.accuracy != expected {
            return Err(format!("{}: {:?} vs {}/{}", score.tag, score.accuracy, per_correct[k], per_total[k]));
        }
    }
    Ok(())
}


/// Largest deviation of `lstm_cell` from [`ref_lstm_step`] over `n` random 2-dimensional instances.
pub fn cell_oracle_max_diff(seed: u64, n: usize) -> f64 {
    use jointtag::mathcore::Vector;
    use jointtag::network::{lstm_cell, LstmCellParams, LstmState};
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let (input, hidden) = (2, 2);
        let mut p = LstmCellParams::zeros(input, hidden);
        for mat in p.matrices_mut() {
            mat.data_mut().iter_mut().for_each(|w| *w = r.gen_range(-1.5..1.5));
        }
        let h: Vec<f32> = (0..hidden).map(|_| r.gen_range(-1.0..1.0)).collect();
        let c: Vec<f32> = (0..hidden).map(|_| r.gen_range(-2.0..2.0)).collect();
        let x: Vec<f32> = (0..input).map(|_| r.gen_range(-1.0..1.0)).collect();
        let state = LstmState { h: Vector(h.clone()), c: Vector(c.clone()) };
        let (next, _) = lstm_cell(&p, &state, &Vector(x.clone()));
        let cell = cell_from_f32(p.matrices().map(|m| m.data()), input, hidden);
        let to64 = |v: &[f32]| v.iter().map(|&a| f64::from(a)).collect::<Vec<_>>();
        let (rh, rc) = ref_lstm_step(&cell, &to64(&h), &to64(&c), &to64(&x));
        for k in 0..hidden {
            worst = worst.max((f64::from(next.h[k]) - rh[k]).abs()).max((f64::from(next.c[k]) - rc[k]).abs());
        }
    }
    worst
}
