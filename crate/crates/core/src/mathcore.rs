//! Dense linear algebra and elementwise kernels.
//!
//! Storage is row-major `f32`. Dot products accumulate in `f64`. Shape
//! mismatches are programming errors and panic.

use serde::{Deserialize, Serialize};
use std::ops::{Deref, DerefMut};

/// Row-major dense matrix of `f32`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "shape error: {rows}x{cols} matrix needs {} values, got {}",
            rows * cols,
            data.len()
        );
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[&[f32]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "shape error: ragged rows");
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f32) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// Column `c` copied out as a vector.
    pub fn column(&self, c: usize) -> Vector {
        Vector((0..self.rows).map(|r| self.get(r, c)).collect())
    }
}

/// Dense `f32` vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vector(pub Vec<f32>);

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn add(&self, other: &Vector) -> Vector {
        assert_eq!(self.dim(), other.dim(), "shape error: vector add");
        Vector(self.iter().zip(other.iter()).map(|(a, b)| a + b).collect())
    }
}

impl From<Vec<f32>> for Vector {
    fn from(v: Vec<f32>) -> Self {
        Self(v)
    }
}

impl From<&[f32]> for Vector {
    fn from(v: &[f32]) -> Self {
        Self(v.to_vec())
    }
}

impl Deref for Vector {
    type Target = [f32];
    fn deref(&self) -> &[f32] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f32] {
        &mut self.0
    }
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc as f32
}

#[inline]
pub fn sigmoid_scalar(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn matvec(m: &Matrix, v: &Vector) -> Vector {
    let mut out = Vector::zeros(m.rows);
    matvec_into(m, v, &mut out);
    out
}

/// `out = m · v`.
pub fn matvec_into(m: &Matrix, v: &[f32], out: &mut [f32]) {
    assert_eq!(
        m.cols,
        v.len(),
        "shape error: {}x{} matrix times {}-vector",
        m.rows,
        m.cols,
        v.len()
    );
    assert_eq!(out.len(), m.rows, "shape error: matvec output");
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(m.row(r), v);
    }
}

/// `out += m · v`.
pub fn matvec_acc(m: &Matrix, v: &[f32], out: &mut [f32]) {
    assert_eq!(m.cols, v.len(), "shape error: matvec_acc input");
    assert_eq!(out.len(), m.rows, "shape error: matvec_acc output");
    for (r, o) in out.iter_mut().enumerate() {
        *o += dot(m.row(r), v);
    }
}

/// `out += mᵀ · v`.
pub fn matvec_t_acc(m: &Matrix, v: &[f32], out: &mut [f32]) {
    assert_eq!(m.rows, v.len(), "shape error: transposed matvec input");
    assert_eq!(out.len(), m.cols, "shape error: transposed matvec output");
    let mut acc = vec![0.0f64; m.cols];
    for (r, &scale) in v.iter().enumerate() {
        if scale == 0.0 {
            continue;
        }
        let s = f64::from(scale);
        for (a, w) in acc.iter_mut().zip(m.row(r)) {
            *a += s * f64::from(*w);
        }
    }
    for (o, a) in out.iter_mut().zip(acc) {
        *o += a as f32;
    }
}

/// `m += a ⊗ b`.
pub fn outer_acc(m: &mut Matrix, a: &[f32], b: &[f32]) {
    assert_eq!(m.rows, a.len(), "shape error: outer product rows");
    assert_eq!(m.cols, b.len(), "shape error: outer product cols");
    for (r, &ar) in a.iter().enumerate() {
        if ar == 0.0 {
            continue;
        }
        for (w, &bc) in m.row_mut(r).iter_mut().zip(b) {
            *w += ar * bc;
        }
    }
}

pub fn sigmoid(v: &Vector) -> Vector {
    Vector(v.iter().map(|&x| sigmoid_scalar(x)).collect())
}

pub fn tanh_act(v: &Vector) -> Vector {
    Vector(v.iter().map(|x| x.tanh()).collect())
}

pub fn hadamard(a: &Vector, b: &Vector) -> Vector {
    assert_eq!(a.dim(), b.dim(), "shape error: hadamard {} vs {}", a.dim(), b.dim());
    Vector(a.iter().zip(b.iter()).map(|(x, y)| x * y).collect())
}

pub fn softmax(v: &Vector) -> Vector {
    let mut out = v.clone();
    softmax_in_place(&mut out);
    out
}

/// Max-subtracted softmax, normalized in `f64`.
pub fn softmax_in_place(v: &mut [f32]) {
    if v.is_empty() {
        return;
    }
    let max = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f64;
    let exps: Vec<f64> = v
        .iter()
        .map(|&x| {
            let e = (f64::from(x) - f64::from(max)).exp();
            sum += e;
            e
        })
        .collect();
    for (o, e) in v.iter_mut().zip(exps) {
        *o = (e / sum) as f32;
    }
}

pub fn concat(a: &Vector, b: &Vector) -> Vector {
    let mut out = Vec::with_capacity(a.dim() + b.dim());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    Vector(out)
}

/// Which matrix-product path to use for sequence-wide projections.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Kernel {
    /// Per-timestep matvec loops.
    Reference,
    /// Row-blocked matrix-matrix products over the whole sequence.
    #[default]
    Blocked,
}

const BLOCK: usize = 4;

/// `a · bᵀ` for `a: n×k`, `b: m×k`, giving `n×m`.
pub fn matmul_nt(a: &Matrix, b: &Matrix, kernel: Kernel) -> Matrix {
    assert_eq!(a.cols, b.cols, "shape error: matmul_nt inner dims {} vs {}", a.cols, b.cols);
    let mut out = Matrix::zeros(a.rows, b.rows);
    match kernel {
        Kernel::Reference => {
            for i in 0..a.rows {
                let row = a.row(i);
                for j in 0..b.rows {
                    out.set(i, j, dot(row, b.row(j)));
                }
            }
        }
        Kernel::Blocked => {
            // Each row of `b` is streamed once per block of `a` rows.
            let mut i0 = 0;
            while i0 < a.rows {
                let i1 = (i0 + BLOCK).min(a.rows);
                for j in 0..b.rows {
                    let brow = b.row(j);
                    for i in i0..i1 {
                        out.set(i, j, dot(a.row(i), brow));
                    }
                }
                i0 = i1;
            }
        }
    }
    out
}

/// `out += aᵀ · b` for `a: t×n`, `b: t×m`, giving `n×m`.
pub fn matmul_tn_acc(a: &Matrix, b: &Matrix, out: &mut Matrix, kernel: Kernel) {
    assert_eq!(a.rows, b.rows, "shape error: matmul_tn shared dim");
    assert_eq!(out.rows, a.cols, "shape error: matmul_tn output rows");
    assert_eq!(out.cols, b.cols, "shape error: matmul_tn output cols");
    match kernel {
        Kernel::Reference => {
            for t in 0..a.rows {
                outer_acc(out, a.row(t), b.row(t));
            }
        }
        Kernel::Blocked => {
            let mut acc = vec![0.0f64; b.cols];
            for i in 0..a.cols {
                acc.iter_mut().for_each(|x| *x = 0.0);
                for t in 0..a.rows {
                    let s = a.get(t, i);
                    if s == 0.0 {
                        continue;
                    }
                    let s = f64::from(s);
                    for (x, &y) in acc.iter_mut().zip(b.row(t)) {
                        *x += s * f64::from(y);
                    }
                }
                for (o, x) in out.row_mut(i).iter_mut().zip(&acc) {
                    *o += *x as f32;
                }
            }
        }
    }
}

/// `out += a · b` for `a: t×n`, `b: n×m`, giving `t×m`.
pub fn matmul_nn_acc(a: &Matrix, b: &Matrix, out: &mut Matrix, kernel: Kernel) {
    assert_eq!(a.cols, b.rows, "shape error: matmul_nn inner dims");
    assert_eq!(out.rows, a.rows, "shape error: matmul_nn output rows");
    assert_eq!(out.cols, b.cols, "shape error: matmul_nn output cols");
    match kernel {
        Kernel::Reference => {
            for t in 0..a.rows {
                matvec_t_acc(b, a.row(t), out.row_mut(t));
            }
        }
        Kernel::Blocked => {
            let mut acc = vec![0.0f64; b.cols];
            for t in 0..a.rows {
                acc.iter_mut().for_each(|x| *x = 0.0);
                for (k, &s) in a.row(t).iter().enumerate() {
                    if s == 0.0 {
                        continue;
                    }
                    let s = f64::from(s);
                    for (x, &y) in acc.iter_mut().zip(b.row(k)) {
                        *x += s * f64::from(y);
                    }
                }
                for (o, x) in out.row_mut(t).iter_mut().zip(&acc) {
                    *o += *x as f32;
                }
            }
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
