//! Reverse-mode differentiation over a closed set of batched primitives.
//!
//! Every node holds a dense `rows × cols` value. Parameter leaves point at a
//! contiguous range of a registered parameter set; `backward` accumulates
//! into one flat gradient vector per set, in the same canonical order as the
//! corresponding [`ParamVector`].

use rand::Rng;

use super::matrix::{gemm_nn, gemm_tn};
use super::ops::{check_dropout_rate, dropout_mask, normal_cdf, normal_pdf};
use super::{Matrix, ParamVector};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Handle to a parameter set registered on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSet(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param { set: usize, offset: usize },
    MatMulT { x: Var, w: Var },
    AddBias { x: Var, b: Var },
    Add { a: Var, b: Var },
    Gelu { x: Var, deriv: Vec<f64> },
    ConcatCols { a: Var, b: Var },
    RepeatRows { x: Var },
    MaxPoolRows { x: Var, argmax: Vec<usize> },
    Dropout { x: Var, mask: Vec<f64> },
    /// Scalar loss whose gradient w.r.t. `pred` was fixed during the forward pass.
    Loss { pred: Var, grad: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Per-set gradient vectors produced by [`Tape::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    sets: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, set: ParamSet) -> &[f64] {
        &self.sets[set.0]
    }

    pub fn take(&mut self, set: ParamSet) -> Vec<f64> {
        std::mem::take(&mut self.sets[set.0])
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    sets: Vec<usize>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a parameter set of `len` scalars.
    pub fn param_set(&mut self, len: usize) -> ParamSet {
        self.sets.push(len);
        ParamSet(self.sets.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Leaf bound to slot `name` of `params`, registered under `set`.
    pub fn param(&mut self, set: ParamSet, params: &ParamVector, name: &str) -> Result<Var> {
        if params.len() != self.sets[set.0] {
            return Err(Error::config(format!(
                "parameter set {} registered with {} values, got vector of {}",
                set.0,
                self.sets[set.0],
                params.len()
            )));
        }
        let slot = params.layout().slot(name)?;
        let value = Matrix::from_vec(slot.rows, slot.cols, params.as_slice()[slot.range()].to_vec())?;
        let offset = slot.offset;
        Ok(self.push(value, Op::Param { set: set.0, offset }, true))
    }

    /// `x · wᵀ`, `x: n×k`, `w: m×k`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        let value = self.value(x).matmul_t(self.value(w))?;
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(value, Op::MatMulT { x, w }, ng))
    }

    /// Adds a `1×m` row `b` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        if self.value(b).rows() != 1 {
            return Err(Error::config("bias must be a single row"));
        }
        let mut value = self.value(x).clone();
        value.add_row_broadcast(self.value(b).as_slice())?;
        let ng = self.needs(x) || self.needs(b);
        Ok(self.push(value, Op::AddBias { x, b }, ng))
    }

    /// Affine layer `x · wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul_t(x, w)?;
        self.add_bias(h, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::config(format!(
                "add: shape {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut value = va.clone();
        for (o, y) in value.as_mut_slice().iter_mut().zip(vb.as_slice()) {
            *o += y;
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, ng))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let n = src.as_slice().len();
        let mut value = Matrix::zeros(src.rows(), src.cols());
        let mut deriv = Vec::with_capacity(n);
        for (o, &v) in value.as_mut_slice().iter_mut().zip(src.as_slice()) {
            let cdf = normal_cdf(v);
            *o = v * cdf;
            deriv.push(cdf + v * normal_pdf(v));
        }
        let ng = self.needs(x);
        self.push(value, Op::Gelu { x, deriv }, ng)
    }

    /// Column-wise concatenation `[a ‖ b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(Error::config(format!(
                "concat: {} rows vs {} rows",
                va.rows(),
                vb.rows()
            )));
        }
        let mut data = Vec::with_capacity(va.rows() * (va.cols() + vb.cols()));
        for r in 0..va.rows() {
            data.extend_from_slice(va.row(r));
            data.extend_from_slice(vb.row(r));
        }
        let value = Matrix::from_vec(va.rows(), va.cols() + vb.cols(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ConcatCols { a, b }, ng))
    }

    /// Tiles a single row `n` times.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let src = self.value(x);
        if src.rows() != 1 {
            return Err(Error::config("repeat_rows expects a single row"));
        }
        let row = src.as_slice().to_vec();
        let mut data = Vec::with_capacity(n * row.len());
        for _ in 0..n {
            data.extend_from_slice(&row);
        }
        let value = Matrix::from_vec(n, row.len(), data)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::RepeatRows { x }, ng))
    }

    /// Column-wise maximum over all rows, giving a `1×c` row.
    pub fn max_pool_rows(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        if src.rows() == 0 {
            return Err(Error::input("max-pool over zero rows"));
        }
        let c = src.cols();
        let mut best = src.row(0).to_vec();
        let mut argmax = vec![0usize; c];
        for r in 1..src.rows() {
            for (j, &v) in src.row(r).iter().enumerate() {
                if v > best[j] {
                    best[j] = v;
                    argmax[j] = r;
                }
            }
        }
        let ng = self.needs(x);
        Ok(self.push(Matrix::row_vector(best), Op::MaxPoolRows { x, argmax }, ng))
    }

    /// Inverted dropout; `rng = None` is eval mode (identity).
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
        check_dropout_rate(rate)?;
        let n = self.value(x).as_slice().len();
        let mask = match rng {
            Some(rng) if rate > 0.0 => dropout_mask(n, rate, rng),
            _ => vec![1.0; n],
        };
        let mut value = self.value(x).clone();
        for (v, m) in value.as_mut_slice().iter_mut().zip(&mask) {
            *v *= m;
        }
        let ng = self.needs(x);
        Ok(self.push(value, Op::Dropout { x, mask }, ng))
    }

    fn check_target(&self, pred: Var, target: &Matrix) -> Result<()> {
        if self.value(pred).shape() != target.shape() {
            return Err(Error::config(format!(
                "prediction {:?} vs target {:?}",
                self.value(pred).shape(),
                target.shape()
            )));
        }
        Ok(())
    }

    /// `Σ|pred − target| / denom` as a `1×1` node.
    pub fn abs_error(&mut self, pred: Var, target: &Matrix, denom: f64) -> Result<Var> {
        self.check_target(pred, target)?;
        let mut sum = 0.0;
        let grad = self
            .value(pred)
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(p, t)| {
                let d = p - t;
                sum += d.abs();
                if d > 0.0 {
                    1.0 / denom
                } else if d < 0.0 {
                    -1.0 / denom
                } else {
                    0.0
                }
            })
            .collect();
        let ng = self.needs(pred);
        Ok(self.push(Matrix::row_vector(vec![sum / denom]), Op::Loss { pred, grad }, ng))
    }

    /// `Σ(pred − target)² / denom` as a `1×1` node.
    pub fn squared_error(&mut self, pred: Var, target: &Matrix, denom: f64) -> Result<Var> {
        self.check_target(pred, target)?;
        let mut sum = 0.0;
        let grad = self
            .value(pred)
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(p, t)| {
                let d = p - t;
                sum += d * d;
                2.0 * d / denom
            })
            .collect();
        let ng = self.needs(pred);
        Ok(self.push(Matrix::row_vector(vec![sum / denom]), Op::Loss { pred, grad }, ng))
    }

    /// Symmetric Chamfer loss between predicted rows and a fixed point set.
    pub fn chamfer(&mut self, pred: Var, target: &Matrix) -> Result<Var> {
        let p = self.value(pred);
        if p.rows() == 0 || target.rows() == 0 {
            return Err(Error::input("chamfer distance of an empty point set"));
        }
        if p.cols() != target.cols() {
            return Err(Error::config(format!(
                "chamfer: {} vs {} coordinates",
                p.cols(),
                target.cols()
            )));
        }
        let (np, nt) = (p.rows() as f64, target.rows() as f64);
        let nn_pred = nearest(p, target);
        let nn_target = nearest(target, p);
        let mut grad = vec![0.0; p.as_slice().len()];
        let c = p.cols();
        let mut loss = 0.0;
        for (i, &(j, d2)) in nn_pred.iter().enumerate() {
            loss += d2 / np;
            for k in 0..c {
                grad[i * c + k] += 2.0 * (p.get(i, k) - target.get(j, k)) / np;
            }
        }
        for (j, &(i, d2)) in nn_target.iter().enumerate() {
            loss += d2 / nt;
            for k in 0..c {
                grad[i * c + k] += 2.0 * (p.get(i, k) - target.get(j, k)) / nt;
            }
        }
        let ng = self.needs(pred);
        Ok(self.push(Matrix::row_vector(vec![loss]), Op::Loss { pred, grad }, ng))
    }

    /// Gradients of the scalar node `loss` with respect to every parameter set.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar node, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_seeded(loss, Matrix::row_vector(vec![1.0]))
    }

    /// Vector-Jacobian product: propagates `seed = ∂L/∂var` back to the parameters.
    pub fn backward_seeded(&self, var: Var, seed: Matrix) -> Result<Gradients> {
        if seed.shape() != self.value(var).shape() {
            return Err(Error::Usage(format!(
                "seed shape {:?} does not match node shape {:?}",
                seed.shape(),
                self.value(var).shape()
            )));
        }
        let mut out = Gradients {
            sets: self.sets.iter().map(|&n| vec![0.0; n]).collect(),
        };
        let mut grads: Vec<Option<Matrix>> = (0..=var.0).map(|_| None).collect();
        grads[var.0] = Some(seed);

        for i in (0..=var.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Constant => {}
                Op::Param { set, offset } => {
                    let dst = &mut out.sets[*set][*offset..*offset + g.as_slice().len()];
                    for (d, v) in dst.iter_mut().zip(g.as_slice()) {
                        *d += v;
                    }
                }
                Op::MatMulT { x, w } => {
                    if self.needs(*x) {
                        let wv = self.value(*w);
                        let (dst, beta) = slot(&mut grads, *x, g.rows(), wv.cols());
                        gemm_nn(&g, wv, dst, beta);
                    }
                    if self.needs(*w) {
                        let xv = self.value(*x);
                        let (dst, beta) = slot(&mut grads, *w, g.cols(), xv.cols());
                        gemm_tn(&g, xv, dst, beta);
                    }
                }
                Op::AddBias { x, b } => {
                    if self.needs(*b) {
                        let mut col = vec![0.0; g.cols()];
                        for row in g.row_iter() {
                            for (c, v) in col.iter_mut().zip(row) {
                                *c += v;
                            }
                        }
                        accumulate(&mut grads, *b, Matrix::row_vector(col));
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Add { a, b } => {
                    let (na, nb) = (self.needs(*a), self.needs(*b));
                    if na && nb {
                        accumulate(&mut grads, *a, g.clone());
                        accumulate(&mut grads, *b, g);
                    } else if na {
                        accumulate(&mut grads, *a, g);
                    } else if nb {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Gelu { x, deriv } => {
                    let mut g = g;
                    for (v, d) in g.as_mut_slice().iter_mut().zip(deriv) {
                        *v *= d;
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::ConcatCols { a, b } => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    if self.needs(*a) {
                        let mut ga = Matrix::zeros(g.rows(), ca);
                        for r in 0..g.rows() {
                            ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        }
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let mut gb = Matrix::zeros(g.rows(), cb);
                        for r in 0..g.rows() {
                            gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::RepeatRows { x } => {
                    let mut col = vec![0.0; g.cols()];
                    for row in g.row_iter() {
                        for (c, v) in col.iter_mut().zip(row) {
                            *c += v;
                        }
                    }
                    accumulate(&mut grads, *x, Matrix::row_vector(col));
                }
                Op::MaxPoolRows { x, argmax } => {
                    let (rows, cols) = self.value(*x).shape();
                    let mut gx = Matrix::zeros(rows, cols);
                    for (j, &r) in argmax.iter().enumerate() {
                        gx.set(r, j, g.get(0, j));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Dropout { x, mask } => {
                    let mut g = g;
                    for (v, m) in g.as_mut_slice().iter_mut().zip(mask) {
                        *v *= m;
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::Loss { pred, grad } => {
                    let scale = g.get(0, 0);
                    let (r, c) = self.value(*pred).shape();
                    let gp = Matrix::from_vec(r, c, grad.iter().map(|v| v * scale).collect())?;
                    accumulate(&mut grads, *pred, gp);
                }
            }
        }
        Ok(out)
    }
}

/// Returns the gradient buffer for `v` and the GEMM `beta` to accumulate into it.
fn slot(grads: &mut [Option<Matrix>], v: Var, rows: usize, cols: usize) -> (&mut Matrix, f64) {
    let beta = if grads[v.0].is_some() { 1.0 } else { 0.0 };
    let m = grads[v.0].get_or_insert_with(|| Matrix::zeros(rows, cols));
    (m, beta)
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += b;
            }
        }
        empty => *empty = Some(g),
    }
}

/// For each row of `from`, the index of and squared distance to its nearest row of `to`.
fn nearest(from: &Matrix, to: &Matrix) -> Vec<(usize, f64)> {
    from.row_iter()
        .map(|a| {
            let mut best = (0, f64::INFINITY);
            for (j, b) in to.row_iter().enumerate() {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                if d2 < best.1 {
                    best = (j, d2);
                }
            }
            best
        })
        .collect()
}
