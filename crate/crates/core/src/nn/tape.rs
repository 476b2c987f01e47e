//! A Wengert-list autodiff over dense matrices.
//!
//! Every value is a 2-D [`Matrix`]; scalars are `1 x 1`. Operations are
//! recorded in order on a [`Tape`] and [`Tape::backward`] replays them in
//! reverse. Parameters are copied onto the tape by name, and their gradients
//! are collected into a [`GradientMap`] afterwards.

use rand::Rng;

use crate::error::{PifmError, Result};
use crate::linalg::{matmul_into, matmul_nt_into, matmul_tn_into, Matrix};
use crate::nn::params::{GradientMap, ParameterSet};

/// Handle to a value on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(String),
    MatMul(Var, Var),
    /// `a * bᵀ`
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Matrix plus a broadcast `1 x m` row.
    AddRow(Var, Var),
    /// Matrix times a broadcast `1 x m` row.
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Silu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Dropout(Var, Vec<f64>),
    /// Per-row RMS normalization with a learned `1 x m` scale.
    RmsNorm { x: Var, scale: Var, eps: f64 },
    Transpose(Var),
    ConcatCols(Vec<Var>),
    /// Flattens each `n x n` input into one column of an `n² x c` output.
    StackFlat(Vec<Var>),
    Reshape(Var),
    RowSum(Var),
    Sum(Var),
    MeanSquare(Var),
    /// `(m + mᵀ)/2` with the diagonal zeroed.
    Symmetrize(Var),
    /// `Σ w (p - t)² / Σ w`
    WeightedMse { pred: Var, target: Matrix, weight: Matrix, wsum: f64 },
    /// `Σ w [softplus(x) - y x] / Σ w` over a column of logits.
    WeightedBce { logits: Var, labels: Vec<f64>, weights: Vec<f64>, wsum: f64 },
    /// Row `k` is `z[i_k] ⊙ z[j_k]`.
    PairHadamard(Var, Vec<(usize, usize)>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        let requires_grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            _ => self.inputs_of(&op).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn inputs_of(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Constant | Op::Param(_) => vec![],
            Op::MatMul(a, b)
            | Op::MatMulNT(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b) => vec![*a, *b],
            Op::RmsNorm { x, scale, .. } => vec![*x, *scale],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Silu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Dropout(a, _)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::RowSum(a)
            | Op::Sum(a)
            | Op::MeanSquare(a)
            | Op::Symmetrize(a)
            | Op::PairHadamard(a, _) => vec![*a],
            Op::WeightedMse { pred, .. } => vec![*pred],
            Op::WeightedBce { logits, .. } => vec![*logits],
            Op::ConcatCols(vs) | Op::StackFlat(vs) => vs.clone(),
        }
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    // ----- leaves -----

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(Op::Constant, m)
    }

    pub fn param(&mut self, params: &ParameterSet, name: &str) -> Result<Var> {
        let m = params.matrix(name)?;
        Ok(self.push(Op::Param(name.to_string()), m))
    }

    // ----- binary -----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(PifmError::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let mut out = Matrix::zeros(sa.0, sb.1);
        matmul_into(self.value(a), self.value(b), &mut out);
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(PifmError::dim("matmul_nt", format!("{sa:?} x {sb:?}ᵀ")));
        }
        let mut out = Matrix::zeros(sa.0, sb.0);
        matmul_nt_into(self.value(a), self.value(b), &mut out);
        Ok(self.push(Op::MatMulNT(a, b), out))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(PifmError::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    fn check_row(&self, op: &'static str, x: Var, row: Var) -> Result<()> {
        let (sx, sr) = (self.shape(x), self.shape(row));
        if sr.0 != 1 || sr.1 != sx.1 {
            return Err(PifmError::dim(op, format!("{sx:?} with row {sr:?}")));
        }
        Ok(())
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.check_row("add_row", x, row)?;
        let r = self.value(row).row(0).to_vec();
        let mut out = self.value(x).clone();
        for i in 0..out.rows() {
            out.row_mut(i).iter_mut().zip(&r).for_each(|(o, b)| *o += b);
        }
        Ok(self.push(Op::AddRow(x, row), out))
    }

    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.check_row("mul_row", x, row)?;
        let r = self.value(row).row(0).to_vec();
        let mut out = self.value(x).clone();
        for i in 0..out.rows() {
            out.row_mut(i).iter_mut().zip(&r).for_each(|(o, s)| *o *= s);
        }
        Ok(self.push(Op::MulRow(x, row), out))
    }

    /// `x @ w + b` with `b` a row vector.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_row(h, b)
    }

    // ----- unary -----

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(Op::Scale(x, c), out)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(Op::AddScalar(x), out)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * sigmoid(v));
        self.push(Op::Silu(x), out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid(x), out)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), out)
    }

    /// Inverted dropout. With `rng == None` (inference) or `rate == 0` the
    /// input is passed through unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(PifmError::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        let Some(rng) = rng.filter(|_| rate > 0.0) else {
            return Ok(x);
        };
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).data().len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().zip(&mask).for_each(|(o, m)| *o *= m);
        Ok(self.push(Op::Dropout(x, mask), out))
    }

    pub fn rms_norm(&mut self, x: Var, scale: Var, eps: f64) -> Result<Var> {
        self.check_row("rms_norm", x, scale)?;
        let xv = self.value(x);
        let g = self.value(scale).row(0).to_vec();
        let mut out = xv.clone();
        let m = xv.cols() as f64;
        for i in 0..xv.rows() {
            let row = out.row_mut(i);
            let r = (row.iter().map(|v| v * v).sum::<f64>() / m + eps).sqrt();
            row.iter_mut().zip(&g).for_each(|(o, s)| *o = *o / r * s);
        }
        Ok(self.push(Op::RmsNorm { x, scale, eps }, out))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(Op::Transpose(x), out)
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(PifmError::dim("concat_cols", "no inputs"));
        };
        let rows = self.shape(first).0;
        if let Some(bad) = xs.iter().find(|&&v| self.shape(v).0 != rows) {
            return Err(PifmError::dim(
                "concat_cols",
                format!("{rows} rows vs {:?}", self.shape(*bad)),
            ));
        }
        let cols: usize = xs.iter().map(|&v| self.shape(v).1).sum();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for &v in xs {
                let src = self.value(v).row(i);
                out.row_mut(i)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(Op::ConcatCols(xs.to_vec()), out))
    }

    pub fn stack_flat(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(PifmError::dim("stack_flat", "no inputs"));
        };
        let shape = self.shape(first);
        if let Some(bad) = xs.iter().find(|&&v| self.shape(v) != shape) {
            return Err(PifmError::dim(
                "stack_flat",
                format!("{shape:?} vs {:?}", self.shape(*bad)),
            ));
        }
        let len = shape.0 * shape.1;
        let c = xs.len();
        let mut out = Matrix::zeros(len, c);
        for (k, &v) in xs.iter().enumerate() {
            let src = self.value(v).data();
            let dst = out.data_mut();
            for (p, &s) in src.iter().enumerate() {
                dst[p * c + k] = s;
            }
        }
        Ok(self.push(Op::StackFlat(xs.to_vec()), out))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(x);
        let out = Matrix::from_vec(rows, cols, v.data().to_vec())
            .map_err(|_| PifmError::dim("reshape", format!("{:?} -> ({rows}, {cols})", v.shape())))?;
        Ok(self.push(Op::Reshape(x), out))
    }

    pub fn row_sum(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Matrix::from_fn(v.rows(), 1, |i, _| v.row(i).iter().sum());
        self.push(Op::RowSum(x), out)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Op::Sum(x), Matrix::filled(1, 1, s))
    }

    pub fn mean_square(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.data().is_empty() {
            return Err(PifmError::dim("mean_square", "empty input"));
        }
        let s = v.data().iter().map(|a| a * a).sum::<f64>() / v.data().len() as f64;
        Ok(self.push(Op::MeanSquare(x), Matrix::filled(1, 1, s)))
    }

    pub fn symmetrize(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if !v.is_square() {
            return Err(PifmError::dim("symmetrize", format!("{:?}", v.shape())));
        }
        let n = v.rows();
        let out = Matrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                0.5 * (v[(i, j)] + v[(j, i)])
            }
        });
        Ok(self.push(Op::Symmetrize(x), out))
    }

    pub fn weighted_mse(&mut self, pred: Var, target: Matrix, weight: Matrix) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() || p.shape() != weight.shape() {
            return Err(PifmError::dim(
                "weighted_mse",
                format!("pred {:?}, target {:?}, weight {:?}", p.shape(), target.shape(), weight.shape()),
            ));
        }
        let wsum = weight.sum();
        if wsum <= 0.0 {
            return Err(PifmError::dim("weighted_mse", "weights sum to zero"));
        }
        let s: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .zip(weight.data())
            .map(|((a, b), w)| w * (a - b) * (a - b))
            .sum();
        Ok(self.push(
            Op::WeightedMse {
                pred,
                target,
                weight,
                wsum,
            },
            Matrix::filled(1, 1, s / wsum),
        ))
    }

    pub fn weighted_bce(&mut self, logits: Var, labels: Vec<f64>, weights: Vec<f64>) -> Result<Var> {
        let x = self.value(logits);
        if x.cols() != 1 || x.rows() != labels.len() || labels.len() != weights.len() {
            return Err(PifmError::dim(
                "weighted_bce",
                format!("logits {:?}, {} labels, {} weights", x.shape(), labels.len(), weights.len()),
            ));
        }
        let wsum: f64 = weights.iter().sum();
        if wsum <= 0.0 {
            return Err(PifmError::dim("weighted_bce", "weights sum to zero"));
        }
        let s: f64 = x
            .data()
            .iter()
            .zip(&labels)
            .zip(&weights)
            .map(|((&z, &y), &w)| w * (softplus(z) - y * z))
            .sum();
        Ok(self.push(
            Op::WeightedBce {
                logits,
                labels,
                weights,
                wsum,
            },
            Matrix::filled(1, 1, s / wsum),
        ))
    }

    pub fn pair_hadamard(&mut self, z: Var, pairs: Vec<(usize, usize)>) -> Result<Var> {
        let zv = self.value(z);
        let (n, d) = zv.shape();
        if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= n || j >= n) {
            return Err(PifmError::dim("pair_hadamard", format!("pair ({i},{j}) with {n} rows")));
        }
        let mut out = Matrix::zeros(pairs.len(), d);
        for (k, &(i, j)) in pairs.iter().enumerate() {
            let (zi, zj) = (zv.row(i), zv.row(j));
            out.row_mut(k).iter_mut().zip(zi.iter().zip(zj)).for_each(|(o, (a, b))| *o = a * b);
        }
        Ok(self.push(Op::PairHadamard(z, pairs), out))
    }

    // ----- reverse pass -----

    fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        match &mut grads[v.0] {
            Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    /// Populates gradients of the scalar `loss` w.r.t. every node that
    /// depends on a parameter.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(PifmError::dim("backward", format!("loss has shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            let need = |v: &Var| self.nodes[v.0].requires_grad;
            let val = |v: &Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    if need(a) {
                        let mut ga = Matrix::zeros(val(a).rows(), val(a).cols());
                        matmul_nt_into(&g, val(b), &mut ga);
                        Self::acc(&mut grads, *a, ga);
                    }
                    if need(b) {
                        let mut gb = Matrix::zeros(val(b).rows(), val(b).cols());
                        matmul_tn_into(val(a), &g, &mut gb);
                        Self::acc(&mut grads, *b, gb);
                    }
                }
                Op::MatMulNT(a, b) => {
                    if need(a) {
                        let mut ga = Matrix::zeros(val(a).rows(), val(a).cols());
                        matmul_into(&g, val(b), &mut ga);
                        Self::acc(&mut grads, *a, ga);
                    }
                    if need(b) {
                        let mut gb = Matrix::zeros(val(b).rows(), val(b).cols());
                        matmul_tn_into(&g, val(a), &mut gb);
                        Self::acc(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if need(a) {
                        Self::acc(&mut grads, *a, g.clone());
                    }
                    if need(b) {
                        Self::acc(&mut grads, *b, g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if need(a) {
                        Self::acc(&mut grads, *a, g.clone());
                    }
                    if need(b) {
                        Self::acc(&mut grads, *b, g.map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if need(a) {
                        Self::acc(&mut grads, *a, g.zip_map(val(b), |x, y| x * y)?);
                    }
                    if need(b) {
                        Self::acc(&mut grads, *b, g.zip_map(val(a), |x, y| x * y)?);
                    }
                }
                Op::AddRow(x, row) => {
                    if need(row) {
                        Self::acc(&mut grads, *row, col_sums(&g));
                    }
                    if need(x) {
                        Self::acc(&mut grads, *x, g.clone());
                    }
                }
                Op::MulRow(x, row) => {
                    let r = val(row).row(0);
                    if need(row) {
                        let prod = g.zip_map(val(x), |a, b| a * b)?;
                        Self::acc(&mut grads, *row, col_sums(&prod));
                    }
                    if need(x) {
                        let mut gx = g.clone();
                        for i in 0..gx.rows() {
                            gx.row_mut(i).iter_mut().zip(r).for_each(|(o, s)| *o *= s);
                        }
                        Self::acc(&mut grads, *x, gx);
                    }
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    Self::acc(&mut grads, *x, g.map(|v| v * c));
                }
                Op::AddScalar(x) => Self::acc(&mut grads, *x, g.clone()),
                Op::Silu(x) => {
                    let gx = g.zip_map(val(x), |gv, xv| {
                        let s = sigmoid(xv);
                        gv * s * (1.0 + xv * (1.0 - s))
                    })?;
                    Self::acc(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y))?;
                    Self::acc(&mut grads, *x, gx);
                }
                Op::Tanh(x) => {
                    let gx = g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))?;
                    Self::acc(&mut grads, *x, gx);
                }
                Op::Dropout(x, mask) => {
                    let mut gx = g.clone();
                    gx.data_mut().iter_mut().zip(mask).for_each(|(o, m)| *o *= m);
                    Self::acc(&mut grads, *x, gx);
                }
                Op::RmsNorm { x, scale, eps } => {
                    let xv = val(x);
                    let gs = val(scale).row(0);
                    let m = xv.cols();
                    let mut gx = Matrix::zeros(xv.rows(), m);
                    let mut gscale = Matrix::zeros(1, m);
                    for i in 0..xv.rows() {
                        let row = xv.row(i);
                        let r = (row.iter().map(|v| v * v).sum::<f64>() / m as f64 + eps).sqrt();
                        let grow = g.row(i);
                        // u = x / r; du = g * scale; dx = (du - u * mean(du * u)) / r
                        let mut dot = 0.0;
                        for k in 0..m {
                            let u = row[k] / r;
                            gscale[(0, k)] += grow[k] * u;
                            dot += grow[k] * gs[k] * u;
                        }
                        dot /= m as f64;
                        let out = gx.row_mut(i);
                        for k in 0..m {
                            let u = row[k] / r;
                            out[k] = (grow[k] * gs[k] - u * dot) / r;
                        }
                    }
                    if need(x) {
                        Self::acc(&mut grads, *x, gx);
                    }
                    if need(scale) {
                        Self::acc(&mut grads, *scale, gscale);
                    }
                }
                Op::Transpose(x) => Self::acc(&mut grads, *x, g.transpose()),
                Op::ConcatCols(xs) => {
                    let mut off = 0;
                    for x in xs {
                        let (r, c) = val(x).shape();
                        if need(x) {
                            let gx = Matrix::from_fn(r, c, |i, j| g[(i, off + j)]);
                            Self::acc(&mut grads, *x, gx);
                        }
                        off += c;
                    }
                }
                Op::StackFlat(xs) => {
                    let c = xs.len();
                    for (k, x) in xs.iter().enumerate() {
                        if need(x) {
                            let (r, cc) = val(x).shape();
                            let mut gx = Matrix::zeros(r, cc);
                            for (p, o) in gx.data_mut().iter_mut().enumerate() {
                                *o = g.data()[p * c + k];
                            }
                            Self::acc(&mut grads, *x, gx);
                        }
                    }
                }
                Op::Reshape(x) => {
                    let (r, c) = val(x).shape();
                    let gx = Matrix::from_vec(r, c, g.data().to_vec())?;
                    Self::acc(&mut grads, *x, gx);
                }
                Op::RowSum(x) => {
                    let (r, c) = val(x).shape();
                    Self::acc(&mut grads, *x, Matrix::from_fn(r, c, |i, _| g[(i, 0)]));
                }
                Op::Sum(x) => {
                    let (r, c) = val(x).shape();
                    Self::acc(&mut grads, *x, Matrix::filled(r, c, g[(0, 0)]));
                }
                Op::MeanSquare(x) => {
                    let xv = val(x);
                    let s = 2.0 * g[(0, 0)] / xv.data().len() as f64;
                    Self::acc(&mut grads, *x, xv.map(|v| v * s));
                }
                Op::Symmetrize(x) => {
                    let n = g.rows();
                    let gx = Matrix::from_fn(n, n, |i, j| {
                        if i == j {
                            0.0
                        } else {
                            0.5 * (g[(i, j)] + g[(j, i)])
                        }
                    });
                    Self::acc(&mut grads, *x, gx);
                }
                Op::WeightedMse {
                    pred,
                    target,
                    weight,
                    wsum,
                } => {
                    let s = 2.0 * g[(0, 0)] / wsum;
                    let p = val(pred);
                    let mut gp = Matrix::zeros(p.rows(), p.cols());
                    for (k, o) in gp.data_mut().iter_mut().enumerate() {
                        *o = s * weight.data()[k] * (p.data()[k] - target.data()[k]);
                    }
                    Self::acc(&mut grads, *pred, gp);
                }
                Op::WeightedBce {
                    logits,
                    labels,
                    weights,
                    wsum,
                } => {
                    let s = g[(0, 0)] / wsum;
                    let x = val(logits);
                    let gx = Matrix::from_fn(x.rows(), 1, |k, _| {
                        s * weights[k] * (sigmoid(x[(k, 0)]) - labels[k])
                    });
                    Self::acc(&mut grads, *logits, gx);
                }
                Op::PairHadamard(z, pairs) => {
                    let zv = val(z);
                    let mut gz = Matrix::zeros(zv.rows(), zv.cols());
                    for (k, &(i, j)) in pairs.iter().enumerate() {
                        let gk = g.row(k);
                        for c in 0..zv.cols() {
                            let (a, b) = (zv[(i, c)], zv[(j, c)]);
                            gz[(i, c)] += gk[c] * b;
                            gz[(j, c)] += gk[c] * a;
                        }
                    }
                    Self::acc(&mut grads, *z, gz);
                }
            }
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Collects gradients of every parameter leaf, summing repeated uses.
    pub fn param_grads(&self) -> GradientMap {
        let mut out = GradientMap::default();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(name), Some(g)) = (&node.op, self.grads.get(idx).and_then(Option::as_ref)) {
                match out.grads.get_mut(name) {
                    Some(acc) => acc.iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                    None => {
                        out.grads.insert(name.clone(), g.data().to_vec());
                    }
                }
            }
        }
        out
    }
}

fn col_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for i in 0..m.rows() {
        out.row_mut(0).iter_mut().zip(m.row(i)).for_each(|(o, v)| *o += v);
    }
    out
}
