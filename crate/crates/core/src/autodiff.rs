//! Minimal reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in evaluation order; [`Tape::backward`]
//! walks it in reverse and accumulates adjoints. Nodes that do not depend on
//! any parameter leaf carry no adjoint.

use crate::sparse::SparseMatrix;
use crate::tensor::{self, Matrix};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<'a> {
    Leaf,
    Spmm(&'a SparseMatrix, Var),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    LinComb(Vec<(Var, f64)>),
    AddRowBias(Var, Var),
    ScaleRows(Var, Vec<f64>),
    LeakyRelu(Var, f64),
    Silu(Var),
    GatherRows(Var, Vec<usize>),
    SliceRows(Var, usize),
    HConcat(Vec<Var>),
    VConcat(Vec<Var>),
    Langevin { x: Var, s: Var, z: Matrix, snr: f64 },
    RowDot(Var, Var),
    RowNormalize(Var),
    MeanSqRowNorm(Var),
    SoftplusMean(Var),
    DiagCrossEntropy(Var),
}

struct Node<'a> {
    value: Matrix,
    op: Op<'a>,
    needs_grad: bool,
}

/// Operation recorder.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    fault: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: false,
        }
    }

    /// Deliberately skews the weight adjoint of every dense product. Only
    /// useful for checking that gradient verification notices.
    #[doc(hidden)]
    pub fn with_adjoint_fault(mut self) -> Self {
        self.fault = true;
        self
    }

    fn push(&mut self, value: Matrix, op: Op<'a>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn spmm(&mut self, a: &'a SparseMatrix, x: Var) -> Var {
        let value = a.spmm(self.value(x)).expect("spmm shape");
        self.push(value, Op::Spmm(a, x), &[x])
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let value = self.value(x).matmul(self.value(w)).expect("matmul shape");
        self.push(value, Op::MatMul(x, w), &[x, w])
    }

    /// `x · yᵀ`.
    pub fn matmul_nt(&mut self, x: Var, y: Var) -> Var {
        let (a, b) = (self.value(x), self.value(y));
        assert_eq!(a.cols(), b.cols(), "matmul_nt shape");
        let mut value = Matrix::zeros(a.rows(), b.rows());
        tensor::matmul_nt_into(a, b, &mut value);
        self.push(value, Op::MatMulNt(x, y), &[x, y])
    }

    /// `Σ coef_k · x_k` over equally shaped operands.
    pub fn lincomb(&mut self, terms: &[(Var, f64)]) -> Var {
        let first = self.value(terms[0].0);
        let mut value = Matrix::zeros(first.rows(), first.cols());
        for &(v, c) in terms {
            let x = self.value(v);
            assert_eq!(x.shape(), value.shape(), "lincomb shape");
            for (o, xv) in value.data_mut().iter_mut().zip(x.data()) {
                *o += c * xv;
            }
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.push(value, Op::LinComb(terms.to_vec()), &inputs)
    }

    pub fn add(&mut self, x: Var, y: Var) -> Var {
        self.lincomb(&[(x, 1.0), (y, 1.0)])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.lincomb(&[(x, c)])
    }

    /// Elementwise mean of equally shaped operands.
    pub fn mean_of(&mut self, xs: &[Var]) -> Var {
        let w = 1.0 / xs.len() as f64;
        let terms: Vec<(Var, f64)> = xs.iter().map(|&v| (v, w)).collect();
        self.lincomb(&terms)
    }

    /// `x + 1 bᵀ` for a `1 x k` bias row.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Var {
        let mut value = self.value(x).clone();
        let bias = self.value(b);
        assert_eq!((1, value.cols()), bias.shape(), "bias shape");
        for r in 0..value.rows() {
            for (o, bv) in value.row_mut(r).iter_mut().zip(bias.data()) {
                *o += bv;
            }
        }
        self.push(value, Op::AddRowBias(x, b), &[x, b])
    }

    /// Row `r` multiplied by `coefs[r]`.
    pub fn scale_rows(&mut self, x: Var, coefs: Vec<f64>) -> Var {
        let mut value = self.value(x).clone();
        assert_eq!(value.rows(), coefs.len(), "scale_rows length");
        for (r, &c) in coefs.iter().enumerate() {
            value.row_mut(r).iter_mut().for_each(|v| *v *= c);
        }
        self.push(value, Op::ScaleRows(x, coefs), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let mut value = self.value(x).clone();
        value
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = if *v > 0.0 { *v } else { slope * *v });
        self.push(value, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v *= sigmoid(*v));
        self.push(value, Op::Silu(x), &[x])
    }

    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Var {
        let value = self.value(x).gather_rows(index);
        self.push(value, Op::GatherRows(x, index.to_vec()), &[x])
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let value = self.value(x).slice_rows(start, end);
        self.push(value, Op::SliceRows(x, start), &[x])
    }

    pub fn hconcat(&mut self, xs: &[Var]) -> Var {
        let blocks: Vec<&Matrix> = xs.iter().map(|&v| self.value(v)).collect();
        let value = Matrix::hconcat(&blocks).expect("hconcat shape");
        self.push(value, Op::HConcat(xs.to_vec()), xs)
    }

    pub fn vconcat(&mut self, xs: &[Var]) -> Var {
        let blocks: Vec<&Matrix> = xs.iter().map(|&v| self.value(v)).collect();
        let value = Matrix::vconcat(&blocks).expect("vconcat shape");
        self.push(value, Op::VConcat(xs.to_vec()), xs)
    }

    /// Langevin update `x + ε s + sqrt(2ε) z` with the per-row step size
    /// `ε = 2 (snr ‖z‖ / ‖s‖)²` (zero where `s` vanishes). The step size is
    /// differentiated as a function of `s`.
    pub fn langevin_step(&mut self, x: Var, s: Var, z: Matrix, snr: f64) -> Var {
        let (xv, sv) = (self.value(x), self.value(s));
        assert_eq!(xv.shape(), sv.shape(), "langevin shape");
        assert_eq!(xv.shape(), z.shape(), "langevin noise shape");
        let mut value = xv.clone();
        for r in 0..value.rows() {
            let eps = langevin_eps(snr, z.row(r), sv.row(r));
            let amp = (2.0 * eps).sqrt();
            for ((o, sr), zr) in value.row_mut(r).iter_mut().zip(sv.row(r)).zip(z.row(r)) {
                *o += eps * sr + amp * zr;
            }
        }
        self.push(value, Op::Langevin { x, s, z, snr }, &[x, s])
    }

    /// Per-row inner products as an `n x 1` column.
    pub fn row_dot(&mut self, x: Var, y: Var) -> Var {
        let (a, b) = (self.value(x), self.value(y));
        assert_eq!(a.shape(), b.shape(), "row_dot shape");
        let data = (0..a.rows()).map(|r| tensor::dot(a.row(r), b.row(r))).collect();
        let value = Matrix::from_vec(a.rows(), 1, data).expect("column");
        self.push(value, Op::RowDot(x, y), &[x, y])
    }

    /// Rows scaled to unit length; zero rows stay zero.
    pub fn row_normalize(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for r in 0..value.rows() {
            let n = tensor::norm(value.row(r));
            let inv = if n > 0.0 { 1.0 / n } else { 0.0 };
            value.row_mut(r).iter_mut().for_each(|v| *v *= inv);
        }
        self.push(value, Op::RowNormalize(x), &[x])
    }

    /// Scalar `mean_r ‖x_r‖²`.
    pub fn mean_sq_row_norm(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let s = m.data().iter().map(|v| v * v).sum::<f64>() / m.rows().max(1) as f64;
        self.push(scalar(s), Op::MeanSqRowNorm(x), &[x])
    }

    /// Scalar mean of `softplus(x)` over all entries.
    pub fn softplus_mean(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let s = m.data().iter().map(|&v| softplus(v)).sum::<f64>() / m.data().len().max(1) as f64;
        self.push(scalar(s), Op::SoftplusMean(x), &[x])
    }

    /// Scalar `mean_r (logsumexp(x_r) - x_rr)` for a square logit matrix:
    /// softmax cross-entropy with the diagonal as target.
    pub fn diag_cross_entropy(&mut self, x: Var) -> Var {
        let m = self.value(x);
        assert_eq!(m.rows(), m.cols(), "diag_cross_entropy needs a square matrix");
        let total: f64 = (0..m.rows()).map(|r| logsumexp(m.row(r)) - m.get(r, r)).sum();
        let s = total / m.rows().max(1) as f64;
        self.push(scalar(s), Op::DiagCrossEntropy(x), &[x])
    }

    /// Adjoints of every node with respect to the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be scalar");
        grads[loss.0] = Some(scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, f: impl FnOnce(&mut Matrix)) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| {
            let (r, c) = self.nodes[v.0].value.shape();
            Matrix::zeros(r, c)
        });
        f(slot);
    }

    fn propagate(&self, node: &Node<'a>, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Spmm(a, x) => self.accumulate(grads, *x, |acc| a.spmm_t_acc(g, acc)),
            Op::MatMul(x, w) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                self.accumulate(grads, *x, |acc| tensor::matmul_nt_into(g, wv, acc));
                let fault = self.fault;
                self.accumulate(grads, *w, |acc| {
                    if fault {
                        let mut skewed = Matrix::zeros(acc.rows(), acc.cols());
                        tensor::matmul_tn_into(xv, g, &mut skewed);
                        acc.add_assign(&skewed.scale(1.01));
                    } else {
                        tensor::matmul_tn_into(xv, g, acc);
                    }
                });
            }
            Op::MatMulNt(x, y) => {
                let (xv, yv) = (self.value(*x), self.value(*y));
                // d/dx (x yᵀ) = g y ; d/dy = gᵀ x
                self.accumulate(grads, *x, |acc| tensor::matmul_into(g, yv, acc));
                self.accumulate(grads, *y, |acc| tensor::matmul_tn_into(g, xv, acc));
            }
            Op::LinComb(terms) => {
                for &(v, c) in terms {
                    self.accumulate(grads, v, |acc| {
                        for (a, gv) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += c * gv;
                        }
                    });
                }
            }
            Op::AddRowBias(x, b) => {
                self.accumulate(grads, *x, |acc| acc.add_assign(g));
                self.accumulate(grads, *b, |acc| {
                    for r in 0..g.rows() {
                        for (a, gv) in acc.data_mut().iter_mut().zip(g.row(r)) {
                            *a += gv;
                        }
                    }
                });
            }
            Op::ScaleRows(x, coefs) => self.accumulate(grads, *x, |acc| {
                for (r, &c) in coefs.iter().enumerate() {
                    for (a, gv) in acc.row_mut(r).iter_mut().zip(g.row(r)) {
                        *a += c * gv;
                    }
                }
            }),
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, |acc| {
                    for ((a, gv), &v) in acc.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        *a += if v > 0.0 { *gv } else { slope * gv };
                    }
                });
            }
            Op::Silu(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, |acc| {
                    for ((a, gv), &v) in acc.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        let s = sigmoid(v);
                        *a += gv * s * (1.0 + v * (1.0 - s));
                    }
                });
            }
            Op::GatherRows(x, index) => self.accumulate(grads, *x, |acc| {
                for (k, &i) in index.iter().enumerate() {
                    for (a, gv) in acc.row_mut(i).iter_mut().zip(g.row(k)) {
                        *a += gv;
                    }
                }
            }),
            Op::SliceRows(x, start) => self.accumulate(grads, *x, |acc| {
                for k in 0..g.rows() {
                    for (a, gv) in acc.row_mut(start + k).iter_mut().zip(g.row(k)) {
                        *a += gv;
                    }
                }
            }),
            Op::HConcat(xs) => {
                let mut off = 0;
                for &v in xs {
                    let w = self.value(v).cols();
                    self.accumulate(grads, v, |acc| {
                        for r in 0..g.rows() {
                            for (a, gv) in acc.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                *a += gv;
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::VConcat(xs) => {
                let mut off = 0;
                for &v in xs {
                    let h = self.value(v).rows();
                    self.accumulate(grads, v, |acc| {
                        for (a, gv) in acc.data_mut().iter_mut().zip(g.slice_rows(off, off + h).data()) {
                            *a += gv;
                        }
                    });
                    off += h;
                }
            }
            Op::Langevin { x, s, z, snr } => {
                self.accumulate(grads, *x, |acc| acc.add_assign(g));
                let sv = self.value(*s);
                self.accumulate(grads, *s, |acc| {
                    for r in 0..sv.rows() {
                        let (sr, zr, gr) = (sv.row(r), z.row(r), g.row(r));
                        let ss = tensor::dot(sr, sr);
                        if ss == 0.0 {
                            continue;
                        }
                        let eps = langevin_eps(*snr, zr, sr);
                        let amp = (2.0 * eps).sqrt();
                        // dε/ds = −2ε s/‖s‖², d amp/ds = −amp s/‖s‖²
                        let k = (2.0 * eps * tensor::dot(gr, sr) + amp * tensor::dot(gr, zr)) / ss;
                        for ((a, gv), sv) in acc.row_mut(r).iter_mut().zip(gr).zip(sr) {
                            *a += eps * gv - k * sv;
                        }
                    }
                });
            }
            Op::RowDot(x, y) => {
                let (xv, yv) = (self.value(*x), self.value(*y));
                self.accumulate(grads, *x, |acc| {
                    for r in 0..acc.rows() {
                        let gr = g.get(r, 0);
                        for (a, yvv) in acc.row_mut(r).iter_mut().zip(yv.row(r)) {
                            *a += gr * yvv;
                        }
                    }
                });
                self.accumulate(grads, *y, |acc| {
                    for r in 0..acc.rows() {
                        let gr = g.get(r, 0);
                        for (a, xvv) in acc.row_mut(r).iter_mut().zip(xv.row(r)) {
                            *a += gr * xvv;
                        }
                    }
                });
            }
            Op::RowNormalize(x) => {
                let xv = self.value(*x);
                let yv = &node.value;
                self.accumulate(grads, *x, |acc| {
                    for r in 0..acc.rows() {
                        let n = tensor::norm(xv.row(r));
                        if n == 0.0 {
                            continue;
                        }
                        let yg = tensor::dot(yv.row(r), g.row(r));
                        for ((a, gv), yy) in acc.row_mut(r).iter_mut().zip(g.row(r)).zip(yv.row(r)) {
                            *a += (gv - yy * yg) / n;
                        }
                    }
                });
            }
            Op::MeanSqRowNorm(x) => {
                let xv = self.value(*x);
                let c = 2.0 * g.data()[0] / xv.rows().max(1) as f64;
                self.accumulate(grads, *x, |acc| {
                    for (a, v) in acc.data_mut().iter_mut().zip(xv.data()) {
                        *a += c * v;
                    }
                });
            }
            Op::SoftplusMean(x) => {
                let xv = self.value(*x);
                let c = g.data()[0] / xv.data().len().max(1) as f64;
                self.accumulate(grads, *x, |acc| {
                    for (a, &v) in acc.data_mut().iter_mut().zip(xv.data()) {
                        *a += c * sigmoid(v);
                    }
                });
            }
            Op::DiagCrossEntropy(x) => {
                let xv = self.value(*x);
                let c = g.data()[0] / xv.rows().max(1) as f64;
                self.accumulate(grads, *x, |acc| {
                    for r in 0..xv.rows() {
                        let row = xv.row(r);
                        let lse = logsumexp(row);
                        for (j, (a, &v)) in acc.row_mut(r).iter_mut().zip(row).enumerate() {
                            let target = if j == r { 1.0 } else { 0.0 };
                            *a += c * ((v - lse).exp() - target);
                        }
                    }
                });
            }
        }
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Adjoint of `v`, zeros when it does not influence the loss.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

/// Langevin step size `2 (snr ‖z‖ / ‖s‖)²`; zero when the score vanishes.
pub fn langevin_eps(snr: f64, noise: &[f64], score: &[f64]) -> f64 {
    let sn = tensor::norm(score);
    if sn == 0.0 {
        0.0
    } else {
        2.0 * (snr * tensor::norm(noise) / sn).powi(2)
    }
}

fn scalar(v: f64) -> Matrix {
    Matrix::from_vec(1, 1, vec![v]).expect("1x1")
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
