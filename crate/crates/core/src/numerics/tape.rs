//! Reverse-mode differentiation over matrix-valued operations.
//!
//! Every call on [`Tape`] evaluates eagerly and appends a node. Inputs of a
//! node always have smaller indices than the node itself, so walking the
//! node list backwards is a valid reverse topological order.
//! [`Tape::backward`] visits each node once and accumulates (never
//! overwrites) into the gradient of each of its inputs.

use std::sync::Arc;

use super::csr::{inv_sqrt_degrees, CsrPattern};
use super::dense::dot;
use super::DenseMatrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    Tanh(Var),
    GatherRows(Var, Vec<usize>),
    SliceRows(Var, usize),
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    Combine(Vec<(Var, f64)>),
    Scatter {
        src: Var,
        positions: Vec<usize>,
    },
    SymNormalize {
        pattern: Arc<CsrPattern>,
        weights: Var,
    },
    Spmm {
        pattern: Arc<CsrPattern>,
        weights: Var,
        x: Var,
    },
    ConcreteRelax {
        logits: Var,
        t: f64,
    },
    BiasClamp {
        x: Var,
        eps: f64,
    },
    RowNormalize(Var),
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
    },
    Variance(Vec<Var>),
    RowDot(Var, Var),
    NegLogSigmoidSum(Var),
    SumSquares(Var),
    Sum(Var),
    Hsic {
        x: Var,
        y: Var,
        sigma: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
}

/// Norm guard used by row normalization.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn rbf_kernel(x: &DenseMatrix, sigma: f64) -> DenseMatrix {
    let n = x.rows();
    let denom = 2.0 * sigma * sigma;
    DenseMatrix::from_fn(n, n, |i, j| {
        let d2: f64 = x
            .row(i)
            .iter()
            .zip(x.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (-d2 / denom).exp()
    })
}

/// `H K H` with `H = I − 11ᵀ/n`, computed by subtracting row, column and grand means.
fn double_center(k: &DenseMatrix) -> DenseMatrix {
    let n = k.rows();
    let nf = n as f64;
    let row_mean: Vec<f64> = (0..n).map(|i| k.row(i).iter().sum::<f64>() / nf).collect();
    let col_mean: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| k.get(i, j)).sum::<f64>() / nf)
        .collect();
    let grand = row_mean.iter().sum::<f64>() / nf;
    DenseMatrix::from_fn(n, n, |i, j| k.get(i, j) - row_mean[i] - col_mean[j] + grand)
}

/// Empirical HSIC with RBF kernels of bandwidth `sigma` on both sides.
pub(crate) fn hsic_value(x: &DenseMatrix, y: &DenseMatrix, sigma: f64) -> f64 {
    let n = x.rows();
    let kx = double_center(&rbf_kernel(x, sigma));
    let ky = rbf_kernel(y, sigma);
    let s: f64 = kx.data().iter().zip(ky.data()).map(|(a, b)| a * b).sum();
    s / ((n - 1) as f64).powi(2)
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

    fn push(&mut self, value: DenseMatrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Parameter or constant input.
    pub fn leaf(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(v, Op::MatMulT(a, b)))
    }

    /// Adds the `1 × cols` row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, &bb) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        Ok(self.push(out, Op::AddRow(x, b)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&r) = rows.iter().find(|&&r| r >= xv.rows()) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {r} of {}", xv.rows()),
            ));
        }
        let cols = xv.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in &rows {
            data.extend_from_slice(xv.row(r));
        }
        let v = DenseMatrix::new(rows.len(), cols, data)?;
        Ok(self.push(v, Op::GatherRows(x, rows)))
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start > end || end > xv.rows() {
            return Err(Error::shape(
                "slice_rows",
                format!("{start}..{end} of {}", xv.rows()),
            ));
        }
        let cols = xv.cols();
        let v = DenseMatrix::new(
            end - start,
            cols,
            xv.data()[start * cols..end * cols].to_vec(),
        )?;
        Ok(self.push(v, Op::SliceRows(x, start)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::shape(
                "concat_cols",
                format!("{:?} | {:?}", av.shape(), bv.shape()),
            ));
        }
        let v = DenseMatrix::from_fn(av.rows(), av.cols() + bv.cols(), |r, c| {
            if c < av.cols() {
                av.get(r, c)
            } else {
                bv.get(r, c - av.cols())
            }
        });
        Ok(self.push(v, Op::ConcatCols(a, b)))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(Error::shape(
                "concat_rows",
                format!("{:?} / {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut data = av.data().to_vec();
        data.extend_from_slice(bv.data());
        let v = DenseMatrix::new(av.rows() + bv.rows(), av.cols(), data)?;
        Ok(self.push(v, Op::ConcatRows(a, b)))
    }

    /// `Σ c_k · x_k` over same-shaped inputs.
    pub fn combine(&mut self, terms: Vec<(Var, f64)>) -> Result<Var> {
        let Some(&(first, _)) = terms.first() else {
            return Err(Error::shape("combine", "no terms"));
        };
        let shape = self.value(first).shape();
        let mut out = DenseMatrix::zeros(shape.0, shape.1);
        for &(v, c) in &terms {
            let val = self.value(v);
            if val.shape() != shape {
                return Err(Error::shape(
                    "combine",
                    format!("{:?} vs {:?}", val.shape(), shape),
                ));
            }
            out.add_scaled(val, c);
        }
        Ok(self.push(out, Op::Combine(terms)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.combine(vec![(a, 1.0), (b, 1.0)])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.combine(vec![(x, c)]).expect("single-term combine")
    }

    /// Column vector equal to `base` except `out[positions[k]] = src[k]`.
    pub fn scatter(&mut self, src: Var, base: Vec<f64>, positions: Vec<usize>) -> Result<Var> {
        let sv = self.value(src);
        if sv.cols() != 1 || sv.rows() != positions.len() {
            return Err(Error::shape(
                "scatter",
                format!("{:?} into {} positions", sv.shape(), positions.len()),
            ));
        }
        if let Some(&p) = positions.iter().find(|&&p| p >= base.len()) {
            return Err(Error::shape(
                "scatter",
                format!("position {p} of {}", base.len()),
            ));
        }
        let mut out = base;
        for (k, &p) in positions.iter().enumerate() {
            out[p] = sv.data()[k];
        }
        Ok(self.push(DenseMatrix::column(out), Op::Scatter { src, positions }))
    }

    /// Symmetric degree normalization of per-entry weights (`nnz × 1`).
    pub fn sym_normalize(&mut self, pattern: Arc<CsrPattern>, weights: Var) -> Result<Var> {
        let wv = self.value(weights);
        if wv.cols() != 1 || wv.rows() != pattern.nnz() {
            return Err(Error::shape(
                "sym_normalize",
                format!("weights {:?} for {} entries", wv.shape(), pattern.nnz()),
            ));
        }
        let v = DenseMatrix::column(pattern.normalize_values(wv.data()));
        Ok(self.push(v, Op::SymNormalize { pattern, weights }))
    }

    /// Sparse-dense product with weights held on the tape.
    pub fn spmm(&mut self, pattern: Arc<CsrPattern>, weights: Var, x: Var) -> Result<Var> {
        let (wv, xv) = (self.value(weights), self.value(x));
        if wv.cols() != 1 || wv.rows() != pattern.nnz() {
            return Err(Error::shape(
                "spmm",
                format!("weights {:?} for {} entries", wv.shape(), pattern.nnz()),
            ));
        }
        if xv.rows() != pattern.dim() {
            return Err(Error::shape(
                "spmm",
                format!("adjacency {} vs input rows {}", pattern.dim(), xv.rows()),
            ));
        }
        let v = pattern.spmm_values(wv.data(), xv);
        Ok(self.push(
            v,
            Op::Spmm {
                pattern,
                weights,
                x,
            },
        ))
    }

    /// `sigmoid((log(δ/(1−δ)) + w) / t)` per entry, with `noise[k] = log(δ_k/(1−δ_k))`
    /// treated as a constant.
    pub fn concrete_relax(&mut self, logits: Var, noise: &[f64], t: f64) -> Result<Var> {
        let lv = self.value(logits);
        if lv.data().len() != noise.len() {
            return Err(Error::shape(
                "concrete_relax",
                format!("{} logits, {} noise draws", lv.data().len(), noise.len()),
            ));
        }
        let data = lv
            .data()
            .iter()
            .zip(noise)
            .map(|(&w, &n)| sigmoid((n + w) / t))
            .collect();
        let v = DenseMatrix::new(lv.rows(), lv.cols(), data)?;
        Ok(self.push(v, Op::ConcreteRelax { logits, t }))
    }

    /// `min(x + eps, 1)`
    pub fn bias_clamp(&mut self, x: Var, eps: f64) -> Var {
        let v = self.value(x).map(|a| (a + eps).min(1.0));
        self.push(v, Op::BiasClamp { x, eps })
    }

    /// Each row divided by `‖row‖ + 1e-12`.
    pub fn row_normalize(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let n = dot(xv.row(r), xv.row(r)).sqrt() + NORM_EPS;
            for v in out.row_mut(r) {
                *v /= n;
            }
        }
        self.push(out, Op::RowNormalize(x))
    }

    /// Mean over rows of `−log softmax(logits_r)[targets_r]`.
    pub fn softmax_xent(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var> {
        let lv = self.value(logits);
        if targets.len() != lv.rows() || targets.iter().any(|&t| t >= lv.cols()) || lv.rows() == 0 {
            return Err(Error::shape(
                "softmax_xent",
                format!("{:?} logits, {} targets", lv.shape(), targets.len()),
            ));
        }
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&z| (z - mx).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let v = DenseMatrix::scalar(total / targets.len() as f64);
        Ok(self.push(v, Op::SoftmaxXent { logits, targets }))
    }

    /// Population variance of scalar nodes: `Σ (L_k − mean)² / K`.
    pub fn variance(&mut self, inputs: Vec<Var>) -> Result<Var> {
        if inputs.is_empty() || inputs.iter().any(|&v| self.value(v).shape() != (1, 1)) {
            return Err(Error::shape("variance", "expected one or more scalars"));
        }
        let vals: Vec<f64> = inputs.iter().map(|&v| self.scalar(v)).collect();
        let v = DenseMatrix::scalar(population_variance(&vals));
        Ok(self.push(v, Op::Variance(inputs)))
    }

    /// Row-wise inner products, `rows × 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(
                "row_dot",
                format!("{:?} · {:?}", av.shape(), bv.shape()),
            ));
        }
        let v = DenseMatrix::column((0..av.rows()).map(|r| dot(av.row(r), bv.row(r))).collect());
        Ok(self.push(v, Op::RowDot(a, b)))
    }

    /// `Σ −log σ(x)`
    pub fn neg_log_sigmoid_sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|&v| softplus(-v)).sum();
        self.push(DenseMatrix::scalar(s), Op::NegLogSigmoidSum(x))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v * v).sum();
        self.push(DenseMatrix::scalar(s), Op::SumSquares(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(DenseMatrix::scalar(s), Op::Sum(x))
    }

    /// Empirical HSIC between row samples of `x` and `y` with RBF kernels.
    pub fn hsic(&mut self, x: Var, y: Var, sigma: f64) -> Result<Var> {
        let (xv, yv) = (self.value(x), self.value(y));
        if xv.rows() != yv.rows() || xv.rows() < 2 {
            return Err(Error::Argument(format!(
                "hsic needs >= 2 paired samples, got {} and {}",
                xv.rows(),
                yv.rows()
            )));
        }
        if !(sigma > 0.0) {
            return Err(Error::Argument(format!(
                "rbf bandwidth {sigma} must be > 0"
            )));
        }
        let v = DenseMatrix::scalar(hsic_value(xv, yv, sigma));
        Ok(self.push(v, Op::Hsic { x, y, sigma }))
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).shape() != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!(
                    "output must be scalar, got {:?}",
                    self.value(output).shape()
                ),
            ));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(DenseMatrix::scalar(1.0));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, idx: usize, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul_t(val(*b)).expect("shapes checked forward");
                let gb = val(*a).t_matmul(g).expect("shapes checked forward");
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::MatMulT(a, b) => {
                let ga = g.matmul(val(*b)).expect("shapes checked forward");
                let gb = g.t_matmul(val(*a)).expect("shapes checked forward");
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::AddRow(x, b) => {
                accumulate(grads, *x, g);
                let mut gb = DenseMatrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, &v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *b, &gb);
            }
            Op::Relu(x) => {
                let xv = val(*x);
                let mut gx = g.clone();
                for (o, &a) in gx.data_mut().iter_mut().zip(xv.data()) {
                    if a <= 0.0 {
                        *o = 0.0;
                    }
                }
                accumulate(grads, *x, &gx);
            }
            Op::Tanh(x) => {
                let mut gx = g.clone();
                for (o, &y) in gx.data_mut().iter_mut().zip(out.data()) {
                    *o *= 1.0 - y * y;
                }
                accumulate(grads, *x, &gx);
            }
            Op::GatherRows(x, rows) => {
                let xv = val(*x);
                let gx = slot(grads, *x, xv.shape());
                for (k, &r) in rows.iter().enumerate() {
                    for (o, &v) in gx.row_mut(r).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
            }
            Op::SliceRows(x, start) => {
                let xv = val(*x);
                let cols = xv.cols();
                let gx = slot(grads, *x, xv.shape());
                let dst = &mut gx.data_mut()[start * cols..(start + g.rows()) * cols];
                for (o, &v) in dst.iter_mut().zip(g.data()) {
                    *o += v;
                }
            }
            Op::ConcatCols(a, b) => {
                let ac = val(*a).cols();
                let ga = DenseMatrix::from_fn(g.rows(), ac, |r, c| g.get(r, c));
                let gb = DenseMatrix::from_fn(g.rows(), g.cols() - ac, |r, c| g.get(r, c + ac));
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::ConcatRows(a, b) => {
                let (ar, cols) = val(*a).shape();
                let split = ar * cols;
                let ga = DenseMatrix::new(ar, cols, g.data()[..split].to_vec()).unwrap();
                let gb = DenseMatrix::new(g.rows() - ar, cols, g.data()[split..].to_vec()).unwrap();
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::Combine(terms) => {
                for &(v, c) in terms {
                    let gx = slot(grads, v, g.shape());
                    gx.add_scaled(g, c);
                }
            }
            Op::Scatter { src, positions } => {
                let gs = DenseMatrix::column(positions.iter().map(|&p| g.data()[p]).collect());
                accumulate(grads, *src, &gs);
            }
            Op::SymNormalize { pattern, weights } => {
                let w = val(*weights).data();
                let deg = pattern.row_sums(w);
                let s = inv_sqrt_degrees(&deg);
                let rows = pattern.entry_rows();
                let cols = pattern.col_indices();
                let gd = g.data();
                // dL/dd_r through s_r = d_r^{-1/2}; ds/dd = −s³/2
                let mut grad_deg = vec![0.0; deg.len()];
                for e in 0..w.len() {
                    let (r, c) = (rows[e] as usize, cols[e] as usize);
                    let t = gd[e] * w[e];
                    grad_deg[r] += t * s[c];
                    grad_deg[c] += t * s[r];
                }
                for (gdeg, &sv) in grad_deg.iter_mut().zip(&s) {
                    *gdeg *= -0.5 * sv * sv * sv;
                }
                let gw: Vec<f64> = (0..w.len())
                    .map(|e| {
                        let (r, c) = (rows[e] as usize, cols[e] as usize);
                        gd[e] * s[r] * s[c] + grad_deg[r]
                    })
                    .collect();
                accumulate(grads, *weights, &DenseMatrix::column(gw));
            }
            Op::Spmm {
                pattern,
                weights,
                x,
            } => {
                let w = val(*weights).data();
                let xv = val(*x);
                let rows = pattern.entry_rows();
                let cols = pattern.col_indices();
                let gw: Vec<f64> = (0..w.len())
                    .map(|e| dot(g.row(rows[e] as usize), xv.row(cols[e] as usize)))
                    .collect();
                accumulate(grads, *weights, &DenseMatrix::column(gw));
                let gx = slot(grads, *x, xv.shape());
                for e in 0..w.len() {
                    if w[e] == 0.0 {
                        continue;
                    }
                    let src = g.row(rows[e] as usize);
                    for (o, &v) in gx.row_mut(cols[e] as usize).iter_mut().zip(src) {
                        *o += w[e] * v;
                    }
                }
            }
            Op::ConcreteRelax { logits, t } => {
                let gl = DenseMatrix::new(
                    out.rows(),
                    out.cols(),
                    out.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&y, &gy)| gy * y * (1.0 - y) / t)
                        .collect(),
                )
                .unwrap();
                accumulate(grads, *logits, &gl);
            }
            Op::BiasClamp { x, eps } => {
                let xv = val(*x);
                let mut gx = g.clone();
                for (o, &a) in gx.data_mut().iter_mut().zip(xv.data()) {
                    if a + eps >= 1.0 {
                        *o = 0.0;
                    }
                }
                accumulate(grads, *x, &gx);
            }
            Op::RowNormalize(x) => {
                let xv = val(*x);
                let mut gx = DenseMatrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let xr = xv.row(r);
                    let gr = g.row(r);
                    let norm = dot(xr, xr).sqrt();
                    let n = norm + NORM_EPS;
                    let proj = if norm > 0.0 {
                        dot(gr, xr) / (n * n * norm)
                    } else {
                        0.0
                    };
                    for ((o, &gv), &xvv) in gx.row_mut(r).iter_mut().zip(gr).zip(xr) {
                        *o = gv / n - proj * xvv;
                    }
                }
                accumulate(grads, *x, &gx);
            }
            Op::SoftmaxXent { logits, targets } => {
                let lv = val(*logits);
                let scale = g.item() / targets.len() as f64;
                let mut gl = DenseMatrix::zeros(lv.rows(), lv.cols());
                for (r, &t) in targets.iter().enumerate() {
                    let row = lv.row(r);
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|&v| (v - mx).exp()).sum();
                    for (c, o) in gl.row_mut(r).iter_mut().enumerate() {
                        *o = scale * ((row[c] - mx).exp() / z - f64::from(u8::from(c == t)));
                    }
                }
                accumulate(grads, *logits, &gl);
            }
            Op::Variance(inputs) => {
                let vals: Vec<f64> = inputs.iter().map(|&v| val(v).item()).collect();
                let k = vals.len() as f64;
                for (&v, dev) in inputs.iter().zip(deviations(&vals)) {
                    accumulate(grads, v, &DenseMatrix::scalar(g.item() * 2.0 * dev / k));
                }
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let ga =
                    DenseMatrix::from_fn(av.rows(), av.cols(), |r, c| g.data()[r] * bv.get(r, c));
                let gb =
                    DenseMatrix::from_fn(av.rows(), av.cols(), |r, c| g.data()[r] * av.get(r, c));
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::NegLogSigmoidSum(x) => {
                let gs = g.item();
                let gx = val(*x).map(|v| gs * (sigmoid(v) - 1.0));
                accumulate(grads, *x, &gx);
            }
            Op::SumSquares(x) => {
                let gs = g.item();
                let gx = val(*x).map(|v| 2.0 * gs * v);
                accumulate(grads, *x, &gx);
            }
            Op::Sum(x) => {
                let xv = val(*x);
                let gx = DenseMatrix::from_fn(xv.rows(), xv.cols(), |_, _| g.item());
                accumulate(grads, *x, &gx);
            }
            Op::Hsic { x, y, sigma } => {
                let (xv, yv) = (val(*x), val(*y));
                let c = g.item() / ((xv.rows() - 1) as f64).powi(2);
                let kx = rbf_kernel(xv, *sigma);
                let ky = rbf_kernel(yv, *sigma);
                // d/dK_X = c·H K_Y H and symmetrically for K_Y
                let gx = rbf_input_grad(xv, &kx, &double_center(&ky), c, *sigma);
                let gy = rbf_input_grad(yv, &ky, &double_center(&kx), c, *sigma);
                accumulate(grads, *x, &gx);
                accumulate(grads, *y, &gy);
            }
        }
    }
}

/// Gradient w.r.t. samples `x` of `c · Σ_ij G_ij K_ij` for symmetric `G`.
fn rbf_input_grad(
    x: &DenseMatrix,
    k: &DenseMatrix,
    g: &DenseMatrix,
    c: f64,
    sigma: f64,
) -> DenseMatrix {
    let n = x.rows();
    let inv = 1.0 / (sigma * sigma);
    let mut out = DenseMatrix::zeros(n, x.cols());
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let coef = 2.0 * c * g.get(i, j) * k.get(i, j) * inv;
            let xj = x.row(j).to_vec();
            let xi = x.row(i).to_vec();
            for ((o, a), b) in out.row_mut(i).iter_mut().zip(&xi).zip(&xj) {
                *o += coef * (b - a);
            }
        }
    }
    out
}

/// `x_k − mean`, computed relative to the first value. Equal inputs give
/// exact zeros.
fn deviations(vals: &[f64]) -> Vec<f64> {
    let k = vals.len() as f64;
    let shifted: Vec<f64> = vals.iter().map(|v| v - vals[0]).collect();
    let mean = shifted.iter().sum::<f64>() / k;
    shifted.into_iter().map(|s| s - mean).collect()
}

pub(crate) fn population_variance(vals: &[f64]) -> f64 {
    deviations(vals).iter().map(|d| d * d).sum::<f64>() / vals.len() as f64
}

fn slot(grads: &mut [Option<DenseMatrix>], v: Var, shape: (usize, usize)) -> &mut DenseMatrix {
    grads[v.0].get_or_insert_with(|| DenseMatrix::zeros(shape.0, shape.1))
}

fn accumulate(grads: &mut [Option<DenseMatrix>], v: Var, g: &DenseMatrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_scaled(g, 1.0),
        empty => *empty = Some(g.clone()),
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    /// `None` when the output does not depend on `v`.
    pub fn get(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<DenseMatrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
