//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! Every value on the tape is a `rows x cols` matrix; scalars are `1 x 1`.
//! The tape is built by a forward pass, consumed by a single [`Tape::backward`]
//! call and then dropped. Higher-order derivatives are not supported.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::tensor::ParameterSet;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Pre-activations beyond this magnitude are clamped before `tanh`, which
/// keeps squashed outputs strictly inside `(-1, 1)` at 64-bit precision.
pub const SQUASH_LIMIT: f64 = 18.0;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMulT { x: Var, w: Var },
    AddRow { x: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulConst(Var, Vec<f64>),
    MulRowConst(Var, Vec<f64>),
    Tanh(Var),
    Squash(Var),
    Relu(Var),
    Exp(Var),
    Softplus(Var),
    Square(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    SumAll(Var),
    MeanAll(Var),
    SumCols(Var),
    MeanCols(Var),
    ConcatCols(Var, Var),
    SliceCols { x: Var, start: usize },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    CrossEntropy {
        logits: Var,
        target: Vec<f64>,
        probs: Vec<f64>,
    },
    QuantileHuber {
        pred: Var,
        target: Vec<f64>,
        samples: usize,
        taus: Vec<f64>,
        kappa: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
    needs_grad: bool,
}

/// Parameters of one [`ParameterSet`] placed on a tape as leaves.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("parameter `{name}` not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

/// `c = a * b (+ c if accumulate)` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: bounds asserted above; strides describe views inside the slices
    // and `c` is a dense row-major m x n block that does not alias a or b.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn softmax_row(src: &[f64], dst: &mut [f64]) {
    let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (d, s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        sum += *d;
    }
    dst.iter_mut().for_each(|d| *d /= sum);
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn huber(u: f64, kappa: f64) -> f64 {
    if u.abs() <= kappa {
        0.5 * u * u
    } else {
        kappa * (u.abs() - 0.5 * kappa)
    }
}

fn huber_grad(u: f64, kappa: f64) -> f64 {
    if u.abs() <= kappa {
        u
    } else {
        kappa * u.signum()
    }
}

/// Per-row quantile regression Huber loss, shared by the tape op and the
/// plain-value helper in the distributional module.
pub(crate) fn quantile_huber_row(pred: &[f64], target: &[f64], taus: &[f64], kappa: f64) -> f64 {
    let m = target.len() as f64;
    let mut total = 0.0;
    for (theta, tau) in pred.iter().zip(taus) {
        for y in target {
            let u = y - theta;
            let ind = if u < 0.0 { 1.0 } else { 0.0 };
            total += (tau - ind).abs() * huber(u, kappa) / kappa;
        }
    }
    total / m
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn leaf(&mut self, value: Vec<f64>, rows: usize, cols: usize, needs_grad: bool) -> Result<Var> {
        if value.len() != rows * cols {
            return Err(Error::shape("Tape::leaf", rows * cols, value.len()));
        }
        Ok(self.push(value, rows, cols, Op::Leaf, needs_grad))
    }

    pub fn constant(&mut self, value: Vec<f64>, rows: usize, cols: usize) -> Result<Var> {
        self.leaf(value, rows, cols, false)
    }

    /// Places every parameter of `params` on the tape. Rank-1 tensors become
    /// `1 x n` rows; rank-2 tensors keep their shape.
    pub fn bind(&mut self, params: &ParameterSet, trainable: bool) -> Result<Bound> {
        let mut vars = BTreeMap::new();
        for (name, t) in params.iter() {
            let (r, c) = t.as_matrix_dims();
            let v = self.leaf(t.data().to_vec(), r, c, trainable)?;
            vars.insert(name.clone(), v);
        }
        Ok(Bound { vars })
    }

    fn same_shape(&self, ctx: &str, a: Var, b: Var) -> Result<()> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(Error::shape(ctx, format!("{da:?}"), format!("{db:?}")));
        }
        Ok(())
    }

    /// `x · wᵀ` for `x: [B, in]`, `w: [out, in]`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        let (b, inp) = self.dims(x);
        let (out, win) = self.dims(w);
        if inp != win {
            return Err(Error::shape("matmul", format!("input width {win}"), inp));
        }
        let mut y = vec![0.0; b * out];
        gemm(
            b,
            inp,
            out,
            self.value(x),
            (inp as isize, 1),
            self.value(w),
            (1, inp as isize),
            &mut y,
            false,
        );
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(y, b, out, Op::MatMulT { x, w }, ng))
    }

    /// Adds a `1 x cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.dims(bias) != (1, c) {
            return Err(Error::shape(
                "add_row",
                format!("(1, {c})"),
                format!("{:?}", self.dims(bias)),
            ));
        }
        let bv = self.value(bias);
        let y: Vec<f64> = self
            .value(x)
            .chunks(c)
            .flat_map(|row| row.iter().zip(bv).map(|(a, b)| a + b))
            .collect();
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(y, r, c, Op::AddRow { x, b: bias }, ng))
    }

    fn zip_with(&mut self, ctx: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(ctx, a, b)?;
        let (r, c) = self.dims(a);
        let y = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(y, r, c, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.dims(x);
        let y = self.value(x).iter().map(|v| f(*v)).collect();
        let ng = self.ng(x);
        self.push(y, r, c, op, ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| v + s, Op::AddConst(x))
    }

    pub fn add_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(Error::shape("add_const", self.value(x).len(), c.len()));
        }
        let (r, cols) = self.dims(x);
        let y = self.value(x).iter().zip(c).map(|(a, b)| a + b).collect();
        let ng = self.ng(x);
        Ok(self.push(y, r, cols, Op::AddConst(x), ng))
    }

    pub fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(Error::shape("mul_const", self.value(x).len(), c.len()));
        }
        let (r, cols) = self.dims(x);
        let y = self.value(x).iter().zip(&c).map(|(a, b)| a * b).collect();
        let ng = self.ng(x);
        Ok(self.push(y, r, cols, Op::MulConst(x, c), ng))
    }

    /// Multiplies every row elementwise by a constant row.
    pub fn mul_row_const(&mut self, x: Var, row: Vec<f64>) -> Result<Var> {
        let (r, c) = self.dims(x);
        if row.len() != c {
            return Err(Error::shape("mul_row_const", c, row.len()));
        }
        let y = self
            .value(x)
            .chunks(c)
            .flat_map(|xr| xr.iter().zip(&row).map(|(a, b)| a * b))
            .collect();
        let ng = self.ng(x);
        Ok(self.push(y, r, c, Op::MulRowConst(x, row), ng))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    /// `tanh` with the pre-activation clamped to `±SQUASH_LIMIT`.
    pub fn squash(&mut self, x: Var) -> Var {
        self.map(
            x,
            |v| v.clamp(-SQUASH_LIMIT, SQUASH_LIMIT).tanh(),
            Op::Squash(x),
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.map(x, softplus, Op::Softplus(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, |v| v * v, Op::Square(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.map(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    /// Per-row normalization to zero mean and unit (population) variance,
    /// followed by an elementwise affine `gain`, `bias` (both `1 x cols`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if c == 0 {
            return Err(Error::InvalidArgument("layer norm over zero features".into()));
        }
        for (name, p) in [("gain", gain), ("bias", bias)] {
            if self.dims(p) != (1, c) {
                return Err(Error::shape(
                    format!("layer_norm {name}"),
                    format!("(1, {c})"),
                    format!("{:?}", self.dims(p)),
                ));
            }
        }
        let (xhat, rstd) = normalize_rows(self.value(x), c);
        let g = self.value(gain);
        let b = self.value(bias);
        let y = xhat
            .chunks(c)
            .flat_map(|row| row.iter().zip(g).zip(b).map(|((h, g), b)| h * g + b))
            .collect();
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        debug_assert_eq!(rstd.len(), r);
        Ok(self.push(
            y,
            r,
            c,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let ng = self.ng(x);
        self.push(vec![s], 1, 1, Op::SumAll(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let ng = self.ng(x);
        self.push(vec![s], 1, 1, Op::MeanAll(x), ng)
    }

    /// Row sums as a `rows x 1` column.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let y = self.value(x).chunks(c).map(|row| row.iter().sum()).collect();
        let ng = self.ng(x);
        self.push(y, r, 1, Op::SumCols(x), ng)
    }

    pub fn mean_cols(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let y = self
            .value(x)
            .chunks(c)
            .map(|row| row.iter().sum::<f64>() / c as f64)
            .collect();
        let ng = self.ng(x);
        self.push(y, r, 1, Op::MeanCols(x), ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if ra != rb {
            return Err(Error::shape("concat_cols rows", ra, rb));
        }
        let mut y = Vec::with_capacity(ra * (ca + cb));
        for (xa, xb) in self.value(a).chunks(ca).zip(self.value(b).chunks(cb)) {
            y.extend_from_slice(xa);
            y.extend_from_slice(xb);
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(y, ra, ca + cb, Op::ConcatCols(a, b), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + len > c || len == 0 {
            return Err(Error::shape(
                "slice_cols",
                format!("range within {c} columns"),
                format!("{start}..{}", start + len),
            ));
        }
        let y = self
            .value(x)
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let ng = self.ng(x);
        Ok(self.push(y, r, len, Op::SliceCols { x, start }, ng))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let mut y = vec![0.0; r * c];
        for (src, dst) in self.value(x).chunks(c).zip(y.chunks_mut(c)) {
            softmax_row(src, dst);
        }
        let ng = self.ng(x);
        self.push(y, r, c, Op::SoftmaxRows(x), ng)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let mut y = vec![0.0; r * c];
        for (src, dst) in self.value(x).chunks(c).zip(y.chunks_mut(c)) {
            let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + src.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s - lse;
            }
        }
        let ng = self.ng(x);
        self.push(y, r, c, Op::LogSoftmaxRows(x), ng)
    }

    /// Per-row cross-entropy `-Σ t_i log softmax(z)_i` against constant
    /// target probabilities, as a `rows x 1` column.
    pub fn cross_entropy(&mut self, logits: Var, target: Vec<f64>) -> Result<Var> {
        let (r, c) = self.dims(logits);
        if target.len() != r * c {
            return Err(Error::shape("cross_entropy target", r * c, target.len()));
        }
        let mut probs = vec![0.0; r * c];
        let mut y = Vec::with_capacity(r);
        for ((src, p), t) in self
            .value(logits)
            .chunks(c)
            .zip(probs.chunks_mut(c))
            .zip(target.chunks(c))
        {
            softmax_row(src, p);
            let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + src.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            y.push(-src.iter().zip(t).map(|(z, ti)| ti * (z - lse)).sum::<f64>());
        }
        let ng = self.ng(logits);
        Ok(self.push(
            y,
            r,
            1,
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            ng,
        ))
    }

    /// Per-row quantile regression Huber loss of predicted atoms `pred`
    /// (`rows x N`) against constant target samples (`rows x M`).
    pub fn quantile_huber(&mut self, pred: Var, target: Vec<f64>, samples: usize, taus: Vec<f64>, kappa: f64) -> Result<Var> {
        let (r, n) = self.dims(pred);
        if taus.len() != n {
            return Err(Error::shape("quantile_huber fractions", n, taus.len()));
        }
        if samples == 0 || target.len() != r * samples {
            return Err(Error::shape("quantile_huber target", r * samples, target.len()));
        }
        if kappa <= 0.0 {
            return Err(Error::InvalidArgument(format!("huber kappa must be > 0, got {kappa}")));
        }
        let y = self
            .value(pred)
            .chunks(n)
            .zip(target.chunks(samples))
            .map(|(p, t)| quantile_huber_row(p, t, &taus, kappa))
            .collect();
        let ng = self.ng(pred);
        Ok(self.push(
            y,
            r,
            1,
            Op::QuantileHuber {
                pred,
                target,
                samples,
                taus,
                kappa,
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss`. May be called once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Autodiff("backward called twice on one tape".into()));
        }
        if self.dims(loss) != (1, 1) {
            return Err(Error::Autodiff(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.dims(loss)
            )));
        }
        self.consumed = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            debug_assert!(g.iter().all(|v| v.is_finite()), "non-finite gradient");
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let (rows, cols) = (self.nodes[i].rows, self.nodes[i].cols);
        // The op is moved out temporarily so the tape can be mutated.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMulT { x, w } => {
                let (b, inp) = self.dims(*x);
                let out = cols;
                if self.ng(*x) {
                    let wv = std::mem::take(&mut self.nodes[w.0].value);
                    self.acc(*x, |dx| {
                        gemm(b, out, inp, g, (out as isize, 1), &wv, (inp as isize, 1), dx, true)
                    });
                    self.nodes[w.0].value = wv;
                }
                if self.ng(*w) {
                    let xv = std::mem::take(&mut self.nodes[x.0].value);
                    self.acc(*w, |dw| {
                        gemm(out, b, inp, g, (1, out as isize), &xv, (inp as isize, 1), dw, true)
                    });
                    self.nodes[x.0].value = xv;
                }
            }
            Op::AddRow { x, b } => {
                self.acc(*x, |dx| add_into(dx, g));
                self.acc(*b, |db| {
                    for row in g.chunks(cols) {
                        add_into(db, row);
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(*a, |d| add_into(d, g));
                self.acc(*b, |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                self.acc(*a, |d| add_into(d, g));
                self.acc(*b, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let bv = self.value(*b).to_vec();
                let av = self.value(*a).to_vec();
                self.acc(*a, |d| {
                    d.iter_mut()
                        .zip(g.iter().zip(&bv))
                        .for_each(|(d, (g, b))| *d += g * b)
                });
                self.acc(*b, |d| {
                    d.iter_mut()
                        .zip(g.iter().zip(&av))
                        .for_each(|(d, (g, a))| *d += g * a)
                });
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.acc(*x, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g * s));
            }
            Op::AddConst(x) => self.acc(*x, |d| add_into(d, g)),
            Op::MulConst(x, c) => {
                self.acc(*x, |d| {
                    d.iter_mut()
                        .zip(g.iter().zip(c))
                        .for_each(|(d, (g, c))| *d += g * c)
                });
            }
            Op::MulRowConst(x, row) => {
                self.acc(*x, |d| {
                    for (dr, gr) in d.chunks_mut(cols).zip(g.chunks(cols)) {
                        dr.iter_mut()
                            .zip(gr.iter().zip(row))
                            .for_each(|(d, (g, c))| *d += g * c);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = std::mem::take(&mut self.nodes[i].value);
                self.acc(*x, |d| {
                    d.iter_mut()
                        .zip(g.iter().zip(&y))
                        .for_each(|(d, (g, y))| *d += g * (1.0 - y * y))
                });
                self.nodes[i].value = y;
            }
            Op::Squash(x) => {
                let y = std::mem::take(&mut self.nodes[i].value);
                let xv = self.value(*x).to_vec();
                self.acc(*x, |d| {
                    for ((d, g), (y, xv)) in d.iter_mut().zip(g).zip(y.iter().zip(&xv)) {
                        if xv.abs() < SQUASH_LIMIT {
                            *d += g * (1.0 - y * y);
                        }
                    }
                });
                self.nodes[i].value = y;
            }
            Op::Relu(x) => {
                let xv = self.value(*x).to_vec();
                self.acc(*x, |d| {
                    for ((d, g), xv) in d.iter_mut().zip(g).zip(&xv) {
                        if *xv > 0.0 {
                            *d += g;
                        }
                    }
                });
            }
            Op::Exp(x) => {
                let y = std::mem::take(&mut self.nodes[i].value);
                self.acc(*x, |d| {
                    d.iter_mut()
                        .zip(g.iter().zip(&y))
                        .for_each(|(d, (g, y))| *d += g * y)
                });
                self.nodes[i].value = y;
            }
            Op::Softplus(x) => {
                let xv = self.value(*x).to_vec();
                self.acc(*x, |d| {
                    for ((d, g), xv) in d.iter_mut().zip(g).zip(&xv) {
                        *d += g / (1.0 + (-xv).exp());
                    }
                });
            }
            Op::Square(x) => {
                let xv = self.value(*x).to_vec();
                self.acc(*x, |d| {
                    d.iter_mut()
                        .zip(g.iter().zip(&xv))
                        .for_each(|(d, (g, x))| *d += 2.0 * g * x)
                });
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x).to_vec();
                let (lo, hi) = (*lo, *hi);
                self.acc(*x, |d| {
                    for ((d, g), xv) in d.iter_mut().zip(g).zip(&xv) {
                        if *xv > lo && *xv < hi {
                            *d += g;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gain).to_vec();
                self.acc(*bias, |db| {
                    for row in g.chunks(cols) {
                        add_into(db, row);
                    }
                });
                self.acc(*gain, |dg| {
                    for (gr, hr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        dg.iter_mut()
                            .zip(gr.iter().zip(hr))
                            .for_each(|(d, (g, h))| *d += g * h);
                    }
                });
                self.acc(*x, |dx| {
                    let n = cols as f64;
                    for (((dr, gr), hr), rs) in dx
                        .chunks_mut(cols)
                        .zip(g.chunks(cols))
                        .zip(xhat.chunks(cols))
                        .zip(rstd)
                    {
                        let dh: Vec<f64> = gr.iter().zip(&gv).map(|(g, w)| g * w).collect();
                        let mean_dh = dh.iter().sum::<f64>() / n;
                        let mean_dh_h = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((d, dh), h) in dr.iter_mut().zip(&dh).zip(hr) {
                            *d += rs * (dh - mean_dh - h * mean_dh_h);
                        }
                    }
                });
            }
            Op::SumAll(x) => {
                let gs = g[0];
                self.acc(*x, |d| d.iter_mut().for_each(|d| *d += gs));
            }
            Op::MeanAll(x) => {
                let n = self.value(*x).len() as f64;
                let gs = g[0] / n;
                self.acc(*x, |d| d.iter_mut().for_each(|d| *d += gs));
            }
            Op::SumCols(x) | Op::MeanCols(x) => {
                let c = self.dims(*x).1;
                let scale = if matches!(op, Op::MeanCols(_)) {
                    1.0 / c as f64
                } else {
                    1.0
                };
                self.acc(*x, |d| {
                    for (dr, gr) in d.chunks_mut(c).zip(g) {
                        dr.iter_mut().for_each(|d| *d += gr * scale);
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let ca = self.dims(*a).1;
                let cb = self.dims(*b).1;
                self.acc(*a, |d| {
                    for (dr, gr) in d.chunks_mut(ca).zip(g.chunks(cols)) {
                        add_into(dr, &gr[..ca]);
                    }
                });
                self.acc(*b, |d| {
                    for (dr, gr) in d.chunks_mut(cb).zip(g.chunks(cols)) {
                        add_into(dr, &gr[ca..]);
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let c = self.dims(*x).1;
                let start = *start;
                self.acc(*x, |d| {
                    for (dr, gr) in d.chunks_mut(c).zip(g.chunks(cols)) {
                        add_into(&mut dr[start..start + cols], gr);
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let y = std::mem::take(&mut self.nodes[i].value);
                self.acc(*x, |d| {
                    for ((dr, gr), yr) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((d, g), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += y * (g - dot);
                        }
                    }
                });
                self.nodes[i].value = y;
            }
            Op::LogSoftmaxRows(x) => {
                let y = std::mem::take(&mut self.nodes[i].value);
                self.acc(*x, |d| {
                    for ((dr, gr), yr) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                        let gsum: f64 = gr.iter().sum();
                        for ((d, g), ly) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += g - ly.exp() * gsum;
                        }
                    }
                });
                self.nodes[i].value = y;
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                let c = self.dims(*logits).1;
                self.acc(*logits, |d| {
                    for (((dr, gr), pr), tr) in d
                        .chunks_mut(c)
                        .zip(g)
                        .zip(probs.chunks(c))
                        .zip(target.chunks(c))
                    {
                        let tsum: f64 = tr.iter().sum();
                        for ((d, p), t) in dr.iter_mut().zip(pr).zip(tr) {
                            *d += gr * (p * tsum - t);
                        }
                    }
                });
            }
            Op::QuantileHuber {
                pred,
                target,
                samples,
                taus,
                kappa,
            } => {
                let n = self.dims(*pred).1;
                let pv = self.value(*pred).to_vec();
                let m = *samples as f64;
                let kappa = *kappa;
                self.acc(*pred, |d| {
                    for (((dr, gr), pr), tr) in d
                        .chunks_mut(n)
                        .zip(g)
                        .zip(pv.chunks(n))
                        .zip(target.chunks(*samples))
                    {
                        for ((d, theta), tau) in dr.iter_mut().zip(pr).zip(taus) {
                            let mut acc = 0.0;
                            for y in tr {
                                let u = y - theta;
                                let ind = if u < 0.0 { 1.0 } else { 0.0 };
                                acc -= (tau - ind).abs() * huber_grad(u, kappa) / kappa;
                            }
                            *d += gr * acc / m;
                        }
                    }
                });
            }
        }
        self.nodes[i].op = op;
        let _ = rows;
    }

    /// Gradient of a node after [`Tape::backward`]; `None` if the node was
    /// unreachable from the loss or does not require gradients.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Accumulates gradients of every bound parameter into `params`;
    /// parameters unreachable from the loss receive zeros.
    pub fn write_grads(&self, bound: &Bound, params: &mut ParameterSet) -> Result<()> {
        if !self.consumed {
            return Err(Error::Autodiff("write_grads before backward".into()));
        }
        for (name, var) in bound.iter() {
            let t = params
                .get_mut(name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))?;
            match self.grad(*var) {
                Some(g) => t.accumulate_grad(g)?,
                None => t.accumulate_grad(&vec![0.0; t.numel()])?,
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Row-wise standardization shared by the tape op and value-level callers.
pub(crate) fn normalize_rows(x: &[f64], cols: usize) -> (Vec<f64>, Vec<f64>) {
    const EPS: f64 = 1e-12;
    let rows = x.len() / cols;
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = Vec::with_capacity(rows);
    for (src, dst) in x.chunks(cols).zip(xhat.chunks_mut(cols)) {
        let n = cols as f64;
        let mean = src.iter().sum::<f64>() / n;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let rs = 1.0 / (var + EPS).sqrt();
        for (d, s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * rs;
        }
        rstd.push(rs);
    }
    (xhat, rstd)
}
