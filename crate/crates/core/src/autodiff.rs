//! Reverse-mode differentiation over a small vocabulary of vector operations.
//!
//! An [`ExprGraph`] is built once (nodes are appended in topological order, so
//! every child id is smaller than its parent id) and then evaluated many times
//! with fresh [`Bindings`] for its input leaves. Each evaluation is one forward
//! sweep that caches node values followed by one reverse sweep that
//! accumulates adjoints.
//!
//! Binary elementwise operations broadcast an operand of dimension 1 against
//! an operand of any dimension. The log-density operations reduce to a scalar.

use crate::error::{Error, Result};

/// Gaussian scales are clamped below at this value during evaluation.
pub const SIGMA_FLOOR: f64 = 1e-8;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExprId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InputId(usize);

impl InputId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl ExprId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Input(InputId),
    Add(ExprId, ExprId),
    Mul(ExprId, ExprId),
    Concat(Vec<ExprId>),
    /// `weight` is row-major `dim × dim(x)`.
    Affine {
        weight: ExprId,
        x: ExprId,
        bias: Option<ExprId>,
    },
    Tanh(ExprId),
    Sigmoid(ExprId),
    Log(ExprId),
    Exp(ExprId),
    Square(ExprId),
    GaussianLogPdf {
        x: ExprId,
        mean: ExprId,
        sigma: ExprId,
    },
    BernoulliLogPmf {
        x: ExprId,
        logits: ExprId,
    },
    ExponentialLogPdf {
        x: ExprId,
        log_rate: ExprId,
    },
    UniformLogPdf {
        x: ExprId,
        low: ExprId,
        width: ExprId,
    },
    Sum(Vec<ExprId>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    dim: usize,
}

/// Values bound to the input leaves of a graph for one evaluation.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    slots: Vec<Option<Vec<f64>>>,
}

impl Bindings {
    pub fn for_graph(graph: &ExprGraph) -> Self {
        Bindings {
            slots: vec![None; graph.input_dims.len()],
        }
    }

    /// Bind `id`, reusing the previous allocation when possible.
    pub fn set(&mut self, id: InputId, values: &[f64]) {
        match &mut self.slots[id.0] {
            Some(buf) => {
                buf.clear();
                buf.extend_from_slice(values);
            }
            slot @ None => *slot = Some(values.to_vec()),
        }
    }

    pub fn unset(&mut self, id: InputId) {
        self.slots[id.0] = None;
    }

    pub fn get(&self, id: InputId) -> Option<&[f64]> {
        self.slots[id.0].as_deref()
    }

    pub fn get_mut(&mut self, id: InputId) -> Option<&mut Vec<f64>> {
        self.slots[id.0].as_mut()
    }
}

/// Value of the root plus the adjoint of every input leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientRecord {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
}

impl GradientRecord {
    pub fn grad(&self, id: InputId) -> &[f64] {
        &self.grads[id.0]
    }
}

#[derive(Clone, Debug, Default)]
pub struct ExprGraph {
    nodes: Vec<Node>,
    input_dims: Vec<usize>,
    input_nodes: Vec<ExprId>,
    root: Option<ExprId>,
    values: Vec<Vec<f64>>,
    adjoints: Vec<Vec<f64>>,
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b || b == 1 {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else {
        None
    }
}

#[inline]
fn at(v: &[f64], k: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[k]
    }
}

#[inline]
fn acc(v: &mut [f64], k: usize, d: f64) {
    if v.len() == 1 {
        v[0] += d;
    } else {
        v[k] += d;
    }
}

/// Numerically stable `log(sigmoid(a))`.
pub fn log_sigmoid(a: f64) -> f64 {
    -(-a.abs()).exp().ln_1p() - (-a).max(0.0)
}

pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

impl ExprGraph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, dim: usize, value: Vec<f64>) -> ExprId {
        let id = ExprId(self.nodes.len());
        self.nodes.push(Node { op, dim });
        self.values.push(value);
        self.adjoints.push(vec![0.0; dim]);
        id
    }

    pub fn dim(&self, e: ExprId) -> usize {
        self.nodes[e.0].dim
    }

    pub fn num_inputs(&self) -> usize {
        self.input_dims.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn input_dim(&self, id: InputId) -> usize {
        self.input_dims[id.0]
    }

    pub fn constant(&mut self, values: Vec<f64>) -> ExprId {
        let dim = values.len();
        self.push(Op::Constant, dim, values)
    }

    pub fn scalar(&mut self, v: f64) -> ExprId {
        self.constant(vec![v])
    }

    pub fn input(&mut self, dim: usize) -> (InputId, ExprId) {
        let id = InputId(self.input_dims.len());
        self.input_dims.push(dim);
        let e = self.push(Op::Input(id), dim, vec![0.0; dim]);
        self.input_nodes.push(e);
        (id, e)
    }

    fn binary_dim(&self, a: ExprId, b: ExprId, what: &str) -> Result<usize> {
        broadcast_dim(self.dim(a), self.dim(b)).ok_or_else(|| {
            Error::Shape(format!(
                "{what}: operand dims {} and {} do not broadcast",
                self.dim(a),
                self.dim(b)
            ))
        })
    }

    pub fn add(&mut self, a: ExprId, b: ExprId) -> Result<ExprId> {
        let d = self.binary_dim(a, b, "add")?;
        Ok(self.push(Op::Add(a, b), d, vec![0.0; d]))
    }

    pub fn mul(&mut self, a: ExprId, b: ExprId) -> Result<ExprId> {
        let d = self.binary_dim(a, b, "mul")?;
        Ok(self.push(Op::Mul(a, b), d, vec![0.0; d]))
    }

    /// `-a`, expressed as a product with a constant.
    pub fn neg(&mut self, a: ExprId) -> ExprId {
        let m = self.scalar(-1.0);
        self.mul(m, a).expect("scalar broadcasts")
    }

    pub fn concat(&mut self, parts: Vec<ExprId>) -> Result<ExprId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of zero operands".into()));
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let d = parts.iter().map(|p| self.dim(*p)).sum();
        Ok(self.push(Op::Concat(parts), d, vec![0.0; d]))
    }

    pub fn affine(&mut self, weight: ExprId, x: ExprId, bias: Option<ExprId>) -> Result<ExprId> {
        let din = self.dim(x);
        let wlen = self.dim(weight);
        if din == 0 || !wlen.is_multiple_of(din) {
            return Err(Error::Shape(format!(
                "affine: weight length {wlen} is not a multiple of input dim {din}"
            )));
        }
        let dout = wlen / din;
        if let Some(b) = bias {
            if self.dim(b) != dout {
                return Err(Error::Shape(format!(
                    "affine: bias dim {} != output dim {dout}",
                    self.dim(b)
                )));
            }
        }
        Ok(self.push(Op::Affine { weight, x, bias }, dout, vec![0.0; dout]))
    }

    fn unary(&mut self, op: Op, a: ExprId) -> ExprId {
        let d = self.dim(a);
        self.push(op, d, vec![0.0; d])
    }

    pub fn tanh(&mut self, a: ExprId) -> ExprId {
        self.unary(Op::Tanh(a), a)
    }
    pub fn sigmoid(&mut self, a: ExprId) -> ExprId {
        self.unary(Op::Sigmoid(a), a)
    }
    pub fn log(&mut self, a: ExprId) -> ExprId {
        self.unary(Op::Log(a), a)
    }
    pub fn exp(&mut self, a: ExprId) -> ExprId {
        self.unary(Op::Exp(a), a)
    }
    pub fn square(&mut self, a: ExprId) -> ExprId {
        self.unary(Op::Square(a), a)
    }

    fn check_param(&self, x: ExprId, p: ExprId, what: &str) -> Result<()> {
        let (dx, dp) = (self.dim(x), self.dim(p));
        if dp == dx || dp == 1 {
            Ok(())
        } else {
            Err(Error::Shape(format!("{what}: parameter dim {dp} vs value dim {dx}")))
        }
    }

    /// `Σ_k log N(x_k; mean_k, sigma_k²)`.
    pub fn gaussian_log_pdf(&mut self, x: ExprId, mean: ExprId, sigma: ExprId) -> Result<ExprId> {
        self.check_param(x, mean, "gaussianLogPdf mean")?;
        self.check_param(x, sigma, "gaussianLogPdf sigma")?;
        Ok(self.push(Op::GaussianLogPdf { x, mean, sigma }, 1, vec![0.0]))
    }

    /// `Σ_k log Bernoulli(x_k; sigmoid(logits_k))`.
    pub fn bernoulli_log_pmf(&mut self, x: ExprId, logits: ExprId) -> Result<ExprId> {
        self.check_param(x, logits, "bernoulliLogPmf logits")?;
        Ok(self.push(Op::BernoulliLogPmf { x, logits }, 1, vec![0.0]))
    }

    /// `Σ_k log Exponential(x_k; exp(log_rate_k))`; `-inf` off the support.
    pub fn exponential_log_pdf(&mut self, x: ExprId, log_rate: ExprId) -> Result<ExprId> {
        self.check_param(x, log_rate, "exponentialLogPdf rate")?;
        Ok(self.push(Op::ExponentialLogPdf { x, log_rate }, 1, vec![0.0]))
    }

    /// `Σ_k log U(x_k; low_k, low_k + width_k)`; `-inf` off the support.
    pub fn uniform_log_pdf(&mut self, x: ExprId, low: ExprId, width: ExprId) -> Result<ExprId> {
        self.check_param(x, low, "uniformLogPdf low")?;
        self.check_param(x, width, "uniformLogPdf width")?;
        Ok(self.push(Op::UniformLogPdf { x, low, width }, 1, vec![0.0]))
    }

    /// Scalar sum of every element of every operand.
    pub fn sum(&mut self, parts: Vec<ExprId>) -> ExprId {
        self.push(Op::Sum(parts), 1, vec![0.0])
    }

    pub fn set_root(&mut self, e: ExprId) -> Result<()> {
        if self.dim(e) != 1 {
            return Err(Error::Shape(format!("root must be scalar, has dim {}", self.dim(e))));
        }
        self.root = Some(e);
        Ok(())
    }

    pub fn root(&self) -> Option<ExprId> {
        self.root
    }

    /// Cached value of `e` from the most recent forward sweep.
    pub fn value_of(&self, e: ExprId) -> &[f64] {
        &self.values[e.0]
    }

    fn root_or_err(&self) -> Result<ExprId> {
        self.root
            .ok_or_else(|| Error::InvalidModel("expression graph has no root".into()))
    }

    fn forward(&mut self, bindings: &Bindings) -> Result<f64> {
        let root = self.root_or_err()?;
        for (k, &dim) in self.input_dims.iter().enumerate() {
            match bindings.slots.get(k).and_then(|s| s.as_ref()) {
                None => return Err(Error::UnboundInput(k)),
                Some(v) if v.len() != dim => {
                    return Err(Error::Shape(format!(
                        "input {k} expects dim {dim}, bound with {}",
                        v.len()
                    )))
                }
                Some(_) => {}
            }
        }
        for i in 0..self.nodes.len() {
            let mut out = std::mem::take(&mut self.values[i]);
            let vals = &self.values;
            match &self.nodes[i].op {
                Op::Constant => {}
                Op::Input(id) => {
                    out.copy_from_slice(bindings.slots[id.0].as_ref().expect("checked above"));
                }
                Op::Add(a, b) => {
                    let (va, vb) = (&vals[a.0], &vals[b.0]);
                    for (k, o) in out.iter_mut().enumerate() {
                        *o = at(va, k) + at(vb, k);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&vals[a.0], &vals[b.0]);
                    for (k, o) in out.iter_mut().enumerate() {
                        *o = at(va, k) * at(vb, k);
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let v = &vals[p.0];
                        out[off..off + v.len()].copy_from_slice(v);
                        off += v.len();
                    }
                }
                Op::Affine { weight, x, bias } => {
                    let (w, xv) = (&vals[weight.0], &vals[x.0]);
                    let din = xv.len();
                    for (r, o) in out.iter_mut().enumerate() {
                        let row = &w[r * din..(r + 1) * din];
                        let mut s: f64 = row.iter().zip(xv).map(|(a, b)| a * b).sum();
                        if let Some(b) = bias {
                            s += vals[b.0][r];
                        }
                        *o = s;
                    }
                }
                Op::Tanh(a) => map_into(&mut out, &vals[a.0], f64::tanh),
                Op::Sigmoid(a) => map_into(&mut out, &vals[a.0], sigmoid),
                Op::Log(a) => map_into(&mut out, &vals[a.0], f64::ln),
                Op::Exp(a) => map_into(&mut out, &vals[a.0], f64::exp),
                Op::Square(a) => map_into(&mut out, &vals[a.0], |v| v * v),
                Op::GaussianLogPdf { x, mean, sigma } => {
                    let (xv, mv, sv) = (&vals[x.0], &vals[mean.0], &vals[sigma.0]);
                    let mut s = 0.0;
                    for k in 0..xv.len() {
                        let sig = at(sv, k).max(SIGMA_FLOOR);
                        let r = (xv[k] - at(mv, k)) / sig;
                        s += -0.5 * r * r - sig.ln() - HALF_LN_2PI;
                    }
                    out[0] = s;
                }
                Op::BernoulliLogPmf { x, logits } => {
                    let (xv, av) = (&vals[x.0], &vals[logits.0]);
                    let mut s = 0.0;
                    for k in 0..xv.len() {
                        let a = at(av, k);
                        s += xv[k] * log_sigmoid(a) + (1.0 - xv[k]) * log_sigmoid(-a);
                    }
                    out[0] = s;
                }
                Op::ExponentialLogPdf { x, log_rate } => {
                    let (xv, lv) = (&vals[x.0], &vals[log_rate.0]);
                    let mut s = 0.0;
                    for k in 0..xv.len() {
                        let eta = at(lv, k);
                        if xv[k] < 0.0 {
                            s = f64::NEG_INFINITY;
                            break;
                        }
                        s += eta - eta.exp() * xv[k];
                    }
                    out[0] = s;
                }
                Op::UniformLogPdf { x, low, width } => {
                    let (xv, lo, wv) = (&vals[x.0], &vals[low.0], &vals[width.0]);
                    let mut s = 0.0;
                    for k in 0..xv.len() {
                        let (l, w) = (at(lo, k), at(wv, k));
                        if xv[k] < l || xv[k] > l + w {
                            s = f64::NEG_INFINITY;
                            break;
                        }
                        s -= w.ln();
                    }
                    out[0] = s;
                }
                Op::Sum(parts) => {
                    out[0] = parts.iter().map(|p| vals[p.0].iter().sum::<f64>()).sum();
                }
            }
            self.values[i] = out;
        }
        let v = self.values[root.0][0];
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("root value {v}")));
        }
        Ok(v)
    }

    fn backward(&mut self) {
        let root = self.root.expect("forward checked root");
        for a in self.adjoints.iter_mut() {
            a.iter_mut().for_each(|v| *v = 0.0);
        }
        self.adjoints[root.0][0] = 1.0;
        for i in (0..=root.0).rev() {
            let adj = std::mem::take(&mut self.adjoints[i]);
            if adj.iter().all(|v| *v == 0.0) {
                self.adjoints[i] = adj;
                continue;
            }
            let vals = &self.values;
            let adjs = &mut self.adjoints;
            match &self.nodes[i].op {
                Op::Constant | Op::Input(_) => {}
                Op::Add(a, b) => {
                    for (k, g) in adj.iter().enumerate() {
                        acc(&mut adjs[a.0], k, *g);
                    }
                    for (k, g) in adj.iter().enumerate() {
                        acc(&mut adjs[b.0], k, *g);
                    }
                }
                Op::Mul(a, b) => {
                    for (k, g) in adj.iter().enumerate() {
                        let d = g * at(&vals[b.0], k);
                        acc(&mut adjs[a.0], k, d);
                    }
                    for (k, g) in adj.iter().enumerate() {
                        let d = g * at(&vals[a.0], k);
                        acc(&mut adjs[b.0], k, d);
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = adjs[p.0].len();
                        for k in 0..n {
                            adjs[p.0][k] += adj[off + k];
                        }
                        off += n;
                    }
                }
                Op::Affine { weight, x, bias } => {
                    let (w, xv) = (&vals[weight.0], &vals[x.0]);
                    let din = xv.len();
                    {
                        let dw = &mut adjs[weight.0];
                        for (r, g) in adj.iter().enumerate() {
                            for c in 0..din {
                                dw[r * din + c] += g * xv[c];
                            }
                        }
                    }
                    {
                        let dx = &mut adjs[x.0];
                        for (r, g) in adj.iter().enumerate() {
                            let row = &w[r * din..(r + 1) * din];
                            for c in 0..din {
                                dx[c] += row[c] * g;
                            }
                        }
                    }
                    if let Some(b) = bias {
                        for (r, g) in adj.iter().enumerate() {
                            adjs[b.0][r] += g;
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = &vals[i];
                    for (k, g) in adj.iter().enumerate() {
                        adjs[a.0][k] += g * (1.0 - y[k] * y[k]);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &vals[i];
                    for (k, g) in adj.iter().enumerate() {
                        adjs[a.0][k] += g * y[k] * (1.0 - y[k]);
                    }
                }
                Op::Log(a) => {
                    for (k, g) in adj.iter().enumerate() {
                        adjs[a.0][k] += g / vals[a.0][k];
                    }
                }
                Op::Exp(a) => {
                    let y = &vals[i];
                    for (k, g) in adj.iter().enumerate() {
                        adjs[a.0][k] += g * y[k];
                    }
                }
                Op::Square(a) => {
                    for (k, g) in adj.iter().enumerate() {
                        adjs[a.0][k] += g * 2.0 * vals[a.0][k];
                    }
                }
                Op::GaussianLogPdf { x, mean, sigma } => {
                    let g = adj[0];
                    let (xv, mv, sv) = (&vals[x.0], &vals[mean.0], &vals[sigma.0]);
                    let n = xv.len();
                    let mut dx = vec![0.0; n];
                    let mut dm = vec![0.0; n];
                    let mut ds = vec![0.0; n];
                    for k in 0..n {
                        let raw = at(sv, k);
                        let sig = raw.max(SIGMA_FLOOR);
                        let diff = xv[k] - at(mv, k);
                        let s2 = sig * sig;
                        dx[k] = -diff / s2;
                        dm[k] = diff / s2;
                        if raw > SIGMA_FLOOR {
                            ds[k] = diff * diff / (s2 * sig) - 1.0 / sig;
                        }
                    }
                    for k in 0..n {
                        acc(&mut adjs[x.0], k, g * dx[k]);
                    }
                    for k in 0..n {
                        acc(&mut adjs[mean.0], k, g * dm[k]);
                    }
                    for k in 0..n {
                        acc(&mut adjs[sigma.0], k, g * ds[k]);
                    }
                }
                Op::BernoulliLogPmf { x, logits } => {
                    let g = adj[0];
                    let (xv, av) = (&vals[x.0], &vals[logits.0]);
                    let n = xv.len();
                    let da: Vec<f64> = (0..n).map(|k| xv[k] - sigmoid(at(av, k))).collect();
                    let dxv: Vec<f64> = (0..n).map(|k| at(av, k)).collect();
                    for k in 0..n {
                        acc(&mut adjs[logits.0], k, g * da[k]);
                    }
                    for k in 0..n {
                        acc(&mut adjs[x.0], k, g * dxv[k]);
                    }
                }
                Op::ExponentialLogPdf { x, log_rate } => {
                    let g = adj[0];
                    let (xv, lv) = (&vals[x.0], &vals[log_rate.0]);
                    let n = xv.len();
                    let rates: Vec<f64> = (0..n).map(|k| at(lv, k).exp()).collect();
                    for k in 0..n {
                        acc(&mut adjs[x.0], k, -g * rates[k]);
                    }
                    for k in 0..n {
                        acc(&mut adjs[log_rate.0], k, g * (1.0 - rates[k] * xv[k]));
                    }
                }
                Op::UniformLogPdf { x, width, .. } => {
                    let g = adj[0];
                    let n = vals[x.0].len();
                    let wv = &vals[width.0];
                    let dw: Vec<f64> = (0..n).map(|k| -g / at(wv, k)).collect();
                    for (k, d) in dw.into_iter().enumerate() {
                        acc(&mut adjs[width.0], k, d);
                    }
                }
                Op::Sum(parts) => {
                    let g = adj[0];
                    for p in parts {
                        adjs[p.0].iter_mut().for_each(|v| *v += g);
                    }
                }
            }
            self.adjoints[i] = adj;
        }
    }

    /// Forward sweep only.
    pub fn evaluate(&mut self, bindings: &Bindings) -> Result<f64> {
        self.forward(bindings)
    }

    /// One forward and one reverse sweep.
    pub fn evaluate_with_gradient(&mut self, bindings: &Bindings) -> Result<GradientRecord> {
        let mut rec = GradientRecord {
            value: 0.0,
            grads: self.input_dims.iter().map(|d| vec![0.0; *d]).collect(),
        };
        self.evaluate_with_gradient_into(bindings, &mut rec)?;
        Ok(rec)
    }

    /// As [`evaluate_with_gradient`](Self::evaluate_with_gradient), reusing `rec`'s buffers.
    pub fn evaluate_with_gradient_into(&mut self, bindings: &Bindings, rec: &mut GradientRecord) -> Result<()> {
        rec.value = self.forward(bindings)?;
        self.backward();
        rec.grads.resize(self.input_dims.len(), Vec::new());
        for (k, e) in self.input_nodes.iter().enumerate() {
            let a = &self.adjoints[e.0];
            if let Some(bad) = a.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("adjoint of input {k} is {bad}")));
            }
            rec.grads[k].clear();
            rec.grads[k].extend_from_slice(a);
        }
        Ok(())
    }
}

fn map_into(out: &mut [f64], src: &[f64], f: impl Fn(f64) -> f64) {
    for (o, s) in out.iter_mut().zip(src) {
        *o = f(*s);
    }
}

/// Relative error with a unit floor on the scale: `|a - b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Compare reverse-mode adjoints against central differences of the root
/// value, for every coordinate of every input. Returns the worst
/// [`relative_error`].
pub fn finite_difference_check(graph: &mut ExprGraph, bindings: &Bindings, step: f64) -> Result<f64> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let rec = graph.evaluate_with_gradient(bindings)?;
    let mut work = bindings.clone();
    let mut worst: f64 = 0.0;
    for k in 0..graph.num_inputs() {
        let id = InputId(k);
        for c in 0..graph.input_dim(id) {
            let orig = work.get(id).ok_or(Error::UnboundInput(k))?[c];
            work.get_mut(id).unwrap()[c] = orig + step;
            let up = graph.evaluate(&work)?;
            work.get_mut(id).unwrap()[c] = orig - step;
            let down = graph.evaluate(&work)?;
            work.get_mut(id).unwrap()[c] = orig;
            let fd = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(fd, rec.grads[k][c]));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tanh_at_zero() {
        let mut g = ExprGraph::new();
        let (i, x) = g.input(1);
        let t = g.tanh(x);
        let s = g.sum(vec![t]);
        g.set_root(s).unwrap();
        let mut b = Bindings::for_graph(&g);
        b.set(i, &[0.0]);
        let r = g.evaluate_with_gradient(&b).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.grad(i), &[1.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut g = ExprGraph::new();
        let (i, x) = g.input(1);
        let t = g.sigmoid(x);
        let s = g.sum(vec![t]);
        g.set_root(s).unwrap();
        let mut b = Bindings::for_graph(&g);
        b.set(i, &[0.0]);
        let r = g.evaluate_with_gradient(&b).unwrap();
        assert_eq!(r.value, 0.5);
        assert_eq!(r.grad(i), &[0.25]);
    }

    #[test]
    fn gaussian_log_pdf_value_and_adjoints() {
        let mut g = ExprGraph::new();
        let (ix, x) = g.input(1);
        let (im, m) = g.input(1);
        let (is, s) = g.input(1);
        let lp = g.gaussian_log_pdf(x, m, s).unwrap();
        g.set_root(lp).unwrap();
        let mut b = Bindings::for_graph(&g);
        b.set(ix, &[1.0]);
        b.set(im, &[0.0]);
        b.set(is, &[1.0]);
        let r = g.evaluate_with_gradient(&b).unwrap();
        // -1/2 - log(2π)/2
        assert_abs_diff_eq!(r.value, -1.418_938_533_204_672_7, epsilon = 1e-12);
        assert_abs_diff_eq!(r.grad(im)[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.grad(ix)[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.grad(is)[0], 0.0, epsilon = 1e-12);

        // off-centre sigma to exercise d/dsigma = (x-mu)^2/sigma^3 - 1/sigma
        b.set(ix, &[1.7]);
        b.set(im, &[0.3]);
        b.set(is, &[0.8]);
        let r = g.evaluate_with_gradient(&b).unwrap();
        let d: f64 = 1.4;
        assert_abs_diff_eq!(r.grad(ix)[0], -d / 0.64, epsilon = 1e-12);
        assert_abs_diff_eq!(r.grad(im)[0], d / 0.64, epsilon = 1e-12);
        assert_abs_diff_eq!(r.grad(is)[0], d * d / 0.512 - 1.0 / 0.8, epsilon = 1e-12);
        assert!(finite_difference_check(&mut g, &b, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert_abs_diff_eq!(log_sigmoid(0.0), 0.5f64.ln(), epsilon = 1e-15);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
        assert_abs_diff_eq!(log_sigmoid(-800.0), -800.0, epsilon = 1e-9);
        assert!(log_sigmoid(-1e6).is_finite());
    }

    #[test]
    fn bernoulli_symmetric_logit() {
        let mut g = ExprGraph::new();
        let x = g.constant(vec![1.0]);
        let (ia, a) = g.input(1);
        let lp = g.bernoulli_log_pmf(x, a).unwrap();
        g.set_root(lp).unwrap();
        let mut b = Bindings::for_graph(&g);
        b.set(ia, &[0.0]);
        let r = g.evaluate_with_gradient(&b).unwrap();
        assert_abs_diff_eq!(r.value, 0.5f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.grad(ia)[0], 0.5, epsilon = 1e-15);
    }

    fn smooth_graph() -> (ExprGraph, Bindings) {
        // sum( gauss(y; tanh(W x + b), exp(ls)) ) + bern(t; sigmoid-logits) + sum(square(x)*exp(x))
        let mut g = ExprGraph::new();
        let (iw, w) = g.input(6);
        let (ix, x) = g.input(3);
        let (ib, bb) = g.input(2);
        let (iy, y) = g.input(2);
        let (ils, ls) = g.input(1);
        let aff = g.affine(w, x, Some(bb)).unwrap();
        let mu = g.tanh(aff);
        let sig = g.exp(ls);
        let t1 = g.gaussian_log_pdf(y, mu, sig).unwrap();
        let tgt = g.constant(vec![1.0, 0.0]);
        let t2 = g.bernoulli_log_pmf(tgt, aff).unwrap();
        let sq = g.square(x);
        let ex = g.exp(x);
        let prod = g.mul(sq, ex).unwrap();
        let sg = g.sigmoid(prod);
        let lg = g.log(sg);
        let root = g.sum(vec![t1, t2, lg]);
        g.set_root(root).unwrap();
        let mut b = Bindings::for_graph(&g);
        b.set(iw, &[0.3, -0.2, 0.5, 0.1, 0.7, -0.4]);
        b.set(ix, &[0.2, -1.1, 0.6]);
        b.set(ib, &[0.05, -0.3]);
        b.set(iy, &[0.4, -0.2]);
        b.set(ils, &[-0.3]);
        (g, b)
    }

    #[test]
    fn smooth_expression_passes_fd_check() {
        let (mut g, b) = smooth_graph();
        assert!(finite_difference_check(&mut g, &b, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn linear_expression_fd_is_exact() {
        let mut g = ExprGraph::new();
        let (iw, w) = g.input(4);
        let (ix, x) = g.input(2);
        let aff = g.affine(w, x, None).unwrap();
        let c = g.constant(vec![2.0, -3.0]);
        let m = g.mul(c, aff).unwrap();
        let s = g.sum(vec![m]);
        g.set_root(s).unwrap();
        let mut b = Bindings::for_graph(&g);
        b.set(iw, &[1.0, 2.0, 3.0, 4.0]);
        b.set(ix, &[0.5, -0.25]);
        // the map is bilinear: central differences are exact up to rounding
        assert!(finite_difference_check(&mut g, &b, 1e-5).unwrap() < 1e-10);
    }

    #[test]
    fn unbound_input_is_reported() {
        let (mut g, mut b) = smooth_graph();
        b.unset(InputId(1));
        assert_eq!(g.evaluate(&b), Err(Error::UnboundInput(1)));
        assert_eq!(finite_difference_check(&mut g, &b, 1e-5), Err(Error::UnboundInput(1)));
    }

    #[test]
    fn unreachable_inputs_have_zero_adjoint() {
        let mut g = ExprGraph::new();
        let (ia, a) = g.input(2);
        let (ib, _b) = g.input(3);
        let s = g.sum(vec![a]);
        g.set_root(s).unwrap();
        let mut b = Bindings::for_graph(&g);
        b.set(ia, &[1.0, 2.0]);
        b.set(ib, &[1.0, 2.0, 3.0]);
        let r = g.evaluate_with_gradient(&b).unwrap();
        assert_eq!(r.grad(ia), &[1.0, 1.0]);
        assert_eq!(r.grad(ib), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn gradient_of_sum_is_sum_of_gradients() {
        let build = |which: u8| {
            let mut g = ExprGraph::new();
            let (ix, x) = g.input(2);
            let t = g.tanh(x);
            let e = g.exp(x);
            let p = g.mul(t, e).unwrap();
            let sq = g.square(x);
            let root = match which {
                0 => g.sum(vec![p]),
                1 => g.sum(vec![sq]),
                _ => g.sum(vec![p, sq]),
            };
            g.set_root(root).unwrap();
            let mut b = Bindings::for_graph(&g);
            b.set(ix, &[0.3, -0.8]);
            g.evaluate_with_gradient(&b).unwrap().grads[0].clone()
        };
        let (a, b, ab) = (build(0), build(1), build(2));
        for k in 0..2 {
            assert_abs_diff_eq!(a[k] + b[k], ab[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn shape_errors_at_build_time() {
        let mut g = ExprGraph::new();
        let (_, a) = g.input(2);
        let (_, b) = g.input(3);
        assert!(matches!(g.add(a, b), Err(Error::Shape(_))));
        let (_, w) = g.input(5);
        assert!(matches!(g.affine(w, a, None), Err(Error::Shape(_))));
        assert!(matches!(g.set_root(a), Err(Error::Shape(_))));
    }

    #[test]
    fn sigma_floor_prevents_nan() {
        let mut g = ExprGraph::new();
        let (ix, x) = g.input(1);
        let m = g.scalar(0.0);
        let s = g.scalar(0.0);
        let lp = g.gaussian_log_pdf(x, m, s).unwrap();
        g.set_root(lp).unwrap();
        let mut b = Bindings::for_graph(&g);
        b.set(ix, &[0.0]);
        let v = g.evaluate(&b).unwrap();
        assert!(v.is_finite());
        assert_abs_diff_eq!(v, -(SIGMA_FLOOR.ln()) - HALF_LN_2PI, epsilon = 1e-9);
    }
}
