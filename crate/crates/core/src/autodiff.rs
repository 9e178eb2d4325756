//! Reverse-mode differentiation for the handful of primitives MagNet needs.
//!
//! Complex quantities carry independent gradients for their real and
//! imaginary parts, i.e. every complex entry counts as two real coordinates.
//! For a linear map `y = A x` with complex `A` this makes the adjoint
//! `g_x = A^† g_y`, where `g = dL/dRe + i dL/dIm`.
//!
//! A [`Tape`] records primitives as they execute, eagerly computing values.
//! [`Tape::backward`] walks the records in exact reverse order.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense::ComplexFeatureMatrix;
use crate::error::{Error, Result};
use crate::sparse::ComplexSparseMatrix;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A trainable tensor. Complex parameters keep their imaginary plane in `im`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub re: Array2<f64>,
    pub im: Option<Array2<f64>>,
    pub grad_re: Array2<f64>,
    pub grad_im: Option<Array2<f64>>,
    pub trainable: bool,
}

impl Parameter {
    pub fn real(name: impl Into<String>, value: Array2<f64>) -> Self {
        let grad_re = Array2::zeros(value.dim());
        Self {
            name: name.into(),
            re: value,
            im: None,
            grad_re,
            grad_im: None,
            trainable: true,
        }
    }

    pub fn complex(name: impl Into<String>, re: Array2<f64>, im: Array2<f64>) -> Self {
        assert_eq!(re.dim(), im.dim(), "parameter planes must agree");
        let grad_re = Array2::zeros(re.dim());
        let grad_im = Some(Array2::zeros(im.dim()));
        Self {
            name: name.into(),
            re,
            im: Some(im),
            grad_re,
            grad_im,
            trainable: true,
        }
    }

    pub fn is_complex(&self) -> bool {
        self.im.is_some()
    }

    /// Number of entries, counting a complex entry once.
    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// Number of real coordinates.
    pub fn real_len(&self) -> usize {
        self.re.len() * if self.is_complex() { 2 } else { 1 }
    }

    fn zero_grad(&mut self) {
        self.grad_re.fill(0.0);
        if let Some(g) = &mut self.grad_im {
            g.fill(0.0);
        }
    }

    /// Real coordinate `k`: the real plane first, then the imaginary plane.
    pub fn coord(&self, k: usize) -> f64 {
        let n = self.re.len();
        if k < n {
            self.re.as_slice().unwrap()[k]
        } else {
            self.im.as_ref().unwrap().as_slice().unwrap()[k - n]
        }
    }

    pub fn coord_mut(&mut self, k: usize) -> &mut f64 {
        let n = self.re.len();
        if k < n {
            &mut self.re.as_slice_mut().unwrap()[k]
        } else {
            &mut self.im.as_mut().unwrap().as_slice_mut().unwrap()[k - n]
        }
    }

    pub fn grad_coord(&self, k: usize) -> f64 {
        let n = self.re.len();
        if k < n {
            self.grad_re.as_slice().unwrap()[k]
        } else {
            self.grad_im.as_ref().unwrap().as_slice().unwrap()[k - n]
        }
    }
}

/// Ordered collection of parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, p: Parameter) -> ParamId {
        self.params.push(p);
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    /// Total entries, complex counted once.
    pub fn num_entries(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    pub fn num_real_coords(&self) -> usize {
        self.params.iter().map(Parameter::real_len).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            params: self
                .params
                .iter()
                .map(|p| CheckpointEntry {
                    name: p.name.clone(),
                    shape: [p.re.nrows(), p.re.ncols()],
                    re: p.re.iter().copied().collect(),
                    im: p.im.as_ref().map(|a| a.iter().copied().collect()),
                })
                .collect(),
        }
    }

    /// Overwrites values from a checkpoint with identical names and shapes.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "checkpoint format {} unsupported (expected {CHECKPOINT_VERSION})",
                ck.format_version
            )));
        }
        if ck.params.len() != self.params.len() {
            return Err(Error::dims(self.params.len(), ck.params.len()));
        }
        for (p, e) in self.params.iter_mut().zip(&ck.params) {
            if p.name != e.name || [p.re.nrows(), p.re.ncols()] != e.shape || p.is_complex() != e.im.is_some() {
                return Err(Error::InvalidConfig(format!(
                    "checkpoint entry {} does not match parameter {}",
                    e.name, p.name
                )));
            }
            p.re = Array2::from_shape_vec((e.shape[0], e.shape[1]), e.re.clone())
                .map_err(|err| Error::InvalidConfig(err.to_string()))?;
            if let Some(im) = &e.im {
                p.im = Some(
                    Array2::from_shape_vec((e.shape[0], e.shape[1]), im.clone())
                        .map_err(|err| Error::InvalidConfig(err.to_string()))?,
                );
            }
        }
        Ok(())
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized parameter values: a versioned name -> array map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub params: Vec<CheckpointEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub re: Vec<f64>,
    pub im: Option<Vec<f64>>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Glorot-uniform matrix: entries in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let a = (6.0 / (rows + cols).max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..=a))
}

/// `sigma(z) = z` when `-pi/2 <= arg z < pi/2`, else 0. `sigma(0) = 0`.
#[inline]
pub fn relu_passes(re: f64, im: f64) -> bool {
    re > 0.0 || (re == 0.0 && im < 0.0)
}

/// Entrywise complex ReLU without recording.
pub fn complex_relu(z: &ComplexFeatureMatrix) -> ComplexFeatureMatrix {
    let mut out = z.clone();
    let (re, im) = out.planes_mut();
    Zip::from(re).and(im).for_each(|r, i| {
        if !relu_passes(*r, *i) {
            *r = 0.0;
            *i = 0.0;
        }
    });
    out
}

/// `[Re x | Im x]`.
pub fn unwind(x: &ComplexFeatureMatrix) -> Array2<f64> {
    let f = x.cols();
    let mut out = Array2::zeros((x.rows(), 2 * f));
    out.slice_mut(s![.., ..f]).assign(x.re());
    out.slice_mut(s![.., f..]).assign(x.im());
    out
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let z: f64 = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    p
}

/// Inverted-dropout mask: entries are `0` or `1 / (1 - p)`.
pub fn dropout_mask<R: Rng + ?Sized>(shape: (usize, usize), p: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_fn(shape, |_| if rng.gen::<f64>() < p { 0.0 } else { keep })
}

#[derive(Debug, Clone)]
pub enum Value {
    Complex(ComplexFeatureMatrix),
    Real(Array2<f64>),
    Scalar(f64),
}

impl Value {
    pub fn as_complex(&self) -> &ComplexFeatureMatrix {
        match self {
            Value::Complex(c) => c,
            other => panic!("expected complex value, found {other:?}"),
        }
    }

    pub fn as_real(&self) -> &Array2<f64> {
        match self {
            Value::Real(r) => r,
            other => panic!("expected real value, found {other:?}"),
        }
    }

    pub fn as_scalar(&self) -> f64 {
        match self {
            Value::Scalar(s) => *s,
            other => panic!("expected scalar, found {other:?}"),
        }
    }

    fn zeros_like(&self) -> Value {
        match self {
            Value::Complex(c) => Value::Complex(ComplexFeatureMatrix::zeros(c.rows(), c.cols())),
            Value::Real(r) => Value::Real(Array2::zeros(r.dim())),
            Value::Scalar(_) => Value::Scalar(0.0),
        }
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Operator {
        adjoint: Arc<ComplexSparseMatrix>,
        x: NodeId,
    },
    Lincomb {
        a: f64,
        x: NodeId,
        y: NodeId,
    },
    Mix {
        terms: Vec<(NodeId, ParamId)>,
        bias: Option<ParamId>,
    },
    SharedMix {
        terms: Vec<(NodeId, ParamId)>,
    },
    AddBias {
        x: NodeId,
        bias: ParamId,
    },
    ComplexRelu {
        x: NodeId,
        mask: Array2<bool>,
    },
    Unwind {
        x: NodeId,
    },
    Dropout {
        x: NodeId,
        mask: Array2<f64>,
    },
    GatherPairs {
        x: NodeId,
        pairs: Vec<(usize, usize)>,
    },
    Linear {
        x: NodeId,
        w: ParamId,
        b: Option<ParamId>,
    },
    SoftmaxXent {
        logits: NodeId,
        probs: Array2<f64>,
        targets: Vec<(usize, usize)>,
    },
    RealSum {
        x: NodeId,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Value,
}

/// Record of executed primitives.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &Value {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Value) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn input_complex(&mut self, x: ComplexFeatureMatrix) -> NodeId {
        self.push(Op::Input, Value::Complex(x))
    }

    pub fn input_real(&mut self, x: Array2<f64>) -> NodeId {
        self.push(Op::Input, Value::Real(x))
    }

    /// `op * x` for a fixed sparse operator.
    pub fn operator_apply(&mut self, op: &Arc<ComplexSparseMatrix>, x: NodeId) -> Result<NodeId> {
        let y = op.apply(self.value(x).as_complex())?;
        let adjoint = if op.is_hermitian() {
            Arc::clone(op)
        } else {
            Arc::new(op.adjoint())
        };
        Ok(self.push(Op::Operator { adjoint, x }, Value::Complex(y)))
    }

    /// `a * x - y`.
    pub fn lincomb(&mut self, a: f64, x: NodeId, y: NodeId) -> NodeId {
        let v = ComplexFeatureMatrix::lincomb(a, self.value(x).as_complex(), self.value(y).as_complex());
        self.push(Op::Lincomb { a, x, y }, Value::Complex(v))
    }

    /// `sum_k X_k Theta_k + b` with complex `X_k`, real `Theta_k`
    /// (`F_in x F_out`) and an optional complex bias row (`1 x F_out`).
    pub fn mix(&mut self, params: &ParamStore, terms: &[(NodeId, ParamId)], bias: Option<ParamId>) -> Result<NodeId> {
        let (first_x, first_w) = *terms
            .first()
            .ok_or_else(|| Error::InvalidParameter("mix needs at least one term".into()))?;
        let rows = self.value(first_x).as_complex().rows();
        let cols = params.get(first_w).re.ncols();
        let mut re = Array2::zeros((rows, cols));
        let mut im = Array2::zeros((rows, cols));
        for &(x, w) in terms {
            let xv = self.value(x).as_complex();
            let wv = &params.get(w).re;
            if xv.cols() != wv.nrows() || wv.ncols() != cols || xv.rows() != rows {
                return Err(Error::dims(
                    format!("{rows}x{} input for a {}x{cols} weight", wv.nrows(), wv.nrows()),
                    format!(
                        "{}x{} input for a {}x{} weight",
                        xv.rows(),
                        xv.cols(),
                        wv.nrows(),
                        wv.ncols()
                    ),
                ));
            }
            re += &xv.re().dot(wv);
            im += &xv.im().dot(wv);
        }
        if let Some(b) = bias {
            let p = params.get(b);
            if p.re.dim() != (1, cols) {
                return Err(Error::dims(format!("1x{cols} bias"), format!("{:?}", p.re.dim())));
            }
            re += &p.re;
            if let Some(bi) = &p.im {
                im += bi;
            }
        }
        let v = ComplexFeatureMatrix::from_parts(re, im)?;
        Ok(self.push(
            Op::Mix {
                terms: terms.to_vec(),
                bias,
            },
            Value::Complex(v),
        ))
    }

    /// `sum_k theta_k (sum_i X_k[:, i])` broadcast to `cols` identical output
    /// channels; each `theta_k` is a `1 x 1` parameter shared by every
    /// channel pair.
    pub fn shared_mix(&mut self, params: &ParamStore, terms: &[(NodeId, ParamId)], cols: usize) -> Result<NodeId> {
        let (first_x, _) = *terms
            .first()
            .ok_or_else(|| Error::InvalidParameter("mix needs at least one term".into()))?;
        let rows = self.value(first_x).as_complex().rows();
        let mut re = ndarray::Array1::<f64>::zeros(rows);
        let mut im = ndarray::Array1::<f64>::zeros(rows);
        for &(x, w) in terms {
            let xv = self.value(x).as_complex();
            if xv.rows() != rows {
                return Err(Error::dims(rows, xv.rows()));
            }
            let theta = params.get(w).re[[0, 0]];
            re.scaled_add(theta, &xv.re().sum_axis(Axis(1)));
            im.scaled_add(theta, &xv.im().sum_axis(Axis(1)));
        }
        let re = Array2::from_shape_fn((rows, cols), |(r, _)| re[r]);
        let im = Array2::from_shape_fn((rows, cols), |(r, _)| im[r]);
        let v = ComplexFeatureMatrix::from_parts(re, im)?;
        Ok(self.push(Op::SharedMix { terms: terms.to_vec() }, Value::Complex(v)))
    }

    /// Adds a complex `1 x F` bias row to every row of `x`.
    pub fn mix_bias(&mut self, params: &ParamStore, x: NodeId, bias: ParamId) -> Result<NodeId> {
        let mut v = self.value(x).as_complex().clone();
        let p = params.get(bias);
        if p.re.dim() != (1, v.cols()) {
            return Err(Error::dims(format!("1x{} bias", v.cols()), format!("{:?}", p.re.dim())));
        }
        *v.re_mut() += &p.re;
        if let Some(bi) = &p.im {
            *v.im_mut() += bi;
        }
        Ok(self.push(Op::AddBias { x, bias }, Value::Complex(v)))
    }

    pub fn complex_relu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x).as_complex();
        let mut mask = Array2::from_elem(xv.dim(), false);
        Zip::from(&mut mask)
            .and(xv.re())
            .and(xv.im())
            .for_each(|m, &r, &i| *m = relu_passes(r, i));
        let y = complex_relu(xv);
        self.push(Op::ComplexRelu { x, mask }, Value::Complex(y))
    }

    pub fn unwind(&mut self, x: NodeId) -> NodeId {
        let y = unwind(self.value(x).as_complex());
        self.push(Op::Unwind { x }, Value::Real(y))
    }

    /// Identity when `p == 0` or no generator is supplied (evaluation mode).
    pub fn dropout(&mut self, x: NodeId, p: f64, rng: Option<&mut dyn rand::RngCore>) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        let Some(rng) = rng.filter(|_| p > 0.0) else {
            return Ok(x);
        };
        let xv = self.value(x).as_real();
        let mask = dropout_mask(xv.dim(), p, rng);
        let y = xv * &mask;
        Ok(self.push(Op::Dropout { x, mask }, Value::Real(y)))
    }

    /// Row `k` of the output is `[x[u_k] | x[v_k]]`.
    pub fn gather_pairs(&mut self, x: NodeId, pairs: &[(usize, usize)]) -> Result<NodeId> {
        let xv = self.value(x).as_real();
        let (n, d) = xv.dim();
        let mut out = Array2::zeros((pairs.len(), 2 * d));
        for (k, &(u, v)) in pairs.iter().enumerate() {
            if u >= n || v >= n {
                return Err(Error::InvalidParameter(format!("pair ({u}, {v}) outside 0..{n}")));
            }
            out.slice_mut(s![k, ..d]).assign(&xv.row(u));
            out.slice_mut(s![k, d..]).assign(&xv.row(v));
        }
        Ok(self.push(
            Op::GatherPairs {
                x,
                pairs: pairs.to_vec(),
            },
            Value::Real(out),
        ))
    }

    /// `x W + b` for real `x`.
    pub fn linear(&mut self, params: &ParamStore, x: NodeId, w: ParamId, b: Option<ParamId>) -> Result<NodeId> {
        let xv = self.value(x).as_real();
        let wv = &params.get(w).re;
        if xv.ncols() != wv.nrows() {
            return Err(Error::dims(format!("{} input columns", wv.nrows()), xv.ncols()));
        }
        let mut y = xv.dot(wv);
        if let Some(b) = b {
            y += &params.get(b).re;
        }
        Ok(self.push(Op::Linear { x, w, b }, Value::Real(y)))
    }

    /// Mean cross-entropy of `softmax(logits)` over `(row, class)` targets.
    pub fn softmax_xent(&mut self, logits: NodeId, targets: &[(usize, usize)]) -> Result<NodeId> {
        if targets.is_empty() {
            return Err(Error::Insufficient("cross-entropy over an empty mask".into()));
        }
        let lv = self.value(logits).as_real();
        let probs = softmax_rows(lv);
        let (n, c) = probs.dim();
        let mut loss = 0.0;
        for &(r, y) in targets {
            if r >= n || y >= c {
                return Err(Error::InvalidParameter(format!("target ({r}, {y}) outside {n}x{c}")));
            }
            loss -= probs[[r, y]].ln();
        }
        loss /= targets.len() as f64;
        Ok(self.push(
            Op::SoftmaxXent {
                logits,
                probs,
                targets: targets.to_vec(),
            },
            Value::Scalar(loss),
        ))
    }

    /// Sum of all real parts of a complex node; a test-friendly scalar loss.
    pub fn real_sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).as_complex().re().sum();
        self.push(Op::RealSum { x }, Value::Scalar(s))
    }

    /// Probabilities computed by a softmax cross-entropy node.
    pub fn probabilities(&self, id: NodeId) -> Option<&Array2<f64>> {
        match &self.nodes[id].op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Hash of every complex ReLU activation pattern on the tape. Two tapes
    /// with equal fingerprints took the same branch at every unit.
    pub fn relu_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            if let Op::ComplexRelu { mask, .. } = &node.op {
                mask.iter().for_each(|b| b.hash(&mut h));
            }
        }
        h.finish()
    }

    /// Zeroes parameter gradients, then accumulates `d loss / d param`.
    pub fn backward(&self, loss: NodeId, params: &mut ParamStore) {
        params.zero_grad();
        let mut grads: Vec<Option<Value>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Value::Scalar(1.0));
        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, g, &mut grads, params);
        }
    }

    fn backprop_node(&self, id: NodeId, g: Value, grads: &mut [Option<Value>], params: &mut ParamStore) {
        let acc = |grads: &mut [Option<Value>], target: NodeId, delta: Value| {
            let slot = grads[target].get_or_insert_with(|| self.nodes[target].value.zeros_like());
            match (slot, delta) {
                (Value::Complex(s), Value::Complex(d)) => s.axpy(1.0, &d),
                (Value::Real(s), Value::Real(d)) => *s += &d,
                (Value::Scalar(s), Value::Scalar(d)) => *s += d,
                _ => unreachable!("gradient kind mismatch"),
            }
        };
        match &self.nodes[id].op {
            Op::Input => {}
            Op::Operator { adjoint, x } => {
                let gx = adjoint.apply(g.as_complex()).expect("shapes checked in forward");
                acc(grads, *x, Value::Complex(gx));
            }
            Op::Lincomb { a, x, y } => {
                let gc = g.as_complex();
                let mut gx = ComplexFeatureMatrix::zeros(gc.rows(), gc.cols());
                gx.axpy(*a, gc);
                acc(grads, *x, Value::Complex(gx));
                let mut gy = ComplexFeatureMatrix::zeros(gc.rows(), gc.cols());
                gy.axpy(-1.0, gc);
                acc(grads, *y, Value::Complex(gy));
            }
            Op::Mix { terms, bias } => {
                let gc = g.as_complex();
                for &(x, w) in terms {
                    let xv = self.value(x).as_complex();
                    let gw = xv.re().t().dot(gc.re()) + xv.im().t().dot(gc.im());
                    let p = params.get_mut(w);
                    p.grad_re += &gw;
                    let wt = p.re.t();
                    let gx =
                        ComplexFeatureMatrix::from_parts(gc.re().dot(&wt), gc.im().dot(&wt)).expect("matching planes");
                    acc(grads, x, Value::Complex(gx));
                }
                if let Some(b) = bias {
                    let p = params.get_mut(*b);
                    p.grad_re += &gc.re().sum_axis(Axis(0)).insert_axis(Axis(0));
                    if let Some(gi) = &mut p.grad_im {
                        *gi += &gc.im().sum_axis(Axis(0)).insert_axis(Axis(0));
                    }
                }
            }
            Op::SharedMix { terms } => {
                let gc = g.as_complex();
                let g_re = gc.re().sum_axis(Axis(1));
                let g_im = gc.im().sum_axis(Axis(1));
                for &(x, w) in terms {
                    let xv = self.value(x).as_complex();
                    let gw = xv.re().sum_axis(Axis(1)).dot(&g_re) + xv.im().sum_axis(Axis(1)).dot(&g_im);
                    let p = params.get_mut(w);
                    p.grad_re[[0, 0]] += gw;
                    let theta = p.re[[0, 0]];
                    let (n, f) = xv.dim();
                    let gx = ComplexFeatureMatrix::from_parts(
                        Array2::from_shape_fn((n, f), |(r, _)| theta * g_re[r]),
                        Array2::from_shape_fn((n, f), |(r, _)| theta * g_im[r]),
                    )
                    .expect("matching planes");
                    acc(grads, x, Value::Complex(gx));
                }
            }
            Op::AddBias { x, bias } => {
                let gc = g.as_complex();
                let p = params.get_mut(*bias);
                p.grad_re += &gc.re().sum_axis(Axis(0)).insert_axis(Axis(0));
                if let Some(gi) = &mut p.grad_im {
                    *gi += &gc.im().sum_axis(Axis(0)).insert_axis(Axis(0));
                }
                acc(grads, *x, Value::Complex(gc.clone()));
            }
            Op::ComplexRelu { x, mask } => {
                let mut gx = g.as_complex().clone();
                let (re, im) = gx.planes_mut();
                Zip::from(re).and(im).and(mask).for_each(|r, i, &m| {
                    if !m {
                        *r = 0.0;
                        *i = 0.0;
                    }
                });
                acc(grads, *x, Value::Complex(gx));
            }
            Op::Unwind { x } => {
                let gr = g.as_real();
                let f = gr.ncols() / 2;
                let gx = ComplexFeatureMatrix::from_parts(
                    gr.slice(s![.., ..f]).to_owned(),
                    gr.slice(s![.., f..]).to_owned(),
                )
                .expect("matching planes");
                acc(grads, *x, Value::Complex(gx));
            }
            Op::Dropout { x, mask } => {
                acc(grads, *x, Value::Real(g.as_real() * mask));
            }
            Op::GatherPairs { x, pairs } => {
                let gr = g.as_real();
                let xv = self.value(*x).as_real();
                let d = xv.ncols();
                let mut gx = Array2::zeros(xv.dim());
                for (k, &(u, v)) in pairs.iter().enumerate() {
                    {
                        let mut row = gx.row_mut(u);
                        row += &gr.slice(s![k, ..d]);
                    }
                    let mut row = gx.row_mut(v);
                    row += &gr.slice(s![k, d..]);
                }
                acc(grads, *x, Value::Real(gx));
            }
            Op::Linear { x, w, b } => {
                let gr = g.as_real();
                let xv = self.value(*x).as_real();
                let p = params.get_mut(*w);
                p.grad_re += &xv.t().dot(gr);
                let gx = gr.dot(&p.re.t());
                if let Some(b) = b {
                    params.get_mut(*b).grad_re += &gr.sum_axis(Axis(0)).insert_axis(Axis(0));
                }
                acc(grads, *x, Value::Real(gx));
            }
            Op::SoftmaxXent { logits, probs, targets } => {
                let scale = g.as_scalar() / targets.len() as f64;
                let mut gl = Array2::zeros(probs.dim());
                for &(r, y) in targets {
                    let mut row = gl.row_mut(r);
                    row.scaled_add(scale, &probs.row(r));
                    row[y] -= scale;
                }
                acc(grads, *logits, Value::Real(gl));
            }
            Op::RealSum { x } => {
                let xv = self.value(*x).as_complex();
                let re = Array2::from_elem(xv.dim(), g.as_scalar());
                let gx = ComplexFeatureMatrix::from_parts(re, Array2::zeros(xv.dim())).expect("matching planes");
                acc(grads, *x, Value::Complex(gx));
            }
        }
    }
}

/// Adam with classical (gradient-side) L2 weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every trainable parameter from its stored gradient.
    pub fn step(&mut self, params: &mut ParamStore) {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (vec![0.0; p.real_len()], vec![0.0; p.real_len()]))
                .collect();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (p, (m, v)) in params.iter_mut().zip(&mut self.moments) {
            if !p.trainable {
                continue;
            }
            for k in 0..p.real_len() {
                let g = p.grad_coord(k) + self.weight_decay * p.coord(k);
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                *p.coord_mut(k) -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Outcome of one loss evaluation for [`finite_difference_check`].
#[derive(Debug, Clone, Copy)]
pub struct FdEval {
    pub loss: f64,
    /// Activation-pattern fingerprint, see [`Tape::relu_fingerprint`].
    pub pattern: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// `(parameter name, coordinate)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Coordinates whose perturbation changed the activation pattern.
    pub excluded: usize,
}

/// Relative error with an absolute floor below which differences are
/// compared absolutely.
pub const FD_ABS_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_ABS_FLOOR)
}

/// Central differences on every trainable coordinate (or a random subset of
/// `max_coords` when there are more) against the gradients currently stored
/// in `params`. Coordinates whose `±eps` evaluations cross a ReLU boundary
/// are excluded and counted.
pub fn finite_difference_check(
    params: &mut ParamStore,
    mut eval: impl FnMut(&ParamStore) -> FdEval,
    eps: f64,
    max_coords: usize,
    rng: &mut impl Rng,
) -> Result<FdReport> {
    if !(1e-8..=1e-4).contains(&eps) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step {eps} outside [1e-8, 1e-4]"
        )));
    }
    let base = eval(params);
    let mut coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(i, p)| (0..p.real_len()).map(move |k| (i, k)))
        .collect();
    if coords.len() > max_coords {
        rand::seq::SliceRandom::shuffle(coords.as_mut_slice(), rng);
        coords.truncate(max_coords);
        coords.sort_unstable();
    }
    let mut report = FdReport::default();
    for (i, k) in coords {
        let id = ParamId(i);
        let analytic = params.get(id).grad_coord(k);
        let orig = params.get(id).coord(k);
        *params.get_mut(id).coord_mut(k) = orig + eps;
        let plus = eval(params);
        *params.get_mut(id).coord_mut(k) = orig - eps;
        let minus = eval(params);
        *params.get_mut(id).coord_mut(k) = orig;
        if plus.pattern != base.pattern || minus.pattern != base.pattern {
            report.excluded += 1;
            continue;
        }
        let numeric = (plus.loss - minus.loss) / (2.0 * eps);
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            if err >= report.max_rel_error {
                report.worst = Some((params.get(id).name.clone(), k));
            }
        }
    }
    Ok(report)
}
