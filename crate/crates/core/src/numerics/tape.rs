//! Scoped reverse-mode differentiation tape.
//!
//! A [`Tape`] is idle until [`Tape::record`] is called. While recording,
//! every operation whose inputs carry a node on this tape appends a node
//! with a closure mapping the output gradient to input gradients. Operations
//! on an idle tape, or on inputs that are not tracked, just compute values.
//! [`Tape::backward`] walks the nodes in reverse recording order and then
//! clears the tape so it can be reused.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::value::{numel, NodeId, Param, ParamId, Value};
use crate::error::{Error, Result};

type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>> + Send>;

struct Node {
    len: usize,
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn>,
}

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

fn fresh_tape_id() -> u64 {
    NEXT_TAPE.fetch_add(1, Ordering::Relaxed)
}

pub struct Tape {
    id: u64,
    recording: bool,
    nodes: Vec<Node>,
    watched: Vec<(ParamId, usize)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Relu,
    Square,
    Abs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    /// An idle tape. Operations compute values without recording.
    pub fn new() -> Self {
        Tape {
            id: fresh_tape_id(),
            recording: false,
            nodes: Vec::new(),
            watched: Vec::new(),
        }
    }

    pub fn recording() -> Self {
        let mut t = Tape::new();
        t.record();
        t
    }

    pub fn record(&mut self) {
        self.recording = true;
    }

    pub fn stop(&mut self) {
        self.recording = false;
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Drops all nodes. Values recorded before the reset become foreign.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.watched.clear();
        self.id = fresh_tape_id();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, v: &Value) -> (Value, usize) {
        let index = self.nodes.len();
        self.nodes.push(Node {
            len: v.len(),
            inputs: Vec::new(),
            backward: None,
        });
        let node = NodeId {
            tape: self.id,
            index,
        };
        (
            Value::with_node(v.shape().to_vec(), v.data().to_vec(), Some(node)),
            index,
        )
    }

    /// Registers a trainable parameter as a leaf. Gradients for it are
    /// reported under its id by [`Tape::backward`].
    pub fn param(&mut self, p: &Param) -> Value {
        if !self.recording {
            return p.value().detach();
        }
        let (v, index) = self.push_leaf(p.value());
        self.watched.push((p.id(), index));
        v
    }

    /// Registers an arbitrary value as a differentiable leaf.
    pub fn leaf(&mut self, v: &Value) -> Value {
        if !self.recording {
            return v.detach();
        }
        self.push_leaf(v).0
    }

    fn track(&self, inputs: &[&Value]) -> Result<Option<Vec<Option<usize>>>> {
        if !self.recording {
            return Ok(None);
        }
        let mut any = false;
        let mut ids = Vec::with_capacity(inputs.len());
        for v in inputs {
            match v.node() {
                Some(n) if n.tape == self.id => {
                    any = true;
                    ids.push(Some(n.index));
                }
                Some(_) => return Err(Error::NotRecorded),
                None => ids.push(None),
            }
        }
        Ok(any.then_some(ids))
    }

    fn finish(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: &[&Value],
        make: impl FnOnce() -> BackwardFn,
    ) -> Result<Value> {
        match self.track(inputs)? {
            Some(ids) => {
                let index = self.nodes.len();
                self.nodes.push(Node {
                    len: data.len(),
                    inputs: ids,
                    backward: Some(make()),
                });
                let node = NodeId {
                    tape: self.id,
                    index,
                };
                Ok(Value::with_node(shape, data, Some(node)))
            }
            None => Ok(Value::with_node(shape, data, None)),
        }
    }

    /// Propagates d(loss)/d(node) back to every leaf and clears the tape.
    pub fn backward(&mut self, loss: &Value) -> Result<Gradients> {
        let node = loss.node().ok_or(Error::NotRecorded)?;
        if node.tape != self.id || node.index >= self.nodes.len() {
            return Err(Error::NotRecorded);
        }
        if !loss.is_scalar() {
            return Err(Error::NotScalar(loss.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[node.index] = Some(vec![1.0]);
        for i in (0..=node.index).rev() {
            let Some(backward) = self.nodes[i].backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let input_grads = backward(&g);
            for (slot, ig) in self.nodes[i].inputs.iter().zip(input_grads) {
                if let Some(j) = *slot {
                    debug_assert_eq!(ig.len(), self.nodes[j].len);
                    match grads[j].as_mut() {
                        Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                        None => grads[j] = Some(ig),
                    }
                }
            }
        }
        let mut params: HashMap<ParamId, Vec<f64>> = HashMap::new();
        for &(pid, idx) in &self.watched {
            let g = grads[idx]
                .clone()
                .unwrap_or_else(|| vec![0.0; self.nodes[idx].len]);
            match params.get_mut(&pid) {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => {
                    params.insert(pid, g);
                }
            }
        }
        let out = Gradients {
            tape: self.id,
            nodes: grads,
            params,
        };
        self.reset();
        Ok(out)
    }

    // ---- elementwise -------------------------------------------------

    pub fn unary(&mut self, x: &Value, kind: Unary) -> Result<Value> {
        let data: Vec<f64> = x
            .data()
            .iter()
            .map(|&v| match kind {
                Unary::Tanh => v.tanh(),
                Unary::Sigmoid => sigmoid(v),
                Unary::Relu => v.max(0.0),
                Unary::Square => v * v,
                Unary::Abs => v.abs(),
            })
            .collect();
        let shape = x.shape().to_vec();
        let saved_in = x.data().to_vec();
        let saved_out = data.clone();
        self.finish(shape, data, &[x], move || {
            Box::new(move |g: &[f64]| {
                let d = g
                    .iter()
                    .zip(saved_in.iter().zip(&saved_out))
                    .map(|(&g, (&x, &y))| match kind {
                        Unary::Tanh => g * (1.0 - y * y),
                        Unary::Sigmoid => g * y * (1.0 - y),
                        Unary::Relu => {
                            if x > 0.0 {
                                g
                            } else {
                                0.0
                            }
                        }
                        Unary::Square => 2.0 * x * g,
                        Unary::Abs => {
                            if x > 0.0 {
                                g
                            } else if x < 0.0 {
                                -g
                            } else {
                                0.0
                            }
                        }
                    })
                    .collect();
                vec![d]
            })
        })
    }

    pub fn tanh(&mut self, x: &Value) -> Result<Value> {
        self.unary(x, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, x: &Value) -> Result<Value> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn relu(&mut self, x: &Value) -> Result<Value> {
        self.unary(x, Unary::Relu)
    }

    pub fn square(&mut self, x: &Value) -> Result<Value> {
        self.unary(x, Unary::Square)
    }

    pub fn abs(&mut self, x: &Value) -> Result<Value> {
        self.unary(x, Unary::Abs)
    }

    /// Elementwise binary op. Shapes must match, or one side must hold a
    /// single element which is broadcast.
    pub fn binary(&mut self, a: &Value, b: &Value, kind: Binary) -> Result<Value> {
        let (la, lb) = (a.len(), b.len());
        let shape = if a.shape() == b.shape() || lb == 1 {
            a.shape().to_vec()
        } else if la == 1 {
            b.shape().to_vec()
        } else {
            return Err(Error::shape("elementwise", a.shape(), b.shape()));
        };
        let n = numel(&shape);
        let (ad, bd) = (a.data(), b.data());
        let ia = move |i: usize| if la == 1 { 0 } else { i };
        let ib = move |i: usize| if lb == 1 { 0 } else { i };
        let data: Vec<f64> = (0..n)
            .map(|i| {
                let (x, y) = (ad[ia(i)], bd[ib(i)]);
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                }
            })
            .collect();
        let (sa, sb) = if kind == Binary::Mul {
            (ad.to_vec(), bd.to_vec())
        } else {
            (Vec::new(), Vec::new())
        };
        self.finish(shape, data, &[a, b], move || {
            Box::new(move |g: &[f64]| {
                let mut ga = vec![0.0; la];
                let mut gb = vec![0.0; lb];
                for (i, &gi) in g.iter().enumerate() {
                    match kind {
                        Binary::Add => {
                            ga[ia(i)] += gi;
                            gb[ib(i)] += gi;
                        }
                        Binary::Sub => {
                            ga[ia(i)] += gi;
                            gb[ib(i)] -= gi;
                        }
                        Binary::Mul => {
                            ga[ia(i)] += gi * sb[ib(i)];
                            gb[ib(i)] += gi * sa[ia(i)];
                        }
                    }
                }
                vec![ga, gb]
            })
        })
    }

    pub fn add(&mut self, a: &Value, b: &Value) -> Result<Value> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: &Value, b: &Value) -> Result<Value> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: &Value, b: &Value) -> Result<Value> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn scale(&mut self, x: &Value, c: f64) -> Result<Value> {
        let data = x.data().iter().map(|v| v * c).collect();
        self.finish(x.shape().to_vec(), data, &[x], move || {
            Box::new(move |g: &[f64]| vec![g.iter().map(|v| v * c).collect()])
        })
    }

    pub fn add_scalar(&mut self, x: &Value, c: f64) -> Result<Value> {
        let data = x.data().iter().map(|v| v + c).collect();
        self.finish(x.shape().to_vec(), data, &[x], || {
            Box::new(|g: &[f64]| vec![g.to_vec()])
        })
    }

    // ---- reductions --------------------------------------------------

    pub fn sum(&mut self, x: &Value) -> Result<Value> {
        let s = x.data().iter().sum();
        let n = x.len();
        self.finish(Vec::new(), vec![s], &[x], move || {
            Box::new(move |g: &[f64]| vec![vec![g[0]; n]])
        })
    }

    pub fn mean(&mut self, x: &Value) -> Result<Value> {
        let n = x.len();
        let s: f64 = x.data().iter().sum();
        self.finish(Vec::new(), vec![s / n as f64], &[x], move || {
            Box::new(move |g: &[f64]| vec![vec![g[0] / n as f64; n]])
        })
    }

    // ---- linear algebra ----------------------------------------------

    pub fn matmul(&mut self, a: &Value, b: &Value) -> Result<Value> {
        if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
            return Err(Error::shape("matmul", a.shape(), b.shape()));
        }
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let out = matmul_raw(a.data(), b.data(), m, k, n);
        let (sa, sb) = (a.data().to_vec(), b.data().to_vec());
        self.finish(vec![m, n], out, &[a, b], move || {
            Box::new(move |g: &[f64]| {
                // dA = G Bᵀ, dB = Aᵀ G
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        let row = &mut ga[i * k..(i + 1) * k];
                        for (p, r) in row.iter_mut().enumerate() {
                            *r += gij * sb[p * n + j];
                        }
                    }
                }
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = sa[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        let grow = &g[i * n..(i + 1) * n];
                        let brow = &mut gb[p * n..(p + 1) * n];
                        for (b, gv) in brow.iter_mut().zip(grow) {
                            *b += aip * gv;
                        }
                    }
                }
                vec![ga, gb]
            })
        })
    }

    pub fn transpose(&mut self, a: &Value) -> Result<Value> {
        if a.shape().len() != 2 {
            return Err(Error::shape("transpose", a.shape(), &[]));
        }
        let (m, n) = (a.rows(), a.cols());
        let out = transpose_raw(a.data(), m, n);
        self.finish(vec![n, m], out, &[a], move || {
            Box::new(move |g: &[f64]| vec![transpose_raw(g, n, m)])
        })
    }

    /// Adds `bias` (one entry per index of `axis`) broadcast over all other axes.
    pub fn add_bias(&mut self, x: &Value, bias: &Value, axis: usize) -> Result<Value> {
        if axis >= x.shape().len() || bias.len() != x.shape()[axis] {
            return Err(Error::shape("add_bias", x.shape(), bias.shape()));
        }
        let (outer, len, inner) = split_axis(x.shape(), axis);
        let mut data = x.data().to_vec();
        let b = bias.data();
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                data[base..base + inner].iter_mut().for_each(|v| *v += b[a]);
            }
        }
        self.finish(x.shape().to_vec(), data, &[x, bias], move || {
            Box::new(move |g: &[f64]| {
                let mut gb = vec![0.0; len];
                for o in 0..outer {
                    for (a, gba) in gb.iter_mut().enumerate() {
                        let base = (o * len + a) * inner;
                        *gba += g[base..base + inner].iter().sum::<f64>();
                    }
                }
                vec![g.to_vec(), gb]
            })
        })
    }

    // ---- normalisation -----------------------------------------------

    /// Softmax along `axis`, with max subtraction.
    pub fn softmax(&mut self, x: &Value, axis: usize) -> Result<Value> {
        if axis >= x.shape().len().max(1) {
            return Err(Error::shape("softmax", x.shape(), &[axis]));
        }
        let shape = x.shape().to_vec();
        let (outer, len, inner) = if shape.is_empty() {
            (1, 1, 1)
        } else {
            split_axis(&shape, axis)
        };
        let xd = x.data();
        let mut y = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let m = (0..len).map(|a| xd[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for a in 0..len {
                    let e = (xd[idx(a)] - m).exp();
                    y[idx(a)] = e;
                    z += e;
                }
                for a in 0..len {
                    y[idx(a)] /= z;
                }
            }
        }
        let saved = y.clone();
        self.finish(shape, y, &[x], move || {
            Box::new(move |g: &[f64]| {
                let mut gx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * len + a) * inner + i;
                        let dot: f64 = (0..len).map(|a| g[idx(a)] * saved[idx(a)]).sum();
                        for a in 0..len {
                            gx[idx(a)] = saved[idx(a)] * (g[idx(a)] - dot);
                        }
                    }
                }
                vec![gx]
            })
        })
    }

    /// Layer normalisation over the last axis with epsilon 1e-5, then
    /// `gain * x̂ + bias`.
    pub fn layer_norm(&mut self, x: &Value, gain: &Value, bias: &Value) -> Result<Value> {
        const EPS: f64 = 1e-5;
        let width = *x.shape().last().ok_or_else(|| Error::invalid("layer_norm on a scalar"))?;
        if width == 0 {
            return Err(Error::invalid("layer_norm over a zero-length axis"));
        }
        if gain.len() != width || bias.len() != width {
            return Err(Error::shape("layer_norm", x.shape(), gain.shape()));
        }
        let rows = x.len() / width;
        let (xd, gd, bd) = (x.data(), gain.data(), bias.data());
        let mut xhat = vec![0.0; xd.len()];
        let mut inv = vec![0.0; rows];
        let mut y = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * width..(r + 1) * width];
            let mu = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / width as f64;
            let s = 1.0 / (var + EPS).sqrt();
            inv[r] = s;
            for c in 0..width {
                let h = (row[c] - mu) * s;
                xhat[r * width + c] = h;
                y[r * width + c] = h * gd[c] + bd[c];
            }
        }
        let gain_saved = gd.to_vec();
        self.finish(x.shape().to_vec(), y, &[x, gain, bias], move || {
            Box::new(move |g: &[f64]| {
                let mut gx = vec![0.0; g.len()];
                let mut gg = vec![0.0; width];
                let mut gbias = vec![0.0; width];
                let n = width as f64;
                for r in 0..rows {
                    let gr = &g[r * width..(r + 1) * width];
                    let hr = &xhat[r * width..(r + 1) * width];
                    let mut sum_d = 0.0;
                    let mut sum_dh = 0.0;
                    for c in 0..width {
                        gg[c] += gr[c] * hr[c];
                        gbias[c] += gr[c];
                        let d = gr[c] * gain_saved[c];
                        sum_d += d;
                        sum_dh += d * hr[c];
                    }
                    for c in 0..width {
                        let d = gr[c] * gain_saved[c];
                        gx[r * width + c] = inv[r] / n * (n * d - sum_d - hr[c] * sum_dh);
                    }
                }
                vec![gx, gg, gbias]
            })
        })
    }

    /// `D⁻¹ A` where `D` is the diagonal of row sums. Rows must have a
    /// positive sum.
    pub fn row_normalize(&mut self, a: &Value) -> Result<Value> {
        if a.shape().len() != 2 {
            return Err(Error::shape("row_normalize", a.shape(), &[]));
        }
        let (m, n) = (a.rows(), a.cols());
        let ad = a.data();
        let sums: Vec<f64> = (0..m).map(|i| ad[i * n..(i + 1) * n].iter().sum()).collect();
        if sums.iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid("row_normalize needs positive row sums"));
        }
        let y: Vec<f64> = (0..m * n).map(|idx| ad[idx] / sums[idx / n]).collect();
        let saved = y.clone();
        self.finish(vec![m, n], y, &[a], move || {
            Box::new(move |g: &[f64]| {
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    let dot: f64 = (0..n).map(|j| g[i * n + j] * saved[i * n + j]).sum();
                    for j in 0..n {
                        ga[i * n + j] = (g[i * n + j] - dot) / sums[i];
                    }
                }
                vec![ga]
            })
        })
    }

    // ---- convolution -------------------------------------------------

    /// Causal dilated 1-D cross-correlation without padding.
    ///
    /// `x` is `[N, C, L]`, `kernel` is `[C_out, C, w]`. Output `[N, C_out,
    /// L - (w-1)·d]` where output index `t` reads inputs `t + j·d` for
    /// `j < w`, i.e. it sits at input time `t + (w-1)·d` and sees nothing
    /// later.
    pub fn conv1d(&mut self, x: &Value, kernel: &Value, dilation: usize) -> Result<Value> {
        if x.shape().len() != 3 || kernel.shape().len() != 3 || x.shape()[1] != kernel.shape()[1] {
            return Err(Error::shape("conv1d", x.shape(), kernel.shape()));
        }
        if dilation == 0 {
            return Err(Error::invalid("dilation must be positive"));
        }
        let (n, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (co, w) = (kernel.shape()[0], kernel.shape()[2]);
        let needed = (w - 1) * dilation + 1;
        if l < needed {
            return Err(Error::SequenceTooShort { len: l, needed });
        }
        let lo = l - (w - 1) * dilation;
        let (xd, kd) = (x.data(), kernel.data());
        let mut out = vec![0.0; n * co * lo];
        for b in 0..n {
            for o in 0..co {
                let orow = &mut out[(b * co + o) * lo..(b * co + o + 1) * lo];
                for ci in 0..c {
                    let xrow = &xd[(b * c + ci) * l..(b * c + ci + 1) * l];
                    for j in 0..w {
                        let kv = kd[(o * c + ci) * w + j];
                        if kv == 0.0 {
                            continue;
                        }
                        let off = j * dilation;
                        for (y, xv) in orow.iter_mut().zip(&xrow[off..off + lo]) {
                            *y += kv * xv;
                        }
                    }
                }
            }
        }
        let (sx, sk) = (xd.to_vec(), kd.to_vec());
        self.finish(vec![n, co, lo], out, &[x, kernel], move || {
            Box::new(move |g: &[f64]| {
                let mut gx = vec![0.0; n * c * l];
                let mut gk = vec![0.0; co * c * w];
                for b in 0..n {
                    for o in 0..co {
                        let grow = &g[(b * co + o) * lo..(b * co + o + 1) * lo];
                        for ci in 0..c {
                            let xrow = &sx[(b * c + ci) * l..(b * c + ci + 1) * l];
                            let gxrow = &mut gx[(b * c + ci) * l..(b * c + ci + 1) * l];
                            for j in 0..w {
                                let off = j * dilation;
                                let kv = sk[(o * c + ci) * w + j];
                                let mut acc = 0.0;
                                for t in 0..lo {
                                    acc += grow[t] * xrow[off + t];
                                    gxrow[off + t] += kv * grow[t];
                                }
                                gk[(o * c + ci) * w + j] += acc;
                            }
                        }
                    }
                }
                vec![gx, gk]
            })
        })
    }

    // ---- shape manipulation -----------------------------------------

    pub fn reshape(&mut self, x: &Value, shape: &[usize]) -> Result<Value> {
        if numel(shape) != x.len() {
            return Err(Error::shape("reshape", x.shape(), shape));
        }
        self.finish(shape.to_vec(), x.data().to_vec(), &[x], || {
            Box::new(|g: &[f64]| vec![g.to_vec()])
        })
    }

    /// Elements `start..start+len` along `axis`.
    pub fn slice(&mut self, x: &Value, axis: usize, start: usize, len: usize) -> Result<Value> {
        if axis >= x.shape().len() || len == 0 || start + len > x.shape()[axis] {
            return Err(Error::shape("slice", x.shape(), &[axis, start, len]));
        }
        let (outer, full, inner) = split_axis(x.shape(), axis);
        let xd = x.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&xd[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let total = x.len();
        self.finish(shape, out, &[x], move || {
            Box::new(move |g: &[f64]| {
                let mut gx = vec![0.0; total];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    gx[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![gx]
            })
        })
    }

    pub fn concat(&mut self, parts: &[&Value], axis: usize) -> Result<Value> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(Error::shape("concat", first.shape(), &[axis]));
        }
        for p in parts {
            let same_rank = p.shape().len() == rank;
            if !same_rank
                || (0..rank).any(|d| d != axis && p.shape()[d] != first.shape()[d])
            {
                return Err(Error::shape("concat", first.shape(), p.shape()));
            }
        }
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total_len: usize = lens.iter().sum();
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let mut out = Vec::with_capacity(outer * total_len * inner);
        for o in 0..outer {
            for (p, &pl) in parts.iter().zip(&lens) {
                out.extend_from_slice(&p.data()[o * pl * inner..(o + 1) * pl * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total_len;
        self.finish(shape, out, parts, move || {
            Box::new(move |g: &[f64]| {
                let mut grads: Vec<Vec<f64>> =
                    lens.iter().map(|&pl| Vec::with_capacity(outer * pl * inner)).collect();
                let mut cursor = 0;
                for _ in 0..outer {
                    for (gp, &pl) in grads.iter_mut().zip(&lens) {
                        gp.extend_from_slice(&g[cursor..cursor + pl * inner]);
                        cursor += pl * inner;
                    }
                }
                grads
            })
        })
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Gradients produced by one [`Tape::backward`] call.
pub struct Gradients {
    tape: u64,
    nodes: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, Vec<f64>>,
}

impl Gradients {
    /// Gradient with respect to a leaf created by [`Tape::leaf`] or
    /// [`Tape::param`] on the tape generation that produced these gradients.
    pub fn wrt(&self, v: &Value) -> Option<&[f64]> {
        let node = v.node()?;
        if node.tape != self.tape {
            return None;
        }
        self.nodes.get(node.index)?.as_deref()
    }

    pub fn param(&self, p: &Param) -> Option<&[f64]> {
        self.params.get(&p.id()).map(Vec::as_slice)
    }

    pub fn param_mut(&mut self, p: &Param) -> Option<&mut Vec<f64>> {
        self.params.get_mut(&p.id())
    }

    pub fn global_norm(&self, params: &[&Param]) -> f64 {
        params
            .iter()
            .filter_map(|p| self.param(p))
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales the listed parameter gradients so their joint L2 norm is at
    /// most `max_norm`. Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, params: &[&Param], max_norm: f64) -> f64 {
        let norm = self.global_norm(params);
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for p in params {
                if let Some(g) = self.params.get_mut(&p.id()) {
                    g.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(shape: &[usize], data: &[f64]) -> Value {
        Value::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn idle_tape_records_nothing() {
        let mut t = Tape::new();
        let x = t.leaf(&Value::vector(vec![1.0, 2.0]));
        let y = t.tanh(&x).unwrap();
        assert!(y.node().is_none());
        assert!(t.is_empty());
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut t = Tape::new();
        let b = v(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        let out = t.matmul(&Value::identity(2), &b).unwrap();
        assert_eq!(out.data(), b.data());

        let a = v(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let c = v(&[2, 1], &[0.0, 1.0]);
        assert_eq!(t.matmul(&a, &c).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let err = t
            .matmul(&Value::zeros(&[2, 3]), &Value::zeros(&[2, 3]))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn elementwise_examples() {
        let mut t = Tape::new();
        let r = t.relu(&Value::vector(vec![-1.0, 0.0, 2.0])).unwrap();
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(t.sigmoid(&Value::scalar(0.0)).unwrap().item(), 0.5);
        let one = Value::scalar(1.0);
        let th = t.tanh(&one).unwrap();
        let sg = t.sigmoid(&one).unwrap();
        let prod = t.mul(&th, &sg).unwrap().item();
        // tanh(1) = 0.761594..., sigmoid(1) = 0.731058...
        assert!((prod - 0.55677).abs() < 1e-4, "{prod}");
    }

    #[test]
    fn binary_shape_mismatch() {
        let mut t = Tape::new();
        assert!(t.add(&Value::zeros(&[2]), &Value::zeros(&[3])).is_err());
        let s = t.mul(&Value::vector(vec![1.0, 2.0]), &Value::scalar(3.0)).unwrap();
        assert_eq!(s.data(), &[3.0, 6.0]);
    }

    #[test]
    fn conv_examples() {
        let mut t = Tape::new();
        let x = v(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let ones = v(&[1, 1, 1], &[1.0]);
        assert_eq!(t.conv1d(&x, &ones, 1).unwrap().data(), x.data());
        let k = v(&[1, 1, 2], &[1.0, 1.0]);
        assert_eq!(t.conv1d(&x, &k, 1).unwrap().data(), &[3.0, 5.0, 7.0]);
        assert!(matches!(
            t.conv1d(&x, &k, 4),
            Err(Error::SequenceTooShort { len: 4, needed: 5 })
        ));
    }

    #[test]
    fn layer_norm_examples() {
        let mut t = Tape::new();
        let g = Value::vector(vec![1.0, 1.0]);
        let b = Value::vector(vec![0.0, 0.0]);
        let y = t.layer_norm(&v(&[1, 2], &[1.0, 3.0]), &g, &b).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-5 && (y.data()[1] - 1.0).abs() < 1e-5);
        let c = t.layer_norm(&v(&[1, 2], &[4.0, 4.0]), &g, &b).unwrap();
        assert_eq!(c.data(), &[0.0, 0.0]);
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let s = t.softmax(&Value::vector(vec![0.0, 0.0]), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = t.softmax(&Value::vector(vec![1000.0, 1000.0]), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = t.softmax(&Value::vector(vec![1.0, 2.0, 3.0]), 0).unwrap();
        for (a, b) in s.data().iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn backward_examples() {
        let mut t = Tape::recording();
        let x = t.leaf(&v(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]));
        let s = t.sum(&x).unwrap();
        let g = t.backward(&s).unwrap();
        assert_eq!(g.wrt(&x).unwrap(), &[1.0; 6]);
        assert!(t.is_empty(), "tape cleared after backward");

        t.record();
        let x = t.leaf(&Value::vector(vec![1.0, 2.0]));
        let sq = t.square(&x).unwrap();
        let s = t.sum(&sq).unwrap();
        let g = t.backward(&s).unwrap();
        assert_eq!(g.wrt(&x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_errors() {
        let mut t = Tape::recording();
        let x = t.leaf(&Value::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(&x), Err(Error::NotScalar(_))));
        let plain = Value::scalar(1.0);
        assert!(matches!(t.backward(&plain), Err(Error::NotRecorded)));
    }

    #[test]
    fn unreached_params_get_zero_gradients() {
        let p = Param::new(Value::vector(vec![1.0, 2.0]));
        let q = Param::new(Value::vector(vec![3.0]));
        let mut t = Tape::recording();
        let pv = t.param(&p);
        let _qv = t.param(&q);
        let s = t.sum(&pv).unwrap();
        let g = t.backward(&s).unwrap();
        assert_eq!(g.param(&p).unwrap(), &[1.0, 1.0]);
        assert_eq!(g.param(&q).unwrap(), &[0.0]);
    }

    #[test]
    fn slice_concat_roundtrip_values() {
        let mut t = Tape::new();
        let x = v(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let a = t.slice(&x, 1, 0, 1).unwrap();
        let b = t.slice(&x, 1, 1, 2).unwrap();
        assert_eq!(a.data(), &[1.0, 4.0]);
        assert_eq!(b.data(), &[2.0, 3.0, 5.0, 6.0]);
        let back = t.concat(&[&a, &b], 1).unwrap();
        assert_eq!(back.data(), x.data());
    }
}
