//! Differentiable operations and their reverse rules.

use std::rc::Rc;

use rand::Rng;

use super::tape::{GradBuf, Node};
use super::tensor::{broadcast_shape, for_each_broadcast, gemm};
use super::{AutodiffError, Tensor, Var};

pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    LeakyRelu(usize, f64),
    Elu(usize, f64),
    ClampMin(usize, f64),
    Softmax(usize),
    Concat(Vec<usize>, usize),
    Sum(usize),
    SumAxis(usize, usize),
    Mean(usize),
    Reshape(usize),
    Dropout(usize, Rc<Vec<f64>>),
    GatherRows(usize, Rc<Vec<u32>>),
    GruStep(Box<GruSaved>),
}

pub(crate) struct GruSaved {
    proj: [usize; 3],
    h: usize,
    u: [usize; 3],
    b: [usize; 3],
    idx: Rc<Vec<u32>>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
}

impl Op {
    pub fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) => vec![*a, *b],
            Scale(a, _) | Sigmoid(a) | Tanh(a) | Exp(a) | Log(a) | LeakyRelu(a, _) | Elu(a, _)
            | ClampMin(a, _) | Softmax(a) | Sum(a) | SumAxis(a, _) | Mean(a) | Reshape(a)
            | Dropout(a, _) | GatherRows(a, _) => vec![*a],
            Concat(xs, _) => xs.clone(),
            GruStep(s) => {
                let mut v = s.proj.to_vec();
                v.push(s.h);
                v.extend(s.u);
                v.extend(s.b);
                v
            }
        }
    }

    pub fn backward(&self, nodes: &[Node], out: &Tensor, g: &[f64], buf: &mut GradBuf) {
        let val = |id: usize| -> &Tensor { &nodes[id].value };
        let unary = |buf: &mut GradBuf, a: usize, f: &dyn Fn(usize) -> f64| {
            if buf.wants(a) {
                let contrib: Vec<f64> = (0..g.len()).map(|i| g[i] * f(i)).collect();
                buf.add(a, &contrib);
            }
        };
        match self {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self, Op::Sub(..)) { -1.0 } else { 1.0 };
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let mut ga = vec![0.0; val(*a).len()];
                let mut gb = vec![0.0; val(*b).len()];
                for_each_broadcast(out.shape(), sa, sb, |o, ia, ib| {
                    ga[ia] += g[o];
                    gb[ib] += sign * g[o];
                });
                buf.add(*a, &ga);
                buf.add(*b, &gb);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (da, db) = (ta.data(), tb.data());
                let mut ga = vec![0.0; ta.len()];
                let mut gb = vec![0.0; tb.len()];
                for_each_broadcast(out.shape(), ta.shape(), tb.shape(), |o, ia, ib| {
                    ga[ia] += g[o] * db[ib];
                    gb[ib] += g[o] * da[ia];
                });
                buf.add(*a, &ga);
                buf.add(*b, &gb);
            }
            Op::Scale(a, c) => unary(buf, *a, &|_| *c),
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = ta.dims2().unwrap();
                let n = tb.dims2().unwrap().1;
                if buf.wants(*a) {
                    // g · bᵀ
                    gemm(m, n, k, g, (n, 1), tb.data(), (1, n), buf.slot(*a), true);
                }
                if buf.wants(*b) {
                    // aᵀ · g
                    gemm(k, m, n, ta.data(), (1, k), g, (n, 1), buf.slot(*b), true);
                }
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                unary(buf, *a, &|i| y[i] * (1.0 - y[i]))
            }
            Op::Tanh(a) => {
                let y = out.data();
                unary(buf, *a, &|i| 1.0 - y[i] * y[i])
            }
            Op::Exp(a) => {
                let y = out.data();
                unary(buf, *a, &|i| y[i])
            }
            Op::Log(a) => {
                let x = val(*a).data();
                unary(buf, *a, &|i| 1.0 / x[i])
            }
            Op::LeakyRelu(a, slope) => {
                let x = val(*a).data();
                unary(buf, *a, &|i| if x[i] > 0.0 { 1.0 } else { *slope })
            }
            Op::Elu(a, alpha) => {
                let (x, y) = (val(*a).data(), out.data());
                unary(buf, *a, &|i| if x[i] > 0.0 { 1.0 } else { y[i] + alpha })
            }
            Op::ClampMin(a, floor) => {
                let x = val(*a).data();
                unary(buf, *a, &|i| if x[i] > *floor { 1.0 } else { 0.0 })
            }
            Op::Softmax(a) => {
                if !buf.wants(*a) {
                    return;
                }
                let y = out.data();
                let width = *out.shape().last().unwrap_or(&1);
                let mut contrib = vec![0.0; y.len()];
                for ((cr, yr), gr) in contrib.chunks_mut(width).zip(y.chunks(width)).zip(g.chunks(width)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..width {
                        cr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                buf.add(*a, &contrib);
            }
            Op::Concat(xs, axis) => {
                let shape = out.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &x in xs {
                    let w = val(x).shape()[*axis] * inner;
                    if buf.wants(x) {
                        let mut contrib = vec![0.0; outer * w];
                        for o in 0..outer {
                            contrib[o * w..(o + 1) * w]
                                .copy_from_slice(&g[o * total + offset..o * total + offset + w]);
                        }
                        buf.add(x, &contrib);
                    }
                    offset += w;
                }
            }
            Op::Sum(a) => unary_fill(buf, *a, g[0]),
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                unary_fill(buf, *a, g[0] / n)
            }
            Op::SumAxis(a, axis) => {
                if !buf.wants(*a) {
                    return;
                }
                let shape = val(*a).shape();
                let outer: usize = shape[..*axis].iter().product();
                let len = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let slot = buf.slot(*a);
                for o in 0..outer {
                    for j in 0..len {
                        let base = (o * len + j) * inner;
                        for i in 0..inner {
                            slot[base + i] += g[o * inner + i];
                        }
                    }
                }
            }
            Op::Reshape(a) => buf.add(*a, g),
            Op::Dropout(a, mask) => unary(buf, *a, &|i| mask[i]),
            Op::GatherRows(a, idx) => {
                if !buf.wants(*a) {
                    return;
                }
                let cols = val(*a).shape()[1];
                let slot = buf.slot(*a);
                for (r, &src) in idx.iter().enumerate() {
                    let src = src as usize;
                    for c in 0..cols {
                        slot[src * cols + c] += g[r * cols + c];
                    }
                }
            }
            Op::GruStep(s) => gru_backward(s, nodes, g, buf),
        }
    }
}

fn unary_fill(buf: &mut GradBuf, a: usize, v: f64) {
    if buf.wants(a) {
        for x in buf.slot(a) {
            *x += v;
        }
    }
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

// add, sub and mul return Result, so the operator traits do not fit
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    fn map_unary(self, what: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var<'t>, AutodiffError> {
        let x = self.value();
        let data = x.data().iter().map(|&v| f(v)).collect();
        self.tape.push_op(Tensor::from_parts(x.shape().to_vec(), data), op, what)
    }

    fn broadcast_binary(self, other: Var<'t>, what: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var<'t>, AutodiffError> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let shape = broadcast_shape(a.shape(), b.shape())?;
        let mut data = vec![0.0; shape.iter().product()];
        let (da, db) = (a.data(), b.data());
        for_each_broadcast(&shape, a.shape(), b.shape(), |o, ia, ib| data[o] = f(da[ia], db[ib]));
        self.tape.push_op(Tensor::from_parts(shape, data), op, what)
    }

    /// Elementwise sum with broadcasting.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.broadcast_binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.broadcast_binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    /// Elementwise product with broadcasting.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.broadcast_binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>, AutodiffError> {
        self.map_unary("scale", |v| v * c, Op::Scale(self.id, c))
    }

    /// Matrix product of two rank-2 values.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let (m, k) = a.dims2()?;
        let (k2, n) = b.dims2()?;
        if k != k2 {
            return Err(AutodiffError::Shape(format!(
                "matmul {:?} x {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut data = vec![0.0; m * n];
        gemm(m, k, n, a.data(), (k, 1), b.data(), (n, 1), &mut data, false);
        self.tape
            .push_op(Tensor::from_parts(vec![m, n], data), Op::MatMul(self.id, other.id), "matmul")
    }

    pub fn sigmoid(self) -> Result<Var<'t>, AutodiffError> {
        self.map_unary("sigmoid", sigmoid, Op::Sigmoid(self.id))
    }

    pub fn tanh(self) -> Result<Var<'t>, AutodiffError> {
        self.map_unary("tanh", f64::tanh, Op::Tanh(self.id))
    }

    pub fn exp(self) -> Result<Var<'t>, AutodiffError> {
        self.map_unary("exp", f64::exp, Op::Exp(self.id))
    }

    /// Natural log; non-positive inputs are reported as non-finite results.
    pub fn log(self) -> Result<Var<'t>, AutodiffError> {
        self.map_unary("log", f64::ln, Op::Log(self.id))
    }

    pub fn leaky_relu(self, slope: f64) -> Result<Var<'t>, AutodiffError> {
        self.tape.record_kinks(self.value().data().iter().map(|&v| v > 0.0));
        self.map_unary("leaky_relu", |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(self.id, slope))
    }

    /// ELU with scale `alpha` on the negative side.
    pub fn elu(self, alpha: f64) -> Result<Var<'t>, AutodiffError> {
        self.tape.record_kinks(self.value().data().iter().map(|&v| v > 0.0));
        self.map_unary("elu", |v| if v > 0.0 { v } else { alpha * v.exp_m1() }, Op::Elu(self.id, alpha))
    }

    /// `max(x, floor)` elementwise.
    pub fn clamp_min(self, floor: f64) -> Result<Var<'t>, AutodiffError> {
        self.tape.record_kinks(self.value().data().iter().map(|&v| v > floor));
        self.map_unary("clamp_min", |v| v.max(floor), Op::ClampMin(self.id, floor))
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(self) -> Result<Var<'t>, AutodiffError> {
        let x = self.value();
        let width = *x.shape().last().ok_or_else(|| AutodiffError::Shape("softmax of a scalar".into()))?;
        if width == 0 {
            return Err(AutodiffError::Shape("softmax over an empty axis".into()));
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(width) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.tape
            .push_op(Tensor::from_parts(x.shape().to_vec(), data), Op::Softmax(self.id), "softmax")
    }

    /// Sum of all elements, as a rank-0 value.
    pub fn sum(self) -> Result<Var<'t>, AutodiffError> {
        let total = self.value().data().iter().sum();
        self.tape.push_op(Tensor::scalar(total), Op::Sum(self.id), "sum")
    }

    pub fn mean(self) -> Result<Var<'t>, AutodiffError> {
        let x = self.value();
        if x.is_empty() {
            return Err(AutodiffError::Shape("mean of an empty tensor".into()));
        }
        let m = x.data().iter().sum::<f64>() / x.len() as f64;
        self.tape.push_op(Tensor::scalar(m), Op::Mean(self.id), "mean")
    }

    /// Sums out `axis`, dropping it from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>, AutodiffError> {
        let x = self.value();
        let shape = x.shape();
        if axis >= shape.len() {
            return Err(AutodiffError::Shape(format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * inner];
        let src = x.data();
        for o in 0..outer {
            for j in 0..len {
                let base = (o * len + j) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[base + i];
                }
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        self.tape
            .push_op(Tensor::from_parts(out_shape, data), Op::SumAxis(self.id, axis), "sum_axis")
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>, AutodiffError> {
        let x = self.value();
        if shape.iter().product::<usize>() != x.len() {
            return Err(AutodiffError::Shape(format!("reshape {:?} -> {shape:?}", x.shape())));
        }
        self.tape
            .push_op(Tensor::from_parts(shape.to_vec(), x.data().to_vec()), Op::Reshape(self.id), "reshape")
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// scales survivors by `1 / (1 - rate)`. The identity when `training` is
    /// false or `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(self, rate: f64, training: bool, rng: &mut R) -> Result<Var<'t>, AutodiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::Shape(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(self);
        }
        let x = self.value();
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.tape.push_op(
            Tensor::from_parts(x.shape().to_vec(), data),
            Op::Dropout(self.id, Rc::new(mask)),
            "dropout",
        )
    }

    /// Rows `indices` of a matrix, stacked in order.
    pub fn gather_rows(self, indices: &[u32]) -> Result<Var<'t>, AutodiffError> {
        self.gather_rows_shared(Rc::new(indices.to_vec()))
    }

    pub(crate) fn gather_rows_shared(self, indices: Rc<Vec<u32>>) -> Result<Var<'t>, AutodiffError> {
        let x = self.value();
        let (rows, cols) = x.dims2()?;
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices.iter() {
            let i = i as usize;
            if i >= rows {
                return Err(AutodiffError::Shape(format!("gather row {i} of {rows}")));
            }
            data.extend_from_slice(x.row(i));
        }
        let shape = vec![indices.len(), cols];
        self.tape
            .push_op(Tensor::from_parts(shape, data), Op::GatherRows(self.id, indices), "gather_rows")
    }
}

/// Concatenates values along `axis`; all other dimensions must agree.
pub fn concat<'t>(xs: &[Var<'t>], axis: usize) -> Result<Var<'t>, AutodiffError> {
    let first = xs.first().ok_or_else(|| AutodiffError::Shape("concat of nothing".into()))?;
    let values: Vec<_> = xs.iter().map(|v| v.value()).collect();
    let base = values[0].shape().to_vec();
    if axis >= base.len() {
        return Err(AutodiffError::Shape(format!("concat axis {axis} for shape {base:?}")));
    }
    for (v, x) in values.iter().zip(xs) {
        first.same_tape(x)?;
        let s = v.shape();
        let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(k, (a, b))| k == axis || a == b);
        if !compatible {
            return Err(AutodiffError::Shape(format!("concat {base:?} with {s:?} on axis {axis}")));
        }
    }
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let mut shape = base.clone();
    shape[axis] = values.iter().map(|v| v.shape()[axis]).sum();
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for v in &values {
            let w = v.shape()[axis] * inner;
            data.extend_from_slice(&v.data()[o * w..(o + 1) * w]);
        }
    }
    first.tape.push_op(
        Tensor::from_parts(shape, data),
        Op::Concat(xs.iter().map(|v| v.id).collect(), axis),
        "concat",
    )
}

/// One batched GRU step with the input projections precomputed.
///
/// `proj = [X·W_z, X·W_r, X·W_h]` are `N × d` tables, `rows` selects one
/// table row per batch element, `h` is the `B × d` hidden state, `u` are the
/// `d × d` recurrent matrices and `b` the length-`d` biases:
///
/// ```text
/// z  = σ(P_z[rows] + h·U_z + b_z)
/// r  = σ(P_r[rows] + h·U_r + b_r)
/// h̃  = tanh(P_h[rows] + (r ⊙ h)·U_h + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
///
/// Recorded as a single node so the reverse pass only keeps `z`, `r` and
/// `h̃` per step.
pub fn gru_step<'t>(
    proj: [Var<'t>; 3],
    rows: &Rc<Vec<u32>>,
    h: Var<'t>,
    u: [Var<'t>; 3],
    b: [Var<'t>; 3],
) -> Result<Var<'t>, AutodiffError> {
    for v in proj.iter().chain(&u).chain(&b) {
        h.same_tape(v)?;
    }
    let hv = h.value();
    let (batch, d) = hv.dims2()?;
    if rows.len() != batch {
        return Err(AutodiffError::Shape(format!("{} rows for batch of {batch}", rows.len())));
    }
    let pv: Vec<_> = proj.iter().map(|p| p.value()).collect();
    let uv: Vec<_> = u.iter().map(|x| x.value()).collect();
    let bv: Vec<_> = b.iter().map(|x| x.value()).collect();
    for p in &pv {
        let (n, c) = p.dims2()?;
        if c != d {
            return Err(AutodiffError::Shape(format!("projection width {c} != hidden {d}")));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i as usize >= n) {
            return Err(AutodiffError::Shape(format!("row {bad} of {n}")));
        }
    }
    for x in &uv {
        if x.shape() != [d, d] {
            return Err(AutodiffError::Shape(format!("recurrent matrix {:?}, hidden {d}", x.shape())));
        }
    }
    for x in &bv {
        if x.len() != d {
            return Err(AutodiffError::Shape(format!("bias {:?}, hidden {d}", x.shape())));
        }
    }

    let hd = hv.data();
    let pre = |gate: usize, input: &[f64]| -> Vec<f64> {
        let mut acc = vec![0.0; batch * d];
        gemm(batch, d, d, input, (d, 1), uv[gate].data(), (d, 1), &mut acc, false);
        for (bi, &row) in rows.iter().enumerate() {
            let prow = pv[gate].row(row as usize);
            let bias = bv[gate].data();
            let out = &mut acc[bi * d..(bi + 1) * d];
            for j in 0..d {
                out[j] += prow[j] + bias[j];
            }
        }
        acc
    };
    let z: Vec<f64> = pre(0, hd).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = pre(1, hd).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(hd).map(|(r, h)| r * h).collect();
    let cand: Vec<f64> = pre(2, &rh).into_iter().map(f64::tanh).collect();
    let out: Vec<f64> = (0..batch * d).map(|i| hd[i] + z[i] * (cand[i] - hd[i])).collect();

    let saved = GruSaved {
        proj: proj.map(|v| v.id),
        h: h.id,
        u: u.map(|v| v.id),
        b: b.map(|v| v.id),
        idx: rows.clone(),
        z,
        r,
        cand,
    };
    h.tape
        .push_op(Tensor::from_parts(vec![batch, d], out), Op::GruStep(Box::new(saved)), "gru_step")
}

fn gru_backward(s: &GruSaved, nodes: &[Node], g: &[f64], buf: &mut GradBuf) {
    let h = nodes[s.h].value.data();
    let d = nodes[s.u[0]].value.shape()[0];
    let batch = g.len() / d;
    let (z, r, cand) = (&s.z, &s.r, &s.cand);

    let mut dh: Vec<f64> = (0..g.len()).map(|i| g[i] * (1.0 - z[i])).collect();
    let da_z: Vec<f64> = (0..g.len())
        .map(|i| g[i] * (cand[i] - h[i]) * z[i] * (1.0 - z[i]))
        .collect();
    let da_h: Vec<f64> = (0..g.len())
        .map(|i| g[i] * z[i] * (1.0 - cand[i] * cand[i]))
        .collect();

    // candidate gate: input was r ⊙ h
    let rh: Vec<f64> = r.iter().zip(h).map(|(r, h)| r * h).collect();
    let mut d_rh = vec![0.0; g.len()];
    gemm(batch, d, d, &da_h, (d, 1), nodes[s.u[2]].value.data(), (1, d), &mut d_rh, false);
    for i in 0..g.len() {
        dh[i] += d_rh[i] * r[i];
    }
    let da_r: Vec<f64> = (0..g.len())
        .map(|i| d_rh[i] * h[i] * r[i] * (1.0 - r[i]))
        .collect();

    let gates: [(&[f64], &[f64]); 3] = [(&da_z, h), (&da_r, h), (&da_h, &rh)];
    for (gate, (da, input)) in gates.into_iter().enumerate() {
        if buf.wants(s.proj[gate]) {
            let slot = buf.slot(s.proj[gate]);
            for (bi, &row) in s.idx.iter().enumerate() {
                let dst = &mut slot[row as usize * d..(row as usize + 1) * d];
                for j in 0..d {
                    dst[j] += da[bi * d + j];
                }
            }
        }
        if buf.wants(s.b[gate]) {
            let slot = buf.slot(s.b[gate]);
            for row in da.chunks(d) {
                for j in 0..d {
                    slot[j] += row[j];
                }
            }
        }
        if buf.wants(s.u[gate]) {
            // inputᵀ · da
            gemm(d, batch, d, input, (1, d), da, (d, 1), buf.slot(s.u[gate]), true);
        }
        if gate < 2 {
            // candidate gate's contribution to dh was folded in through d_rh
            gemm(batch, d, d, da, (d, 1), nodes[s.u[gate]].value.data(), (1, d), &mut dh, true);
        }
    }
    buf.add(s.h, &dh);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn vals(v: Var<'_>) -> Vec<f64> {
        v.value().data().to_vec()
    }

    #[test]
    fn forward_examples() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        for p in vals(x.softmax().unwrap()) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let y = tape.constant(Tensor::scalar(-2.0));
        assert!((y.leaky_relu(0.2).unwrap().item().unwrap() + 0.4).abs() < 1e-15);

        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 5]));
        assert_eq!(concat(&[a, b], 1).unwrap().shape(), vec![2, 8]);
    }

    #[test]
    fn backward_examples() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let loss = x.mul(x).unwrap().sum().unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);

        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![3.0, -1.0, 0.5, 7.0]));
        let grads = tape.backward(x.mean().unwrap()).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn backward_errors() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(AutodiffError::NonScalarLoss(_))));
        let s = x.sum().unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(AutodiffError::AlreadyConsumed)));
    }

    #[test]
    fn shape_and_finiteness_errors() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 3]));
        assert!(matches!(a.matmul(b), Err(AutodiffError::Shape(_))));
        assert!(matches!(a.add(tape.leaf(Tensor::zeros(&[2]))), Err(AutodiffError::Shape(_))));
        assert!(matches!(a.log(), Err(AutodiffError::NonFinite("log"))));
        let big = tape.leaf(Tensor::scalar(1000.0));
        assert!(matches!(big.exp(), Err(AutodiffError::NonFinite("exp"))));
    }

    #[test]
    fn dropout_identity_cases() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let mut rng = rand::thread_rng();
        assert_eq!(x.dropout(0.0, true, &mut rng).unwrap().id, x.id);
        assert_eq!(x.dropout(0.5, false, &mut rng).unwrap().id, x.id);
        assert!(x.dropout(1.0, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_scales_survivors() {
        use rand::SeedableRng;
        let tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[1000], 1.0));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let y = vals(x.dropout(0.5, true, &mut rng).unwrap());
        assert!(y.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = y.iter().filter(|&&v| v > 0.0).count();
        assert!((400..600).contains(&kept));
    }

    #[test]
    fn non_grad_subgraph_is_not_recorded_for_backward() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let y = c.exp().unwrap();
        assert!(!y.requires_grad());
        let x = tape.leaf(Tensor::vector(vec![0.5, 0.5]));
        let loss = x.mul(y).unwrap().sum().unwrap();
        let grads = tape.backward(loss).unwrap();
        let e = [1f64.exp(), 2f64.exp()];
        assert_eq!(grads.get(x).unwrap().data(), &e);
        assert!(grads.get(y).is_none());
    }

    #[test]
    fn foreign_vars_are_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.leaf(Tensor::scalar(1.0));
        let b = t2.leaf(Tensor::scalar(1.0));
        assert!(matches!(a.add(b), Err(AutodiffError::ForeignVar)));
        assert!(matches!(t2.backward(a), Err(AutodiffError::ForeignVar)));
    }
}
