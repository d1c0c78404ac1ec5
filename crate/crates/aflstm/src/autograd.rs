//! Minimal reverse-mode differentiation over dense f64 tensors.
//!
//! Forward evaluation is eager: every op computes its value immediately
//! and records itself on the tape. `backward` replays the record once in
//! reverse, accumulating vector-Jacobian products. Parameters live
//! outside the tape in a `ParamSet`; their gradients accumulate with +=
//! across backward passes until explicitly zeroed, so a parameter used in
//! many places (an aspect embedding fused into every timestep, a weight
//! matrix applied per step) collects all its contributions.
//!
//! No broadcasting beyond scalar-with-tensor: shape bugs should surface
//! at record time, not as silently wrong math.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::holo;
use crate::tensor::Tensor;

// ── parameters ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    name: String,
    value: Tensor,
    grad: Tensor,
    trainable: bool,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    /// Mutable value access for optimizers and checkpoint loading.
    /// Invariant: shape never changes after construction.
    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut Tensor {
        &mut self.grad
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }
}

/// Owning store of all model parameters, addressed by stable `ParamId`.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }
}

// ── tape ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    /// Constant input; no gradient flows out.
    Leaf,
    /// Leaf bound to a parameter; backward accumulates into its grad.
    Param(ParamId),
    /// [m,n]·[n,p] -> [m,p], or [m,n]·[n] -> [m].
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    /// Softmax over unmasked positions; masked outputs are exactly zero.
    MaskedSoftmax { x: NodeId, mask: Vec<bool> },
    /// −ln(max(probs[label], 1e-12)); the clamp keeps certain-wrong
    /// predictions finite. Gradient is zero while the clamp is active.
    Nll { probs: NodeId, label: usize },
    /// Row extraction from a 2-D value.
    Row { m: NodeId, i: usize },
    /// Stack 1-D rows of equal length into a 2-D value. The same node may
    /// appear as several rows; its gradient then accumulates from each.
    StackRows { rows: Vec<NodeId> },
    /// 1-D concatenation.
    Concat(NodeId, NodeId),
    /// out[j] = Σ_i w[i]·m[i,j] for m [L,c], w [L]: the weighted sum of
    /// rows that realizes both attention pooling and bag-of-words sums.
    RowWeightedSum { m: NodeId, w: NodeId },
    CircConv(NodeId, NodeId),
    CircCorr(NodeId, NodeId),
    NormClip(NodeId),
    /// Σ x² -> scalar.
    SumSquares(NodeId),
    /// Σ w² over a parameter read in place (used for L2 of large tables
    /// without materializing a leaf copy).
    ParamSumSquares(ParamId),
    /// Gather rows `indices` of a 2-D parameter. Backward scatter-adds
    /// into the parameter's grad, except row 0, which is the padding row
    /// and is permanently frozen at zero.
    EmbedRows { param: ParamId, indices: Vec<usize> },
    /// Multiply by a fixed mask whose entries are 0 or 1/(1−p)
    /// (inverted-dropout scaling, decided outside the tape).
    Dropout { x: NodeId, mask: Vec<f64> },
    /// Multiply by a compile-time constant; no gradient to the constant.
    Scale { x: NodeId, c: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of executed primitives. Replaying it in reverse visits
/// each op exactly once; clearing it removes every recorded contribution.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, NodeId>,
}

fn ew_out_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else if b.is_scalar() {
        Ok(a.shape().to_vec())
    } else {
        Err(Error::Dim {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        })
    }
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

    /// Drops every recorded op; subsequent backward passes see nothing
    /// from before the clear.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.param_leaves.clear();
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Parameter leaf, memoized: repeated requests for the same parameter
    /// return the same node, so its gradient accumulates in one place.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_leaves.get(&id) {
            return n;
        }
        let n = self.push(params.get(id).value().clone(), Op::Param(id));
        self.param_leaves.insert(id, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        let bv = self.value(b);
        let mismatch = || Error::Dim {
            op: "matmul",
            left: av.shape().to_vec(),
            right: bv.shape().to_vec(),
        };
        if av.shape().len() != 2 {
            return Err(mismatch());
        }
        let (m, n) = (av.rows(), av.cols());
        let value = match bv.shape() {
            [bn, p] => {
                if *bn != n {
                    return Err(mismatch());
                }
                let (p, bn) = (*p, *bn);
                let mut out = vec![0.0; m * p];
                for i in 0..m {
                    for k in 0..bn {
                        let aik = av.at(i, k);
                        if aik == 0.0 {
                            continue;
                        }
                        let brow = bv.row(k);
                        let orow = &mut out[i * p..(i + 1) * p];
                        for (o, &bkj) in orow.iter_mut().zip(brow) {
                            *o += aik * bkj;
                        }
                    }
                }
                Tensor::from_vec(vec![m, p], out)?
            }
            [bn] => {
                if *bn != n {
                    return Err(mismatch());
                }
                let mut out = vec![0.0; m];
                for (i, o) in out.iter_mut().enumerate() {
                    *o = av.row(i).iter().zip(bv.data()).map(|(x, y)| x * y).sum();
                }
                Tensor::vector(out)
            }
            _ => return Err(mismatch()),
        };
        Ok(self.push(value, Op::Matmul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = ew_out_shape("add", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = if av.shape() == bv.shape() {
            av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect()
        } else if av.is_scalar() {
            bv.data().iter().map(|y| av.item() + y).collect()
        } else {
            av.data().iter().map(|x| x + bv.item()).collect()
        };
        Ok(self.push(Tensor::from_vec(shape, data)?, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = ew_out_shape("sub", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = if av.shape() == bv.shape() {
            av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect()
        } else if av.is_scalar() {
            bv.data().iter().map(|y| av.item() - y).collect()
        } else {
            av.data().iter().map(|x| x - bv.item()).collect()
        };
        Ok(self.push(Tensor::from_vec(shape, data)?, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = ew_out_shape("mul", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = if av.shape() == bv.shape() {
            av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect()
        } else if av.is_scalar() {
            bv.data().iter().map(|y| av.item() * y).collect()
        } else {
            av.data().iter().map(|x| x * bv.item()).collect()
        };
        Ok(self.push(Tensor::from_vec(shape, data)?, Op::Mul(a, b)))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Tensor::from_vec(shape, data).unwrap(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Tensor::from_vec(shape, data).unwrap(), Op::Sigmoid(x))
    }

    /// Numerically stable masked softmax: max-subtraction over the
    /// unmasked support, exact zeros at masked positions.
    pub fn masked_softmax(&mut self, x: NodeId, mask: &[bool]) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape().len() != 1 || xv.len() != mask.len() {
            return Err(Error::Dim {
                op: "masked_softmax",
                left: xv.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::DegenerateMask);
        }
        let max = xv
            .data()
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut out = vec![0.0; mask.len()];
        let mut denom = 0.0;
        for (i, (&v, &m)) in xv.data().iter().zip(mask).enumerate() {
            if m {
                let e = (v - max).exp();
                out[i] = e;
                denom += e;
            }
        }
        for o in &mut out {
            *o /= denom;
        }
        Ok(self.push(
            Tensor::vector(out),
            Op::MaskedSoftmax { x, mask: mask.to_vec() },
        ))
    }

    pub fn nll(&mut self, probs: NodeId, label: usize) -> Result<NodeId> {
        let pv = self.value(probs);
        if pv.shape().len() != 1 || label >= pv.len() {
            return Err(Error::Contract(format!(
                "nll: label {label} outside distribution of size {}",
                pv.len()
            )));
        }
        let p = pv.data()[label].max(1e-12);
        Ok(self.push(Tensor::scalar(-p.ln()), Op::Nll { probs, label }))
    }

    pub fn row(&mut self, m: NodeId, i: usize) -> Result<NodeId> {
        let mv = self.value(m);
        if mv.shape().len() != 2 || i >= mv.rows() {
            return Err(Error::Contract(format!(
                "row: index {i} outside shape {:?}",
                mv.shape()
            )));
        }
        let data = mv.row(i).to_vec();
        Ok(self.push(Tensor::vector(data), Op::Row { m, i }))
    }

    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(Error::Contract("stack_rows: no rows".into()));
        }
        let c = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            let rv = self.value(r);
            if rv.shape().len() != 1 || rv.len() != c {
                return Err(Error::Dim {
                    op: "stack_rows",
                    left: vec![c],
                    right: rv.shape().to_vec(),
                });
            }
            data.extend_from_slice(rv.data());
        }
        Ok(self.push(
            Tensor::from_vec(vec![rows.len(), c], data)?,
            Op::StackRows { rows: rows.to_vec() },
        ))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 1 || bv.shape().len() != 1 {
            return Err(Error::Dim {
                op: "concat",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut data = av.data().to_vec();
        data.extend_from_slice(bv.data());
        Ok(self.push(Tensor::vector(data), Op::Concat(a, b)))
    }

    pub fn row_weighted_sum(&mut self, m: NodeId, w: NodeId) -> Result<NodeId> {
        let (mv, wv) = (self.value(m), self.value(w));
        if mv.shape().len() != 2 || wv.shape().len() != 1 || mv.rows() != wv.len() {
            return Err(Error::Dim {
                op: "row_weighted_sum",
                left: mv.shape().to_vec(),
                right: wv.shape().to_vec(),
            });
        }
        let c = mv.cols();
        let mut out = vec![0.0; c];
        for (i, &wi) in wv.data().iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            for (o, &mij) in out.iter_mut().zip(mv.row(i)) {
                *o += wi * mij;
            }
        }
        Ok(self.push(Tensor::vector(out), Op::RowWeightedSum { m, w }))
    }

    pub fn circ_conv(&mut self, h: NodeId, s: NodeId) -> Result<NodeId> {
        let out = holo::circ_conv_fft(self.value(h).data(), self.value(s).data())?;
        Ok(self.push(Tensor::vector(out), Op::CircConv(h, s)))
    }

    pub fn circ_corr(&mut self, h: NodeId, s: NodeId) -> Result<NodeId> {
        let out = holo::circ_corr_fft(self.value(h).data(), self.value(s).data())?;
        Ok(self.push(Tensor::vector(out), Op::CircCorr(h, s)))
    }

    pub fn norm_clip(&mut self, v: NodeId) -> Result<NodeId> {
        let vv = self.value(v);
        if vv.shape().len() != 1 {
            return Err(Error::Contract(format!(
                "norm_clip expects a vector, got shape {:?}",
                vv.shape()
            )));
        }
        let out = holo::norm_clip(vv.data());
        Ok(self.push(Tensor::vector(out), Op::NormClip(v)))
    }

    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().map(|v| v * v).sum();
        self.push(Tensor::scalar(s), Op::SumSquares(x))
    }

    pub fn param_sum_squares(&mut self, params: &ParamSet, id: ParamId) -> NodeId {
        let s: f64 = params.get(id).value().data().iter().map(|v| v * v).sum();
        self.push(Tensor::scalar(s), Op::ParamSumSquares(id))
    }

    pub fn embed_rows(&mut self, params: &ParamSet, id: ParamId, indices: &[usize]) -> Result<NodeId> {
        let table = params.get(id).value();
        if table.shape().len() != 2 {
            return Err(Error::Contract("embed_rows: parameter is not 2-D".into()));
        }
        if indices.is_empty() {
            return Err(Error::Contract("embed_rows: empty index list".into()));
        }
        let (v, k) = (table.rows(), table.cols());
        let mut data = Vec::with_capacity(indices.len() * k);
        for &ix in indices {
            if ix >= v {
                return Err(Error::Vocab { index: ix, size: v });
            }
            data.extend_from_slice(table.row(ix));
        }
        Ok(self.push(
            Tensor::from_vec(vec![indices.len(), k], data)?,
            Op::EmbedRows { param: id, indices: indices.to_vec() },
        ))
    }

    pub fn dropout(&mut self, x: NodeId, mask: &[f64]) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.len() != mask.len() {
            return Err(Error::Dim {
                op: "dropout",
                left: xv.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let data = xv.data().iter().zip(mask).map(|(v, m)| v * m).collect();
        let shape = xv.shape().to_vec();
        Ok(self.push(
            Tensor::from_vec(shape, data)?,
            Op::Dropout { x, mask: mask.to_vec() },
        ))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let data = self.value(x).data().iter().map(|v| v * c).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Tensor::from_vec(shape, data).unwrap(), Op::Scale { x, c })
    }

    // ── reverse pass ──────────────────────────────────────────────────

    /// Accumulates d(loss)/d(param) into every trainable parameter the
    /// tape touched. `loss` must be scalar.
    pub fn backward(&self, loss: NodeId, params: &mut ParamSet) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward: loss has shape {:?}, expected a scalar",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        // seed carries the loss node's own shape ([1] or [1,1])
        let mut seed = Tensor::zeros(self.nodes[loss.0].value.shape().to_vec());
        seed.fill(1.0);
        grads[loss.0] = Some(seed);

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => {
                    let p = params.get_mut(*pid);
                    if p.trainable() {
                        add_into(p.grad_mut().data_mut(), g.data());
                    }
                }
                Op::Matmul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let (m, n) = (av.rows(), av.cols());
                    if bv.shape().len() == 2 {
                        let p = bv.cols();
                        let mut da = Tensor::zeros(vec![m, n]);
                        let mut db = Tensor::zeros(vec![n, p]);
                        for i in 0..m {
                            for j in 0..n {
                                // dA = g·Bᵀ
                                let s: f64 =
                                    g.row(i).iter().zip(bv.row(j)).map(|(x, y)| x * y).sum();
                                da.set(i, j, s);
                            }
                        }
                        for j in 0..n {
                            for k in 0..p {
                                // dB = Aᵀ·g
                                let mut s = 0.0;
                                for i in 0..m {
                                    s += av.at(i, j) * g.at(i, k);
                                }
                                db.set(j, k, s);
                            }
                        }
                        accumulate(&mut grads, *a, da);
                        accumulate(&mut grads, *b, db);
                    } else {
                        let mut da = Tensor::zeros(vec![m, n]);
                        let mut db = Tensor::zeros(vec![n]);
                        for i in 0..m {
                            let gi = g.data()[i];
                            if gi != 0.0 {
                                for (j, &bj) in bv.data().iter().enumerate() {
                                    da.set(i, j, gi * bj);
                                }
                            }
                        }
                        for (j, dbj) in db.data_mut().iter_mut().enumerate() {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += av.at(i, j) * g.data()[i];
                            }
                            *dbj = s;
                        }
                        accumulate(&mut grads, *a, da);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, reduce_to(&self.nodes[a.0].value, &g, 1.0));
                    accumulate(&mut grads, *b, reduce_to(&self.nodes[b.0].value, &g, 1.0));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, reduce_to(&self.nodes[a.0].value, &g, 1.0));
                    accumulate(&mut grads, *b, reduce_to(&self.nodes[b.0].value, &g, -1.0));
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let da = mul_grad(av, bv, &g);
                    let db = mul_grad(bv, av, &g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let data = y
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(yi, gi)| gi * (1.0 - yi * yi))
                        .collect();
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::from_vec(y.shape().to_vec(), data).unwrap(),
                    );
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let data = y
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(yi, gi)| gi * yi * (1.0 - yi))
                        .collect();
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::from_vec(y.shape().to_vec(), data).unwrap(),
                    );
                }
                Op::MaskedSoftmax { x, mask } => {
                    let a = &node.value;
                    let dot: f64 = a.data().iter().zip(g.data()).map(|(ai, gi)| ai * gi).sum();
                    let data = a
                        .data()
                        .iter()
                        .zip(g.data())
                        .zip(mask)
                        .map(|((ai, gi), &m)| if m { ai * (gi - dot) } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::vector(data));
                }
                Op::Nll { probs, label } => {
                    let pv = &self.nodes[probs.0].value;
                    let mut d = Tensor::zeros(vec![pv.len()]);
                    let p = pv.data()[*label];
                    if p > 1e-12 {
                        d.data_mut()[*label] = -g.item() / p;
                    }
                    accumulate(&mut grads, *probs, d);
                }
                Op::Row { m, i } => {
                    let mv = &self.nodes[m.0].value;
                    let mut d = Tensor::zeros(mv.shape().to_vec());
                    add_into(d.row_mut(*i), g.data());
                    accumulate(&mut grads, *m, d);
                }
                Op::StackRows { rows } => {
                    let c = node.value.cols();
                    for (r, &rid) in rows.iter().enumerate() {
                        let slice = g.data()[r * c..(r + 1) * c].to_vec();
                        accumulate(&mut grads, rid, Tensor::vector(slice));
                    }
                }
                Op::Concat(a, b) => {
                    let p = self.nodes[a.0].value.len();
                    accumulate(&mut grads, *a, Tensor::vector(g.data()[..p].to_vec()));
                    accumulate(&mut grads, *b, Tensor::vector(g.data()[p..].to_vec()));
                }
                Op::RowWeightedSum { m, w } => {
                    let mv = &self.nodes[m.0].value;
                    let wv = &self.nodes[w.0].value;
                    let (l, c) = (mv.rows(), mv.cols());
                    let mut dm = Tensor::zeros(vec![l, c]);
                    let mut dw = Tensor::zeros(vec![l]);
                    for i in 0..l {
                        let wi = wv.data()[i];
                        if wi != 0.0 {
                            for (dmij, &gj) in dm.row_mut(i).iter_mut().zip(g.data()) {
                                *dmij = wi * gj;
                            }
                        }
                        dw.data_mut()[i] =
                            mv.row(i).iter().zip(g.data()).map(|(x, y)| x * y).sum();
                    }
                    accumulate(&mut grads, *m, dm);
                    accumulate(&mut grads, *w, dw);
                }
                Op::CircConv(h, s) => {
                    let hv = &self.nodes[h.0].value;
                    let sv = &self.nodes[s.0].value;
                    let (gh, gs) = holo::fuse_backward(
                        holo::FusionOperator::Conv,
                        g.data(),
                        hv.data(),
                        sv.data(),
                    )?;
                    accumulate(&mut grads, *h, Tensor::vector(gh));
                    accumulate(&mut grads, *s, Tensor::vector(gs));
                }
                Op::CircCorr(h, s) => {
                    let hv = &self.nodes[h.0].value;
                    let sv = &self.nodes[s.0].value;
                    let (gh, gs) = holo::fuse_backward(
                        holo::FusionOperator::Corr,
                        g.data(),
                        hv.data(),
                        sv.data(),
                    )?;
                    accumulate(&mut grads, *h, Tensor::vector(gh));
                    accumulate(&mut grads, *s, Tensor::vector(gs));
                }
                Op::NormClip(v) => {
                    let vv = &self.nodes[v.0].value;
                    let d = holo::norm_clip_vjp(vv.data(), g.data());
                    accumulate(&mut grads, *v, Tensor::vector(d));
                }
                Op::SumSquares(x) => {
                    let xv = &self.nodes[x.0].value;
                    let gi = g.item();
                    let data = xv.data().iter().map(|v| 2.0 * v * gi).collect();
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::from_vec(xv.shape().to_vec(), data).unwrap(),
                    );
                }
                Op::ParamSumSquares(pid) => {
                    let gi = g.item();
                    let p = params.get_mut(*pid);
                    if p.trainable() {
                        let (value_snapshot, grad) = {
                            let v: Vec<f64> = p.value().data().to_vec();
                            (v, p.grad_mut())
                        };
                        for (gslot, v) in grad.data_mut().iter_mut().zip(&value_snapshot) {
                            *gslot += 2.0 * v * gi;
                        }
                    }
                }
                Op::EmbedRows { param, indices } => {
                    let p = params.get_mut(*param);
                    if p.trainable() {
                        let k = g.cols();
                        for (r, &ix) in indices.iter().enumerate() {
                            // row 0 is the padding row; it stays frozen
                            if ix == 0 {
                                continue;
                            }
                            let gr = &g.data()[r * k..(r + 1) * k];
                            add_into(p.grad_mut().row_mut(ix), gr);
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    let data = g.data().iter().zip(mask).map(|(gi, m)| gi * m).collect();
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::from_vec(g.shape().to_vec(), data).unwrap(),
                    );
                }
                Op::Scale { x, c } => {
                    let data = g.data().iter().map(|gi| gi * c).collect();
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::from_vec(g.shape().to_vec(), data).unwrap(),
                    );
                }
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
    match &mut grads[id.0] {
        Some(t) => add_into(t.data_mut(), delta.data()),
        slot @ None => *slot = Some(delta),
    }
}

/// Gradient of elementwise add/sub toward an operand: identity, except a
/// scalar operand receives the sum of the incoming gradient.
fn reduce_to(operand: &Tensor, g: &Tensor, sign: f64) -> Tensor {
    if operand.shape() == g.shape() {
        Tensor::from_vec(g.shape().to_vec(), g.data().iter().map(|x| sign * x).collect())
            .unwrap()
    } else {
        Tensor::scalar(sign * g.data().iter().sum::<f64>())
    }
}

/// Gradient of mul toward `operand` given the other factor: g ⊙ other,
/// summed when the operand is the broadcast scalar.
fn mul_grad(operand: &Tensor, other: &Tensor, g: &Tensor) -> Tensor {
    if operand.shape() == g.shape() {
        if other.shape() == g.shape() {
            let data = g.data().iter().zip(other.data()).map(|(x, y)| x * y).collect();
            Tensor::from_vec(g.shape().to_vec(), data).unwrap()
        } else {
            let o = other.item();
            let data = g.data().iter().map(|x| x * o).collect();
            Tensor::from_vec(g.shape().to_vec(), data).unwrap()
        }
    } else {
        let s: f64 = g.data().iter().zip(other.data()).map(|(x, y)| x * y).sum();
        Tensor::scalar(s)
    }
}

// ── gradient checking ─────────────────────────────────────────────────

/// Compares the analytic gradients of a deterministic forward closure
/// against central finite differences, entry by entry over every
/// trainable parameter. Returns the maximum relative error
/// |analytic − numeric| / max(1e-8, |analytic| + |numeric|).
///
/// The closure is invoked twice up front; if the two losses differ
/// bit-for-bit, the forward is not deterministic and checking aborts.
pub fn grad_check<F>(params: &mut ParamSet, eps: f64, mut forward: F) -> Result<f64>
where
    F: FnMut(&ParamSet) -> Result<(Tape, NodeId)>,
{
    let loss_of = |params: &ParamSet, forward: &mut F| -> Result<f64> {
        let (tape, loss) = forward(params)?;
        let lv = tape.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "grad_check: loss has shape {:?}, expected a scalar",
                lv.shape()
            )));
        }
        Ok(lv.item())
    };

    let l1 = loss_of(params, &mut forward)?;
    let l2 = loss_of(params, &mut forward)?;
    if l1.to_bits() != l2.to_bits() {
        return Err(Error::Determinism(format!(
            "two identical forward passes produced {l1:?} and {l2:?}"
        )));
    }

    params.zero_grads();
    let (tape, loss) = forward(params)?;
    tape.backward(loss, params)?;
    let analytic: Vec<Tensor> = params.iter().map(|p| p.grad().clone()).collect();

    let ids: Vec<ParamId> = params.ids().filter(|&id| params.get(id).trainable()).collect();
    let mut max_rel: f64 = 0.0;
    for id in ids {
        for e in 0..params.get(id).value().len() {
            let orig = params.get(id).value().data()[e];
            params.get_mut(id).value_mut().data_mut()[e] = orig + eps;
            let lp = loss_of(params, &mut forward)?;
            params.get_mut(id).value_mut().data_mut()[e] = orig - eps;
            let lm = loss_of(params, &mut forward)?;
            params.get_mut(id).value_mut().data_mut()[e] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            let a = analytic[id.0].data()[e];
            let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
