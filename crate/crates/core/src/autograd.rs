//! A small reverse-mode tape over [`Tensor`] values.
//!
//! Every network in the crate is expressed by appending operations to a
//! [`Graph`]; [`Graph::backward`] then walks the tape in reverse and returns
//! the gradient of a scalar node with respect to every node that needs one.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvShape, Taps};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Fixed bilinear sampling pattern from a `(h, w)` plane onto `(out_h, out_w)`
/// locations; `None` entries sample to zero.
#[derive(Clone, Debug)]
pub struct SamplingMap {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub taps: Vec<Option<Taps>>,
}

enum Op {
    Leaf,
    Conv {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        shape: ConvShape,
        cols: Vec<f64>,
    },
    Relu(NodeId),
    MaxPool {
        x: NodeId,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: NodeId,
        k: usize,
    },
    Concat(Vec<NodeId>),
    Sample {
        x: NodeId,
        map: Arc<SamplingMap>,
    },
    Warp {
        x: NodeId,
        flow: NodeId,
    },
    Correlate {
        a: NodeId,
        b: NodeId,
        scale: f64,
    },
    MulConst {
        x: NodeId,
        weights: Arc<Vec<f64>>,
    },
    Resize {
        x: NodeId,
        gain: f64,
    },
    Transpose {
        x: NodeId,
        rows: usize,
        cols: usize,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    Mse(NodeId, NodeId),
    Cosine {
        a: NodeId,
        b: NodeId,
        valid: Vec<bool>,
        count: usize,
    },
    Sum(NodeId),
    WeightedSum(Vec<(NodeId, f64)>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

/// Threshold below which a channel vector counts as zero in the cosine loss.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].needs_grad)
    }

    /// Constant input; no gradient is accumulated for it.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf (parameter or probe input).
    pub fn variable(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    /// Leaves registered with [`Graph::constant`], in insertion order.
    pub fn constant_leaves(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf) && !n.needs_grad)
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.data()[0]
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (c_in, h, wd) = self.value(x).dims3()?;
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 4 || ws[1] != c_in || ws[2] != ws[3] || ws[2] % 2 == 0 {
            return Err(Error::shape("conv2d", format!("[_, {c_in}, k, k] odd k"), format!("{ws:?}")));
        }
        if self.value(b).len() != ws[0] {
            return Err(Error::shape("conv2d bias", ws[0], self.value(b).len()));
        }
        let shape = ConvShape { c_in, c_out: ws[0], h, w: wd, k: ws[2] };
        let (out, cols) = kernels::conv2d_forward(self.value(x).data(), self.value(w).data(), self.value(b).data(), shape);
        let t = Tensor::from_vec(&[shape.c_out, h, wd], out)?;
        let ng = self.needs(&[x, w, b]);
        Ok(self.push(t, Op::Conv { x, w, b, shape, cols }, ng))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x).map(|v| v.max(0.0));
        let ng = self.needs(&[x]);
        self.push(t, Op::Relu(x), ng)
    }

    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.value(x).dims3()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("maxpool2", "even spatial size", format!("{h}x{w}")));
        }
        let (out, argmax) = kernels::maxpool2_forward(self.value(x).data(), c, h, w);
        let t = Tensor::from_vec(&[c, h / 2, w / 2], out)?;
        let ng = self.needs(&[x]);
        Ok(self.push(t, Op::MaxPool { x, argmax }, ng))
    }

    pub fn avgpool(&mut self, x: NodeId, k: usize) -> Result<NodeId> {
        if k == 1 {
            return Ok(x);
        }
        let (c, h, w) = self.value(x).dims3()?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(Error::shape("avgpool", format!("size divisible by {k}"), format!("{h}x{w}")));
        }
        let out = kernels::avgpool_forward(self.value(x).data(), c, h, w, k);
        let t = Tensor::from_vec(&[c, h / k, w / k], out)?;
        let ng = self.needs(&[x]);
        Ok(self.push(t, Op::AvgPool { x, k }, ng))
    }

    /// Channel-wise concatenation in argument order.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let (_, h, w) = self.value(parts[0]).dims3()?;
        let mut c_total = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (c, ph, pw) = self.value(p).dims3()?;
            if (ph, pw) != (h, w) {
                return Err(Error::shape("concat", format!("{h}x{w}"), format!("{ph}x{pw}")));
            }
            c_total += c;
            data.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::from_vec(&[c_total, h, w], data)?;
        let ng = self.needs(parts);
        Ok(self.push(t, Op::Concat(parts.to_vec()), ng))
    }

    pub fn sample(&mut self, x: NodeId, map: Arc<SamplingMap>) -> Result<NodeId> {
        let (c, h, w) = self.value(x).dims3()?;
        if (h, w) != (map.in_h, map.in_w) {
            return Err(Error::shape("sample", format!("{}x{}", map.in_h, map.in_w), format!("{h}x{w}")));
        }
        let out = kernels::sample_forward(self.value(x).data(), c, h * w, &map.taps);
        let t = Tensor::from_vec(&[c, map.out_h, map.out_w], out)?;
        let ng = self.needs(&[x]);
        Ok(self.push(t, Op::Sample { x, map }, ng))
    }

    pub fn warp(&mut self, x: NodeId, flow: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.value(x).dims3()?;
        let fs = self.value(flow).shape();
        if fs != [2, h, w] {
            return Err(Error::shape("warp", format!("[2, {h}, {w}]"), format!("{fs:?}")));
        }
        let out = kernels::warp_forward(self.value(x).data(), self.value(flow).data(), c, h, w);
        let t = Tensor::from_vec(&[c, h, w], out)?;
        let ng = self.needs(&[x, flow]);
        Ok(self.push(t, Op::Warp { x, flow }, ng))
    }

    /// All-pairs correlation producing a `(h_b·w_b)`-channel map over `a`'s
    /// grid, multiplied by `scale`.
    pub fn correlate(&mut self, a: NodeId, b: NodeId, scale: f64) -> Result<NodeId> {
        let (ca, ha, wa) = self.value(a).dims3()?;
        let (cb, hb, wb) = self.value(b).dims3()?;
        if ca != cb {
            return Err(Error::shape("correlate", ca, cb));
        }
        let out = kernels::correlation_forward(self.value(a).data(), self.value(b).data(), ca, ha * wa, hb * wb, scale);
        let t = Tensor::from_vec(&[hb * wb, ha, wa], out)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(t, Op::Correlate { a, b, scale }, ng))
    }

    pub fn mul_const(&mut self, x: NodeId, weights: Arc<Vec<f64>>) -> Result<NodeId> {
        if weights.len() != self.value(x).len() {
            return Err(Error::shape("mul_const", self.value(x).len(), weights.len()));
        }
        let data = self.value(x).data().iter().zip(weights.iter()).map(|(a, b)| a * b).collect();
        let t = Tensor::from_vec(self.value(x).shape(), data)?;
        let ng = self.needs(&[x]);
        Ok(self.push(t, Op::MulConst { x, weights }, ng))
    }

    /// Bilinear resize to `(ho, wo)` with values multiplied by `gain`.
    pub fn resize(&mut self, x: NodeId, ho: usize, wo: usize, gain: f64) -> Result<NodeId> {
        let (c, h, w) = self.value(x).dims3()?;
        if ho == 0 || wo == 0 {
            return Err(Error::InvalidArgument("resize to empty size".into()));
        }
        let out = kernels::resize_forward(self.value(x).data(), c, h, w, ho, wo, gain);
        let t = Tensor::from_vec(&[c, ho, wo], out)?;
        let ng = self.needs(&[x]);
        Ok(self.push(t, Op::Resize { x, gain }, ng))
    }

    /// View a `(q, h, w)` tensor as a `q × (h·w)` matrix and transpose it into
    /// a `(h·w, out_h, out_w)` tensor with `out_h·out_w = q`.
    pub fn transpose_map(&mut self, x: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        let (q, h, w) = self.value(x).dims3()?;
        if out_h * out_w != q {
            return Err(Error::shape("transpose_map", q, out_h * out_w));
        }
        let out = kernels::transpose(self.value(x).data(), q, h * w);
        let t = Tensor::from_vec(&[h * w, out_h, out_w], out)?;
        let ng = self.needs(&[x]);
        Ok(self.push(t, Op::Transpose { x, rows: q, cols: h * w }, ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.value(a).add(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.value(a).sub(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let t = self.value(x).scaled(s);
        let ng = self.needs(&[x]);
        self.push(t, Op::Scale(x, s), ng)
    }

    /// Mean squared difference, as a scalar node.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("mse", format!("{:?}", va.shape()), format!("{:?}", vb.shape())));
        }
        let n = va.len().max(1) as f64;
        let v = va.data().iter().zip(vb.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
        let ng = self.needs(&[a, b]);
        Ok(self.push(Tensor::scalar(v), Op::Mse(a, b), ng))
    }

    /// Mean over spatial locations of `1 − cos(a(:, p), b(:, p))`. Locations
    /// where the reference `a` is (numerically) zero are skipped; a zero `b`
    /// vector counts as orthogonal (loss 1, no gradient).
    pub fn cosine_loss(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.cosine_loss_within(a, b, None)
    }

    /// [`Graph::cosine_loss`] restricted to the locations set in `region`.
    pub fn cosine_loss_within(&mut self, a: NodeId, b: NodeId, region: Option<&[bool]>) -> Result<NodeId> {
        let (c, h, w) = self.value(a).dims3()?;
        if self.value(b).shape() != [c, h, w] {
            return Err(Error::shape("cosine_loss", format!("[{c}, {h}, {w}]"), format!("{:?}", self.value(b).shape())));
        }
        let hw = h * w;
        if let Some(r) = region {
            if r.len() != hw {
                return Err(Error::shape("cosine_loss region", hw, r.len()));
            }
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut valid = vec![false; hw];
        let mut total = 0.0;
        let mut count = 0;
        for p in 0..hw {
            if region.is_some_and(|r| !r[p]) {
                continue;
            }
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for ci in 0..c {
                let (x, y) = (da[ci * hw + p], db[ci * hw + p]);
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            let (na, nb) = (na.sqrt(), nb.sqrt());
            if na >= COSINE_EPS {
                count += 1;
                if nb >= COSINE_EPS {
                    valid[p] = true;
                    total += 1.0 - dot / (na * nb);
                } else {
                    total += 1.0;
                }
            }
        }
        if count == 0 {
            return Err(Error::NoValidLocations);
        }
        let ng = self.needs(&[a, b]);
        Ok(self.push(Tensor::scalar(total / count as f64), Op::Cosine { a, b, valid, count }, ng))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).sum();
        let ng = self.needs(&[x]);
        self.push(Tensor::scalar(v), Op::Sum(x), ng)
    }

    /// `Σ weight · scalar` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let mut v = 0.0;
        for &(id, wt) in terms {
            if self.value(id).len() != 1 {
                return Err(Error::shape("weighted_sum", "scalar", format!("{:?}", self.value(id).shape())));
            }
            v += wt * self.scalar(id);
        }
        let ids: Vec<_> = terms.iter().map(|t| t.0).collect();
        let ng = self.needs(&ids);
        Ok(self.push(Tensor::scalar(v), Op::WeightedSum(terms.to_vec()), ng))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::shape("backward", "scalar root", format!("{:?}", self.value(root).shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::filled(self.value(root).shape(), 1.0));

        fn acc(grads: &mut [Option<Tensor>], nodes: &[Node], id: NodeId, g: Tensor) {
            if !nodes[id.0].needs_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        let tensor = |shape: &[usize], d: Vec<f64>| Tensor::from_vec(shape, d).expect("gradient shape");

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let nodes = &self.nodes;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Conv { x, w, b, shape, cols } => {
                    let need_x = nodes[x.0].needs_grad;
                    let (dx, dw, db) = kernels::conv2d_backward(g.data(), self.value(*w).data(), cols, *shape, need_x);
                    if let Some(dx) = dx {
                        acc(&mut grads, nodes, *x, tensor(self.value(*x).shape(), dx));
                    }
                    acc(&mut grads, nodes, *w, tensor(self.value(*w).shape(), dw));
                    acc(&mut grads, nodes, *b, tensor(self.value(*b).shape(), db));
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let d = g.data().iter().zip(xv.data()).map(|(gv, v)| if *v > 0.0 { *gv } else { 0.0 }).collect();
                    acc(&mut grads, nodes, *x, tensor(xv.shape(), d));
                }
                Op::MaxPool { x, argmax } => {
                    let mut d = vec![0.0; self.value(*x).len()];
                    for (gv, &a) in g.data().iter().zip(argmax) {
                        d[a] += gv;
                    }
                    acc(&mut grads, nodes, *x, tensor(self.value(*x).shape(), d));
                }
                Op::AvgPool { x, k } => {
                    let (c, h, w) = self.value(*x).dims3()?;
                    let d = kernels::avgpool_backward(g.data(), c, h, w, *k);
                    acc(&mut grads, nodes, *x, tensor(&[c, h, w], d));
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        let d = g.data()[offset..offset + n].to_vec();
                        offset += n;
                        acc(&mut grads, nodes, *p, tensor(self.value(*p).shape(), d));
                    }
                }
                Op::Sample { x, map } => {
                    let (c, h, w) = self.value(*x).dims3()?;
                    let d = kernels::sample_backward(g.data(), c, h * w, &map.taps);
                    acc(&mut grads, nodes, *x, tensor(&[c, h, w], d));
                }
                Op::Warp { x, flow } => {
                    let (c, h, w) = self.value(*x).dims3()?;
                    let (dx, dflow) =
                        kernels::warp_backward(g.data(), self.value(*x).data(), self.value(*flow).data(), c, h, w);
                    acc(&mut grads, nodes, *x, tensor(&[c, h, w], dx));
                    acc(&mut grads, nodes, *flow, tensor(&[2, h, w], dflow));
                }
                Op::Correlate { a, b, scale } => {
                    let (c, ha, wa) = self.value(*a).dims3()?;
                    let (_, hb, wb) = self.value(*b).dims3()?;
                    let (da, db) = kernels::correlation_backward(
                        g.data(),
                        self.value(*a).data(),
                        self.value(*b).data(),
                        c,
                        ha * wa,
                        hb * wb,
                        *scale,
                    );
                    acc(&mut grads, nodes, *a, tensor(&[c, ha, wa], da));
                    acc(&mut grads, nodes, *b, tensor(&[c, hb, wb], db));
                }
                Op::MulConst { x, weights } => {
                    let d = g.data().iter().zip(weights.iter()).map(|(a, b)| a * b).collect();
                    acc(&mut grads, nodes, *x, tensor(g.shape(), d));
                }
                Op::Resize { x, gain } => {
                    let (c, h, w) = self.value(*x).dims3()?;
                    let (_, ho, wo) = g.dims3()?;
                    let d = kernels::resize_backward(g.data(), c, h, w, ho, wo, *gain);
                    acc(&mut grads, nodes, *x, tensor(&[c, h, w], d));
                }
                Op::Transpose { x, rows, cols } => {
                    let d = kernels::transpose(g.data(), *cols, *rows);
                    acc(&mut grads, nodes, *x, tensor(self.value(*x).shape(), d));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, nodes, *a, g.clone());
                    acc(&mut grads, nodes, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, nodes, *b, g.scaled(-1.0));
                    acc(&mut grads, nodes, *a, g);
                }
                Op::Scale(x, s) => {
                    acc(&mut grads, nodes, *x, g.scaled(*s));
                }
                Op::Mse(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let k = 2.0 * g.data()[0] / va.len().max(1) as f64;
                    let da: Vec<f64> = va.data().iter().zip(vb.data()).map(|(x, y)| k * (x - y)).collect();
                    let db = da.iter().map(|v| -v).collect();
                    acc(&mut grads, nodes, *a, tensor(va.shape(), da));
                    acc(&mut grads, nodes, *b, tensor(vb.shape(), db));
                }
                Op::Cosine { a, b, valid, count } => {
                    let (c, h, w) = self.value(*a).dims3()?;
                    let hw = h * w;
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let k = g.data()[0] / *count as f64;
                    let mut da = vec![0.0; c * hw];
                    let mut db = vec![0.0; c * hw];
                    for p in (0..hw).filter(|&p| valid[p]) {
                        let (mut dot, mut na2, mut nb2) = (0.0, 0.0, 0.0);
                        for ci in 0..c {
                            let (x, y) = (va[ci * hw + p], vb[ci * hw + p]);
                            dot += x * y;
                            na2 += x * x;
                            nb2 += y * y;
                        }
                        let (na, nb) = (na2.sqrt(), nb2.sqrt());
                        let cos = dot / (na * nb);
                        for ci in 0..c {
                            let (x, y) = (va[ci * hw + p], vb[ci * hw + p]);
                            da[ci * hw + p] = -k * (y / (na * nb) - cos * x / na2);
                            db[ci * hw + p] = -k * (x / (na * nb) - cos * y / nb2);
                        }
                    }
                    acc(&mut grads, nodes, *a, tensor(&[c, h, w], da));
                    acc(&mut grads, nodes, *b, tensor(&[c, h, w], db));
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    acc(&mut grads, nodes, *x, Tensor::filled(xv.shape(), g.data()[0]));
                }
                Op::WeightedSum(terms) => {
                    for &(id, wt) in terms {
                        acc(&mut grads, nodes, id, Tensor::scalar(wt * g.data()[0]));
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Worst relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between the analytic
/// gradient and central differences of step `h`, over every input of a
/// scalar-valued graph builder.
pub fn gradcheck<F>(inputs: &[Tensor], h: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &ids)?;
        Ok(g.scalar(out))
    };
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = build(&mut g, &ids)?;
    let grads = g.backward(out)?;
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads.get(ids[i]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
        let mut numeric = vec![0.0; t.len()];
        let mut vals = inputs.to_vec();
        for (j, n) in numeric.iter_mut().enumerate() {
            let x = t.data()[j];
            vals[i].data_mut()[j] = x + h;
            let up = eval(&vals)?;
            vals[i].data_mut()[j] = x - h;
            let down = eval(&vals)?;
            vals[i].data_mut()[j] = x;
            *n = (up - down) / (2.0 * h);
        }
        let diff = analytic.data().iter().zip(&numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
        let scale = analytic.norm().max(numeric.iter().map(|v| v * v).sum::<f64>().sqrt());
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
    }
    Ok(worst)
}
