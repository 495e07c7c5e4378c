//! Reverse-mode gradient tape over flat `f64` vectors.
//!
//! Operations are recorded eagerly with their forward values; `backward`
//! walks the tape in reverse and accumulates `dloss/dparam` into the
//! [`ParamStore`] gradient buffers.

use crate::diffnet::params::ParamStore;
use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Sigmoid,
    /// Sigmoid-weighted linear unit, `x * sigmoid(x)`.
    Silu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
            Activation::Silu => x * sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Voxel layout for the patch-to-voxel linear upsampling op.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchLayout {
    pub dims: (usize, usize, usize),
    /// Patch edge length; must divide every grid dimension.
    pub patch: usize,
    pub feat_dim: usize,
    pub classes: usize,
}

impl PatchLayout {
    pub fn patch_counts(&self) -> (usize, usize, usize) {
        (
            self.dims.0 / self.patch,
            self.dims.1 / self.patch,
            self.dims.2 / self.patch,
        )
    }

    pub fn num_patches(&self) -> usize {
        let (a, b, c) = self.patch_counts();
        a * b * c
    }

    pub fn offsets(&self) -> usize {
        self.patch * self.patch * self.patch
    }

    /// (patch index, offset index) of a voxel.
    #[inline]
    pub fn locate(&self, x: usize, y: usize, z: usize) -> (usize, usize) {
        let p = self.patch;
        let (npx, npy, _) = self.patch_counts();
        let pi = (x / p) + npx * ((y / p) + npy * (z / p));
        let oi = (x % p) + p * ((y % p) + p * (z % p));
        (pi, oi)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(String),
    MatVec {
        w: NodeId,
        x: NodeId,
        rows: usize,
        cols: usize,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// `ca*a + cb*b`
    Axpby {
        ca: f64,
        a: NodeId,
        cb: f64,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        k: f64,
    },
    Activate {
        x: NodeId,
        kind: Activation,
    },
    /// `x*(1+s) + shift`, elementwise.
    ScaleShift {
        x: NodeId,
        s: NodeId,
        shift: NodeId,
    },
    Concat(Vec<NodeId>),
    SumSq(NodeId),
    MeanScalars(Vec<NodeId>),
    MeanCrossEntropy {
        logits: NodeId,
        labels: Vec<u8>,
        classes: usize,
    },
    PatchUnpoolLinear {
        feats: NodeId,
        w: NodeId,
        b: NodeId,
        layout: PatchLayout,
    },
}

struct Node {
    op: Op,
    value: Vec<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id].value[0]
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, v: Vec<f64>) -> NodeId {
        self.push(Op::Const, v)
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.constant(vec![v])
    }

    /// Records a parameter leaf; the current values are copied onto the tape.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        let p = store.get(name)?;
        Ok(self.push(Op::Param(name.to_string()), p.values.clone()))
    }

    pub fn matvec(&mut self, w: NodeId, rows: usize, cols: usize, x: NodeId) -> Result<NodeId> {
        if self.nodes[w].value.len() != rows * cols {
            return Err(Error::dim(rows * cols, self.nodes[w].value.len(), "matvec weights"));
        }
        if self.nodes[x].value.len() != cols {
            return Err(Error::dim(cols, self.nodes[x].value.len(), "matvec input"));
        }
        let mut out = vec![0.0; rows];
        {
            let wv = &self.nodes[w].value;
            let xv = &self.nodes[x].value;
            for r in 0..rows {
                let row = &wv[r * cols..(r + 1) * cols];
                let mut acc = 0.0;
                for c in 0..cols {
                    acc += row[c] * xv[c];
                }
                out[r] = acc;
            }
        }
        Ok(self.push(Op::MatVec { w, x, rows, cols }, out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip(a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.zip(a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn axpby(&mut self, ca: f64, a: NodeId, cb: f64, b: NodeId) -> Result<NodeId> {
        let v = self.zip(a, b, |x, y| ca * x + cb * y)?;
        Ok(self.push(Op::Axpby { ca, a, cb, b }, v))
    }

    /// `(1-t)*a + t*b`.
    pub fn lerp(&mut self, t: f64, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.axpby(1.0 - t, a, t, b)
    }

    pub fn scale(&mut self, k: f64, x: NodeId) -> NodeId {
        let v = self.nodes[x].value.iter().map(|&e| k * e).collect();
        self.push(Op::Scale { x, k }, v)
    }

    pub fn activate(&mut self, kind: Activation, x: NodeId) -> NodeId {
        let v = self.nodes[x].value.iter().map(|&e| kind.apply(e)).collect();
        self.push(Op::Activate { x, kind }, v)
    }

    pub fn scale_shift(&mut self, x: NodeId, s: NodeId, shift: NodeId) -> Result<NodeId> {
        let n = self.nodes[x].value.len();
        if self.nodes[s].value.len() != n || self.nodes[shift].value.len() != n {
            return Err(Error::dim(
                n,
                format!(
                    "scale {} / shift {}",
                    self.nodes[s].value.len(),
                    self.nodes[shift].value.len()
                ),
                "scale_shift",
            ));
        }
        let mut v = vec![0.0; n];
        for i in 0..n {
            v[i] = self.nodes[x].value[i] * (1.0 + self.nodes[s].value[i])
                + self.nodes[shift].value[i];
        }
        Ok(self.push(Op::ScaleShift { x, s, shift }, v))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut v = Vec::new();
        for &p in parts {
            v.extend_from_slice(&self.nodes[p].value);
        }
        self.push(Op::Concat(parts.to_vec()), v)
    }

    pub fn sum_sq(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x].value.iter().map(|e| e * e).sum();
        self.push(Op::SumSq(x), vec![s])
    }

    pub fn mean_scalars(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Empty("mean over no scalars".into()));
        }
        let s: f64 = parts.iter().map(|&p| self.nodes[p].value[0]).sum();
        let v = s / parts.len() as f64;
        Ok(self.push(Op::MeanScalars(parts.to_vec()), vec![v]))
    }

    /// Mean per-voxel cross-entropy of voxel-major logits against class labels.
    pub fn mean_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[u8],
        classes: usize,
    ) -> Result<NodeId> {
        let lv = &self.nodes[logits].value;
        if lv.len() != labels.len() * classes {
            return Err(Error::dim(labels.len() * classes, lv.len(), "cross-entropy logits"));
        }
        let mut total = 0.0;
        for (v, &lab) in labels.iter().enumerate() {
            let row = &lv[v * classes..(v + 1) * classes];
            total += log_sum_exp(row) - row[lab as usize];
        }
        let value = total / labels.len() as f64;
        Ok(self.push(
            Op::MeanCrossEntropy {
                logits,
                labels: labels.to_vec(),
                classes,
            },
            vec![value],
        ))
    }

    /// Per-voxel logits from per-patch features through offset-specific
    /// affine heads: `logit[v,c] = W[o(v),c,:]·feat[p(v),:] + b[o(v),c]`.
    pub fn patch_unpool_linear(
        &mut self,
        feats: NodeId,
        w: NodeId,
        b: NodeId,
        layout: PatchLayout,
    ) -> Result<NodeId> {
        let (np, no, f, c) = (
            layout.num_patches(),
            layout.offsets(),
            layout.feat_dim,
            layout.classes,
        );
        if self.nodes[feats].value.len() != np * f {
            return Err(Error::dim(np * f, self.nodes[feats].value.len(), "unpool features"));
        }
        if self.nodes[w].value.len() != no * c * f {
            return Err(Error::dim(no * c * f, self.nodes[w].value.len(), "unpool weights"));
        }
        if self.nodes[b].value.len() != no * c {
            return Err(Error::dim(no * c, self.nodes[b].value.len(), "unpool bias"));
        }
        let (nx, ny, nz) = layout.dims;
        let mut out = vec![0.0; nx * ny * nz * c];
        {
            let fv = &self.nodes[feats].value;
            let wv = &self.nodes[w].value;
            let bv = &self.nodes[b].value;
            let mut v = 0usize;
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let (pi, oi) = layout.locate(x, y, z);
                        let feat = &fv[pi * f..(pi + 1) * f];
                        for cl in 0..c {
                            let row = &wv[(oi * c + cl) * f..(oi * c + cl + 1) * f];
                            let mut acc = bv[oi * c + cl];
                            for k in 0..f {
                                acc += row[k] * feat[k];
                            }
                            out[v * c + cl] = acc;
                        }
                        v += 1;
                    }
                }
            }
        }
        Ok(self.push(Op::PatchUnpoolLinear { feats, w, b, layout }, out))
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        let av = &self.nodes[a].value;
        let bv = &self.nodes[b].value;
        if av.len() != bv.len() {
            return Err(Error::dim(av.len(), bv.len(), "elementwise op"));
        }
        Ok(av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect())
    }

    /// Accumulates `dloss/dparam` for every parameter leaf into `store`.
    /// Repeated calls without `zero_grad` keep accumulating.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Empty("backward on an empty tape".into()));
        }
        if self.nodes[loss].value.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward target must be scalar, got length {}",
                self.nodes[loss].value.len()
            )));
        }
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        grads[loss][0] = 1.0;

        for id in (0..=loss).rev() {
            if grads[id].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut grads[id]);
            match &self.nodes[id].op {
                Op::Const => {}
                Op::Param(name) => {
                    let p = store.get_mut(name)?;
                    for (pg, gi) in p.grad.iter_mut().zip(&g) {
                        *pg += gi;
                    }
                }
                Op::MatVec { w, x, rows, cols } => {
                    let (w, x, rows, cols) = (*w, *x, *rows, *cols);
                    let xv = self.nodes[x].value.clone();
                    let wv = &self.nodes[w].value;
                    // dW[r,c] += g[r]*x[c]; dx[c] += sum_r g[r]*W[r,c]
                    for r in 0..rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        for c in 0..cols {
                            grads[w][r * cols + c] += gr * xv[c];
                            grads[x][c] += gr * wv[r * cols + c];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (i, gi) in g.iter().enumerate() {
                        grads[*a][i] += gi;
                        grads[*b][i] += gi;
                    }
                }
                Op::Sub(a, b) => {
                    for (i, gi) in g.iter().enumerate() {
                        grads[*a][i] += gi;
                        grads[*b][i] -= gi;
                    }
                }
                Op::Axpby { ca, a, cb, b } => {
                    for (i, gi) in g.iter().enumerate() {
                        grads[*a][i] += ca * gi;
                        grads[*b][i] += cb * gi;
                    }
                }
                Op::Scale { x, k } => {
                    for (i, gi) in g.iter().enumerate() {
                        grads[*x][i] += k * gi;
                    }
                }
                Op::Activate { x, kind } => {
                    let xv = &self.nodes[*x].value;
                    for (i, gi) in g.iter().enumerate() {
                        grads[*x][i] += kind.derivative(xv[i]) * gi;
                    }
                }
                Op::ScaleShift { x, s, shift } => {
                    let xv = &self.nodes[*x].value;
                    let sv = &self.nodes[*s].value;
                    for (i, gi) in g.iter().enumerate() {
                        grads[*x][i] += gi * (1.0 + sv[i]);
                        grads[*s][i] += gi * xv[i];
                        grads[*shift][i] += gi;
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.nodes[p].value.len();
                        for i in 0..n {
                            grads[p][i] += g[off + i];
                        }
                        off += n;
                    }
                }
                Op::SumSq(x) => {
                    let xv = &self.nodes[*x].value;
                    for (i, &xi) in xv.iter().enumerate() {
                        grads[*x][i] += 2.0 * xi * g[0];
                    }
                }
                Op::MeanScalars(parts) => {
                    let k = g[0] / parts.len() as f64;
                    for &p in parts {
                        grads[p][0] += k;
                    }
                }
                Op::MeanCrossEntropy {
                    logits,
                    labels,
                    classes,
                } => {
                    let lv = &self.nodes[*logits].value;
                    let scale = g[0] / labels.len() as f64;
                    for (v, &lab) in labels.iter().enumerate() {
                        let row = &lv[v * classes..(v + 1) * classes];
                        let lse = log_sum_exp(row);
                        for c in 0..*classes {
                            let p = (row[c] - lse).exp();
                            let ind = if c == lab as usize { 1.0 } else { 0.0 };
                            grads[*logits][v * classes + c] += scale * (p - ind);
                        }
                    }
                }
                Op::PatchUnpoolLinear { feats, w, b, layout } => {
                    let (f, c) = (layout.feat_dim, layout.classes);
                    let (nx, ny, nz) = layout.dims;
                    let fv = self.nodes[*feats].value.clone();
                    let wv = &self.nodes[*w].value;
                    let mut v = 0usize;
                    for z in 0..nz {
                        for y in 0..ny {
                            for x in 0..nx {
                                let (pi, oi) = layout.locate(x, y, z);
                                for cl in 0..c {
                                    let gi = g[v * c + cl];
                                    if gi == 0.0 {
                                        continue;
                                    }
                                    grads[*b][oi * c + cl] += gi;
                                    let wbase = (oi * c + cl) * f;
                                    for k in 0..f {
                                        grads[*w][wbase + k] += gi * fv[pi * f + k];
                                        grads[*feats][pi * f + k] += gi * wv[wbase + k];
                                    }
                                }
                                v += 1;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::params::Param;

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut store = ParamStore::new();
        store.insert("w", Param::zeros(vec![2]));
        let mut tape = Tape::new();
        let _w = tape.param(&store, "w").unwrap();
        let loss = tape.constant_scalar(3.0);
        tape.backward(loss, &mut store).unwrap();
        assert!(store.get("w").unwrap().grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn half_norm_sq_of_scaled_input() {
        // loss = 0.5*||W x||^2 with scalar W=2, x=3 -> dloss/dW = 2*3*3 = 18
        let mut store = ParamStore::new();
        let mut p = Param::zeros(vec![1, 1]);
        p.values[0] = 2.0;
        store.insert("w", p);
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let x = tape.constant(vec![3.0]);
        let y = tape.matvec(w, 1, 1, x).unwrap();
        let ss = tape.sum_sq(y);
        let loss = tape.scale(0.5, ss);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get("w").unwrap().grad[0], 18.0);
    }

    #[test]
    fn backward_without_zero_grad_accumulates() {
        let mut store = ParamStore::new();
        let mut p = Param::zeros(vec![1]);
        p.values[0] = 3.0;
        store.insert("w", p);
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let loss = tape.sum_sq(w);
        tape.backward(loss, &mut store).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get("w").unwrap().grad[0], 12.0);
    }

    #[test]
    fn backward_on_empty_tape_is_an_error() {
        let mut store = ParamStore::new();
        let tape = Tape::new();
        assert!(tape.backward(0, &mut store).is_err());
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_classes() {
        let mut tape = Tape::new();
        let logits = tape.constant(vec![0.0; 12]);
        let labels = vec![0u8, 3];
        let ce = tape.mean_cross_entropy(logits, &labels, 6).unwrap();
        assert!((tape.scalar(ce) - (6.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn scale_shift_neutral_when_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![1.0, -2.0, 0.5]);
        let s = tape.constant(vec![0.0; 3]);
        let b = tape.constant(vec![0.0; 3]);
        let y = tape.scale_shift(x, s, b).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }
}
