//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Values
//! are computed eagerly, so the same tape serves inference (read the values)
//! and training (call [`Tape::backward`] on a scalar node). Graphs are built
//! fresh for every example; nothing is shared between tapes.

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatVec(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Log(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Concat(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    Row(NodeId, usize),
    Pick(NodeId, usize),
    Slice(NodeId, usize, usize),
    Sum(NodeId),
    Dot(NodeId, NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatVec(..) => "matvec",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Log(_) => "log",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Concat(_) => "concat",
            Op::StackRows(_) => "stack_rows",
            Op::Row(..) => "row",
            Op::Pick(..) => "pick",
            Op::Slice(..) => "slice",
            Op::Sum(_) => "sum",
            Op::Dot(..) => "dot",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
    num_params: usize,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

pub(crate) fn log_softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.item()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Constant input; gradients stop here.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input)
    }

    /// Leaf bound to a stored parameter. Each parameter gets a single node per
    /// tape, so repeated calls return the same id.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if self.param_nodes.len() < store.len() {
            self.param_nodes.resize(store.len(), None);
            self.num_params = store.len();
        }
        if let Some(node) = self.param_nodes[id.0] {
            return node;
        }
        let node = self.push(store.value(id).clone(), Op::Param(id));
        self.param_nodes[id.0] = Some(node);
        node
    }

    /// `w · x` for a matrix `w` of shape `[r, c]` and a vector `x` of length `c`.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let (wv, xv) = (self.value(w), self.value(x));
        assert_eq!(wv.rank(), 2, "matvec lhs must be a matrix");
        let (r, c) = (wv.shape()[0], wv.shape()[1]);
        assert_eq!(xv.len(), c, "matvec dimension mismatch");
        let xd = xv.data();
        let out: Vec<f64> = (0..r)
            .map(|i| wv.row(i).iter().zip(xd).map(|(a, b)| a * b).sum())
            .collect();
        self.push(Tensor::vector(out), Op::MatVec(w, x))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(av.rank() == 2 && bv.rank() == 2, "matmul needs matrices");
        let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        assert_eq!(bv.shape()[0], k, "matmul dimension mismatch");
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let aip = av.data()[i * k + p];
                let brow = bv.row(p);
                let orow = &mut out[i * m..(i + 1) * m];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += aip * b;
                }
            }
        }
        self.push(Tensor::from_parts(vec![n, m], out), Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        assert_eq!(av.rank(), 2, "transpose needs a matrix");
        let (r, c) = (av.shape()[0], av.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av.data()[i * c + j];
            }
        }
        self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(a))
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "{} shape mismatch", op.name());
        let out = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), op)
    }

    fn map(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let av = self.value(a);
        let out = av.data().iter().map(|x| f(*x)).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        self.map(a, Op::Scale(a, k), |x| x * k)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Log(a), f64::ln)
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).data().to_vec();
        softmax_in_place(&mut out);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let out = log_softmax(self.value(a).data());
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, out), Op::LogSoftmax(a))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        self.push(Tensor::vector(out), Op::Concat(parts.to_vec()))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> NodeId {
        assert!(!rows.is_empty(), "stack_rows needs at least one row");
        let d = self.value(rows[0]).len();
        let mut out = Vec::with_capacity(d * rows.len());
        for &r in rows {
            let v = self.value(r);
            assert_eq!(v.len(), d, "stack_rows row length mismatch");
            out.extend_from_slice(v.data());
        }
        self.push(
            Tensor::from_parts(vec![rows.len(), d], out),
            Op::StackRows(rows.to_vec()),
        )
    }

    /// Selects row `i` of a matrix (embedding lookup).
    pub fn row(&mut self, a: NodeId, i: usize) -> NodeId {
        let v = self.value(a);
        assert!(v.rank() == 2 && i < v.rows(), "row index out of range");
        let out = v.row(i).to_vec();
        self.push(Tensor::vector(out), Op::Row(a, i))
    }

    /// Selects element `i` of a vector as a scalar.
    pub fn pick(&mut self, a: NodeId, i: usize) -> NodeId {
        let v = self.value(a).data()[i];
        self.push(Tensor::scalar(v), Op::Pick(a, i))
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let out = self.value(a).data()[start..start + len].to_vec();
        self.push(Tensor::vector(out), Op::Slice(a, start, len))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.len(), bv.len(), "dot length mismatch");
        let s = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum();
        self.push(Tensor::scalar(s), Op::Dot(a, b))
    }

    /// Sum of scalar nodes, each multiplied by a constant weight.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Option<NodeId> {
        let mut acc: Option<NodeId> = None;
        for &(node, w) in terms {
            let scaled = self.scale(node, w);
            acc = Some(match acc {
                Some(a) => self.add(a, scaled),
                None => scaled,
            });
        }
        acc
    }

    /// Differentiates the scalar `root` and returns per-parameter gradients.
    pub fn gradients(&self, root: NodeId) -> Result<Gradients> {
        let root_val = self.value(root);
        if !root_val.is_scalar() {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                root_val.shape()
            )));
        }
        if !root_val.is_finite() {
            return Err(Error::Numeric {
                node: root.0,
                op: self.nodes[root.0].op.name(),
                detail: format!("root value {}", root_val.item()),
            });
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        let mut out = Gradients::empty(self.num_params);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    node: i,
                    op: node.op.name(),
                    detail: "non-finite gradient".into(),
                });
            }
            self.propagate(node, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    /// Differentiates `root` and adds the result into `store`'s accumulators.
    pub fn backward(&self, root: NodeId, store: &mut ParamStore) -> Result<()> {
        let g = self.gradients(root)?;
        store.accumulate(&g);
        Ok(())
    }

    fn propagate(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) {
        fn acc(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
            grads[id.0].get_or_insert_with(|| vec![0.0; len])
        }
        let val = |id: NodeId| &self.nodes[id.0].value;

        match &node.op {
            Op::Input => {}
            Op::Param(pid) => out.add_to(*pid, node.value.shape(), g),
            Op::MatVec(w, x) => {
                let (wv, xv) = (val(*w), val(*x));
                let (r, c) = (wv.shape()[0], wv.shape()[1]);
                {
                    let gw = acc(grads, *w, r * c);
                    for i in 0..r {
                        let gi = g[i];
                        if gi != 0.0 {
                            for (gwij, xj) in gw[i * c..(i + 1) * c].iter_mut().zip(xv.data()) {
                                *gwij += gi * xj;
                            }
                        }
                    }
                }
                let gx = acc(grads, *x, c);
                for i in 0..r {
                    let gi = g[i];
                    if gi != 0.0 {
                        for (gxj, wij) in gx.iter_mut().zip(wv.row(i)) {
                            *gxj += gi * wij;
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                {
                    let ga = acc(grads, *a, n * k);
                    for i in 0..n {
                        for p in 0..k {
                            let s: f64 = g[i * m..(i + 1) * m]
                                .iter()
                                .zip(bv.row(p))
                                .map(|(x, y)| x * y)
                                .sum();
                            ga[i * k + p] += s;
                        }
                    }
                }
                let gb = acc(grads, *b, k * m);
                for i in 0..n {
                    for p in 0..k {
                        let aip = av.data()[i * k + p];
                        for (gbj, gij) in gb[p * m..(p + 1) * m].iter_mut().zip(&g[i * m..(i + 1) * m]) {
                            *gbj += aip * gij;
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let av = val(*a);
                let (r, c) = (av.shape()[0], av.shape()[1]);
                let ga = acc(grads, *a, r * c);
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[j * r + i];
                    }
                }
            }
            Op::Add(a, b) => {
                for (x, y) in acc(grads, *a, g.len()).iter_mut().zip(g) {
                    *x += y;
                }
                for (x, y) in acc(grads, *b, g.len()).iter_mut().zip(g) {
                    *x += y;
                }
            }
            Op::Sub(a, b) => {
                for (x, y) in acc(grads, *a, g.len()).iter_mut().zip(g) {
                    *x += y;
                }
                for (x, y) in acc(grads, *b, g.len()).iter_mut().zip(g) {
                    *x -= y;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                for ((x, gi), bi) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(bv.data()) {
                    *x += gi * bi;
                }
                for ((x, gi), ai) in acc(grads, *b, g.len()).iter_mut().zip(g).zip(av.data()) {
                    *x += gi * ai;
                }
            }
            Op::Scale(a, k) => {
                for (x, gi) in acc(grads, *a, g.len()).iter_mut().zip(g) {
                    *x += gi * k;
                }
            }
            Op::Tanh(a) => {
                for ((x, gi), yi) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(node.value.data()) {
                    *x += gi * (1.0 - yi * yi);
                }
            }
            Op::Sigmoid(a) => {
                for ((x, gi), yi) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(node.value.data()) {
                    *x += gi * yi * (1.0 - yi);
                }
            }
            Op::Log(a) => {
                let av = val(*a);
                for ((x, gi), ai) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(av.data()) {
                    *x += gi / ai;
                }
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let dotp: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                for ((x, gi), yi) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(y) {
                    *x += yi * (gi - dotp);
                }
            }
            Op::LogSoftmax(a) => {
                let total: f64 = g.iter().sum();
                for ((x, gi), yi) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(node.value.data()) {
                    *x += gi - yi.exp() * total;
                }
            }
            Op::Concat(parts) | Op::StackRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).len();
                    for (x, gi) in acc(grads, *p, n).iter_mut().zip(&g[offset..offset + n]) {
                        *x += gi;
                    }
                    offset += n;
                }
            }
            Op::Row(a, i) => {
                let av = val(*a);
                let c = av.cols();
                let ga = acc(grads, *a, av.len());
                for (x, gi) in ga[i * c..(i + 1) * c].iter_mut().zip(g) {
                    *x += gi;
                }
            }
            Op::Pick(a, i) => {
                let n = val(*a).len();
                acc(grads, *a, n)[*i] += g[0];
            }
            Op::Slice(a, start, len) => {
                let n = val(*a).len();
                let ga = acc(grads, *a, n);
                for (x, gi) in ga[*start..start + len].iter_mut().zip(g) {
                    *x += gi;
                }
            }
            Op::Sum(a) => {
                let n = val(*a).len();
                for x in acc(grads, *a, n).iter_mut() {
                    *x += g[0];
                }
            }
            Op::Dot(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let n = av.len();
                for (x, bi) in acc(grads, *a, n).iter_mut().zip(bv.data()) {
                    *x += g[0] * bi;
                }
                for (x, ai) in acc(grads, *b, n).iter_mut().zip(av.data()) {
                    *x += g[0] * ai;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert(name, t).unwrap();
        (s, id)
    }

    #[test]
    fn sum_gradient_is_ones() {
        let (mut s, id) = store_with("p", Tensor::vector(vec![0.3, -1.0, 2.0]));
        let mut t = Tape::new();
        let p = t.param(&s, id);
        let root = t.sum(p);
        t.backward(root, &mut s).unwrap();
        assert_eq!(s.grad(id).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient() {
        let (mut s, id) = store_with("p", Tensor::scalar(3.0));
        let mut t = Tape::new();
        let p = t.param(&s, id);
        let root = t.mul(p, p);
        t.backward(root, &mut s).unwrap();
        assert_eq!(s.grad(id).item(), 6.0);
    }

    #[test]
    fn log_softmax_symmetric_gradient() {
        let (mut s, id) = store_with("z", Tensor::vector(vec![0.0, 0.0]));
        let mut t = Tape::new();
        let z = t.param(&s, id);
        let sm = t.softmax(z);
        let l = t.log(sm);
        let root = t.pick(l, 0);
        t.backward(root, &mut s).unwrap();
        let g = s.grad(id).data();
        assert!((g[0] - 0.5).abs() < 1e-15 && (g[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn gradients_accumulate() {
        let (mut s, id) = store_with("p", Tensor::scalar(2.0));
        for _ in 0..3 {
            let mut t = Tape::new();
            let p = t.param(&s, id);
            let root = t.scale(p, 1.5);
            t.backward(root, &mut s).unwrap();
        }
        assert_eq!(s.grad(id).item(), 4.5);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let (mut s, id) = store_with("p", Tensor::vector(vec![1.0, 2.0]));
        let mut t = Tape::new();
        let p = t.param(&s, id);
        assert!(matches!(t.backward(p, &mut s), Err(Error::Contract(_))));
    }

    #[test]
    fn nan_reports_node() {
        let (mut s, id) = store_with("p", Tensor::scalar(0.0));
        let mut t = Tape::new();
        let p = t.param(&s, id);
        let l = t.log(p); // -inf
        let root = t.scale(l, 0.0); // NaN
        let err = t.backward(root, &mut s).unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }), "{err}");
    }

    #[test]
    fn param_node_is_shared() {
        let (s, id) = store_with("p", Tensor::scalar(1.0));
        let mut t = Tape::new();
        assert_eq!(t.param(&s, id), t.param(&s, id));
    }
}
