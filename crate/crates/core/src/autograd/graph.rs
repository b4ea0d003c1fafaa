//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only tape. Every operation on a [`Var`] computes
//! its value eagerly and records enough to replay the local derivative, so
//! tape order is already a topological order and [`Graph::backward`] is a
//! single reverse sweep.

use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Smallest denominator magnitude accepted by division.
pub const DIV_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Max2,
}

enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
    },
    Binary {
        kind: BinaryKind,
        a: usize,
        b: usize,
    },
    Affine {
        a: usize,
        mul: f64,
    },
    AddColumn {
        a: usize,
        bias: usize,
    },
    ScaleColumns {
        a: usize,
        w: usize,
    },
    Relu {
        a: usize,
    },
    Exp {
        a: usize,
    },
    Sum {
        a: usize,
    },
    SumRows {
        a: usize,
    },
    Transpose {
        a: usize,
    },
    Reshape {
        a: usize,
    },
    ReduceMaxGroups {
        a: usize,
        argmax: Vec<usize>,
    },
    SoftmaxCe {
        logits: usize,
        target: usize,
        probs: Vec<f64>,
    },
    Gather {
        a: usize,
        idx: Rc<[usize]>,
    },
    ConcatRows {
        parts: Vec<usize>,
    },
    GroupedMatMulT {
        f: usize,
        w: usize,
        k: usize,
    },
    OrientationConv {
        f: usize,
        w: [usize; 3],
        b: [usize; 3],
    },
    GroupKde {
        coords: usize,
        k: usize,
        h: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of recorded operations. Not `Sync`: one graph per evaluation thread.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients produced by one backward sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient buffer of `var`, or `None` when the loss does not reach it.
    pub fn get(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    /// Gradient of `var` as a tensor; zeros when unreached.
    pub fn tensor(&self, var: Var<'_>) -> Tensor {
        let shape = self.shapes[var.id].clone();
        match self.get(var) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf that gradients flow into.
    pub fn input(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                propagate(&nodes, node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], id: usize) -> Option<&'a mut [f64]> {
    if !nodes[id].requires_grad {
        return None;
    }
    let n = nodes[id].value.numel();
    Some(grads[id].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    c_strides: (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let reach = |rows: usize, cols: usize, (rs, cs): (isize, isize)| {
        (rows.saturating_sub(1)) as isize * rs + (cols.saturating_sub(1)) as isize * cs
    };
    assert!(k == 0 || (reach(m, k, a_strides) as usize) < a.len());
    assert!(k == 0 || (reach(k, n, b_strides) as usize) < b.len());
    assert!((reach(m, n, c_strides) as usize) < c.len());
    // SAFETY: the asserts above keep every strided access inside the slices.
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
            1.0,
            c.as_mut_ptr(),
            c_strides.0,
            c_strides.1,
        );
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let (m, k) = nodes[*a].value.dims2();
            let (_, n) = nodes[*b].value.dims2();
            if let Some(da) = acc(grads, nodes, *a) {
                // da += g · bᵀ
                let bv = nodes[*b].value.data();
                gemm(m, n, k, g, (n as isize, 1), bv, (1, n as isize), da, (k as isize, 1));
            }
            if let Some(db) = acc(grads, nodes, *b) {
                // db += aᵀ · g
                let av = nodes[*a].value.data();
                gemm(k, m, n, av, (1, k as isize), g, (n as isize, 1), db, (n as isize, 1));
            }
        }
        Op::Binary { kind, a, b } => {
            let av = nodes[*a].value.data();
            let bv = nodes[*b].value.data();
            let len = g.len();
            let ai = |i: usize| if av.len() == 1 { av[0] } else { av[i] };
            let bi = |i: usize| if bv.len() == 1 { bv[0] } else { bv[i] };
            let local = |i: usize| -> (f64, f64) {
                match kind {
                    BinaryKind::Add => (1.0, 1.0),
                    BinaryKind::Sub => (1.0, -1.0),
                    BinaryKind::Mul => (bi(i), ai(i)),
                    BinaryKind::Div => {
                        let d = bi(i);
                        (1.0 / d, -ai(i) / (d * d))
                    }
                    BinaryKind::Max2 => {
                        if ai(i) >= bi(i) {
                            (1.0, 0.0)
                        } else {
                            (0.0, 1.0)
                        }
                    }
                }
            };
            if let Some(da) = acc(grads, nodes, *a) {
                if da.len() == 1 && len != 1 {
                    da[0] += (0..len).map(|i| g[i] * local(i).0).sum::<f64>();
                } else {
                    for i in 0..len {
                        da[i] += g[i] * local(i).0;
                    }
                }
            }
            if let Some(db) = acc(grads, nodes, *b) {
                if db.len() == 1 && len != 1 {
                    db[0] += (0..len).map(|i| g[i] * local(i).1).sum::<f64>();
                } else {
                    for i in 0..len {
                        db[i] += g[i] * local(i).1;
                    }
                }
            }
        }
        Op::Affine { a, mul } => {
            if let Some(da) = acc(grads, nodes, *a) {
                for (d, gi) in da.iter_mut().zip(g) {
                    *d += mul * gi;
                }
            }
        }
        Op::AddColumn { a, bias } => {
            let (rows, cols) = node.value.dims2();
            if let Some(da) = acc(grads, nodes, *a) {
                for (d, gi) in da.iter_mut().zip(g) {
                    *d += gi;
                }
            }
            if let Some(db) = acc(grads, nodes, *bias) {
                for r in 0..rows {
                    db[r] += g[r * cols..(r + 1) * cols].iter().sum::<f64>();
                }
            }
        }
        Op::ScaleColumns { a, w } => {
            let (rows, cols) = node.value.dims2();
            let wv = nodes[*w].value.data();
            let av = nodes[*a].value.data();
            if let Some(da) = acc(grads, nodes, *a) {
                for r in 0..rows {
                    for c in 0..cols {
                        da[r * cols + c] += g[r * cols + c] * wv[c];
                    }
                }
            }
            if let Some(dw) = acc(grads, nodes, *w) {
                for r in 0..rows {
                    for c in 0..cols {
                        dw[c] += g[r * cols + c] * av[r * cols + c];
                    }
                }
            }
        }
        Op::Relu { a } => {
            let av = nodes[*a].value.data();
            if let Some(da) = acc(grads, nodes, *a) {
                for i in 0..g.len() {
                    if av[i] > 0.0 {
                        da[i] += g[i];
                    }
                }
            }
        }
        Op::Exp { a } => {
            let out = node.value.data();
            if let Some(da) = acc(grads, nodes, *a) {
                for i in 0..g.len() {
                    da[i] += g[i] * out[i];
                }
            }
        }
        Op::Sum { a } => {
            if let Some(da) = acc(grads, nodes, *a) {
                for d in da.iter_mut() {
                    *d += g[0];
                }
            }
        }
        Op::SumRows { a } => {
            let (rows, cols) = nodes[*a].value.dims2();
            if let Some(da) = acc(grads, nodes, *a) {
                for r in 0..rows {
                    for c in 0..cols {
                        da[r * cols + c] += g[c];
                    }
                }
            }
        }
        Op::Transpose { a } => {
            let (rows, cols) = nodes[*a].value.dims2();
            if let Some(da) = acc(grads, nodes, *a) {
                for r in 0..rows {
                    for c in 0..cols {
                        da[r * cols + c] += g[c * rows + r];
                    }
                }
            }
        }
        Op::Reshape { a } => {
            if let Some(da) = acc(grads, nodes, *a) {
                for (d, gi) in da.iter_mut().zip(g) {
                    *d += gi;
                }
            }
        }
        Op::ReduceMaxGroups { a, argmax } => {
            if let Some(da) = acc(grads, nodes, *a) {
                for (i, &src) in argmax.iter().enumerate() {
                    da[src] += g[i];
                }
            }
        }
        Op::SoftmaxCe {
            logits,
            target,
            probs,
        } => {
            if let Some(dl) = acc(grads, nodes, *logits) {
                for (i, p) in probs.iter().enumerate() {
                    let onehot = if i == *target { 1.0 } else { 0.0 };
                    dl[i] += g[0] * (p - onehot);
                }
            }
        }
        Op::Gather { a, idx } => {
            let (rows, n) = nodes[*a].value.dims2();
            let len = idx.len();
            if let Some(da) = acc(grads, nodes, *a) {
                for r in 0..rows {
                    let src = &g[r * len..(r + 1) * len];
                    let dst = &mut da[r * n..(r + 1) * n];
                    for (t, &j) in idx.iter().enumerate() {
                        dst[j] += src[t];
                    }
                }
            }
        }
        Op::ConcatRows { parts } => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.numel();
                if let Some(dp) = acc(grads, nodes, p) {
                    for (d, gi) in dp.iter_mut().zip(&g[offset..offset + len]) {
                        *d += gi;
                    }
                }
                offset += len;
            }
        }
        Op::GroupedMatMulT { f, w, k } => {
            let k = *k;
            let (d, total) = nodes[*f].value.dims2();
            let (mw, _) = nodes[*w].value.dims2();
            let m = total / k;
            let out_cols = m * mw;
            let fv = nodes[*f].value.data();
            let wv = nodes[*w].value.data();
            if let Some(df) = acc(grads, nodes, *f) {
                // dF_c += G_c · W_c
                for c in 0..m {
                    gemm(
                        d,
                        mw,
                        k,
                        &g[c * mw..],
                        (out_cols as isize, 1),
                        &wv[c * k..],
                        (total as isize, 1),
                        &mut df[c * k..],
                        (total as isize, 1),
                    );
                }
            }
            if let Some(dw) = acc(grads, nodes, *w) {
                // dW_c += G_cᵀ · F_c
                for c in 0..m {
                    gemm(
                        mw,
                        d,
                        k,
                        &g[c * mw..],
                        (1, out_cols as isize),
                        &fv[c * k..],
                        (total as isize, 1),
                        &mut dw[c * k..],
                        (total as isize, 1),
                    );
                }
            }
        }
        Op::OrientationConv { f, w, b } => {
            orientation_backward(nodes, node, *f, *w, *b, g, grads);
        }
        Op::GroupKde { coords, k, h } => {
            let k = *k;
            let cv = nodes[*coords].value.data();
            let total = cv.len() / 3;
            let inv_h2 = 1.0 / (h * h);
            if let Some(dc) = acc(grads, nodes, *coords) {
                for base in (0..total).step_by(k) {
                    for j in 0..k {
                        for l in (j + 1)..k {
                            let (cj, cl) = (base + j, base + l);
                            let mut diff = [0.0; 3];
                            let mut d2 = 0.0;
                            for (a, dv) in diff.iter_mut().enumerate() {
                                *dv = cv[a * total + cj] - cv[a * total + cl];
                                d2 += *dv * *dv;
                            }
                            let e = (-0.5 * d2 * inv_h2).exp();
                            // both densities j and l contain the (j, l) term
                            let coef = (g[cj] + g[cl]) * e * inv_h2 / k as f64;
                            for (a, dv) in diff.iter().enumerate() {
                                dc[a * total + cj] -= coef * dv;
                                dc[a * total + cl] += coef * dv;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn orientation_backward(
    nodes: &[Node],
    node: &Node,
    f: usize,
    w: [usize; 3],
    b: [usize; 3],
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let (d, total) = nodes[f].value.dims2();
    let m = node.value.dims2().1;
    let fv = nodes[f].value.data();
    let wv: Vec<&[f64]> = w.iter().map(|&i| nodes[i].value.data()).collect();
    let bv: Vec<&[f64]> = b.iter().map(|&i| nodes[i].value.data()).collect();
    let mut df = vec![0.0; fv.len()];
    let mut dw = [vec![0.0; 2 * d], vec![0.0; 2 * d], vec![0.0; 2 * d]];
    let mut db = [vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    for ch in 0..d {
        for c in 0..m {
            let cube = |o: usize| fv[ch * total + 8 * c + o];
            let stages = orientation_stages(&cube, ch, &wv, &bv);
            let go = g[ch * m + c];
            // stage z
            let gz = if stages.z_pre > 0.0 { go } else { 0.0 };
            db[2][ch] += gz;
            let mut gs2 = [0.0; 2];
            for sz in 0..2 {
                dw[2][2 * ch + sz] += gz * stages.s2[sz];
                gs2[sz] = gz * wv[2][2 * ch + sz];
            }
            // stage y
            let mut gs1 = [[0.0; 2]; 2];
            for sz in 0..2 {
                let gy = if stages.s2_pre[sz] > 0.0 { gs2[sz] } else { 0.0 };
                db[1][ch] += gy;
                for sy in 0..2 {
                    dw[1][2 * ch + sy] += gy * stages.s1[sy][sz];
                    gs1[sy][sz] = gy * wv[1][2 * ch + sy];
                }
            }
            // stage x
            for sy in 0..2 {
                for sz in 0..2 {
                    let gx = if stages.s1_pre[sy][sz] > 0.0 {
                        gs1[sy][sz]
                    } else {
                        0.0
                    };
                    db[0][ch] += gx;
                    for sx in 0..2 {
                        let o = 4 * sx + 2 * sy + sz;
                        dw[0][2 * ch + sx] += gx * cube(o);
                        df[ch * total + 8 * c + o] += gx * wv[0][2 * ch + sx];
                    }
                }
            }
        }
    }
    if let Some(dst) = acc(grads, nodes, f) {
        for (a, v) in dst.iter_mut().zip(&df) {
            *a += v;
        }
    }
    for s in 0..3 {
        if let Some(dst) = acc(grads, nodes, w[s]) {
            for (a, v) in dst.iter_mut().zip(&dw[s]) {
                *a += v;
            }
        }
        if let Some(dst) = acc(grads, nodes, b[s]) {
            for (a, v) in dst.iter_mut().zip(&db[s]) {
                *a += v;
            }
        }
    }
}

struct OrientationStages {
    s1_pre: [[f64; 2]; 2],
    s1: [[f64; 2]; 2],
    s2_pre: [f64; 2],
    s2: [f64; 2],
    z_pre: f64,
}

/// Three-stage collapse of one channel's 2×2×2 cube. Octant `o` holds sign
/// bits `(sx, sy, sz)` as `4·sx + 2·sy + sz`; stage x collapses `sx` with
/// `W_x`, then `sy` with `W_y`, then `sz` with `W_z`, each followed by ReLU.
fn orientation_stages(
    cube: &dyn Fn(usize) -> f64,
    ch: usize,
    w: &[&[f64]],
    b: &[&[f64]],
) -> OrientationStages {
    let mut s1_pre = [[0.0; 2]; 2];
    let mut s1 = [[0.0; 2]; 2];
    for sy in 0..2 {
        for sz in 0..2 {
            let pre = w[0][2 * ch] * cube(2 * sy + sz)
                + w[0][2 * ch + 1] * cube(4 + 2 * sy + sz)
                + b[0][ch];
            s1_pre[sy][sz] = pre;
            s1[sy][sz] = pre.max(0.0);
        }
    }
    let mut s2_pre = [0.0; 2];
    let mut s2 = [0.0; 2];
    for sz in 0..2 {
        let pre = w[1][2 * ch] * s1[0][sz] + w[1][2 * ch + 1] * s1[1][sz] + b[1][ch];
        s2_pre[sz] = pre;
        s2[sz] = pre.max(0.0);
    }
    let z_pre = w[2][2 * ch] * s2[0] + w[2][2 * ch + 1] * s2[1] + b[2][ch];
    OrientationStages {
        s1_pre,
        s1,
        s2_pre,
        s2,
        z_pre,
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Tensor {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn dims2(&self) -> (usize, usize) {
        self.graph.nodes.borrow()[self.id].value.dims2()
    }

    pub fn numel(&self) -> usize {
        self.graph.nodes.borrow()[self.id].value.numel()
    }

    /// Value of a single-element node.
    pub fn item(&self) -> f64 {
        self.graph.nodes.borrow()[self.id].value.data()[0]
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.graph.nodes.borrow()[self.id].value.data().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    fn same_graph(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.graph, other.graph),
            "vars belong to different graphs"
        );
    }

    fn emit(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'g> {
        let rg = self.graph.requires(inputs);
        self.graph.push(value, op, rg)
    }

    pub fn matmul(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&other);
        let out = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[other.id].value;
            let (m, k) = a.dims2();
            let (k2, n) = b.dims2();
            if k != k2 {
                return Err(Error::Dimension(format!(
                    "matmul of {:?} by {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let mut c = vec![0.0; m * n];
            gemm(
                m,
                k,
                n,
                a.data(),
                (k as isize, 1),
                b.data(),
                (n as isize, 1),
                &mut c,
                (n as isize, 1),
            );
            Tensor::matrix(m, n, c)?
        };
        Ok(self.emit(
            out,
            Op::MatMul {
                a: self.id,
                b: other.id,
            },
            &[self.id, other.id],
        ))
    }

    pub fn binary(&self, other: Var<'g>, kind: BinaryKind) -> Result<Var<'g>> {
        self.same_graph(&other);
        let out = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[other.id].value;
            let shape = if a.shape() == b.shape() || b.numel() == 1 {
                a.shape().to_vec()
            } else if a.numel() == 1 {
                b.shape().to_vec()
            } else {
                return Err(Error::Dimension(format!(
                    "elementwise {kind:?} of {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )));
            };
            let len: usize = shape.iter().product();
            let (av, bv) = (a.data(), b.data());
            let ai = |i: usize| if av.len() == 1 { av[0] } else { av[i] };
            let bi = |i: usize| if bv.len() == 1 { bv[0] } else { bv[i] };
            if kind == BinaryKind::Div {
                if let Some(bad) = bv.iter().find(|v| v.abs() < DIV_GUARD) {
                    return Err(Error::NumericGuard(format!(
                        "divisor {bad:e} below {DIV_GUARD:e}"
                    )));
                }
            }
            let data = (0..len)
                .map(|i| match kind {
                    BinaryKind::Add => ai(i) + bi(i),
                    BinaryKind::Sub => ai(i) - bi(i),
                    BinaryKind::Mul => ai(i) * bi(i),
                    BinaryKind::Div => ai(i) / bi(i),
                    BinaryKind::Max2 => ai(i).max(bi(i)),
                })
                .collect();
            Tensor::new(shape, data)?
        };
        Ok(self.emit(
            out,
            Op::Binary {
                kind,
                a: self.id,
                b: other.id,
            },
            &[self.id, other.id],
        ))
    }

    pub fn add(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, BinaryKind::Mul)
    }

    pub fn div(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, BinaryKind::Div)
    }

    pub fn max2(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, BinaryKind::Max2)
    }

    pub fn square(&self) -> Var<'g> {
        self.mul(*self).expect("same shape")
    }

    /// `mul · x + add` with constant coefficients.
    pub fn affine(&self, mul: f64, add: f64) -> Var<'g> {
        let out = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            let data = a.data().iter().map(|v| mul * v + add).collect();
            Tensor::new(a.shape().to_vec(), data).expect("same shape")
        };
        self.emit(out, Op::Affine { a: self.id, mul }, &[self.id])
    }

    pub fn scale(&self, mul: f64) -> Var<'g> {
        self.affine(mul, 0.0)
    }

    fn map(&self, f: impl Fn(f64) -> f64, op: Op) -> Var<'g> {
        let out = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            let data = a.data().iter().map(|&v| f(v)).collect();
            Tensor::new(a.shape().to_vec(), data).expect("same shape")
        };
        self.emit(out, op, &[self.id])
    }

    /// `max(0, x)`; the subgradient at exactly 0 is 0.
    pub fn relu(&self) -> Var<'g> {
        self.map(|v| v.max(0.0), Op::Relu { a: self.id })
    }

    pub fn exp(&self) -> Var<'g> {
        self.map(f64::exp, Op::Exp { a: self.id })
    }

    pub fn sum(&self) -> Var<'g> {
        let total = {
            let nodes = self.graph.nodes.borrow();
            nodes[self.id].value.data().iter().sum()
        };
        self.emit(Tensor::scalar(total), Op::Sum { a: self.id }, &[self.id])
    }

    pub fn mean(&self) -> Var<'g> {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Column sums: `[r × c] → [1 × c]`.
    pub fn sum_rows(&self) -> Var<'g> {
        let out = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            let (rows, cols) = a.dims2();
            let mut s = vec![0.0; cols];
            for r in 0..rows {
                for c in 0..cols {
                    s[c] += a.data()[r * cols + c];
                }
            }
            Tensor::matrix(1, cols, s).expect("shape")
        };
        self.emit(out, Op::SumRows { a: self.id }, &[self.id])
    }

    pub fn transpose(&self) -> Var<'g> {
        let out = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            let (rows, cols) = a.dims2();
            let mut t = vec![0.0; rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    t[c * rows + r] = a.data()[r * cols + c];
                }
            }
            Tensor::matrix(cols, rows, t).expect("shape")
        };
        self.emit(out, Op::Transpose { a: self.id }, &[self.id])
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var<'g>> {
        let out = self.value().reshape(shape)?;
        Ok(self.emit(out, Op::Reshape { a: self.id }, &[self.id]))
    }

    /// Column-vector view `[numel × 1]`.
    pub fn flatten(&self) -> Var<'g> {
        let n = self.numel();
        self.reshape(vec![n, 1]).expect("numel preserved")
    }

    /// Max over consecutive column groups of width `k`: `[r × m·k] → [r × m]`.
    ///
    /// The backward pass routes each output's gradient to the first column
    /// attaining the maximum.
    pub fn reduce_max_groups(&self, k: usize) -> Result<Var<'g>> {
        let (out, argmax) = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            let (rows, cols) = a.dims2();
            if k == 0 || cols == 0 || cols % k != 0 {
                return Err(Error::Dimension(format!(
                    "cannot max-reduce {cols} columns in groups of {k}"
                )));
            }
            let m = cols / k;
            let mut out = vec![0.0; rows * m];
            let mut argmax = vec![0; rows * m];
            let data = a.data();
            for r in 0..rows {
                for c in 0..m {
                    let base = r * cols + c * k;
                    let mut best = base;
                    for j in base + 1..base + k {
                        if data[j] > data[best] {
                            best = j;
                        }
                    }
                    out[r * m + c] = data[best];
                    argmax[r * m + c] = best;
                }
            }
            (Tensor::matrix(rows, m, out)?, argmax)
        };
        Ok(self.emit(
            out,
            Op::ReduceMaxGroups {
                a: self.id,
                argmax,
            },
            &[self.id],
        ))
    }

    /// Row-wise max over the last axis: `[d × K] → [d]`.
    pub fn reduce_max(&self) -> Result<Var<'g>> {
        let (rows, cols) = self.dims2();
        self.reduce_max_groups(cols)?.reshape(vec![rows])
    }

    /// `−log softmax(logits)[target]` with max-subtraction.
    pub fn softmax_cross_entropy(&self, target: usize) -> Result<Var<'g>> {
        let (loss, probs) = {
            let nodes = self.graph.nodes.borrow();
            let z = nodes[self.id].value.data();
            if target >= z.len() {
                return Err(Error::Index(format!(
                    "target class {target} out of range for {} logits",
                    z.len()
                )));
            }
            let (loss, probs) = softmax_ce(z, target);
            (loss, probs)
        };
        Ok(self.emit(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits: self.id,
                target,
                probs,
            },
            &[self.id],
        ))
    }

    /// Column gather: `[r × n] → [r × idx.len()]`.
    pub fn gather_cols(&self, idx: impl Into<Rc<[usize]>>) -> Result<Var<'g>> {
        let idx: Rc<[usize]> = idx.into();
        let out = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            let (rows, n) = a.dims2();
            if let Some(&bad) = idx.iter().find(|&&j| j >= n) {
                return Err(Error::Index(format!("column {bad} out of range {n}")));
            }
            let len = idx.len();
            let mut out = vec![0.0; rows * len];
            for r in 0..rows {
                let src = &a.data()[r * n..(r + 1) * n];
                let dst = &mut out[r * len..(r + 1) * len];
                for (t, &j) in idx.iter().enumerate() {
                    dst[t] = src[j];
                }
            }
            Tensor::matrix(rows, len, out)?
        };
        Ok(self.emit(out, Op::Gather { a: self.id, idx }, &[self.id]))
    }

    /// `a + bias` with `bias` (length = rows) broadcast along columns.
    pub fn add_column(&self, bias: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&bias);
        let out = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[bias.id].value;
            let (rows, cols) = a.dims2();
            if b.numel() != rows {
                return Err(Error::Dimension(format!(
                    "bias of {} for {rows} rows",
                    b.numel()
                )));
            }
            let mut data = a.data().to_vec();
            for r in 0..rows {
                for v in &mut data[r * cols..(r + 1) * cols] {
                    *v += b.data()[r];
                }
            }
            Tensor::matrix(rows, cols, data)?
        };
        Ok(self.emit(
            out,
            Op::AddColumn {
                a: self.id,
                bias: bias.id,
            },
            &[self.id, bias.id],
        ))
    }

    /// `a · diag(w)`: column `j` scaled by `w[j]`.
    pub fn scale_columns(&self, w: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&w);
        let out = {
            let nodes = self.graph.nodes.borrow();
            let a = &nodes[self.id].value;
            let wv = nodes[w.id].value.data();
            let (rows, cols) = a.dims2();
            if wv.len() != cols {
                return Err(Error::Dimension(format!(
                    "{} column weights for {cols} columns",
                    wv.len()
                )));
            }
            let mut data = a.data().to_vec();
            for r in 0..rows {
                for c in 0..cols {
                    data[r * cols + c] *= wv[c];
                }
            }
            Tensor::matrix(rows, cols, data)?
        };
        Ok(self.emit(
            out,
            Op::ScaleColumns { a: self.id, w: w.id },
            &[self.id, w.id],
        ))
    }

    /// Per-group `F_c · W_cᵀ`: `f [d × m·k]`, `w [M × m·k]` → `[d × m·M]`.
    pub fn grouped_matmul_t(&self, w: Var<'g>, k: usize) -> Result<Var<'g>> {
        self.same_graph(&w);
        let out = {
            let nodes = self.graph.nodes.borrow();
            let f = &nodes[self.id].value;
            let wt = &nodes[w.id].value;
            let (d, total) = f.dims2();
            let (mw, wtotal) = wt.dims2();
            if k == 0 || total % k != 0 || wtotal != total {
                return Err(Error::Dimension(format!(
                    "grouped product of {:?} and {:?} with group {k}",
                    f.shape(),
                    wt.shape()
                )));
            }
            let m = total / k;
            let out_cols = m * mw;
            let mut out = vec![0.0; d * out_cols];
            for c in 0..m {
                gemm(
                    d,
                    k,
                    mw,
                    &f.data()[c * k..],
                    (total as isize, 1),
                    &wt.data()[c * k..],
                    (1, total as isize),
                    &mut out[c * mw..],
                    (out_cols as isize, 1),
                );
            }
            Tensor::matrix(d, out_cols, out)?
        };
        Ok(self.emit(
            out,
            Op::GroupedMatMulT {
                f: self.id,
                w: w.id,
                k,
            },
            &[self.id, w.id],
        ))
    }

    /// Three-stage depthwise orientation convolution.
    ///
    /// `self` is `[d × 8m]`: for each of `m` centers, 8 octant columns in
    /// sign order `(−−−, −−+, …, +++)`. `w = [W_x, W_y, W_z]` each `[d × 2]`
    /// (weight for the − then + side), `b` three `[d]` biases. Output `[d × m]`.
    pub fn orientation_conv(&self, w: [Var<'g>; 3], b: [Var<'g>; 3]) -> Result<Var<'g>> {
        let out = {
            let nodes = self.graph.nodes.borrow();
            let f = &nodes[self.id].value;
            let (d, total) = f.dims2();
            if total % 8 != 0 {
                return Err(Error::Dimension(format!(
                    "orientation cube needs 8 columns per center, got {total}"
                )));
            }
            for v in &w {
                if nodes[v.id].value.numel() != 2 * d {
                    return Err(Error::Dimension(format!(
                        "orientation weights {:?} for {d} channels",
                        nodes[v.id].value.shape()
                    )));
                }
            }
            for v in &b {
                if nodes[v.id].value.numel() != d {
                    return Err(Error::Dimension(format!(
                        "orientation bias {:?} for {d} channels",
                        nodes[v.id].value.shape()
                    )));
                }
            }
            let m = total / 8;
            let wv: Vec<&[f64]> = w.iter().map(|v| nodes[v.id].value.data()).collect();
            let bv: Vec<&[f64]> = b.iter().map(|v| nodes[v.id].value.data()).collect();
            let fv = f.data();
            let mut out = vec![0.0; d * m];
            for ch in 0..d {
                for c in 0..m {
                    let cube = |o: usize| fv[ch * total + 8 * c + o];
                    out[ch * m + c] = orientation_stages(&cube, ch, &wv, &bv).z_pre.max(0.0);
                }
            }
            Tensor::matrix(d, m, out)?
        };
        let mut inputs = vec![self.id];
        inputs.extend(w.iter().map(|v| v.id));
        inputs.extend(b.iter().map(|v| v.id));
        Ok(self.emit(
            out,
            Op::OrientationConv {
                f: self.id,
                w: [w[0].id, w[1].id, w[2].id],
                b: [b[0].id, b[1].id, b[2].id],
            },
            &inputs,
        ))
    }

    /// Gaussian KDE inside consecutive groups of `k` points.
    ///
    /// `self` is `[3 × m·k]` coordinates; output `[1 × m·k]` where each entry
    /// is `(1/k) Σ_l exp(−‖x_j − x_l‖² / 2h²)` over its own group.
    pub fn group_kde(&self, k: usize, h: f64) -> Result<Var<'g>> {
        let out = {
            let nodes = self.graph.nodes.borrow();
            let c = &nodes[self.id].value;
            let (rows, total) = c.dims2();
            if rows != 3 || k == 0 || total % k != 0 {
                return Err(Error::Dimension(format!(
                    "kde over {:?} with group {k}",
                    c.shape()
                )));
            }
            if h <= 0.0 {
                return Err(Error::Contract(format!("kde bandwidth {h} must be positive")));
            }
            let cv = c.data();
            let inv = 0.5 / (h * h);
            let mut dens = vec![0.0; total];
            for base in (0..total).step_by(k) {
                for j in 0..k {
                    dens[base + j] += 1.0;
                    for l in (j + 1)..k {
                        let d2: f64 = (0..3)
                            .map(|a| {
                                let d = cv[a * total + base + j] - cv[a * total + base + l];
                                d * d
                            })
                            .sum();
                        let e = (-d2 * inv).exp();
                        dens[base + j] += e;
                        dens[base + l] += e;
                    }
                }
            }
            for v in &mut dens {
                *v /= k as f64;
            }
            Tensor::matrix(1, total, dens)?
        };
        Ok(self.emit(
            out,
            Op::GroupKde {
                coords: self.id,
                k,
                h,
            },
            &[self.id],
        ))
    }
}

/// Vertical stacking of same-width matrices.
pub fn concat_rows<'g>(parts: &[Var<'g>]) -> Result<Var<'g>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Dimension("concat of zero parts".into()))?;
    let out = {
        let nodes = first.graph.nodes.borrow();
        let cols = nodes[first.id].value.dims2().1;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            first.same_graph(p);
            let v = &nodes[p.id].value;
            let (r, c) = v.dims2();
            if c != cols {
                return Err(Error::Dimension(format!(
                    "concat of widths {cols} and {c}"
                )));
            }
            rows += r;
            data.extend_from_slice(v.data());
        }
        Tensor::matrix(rows, cols, data)?
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    Ok(first.emit(out, Op::ConcatRows { parts: ids.clone() }, &ids))
}

/// Stable cross-entropy and softmax probabilities.
pub fn softmax_ce(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| e / total).collect();
    let loss = total.ln() - (logits[target] - max);
    (loss, probs)
}
