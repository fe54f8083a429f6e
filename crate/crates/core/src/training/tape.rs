//! Vector-valued reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding
//! its output vector. Nodes only refer to earlier nodes, so walking the tape
//! backwards visits the graph in reverse topological order.

use thiserror::Error;

use crate::linalg::{dot, gemv};
use crate::operators::ShuffleMix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("loss must be a scalar, node has {0} elements")]
    NonScalarLoss(usize),
    #[error("node {0} is not a parameter reachable from the loss")]
    Detached(usize),
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param,
    /// `W x`, `W` row-major `rows x cols`.
    MatVec {
        w: NodeId,
        x: NodeId,
        rows: usize,
        cols: usize,
    },
    BlockDiagMv {
        w: NodeId,
        x: NodeId,
        out_dim: usize,
        in_dim: usize,
        groups: usize,
    },
    Shuffle {
        x: NodeId,
        shuffle: ShuffleMix,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softmax(NodeId),
    Log(NodeId),
    Sum(NodeId),
    Slice {
        x: NodeId,
        start: usize,
    },
    Mse(NodeId, NodeId),
    Kl(NodeId, NodeId),
    CrossEntropy {
        p: NodeId,
        target: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub(crate) fn kl_value(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi == 0.0 { 0.0 } else { pi * (pi.ln() - qi.ln()) })
        .sum()
}

pub(crate) fn mse_value(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
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

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn len_of(&self, id: NodeId) -> usize {
        self.nodes[id.0].value.len()
    }

    fn same_len(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), AutodiffError> {
        let (la, lb) = (self.len_of(a), self.len_of(b));
        if la == lb {
            Ok(())
        } else {
            Err(shape_err(op, format!("operands of length {la} and {lb}")))
        }
    }

    /// A trainable leaf.
    pub fn param(&mut self, values: Vec<f64>) -> NodeId {
        self.push(Op::Param, values)
    }

    pub fn constant(&mut self, values: Vec<f64>) -> NodeId {
        self.push(Op::Constant, values)
    }

    pub fn matvec(
        &mut self,
        w: NodeId,
        x: NodeId,
        rows: usize,
        cols: usize,
    ) -> Result<NodeId, AutodiffError> {
        if self.len_of(w) != rows * cols || self.len_of(x) != cols {
            return Err(shape_err(
                "matvec",
                format!(
                    "{rows}x{cols} weight of length {} applied to length {}",
                    self.len_of(w),
                    self.len_of(x)
                ),
            ));
        }
        let mut y = vec![0.0; rows];
        gemv(rows, cols, self.value(w), self.value(x), &mut y);
        Ok(self.push(Op::MatVec { w, x, rows, cols }, y))
    }

    /// Block-diagonal product; `w` holds the `groups` blocks back to back,
    /// each row-major.
    pub fn block_diag_mv(
        &mut self,
        w: NodeId,
        x: NodeId,
        out_dim: usize,
        in_dim: usize,
        groups: usize,
    ) -> Result<NodeId, AutodiffError> {
        if groups == 0
            || !out_dim.is_multiple_of(groups)
            || !in_dim.is_multiple_of(groups)
            || self.len_of(w) != out_dim * in_dim / groups
            || self.len_of(x) != in_dim
        {
            return Err(shape_err(
                "block_diag_mv",
                format!("{out_dim}x{in_dim} with {groups} groups does not fit operands"),
            ));
        }
        let (br, bc) = (out_dim / groups, in_dim / groups);
        let mut y = vec![0.0; out_dim];
        {
            let (wv, xv) = (self.value(w), self.value(x));
            for b in 0..groups {
                gemv(
                    br,
                    bc,
                    &wv[b * br * bc..(b + 1) * br * bc],
                    &xv[b * bc..(b + 1) * bc],
                    &mut y[b * br..(b + 1) * br],
                );
            }
        }
        Ok(self.push(
            Op::BlockDiagMv {
                w,
                x,
                out_dim,
                in_dim,
                groups,
            },
            y,
        ))
    }

    pub fn shuffle(&mut self, x: NodeId, groups: usize) -> Result<NodeId, AutodiffError> {
        let shuffle =
            ShuffleMix::new(self.len_of(x), groups).map_err(|e| shape_err("shuffle", e.to_string()))?;
        let mut y = vec![0.0; self.len_of(x)];
        shuffle.apply_into(self.value(x), &mut y);
        Ok(self.push(Op::Shuffle { x, shuffle }, y))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.same_len("add", a, b)?;
        let y = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(Op::Add(a, b), y))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.same_len("mul", a, b)?;
        let y = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Op::Mul(a, b), y))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let y = self.value(a).iter().map(|v| v * s).collect();
        self.push(Op::Scale(a, s), y)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let y = self.value(a).iter().map(|&v| sigmoid(v)).collect();
        self.push(Op::Sigmoid(a), y)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let y = self.value(a).iter().map(|v| v.tanh()).collect();
        self.push(Op::Tanh(a), y)
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let y = softmax(self.value(a));
        self.push(Op::Softmax(a), y)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let y = self.value(a).iter().map(|v| v.ln()).collect();
        self.push(Op::Log(a), y)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let y = vec![self.value(a).iter().sum()];
        self.push(Op::Sum(a), y)
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, AutodiffError> {
        if start + len > self.len_of(x) {
            return Err(shape_err(
                "slice",
                format!("[{start}, {}) out of length {}", start + len, self.len_of(x)),
            ));
        }
        let y = self.value(x)[start..start + len].to_vec();
        Ok(self.push(Op::Slice { x, start }, y))
    }

    /// Mean squared difference over elements.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.same_len("mse", a, b)?;
        let y = vec![mse_value(self.value(a), self.value(b))];
        Ok(self.push(Op::Mse(a, b), y))
    }

    /// `KL(p || q) = sum p_i (ln p_i - ln q_i)` for distributions `p`, `q`.
    pub fn kl(&mut self, p: NodeId, q: NodeId) -> Result<NodeId, AutodiffError> {
        self.same_len("kl", p, q)?;
        let y = vec![kl_value(self.value(p), self.value(q))];
        Ok(self.push(Op::Kl(p, q), y))
    }

    /// `-ln p[target]` for a distribution `p`.
    pub fn cross_entropy(&mut self, p: NodeId, target: usize) -> Result<NodeId, AutodiffError> {
        if target >= self.len_of(p) {
            return Err(shape_err(
                "cross_entropy",
                format!("target {target} out of {} classes", self.len_of(p)),
            ));
        }
        let y = vec![-self.value(p)[target].ln()];
        Ok(self.push(Op::CrossEntropy { p, target }, y))
    }

    /// Propagates adjoints from the scalar `loss` to every node it depends
    /// on.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, AutodiffError> {
        let n = self.len_of(loss);
        if n != 1 {
            return Err(AutodiffError::NonScalarLoss(n));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        fn acc(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
            adj[id.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(gy) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match node.op {
                Op::Constant | Op::Param => {}
                Op::MatVec { w, x, rows, cols } => {
                    let (wv, xv) = (self.value(w), self.value(x));
                    let gw = acc(&mut adj, w, rows * cols);
                    for i in 0..rows {
                        let g = gy[i];
                        for j in 0..cols {
                            gw[i * cols + j] += g * xv[j];
                        }
                    }
                    let gx = acc(&mut adj, x, cols);
                    for i in 0..rows {
                        let g = gy[i];
                        let row = &wv[i * cols..(i + 1) * cols];
                        for j in 0..cols {
                            gx[j] += row[j] * g;
                        }
                    }
                }
                Op::BlockDiagMv {
                    w,
                    x,
                    out_dim,
                    in_dim,
                    groups,
                } => {
                    let (br, bc) = (out_dim / groups, in_dim / groups);
                    let (wv, xv) = (self.value(w), self.value(x));
                    let gw = acc(&mut adj, w, wv.len());
                    for b in 0..groups {
                        for i in 0..br {
                            let g = gy[b * br + i];
                            for j in 0..bc {
                                gw[b * br * bc + i * bc + j] += g * xv[b * bc + j];
                            }
                        }
                    }
                    let gx = acc(&mut adj, x, in_dim);
                    for b in 0..groups {
                        for i in 0..br {
                            let g = gy[b * br + i];
                            let row = &wv[b * br * bc + i * bc..b * br * bc + (i + 1) * bc];
                            for j in 0..bc {
                                gx[b * bc + j] += row[j] * g;
                            }
                        }
                    }
                }
                Op::Shuffle { x, shuffle } => {
                    // The adjoint of a permutation is its inverse.
                    let gx = acc(&mut adj, x, gy.len());
                    for (i, g) in gx.iter_mut().enumerate() {
                        *g += gy[shuffle.target(i)];
                    }
                }
                Op::Add(a, b) => {
                    for id in [a, b] {
                        let g = acc(&mut adj, id, gy.len());
                        g.iter_mut().zip(&gy).for_each(|(g, d)| *g += d);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(a), self.value(b));
                    let ga = acc(&mut adj, a, gy.len());
                    for k in 0..gy.len() {
                        ga[k] += gy[k] * bv[k];
                    }
                    let gb = acc(&mut adj, b, gy.len());
                    for k in 0..gy.len() {
                        gb[k] += gy[k] * av[k];
                    }
                }
                Op::Scale(a, s) => {
                    let g = acc(&mut adj, a, gy.len());
                    g.iter_mut().zip(&gy).for_each(|(g, d)| *g += s * d);
                }
                Op::Sigmoid(a) => {
                    let g = acc(&mut adj, a, gy.len());
                    for k in 0..gy.len() {
                        g[k] += gy[k] * y[k] * (1.0 - y[k]);
                    }
                }
                Op::Tanh(a) => {
                    let g = acc(&mut adj, a, gy.len());
                    for k in 0..gy.len() {
                        g[k] += gy[k] * (1.0 - y[k] * y[k]);
                    }
                }
                Op::Softmax(a) => {
                    let inner = dot(&gy, y);
                    let g = acc(&mut adj, a, gy.len());
                    for k in 0..gy.len() {
                        g[k] += y[k] * (gy[k] - inner);
                    }
                }
                Op::Log(a) => {
                    let av = self.value(a);
                    let g = acc(&mut adj, a, gy.len());
                    for k in 0..gy.len() {
                        g[k] += gy[k] / av[k];
                    }
                }
                Op::Sum(a) => {
                    let len = self.len_of(a);
                    let g = acc(&mut adj, a, len);
                    g.iter_mut().for_each(|g| *g += gy[0]);
                }
                Op::Slice { x, start } => {
                    let len = self.len_of(x);
                    let g = acc(&mut adj, x, len);
                    for (k, d) in gy.iter().enumerate() {
                        g[start + k] += d;
                    }
                }
                Op::Mse(a, b) => {
                    let (av, bv) = (self.value(a), self.value(b));
                    let scale = 2.0 * gy[0] / av.len() as f64;
                    let diff: Vec<f64> = av.iter().zip(bv).map(|(x, y)| scale * (x - y)).collect();
                    let ga = acc(&mut adj, a, diff.len());
                    ga.iter_mut().zip(&diff).for_each(|(g, d)| *g += d);
                    let gb = acc(&mut adj, b, diff.len());
                    gb.iter_mut().zip(&diff).for_each(|(g, d)| *g -= d);
                }
                Op::Kl(p, q) => {
                    let (pv, qv) = (self.value(p), self.value(q));
                    let gp = acc(&mut adj, p, pv.len());
                    for k in 0..pv.len() {
                        if pv[k] != 0.0 {
                            gp[k] += gy[0] * (pv[k].ln() - qv[k].ln() + 1.0);
                        }
                    }
                    let gq = acc(&mut adj, q, qv.len());
                    for k in 0..qv.len() {
                        gq[k] -= gy[0] * pv[k] / qv[k];
                    }
                }
                Op::CrossEntropy { p, target } => {
                    let pv = self.value(p);
                    let gp = acc(&mut adj, p, pv.len());
                    gp[target] -= gy[0] / pv[target];
                }
            }
            adj[idx] = Some(gy);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .take(loss.0 + 1)
            .map(|(i, n)| matches!(n.op, Op::Param) && adj[i].is_some())
            .collect();
        Ok(Gradients { adj, params })
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adj: Vec<Option<Vec<f64>>>,
    params: Vec<bool>,
}

impl Gradients {
    /// Gradient of the loss with respect to parameter `id`.
    pub fn wrt(&self, id: NodeId) -> Result<&[f64], AutodiffError> {
        match (self.params.get(id.0), self.adj.get(id.0)) {
            (Some(true), Some(Some(g))) => Ok(g),
            _ => Err(AutodiffError::Detached(id.0)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::gradcheck::check_gradients;

    #[test]
    fn shuffle_adjoint_is_inverse_shuffle() {
        let w = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut tape = Tape::new();
        let x = tape.param(vec![0.5; 6]);
        let s = tape.shuffle(x, 2).unwrap();
        let wn = tape.constant(w.clone());
        let p = tape.mul(s, wn).unwrap();
        let loss = tape.sum(p);
        let grads = tape.backward(loss).unwrap();
        let expected = ShuffleMix::new(6, 2).unwrap().apply_inverse(&w).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &expected[..]);
    }

    #[test]
    fn mse_gradient_vanishes_at_target() {
        let mut tape = Tape::new();
        let x = tape.param(vec![0.1, 0.2, 0.7]);
        let c = tape.constant(vec![0.1, 0.2, 0.7]);
        let loss = tape.mse(x, c).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.wrt(x).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(vec![1.0, 2.0]);
        let y = tape.tanh(x);
        assert_eq!(tape.backward(y).unwrap_err(), AutodiffError::NonScalarLoss(2));
    }

    #[test]
    fn detached_parameter_is_reported() {
        let mut tape = Tape::new();
        let x = tape.param(vec![1.0]);
        let unused = tape.param(vec![2.0]);
        let c = tape.constant(vec![3.0]);
        let loss = tape.mul(x, x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[2.0]);
        assert!(matches!(grads.wrt(unused), Err(AutodiffError::Detached(_))));
        assert!(matches!(grads.wrt(c), Err(AutodiffError::Detached(_))));
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::new();
        let a = tape.param(vec![1.0; 3]);
        let b = tape.param(vec![1.0; 4]);
        assert!(tape.add(a, b).is_err());
        assert!(tape.matvec(b, a, 2, 2).is_err());
        assert!(tape.block_diag_mv(b, a, 4, 3, 2).is_err());
        assert!(tape.shuffle(a, 2).is_err());
        assert!(tape.slice(a, 2, 2).is_err());
        assert!(tape.cross_entropy(a, 3).is_err());
    }

    fn uniform(n: usize, seed: u64) -> Vec<f64> {
        (0..n)
            .map(|k| (((k as u64 + 1) * 2654435761 + seed * 97) % 1000) as f64 / 1000.0 - 0.5)
            .collect()
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let report = check_gradients(&[uniform(5, 1), uniform(5, 2)], |t, p| {
            let s = t.sigmoid(p[0]);
            let h = t.tanh(p[1]);
            let m = t.mul(s, h)?;
            let a = t.add(m, p[0])?;
            let sc = t.scale(a, 1.7);
            let sl = t.slice(sc, 1, 3)?;
            let sm = t.softmax(sl);
            let lg = t.log(sm);
            Ok(t.sum(lg))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}
