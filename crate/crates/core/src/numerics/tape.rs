//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Node ids
//! are handed out in creation order, so the recording is already a valid
//! topological order and the backward pass simply walks it in reverse.

use super::matrix::{gemm, Matrix};
use super::NumericsError;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Square(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    Transpose(Var),
    SqDist(Var, Var),
    RowNormalize(Var, f64),
    CrossEntropy(Var, Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Recorded computation graph for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`. Nodes the loss does not
    /// depend on get an all-zero gradient of the right shape.
    pub fn wrt(&self, tape: &Tape, var: Var) -> Matrix {
        match &self.adjoints[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.value(var).shape();
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.adjoints[var.0].as_ref()
    }
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Input that is not differentiated with respect to.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Param)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// Broadcast-adds a `1 × c` row (typically a bias) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "add_row expects a single row");
        let v = self.value(a).add_row(r.as_slice());
        self.push(v, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b));
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).scale(k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self
            .value(a)
            .map(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Elementwise `sqrt(a + eps)`.
    pub fn sqrt(&mut self, a: Var, eps: f64) -> Var {
        let v = self.value(a).map(|x| (x + eps).sqrt());
        self.push(v, Op::Sqrt(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = Matrix::scalar(m.sum() / m.len() as f64);
        self.push(v, Op::Mean(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Pairwise squared Euclidean distances between the rows of `a` (K × n)
    /// and the rows of `b` (M × n), giving a K × M matrix.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Var {
        let v = pairwise_sq_dist(self.value(a), self.value(b));
        self.push(v, Op::SqDist(a, b))
    }

    /// Scales every row to unit length, `a_i / sqrt(|a_i|² + eps)`.
    pub fn row_normalize(&mut self, a: Var, eps: f64) -> Var {
        let m = self.value(a);
        let mut out = m.clone();
        for r in 0..m.rows() {
            let norm = (m.row(r).iter().map(|x| x * x).sum::<f64>() + eps).sqrt();
            for x in out.row_mut(r) {
                *x /= norm;
            }
        }
        self.push(out, Op::RowNormalize(a, eps))
    }

    /// Mean over rows of the softmax cross-entropy between `logits` and the
    /// integer class `targets` (one per row).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows(), targets.len(), "cross_entropy target count");
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            assert!(t < l.cols(), "cross_entropy target out of range");
            let row = l.row(r);
            total += log_sum_exp(row) - row[t];
        }
        let v = Matrix::scalar(total / targets.len() as f64);
        self.push(v, Op::CrossEntropy(logits, targets.to_vec()))
    }

    /// Reverse pass from a scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(NumericsError::NonScalarLoss {
                node: loss.0,
                shape,
            });
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Matrix::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.value.is_finite() || !g.is_finite() {
                // report where the non-finite value first appeared
                let origin = (0..=id)
                    .find(|&i| !self.nodes[i].value.is_finite())
                    .unwrap_or(id);
                return Err(NumericsError::NonFinite { node: origin });
            }
            self.propagate(&node.op, &node.value, &g, &mut adj);
            adj[id] = Some(g);
        }
        Ok(Gradients { adjoints: adj })
    }

    fn propagate(&self, op: &Op, out: &Matrix, g: &Matrix, adj: &mut [Option<Matrix>]) {
        match op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                accumulate_gemm(adj, *a, g, false, bv, true);
                accumulate_gemm(adj, *b, av, true, g, false);
            }
            Op::AddRow(a, row) => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *row, Matrix::row_vector(&g.sum_rows()));
            }
            Op::Add(a, b) => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                accumulate(adj, *a, g.zip_map(bv, |gi, bi| gi * bi));
                accumulate(adj, *b, g.zip_map(av, |gi, ai| gi * ai));
            }
            Op::Scale(a, k) => accumulate(adj, *a, g.scale(*k)),
            Op::LeakyRelu(a, slope) => {
                let av = self.value(*a);
                let s = *slope;
                accumulate(
                    adj,
                    *a,
                    g.zip_map(av, |gi, x| if x > 0.0 { gi } else { s * gi }),
                );
            }
            Op::Sigmoid(a) => {
                accumulate(adj, *a, g.zip_map(out, |gi, y| gi * y * (1.0 - y)));
            }
            Op::Tanh(a) => {
                accumulate(adj, *a, g.zip_map(out, |gi, y| gi * (1.0 - y * y)));
            }
            Op::Square(a) => {
                let av = self.value(*a);
                accumulate(adj, *a, g.zip_map(av, |gi, x| 2.0 * x * gi));
            }
            Op::Sqrt(a) => {
                accumulate(adj, *a, g.zip_map(out, |gi, y| gi / (2.0 * y)));
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                accumulate(adj, *a, Matrix::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                accumulate(adj, *a, Matrix::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::Transpose(a) => accumulate(adj, *a, g.transpose()),
            Op::SqDist(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                // dD_ij/da_i = 2(a_i - b_j), dD_ij/db_j = -2(a_i - b_j)
                let over_i = g.sum_rows();
                let over_j: Vec<f64> = (0..g.rows()).map(|i| g.row(i).iter().sum()).collect();
                let mut ga = g.matmul(bv).scale(-2.0);
                for i in 0..av.rows() {
                    let k = 2.0 * over_j[i];
                    for (x, a) in ga.row_mut(i).iter_mut().zip(av.row(i)) {
                        *x += k * a;
                    }
                }
                let mut gb = g.t_matmul(av).scale(-2.0);
                for j in 0..bv.rows() {
                    let k = 2.0 * over_i[j];
                    for (x, b) in gb.row_mut(j).iter_mut().zip(bv.row(j)) {
                        *x += k * b;
                    }
                }
                accumulate(adj, *a, ga);
                accumulate(adj, *b, gb);
            }
            Op::RowNormalize(a, eps) => {
                let av = self.value(*a);
                let mut ga = Matrix::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let norm = (av.row(r).iter().map(|x| x * x).sum::<f64>() + eps).sqrt();
                    let y = out.row(r);
                    let gr = g.row(r);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((dst, &yi), &gi) in ga.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *dst = (gi - yi * dot) / norm;
                    }
                }
                accumulate(adj, *a, ga);
            }
            Op::CrossEntropy(logits, targets) => {
                let l = self.value(*logits);
                let scale = g.item() / targets.len() as f64;
                let mut gl = Matrix::zeros(l.rows(), l.cols());
                for (r, &t) in targets.iter().enumerate() {
                    let row = l.row(r);
                    let lse = log_sum_exp(row);
                    for (dst, &x) in gl.row_mut(r).iter_mut().zip(row) {
                        *dst = (x - lse).exp() * scale;
                    }
                    gl[(r, t)] -= scale;
                }
                accumulate(adj, *logits, gl);
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn accumulate_gemm(adj: &mut [Option<Matrix>], v: Var, a: &Matrix, ta: bool, b: &Matrix, tb: bool) {
    let m = if ta { a.cols() } else { a.rows() };
    let n = if tb { b.rows() } else { b.cols() };
    match &mut adj[v.0] {
        Some(existing) => gemm(a, ta, b, tb, existing, 1.0),
        slot @ None => {
            let mut out = Matrix::zeros(m, n);
            gemm(a, ta, b, tb, &mut out, 0.0);
            *slot = Some(out);
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn pairwise_sq_dist(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols(), b.cols(), "sq_dist feature dimension mismatch");
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ai = a.row(i);
        let dst = out.row_mut(i);
        for (j, d) in dst.iter_mut().enumerate() {
            *d = ai
                .iter()
                .zip(b.row(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient_at_three_is_six() {
        let mut t = Tape::new();
        let w = t.param(Matrix::scalar(3.0));
        let y = t.square(w);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(&t, w).item(), 6.0);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut t = Tape::new();
        let w = t.param(Matrix::scalar(3.0));
        let c = t.constant(Matrix::scalar(7.0));
        let y = t.square(c);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(&t, w).item(), 0.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let w = t.param(Matrix::zeros(2, 2));
        assert!(matches!(
            t.backward(w),
            Err(NumericsError::NonScalarLoss { shape: (2, 2), .. })
        ));
    }

    #[test]
    fn nan_reports_the_offending_node() {
        let mut t = Tape::new();
        let w = t.param(Matrix::scalar(-1.0));
        let s = t.sqrt(w, 0.0);
        let y = t.sum(s);
        match t.backward(y) {
            Err(NumericsError::NonFinite { node }) => assert_eq!(node, s.id()),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn reused_node_accumulates_adjoint() {
        // f(w) = w * w via Mul, df/dw = 2w
        let mut t = Tape::new();
        let w = t.param(Matrix::scalar(1.5));
        let y = t.mul(w, w);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(&t, w).item(), 3.0);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_k() {
        let mut t = Tape::new();
        let l = t.param(Matrix::zeros(3, 4));
        let ce = t.cross_entropy(l, &[0, 1, 3]);
        assert!((t.value(ce).item() - 4f64.ln()).abs() < 1e-15);
    }
}
