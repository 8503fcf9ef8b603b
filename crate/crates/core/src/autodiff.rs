//! Reverse-mode automatic differentiation over dense 2D tensors.
//!
//! A [`Tape`] records every operation as an append-only node; inputs always
//! reference earlier nodes, so the tape is topologically ordered by
//! construction. [`Tape::backward_graph`] replays the chain rule *as tape
//! nodes built from the same primitive set*, which makes gradients
//! first-class values: a second backward pass over a function of a gradient
//! differentiates it again. That is what the gradient-penalty loss needs,
//! where a parameter gradient of `(‖∇_x D(x)‖₂ − 1)²` is required.
//!
//! The primitive set is closed under its own backward rules: every rule
//! below emits only `Op` variants (plus constant tensors for masks and
//! ones), so arbitrarily deep differentiation stays inside the set.

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("backward root must be a 1x1 scalar, got {rows}x{cols}")]
    RootNotScalar { rows: usize, cols: usize },
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },
}

/// Guard for `sqrt_eps`: sqrt(x + EPS) stays differentiable at 0.
pub const SQRT_EPS: f64 = 1e-12;
/// Guard for `log_eps` and `recip`: arguments are floored at EPS.
pub const LOG_EPS: f64 = 1e-12;

/// Dense row-major 2D tensor. Scalars are 1x1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    /// Panics if `data.len() != rows * cols`.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "tensor data length {} does not match {}x{}",
            data.len(),
            rows,
            cols
        );
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![1.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self::new(rows, cols, vec![v; rows * cols])
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(1, 1, vec![v])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::new(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(
            self.shape(),
            other.shape(),
            "elementwise op on mismatched shapes {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        Tensor::new(
            self.rows,
            self.cols,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Tensor::new(self.cols, self.rows, out)
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        Tensor::new(m, n, out)
    }
}

impl serde::Serialize for Tensor {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = serializer.serialize_struct("Tensor", 3)?;
        s.serialize_field("rows", &self.rows)?;
        s.serialize_field("cols", &self.cols)?;
        s.serialize_field("data", &self.data)?;
        s.end()
    }
}

impl<'de> serde::Deserialize<'de> for Tensor {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(serde::Deserialize)]
        struct Raw {
            rows: usize,
            cols: usize,
            data: Vec<f64>,
        }
        let raw = Raw::deserialize(deserializer)?;
        if raw.data.len() != raw.rows * raw.cols {
            return Err(serde::de::Error::custom("tensor data length mismatch"));
        }
        Ok(Tensor::new(raw.rows, raw.cols, raw.data))
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Negative slope of `leaky_relu`, fixed at the usual discriminator value.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Operation kinds recorded on the tape. Backward rules emit only these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    /// Differentiable input (parameters, data the caller wants gradients of).
    Leaf,
    /// Non-differentiable input (data, masks, ones).
    Constant,
    Add,
    Sub,
    Mul,
    MatMul,
    Transpose,
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
    Square,
    SqrtEps,
    LogEps,
    Recip,
    Sum,
    Scale(f64),
    Broadcast,
    AddBias,
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    requires_grad: bool,
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradients of one backward pass, indexed by leaf node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `id`, if any path reached it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `id`, or zeros of the given shape.
    pub fn get_or_zeros(&self, id: NodeId, rows: usize, cols: usize) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(rows, cols))
    }
}

/// Append-only computation graph.
#[derive(Default)]
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let t = self.value(id);
        assert_eq!(t.shape(), (1, 1), "node is not a scalar");
        t.data[0]
    }

    pub fn op_kind(&self, id: NodeId) -> Op {
        self.nodes[id.0].op
    }

    pub fn check_finite(&self, id: NodeId, context: &str) -> Result<(), AutodiffError> {
        if self.value(id).is_finite() {
            Ok(())
        } else {
            Err(AutodiffError::NonFinite {
                context: context.to_string(),
            })
        }
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        let requires_grad = match op {
            Op::Leaf => true,
            Op::Constant => false,
            _ => inputs.iter().any(|&i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], value)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, vec![], value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(Op::Add, vec![a, b], v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(Op::Sub, vec![a, b], v)
    }

    /// Elementwise product (same shapes).
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(Op::Mul, vec![a, b], v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul, vec![a, b], v)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(Op::Transpose, vec![a], v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu, vec![a], v)
    }

    pub fn leaky_relu(&mut self, a: NodeId) -> NodeId {
        let v = self
            .value(a)
            .map(|x| if x > 0.0 { x } else { LEAKY_SLOPE * x });
        self.push(Op::LeakyRelu, vec![a], v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh, vec![a], v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid, vec![a], v)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square, vec![a], v)
    }

    /// sqrt(x + 1e-12), differentiable at zero.
    pub fn sqrt_eps(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| (x + SQRT_EPS).sqrt());
        self.push(Op::SqrtEps, vec![a], v)
    }

    /// ln(max(x, 1e-12)).
    pub fn log_eps(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(LOG_EPS).ln());
        self.push(Op::LogEps, vec![a], v)
    }

    /// 1 / max(x, 1e-12).
    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| 1.0 / x.max(LOG_EPS));
        self.push(Op::Recip, vec![a], v)
    }

    /// Sum of all entries, as a 1x1 scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).data.iter().sum());
        self.push(Op::Sum, vec![a], v)
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| c * x);
        self.push(Op::Scale(c), vec![a], v)
    }

    /// Fill an (rows x cols) tensor with the value of a 1x1 node.
    pub fn broadcast(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let t = self.value(a);
        assert_eq!(t.shape(), (1, 1), "broadcast source must be a scalar");
        let v = Tensor::filled(rows, cols, t.data[0]);
        self.push(Op::Broadcast, vec![a], v)
    }

    /// Adds a 1xN bias row to every row of a BxN tensor.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let v = {
            let (xv, bv) = (self.value(x), self.value(b));
            assert_eq!(bv.rows, 1, "bias must be a row vector");
            assert_eq!(
                xv.cols, bv.cols,
                "bias width {} does not match input width {}",
                bv.cols, xv.cols
            );
            let mut out = xv.data.clone();
            for row in out.chunks_exact_mut(xv.cols) {
                for (o, &bias) in row.iter_mut().zip(&bv.data) {
                    *o += bias;
                }
            }
            Tensor::new(xv.rows, xv.cols, out)
        };
        self.push(Op::AddBias, vec![x, b], v)
    }

    /// Mean of all entries (composite: scaled sum).
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let count = {
            let t = self.value(a);
            (t.rows * t.cols) as f64
        };
        let s = self.sum(a);
        self.scale(s, 1.0 / count)
    }

    /// x·W + b with bias broadcast over rows (composite).
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xw = self.matmul(x, w);
        self.add_bias(xw, b)
    }

    /// ln(1 + x) for x ≥ 0 (composite: shifted `log_eps`).
    pub fn log1p(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.value(a).shape();
        let one = self.constant(Tensor::ones(r, c));
        let shifted = self.add(a, one);
        self.log_eps(shifted)
    }

    /// Reverse accumulation from a scalar `root`, recording every backward
    /// computation as new tape nodes. Returns one gradient node per `wrt`
    /// entry (a zero constant when no path reaches it). Because gradients
    /// are ordinary nodes, a scalar built from them can be differentiated
    /// by a second call.
    pub fn backward_graph(
        &mut self,
        root: NodeId,
        wrt: &[NodeId],
    ) -> Result<Vec<NodeId>, AutodiffError> {
        {
            let t = self.value(root);
            if t.shape() != (1, 1) {
                return Err(AutodiffError::RootNotScalar {
                    rows: t.rows,
                    cols: t.cols,
                });
            }
        }
        let mut grads: Vec<Option<NodeId>> = vec![None; root.0 + 1];
        grads[root.0] = Some(self.constant(Tensor::scalar(1.0)));
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id] else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            let op = self.nodes[id].op;
            let inputs = self.nodes[id].inputs.clone();
            let out = NodeId(id);
            match op {
                Op::Leaf | Op::Constant => {}
                Op::Add => {
                    self.accumulate(&mut grads, inputs[0], g);
                    self.accumulate(&mut grads, inputs[1], g);
                }
                Op::Sub => {
                    self.accumulate(&mut grads, inputs[0], g);
                    let neg = self.scale(g, -1.0);
                    self.accumulate(&mut grads, inputs[1], neg);
                }
                Op::Mul => {
                    let ga = self.mul(g, inputs[1]);
                    self.accumulate(&mut grads, inputs[0], ga);
                    let gb = self.mul(g, inputs[0]);
                    self.accumulate(&mut grads, inputs[1], gb);
                }
                Op::MatMul => {
                    let bt = self.transpose(inputs[1]);
                    let ga = self.matmul(g, bt);
                    self.accumulate(&mut grads, inputs[0], ga);
                    let at = self.transpose(inputs[0]);
                    let gb = self.matmul(at, g);
                    self.accumulate(&mut grads, inputs[1], gb);
                }
                Op::Transpose => {
                    let gt = self.transpose(g);
                    self.accumulate(&mut grads, inputs[0], gt);
                }
                Op::Relu => {
                    let mask = self.nodes[inputs[0].0]
                        .value
                        .map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    let mask = self.constant(mask);
                    let gx = self.mul(g, mask);
                    self.accumulate(&mut grads, inputs[0], gx);
                }
                Op::LeakyRelu => {
                    let mask = self.nodes[inputs[0].0]
                        .value
                        .map(|x| if x > 0.0 { 1.0 } else { LEAKY_SLOPE });
                    let mask = self.constant(mask);
                    let gx = self.mul(g, mask);
                    self.accumulate(&mut grads, inputs[0], gx);
                }
                Op::Tanh => {
                    // d tanh = 1 - y², kept as graph nodes of y.
                    let (r, c) = self.value(out).shape();
                    let one = self.constant(Tensor::ones(r, c));
                    let y2 = self.square(out);
                    let d = self.sub(one, y2);
                    let gx = self.mul(g, d);
                    self.accumulate(&mut grads, inputs[0], gx);
                }
                Op::Sigmoid => {
                    // d sigmoid = y (1 - y).
                    let (r, c) = self.value(out).shape();
                    let one = self.constant(Tensor::ones(r, c));
                    let om = self.sub(one, out);
                    let d = self.mul(out, om);
                    let gx = self.mul(g, d);
                    self.accumulate(&mut grads, inputs[0], gx);
                }
                Op::Square => {
                    let two_x = self.scale(inputs[0], 2.0);
                    let gx = self.mul(g, two_x);
                    self.accumulate(&mut grads, inputs[0], gx);
                }
                Op::SqrtEps => {
                    // d sqrt(x+eps) = 1/(2y), and y >= sqrt(eps) > 0.
                    let ry = self.recip(out);
                    let half = self.scale(ry, 0.5);
                    let gx = self.mul(g, half);
                    self.accumulate(&mut grads, inputs[0], gx);
                }
                Op::LogEps => {
                    // d ln(max(x,eps)) = 1/x where x > eps, else 0.
                    let mask = self.nodes[inputs[0].0]
                        .value
                        .map(|x| if x > LOG_EPS { 1.0 } else { 0.0 });
                    let mask = self.constant(mask);
                    let rx = self.recip(inputs[0]);
                    let masked = self.mul(mask, rx);
                    let gx = self.mul(g, masked);
                    self.accumulate(&mut grads, inputs[0], gx);
                }
                Op::Recip => {
                    // d (1/max(x,eps)) = -y² where x > eps, else 0.
                    let mask = self.nodes[inputs[0].0]
                        .value
                        .map(|x| if x > LOG_EPS { 1.0 } else { 0.0 });
                    let mask = self.constant(mask);
                    let y2 = self.square(out);
                    let masked = self.mul(mask, y2);
                    let neg = self.scale(masked, -1.0);
                    let gx = self.mul(g, neg);
                    self.accumulate(&mut grads, inputs[0], gx);
                }
                Op::Sum => {
                    let (r, c) = self.value(inputs[0]).shape();
                    let gx = self.broadcast(g, r, c);
                    self.accumulate(&mut grads, inputs[0], gx);
                }
                Op::Scale(c) => {
                    let gx = self.scale(g, c);
                    self.accumulate(&mut grads, inputs[0], gx);
                }
                Op::Broadcast => {
                    let gx = self.sum(g);
                    self.accumulate(&mut grads, inputs[0], gx);
                }
                Op::AddBias => {
                    self.accumulate(&mut grads, inputs[0], g);
                    let rows = self.value(inputs[0]).rows;
                    let ones_row = self.constant(Tensor::ones(1, rows));
                    let gb = self.matmul(ones_row, g);
                    self.accumulate(&mut grads, inputs[1], gb);
                }
            }
        }
        Ok(wrt
            .iter()
            .map(|&w| {
                grads.get(w.0).copied().flatten().unwrap_or_else(|| {
                    let (r, c) = self.value(w).shape();
                    self.constant(Tensor::zeros(r, c))
                })
            })
            .collect())
    }

    fn accumulate(&mut self, grads: &mut [Option<NodeId>], target: NodeId, contrib: NodeId) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        grads[target.0] = Some(match grads[target.0] {
            None => contrib,
            Some(existing) => self.add(existing, contrib),
        });
    }

    /// Plain reverse pass: gradients of `root` for every `Leaf` node, as
    /// values. The replayed nodes are discarded afterwards, so the tape is
    /// left exactly as before the call.
    pub fn backward(&mut self, root: NodeId) -> Result<Gradients, AutodiffError> {
        let mark = self.nodes.len();
        let leaves: Vec<NodeId> = (0..mark)
            .filter(|&i| self.nodes[i].op == Op::Leaf)
            .map(NodeId)
            .collect();
        let grad_ids = self.backward_graph(root, &leaves)?;
        let mut grads: Vec<Option<Tensor>> = vec![None; mark];
        for (&leaf, &gid) in leaves.iter().zip(&grad_ids) {
            grads[leaf.0] = Some(self.value(gid).clone());
        }
        self.nodes.truncate(mark);
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
    }

    /// Central finite difference of a scalar function of flat parameters.
    fn finite_diff(f: &dyn Fn(&[f64]) -> f64, params: &[f64], h: f64) -> Vec<f64> {
        (0..params.len())
            .map(|i| {
                let mut plus = params.to_vec();
                plus[i] += h;
                let mut minus = params.to_vec();
                minus[i] -= h;
                (f(&plus) - f(&minus)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        assert_eq!(tape.scalar(y), 0.5);
    }

    #[test]
    fn identity_matmul_preserves_input() {
        let mut tape = Tape::new();
        let eye = tape.constant(Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let x = tape.leaf(Tensor::new(2, 1, vec![3.0, -1.5]));
        let y = tape.matmul(eye, x);
        assert_eq!(tape.value(y).data(), &[3.0, -1.5]);
    }

    #[test]
    fn tanh_derivative_at_zero_is_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = tape.tanh(x);
        let grads = tape.backward(y).unwrap();
        let fd = finite_diff(&|p| p[0].tanh(), &[0.0], 1e-5);
        assert!(rel_err(grads.get(x).unwrap().data()[0], fd[0]) < 1e-5);
        assert!((grads.get(x).unwrap().data()[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn sum_of_squares_gradient_is_two_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(1, 3, vec![1.0, 2.0, 3.0]));
        let sq = tape.square(x);
        let f = tape.sum(sq);
        let grads = tape.backward(f).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn root_must_be_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(1, 2, vec![1.0, 2.0]));
        let y = tape.square(x);
        assert_eq!(
            tape.backward(y).unwrap_err(),
            AutodiffError::RootNotScalar { rows: 1, cols: 2 }
        );
    }

    #[test]
    #[should_panic(expected = "elementwise op on mismatched shapes")]
    fn mismatched_add_panics() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(1, 2));
        let b = tape.leaf(Tensor::zeros(2, 1));
        tape.add(a, b);
    }

    /// Gradient check for every unary primitive at safe points.
    #[test]
    fn primitive_gradients_match_finite_differences() {
        type Builder = fn(&mut Tape, NodeId) -> NodeId;
        let cases: Vec<(&str, Builder, fn(f64) -> f64, Vec<f64>)> = vec![
            (
                "relu",
                |t, x| t.relu(x),
                |v| v.max(0.0),
                vec![0.7, -0.9, 1.3],
            ),
            (
                "leaky_relu",
                |t, x| t.leaky_relu(x),
                |v| if v > 0.0 { v } else { LEAKY_SLOPE * v },
                vec![0.7, -0.9, 1.3],
            ),
            ("tanh", |t, x| t.tanh(x), f64::tanh, vec![0.3, -1.2, 0.9]),
            ("sigmoid", |t, x| t.sigmoid(x), sigmoid, vec![0.3, -1.2, 0.9]),
            ("square", |t, x| t.square(x), |v| v * v, vec![0.3, -1.2, 0.9]),
            (
                "sqrt_eps",
                |t, x| t.sqrt_eps(x),
                |v| (v + SQRT_EPS).sqrt(),
                vec![0.5, 1.8, 0.02],
            ),
            (
                "log_eps",
                |t, x| t.log_eps(x),
                |v| v.max(LOG_EPS).ln(),
                vec![0.5, 1.8, 0.02],
            ),
            (
                "recip",
                |t, x| t.recip(x),
                |v| 1.0 / v.max(LOG_EPS),
                vec![0.5, 1.8, 0.7],
            ),
        ];
        for (name, build, eval, point) in cases {
            let f = |p: &[f64]| -> f64 { p.iter().map(|&v| eval(v)).sum() };
            let fd = finite_diff(&f, &point, 1e-6);
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(1, point.len(), point.clone()));
            let y = build(&mut tape, x);
            let s = tape.sum(y);
            let grads = tape.backward(s).unwrap();
            for (g, w) in grads.get(x).unwrap().data().iter().zip(&fd) {
                assert!(rel_err(*g, *w) < 1e-5, "{}: {} vs {}", name, g, w);
            }
        }
    }

    /// 2-layer MLP scalar output, plain-Rust mirror for finite differences.
    fn mlp_scalar(params: &[f64], x: &[f64], din: usize, dh: usize) -> f64 {
        let w1 = &params[0..din * dh];
        let b1 = &params[din * dh..din * dh + dh];
        let w2 = &params[din * dh + dh..din * dh + dh + dh];
        let b2 = params[din * dh + dh + dh];
        let mut h = vec![0.0; dh];
        for j in 0..dh {
            let mut acc = b1[j];
            for i in 0..din {
                acc += x[i] * w1[i * dh + j];
            }
            h[j] = acc.tanh();
        }
        let mut out = b2;
        for (hj, w) in h.iter().zip(w2) {
            out += hj * w;
        }
        sigmoid(out)
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..50 {
            let din = rng.gen_range(2..5);
            let dh = rng.gen_range(2..5);
            let n_params = din * dh + dh + dh + 1;
            let params: Vec<f64> = (0..n_params).map(|_| rng.gen::<f64>() - 0.5).collect();
            let x: Vec<f64> = (0..din).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();

            let f = |p: &[f64]| mlp_scalar(p, &x, din, dh);
            let fd = finite_diff(&f, &params, 1e-5);

            let mut tape = Tape::new();
            let w1 = tape.leaf(Tensor::new(din, dh, params[0..din * dh].to_vec()));
            let b1 = tape.leaf(Tensor::new(1, dh, params[din * dh..din * dh + dh].to_vec()));
            let w2 = tape.leaf(Tensor::new(
                dh,
                1,
                params[din * dh + dh..din * dh + dh + dh].to_vec(),
            ));
            let b2 = tape.leaf(Tensor::new(1, 1, vec![params[n_params - 1]]));
            let xin = tape.constant(Tensor::new(1, din, x.clone()));
            let a1 = tape.affine(xin, w1, b1);
            let h = tape.tanh(a1);
            let a2 = tape.affine(h, w2, b2);
            let out = tape.sigmoid(a2);
            let grads = tape.backward(out).unwrap();

            let mut got = Vec::new();
            got.extend_from_slice(grads.get(w1).unwrap().data());
            got.extend_from_slice(grads.get(b1).unwrap().data());
            got.extend_from_slice(grads.get(w2).unwrap().data());
            got.extend_from_slice(grads.get(b2).unwrap().data());
            let worst = got
                .iter()
                .zip(&fd)
                .map(|(g, w)| rel_err(*g, *w))
                .fold(0.0f64, f64::max);
            assert!(worst < 1e-5, "trial {}: max rel err {}", trial, worst);
        }
    }

    #[test]
    fn double_backward_of_linear_gradient_norm() {
        // f = ||∇_x (x·w)||² = ||w||², so ∂f/∂w = 2w regardless of x.
        let w_vals = vec![0.3, -1.1, 2.0];
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::new(3, 1, w_vals.clone()));
        let x = tape.leaf(Tensor::new(1, 3, vec![0.5, 0.25, -1.0]));
        let y = tape.matmul(x, w);
        let gx = tape.backward_graph(y, &[x]).unwrap()[0];
        let gx2 = tape.square(gx);
        let f = tape.sum(gx2);
        let grads = tape.backward(f).unwrap();
        let gw = grads.get(w).unwrap();
        for (g, w_val) in gw.data().iter().zip(&w_vals) {
            assert!((g - 2.0 * w_val).abs() < 1e-10, "{} vs {}", g, 2.0 * w_val);
        }
    }

    /// Penalty (||∇_x D(x)||₂ − 1)² for a small tanh MLP D; parameter
    /// gradients against finite differences over the parameters.
    #[test]
    fn gradient_penalty_double_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for trial in 0..10 {
            let din = 3;
            let dh = 3;
            let n_params = din * dh + dh + dh + 1;
            let params: Vec<f64> = (0..n_params).map(|_| rng.gen::<f64>() - 0.5).collect();
            let x: Vec<f64> = (0..din).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();

            let penalty = |p: &[f64]| -> f64 {
                // Independent route: ∇_x via a throwaway tape, then the
                // penalty in plain arithmetic.
                let mut tape = Tape::new();
                let w1 = tape.constant(Tensor::new(din, dh, p[0..din * dh].to_vec()));
                let b1 = tape.constant(Tensor::new(1, dh, p[din * dh..din * dh + dh].to_vec()));
                let w2 = tape.constant(Tensor::new(
                    dh,
                    1,
                    p[din * dh + dh..din * dh + dh + dh].to_vec(),
                ));
                let b2 = tape.constant(Tensor::new(1, 1, vec![p[n_params - 1]]));
                let xin = tape.leaf(Tensor::new(1, din, x.clone()));
                let a1 = tape.affine(xin, w1, b1);
                let h = tape.tanh(a1);
                let out = tape.affine(h, w2, b2);
                let gx = tape.backward_graph(out, &[xin]).unwrap()[0];
                let norm2: f64 = tape.value(gx).data().iter().map(|v| v * v).sum();
                let norm = (norm2 + SQRT_EPS).sqrt();
                (norm - 1.0) * (norm - 1.0)
            };
            let fd = finite_diff(&penalty, &params, 1e-5);

            let mut tape = Tape::new();
            let w1 = tape.leaf(Tensor::new(din, dh, params[0..din * dh].to_vec()));
            let b1 = tape.leaf(Tensor::new(1, dh, params[din * dh..din * dh + dh].to_vec()));
            let w2 = tape.leaf(Tensor::new(
                dh,
                1,
                params[din * dh + dh..din * dh + dh + dh].to_vec(),
            ));
            let b2 = tape.leaf(Tensor::new(1, 1, vec![params[n_params - 1]]));
            let xin = tape.leaf(Tensor::new(1, din, x.clone()));
            let a1 = tape.affine(xin, w1, b1);
            let h = tape.tanh(a1);
            let out = tape.affine(h, w2, b2);
            let gx = tape.backward_graph(out, &[xin]).unwrap()[0];
            let gx2 = tape.square(gx);
            let norm2 = tape.sum(gx2);
            let norm = tape.sqrt_eps(norm2);
            let one = tape.constant(Tensor::scalar(1.0));
            let diff = tape.sub(norm, one);
            let pen = tape.square(diff);
            let grads = tape.backward(pen).unwrap();

            let mut got = Vec::new();
            got.extend_from_slice(grads.get(w1).unwrap().data());
            got.extend_from_slice(grads.get(b1).unwrap().data());
            got.extend_from_slice(grads.get(w2).unwrap().data());
            got.extend_from_slice(grads.get(b2).unwrap().data());
            let worst = got
                .iter()
                .zip(&fd)
                .map(|(g, w)| rel_err(*g, *w))
                .fold(0.0f64, f64::max);
            assert!(worst < 1e-4, "trial {}: max rel err {}", trial, worst);
        }
    }

    /// Backward emits only supported primitives: walk the nodes created by
    /// a create-graph pass over every primitive and check their kinds.
    #[test]
    fn backward_closure_stays_in_primitive_set() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(2, 2, vec![0.5, -0.3, 1.2, 0.8]));
        let b = tape.leaf(Tensor::new(1, 2, vec![0.1, -0.2]));
        let w = tape.leaf(Tensor::new(2, 2, vec![0.3, 0.7, -0.4, 0.9]));
        // Touch every primitive at least once.
        let mm = tape.matmul(x, w);
        let ab = tape.add_bias(mm, b);
        let t1 = tape.tanh(ab);
        let s1 = tape.sigmoid(t1);
        let r1 = tape.relu(s1);
        let l1 = tape.leaky_relu(r1);
        let q1 = tape.square(l1);
        let sq = tape.sqrt_eps(q1);
        let lg = tape.log_eps(sq);
        let rc = tape.recip(lg);
        let tr = tape.transpose(rc);
        let ad = tape.add(tr, tr);
        let sb = tape.sub(ad, tr);
        let ml = tape.mul(sb, sb);
        let sm = tape.sum(ml);
        let sc = tape.scale(sm, 0.5);
        let br = tape.broadcast(sc, 2, 2);
        let root = tape.sum(br);
        let mark = tape.len();
        tape.backward_graph(root, &[x, w, b]).unwrap();
        for i in mark..tape.len() {
            let op = tape.op_kind(NodeId(i));
            assert!(
                !matches!(op, Op::Leaf),
                "backward created a Leaf at node {}",
                i
            );
        }
    }

    #[test]
    fn unreached_leaves_get_zero_gradients() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let unused = tape.leaf(Tensor::new(2, 2, vec![1.0; 4]));
        let y = tape.square(x);
        let gids = tape.backward_graph(y, &[x, unused]).unwrap();
        assert_eq!(tape.value(gids[0]).data(), &[4.0]);
        assert_eq!(tape.value(gids[1]).data(), &[0.0; 4]);
    }

    #[test]
    fn plain_backward_leaves_tape_untouched() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.square(x);
        let before = tape.len();
        let grads = tape.backward(y).unwrap();
        assert_eq!(tape.len(), before);
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }
}
