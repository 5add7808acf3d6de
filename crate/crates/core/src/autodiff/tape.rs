use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;
use core::ops;

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

/// Recorded operation. Operand fields are node ids on the same tape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Op {
    Leaf,
    /// Constant produced by a first-order-only differentiation pass.
    FirstOrderGrad,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Transpose(usize),
    Exp(usize),
    Ln(usize),
    Recip(usize),
    Sigmoid(usize),
    Softplus(usize),
    Tanh(usize),
    Relu(usize),
    Sum(usize),
    Broadcast(usize),
    GroupSumRows { src: usize, group: usize },
    RepeatRows { src: usize, times: usize },
    SumCols(usize),
    RepeatCols { src: usize, times: usize },
    Unfold { src: usize, kernel: usize, len: usize },
    Fold { src: usize, kernel: usize, len: usize },
    Reshape(usize),
    LogSumExpCols(usize),
}

impl Op {
    fn parents(&self) -> ([usize; 2], usize) {
        use Op::*;
        match *self {
            Leaf | FirstOrderGrad => ([0, 0], 0),
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) => ([a, b], 2),
            Neg(a) | Scale(a, _) | Transpose(a) | Exp(a) | Ln(a) | Recip(a) | Sigmoid(a)
            | Softplus(a) | Tanh(a) | Relu(a) | Sum(a) | Broadcast(a) | SumCols(a)
            | Reshape(a) | LogSumExpCols(a) => ([a, 0], 1),
            GroupSumRows { src, .. }
            | RepeatRows { src, .. }
            | RepeatCols { src, .. }
            | Unfold { src, .. }
            | Fold { src, .. } => ([src, 0], 1),
        }
    }
}

struct Node {
    shape: Vec<usize>,
    value: Rc<[f64]>,
    op: Op,
    /// Depends on at least one gradient-requiring leaf.
    tracked: bool,
}

/// How the results of [`Tape::grad`] are recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Gradients are ordinary recorded nodes and can be differentiated again.
    CreateGraph,
    /// Gradients are returned as constants; cheaper to hold, not differentiable.
    FirstOrder,
}

/// The computation record: an append-only list of nodes in topological order.
///
/// A tape is confined to one thread; values can be copied out as [`Tensor`]s.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_leaf(&self, shape: Vec<usize>, data: Vec<f64>, tracked: bool, op: Op) -> Var<'_> {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "leaf shape {:?} vs {} values", shape, data.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { shape, value: data.into(), op, tracked });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Records a tensor; it is differentiable iff `tensor.requires_grad()`.
    pub fn leaf(&self, tensor: &Tensor) -> Var<'_> {
        self.push_leaf(tensor.shape().to_vec(), tensor.data().to_vec(), tensor.requires_grad(), Op::Leaf)
    }

    /// Records a differentiable leaf regardless of the tensor's flag.
    pub fn param(&self, tensor: &Tensor) -> Var<'_> {
        self.push_leaf(tensor.shape().to_vec(), tensor.data().to_vec(), true, Op::Leaf)
    }

    pub fn variable(&self, shape: Vec<usize>, data: Vec<f64>) -> Var<'_> {
        self.push_leaf(shape, data, true, Op::Leaf)
    }

    pub fn constant(&self, shape: Vec<usize>, data: Vec<f64>) -> Var<'_> {
        self.push_leaf(shape, data, false, Op::Leaf)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(vec![1], vec![value])
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].shape.clone()
    }

    fn push_op(&self, op: Op, shape: Vec<usize>) -> Var<'_> {
        let (value, tracked) = {
            let nodes = self.nodes.borrow();
            let value = eval(op, &shape, &nodes);
            let (ps, n) = op.parents();
            let tracked = ps[..n].iter().any(|&p| nodes[p].tracked);
            (value, tracked)
        };
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { shape, value: value.into(), op, tracked });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Values of every recorded node, in recording order.
    pub fn values(&self) -> Vec<Vec<f64>> {
        self.nodes.borrow().iter().map(|n| n.value.to_vec()).collect()
    }

    /// Recomputes every non-leaf node from the recorded leaves in topological
    /// order and returns the values.
    pub fn replay(&self) -> Vec<Vec<f64>> {
        let nodes = self.nodes.borrow();
        let mut scratch: Vec<Node> = Vec::with_capacity(nodes.len());
        for node in nodes.iter() {
            let value: Rc<[f64]> = match node.op {
                Op::Leaf | Op::FirstOrderGrad => node.value.clone(),
                op => eval(op, &node.shape, &scratch).into(),
            };
            scratch.push(Node { shape: node.shape.clone(), value, op: node.op, tracked: node.tracked });
        }
        scratch.into_iter().map(|n| n.value.to_vec()).collect()
    }

    /// Reverse-mode gradient of a scalar `output` with respect to each of `wrt`.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>], mode: GradMode) -> Result<Vec<Var<'t>>> {
        self.grad_impl(output, wrt, mode, false)
    }

    /// Like [`Tape::grad`], but inputs the output does not depend on get a
    /// zero gradient instead of an error.
    pub fn grad_allow_unused<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>], mode: GradMode) -> Result<Vec<Var<'t>>> {
        self.grad_impl(output, wrt, mode, true)
    }

    fn grad_impl<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>], mode: GradMode, allow_unused: bool) -> Result<Vec<Var<'t>>> {
        let numel = output.numel();
        if numel != 1 {
            return Err(Error::NonScalarOutput(numel));
        }
        let out = output.id;
        let lo = wrt.iter().map(|v| v.id).min().unwrap_or(out).min(out);
        let span = out - lo + 1;

        // reach: depends on some wrt node; live: output depends on the node.
        let mut reach = vec![false; span];
        let mut parents = Vec::with_capacity(span);
        {
            let nodes = self.nodes.borrow();
            for w in wrt {
                if w.id <= out {
                    reach[w.id - lo] = true;
                }
            }
            for i in lo..=out {
                let (ps, n) = nodes[i].op.parents();
                parents.push((ps, n));
                if !reach[i - lo] && nodes[i].tracked {
                    reach[i - lo] = ps[..n].iter().any(|&p| p >= lo && reach[p - lo]);
                }
            }
        }
        let mut live = vec![false; span];
        live[span - 1] = true;
        for i in (lo..=out).rev() {
            if live[i - lo] && reach[i - lo] {
                let (ps, n) = parents[i - lo];
                for &p in &ps[..n] {
                    if p >= lo {
                        live[p - lo] = true;
                    }
                }
            }
        }
        let used = |w: &Var<'t>| w.id <= out && live[w.id - lo] && reach[w.id - lo];
        if !allow_unused {
            if let Some(k) = wrt.iter().position(|w| !used(w)) {
                return Err(Error::DetachedInput(k));
            }
        }

        let mut grads: Vec<Option<Var<'t>>> = vec![None; span];
        grads[span - 1] = Some(self.constant(output.shape(), vec![1.0]));
        for i in (lo..=out).rev() {
            if !reach[i - lo] {
                continue;
            }
            let Some(g) = grads[i - lo] else { continue };
            let op = self.nodes.borrow()[i].op;
            let this = Var { tape: self, id: i };
            for (p, pg) in backward(op, this, g).into_iter().flatten() {
                if p < lo || !reach[p - lo] {
                    continue;
                }
                let slot = &mut grads[p - lo];
                *slot = Some(match *slot {
                    Some(acc) => acc + pg,
                    None => pg,
                });
            }
        }

        let result = wrt.iter().map(|w| match used(w) {
            true => grads[w.id - lo].expect("live input has a gradient"),
            false => self.constant(w.shape(), vec![0.0; w.numel()]),
        });
        Ok(match mode {
            GradMode::CreateGraph => result.collect(),
            GradMode::FirstOrder => result
                .map(|g| self.push_leaf(g.shape(), g.value().to_vec(), false, Op::FirstOrderGrad))
                .collect(),
        })
    }

    /// Gradient of a loss built on top of an input-gradient (an explanation)
    /// with respect to parameters. Backpropagating through the recorded
    /// input-gradient yields the mixed second-order term implicitly, as a
    /// Hessian-vector product, without forming any Hessian block. Parameters
    /// the loss does not reach (e.g. a final bias) get zero gradients.
    pub fn mixed_partial_grad<'t>(&'t self, loss: Var<'t>, params: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        if let Some(id) = self.first_order_ancestor(loss.id) {
            return Err(Error::NonTwiceDifferentiable(id));
        }
        self.grad_allow_unused(loss, params, GradMode::FirstOrder)
    }

    fn first_order_ancestor(&self, root: usize) -> Option<usize> {
        let nodes = self.nodes.borrow();
        let mut seen = vec![false; root + 1];
        seen[root] = true;
        for i in (0..=root).rev() {
            if !seen[i] {
                continue;
            }
            if nodes[i].op == Op::FirstOrderGrad {
                return Some(i);
            }
            let (ps, n) = nodes[i].op.parents();
            for &p in &ps[..n] {
                seen[p] = true;
            }
        }
        None
    }
}

/// `∂output/∂wrt`, recorded so it can be differentiated again.
pub fn grad<'t>(output: Var<'t>, wrt: Var<'t>) -> Result<Var<'t>> {
    Ok(output.tape.grad(output, &[wrt], GradMode::CreateGraph)?[0])
}

fn eval(op: Op, shape: &[usize], nodes: &[Node]) -> Vec<f64> {
    use Op::*;
    let v = |id: usize| -> &[f64] { &nodes[id].value };
    let unary = |a: usize, f: &dyn Fn(f64) -> f64| v(a).iter().map(|&x| f(x)).collect();
    let binary = |a: usize, b: usize, f: &dyn Fn(f64, f64) -> f64| {
        v(a).iter().zip(v(b)).map(|(&x, &y)| f(x, y)).collect()
    };
    match op {
        Leaf | FirstOrderGrad => unreachable!("leaves are not evaluated"),
        Add(a, b) => binary(a, b, &|x, y| x + y),
        Sub(a, b) => binary(a, b, &|x, y| x - y),
        Mul(a, b) => binary(a, b, &|x, y| x * y),
        Neg(a) => unary(a, &|x| -x),
        Scale(a, c) => unary(a, &|x| x * c),
        MatMul(a, b) => {
            let (sa, sb) = (&nodes[a].shape, &nodes[b].shape);
            kernels::matmul(v(a), v(b), sa[0], sa[1], sb[1])
        }
        Transpose(a) => {
            let s = &nodes[a].shape;
            kernels::transpose(v(a), s[0], s[1])
        }
        Exp(a) => unary(a, &libm::exp),
        Ln(a) => unary(a, &libm::log),
        Recip(a) => unary(a, &|x| 1.0 / x),
        Sigmoid(a) => unary(a, &kernels::sigmoid),
        Softplus(a) => unary(a, &kernels::softplus),
        Tanh(a) => unary(a, &libm::tanh),
        Relu(a) => unary(a, &|x| if x > 0.0 { x } else { 0.0 }),
        Sum(a) => vec![v(a).iter().sum()],
        Broadcast(a) => vec![v(a)[0]; shape.iter().product()],
        GroupSumRows { src, group } => kernels::group_sum_rows(v(src), nodes[src].shape[1], group),
        RepeatRows { src, times } => kernels::repeat_rows(v(src), nodes[src].shape[1], times),
        SumCols(a) => kernels::sum_cols(v(a), nodes[a].shape[1]),
        RepeatCols { src, times } => kernels::repeat_cols(v(src), times),
        Unfold { src, kernel, len } => kernels::unfold(v(src), nodes[src].shape[1], kernel, len),
        Fold { src, kernel, len } => kernels::fold(v(src), shape[1], kernel, len),
        Reshape(a) => v(a).to_vec(),
        LogSumExpCols(a) => kernels::logsumexp_cols(v(a), nodes[a].shape[1]),
    }
}

type ParentGrad<'t> = Option<(usize, Var<'t>)>;

/// Vector-Jacobian products for `op`, expressed with recorded ops so the
/// result is itself differentiable.
fn backward<'t>(op: Op, out: Var<'t>, g: Var<'t>) -> [ParentGrad<'t>; 2] {
    use Op::*;
    let tape = out.tape;
    let var = |id: usize| Var { tape, id };
    match op {
        Leaf | FirstOrderGrad => [None, None],
        Add(a, b) => [Some((a, g)), Some((b, g))],
        Sub(a, b) => [Some((a, g)), Some((b, -g))],
        Mul(a, b) => [Some((a, g * var(b))), Some((b, g * var(a)))],
        Neg(a) => [Some((a, -g)), None],
        Scale(a, c) => [Some((a, g.scale(c))), None],
        MatMul(a, b) => [
            Some((a, g.matmul(var(b).t()))),
            Some((b, var(a).t().matmul(g))),
        ],
        Transpose(a) => [Some((a, g.t())), None],
        Exp(a) => [Some((a, g * out)), None],
        Ln(a) => [Some((a, g * var(a).recip())), None],
        Recip(a) => [Some((a, -(g * out * out))), None],
        Sigmoid(a) => [Some((a, g * (out - out * out))), None],
        Softplus(a) => [Some((a, g * var(a).sigmoid())), None],
        Tanh(a) => [Some((a, g - g * out * out)), None],
        Relu(a) => {
            let x = var(a);
            let step = x.value().iter().map(|&t| if t > 0.0 { 1.0 } else { 0.0 }).collect();
            [Some((a, g * tape.constant(x.shape(), step))), None]
        }
        Sum(a) => [Some((a, g.broadcast_to(var(a).shape()))), None],
        Broadcast(a) => [Some((a, g.sum().reshape(var(a).shape()))), None],
        GroupSumRows { src, group } => [Some((src, g.repeat_rows(group))), None],
        RepeatRows { src, times } => [Some((src, g.group_sum_rows(times))), None],
        SumCols(a) => {
            let cols = var(a).shape()[1];
            [Some((a, g.repeat_cols(cols))), None]
        }
        RepeatCols { src, .. } => [Some((src, g.sum_cols())), None],
        Unfold { src, kernel, len } => [Some((src, g.fold(kernel, len))), None],
        Fold { src, kernel, len } => [Some((src, g.unfold(kernel, len))), None],
        Reshape(a) => [Some((a, g.reshape(var(a).shape()))), None],
        LogSumExpCols(a) => {
            let x = var(a);
            let cols = x.shape()[1];
            let softmax = (x - out.repeat_cols(cols)).exp();
            [Some((a, g.repeat_cols(cols) * softmax)), None]
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn value(&self) -> Rc<[f64]> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// First element; convenient for scalar losses.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value[0]
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.nodes.borrow()[self.id].tracked
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.shape(), self.value().to_vec())
    }

    fn same_shape(&self, other: &Var<'t>, what: &str) -> Vec<usize> {
        let (a, b) = (self.shape(), other.shape());
        assert_eq!(a, b, "{what}: shape {:?} vs {:?}", a, b);
        a
    }

    fn unary(self, op: Op) -> Var<'t> {
        self.tape.push_op(op, self.shape())
    }

    fn rows_cols(&self, what: &str) -> (usize, usize) {
        let s = self.shape();
        assert_eq!(s.len(), 2, "{what} expects a 2-d operand, got {:?}", s);
        (s[0], s[1])
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c))
    }

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        let (m, k) = self.rows_cols("matmul");
        let (k2, n) = rhs.rows_cols("matmul");
        assert_eq!(k, k2, "matmul inner dimensions {k} vs {k2}");
        self.tape.push_op(Op::MatMul(self.id, rhs.id), vec![m, n])
    }

    pub fn t(self) -> Var<'t> {
        let (m, n) = self.rows_cols("transpose");
        self.tape.push_op(Op::Transpose(self.id), vec![n, m])
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Ln(self.id))
    }

    pub fn recip(self) -> Var<'t> {
        self.unary(Op::Recip(self.id))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id))
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus(self.id))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id))
    }

    pub fn square(self) -> Var<'t> {
        self * self
    }

    pub fn sum(self) -> Var<'t> {
        self.tape.push_op(Op::Sum(self.id), vec![1])
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Broadcasts a one-element tensor to `shape`.
    pub fn broadcast_to(self, shape: Vec<usize>) -> Var<'t> {
        assert_eq!(self.numel(), 1, "broadcast_to expects a single element");
        self.tape.push_op(Op::Broadcast(self.id), shape)
    }

    /// `[n*group, c] -> [n, c]`.
    pub fn group_sum_rows(self, group: usize) -> Var<'t> {
        let (rows, cols) = self.rows_cols("group_sum_rows");
        assert!(group > 0 && rows % group == 0, "{rows} rows not divisible into groups of {group}");
        self.tape.push_op(Op::GroupSumRows { src: self.id, group }, vec![rows / group, cols])
    }

    /// `[n, c] -> [n*times, c]`.
    pub fn repeat_rows(self, times: usize) -> Var<'t> {
        let (rows, cols) = self.rows_cols("repeat_rows");
        self.tape.push_op(Op::RepeatRows { src: self.id, times }, vec![rows * times, cols])
    }

    /// `[n, m] -> [n, 1]`.
    pub fn sum_cols(self) -> Var<'t> {
        let (rows, _) = self.rows_cols("sum_cols");
        self.tape.push_op(Op::SumCols(self.id), vec![rows, 1])
    }

    /// `[n, 1] -> [n, times]`.
    pub fn repeat_cols(self, times: usize) -> Var<'t> {
        let (rows, cols) = self.rows_cols("repeat_cols");
        assert_eq!(cols, 1, "repeat_cols expects a single column");
        self.tape.push_op(Op::RepeatCols { src: self.id, times }, vec![rows, times])
    }

    /// Same-padded sliding windows over blocks of `len` rows:
    /// `[b*len, c] -> [b*len, kernel*c]`.
    pub fn unfold(self, kernel: usize, len: usize) -> Var<'t> {
        let (rows, cols) = self.rows_cols("unfold");
        assert!(kernel > 0 && len > 0 && rows % len == 0, "unfold: {rows} rows, block {len}, kernel {kernel}");
        self.tape.push_op(Op::Unfold { src: self.id, kernel, len }, vec![rows, kernel * cols])
    }

    /// Adjoint of [`Var::unfold`]: `[b*len, kernel*c] -> [b*len, c]`.
    pub fn fold(self, kernel: usize, len: usize) -> Var<'t> {
        let (rows, cols) = self.rows_cols("fold");
        assert!(kernel > 0 && cols % kernel == 0 && rows % len == 0, "fold: shape [{rows}, {cols}], kernel {kernel}");
        self.tape.push_op(Op::Fold { src: self.id, kernel, len }, vec![rows, cols / kernel])
    }

    pub fn reshape(self, shape: Vec<usize>) -> Var<'t> {
        assert_eq!(shape.iter().product::<usize>(), self.numel(), "reshape to {:?}", shape);
        self.tape.push_op(Op::Reshape(self.id), shape)
    }

    /// Row-wise log-sum-exp: `[n, m] -> [n, 1]`.
    pub fn logsumexp_cols(self) -> Var<'t> {
        let (rows, _) = self.rows_cols("logsumexp_cols");
        self.tape.push_op(Op::LogSumExpCols(self.id), vec![rows, 1])
    }

    /// Copy of the value with no gradient connection.
    pub fn detach(self) -> Var<'t> {
        self.tape.constant(self.shape(), self.value().to_vec())
    }
}

impl<'t> ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        let shape = self.same_shape(&rhs, "add");
        self.tape.push_op(Op::Add(self.id, rhs.id), shape)
    }
}

impl<'t> ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        let shape = self.same_shape(&rhs, "sub");
        self.tape.push_op(Op::Sub(self.id, rhs.id), shape)
    }
}

impl<'t> ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        let shape = self.same_shape(&rhs, "mul");
        self.tape.push_op(Op::Mul(self.id, rhs.id), shape)
    }
}

impl<'t> ops::Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.scale(rhs)
    }
}

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg(self.id))
    }
}

/// Shape check helper for callers that prefer a `Result` over a panic.
pub fn expect_shape(var: &Var<'_>, shape: &[usize], what: &str) -> Result<()> {
    let s = var.shape();
    if s == shape {
        Ok(())
    } else {
        Err(Error::Shape(format!("{what}: expected {:?}, got {:?}", shape, s)))
    }
}
