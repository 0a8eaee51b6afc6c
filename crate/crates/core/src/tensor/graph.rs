use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use super::lstm::LstmSaved;
use super::stft::StftSaved;
use super::{ops, Real, Result, Tensor, TensorError};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording operations. Every result is a constant.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// How the smaller operand of a binary op repeats over the larger one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// Right operand element `i / inner` pairs with left element `i`.
    Right(usize),
    /// Left operand element `i / inner` pairs with right element `i`.
    Left(usize),
}

pub(crate) enum Op<T: Real> {
    Add(Var<T>, Var<T>, Broadcast),
    Sub(Var<T>, Var<T>, Broadcast),
    Mul(Var<T>, Var<T>, Broadcast),
    Div(Var<T>, Var<T>, Broadcast),
    Scale(Var<T>, T),
    Matmul(Var<T>, Var<T>),
    Conv1d { x: Var<T>, w: Var<T>, b: Var<T>, dilation: usize },
    Sigmoid(Var<T>),
    Tanh(Var<T>),
    Abs(Var<T>),
    Log(Var<T>),
    Sqrt(Var<T>),
    Square(Var<T>),
    Sum(Var<T>),
    Mean(Var<T>),
    MaxPool { x: Var<T>, argmax: Vec<usize> },
    Narrow { x: Var<T>, dim: usize, start: usize },
    Concat { parts: Vec<Var<T>>, dim: usize },
    Reshape(Var<T>),
    ExpandBlocks { x: Var<T>, block: usize },
    StftMag(Box<StftSaved<T>>),
    Lstm(Box<LstmSaved<T>>),
}

impl<T: Real> Op<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        match self {
            Op::Add(a, b, _) | Op::Sub(a, b, _) | Op::Mul(a, b, _) | Op::Div(a, b, _) => {
                vec![a, b]
            }
            Op::Matmul(a, b) => vec![a, b],
            Op::Conv1d { x, w, b, .. } => vec![x, w, b],
            Op::Scale(x, _)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Abs(x)
            | Op::Log(x)
            | Op::Sqrt(x)
            | Op::Square(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Reshape(x) => vec![x],
            Op::MaxPool { x, .. } | Op::Narrow { x, .. } | Op::ExpandBlocks { x, .. } => vec![x],
            Op::Concat { parts, .. } => parts.iter().collect(),
            Op::StftMag(saved) => vec![&saved.x],
            Op::Lstm(saved) => saved.parents(),
        }
    }
}

pub(crate) struct Node<T: Real> {
    pub(crate) value: Tensor<T>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    op: Option<Op<T>>,
}

/// A tensor participating in an autodiff graph.
pub struct Var<T: Real = f32>(pub(crate) Rc<Node<T>>);

impl<T: Real> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Real> Var<T> {
    /// A leaf. Gradients are accumulated into it when `requires_grad` is set.
    pub fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Var(Rc::new(Node { value, requires_grad, grad: RefCell::new(None), op: None }))
    }

    pub fn constant(value: Tensor<T>) -> Self {
        Self::leaf(value, false)
    }

    pub fn parameter(value: Tensor<T>) -> Self {
        Self::leaf(value, true)
    }

    /// Result of an operation. Parents are only retained when some parent
    /// needs a gradient and recording is enabled.
    pub(crate) fn from_op(value: Tensor<T>, op: Op<T>) -> Self {
        let requires_grad = grad_enabled() && op.parents().iter().any(|p| p.requires_grad());
        Var(Rc::new(Node {
            value,
            requires_grad,
            grad: RefCell::new(None),
            op: if requires_grad { Some(op) } else { None },
        }))
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn data(&self) -> &[T] {
        self.0.value.data()
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.0.value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    /// Accumulated gradient, if any backward pass reached this tensor.
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.0.grad.borrow().as_ref().map(|g| Tensor::new(self.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate(&self, contribution: Vec<T>) {
        if !self.0.requires_grad {
            return;
        }
        debug_assert_eq!(contribution.len(), self.numel());
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => g.iter_mut().zip(contribution).for_each(|(a, b)| *a = *a + b),
            None => *slot = Some(contribution),
        }
    }

    /// Back-propagates from a scalar, accumulating into leaf gradients.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topological_order();
        self.accumulate(vec![T::one()]);
        for node in order.iter().rev() {
            let Some(op) = node.0.op.as_ref() else {
                continue;
            };
            // Interior gradients are consumed; only leaves keep theirs.
            let Some(g) = node.0.grad.borrow_mut().take() else {
                continue;
            };
            ops::backward(op, &node.0.value, &g);
        }
        Ok(())
    }

    /// Post-order over nodes that require gradients.
    fn topological_order(&self) -> Vec<Var<T>> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const Node<T>> = HashSet::new();
        let mut stack: Vec<(Var<T>, bool)> = vec![(self.clone(), false)];
        while let Some((var, expanded)) = stack.pop() {
            let key = Rc::as_ptr(&var.0);
            if expanded {
                order.push(var);
                continue;
            }
            if !visited.insert(key) {
                continue;
            }
            stack.push((var.clone(), true));
            if let Some(op) = var.0.op.as_ref() {
                for parent in op.parents() {
                    if parent.requires_grad() && !visited.contains(&Rc::as_ptr(&parent.0)) {
                        stack.push((parent.clone(), false));
                    }
                }
            }
        }
        order
    }
}
