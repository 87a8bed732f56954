use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::element::Element;

static NEXT_ID: AtomicUsize = AtomicUsize::new(1);

/// Gradient rule of one recorded operation.
pub(crate) trait Backward<T: Element> {
    /// Gradients with respect to each input, in input order. Entries for
    /// inputs that do not require gradients may be `None`.
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>>;
}

pub(crate) struct BackwardCtx<'a, T: Element> {
    pub inputs: &'a [Tensor<T>],
    pub output: &'a [T],
    pub grad: &'a [T],
}

impl<T: Element> BackwardCtx<'_, T> {
    pub fn needs(&self, i: usize) -> bool {
        self.inputs[i].requires_grad()
    }
}

struct GradFn<T: Element> {
    op: Box<dyn Backward<T>>,
    inputs: Vec<Tensor<T>>,
}

struct Node<T: Element> {
    id: usize,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

/// Immutable n-dimensional array that records the operations producing it.
///
/// Cloning is cheap (reference counted). A tensor only keeps its history when
/// at least one input requires gradients, so inference builds no tape.
pub struct Tensor<T: Element>(Rc<Node<T>>);

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn new_node(
        data: Vec<T>,
        shape: Vec<usize>,
        requires_grad: bool,
        grad_fn: Option<GradFn<T>>,
    ) -> Self {
        assert_eq!(
            data.len(),
            numel(&shape),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad_fn,
        }))
    }

    /// Constant input; gradients are never tracked for it.
    pub fn constant(data: Vec<T>, shape: &[usize]) -> Self {
        Self::new_node(data, shape.to_vec(), false, None)
    }

    /// Trainable leaf whose gradient is reported by [`Tensor::backward`].
    pub fn param(data: Vec<T>, shape: &[usize]) -> Self {
        Self::new_node(data, shape.to_vec(), true, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::constant(vec![T::zero(); numel(shape)], shape)
    }

    pub fn scalar(v: T) -> Self {
        Self::constant(vec![v], &[])
    }

    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        inputs: Vec<Tensor<T>>,
        op: impl Backward<T> + 'static,
    ) -> Self {
        let requires_grad = inputs.iter().any(Tensor::requires_grad);
        let grad_fn = requires_grad.then(|| GradFn {
            op: Box::new(op),
            inputs,
        });
        Self::new_node(data, shape, requires_grad, grad_fn)
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn dims(&self) -> usize {
        self.0.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same values, no history.
    pub fn detach(&self) -> Self {
        Self::constant(self.to_vec(), self.shape())
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Reverse-mode sweep seeded with ones (a scalar loss gets `dL/dL = 1`).
    pub fn backward(&self) -> Gradients<T> {
        self.backward_with(vec![T::one(); self.numel()])
    }

    pub fn backward_with(&self, seed: Vec<T>) -> Gradients<T> {
        assert_eq!(seed.len(), self.numel(), "seed gradient size");
        let mut leaves = HashMap::new();
        if !self.requires_grad() {
            return Gradients { grads: leaves };
        }
        let order = self.topo_order();
        let mut pending: HashMap<usize, Vec<T>> = HashMap::new();
        pending.insert(self.id(), seed);
        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => {
                    leaves.insert(node.id(), grad);
                }
                Some(gf) => {
                    let ctx = BackwardCtx {
                        inputs: &gf.inputs,
                        output: &node.0.data,
                        grad: &grad,
                    };
                    let input_grads = gf.op.backward(&ctx);
                    debug_assert_eq!(input_grads.len(), gf.inputs.len());
                    for (input, g) in gf.inputs.iter().zip(input_grads) {
                        let Some(g) = g else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(g.len(), input.numel());
                        match pending.get_mut(&input.id()) {
                            Some(acc) => {
                                for (a, b) in acc.iter_mut().zip(&g) {
                                    *a += *b;
                                }
                            }
                            None => {
                                pending.insert(input.id(), g);
                            }
                        }
                    }
                }
            }
        }
        Gradients { grads: leaves }
    }

    /// Post-order over the nodes that require gradients.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(gf) = &node.0.grad_fn {
                for input in &gf.inputs {
                    if input.requires_grad() && !visited.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}

/// Leaf gradients produced by a backward sweep.
#[derive(Debug, Default)]
pub struct Gradients<T: Element> {
    grads: HashMap<usize, Vec<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&[T]> {
        self.grads.get(&t.id()).map(Vec::as_slice)
    }

    /// Takes ownership of a leaf gradient, or zeros when the leaf did not
    /// influence the output.
    pub fn take_or_zeros(&mut self, t: &Tensor<T>) -> Vec<T> {
        self.grads
            .remove(&t.id())
            .unwrap_or_else(|| vec![T::zero(); t.numel()])
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
