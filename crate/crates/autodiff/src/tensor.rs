//! Dynamic-tape reverse-mode autodiff over dense f64 tensors.
//!
//! A `Tensor` is a cheaply clonable handle into an implicit graph: every op
//! eagerly computes its value and records a backward closure. Graphs are
//! rebuilt per batch; parameters are leaves whose gradients accumulate across
//! `backward` calls until `zero_grad`.

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Context handed to a backward closure.
pub struct BackCtx<'a> {
    pub grad_out: &'a [f64],
    pub out_value: &'a [f64],
    pub parents: &'a [Tensor],
}

impl BackCtx<'_> {
    pub fn parent_value(&self, i: usize) -> std::cell::Ref<'_, Vec<f64>> {
        self.parents[i].inner.value.borrow()
    }
}

pub type BackFn = Box<dyn Fn(&BackCtx) -> Vec<Option<Vec<f64>>>>;

pub(crate) struct Inner {
    pub id: u64,
    pub shape: Vec<usize>,
    pub value: RefCell<Vec<f64>>,
    pub grad: RefCell<Option<Vec<f64>>>,
    pub requires_grad: bool,
    pub is_leaf: bool,
    backward_ran: Cell<bool>,
    pub parents: Vec<Tensor>,
    pub backward: Option<BackFn>,
}

#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl Tensor {
    /// Trainable leaf.
    pub fn param(shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        assert_eq!(numel(&shape), values.len(), "param shape/values mismatch");
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                value: RefCell::new(values),
                grad: RefCell::new(None),
                requires_grad: true,
                is_leaf: true,
                backward_ran: Cell::new(false),
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    /// Non-trainable leaf.
    pub fn constant(shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        assert_eq!(numel(&shape), values.len(), "constant shape/values mismatch");
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                value: RefCell::new(values),
                grad: RefCell::new(None),
                requires_grad: false,
                is_leaf: true,
                backward_ran: Cell::new(false),
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::constant(vec![1], vec![v])
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackFn,
    ) -> Tensor {
        debug_assert_eq!(numel(&shape), values.len(), "op output shape mismatch");
        let requires_grad = parents.iter().any(|p| p.inner.requires_grad);
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                value: RefCell::new(values),
                grad: RefCell::new(None),
                requires_grad,
                is_leaf: false,
                backward_ran: Cell::new(false),
                parents,
                backward: if requires_grad { Some(backward) } else { None },
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn value(&self) -> Vec<f64> {
        self.inner.value.borrow().clone()
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let v = self.inner.value.borrow();
        assert_eq!(v.len(), 1, "item() on non-scalar");
        v[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    /// Clears the accumulated gradient (leaves only need this; graph nodes
    /// are dropped with their graph).
    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
        self.inner.backward_ran.set(false);
    }

    /// Overwrites the value in place (optimizer update on leaves).
    pub fn set_value(&self, values: Vec<f64>) {
        assert_eq!(values.len(), self.numel(), "set_value shape mismatch");
        *self.inner.value.borrow_mut() = values;
    }

    /// A constant leaf sharing this tensor's current value.
    pub fn detach(&self) -> Tensor {
        Tensor::constant(self.inner.shape.clone(), self.value())
    }

    /// Reverse-mode sweep from a scalar loss. Accumulates into every
    /// reachable `requires_grad` tensor. Errors on a second sweep through
    /// the same node without zeroing.
    pub fn backward(&self) -> Result<(), crate::Error> {
        if self.numel() != 1 {
            return Err(crate::Error::NonScalarLoss(self.inner.shape.clone()));
        }
        if !self.inner.requires_grad {
            return Err(crate::Error::NoGradPath);
        }
        if self.inner.backward_ran.get() {
            return Err(crate::Error::ReentrantBackward);
        }
        self.inner.backward_ran.set(true);

        // Post-order DFS over the requires_grad subgraph.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.inner.id);
        while let Some((node, child_idx)) = stack.pop() {
            let parents = &node.inner.parents;
            let mut pushed = false;
            for i in child_idx..parents.len() {
                let p = &parents[i];
                if p.inner.requires_grad && !visited.contains(&p.inner.id) {
                    visited.insert(p.inner.id);
                    stack.push((node.clone(), i + 1));
                    stack.push((p.clone(), 0));
                    pushed = true;
                    break;
                }
            }
            if !pushed {
                order.push(node);
            }
        }

        *self.inner.grad.borrow_mut() = Some(vec![1.0]);
        for node in order.iter().rev() {
            if node.inner.is_leaf {
                continue;
            }
            let grad_out = match node.inner.grad.borrow().clone() {
                Some(g) => g,
                None => continue,
            };
            let out_value = node.inner.value.borrow();
            let ctx = BackCtx {
                grad_out: &grad_out,
                out_value: &out_value,
                parents: &node.inner.parents,
            };
            let grads = (node.inner.backward.as_ref().expect("non-leaf has backward"))(&ctx);
            drop(out_value);
            debug_assert_eq!(grads.len(), node.inner.parents.len());
            for (p, g) in node.inner.parents.iter().zip(grads) {
                if !p.inner.requires_grad {
                    continue;
                }
                let g = g.expect("gradient for requires_grad parent");
                debug_assert_eq!(g.len(), p.numel(), "parent grad shape");
                let mut slot = p.inner.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    None => *slot = Some(g),
                }
            }
            // Intermediate grads are not needed after their node is
            // processed; keep leaves only.
            *node.inner.grad.borrow_mut() = None;
        }
        Ok(())
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}
