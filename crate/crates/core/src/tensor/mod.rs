//! Dense row-major tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable value (shape + data) plus an optional gradient
//! slot. Operations on tensors that require gradients record their parents
//! and a backward closure; [`Tensor::backward`] walks that graph in reverse
//! topological order and accumulates `dLoss/dLeaf` into every tracked leaf.
//!
//! Gradients accumulate across repeated `backward` calls until
//! [`Tensor::zero_grad`] clears them.

mod gradcheck;
mod io;
mod kernels;
mod ops;

pub use gradcheck::finite_difference_check;
pub use io::{read_tensor, read_tensors, write_tensor, write_tensors, DType};

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::{shape_str, Error, Result};

pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct GradFn {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    grad_fn: Option<GradFn>,
}

/// Shared handle to an immutable tensor value.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with graph recording disabled on the current thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

impl Tensor {
    /// Builds an untracked tensor, checking `product(shape) == data.len()`.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {} needs {} values, got {}",
                shape_str(shape),
                expected,
                data.len()
            )));
        }
        if shape.contains(&0) {
            return Err(Error::Dimension(format!("zero-sized dimension in shape {}", shape_str(shape))));
        }
        Ok(Self::raw(data, shape.to_vec()))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::raw(vec![0.0; shape.iter().product()], shape.to_vec())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::raw(vec![1.0; shape.iter().product()], shape.to_vec())
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::raw(vec![value; shape.iter().product()], shape.to_vec())
    }

    pub fn scalar(value: f64) -> Self {
        Self::raw(vec![value], vec![1])
    }

    pub(crate) fn raw(data: Vec<f64>, shape: Vec<usize>) -> Self {
        Tensor(Arc::new(Node { shape, data, requires_grad: false, grad: Mutex::new(None), grad_fn: None }))
    }

    /// Result of an operation. Records the graph edge only when recording is
    /// enabled and some parent is tracked.
    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, parents: Vec<Tensor>, backward: BackwardFn) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        let tracked = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !tracked {
            return Self::raw(data, shape);
        }
        Tensor(Arc::new(Node {
            shape,
            data,
            requires_grad: true,
            grad: Mutex::new(None),
            grad_fn: Some(GradFn { parents, backward }),
        }))
    }

    /// Returns a new leaf holding the same values with gradient tracking on.
    pub fn requires_grad_(self) -> Self {
        Tensor(Arc::new(Node {
            shape: self.0.shape.clone(),
            data: self.0.data.clone(),
            requires_grad: true,
            grad: Mutex::new(None),
            grad_fn: None,
        }))
    }

    /// Untracked copy of the values.
    pub fn detach(&self) -> Self {
        Self::raw(self.0.data.clone(), self.0.shape.clone())
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!("item() on tensor of shape {}", shape_str(self.shape()))));
        }
        Ok(self.0.data[0])
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    pub fn same_node(&self, other: &Tensor) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    fn key(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    /// Backpropagates from a scalar and accumulates into every tracked leaf.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {}",
                shape_str(self.shape())
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Contract("backward on a tensor that does not track gradients".into()));
        }

        let order = self.topo_order();
        let mut pending: HashMap<usize, Vec<f64>> = HashMap::new();
        pending.insert(self.key(), vec![1.0]);

        for node in order.iter().rev() {
            let Some(upstream) = pending.remove(&node.key()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => {
                    let mut slot = node.0.grad.lock().expect("grad lock poisoned");
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&upstream).for_each(|(a, g)| *a += g),
                        None => *slot = Some(upstream),
                    }
                }
                Some(gf) => {
                    let needs: Vec<bool> = gf.parents.iter().map(|p| p.requires_grad()).collect();
                    let grads = (gf.backward)(&upstream, &needs);
                    for ((parent, grad), need) in gf.parents.iter().zip(grads).zip(needs) {
                        let (Some(grad), true) = (grad, need) else {
                            continue;
                        };
                        debug_assert_eq!(grad.len(), parent.numel());
                        match pending.get_mut(&parent.key()) {
                            Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                            None => {
                                pending.insert(parent.key(), grad);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over tracked nodes reachable from `self`.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.key()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(gf) = &node.0.grad_fn {
                for p in &gf.parents {
                    if p.requires_grad() && !visited.contains(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(vec![1.0, 2.0, 3.0], &[2, 2]).is_err());
        let t = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
    }

    #[test]
    fn sum_gives_all_ones() {
        let x = Tensor::from_vec(vec![0.5, -1.0, 3.0], &[3]).unwrap().requires_grad_();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn quadratic_gradient() {
        let x = Tensor::from_vec(vec![1.0, 2.0], &[2]).unwrap().requires_grad_();
        x.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates_until_zeroed() {
        let x = Tensor::from_vec(vec![1.0, 2.0], &[2]).unwrap().requires_grad_();
        x.sum().backward().unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn non_scalar_backward_is_contract_error() {
        let x = Tensor::from_vec(vec![1.0, 2.0], &[2]).unwrap().requires_grad_();
        let y = x.scale(2.0);
        assert!(matches!(y.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn diamond_graph_sums_both_paths() {
        // y = x*x + 3x -> dy/dx = 2x + 3
        let x = Tensor::from_vec(vec![2.0], &[1]).unwrap().requires_grad_();
        let y = x.mul(&x).unwrap().add(&x.scale(3.0)).unwrap();
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0]);
    }

    #[test]
    fn no_grad_skips_recording() {
        let x = Tensor::ones(&[3]).requires_grad_();
        let y = no_grad(|| x.scale(2.0));
        assert!(!y.requires_grad());
        assert!(x.scale(2.0).requires_grad());
    }
}
