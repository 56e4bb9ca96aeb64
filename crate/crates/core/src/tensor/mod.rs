//! Dense f32 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a shaped, reference-counted buffer. Operations live in
//! [`ops`] and record backward rules onto a [`GradTape`]; calling
//! [`GradTape::backward`] on a scalar loss walks the tape in reverse and
//! populates `grad` on every leaf tensor created with `requires_grad`.
//!
//! Tensors are intentionally not `Send`: a training run owns its parameters
//! on one thread. Independent runs on separate threads are fine.

pub mod adam;
pub mod kernels;
pub mod ops;

use crate::error::{Error, Result};
use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_TENSOR_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) fn fresh_id() -> u64 {
    NEXT_TENSOR_ID.fetch_add(1, Ordering::Relaxed)
}

struct TensorInner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    requires_grad: bool,
    is_leaf: bool,
    grad: RefCell<Option<Vec<f32>>>,
}

/// Shaped f32 buffer, row-major. Cloning is cheap (shared storage).
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<TensorInner>,
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool, is_leaf: bool) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            inner: Rc::new(TensorInner {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                requires_grad,
                is_leaf,
                grad: RefCell::new(None),
            }),
        }
    }

    /// Constant tensor (no gradient).
    pub fn new(shape: &[usize], data: Vec<f32>) -> Tensor {
        Tensor::build(shape.to_vec(), data, false, true)
    }

    /// Trainable leaf tensor; `backward` will populate its `grad`.
    pub fn param(shape: &[usize], data: Vec<f32>) -> Tensor {
        Tensor::build(shape.to_vec(), data, true, true)
    }

    /// Output of a taped operation.
    pub(crate) fn op_output(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Tensor {
        Tensor::build(shape, data, requires_grad, false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::new(shape, vec![0.0; shape.iter().product()])
    }

    pub fn scalar(v: f32) -> Tensor {
        Tensor::new(&[1], vec![v])
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.is_leaf
    }

    pub fn data(&self) -> Ref<'_, Vec<f32>> {
        self.inner.data.borrow()
    }

    pub fn data_mut(&self) -> RefMut<'_, Vec<f32>> {
        self.inner.data.borrow_mut()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.inner.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f32]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, &b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Deep copy with fresh identity; keeps `requires_grad`.
    pub fn deep_clone(&self) -> Tensor {
        Tensor::build(
            self.inner.shape.clone(),
            self.inner.data.borrow().clone(),
            self.inner.requires_grad,
            true,
        )
    }

    /// True when both handles point at the same storage.
    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }
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

/// Backward rule: maps the output gradient to per-input gradients
/// (`None` for inputs that do not need one).
type BackwardRule = Box<dyn Fn(&[f32], &[Tensor], &Tensor) -> Vec<Option<Vec<f32>>>>;

struct TapeEntry {
    inputs: Vec<Tensor>,
    output: Tensor,
    rule: BackwardRule,
}

/// Records operations for reverse-mode differentiation.
///
/// A tape in `no_grad` mode records nothing; ops run forward-only and their
/// outputs do not require gradients. This is how generation and frozen
/// teacher forwards are kept out of the gradient path.
pub struct GradTape {
    entries: RefCell<Vec<TapeEntry>>,
    enabled: bool,
    consumed: Cell<bool>,
}

impl GradTape {
    pub fn new() -> GradTape {
        GradTape { entries: RefCell::new(Vec::new()), enabled: true, consumed: Cell::new(false) }
    }

    /// Tape that records nothing; outputs of ops run through it are constants.
    pub fn no_grad() -> GradTape {
        GradTape { entries: RefCell::new(Vec::new()), enabled: false, consumed: Cell::new(false) }
    }

    pub fn is_recording(&self) -> bool {
        self.enabled
    }

    pub fn len(&self) -> usize {
        self.entries.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.borrow().is_empty()
    }

    pub(crate) fn record(&self, inputs: Vec<Tensor>, output: Tensor, rule: BackwardRule) {
        debug_assert!(self.enabled && output.requires_grad());
        self.consumed.set(false);
        self.entries.borrow_mut().push(TapeEntry { inputs, output, rule });
    }

    /// Whether op outputs should carry gradients given these inputs.
    pub(crate) fn wants_grad(&self, inputs: &[&Tensor]) -> bool {
        self.enabled && inputs.iter().any(|t| t.requires_grad())
    }

    pub fn clear(&self) {
        self.entries.borrow_mut().clear();
        self.consumed.set(false);
    }

    /// Run reverse-mode accumulation from a scalar loss. Populates `grad`
    /// on every `requires_grad` leaf that contributed to the loss.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward expects a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if !self.enabled {
            return Err(Error::Tape("backward on a no-grad tape".into()));
        }
        if self.consumed.get() {
            return Err(Error::Tape(
                "backward called twice without recording a new forward pass".into(),
            ));
        }
        let entries = self.entries.borrow();
        if entries.is_empty() {
            return Err(Error::Tape("backward on an empty tape".into()));
        }

        // Gradients flowing to op outputs, keyed by tensor id.
        let mut flow: HashMap<u64, Vec<f32>> = HashMap::new();
        flow.insert(loss.id(), vec![1.0]);

        for entry in entries.iter().rev() {
            let gout = match flow.get(&entry.output.id()) {
                Some(g) => g.clone(),
                None => continue,
            };
            let grads = (entry.rule)(&gout, &entry.inputs, &entry.output);
            debug_assert_eq!(grads.len(), entry.inputs.len());
            for (input, grad) in entry.inputs.iter().zip(grads) {
                let Some(g) = grad else { continue };
                debug_assert_eq!(g.len(), input.numel());
                if input.is_leaf() {
                    if input.requires_grad() {
                        input.accumulate_grad(&g);
                    }
                } else if input.requires_grad() {
                    match flow.get_mut(&input.id()) {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&g) {
                                *a += b;
                            }
                        }
                        None => {
                            flow.insert(input.id(), g);
                        }
                    }
                }
            }
        }
        self.consumed.set(true);
        Ok(())
    }
}

impl Default for GradTape {
    fn default() -> Self {
        GradTape::new()
    }
}
