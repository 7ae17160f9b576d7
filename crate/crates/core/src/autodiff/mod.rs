//! Reverse-accumulation gradients over a recorded operation tape.
//!
//! A [`Tape`] records every primitive applied to its [`Var`]s together with
//! an adjoint closure. [`Tape::backward`] replays the adjoints in reverse
//! application order, visiting each recorded operation at most once.

mod ops;

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Result, WeaverError};
use crate::scalar::Scalar;
use crate::tensor::DenseTensor;

type Adjoint<T> = Box<dyn Fn(&DenseTensor<T>) -> Result<Vec<DenseTensor<T>>>>;

struct Node<T: Scalar> {
    value: Rc<DenseTensor<T>>,
    parents: Vec<usize>,
    op: &'static str,
    adjoint: Option<Adjoint<T>>,
}

pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an input tensor. Inputs accumulate gradients but have no
    /// parents.
    pub fn leaf(&self, value: DenseTensor<T>) -> Var<'_, T> {
        self.push(value, Vec::new(), "leaf", None)
    }

    pub fn constant(&self, value: DenseTensor<T>) -> Var<'_, T> {
        self.push(value, Vec::new(), "constant", None)
    }

    fn push(
        &self,
        value: DenseTensor<T>,
        parents: Vec<usize>,
        op: &'static str,
        adjoint: Option<Adjoint<T>>,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            parents,
            op,
            adjoint,
        });
        Var { tape: self, id }
    }

    fn value(&self, id: usize) -> Rc<DenseTensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Names of the recorded operations in application order.
    pub fn ops(&self) -> Vec<&'static str> {
        self.nodes.borrow().iter().map(|n| n.op).collect()
    }

    /// d(loss)/d(node) for every node that the loss depends on.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        assert!(
            std::ptr::eq(loss.tape, self),
            "loss recorded on another tape"
        );
        let nodes = self.nodes.borrow();
        let loss_value = &nodes[loss.id].value;
        if loss_value.numel() != 1 {
            return Err(WeaverError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<DenseTensor<T>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(DenseTensor::ones(loss_value.shape()));
        let mut replay = Vec::new();
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(adjoint) = node.adjoint.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].as_ref() else {
                continue;
            };
            replay.push(id);
            let parent_grads = adjoint(g)?;
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", node.op);
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                debug_assert_eq!(
                    pg.shape(),
                    nodes[p].value.shape(),
                    "{} -> {}",
                    node.op,
                    nodes[p].op
                );
                grads[p] = Some(match grads[p].take() {
                    Some(acc) => acc.add(&pg)?,
                    None => pg,
                });
            }
        }
        Ok(Gradients { grads, replay })
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<DenseTensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub(crate) fn record(
        &self,
        value: DenseTensor<T>,
        parents: &[Var<'t, T>],
        op: &'static str,
        adjoint: Adjoint<T>,
    ) -> Var<'t, T> {
        for p in parents {
            assert!(
                std::ptr::eq(p.tape, self.tape),
                "{op}: operands on different tapes"
            );
        }
        self.tape.push(
            value,
            parents.iter().map(|p| p.id).collect(),
            op,
            Some(adjoint),
        )
    }
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

pub struct Gradients<T: Scalar> {
    grads: Vec<Option<DenseTensor<T>>>,
    replay: Vec<usize>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&DenseTensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Node ids whose adjoints ran, in the order they ran.
    pub fn replay_order(&self) -> &[usize] {
        &self.replay
    }

    /// Gradients for every bound parameter. Parameters the loss does not
    /// depend on receive zeros and are listed in `detached`.
    pub fn params(&self, bound: &BoundParams<'_, T>) -> ParamGrads<T> {
        let mut grads = BTreeMap::new();
        let mut detached = Vec::new();
        for (name, var) in &bound.vars {
            match self.wrt(*var) {
                Some(g) => {
                    grads.insert(name.clone(), g.clone());
                }
                None => {
                    detached.push(name.clone());
                    grads.insert(name.clone(), DenseTensor::zeros(&var.shape()));
                }
            }
        }
        ParamGrads { grads, detached }
    }
}

#[derive(Debug, Clone)]
pub struct ParamGrads<T: Scalar> {
    pub grads: BTreeMap<String, DenseTensor<T>>,
    pub detached: Vec<String>,
}

/// Named collection of trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Parameters<T: Scalar> {
    tensors: BTreeMap<String, DenseTensor<T>>,
}

impl<T: Scalar> Parameters<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: DenseTensor<T>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&DenseTensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| WeaverError::InvalidArgument(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DenseTensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &DenseTensor<T>)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(DenseTensor::numel).sum()
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> BoundParams<'t, T> {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }
}

pub struct BoundParams<'t, T: Scalar> {
    vars: BTreeMap<String, Var<'t, T>>,
}

impl<'t, T: Scalar> BoundParams<'t, T> {
    pub fn get(&self, name: &str) -> Result<Var<'t, T>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| WeaverError::InvalidArgument(format!("unknown parameter `{name}`")))
    }
}

/// Per-parameter comparison of tape gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// (name, ‖ad − fd‖ / max(‖ad‖, ‖fd‖, 1e-8))
    pub relative_errors: Vec<(String, f64)>,
}

impl GradCheck {
    pub fn worst(&self) -> Option<(&str, f64)> {
        self.relative_errors
            .iter()
            .map(|(n, e)| (n.as_str(), *e))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.relative_errors.iter().all(|(_, e)| *e <= tol)
    }
}

/// Compares reverse-mode gradients of `loss` with central differences of
/// step `h`, parameter tensor by parameter tensor.
pub fn grad_check<F>(params: &Parameters<f64>, h: f64, loss: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape<f64>, &BoundParams<'t, f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let out = loss(&tape, &bound)?;
    let ad = tape.backward(out)?.params(&bound);

    let eval = |p: &Parameters<f64>| -> Result<f64> {
        let tape = Tape::new();
        let bound = p.bind(&tape);
        Ok(loss(&tape, &bound)?.value().item())
    };

    let mut relative_errors = Vec::new();
    let mut probe = params.clone();
    for (name, value) in params.iter() {
        let mut fd = vec![0.0; value.numel()];
        for (i, slot) in fd.iter_mut().enumerate() {
            let base = value.data()[i];
            probe.get_mut(name).expect("own key").data_mut()[i] = base + h;
            let up = eval(&probe)?;
            probe.get_mut(name).expect("own key").data_mut()[i] = base - h;
            let down = eval(&probe)?;
            probe.get_mut(name).expect("own key").data_mut()[i] = base;
            *slot = (up - down) / (2.0 * h);
        }
        let a = ad.grads[name].data();
        let diff: f64 = a
            .iter()
            .zip(&fd)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nf: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
        relative_errors.push((name.clone(), diff / na.max(nf).max(1e-8)));
    }
    Ok(GradCheck { relative_errors })
}
