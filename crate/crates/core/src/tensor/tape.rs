use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use super::{Float, ParamStore, Tensor};
use crate::error::{Error, Result};

const UNTRACKED: usize = usize::MAX;

/// Local gradient rule: receives the output gradient and, per input, whether
/// a gradient is wanted; returns one optional gradient buffer per input.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Record<T> {
    op: &'static str,
    inputs: Vec<usize>,
    output: usize,
    backward: BackwardFn<T>,
}

struct TapeState<T> {
    records: Vec<Record<T>>,
    shapes: Vec<Vec<usize>>,
    leaves: Vec<usize>,
    names: HashMap<usize, String>,
    param_cache: HashMap<String, Var<T>>,
    first_nonfinite: Option<&'static str>,
}

/// Deliberately scales the gradient rule of one op. Negative-control fixture
/// for the gradient checker.
#[derive(Debug, Clone, PartialEq)]
pub struct GradFault {
    pub op: String,
    pub factor: f64,
}

/// A value produced on a tape. Tracked values carry a node id and take part
/// in backpropagation; constants do not.
#[derive(Clone)]
pub struct Var<T> {
    id: usize,
    value: Arc<Tensor<T>>,
}

impl<T: Float> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[T] {
        self.value.data()
    }

    pub fn requires_grad(&self) -> bool {
        self.id != UNTRACKED
    }

    pub(crate) fn arc(&self) -> Arc<Tensor<T>> {
        Arc::clone(&self.value)
    }

    pub fn into_tensor(self) -> Tensor<T> {
        Arc::try_unwrap(self.value).unwrap_or_else(|a| (*a).clone())
    }
}

impl<T: Float> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("tracked", &self.requires_grad())
            .field("value", &self.value)
            .finish()
    }
}

/// Ordered record of differentiable operations.
///
/// A tape built with [`Tape::inference`] records nothing: values are freed as
/// soon as their `Var`s drop and `backward` yields no gradients.
pub struct Tape<T> {
    state: RefCell<TapeState<T>>,
    recording: bool,
    fault: Option<GradFault>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self::build(true, None)
    }

    pub fn inference() -> Self {
        Self::build(false, None)
    }

    pub fn with_fault(fault: GradFault) -> Self {
        Self::build(true, Some(fault))
    }

    fn build(recording: bool, fault: Option<GradFault>) -> Self {
        Tape {
            state: RefCell::new(TapeState {
                records: Vec::new(),
                shapes: Vec::new(),
                leaves: Vec::new(),
                names: HashMap::new(),
                param_cache: HashMap::new(),
                first_nonfinite: None,
            }),
            recording,
            fault,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.state.borrow().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Name of the first op whose output contained NaN or infinity.
    pub fn first_nonfinite(&self) -> Option<&'static str> {
        self.state.borrow().first_nonfinite
    }

    /// A value that never receives gradients.
    pub fn constant(&self, t: Tensor<T>) -> Var<T> {
        Var { id: UNTRACKED, value: Arc::new(t) }
    }

    /// A differentiable leaf.
    pub fn leaf(&self, t: Tensor<T>) -> Var<T> {
        self.leaf_arc(Arc::new(t), None)
    }

    fn leaf_arc(&self, value: Arc<Tensor<T>>, name: Option<String>) -> Var<T> {
        if !self.recording {
            return Var { id: UNTRACKED, value };
        }
        let mut st = self.state.borrow_mut();
        let id = st.shapes.len();
        st.shapes.push(value.shape().to_vec());
        st.leaves.push(id);
        if let Some(n) = name {
            st.names.insert(id, n);
        }
        Var { id, value }
    }

    /// Fetches a named parameter as a leaf. Repeated fetches return the same node.
    pub fn param(&self, store: &ParamStore<T>, name: &str) -> Result<Var<T>> {
        if let Some(v) = self.state.borrow().param_cache.get(name) {
            return Ok(v.clone());
        }
        let value = store.value_arc(name)?;
        let var = self.leaf_arc(value, Some(name.to_string()));
        self.state
            .borrow_mut()
            .param_cache
            .insert(name.to_string(), var.clone());
        Ok(var)
    }

    /// Appends an op record. Returns an untracked value when no input is tracked.
    pub(crate) fn record(
        &self,
        op: &'static str,
        inputs: &[&Var<T>],
        out: Tensor<T>,
        backward: BackwardFn<T>,
    ) -> Var<T> {
        let finite = out.all_finite();
        let mut st = self.state.borrow_mut();
        if !finite && st.first_nonfinite.is_none() {
            st.first_nonfinite = Some(op);
        }
        let value = Arc::new(out);
        if !self.recording || inputs.iter().all(|v| !v.requires_grad()) {
            return Var { id: UNTRACKED, value };
        }
        let id = st.shapes.len();
        st.shapes.push(value.shape().to_vec());
        st.records.push(Record {
            op,
            inputs: inputs.iter().map(|v| v.id).collect(),
            output: id,
            backward,
        });
        Var { id, value }
    }

    /// Reverse sweep from a scalar root. Gradients are returned for every
    /// leaf reachable from the root; unreachable leaves get zeros.
    pub fn backward(&self, root: &Var<T>) -> Result<Gradients<T>> {
        if root.value.numel() != 1 {
            return Err(Error::NonScalarRoot(root.shape().to_vec()));
        }
        let st = self.state.borrow();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; st.shapes.len()];
        if root.requires_grad() {
            grads[root.id] = Some(vec![T::one()]);
        }
        for rec in st.records.iter().rev() {
            let Some(g) = grads[rec.output].take() else { continue };
            let needs: Vec<bool> = rec.inputs.iter().map(|&i| i != UNTRACKED).collect();
            let mut local = (rec.backward)(&g, &needs);
            if let Some(fault) = self.fault.as_ref().filter(|f| f.op == rec.op) {
                let k = T::c(fault.factor);
                for gi in local.iter_mut().flatten() {
                    gi.iter_mut().for_each(|v| *v *= k);
                }
            }
            for (&input, gi) in rec.inputs.iter().zip(local) {
                let Some(gi) = gi else { continue };
                if input == UNTRACKED {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += *b),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        let mut by_id = HashMap::new();
        let mut by_name = HashMap::new();
        for &leaf in &st.leaves {
            let shape = st.shapes[leaf].clone();
            let g = grads[leaf]
                .take()
                .map(|g| Tensor::from_parts(shape.clone(), g))
                .unwrap_or_else(|| Tensor::zeros(&shape));
            if let Some(name) = st.names.get(&leaf) {
                by_name.insert(name.clone(), leaf);
            }
            by_id.insert(leaf, g);
        }
        Ok(Gradients { by_id, by_name })
    }

    /// Runs backward and adds the parameter gradients into `store`.
    pub fn backward_into(&self, root: &Var<T>, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.backward(root)?;
        store.accumulate(&grads)
    }
}

/// Leaf gradients produced by one backward sweep.
pub struct Gradients<T> {
    by_id: HashMap<usize, Tensor<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Float> Gradients<T> {
    pub fn wrt(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        self.by_id.get(&v.id)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name).and_then(|id| self.by_id.get(id))
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.by_name
            .iter()
            .map(|(n, id)| (n.as_str(), &self.by_id[id]))
    }
}
