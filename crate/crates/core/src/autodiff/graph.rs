use std::collections::HashMap;

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

use super::params::{ParamId, ParamStore};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Backward rule of a [`Graph::custom`] node: `(grad_out, parent_values, output)`
/// to one optional gradient per parent.
pub type CustomBackward<T> = Box<dyn Fn(&[T], &[&[T]], &[T]) -> Vec<Option<Vec<T>>>>;

pub(crate) struct Sample4<T> {
    pub idx: [usize; 4],
    pub w: [T; 4],
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    Upsample2x(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, T, T),
    Sum(Var),
    Mean(Var),
    SumAxis { x: Var, axis: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    GatherRows { x: Var, rows: Vec<usize> },
    Bilinear { map: Var, samples: Vec<Sample4<T>> },
    CumsumExclusive(Var),
    Custom { parents: Vec<Var>, backward: CustomBackward<T> },
}

pub(crate) struct Node<T> {
    pub value: Vec<T>,
    pub shape: Vec<usize>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Define-by-run tape. Nodes are appended in evaluation order, which is a
/// topological order; [`Graph::backward`] may run once.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    bound: HashMap<(u64, usize), Var>,
    frozen: Vec<u64>,
    consumed: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Graph::new()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), bound: HashMap::new(), frozen: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "scalar() on a node with {} elements", val.len());
        val[0]
    }

    pub(crate) fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), numel(&shape));
        self.nodes.push(Node { value, shape, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn leaf(&mut self, value: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Var> {
        if value.len() != numel(shape) {
            return Err(invalid(format!(
                "{} values do not fill shape {shape:?}",
                value.len()
            )));
        }
        Ok(self.push(value, shape.to_vec(), Op::Leaf, requires_grad))
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, value: Vec<T>, shape: &[usize]) -> Result<Var> {
        self.leaf(value, shape, false)
    }

    pub fn constant_f64(&mut self, value: &[f64], shape: &[usize]) -> Result<Var> {
        self.constant(value.iter().map(|&x| T::of(x)).collect(), shape)
    }

    /// Leaf whose gradient is reported by `backward`.
    pub fn input(&mut self, value: Vec<T>, shape: &[usize]) -> Result<Var> {
        self.leaf(value, shape, true)
    }

    /// Parameters of `store` bound from now on are constants on this tape.
    pub fn freeze(&mut self, store: &ParamStore<T>) {
        if !self.frozen.contains(&store.uid()) {
            self.frozen.push(store.uid());
        }
    }

    /// Binds a parameter as a leaf, once per tape.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let key = (store.uid(), id.0);
        if let Some(&v) = self.bound.get(&key) {
            return v;
        }
        let p = store.get(id);
        let trainable = !self.frozen.contains(&store.uid());
        let v = self.push(p.values.clone(), p.shape.clone(), Op::Leaf, trainable);
        self.bound.insert(key, v);
        v
    }

    /// Node a parameter was bound to, if any.
    pub fn bound_param(&self, store: &ParamStore<T>, id: ParamId) -> Option<Var> {
        self.bound.get(&(store.uid(), id.0)).copied()
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(invalid("backward already ran on this tape; rebuild the graph"));
        }
        let n = numel(self.shape(loss));
        if n != 1 {
            return Err(invalid(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss))));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backprop_node(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads, bound: self.bound.clone() })
    }

    pub(crate) fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, contribution: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(contribution) {
                    *a = *a + b;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    /// Like [`accumulate`](Self::accumulate) but adds in place through a closure.
    pub(crate) fn accumulate_with(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let g = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
        f(g);
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    bound: HashMap<(u64, usize), Var>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `v`; `None` when no path reaches it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient with zeros where nothing flowed.
    pub fn get_or_zero(&self, g: &Graph<T>, v: Var) -> Vec<T> {
        self.get(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); g.value(v).len()])
    }

    /// Gradients of every parameter of `store`, in id order. Parameters that never
    /// reached the loss (or were frozen) get `None`.
    pub fn for_store(&self, store: &ParamStore<T>) -> Vec<Option<Vec<T>>> {
        (0..store.len())
            .map(|i| {
                let v = self.bound.get(&(store.uid(), i))?;
                self.grads[v.0].clone()
            })
            .collect()
    }
}
