//! Named, trainable parameters.
//!
//! A [`Parameter`] is a shared handle: the model layers and the optimizer see
//! the same slot, and an update swaps in a fresh leaf tensor between steps
//! (tensors themselves stay immutable). Names are dotted paths encoding the
//! position in the graph, e.g. `enc.stage0.block0.attn.qkv.weight`.

use std::cell::RefCell;
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{DustError, Result};
use crate::real::Real;
use crate::rng::{next_trunc_normal, SeededRng};
use crate::tensor::Tensor;
use rand::Rng;

/// How a parameter was initialized (recorded for reproducibility).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitSpec {
    Zeros,
    Ones,
    TruncNormal { std: f64 },
    UniformFanIn { fan_in: usize },
}

impl fmt::Display for InitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitSpec::Zeros => write!(f, "zeros"),
            InitSpec::Ones => write!(f, "ones"),
            InitSpec::TruncNormal { std } => write!(f, "trunc_normal(std={std})"),
            InitSpec::UniformFanIn { fan_in } => write!(f, "uniform_fan_in({fan_in})"),
        }
    }
}

struct ParamInner<P: Real> {
    name: String,
    tensor: Tensor<P>,
    init: InitSpec,
}

pub struct Parameter<P: Real> {
    inner: Rc<RefCell<ParamInner<P>>>,
}

impl<P: Real> Clone for Parameter<P> {
    fn clone(&self) -> Self {
        Parameter { inner: Rc::clone(&self.inner) }
    }
}

impl<P: Real> fmt::Debug for Parameter<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        write!(f, "Parameter({}, shape={:?}, init={})", inner.name, inner.tensor.shape(), inner.init)
    }
}

impl<P: Real> Parameter<P> {
    pub fn new(name: impl Into<String>, shape: &[usize], init: InitSpec, rng: &mut SeededRng) -> Self {
        let n: usize = shape.iter().product();
        let data: Vec<P> = match init {
            InitSpec::Zeros => vec![P::zero(); n],
            InitSpec::Ones => vec![P::one(); n],
            InitSpec::TruncNormal { std } => {
                (0..n).map(|_| P::from_f64(next_trunc_normal(rng, std))).collect()
            }
            InitSpec::UniformFanIn { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| P::from_f64(rng.gen_range(-bound..bound))).collect()
            }
        };
        let tensor = Tensor::leaf(shape, data).expect("parameter init");
        Parameter { inner: Rc::new(RefCell::new(ParamInner { name: name.into(), tensor, init })) }
    }

    pub fn name(&self) -> String {
        self.inner.borrow().name.clone()
    }

    pub fn init_spec(&self) -> InitSpec {
        self.inner.borrow().init
    }

    /// Current value as a gradient-accumulating leaf (cheap clone).
    pub fn tensor(&self) -> Tensor<P> {
        self.inner.borrow().tensor.clone()
    }

    /// Swap in a new value (optimizer step, checkpoint load).
    pub fn set_tensor(&self, t: Tensor<P>) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if t.shape() != inner.tensor.shape() {
            return Err(DustError::dim(
                "set_tensor",
                format!("parameter {}: {:?} vs {:?}", inner.name, inner.tensor.shape(), t.shape()),
            ));
        }
        inner.tensor = t;
        Ok(())
    }

    pub fn set_data(&self, data: Vec<P>) -> Result<()> {
        let shape = self.shape();
        self.set_tensor(Tensor::leaf(&shape, data)?)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().tensor.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().tensor.numel()
    }

    pub fn take_grad(&self) -> Option<Vec<P>> {
        self.inner.borrow().tensor.take_grad()
    }
}

/// Ordered registry of all parameters of a model; order is construction
/// order and therefore deterministic.
pub struct ParamSet<P: Real> {
    items: Vec<Parameter<P>>,
    names: HashSet<String>,
}

impl<P: Real> Default for ParamSet<P> {
    fn default() -> Self {
        ParamSet { items: Vec::new(), names: HashSet::new() }
    }
}

impl<P: Real> ParamSet<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, p: Parameter<P>) -> Result<Parameter<P>> {
        let name = p.name();
        if !self.names.insert(name.clone()) {
            return Err(DustError::config(format!("duplicate parameter name '{name}'")));
        }
        self.items.push(p.clone());
        Ok(p)
    }

    pub fn create(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: InitSpec,
        rng: &mut SeededRng,
    ) -> Result<Parameter<P>> {
        self.register(Parameter::new(name, shape, init, rng))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<P>> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn total_scalars(&self) -> usize {
        self.items.iter().map(|p| p.numel()).sum()
    }

    pub fn find(&self, name: &str) -> Option<&Parameter<P>> {
        self.items.iter().find(|p| p.name() == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn duplicate_names_rejected() {
        let mut rng = rng_from_seed(0);
        let mut set = ParamSet::<f64>::new();
        set.create("a.weight", &[2, 2], InitSpec::Zeros, &mut rng).unwrap();
        let dup = set.create("a.weight", &[2, 2], InitSpec::Zeros, &mut rng);
        assert!(dup.is_err());
    }

    #[test]
    fn same_seed_same_init() {
        let mut r1 = rng_from_seed(42);
        let mut r2 = rng_from_seed(42);
        let a = Parameter::<f32>::new("w", &[16], InitSpec::TruncNormal { std: 0.02 }, &mut r1);
        let b = Parameter::<f32>::new("w", &[16], InitSpec::TruncNormal { std: 0.02 }, &mut r2);
        assert_eq!(a.tensor().data(), b.tensor().data());
    }
}
