use rand::Rng;

use super::{Real, Tape, Var};

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<F>,
}

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<F> {
    params: Vec<Param<F>>,
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Appends a tensor and returns its index.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], value: Vec<F>) -> usize {
        assert_eq!(value.len(), shape.iter().product::<usize>(), "param value/shape mismatch");
        self.params.push(Param {
            name: name.into(),
            shape: shape.to_vec(),
            value,
        });
        self.params.len() - 1
    }

    /// Tensor drawn uniformly from `[-bound, bound]`.
    pub fn push_uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut impl Rng) -> usize {
        let n = shape.iter().product();
        let v = (0..n).map(|_| F::of_f64(rng.gen_range(-bound..=bound))).collect();
        self.push(name, shape, v)
    }

    pub fn push_const(&mut self, name: impl Into<String>, shape: &[usize], c: f64) -> usize {
        let n = shape.iter().product();
        self.push(name, shape, vec![F::of_f64(c); n])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &Param<F> {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param<F> {
        &mut self.params[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every tensor on `tape`, as leaves when `trainable`, otherwise
    /// as constants.
    pub fn bind(&self, tape: &mut Tape<F>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.value.clone(), &p.shape)
                } else {
                    tape.constant(p.value.clone(), &p.shape)
                }
            })
            .collect()
    }

    /// Converts every tensor to another element type.
    pub fn cast<G: Real>(&self) -> ParamSet<G> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    value: p.value.iter().map(|v| G::of_f64(v.as_f64())).collect(),
                })
                .collect(),
        }
    }
}
