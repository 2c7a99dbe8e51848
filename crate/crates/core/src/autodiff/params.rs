use std::collections::HashMap;

use rand::Rng;

use super::{AutodiffError, Tape, Tensor, Var};

/// Named parameter tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a parameter.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.tensors[i] = tensor,
            None => {
                self.index.insert(name.clone(), self.names.len());
                self.names.push(name);
                self.tensors.push(tensor);
            }
        }
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn insert_uniform<R: Rng>(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut R) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("shape product"));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn require(&self, name: &str) -> Result<&Tensor, AutodiffError> {
        self.get(name).ok_or_else(|| AutodiffError::UnknownParam(name.into()))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar elements.
    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Puts every parameter on `tape`; `trainable` decides which ones
    /// receive gradients.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> Result<Bound, AutodiffError> {
        let mut vars = HashMap::with_capacity(self.len());
        let mut order = Vec::with_capacity(self.len());
        for (name, t) in self.iter() {
            let grad = trainable(name);
            let v = if grad {
                tape.param(t.clone())?
            } else {
                tape.constant(t.clone())?
            };
            vars.insert(name.to_string(), v);
            order.push((name.to_string(), v, grad));
        }
        Ok(Bound { vars, order })
    }
}

/// Tape handles for the parameters of a [`ParamStore`].
#[derive(Debug)]
pub struct Bound {
    vars: HashMap<String, Var>,
    order: Vec<(String, Var, bool)>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var, AutodiffError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| AutodiffError::UnknownParam(name.into()))
    }

    /// `(name, var)` for every trainable parameter, in store order.
    pub fn trainable(&self) -> impl Iterator<Item = (&str, Var)> {
        self.order
            .iter()
            .filter(|(_, _, g)| *g)
            .map(|(n, v, _)| (n.as_str(), *v))
    }
}
