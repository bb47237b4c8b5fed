use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Initialiser standard deviation for weight matrices and embeddings.
pub const INIT_STDDEV: f64 = 0.02;

/// Ordered collection of named parameters.
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

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total scalar parameter count.
    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Registers every parameter as a trainable leaf on `g`.
    pub fn bind(&self, g: &mut Graph) -> BoundParams<'_> {
        BoundParams {
            store: self,
            vars: self.tensors.iter().map(|t| g.param(t)).collect(),
        }
    }

    /// Copies parameter values from `other` for every shared name.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, t) in other.iter() {
            let dst = self
                .get_mut(name)
                .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
            if dst.shape() != t.shape() {
                return Err(Error::dim(format!(
                    "parameter {name}: expected {:?}, found {:?}",
                    dst.shape(),
                    t.shape()
                )));
            }
            *dst = t.clone();
        }
        Ok(())
    }
}

/// Parameters of a [`ParamStore`] registered on one graph.
pub struct BoundParams<'a> {
    store: &'a ParamStore,
    vars: Vec<Var>,
}

impl BoundParams<'_> {
    /// Panics on an unknown name: parameter names are fixed by the builders.
    pub fn var(&self, name: &str) -> &Var {
        let i = self.store.index.get(name).unwrap_or_else(|| panic!("no parameter {name}"));
        &self.vars[*i]
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.store.names.iter().map(String::as_str).zip(&self.vars)
    }
}

/// Normal sample truncated to two standard deviations.
pub fn truncated_normal(rng: &mut ChaCha8Rng, stddev: f64) -> f64 {
    loop {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 2.0 {
            return z * stddev;
        }
    }
}

/// Builder helpers used by the model constructors.
pub(crate) struct Init<'a> {
    pub store: ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    pub fn normal(&mut self, name: impl Into<String>, shape: &[usize]) {
        let n = shape.iter().product();
        let data = (0..n).map(|_| truncated_normal(self.rng, INIT_STDDEV)).collect();
        self.store.insert(name, Tensor::new(shape.to_vec(), data).expect("valid shape"));
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.store.insert(name, Tensor::zeros(shape));
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.store.insert(name, Tensor::full(shape, 1.0));
    }

    pub fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.normal(format!("{prefix}.weight"), &[fan_in, fan_out]);
        self.zeros(format!("{prefix}.bias"), &[fan_out]);
    }

    pub fn layer_norm(&mut self, prefix: &str, width: usize) {
        self.ones(format!("{prefix}.gain"), &[width]);
        self.zeros(format!("{prefix}.bias"), &[width]);
    }

    pub fn conv(&mut self, prefix: &str, width: usize, cin: usize, cout: usize) {
        self.normal(format!("{prefix}.weight"), &[width, cin, cout]);
        self.zeros(format!("{prefix}.bias"), &[cout]);
    }
}
