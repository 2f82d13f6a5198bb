//! Named, layer-ordered parameter collections.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub layer: usize,
}

/// Ordered parameters. Names are unique and layer indices, once
/// [`validate`](ParameterSet::validate)d, cover `0..layer_count()`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor, layer: usize) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Param {
            name,
            tensor,
            layer,
        });
        Ok(())
    }

    /// Builder-style push for code paths that construct known-unique names.
    pub fn with(mut self, name: &str, tensor: Tensor, layer: usize) -> Self {
        self.push(name, tensor, layer)
            .expect("unique parameter name");
        self
    }

    pub fn validate(&self) -> Result<()> {
        let layers = self.layer_count();
        let mut seen = vec![false; layers];
        for p in &self.entries {
            seen[p.layer] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Invalid(format!(
                "layer indices not contiguous: layer {missing} has no parameters"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One past the largest layer index.
    pub fn layer_count(&self) -> usize {
        self.entries.iter().map(|p| p.layer + 1).max().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|p| p.name.as_str())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.entries[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(|i| &mut self.entries[i].tensor)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::UnknownName(name.to_string()))
    }

    pub fn entry(&self, i: usize) -> &Param {
        &self.entries[i]
    }

    pub fn tensor_at_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].tensor
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|p| p.tensor.len()).sum()
    }

    /// Same names, layers and shapes.
    pub fn same_layout(&self, other: &ParameterSet) -> bool {
        self.len() == other.len()
            && self.iter().zip(other.iter()).all(|(a, b)| {
                a.name == b.name && a.layer == b.layer && a.tensor.shape() == b.tensor.shape()
            })
    }

    pub fn check_layout(&self, other: &ParameterSet) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Shape(
                "parameter sets differ in names, layers or shapes".into(),
            ))
        }
    }

    /// Copy with every tensor replaced by `f(tensor)`.
    pub fn map(&self, f: impl Fn(&Tensor) -> Tensor) -> ParameterSet {
        let mut out = self.clone();
        for p in &mut out.entries {
            p.tensor = f(&p.tensor);
        }
        out
    }

    pub fn zeros_like(&self) -> ParameterSet {
        self.map(|t| Tensor::new(t.shape().to_vec(), vec![0.0; t.len()]).expect("same shape"))
    }

    pub fn max_abs_diff(&self, other: &ParameterSet) -> f64 {
        self.iter()
            .zip(other.iter())
            .map(|(a, b)| a.tensor.max_abs_diff(&b.tensor))
            .fold(0.0, f64::max)
    }

    /// All values, entry by entry.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|p| p.tensor.data().iter().copied())
            .collect()
    }

    pub fn sub_set(&self, names: &[&str]) -> Result<ParameterSet> {
        let mut out = ParameterSet::new();
        for &n in names {
            let i = self
                .position(n)
                .ok_or_else(|| Error::UnknownName(n.to_string()))?;
            let p = &self.entries[i];
            out.push(p.name.clone(), p.tensor.clone(), p.layer)?;
        }
        Ok(out)
    }
}

/// Uniform Glorot initialisation of a `fan_in × fan_out` matrix.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::matrix(
        fan_in,
        fan_out,
        (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect(),
    )
}
