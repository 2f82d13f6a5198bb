//! Replayable graphs and the parameter-level gradient entry points.

use std::collections::HashMap;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

/// Tape vars bound to the entries of a [`ParameterSet`], in its order.
#[derive(Clone)]
pub struct Bindings<'t> {
    names: Vec<String>,
    layers: Vec<usize>,
    vars: Vec<Var<'t>>,
}

impl<'t> Bindings<'t> {
    /// Records every entry as a differentiable placeholder.
    pub fn params(tape: &'t Tape, set: &ParameterSet) -> Self {
        Self::record(tape, set, |t, n, v| t.param(n, v))
    }

    /// Records every entry as a non-differentiable named input.
    pub fn inputs(tape: &'t Tape, set: &ParameterSet) -> Self {
        Self::record(tape, set, |t, n, v| t.input(n, v))
    }

    fn record(
        tape: &'t Tape,
        set: &ParameterSet,
        leaf: impl Fn(&'t Tape, &str, Tensor) -> Var<'t>,
    ) -> Self {
        let mut b = Bindings {
            names: Vec::new(),
            layers: Vec::new(),
            vars: Vec::new(),
        };
        for p in set.iter() {
            b.names.push(p.name.clone());
            b.layers.push(p.layer);
            b.vars.push(leaf(tape, &p.name, p.tensor.clone()));
        }
        b
    }

    /// Same names and layers with replacement vars (e.g. fast weights).
    pub fn replace(&self, vars: Vec<Var<'t>>) -> Self {
        assert_eq!(vars.len(), self.vars.len());
        Bindings {
            names: self.names.clone(),
            layers: self.layers.clone(),
            vars,
        }
    }

    pub fn get(&self, name: &str) -> Var<'t> {
        self.try_get(name)
            .unwrap_or_else(|| panic!("no binding named `{name}`"))
    }

    pub fn try_get(&self, name: &str) -> Option<Var<'t>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Current values packed back into a parameter set.
    pub fn to_params(&self) -> ParameterSet {
        let mut out = ParameterSet::new();
        for ((n, &l), v) in self.names.iter().zip(&self.layers).zip(&self.vars) {
            out.push(n.clone(), v.value(), l)
                .expect("bindings have unique names");
        }
        out
    }
}

/// Packs gradient vars into a parameter set shaped like `like`.
pub fn grads_to_params(like: &Bindings<'_>, grads: &[Var<'_>]) -> ParameterSet {
    let mut out = ParameterSet::new();
    for ((n, &l), g) in like.names.iter().zip(&like.layers).zip(grads) {
        out.push(n.clone(), g.value(), l)
            .expect("bindings have unique names");
    }
    out
}

fn feeds(inputs: &ParameterSet) -> HashMap<String, Tensor> {
    inputs
        .iter()
        .map(|p| (p.name.clone(), p.tensor.clone()))
        .collect()
}

/// A recorded computation with named placeholders and one output.
///
/// Recording order is a topological order, so [`evaluate`](Self::evaluate)
/// simply re-runs the tape front to back.
pub struct TapeGraph {
    tape: Tape,
    output: usize,
    placeholders: Vec<(String, usize)>,
}

impl TapeGraph {
    /// Records `f` with every entry of `example` bound as a differentiable
    /// placeholder. `example` fixes the placeholder shapes.
    pub fn build(
        example: &ParameterSet,
        f: impl for<'t> FnOnce(&'t Tape, &Bindings<'t>) -> Var<'t>,
    ) -> Result<Self> {
        let tape = Tape::new();
        let (output, placeholders) = {
            let bindings = Bindings::params(&tape, example);
            let out = f(&tape, &bindings);
            let ph = bindings
                .names()
                .iter()
                .cloned()
                .zip(bindings.vars().iter().map(|v| v.id()))
                .collect();
            (out.id(), ph)
        };
        tape.check_finite()?;
        Ok(TapeGraph {
            tape,
            output,
            placeholders,
        })
    }

    pub fn placeholder_names(&self) -> impl Iterator<Item = &str> {
        self.placeholders.iter().map(|(n, _)| n.as_str())
    }

    fn check_names(&self, inputs: &ParameterSet) -> Result<()> {
        for p in inputs.iter() {
            if !self.placeholders.iter().any(|(n, _)| *n == p.name) {
                return Err(Error::UnknownName(p.name.clone()));
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, inputs: &ParameterSet) -> Result<Tensor> {
        self.check_names(inputs)?;
        let mut values = self.tape.replay(&feeds(inputs))?;
        Ok(values.swap_remove(self.output))
    }

    /// `∂output/∂name` for every requested placeholder.
    pub fn gradient(&self, inputs: &ParameterSet, wrt: &[&str]) -> Result<ParameterSet> {
        self.check_names(inputs)?;
        let tape = self.tape.replayed(&feeds(inputs))?;
        let mut targets = Vec::with_capacity(wrt.len());
        for &name in wrt {
            let (_, id) = self
                .placeholders
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::UnknownName(name.to_string()))?;
            targets.push(tape.var(*id));
        }
        let grads = tape.grad(tape.var(self.output), &targets, false)?;
        tape.check_finite()?;
        let mut out = ParameterSet::new();
        for (&name, g) in wrt.iter().zip(grads) {
            let layer = inputs
                .iter()
                .find(|p| p.name == name)
                .map_or(0, |p| p.layer);
            out.push(name, g.value(), layer)?;
        }
        Ok(out)
    }
}

/// Meta-gradient of `outer_loss(θ')` where `θ' = θ − step·∇ inner_loss(θ)`
/// for the `inner_wrt` entries (others pass through unchanged).
///
/// With `second_order` the inner gradient stays on the tape and the result is
/// the exact total derivative; without it the inner gradient is treated as a
/// constant (first-order approximation).
pub fn gradient_of_gradient(
    params: &ParameterSet,
    inner_wrt: &[&str],
    outer_wrt: &[&str],
    step: f64,
    second_order: bool,
    inner_loss: impl for<'t> Fn(&'t Tape, &Bindings<'t>) -> Var<'t>,
    outer_loss: impl for<'t> Fn(&'t Tape, &Bindings<'t>) -> Var<'t>,
) -> Result<ParameterSet> {
    let tape = Tape::new();
    let theta = Bindings::params(&tape, params);
    let inner_vars: Vec<Var<'_>> = inner_wrt
        .iter()
        .map(|n| {
            theta
                .try_get(n)
                .ok_or_else(|| Error::UnknownName(n.to_string()))
        })
        .collect::<Result<_>>()?;
    let outer_vars: Vec<Var<'_>> = outer_wrt
        .iter()
        .map(|n| {
            theta
                .try_get(n)
                .ok_or_else(|| Error::UnknownName(n.to_string()))
        })
        .collect::<Result<_>>()?;

    let inner = inner_loss(&tape, &theta);
    let g = tape.grad(inner, &inner_vars, second_order)?;
    let adapted: Vec<Var<'_>> = theta
        .names()
        .iter()
        .zip(theta.vars())
        .map(
            |(name, &v)| match inner_wrt.iter().position(|n| n == name) {
                Some(k) => v - g[k].scale(step),
                None => v,
            },
        )
        .collect();
    let fast = theta.replace(adapted);
    let outer = outer_loss(&tape, &fast);
    let meta = tape.grad(outer, &outer_vars, false)?;
    tape.check_finite()?;

    let mut out = ParameterSet::new();
    for (&name, m) in outer_wrt.iter().zip(meta) {
        let layer = params
            .iter()
            .find(|p| p.name == name)
            .map_or(0, |p| p.layer);
        out.push(name, m.value(), layer)?;
    }
    Ok(out)
}
