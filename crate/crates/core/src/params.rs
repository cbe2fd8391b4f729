use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
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

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Inserts a tensor drawn uniformly from `[-scale, scale]`, rounded to `f32`.
    pub fn init_uniform(&mut self, name: &str, shape: &[usize], scale: f64, rng: &mut Rng) {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.uniform(-scale, scale);
        }
        t.round_to_f32();
        self.insert(name, t);
    }
}

/// Worst relative disagreement between reverse-mode gradients of `f` and
/// central differences `(f(θ+eps) - f(θ-eps)) / (2 eps)`, over every scalar
/// of every parameter. The denominator is `max(|analytic|, |numeric|, 1e-8)`.
pub fn gradient_check<F>(store: &ParameterStore, eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParameterStore) -> Result<Var>,
{
    Ok(gradient_check_detailed(store, eps, f)?.max_rel_error)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst scalar.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst scalar.
    pub worst_pair: (f64, f64),
    pub checked: usize,
}

pub fn gradient_check_detailed<F>(store: &ParameterStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParameterStore) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    let eval = |s: &ParameterStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, s)?;
        Ok(tape.value(loss).item())
    };
    let (_, analytic) = crate::tape::value_and_grad(store, &f)?;

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_pair: (0.0, 0.0),
        checked: 0,
    };
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let n = store.get(&name).unwrap().numel();
        for i in 0..n {
            let orig = store.get(&name).unwrap().data()[i];
            probe.get_mut(&name).unwrap().data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(&name).unwrap().data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
                report.worst_pair = (a, numeric);
            }
        }
    }
    Ok(report)
}
