//! Named parameters stored at `f32` precision, with per-parameter Adam state.

use crate::error::{AutodiffError, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub trainable: bool,
    /// First moment estimate.
    pub m: Vec<f32>,
    /// Second moment estimate.
    pub v: Vec<f32>,
    /// Number of Adam updates applied so far.
    pub step: u64,
    grad: Option<Vec<f64>>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f32>) -> Self {
        let n = value.len();
        debug_assert_eq!(n, shape.iter().product::<usize>());
        Self {
            name: name.into(),
            shape,
            value,
            trainable: true,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            grad: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn tensor(&self) -> Tensor {
        Tensor::from_f32(self.shape.clone(), &self.value).expect("param shape is validated at construction")
    }
}

/// How parameters enter a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binding {
    /// As differentiable leaves.
    Trainable,
    /// As constants; no gradient is tracked through them.
    Frozen,
}

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-3,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, p: Param) -> usize {
        self.params.push(p);
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    /// Insert every parameter into `g`; returns one handle per parameter.
    pub fn bind(&self, g: &mut Graph, binding: Binding) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| match binding {
                Binding::Trainable => g.leaf(p.tensor()),
                Binding::Frozen => g.constant(p.tensor()),
            })
            .collect()
    }

    /// Add the gradients for `vars` (as returned by [`ParamSet::bind`]) into
    /// the parameters' gradient buffers. Parameters the output does not
    /// depend on receive zeros.
    pub fn accumulate_grads(&mut self, g: &Graph, vars: &[Var], grads: &Gradients) -> Result<()> {
        if vars.len() != self.params.len() {
            return Err(AutodiffError::Usage(format!(
                "{} handles for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        for (p, &v) in self.params.iter_mut().zip(vars) {
            let buf = p.grad.get_or_insert_with(|| vec![0.0; p.value.len()]);
            if let Some(gv) = grads.get(v) {
                for (b, &x) in buf.iter_mut().zip(g.value(gv).data()) {
                    *b += x;
                }
            }
        }
        Ok(())
    }

    /// Set a gradient directly, replacing any existing buffer.
    pub fn set_grad(&mut self, i: usize, grad: Vec<f64>) -> Result<()> {
        let p = &mut self.params[i];
        if grad.len() != p.value.len() {
            return Err(AutodiffError::Usage(format!(
                "gradient for {} has {} entries, expected {}",
                p.name,
                grad.len(),
                p.value.len()
            )));
        }
        p.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    pub fn set_trainable(&mut self, i: usize, trainable: bool) {
        self.params[i].trainable = trainable;
    }

    /// One bias-corrected Adam update of every trainable parameter, then
    /// clear all gradients. Frozen parameters are left untouched.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if !(cfg.lr > 0.0) {
            return Err(AutodiffError::Usage(format!("learning rate must be positive, got {}", cfg.lr)));
        }
        if let Some(p) = self.params.iter().find(|p| p.trainable && p.grad.is_none()) {
            return Err(AutodiffError::Usage(format!("parameter {} has no gradient", p.name)));
        }
        for p in self.params.iter_mut() {
            let grad = p.grad.take();
            if !p.trainable {
                continue;
            }
            let grad = grad.expect("checked above");
            p.step += 1;
            let t = p.step as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            for i in 0..p.value.len() {
                let g = grad[i];
                let m = cfg.beta1 * p.m[i] as f64 + (1.0 - cfg.beta1) * g;
                let v = cfg.beta2 * p.v[i] as f64 + (1.0 - cfg.beta2) * g * g;
                p.m[i] = m as f32;
                p.v[i] = v as f32;
                let update = cfg.lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
                p.value[i] = (p.value[i] as f64 - update) as f32;
            }
        }
        Ok(())
    }
}
