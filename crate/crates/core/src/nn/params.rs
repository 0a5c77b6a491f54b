//! Named trainable parameters with seeded initialization.

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Ordered collection of named variables.
#[derive(Debug, Clone)]
pub struct ParamStore {
    dtype: DType,
    device: Device,
    vars: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            vars: Vec::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// He-normal weights of the given shape, scaled by `fan_in`.
    pub fn normal(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
        self.insert(name, Tensor::from_vec(data, shape, &self.device)?)
    }

    pub fn uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(name, Tensor::from_vec(data, shape, &self.device)?)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<Tensor> {
        self.insert(name, Tensor::zeros(shape, DType::F64, &self.device)?)
    }

    fn insert(&mut self, name: impl Into<String>, init: Tensor) -> Result<Tensor> {
        let name = name.into();
        if self.vars.iter().any(|(n, _)| *n == name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let var = Var::from_tensor(&init.to_dtype(self.dtype)?)?;
        let handle = var.as_tensor().clone();
        self.vars.push((name, var));
        Ok(handle)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// `(name, shape)` for every parameter, in creation order.
    pub fn signature(&self) -> Vec<(String, Vec<usize>)> {
        self.vars
            .iter()
            .map(|(n, v)| (n.clone(), v.dims().to_vec()))
            .collect()
    }

    /// Overwrites parameters from `tensors`. Every name in `only` (or every
    /// parameter when `only` is `None`) must be present with a matching shape.
    pub fn assign(
        &self,
        tensors: &HashMap<String, Tensor>,
        only: Option<&dyn Fn(&str) -> bool>,
    ) -> Result<usize> {
        let mut assigned = 0;
        for (name, var) in &self.vars {
            if let Some(filter) = only {
                if !filter(name) {
                    continue;
                }
            }
            let t = tensors.get(name).ok_or_else(|| {
                Error::Integration(format!("checkpoint lacks parameter `{name}`"))
            })?;
            if t.dims() != var.dims() {
                return Err(Error::Integration(format!(
                    "parameter `{name}` has shape {:?} in checkpoint, model expects {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
            assigned += 1;
        }
        Ok(assigned)
    }

    /// Snapshot of every parameter's current value.
    pub fn snapshot(&self) -> Result<HashMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(n, v)| Ok((n.clone(), v.as_tensor().copy()?)))
            .collect()
    }
}
