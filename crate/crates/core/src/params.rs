//! Named parameter storage, Xavier initialization and the Adam optimizer.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Every trainable tensor of a model, addressable by a stable name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new entry. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Contract(alloc::format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Contract(alloc::format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Contract(alloc::format!("unknown parameter `{name}`")))
    }

    /// Replaces an existing entry, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::dim("set_param", &[slot.shape(), value.shape()]));
        }
        *slot = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Binds a parameter onto a tape.
    pub fn bind(&self, tape: &mut Tape, name: &str) -> Result<Var> {
        Ok(tape.param(name, self.get(name)?))
    }
}

/// Uniform Glorot initialization in `±sqrt(6 / (fan_in + fan_out))` with
/// `fan_in = rows`, `fan_out = cols`.
pub fn xavier_init(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    xavier_with(rows, cols, &mut rng)
}

pub fn xavier_bound(rows: usize, cols: usize) -> f64 {
    libm::sqrt(6.0 / (rows + cols) as f64)
}

pub(crate) fn xavier_with<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = xavier_bound(rows, cols);
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::new(rows, cols, data).expect("positive shape")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers, one pair per parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    moments: BTreeMap<String, (Tensor, Tensor)>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let moments = params
            .iter()
            .map(|(name, t)| {
                let (r, c) = t.shape();
                (name.to_string(), (Tensor::zeros(r, c), Tensor::zeros(r, c)))
            })
            .collect();
        AdamState { moments, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<(&Tensor, &Tensor)> {
        self.moments.get(name).map(|(m, v)| (m, v))
    }

    /// Restores a saved optimizer state.
    pub fn from_parts(moments: BTreeMap<String, (Tensor, Tensor)>, step: u64) -> Self {
        AdamState { moments, step }
    }

    pub fn into_parts(self) -> (BTreeMap<String, (Tensor, Tensor)>, u64) {
        (self.moments, self.step)
    }

    /// One bias-corrected Adam update. Missing gradients count as zero. The
    /// whole step is rejected before any write if a gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::dim("adam_step", &[p.shape(), g.shape()]));
            }
            if !g.is_finite() {
                return Err(Error::Numerical {
                    param: name.clone(),
                    detail: "non-finite gradient".to_string(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
        for (name, (m, v)) in self.moments.iter_mut() {
            let grad = grads.get(name);
            let p = params.get_mut(name)?;
            let n = p.len();
            for i in 0..n {
                let g = grad.map_or(0.0, |g| g.values()[i]);
                let mi = cfg.beta1 * m.values()[i] + (1.0 - cfg.beta1) * g;
                let vi = cfg.beta2 * v.values()[i] + (1.0 - cfg.beta2) * g * g;
                m.values_mut()[i] = mi;
                v.values_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                p.values_mut()[i] -= cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
            }
        }
        Ok(())
    }
}
