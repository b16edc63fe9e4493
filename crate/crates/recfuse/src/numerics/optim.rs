use super::tensor::Tensor;
use super::NumericsError;
use std::collections::BTreeMap;

/// AdamW hyperparameters. Decoupled weight decay; defaults follow the usual
/// (0.9, 0.999, 1e-8) convention.
#[derive(Clone, Copy, Debug)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named trainable parameters plus AdamW state. Names are unique; every
/// stored tensor is trainable by construction.
#[derive(Clone)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    moments: BTreeMap<String, Moments>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
            moments: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<(), NumericsError> {
        if self.params.contains_key(name) {
            return Err(NumericsError::DuplicateParam(name.to_string()));
        }
        self.params.insert(name.to_string(), t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NumericsError> {
        self.params
            .get(name)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn set(&mut self, name: &str, t: Tensor) -> Result<(), NumericsError> {
        match self.params.get_mut(name) {
            Some(slot) => {
                *slot = t;
                Ok(())
            }
            None => Err(NumericsError::UnknownParam(name.to_string())),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }

    /// Mutate one coordinate of one parameter; used by the finite-difference
    /// checker.
    pub fn nudge(&mut self, name: &str, idx: usize, delta: f64) -> Result<(), NumericsError> {
        let t = self
            .params
            .get_mut(name)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))?;
        t.data_mut()[idx] += delta;
        Ok(())
    }

    /// One AdamW update from accumulated gradients. Parameters without an
    /// entry in `grads` are left untouched.
    pub fn adamw_step(
        &mut self,
        grads: &BTreeMap<String, Tensor>,
        cfg: &AdamWConfig,
    ) -> Result<(), NumericsError> {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for (name, g) in grads {
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| NumericsError::UnknownParam(name.clone()))?;
            if g.shape() != p.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "adamw_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let mom = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; g.numel()],
                v: vec![0.0; g.numel()],
            });
            let pd = p.data_mut();
            for i in 0..g.numel() {
                let gi = g.data()[i];
                mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * gi;
                mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = mom.m[i] / bc1;
                let vhat = mom.v[i] / bc2;
                pd[i] -= cfg.lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * pd[i]);
            }
        }
        Ok(())
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_name_rejected() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(1.0)).unwrap();
        assert!(s.insert("w", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn zero_gradient_step_leaves_params_unchanged() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(vec![1.0, -2.0, 3.0])).unwrap();
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::zeros(&[3]));
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        s.adamw_step(&grads, &cfg).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn adamw_moves_against_gradient() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(1.0)).unwrap();
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(10.0));
        s.adamw_step(&grads, &AdamWConfig::default()).unwrap();
        assert!(s.get("w").unwrap().item() < 1.0);
    }
}
