use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;

use super::network::PolicyConfig;
use crate::env::DomainSpec;
use crate::nn::{Activation, Adam, Dense, ParamVector};
use crate::{Error, Result};

#[derive(Debug, Clone)]
struct Baseline {
    hidden_range: Range<usize>,
    out_range: Range<usize>,
    adam: Adam,
}

/// One small regression network per domain estimating state values.
#[derive(Debug, Clone)]
pub struct ValueBaselines {
    hidden: Dense,
    out: Dense,
    names: Vec<String>,
    nets: Vec<Baseline>,
    params: ParamVector,
    learning_rate: f64,
    batch_size: usize,
}

impl ValueBaselines {
    pub fn new<R: Rng + ?Sized>(
        domains: &[DomainSpec],
        obs_width: usize,
        config: &PolicyConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut v = Self {
            hidden: Dense::new(obs_width, config.value_hidden_width, Activation::Relu),
            out: Dense::new(config.value_hidden_width, 1, Activation::Identity),
            names: Vec::new(),
            nets: Vec::new(),
            params: ParamVector::new(),
            learning_rate: config.value_learning_rate,
            batch_size: config.value_batch_size,
        };
        for d in domains {
            v.add_domain(&d.name, rng)?;
        }
        Ok(v)
    }

    /// Registers a freshly initialised baseline for `name`.
    pub fn add_domain<R: Rng + ?Sized>(&mut self, name: &str, rng: &mut R) -> Result<usize> {
        if self.names.iter().any(|n| n == name) {
            return Err(Error::DuplicateDomain(name.to_string()));
        }
        let hidden_range = self.params.push(format!("value.{name}.hidden"), &self.hidden.shape());
        let out_range = self.params.push(format!("value.{name}.out"), &self.out.shape());
        let values = self.params.values_mut();
        self.hidden.init(&mut values[hidden_range.clone()], 1.0, rng);
        self.out.init(&mut values[out_range.clone()], 1.0, rng);
        let len = hidden_range.len() + out_range.len();
        self.nets.push(Baseline {
            hidden_range,
            out_range,
            adam: Adam::new(len, self.learning_rate),
        });
        self.names.push(name.to_string());
        Ok(self.names.len() - 1)
    }

    /// Replaces the parameters with checkpointed `value.*` blocks.
    pub fn load_params(&mut self, params: ParamVector) -> Result<()> {
        if params.layout() != self.params.layout() {
            return Err(Error::Checkpoint("value checkpoint layout does not match its domains".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn domain_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownDomain(name.to_string()))
    }

    pub fn predict(&self, domain: usize, obs: &[f64]) -> f64 {
        let net = &self.nets[domain];
        let p = self.params.values();
        let h = self.hidden.forward(&p[net.hidden_range.clone()], obs);
        self.out.forward(&p[net.out_range.clone()], &h)[0]
    }

    /// Mean squared error of the domain's baseline on `(obs, target)` pairs.
    pub fn mse(&self, domain: usize, obs: &[&[f64]], targets: &[f64]) -> f64 {
        let n = obs.len().max(1) as f64;
        obs.iter()
            .zip(targets)
            .map(|(o, t)| (self.predict(domain, o) - t).powi(2))
            .sum::<f64>()
            / n
    }

    /// Squared-error regression with Adam for `epochs` shuffled passes.
    pub fn fit<R: Rng + ?Sized>(
        &mut self,
        domain: usize,
        obs: &[&[f64]],
        targets: &[f64],
        epochs: usize,
        rng: &mut R,
    ) -> Result<()> {
        if domain >= self.nets.len() {
            return Err(Error::UnknownDomain(format!("#{domain}")));
        }
        if obs.len() != targets.len() {
            return Err(Error::dim("value targets", obs.len(), targets.len()));
        }
        if obs.is_empty() {
            return Ok(());
        }
        let (hr, or) = (self.nets[domain].hidden_range.clone(), self.nets[domain].out_range.clone());
        let split = hr.len();
        let mut local: Vec<f64> = self.params.values()[hr.clone()]
            .iter()
            .chain(&self.params.values()[or.clone()])
            .copied()
            .collect();
        let mut order: Vec<usize> = (0..obs.len()).collect();
        let mut grad = vec![0.0; local.len()];
        for _ in 0..epochs {
            order.shuffle(rng);
            for chunk in order.chunks(self.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let scale = 2.0 / chunk.len() as f64;
                for &i in chunk {
                    let (wh, wo) = local.split_at(split);
                    let h = self.hidden.forward(wh, obs[i]);
                    let y = self.out.forward(wo, &h);
                    let dy = [scale * (y[0] - targets[i])];
                    let mut dh = vec![0.0; h.len()];
                    let (gh, go) = grad.split_at_mut(split);
                    self.out.backward(wo, &h, &y, &dy, go, Some(&mut dh));
                    self.hidden.backward(wh, obs[i], &h, &dh, gh, None);
                }
                self.nets[domain].adam.step(&mut local, &grad);
            }
        }
        if local.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("value baseline of {}", self.names[domain])));
        }
        let values = self.params.values_mut();
        values[hr].copy_from_slice(&local[..split]);
        values[or].copy_from_slice(&local[split..]);
        Ok(())
    }
}
