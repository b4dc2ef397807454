use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::action::ActionSpace;
use crate::env::DomainSpec;
use crate::nn::{softmax, Activation, CategoricalModel, Dense, ParamVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Width of the shared action-embedding layer.
    pub embed_width: usize,
    /// Multiplier on the Glorot bound used for fresh heads.
    pub head_init_scale: f64,
    pub value_hidden_width: usize,
    pub value_learning_rate: f64,
    /// Mini-batch size for value regression.
    pub value_batch_size: usize,
}

impl PolicyConfig {
    pub fn desk() -> Self {
        Self {
            embed_width: 32,
            head_init_scale: 0.01,
            value_hidden_width: 32,
            value_learning_rate: 0.01,
            value_batch_size: 64,
        }
    }

    pub fn paper() -> Self {
        Self {
            embed_width: 100,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_width == 0 || self.value_hidden_width == 0 || self.value_batch_size == 0 {
            return Err(Error::Config("policy widths and value batch size must be at least 1".into()));
        }
        if !(self.head_init_scale >= 0.0) || !(self.value_learning_rate > 0.0) {
            return Err(Error::Config("head_init_scale must be ≥ 0 and value_learning_rate > 0".into()));
        }
        Ok(())
    }
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// What the policy conditions on: the task indicator and the tracker's
/// observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub domain: usize,
    pub obs: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Head {
    layer: Dense,
    range: Range<usize>,
}

/// Shared action-embedding layer followed by one softmax head per domain.
#[derive(Debug, Clone)]
pub struct MultiDomainPolicy {
    config: PolicyConfig,
    obs_width: usize,
    domains: Vec<DomainSpec>,
    spaces: Vec<ActionSpace>,
    shared: Dense,
    shared_range: Range<usize>,
    heads: Vec<Head>,
    params: ParamVector,
}

impl MultiDomainPolicy {
    fn skeleton(domains: &[DomainSpec], obs_width: usize, config: PolicyConfig) -> Result<Self> {
        config.validate()?;
        if obs_width == 0 {
            return Err(Error::Config("observation width must be at least 1".into()));
        }
        let mut policy = Self {
            config,
            obs_width,
            domains: Vec::new(),
            spaces: Vec::new(),
            shared: Dense::new(obs_width, config.embed_width, Activation::Relu),
            shared_range: 0..0,
            heads: Vec::new(),
            params: ParamVector::new(),
        };
        policy.shared_range = policy.params.push("shared.embed", &policy.shared.shape());
        for d in domains {
            policy.add_head(d)?;
        }
        Ok(policy)
    }

    fn add_head(&mut self, domain: &DomainSpec) -> Result<usize> {
        domain.validate()?;
        if self.domains.iter().any(|d| d.name == domain.name) {
            return Err(Error::DuplicateDomain(domain.name.clone()));
        }
        let space = ActionSpace::new(domain);
        let layer = Dense::new(self.config.embed_width, space.len(), Activation::Identity);
        let range = self.params.push(format!("head.{}", domain.name), &layer.shape());
        self.heads.push(Head { layer, range });
        self.spaces.push(space);
        self.domains.push(domain.clone());
        Ok(self.domains.len() - 1)
    }

    pub fn new<R: Rng + ?Sized>(
        domains: &[DomainSpec],
        obs_width: usize,
        config: PolicyConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::skeleton(domains, obs_width, config)?;
        let r = p.shared_range.clone();
        p.shared.init(&mut p.params.values_mut()[r], 1.0, rng);
        for i in 0..p.heads.len() {
            p.init_head(i, rng);
        }
        Ok(p)
    }

    fn init_head<R: Rng + ?Sized>(&mut self, index: usize, rng: &mut R) {
        let head = &self.heads[index];
        let r = head.range.clone();
        head.layer.init(&mut self.params.values_mut()[r], self.config.head_init_scale, rng);
    }

    /// Rebuilds a policy from checkpointed `shared.*` and `head.*` blocks.
    pub fn from_params(
        domains: &[DomainSpec],
        obs_width: usize,
        config: PolicyConfig,
        params: ParamVector,
    ) -> Result<Self> {
        let mut p = Self::skeleton(domains, obs_width, config)?;
        if params.layout() != p.params.layout() {
            return Err(Error::Checkpoint("policy checkpoint layout does not match its domains".into()));
        }
        p.params = params;
        Ok(p)
    }

    /// Copies this policy and registers `domain` with a fresh head. The
    /// shared layer and the existing heads are kept bit for bit.
    pub fn clone_for_transfer<R: Rng + ?Sized>(&self, domain: &DomainSpec, rng: &mut R) -> Result<Self> {
        let mut p = self.clone();
        let index = p.add_head(domain)?;
        p.init_head(index, rng);
        Ok(p)
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn obs_width(&self) -> usize {
        self.obs_width
    }

    pub fn domains(&self) -> &[DomainSpec] {
        &self.domains
    }

    pub fn domain_index(&self, name: &str) -> Result<usize> {
        self.domains
            .iter()
            .position(|d| d.name == name)
            .ok_or_else(|| Error::UnknownDomain(name.to_string()))
    }

    pub fn action_space(&self, domain: usize) -> Result<&ActionSpace> {
        self.spaces.get(domain).ok_or_else(|| Error::UnknownDomain(format!("#{domain}")))
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        self.params.set_values(values)
    }

    pub fn shared_range(&self) -> Range<usize> {
        self.shared_range.clone()
    }

    pub fn head_range(&self, domain: usize) -> Range<usize> {
        self.heads[domain].range.clone()
    }

    fn check(&self, obs: &[f64], domain: usize) -> Result<()> {
        if domain >= self.heads.len() {
            return Err(Error::UnknownDomain(format!("#{domain}")));
        }
        if obs.len() != self.obs_width {
            return Err(Error::dim("policy observation", self.obs_width, obs.len()));
        }
        Ok(())
    }

    fn logits_at(&self, params: &[f64], obs: &[f64], domain: usize) -> Vec<f64> {
        let embed = self.shared.forward(&params[self.shared_range.clone()], obs);
        let head = &self.heads[domain];
        head.layer.forward(&params[head.range.clone()], &embed)
    }

    /// Action distribution at the current parameters.
    pub fn action_probs(&self, obs: &[f64], domain: usize) -> Result<Vec<f64>> {
        self.action_probs_at(self.params.values(), obs, domain)
    }

    /// Action distribution at arbitrary parameters `params`.
    pub fn action_probs_at(&self, params: &[f64], obs: &[f64], domain: usize) -> Result<Vec<f64>> {
        self.check(obs, domain)?;
        if params.len() != self.params.len() {
            return Err(Error::dim("policy parameters", self.params.len(), params.len()));
        }
        Ok(softmax(&self.logits_at(params, obs, domain)))
    }
}

impl CategoricalModel for MultiDomainPolicy {
    type State = PolicyState;

    fn param_count(&self) -> usize {
        self.params.len()
    }

    fn logits(&self, params: &[f64], state: &PolicyState) -> Vec<f64> {
        self.logits_at(params, &state.obs, state.domain)
    }

    fn logits_jvp(&self, params: &[f64], state: &PolicyState, direction: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let sr = self.shared_range.clone();
        let embed = self.shared.forward(&params[sr.clone()], &state.obs);
        let dembed = self.shared.jvp(&params[sr.clone()], &direction[sr], &state.obs, None, &embed);
        let head = &self.heads[state.domain];
        let hr = head.range.clone();
        let z = head.layer.forward(&params[hr.clone()], &embed);
        let dz = head.layer.jvp(&params[hr.clone()], &direction[hr], &embed, Some(&dembed), &z);
        (z, dz)
    }

    fn logits_vjp(&self, params: &[f64], state: &PolicyState, dlogits: &[f64], grad: &mut [f64]) {
        let sr = self.shared_range.clone();
        let embed = self.shared.forward(&params[sr.clone()], &state.obs);
        let head = &self.heads[state.domain];
        let hr = head.range.clone();
        let z = head.layer.forward(&params[hr.clone()], &embed);
        let mut dembed = vec![0.0; embed.len()];
        head.layer
            .backward(&params[hr.clone()], &embed, &z, dlogits, &mut grad[hr], Some(&mut dembed));
        self.shared
            .backward(&params[sr.clone()], &state.obs, &embed, &dembed, &mut grad[sr], None);
    }
}
