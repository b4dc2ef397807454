use std::collections::{HashMap, HashSet};
use std::ops::{Deref, Range};
use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corpus::turn_tokens;
use super::vocab::Vocabulary;
use crate::env::{value_token, Actor, DialogAct, DomainSpec, Slot, UserResponse};
use crate::nn::{cross_entropy, linalg, softmax, Activation, Dense, Embedding, Lstm, LstmState, LstmTrace, ParamVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DstConfig {
    pub word_emb_width: usize,
    /// Width of each direction of the utterance encoder.
    pub utt_hidden_width: usize,
    pub dialog_hidden_width: usize,
    pub shared_dense_width: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Dialogs per mini-batch.
    pub batch_size: usize,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub grad_clip: f64,
    /// Share of each domain's training dialogs held out for model selection.
    pub validation_fraction: f64,
    /// Dropout rate on the inputs of the dialog recurrence and the shared
    /// layer during training.
    pub dropout: f64,
}

impl DstConfig {
    /// Widths of 64 with small batches; at 32 the bus domain (30 dates)
    /// stays below 20% joint accuracy on the desk corpus.
    pub fn desk() -> Self {
        Self {
            word_emb_width: 64,
            utt_hidden_width: 64,
            dialog_hidden_width: 64,
            shared_dense_width: 64,
            epochs: 40,
            learning_rate: 3e-3,
            batch_size: 8,
            grad_clip: 5.0,
            validation_fraction: 0.2,
            dropout: 0.3,
        }
    }

    pub fn paper() -> Self {
        Self {
            word_emb_width: 400,
            utt_hidden_width: 300,
            dialog_hidden_width: 200,
            shared_dense_width: 200,
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 32,
            ..Self::desk()
        }
    }

    pub fn observation_width(&self) -> usize {
        self.dialog_hidden_width
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.word_emb_width,
            self.utt_hidden_width,
            self.dialog_hidden_width,
            self.shared_dense_width,
            self.batch_size,
        ];
        if widths.contains(&0) {
            return Err(Error::Config("dst widths and batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("dst learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dst dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

impl Default for DstConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// The tracker's dialog-level hidden state; this is what policies observe.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Deref for Observation {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub type DialogHidden = LstmState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotBelief {
    pub value: usize,
    pub confidence: f64,
}

/// Per user slot: most likely value and its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub slots: Vec<SlotBelief>,
}

impl BeliefState {
    pub fn values(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.value).collect()
    }
}

#[derive(Debug, Clone)]
struct Head {
    layer: Dense,
    range: Range<usize>,
}

/// A dialog rendered to token ids, ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDialog {
    pub domain: usize,
    pub turns: Vec<Vec<u32>>,
    pub labels: Vec<usize>,
    /// `mentioned[t][s]`: a value of slot `s` has appeared in turns `..=t`.
    pub mentioned: Vec<Vec<bool>>,
}

impl EncodedDialog {
    /// Number of turns at which slot `s` is supervised.
    pub fn supervised_turns(&self, s: usize) -> usize {
        self.mentioned.iter().filter(|m| m[s]).count()
    }
}

struct UttTrace {
    fwd: Vec<LstmTrace>,
    bwd: Vec<LstmTrace>,
}

struct TurnTrace {
    utt: UttTrace,
    dialog: LstmTrace,
    /// Input of the shared layer: the dialog hidden state after dropout.
    obs: Vec<f64>,
    shared_out: Vec<f64>,
    logits: Vec<Vec<f64>>,
    enc_mask: Option<Vec<f64>>,
    obs_mask: Option<Vec<f64>>,
}

/// Shared encoders plus one classification head per (domain, user slot).
#[derive(Debug, Clone)]
pub struct DstModel {
    config: DstConfig,
    vocab: Arc<Vocabulary>,
    domains: Vec<DomainSpec>,
    params: ParamVector,
    embed: Embedding,
    utt: Lstm,
    dialog: Lstm,
    shared: Dense,
    r_embed: Range<usize>,
    r_fwd: Range<usize>,
    r_bwd: Range<usize>,
    r_dialog: Range<usize>,
    r_shared: Range<usize>,
    heads: Vec<Vec<Head>>,
}

impl DstModel {
    /// Zero-initialised model; see [`DstModel::new`] for a random one.
    fn skeleton(domains: &[DomainSpec], config: DstConfig) -> Result<Self> {
        config.validate()?;
        if domains.is_empty() {
            return Err(Error::Empty("dst needs at least one domain".into()));
        }
        for d in domains {
            d.validate()?;
        }
        let vocab = Arc::new(Vocabulary::build(domains)?);
        let embed = Embedding::new(vocab.len(), config.word_emb_width);
        let utt = Lstm::new(config.word_emb_width, config.utt_hidden_width);
        let dialog = Lstm::new(2 * config.utt_hidden_width, config.dialog_hidden_width);
        let shared = Dense::new(config.dialog_hidden_width, config.shared_dense_width, Activation::Relu);
        let mut params = ParamVector::new();
        let r_embed = params.push("dst.embed", &[embed.vocab, embed.width]);
        let r_fwd = params.push("dst.utt.fwd", &utt.shape());
        let r_bwd = params.push("dst.utt.bwd", &utt.shape());
        let r_dialog = params.push("dst.dialog", &dialog.shape());
        let r_shared = params.push("dst.shared", &shared.shape());
        let mut heads = Vec::new();
        for d in domains {
            let mut slots = Vec::new();
            for s in &d.user_slots {
                let layer = Dense::new(config.shared_dense_width, s.cardinality, Activation::Identity);
                let range = params.push(format!("dst.head.{}.{}", d.name, s.name), &layer.shape());
                slots.push(Head { layer, range });
            }
            heads.push(slots);
        }
        Ok(Self {
            config,
            vocab,
            domains: domains.to_vec(),
            params,
            embed,
            utt,
            dialog,
            shared,
            r_embed,
            r_fwd,
            r_bwd,
            r_dialog,
            r_shared,
            heads,
        })
    }

    pub fn new<R: Rng + ?Sized>(domains: &[DomainSpec], config: DstConfig, rng: &mut R) -> Result<Self> {
        let mut m = Self::skeleton(domains, config)?;
        let p = m.params.values_mut();
        m.embed.init(&mut p[m.r_embed.clone()], rng);
        m.utt.init(&mut p[m.r_fwd.clone()], rng);
        m.utt.init(&mut p[m.r_bwd.clone()], rng);
        m.dialog.init(&mut p[m.r_dialog.clone()], rng);
        m.shared.init(&mut p[m.r_shared.clone()], 1.0, rng);
        for slots in &m.heads {
            for h in slots {
                h.layer.init(&mut p[h.range.clone()], 1.0, rng);
            }
        }
        Ok(m)
    }

    /// Rebuilds a model from checkpointed parameters.
    pub fn from_params(domains: &[DomainSpec], config: DstConfig, params: ParamVector) -> Result<Self> {
        let mut m = Self::skeleton(domains, config)?;
        if params.layout() != m.params.layout() {
            return Err(Error::Checkpoint(
                "dst checkpoint layout does not match the configured domains and widths".into(),
            ));
        }
        m.params = params;
        Ok(m)
    }

    pub fn config(&self) -> &DstConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn domains(&self) -> &[DomainSpec] {
        &self.domains
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        self.params.set_values(values)
    }

    pub fn observation_width(&self) -> usize {
        self.config.dialog_hidden_width
    }

    pub fn domain_index(&self, name: &str) -> Result<usize> {
        self.domains
            .iter()
            .position(|d| d.name == name)
            .ok_or_else(|| Error::UnknownDomain(name.to_string()))
    }

    pub fn initial_hidden(&self) -> DialogHidden {
        LstmState::zeros(self.config.dialog_hidden_width)
    }

    pub fn encode_dialog(&self, dialog: &super::LabeledDialog) -> Result<EncodedDialog> {
        let domain = self.domain_index(&dialog.domain)?;
        let spec = &self.domains[domain];
        if dialog.labels.len() != spec.user_slots.len() {
            return Err(Error::dim("dialog labels", spec.user_slots.len(), dialog.labels.len()));
        }
        let value_ids: Vec<HashSet<u32>> = spec
            .user_slots
            .iter()
            .enumerate()
            .map(|(s, slot)| {
                (0..slot.cardinality)
                    .map(|v| self.vocab.id(&value_token(spec, Slot::User(s), v)))
                    .collect()
            })
            .collect();
        let turns: Vec<Vec<u32>> = dialog.turns.iter().map(|t| self.vocab.encode(t)).collect();
        let mut seen = vec![false; value_ids.len()];
        let mentioned = turns
            .iter()
            .map(|ids| {
                for (flag, set) in seen.iter_mut().zip(&value_ids) {
                    *flag |= ids.iter().any(|id| set.contains(id));
                }
                seen.clone()
            })
            .collect();
        Ok(EncodedDialog {
            domain,
            turns,
            labels: dialog.labels.clone(),
            mentioned,
        })
    }

    fn encode_utterance_with(&self, p: &[f64], ids: &[u32]) -> Vec<f64> {
        let u = self.utt.hidden;
        let emb = &p[self.r_embed.clone()];
        let mut f = LstmState::zeros(u);
        for &id in ids {
            let x = self.embed.lookup(emb, id as usize).expect("ids come from the vocabulary");
            f = self.utt.step(&p[self.r_fwd.clone()], x, &f);
        }
        let mut b = LstmState::zeros(u);
        for &id in ids.iter().rev() {
            let x = self.embed.lookup(emb, id as usize).expect("ids come from the vocabulary");
            b = self.utt.step(&p[self.r_bwd.clone()], x, &b);
        }
        let mut out = f.h;
        out.extend_from_slice(&b.h);
        out
    }

    /// Final forward state ⊕ final backward state of the utterance encoder.
    pub fn encode_utterance(&self, ids: &[u32]) -> Vec<f64> {
        if ids.is_empty() {
            return self.encode_utterance_with(self.params.values(), &[1]);
        }
        self.encode_utterance_with(self.params.values(), ids)
    }

    /// One dialog-recurrence step on an already encoded utterance.
    pub fn dialog_step(&self, utterance: &[f64], hidden: &DialogHidden) -> DialogHidden {
        self.dialog.step(&self.params.values()[self.r_dialog.clone()], utterance, hidden)
    }

    /// Encodes one turn (system utterance ⊕ user utterance) and advances the
    /// dialog state.
    pub fn encode_turn<S: AsRef<str>>(&self, tokens: &[S], hidden: &DialogHidden) -> (Observation, DialogHidden) {
        let ids = self.vocab.encode(tokens);
        let next = self.dialog_step(&self.encode_utterance(&ids), hidden);
        (Observation(next.h.clone()), next)
    }

    fn head_logits_with(&self, p: &[f64], obs: &[f64], domain: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let shared_out = self.shared.forward(&p[self.r_shared.clone()], obs);
        let logits = self.heads[domain]
            .iter()
            .map(|h| h.layer.forward(&p[h.range.clone()], &shared_out))
            .collect();
        (shared_out, logits)
    }

    /// Per-slot value distributions for `domain`.
    pub fn slot_distributions(&self, obs: &[f64], domain: usize) -> Result<Vec<Vec<f64>>> {
        if domain >= self.heads.len() {
            return Err(Error::UnknownDomain(format!("#{domain}")));
        }
        if obs.len() != self.observation_width() {
            return Err(Error::dim("dst observation", self.observation_width(), obs.len()));
        }
        let (_, logits) = self.head_logits_with(self.params.values(), obs, domain);
        Ok(logits.iter().map(|z| softmax(z)).collect())
    }

    pub fn predict_slots(&self, obs: &[f64], domain: usize) -> Result<BeliefState> {
        let dists = self.slot_distributions(obs, domain)?;
        Ok(BeliefState {
            slots: dists
                .iter()
                .map(|p| {
                    let value = linalg::argmax(p);
                    SlotBelief {
                        value,
                        confidence: p[value],
                    }
                })
                .collect(),
        })
    }

    /// Observation after every turn of `turns`.
    pub fn observations(&self, turns: &[Vec<u32>]) -> Vec<Observation> {
        let mut hidden = self.initial_hidden();
        turns
            .iter()
            .map(|ids| {
                hidden = self.dialog_step(&self.encode_utterance(ids), &hidden);
                Observation(hidden.h.clone())
            })
            .collect()
    }

    fn forward_utterance_traced(&self, p: &[f64], ids: &[u32]) -> UttTrace {
        let emb = &p[self.r_embed.clone()];
        let mut fwd = Vec::with_capacity(ids.len());
        let mut state = LstmState::zeros(self.utt.hidden);
        for &id in ids {
            let x = self.embed.lookup(emb, id as usize).expect("ids come from the vocabulary");
            let t = self.utt.step_traced(&p[self.r_fwd.clone()], x, &state);
            state = t.state.clone();
            fwd.push(t);
        }
        let mut bwd = Vec::with_capacity(ids.len());
        let mut state = LstmState::zeros(self.utt.hidden);
        for &id in ids.iter().rev() {
            let x = self.embed.lookup(emb, id as usize).expect("ids come from the vocabulary");
            let t = self.utt.step_traced(&p[self.r_bwd.clone()], x, &state);
            state = t.state.clone();
            bwd.push(t);
        }
        UttTrace { fwd, bwd }
    }

    /// Cross-entropy summed over the supervised turns of one dialog, slot
    /// `s` weighted by `weights[s]`; accumulates the gradient into `grad`
    /// when given. `dropout` is a rate and a seed for masking the inputs of
    /// the dialog recurrence and of the shared layer.
    pub(crate) fn dialog_loss(
        &self,
        p: &[f64],
        dialog: &EncodedDialog,
        weights: &[f64],
        grad: Option<&mut [f64]>,
        dropout: Option<(f64, u64)>,
    ) -> f64 {
        let u = self.utt.hidden;
        let mut masks = dropout.filter(|(rate, _)| *rate > 0.0).map(|(rate, seed)| {
            let rng = crate::rng::stream(seed, &[crate::rng::label("dst-dropout")]);
            (rate, rng)
        });
        let mut draw = |n: usize| -> Option<Vec<f64>> {
            let (rate, rng) = masks.as_mut()?;
            let keep = 1.0 / (1.0 - *rate);
            Some((0..n).map(|_| if rng.gen::<f64>() < *rate { 0.0 } else { keep }).collect())
        };
        let mut hidden = self.initial_hidden();
        let mut traces = Vec::with_capacity(dialog.turns.len());
        let mut loss = 0.0;
        let mut dlogits_all = Vec::with_capacity(dialog.turns.len());
        for (ids, mentioned) in dialog.turns.iter().zip(&dialog.mentioned) {
            let ids: &[u32] = if ids.is_empty() { &[1] } else { ids };
            let utt = self.forward_utterance_traced(p, ids);
            let mut enc = utt.fwd.last().expect("non-empty").state.h.clone();
            enc.extend_from_slice(&utt.bwd.last().expect("non-empty").state.h);
            let enc_mask = draw(enc.len());
            if let Some(m) = &enc_mask {
                enc.iter_mut().zip(m).for_each(|(e, k)| *e *= k);
            }
            let dtrace = self.dialog.step_traced(&p[self.r_dialog.clone()], &enc, &hidden);
            hidden = dtrace.state.clone();
            let obs_mask = draw(hidden.h.len());
            let obs = match &obs_mask {
                Some(m) => hidden.h.iter().zip(m).map(|(h, k)| h * k).collect(),
                None => hidden.h.clone(),
            };
            let (shared_out, logits) = self.head_logits_with(p, &obs, dialog.domain);
            let mut dl = Vec::with_capacity(logits.len());
            for (s, (z, &label)) in logits.iter().zip(&dialog.labels).enumerate() {
                if !mentioned[s] {
                    dl.push(vec![0.0; z.len()]);
                    continue;
                }
                let (l, mut g) = cross_entropy(z, label);
                loss += weights[s] * l;
                linalg::scale(weights[s], &mut g);
                dl.push(g);
            }
            dlogits_all.push(dl);
            traces.push(TurnTrace {
                utt,
                dialog: dtrace,
                obs,
                shared_out,
                logits,
                enc_mask,
                obs_mask,
            });
        }
        let Some(grad) = grad else {
            return loss;
        };
        let dh_width = self.dialog.hidden;
        let mut dh_next = vec![0.0; dh_width];
        let mut dc_next = vec![0.0; dh_width];
        for ((t, dl), ids) in traces.iter().zip(&dlogits_all).zip(&dialog.turns).rev() {
            let ids: &[u32] = if ids.is_empty() { &[1] } else { ids };
            let mut dshared = vec![0.0; self.shared.output];
            for ((head, z), g) in self.heads[dialog.domain].iter().zip(&t.logits).zip(dl) {
                head.layer.backward(
                    &p[head.range.clone()],
                    &t.shared_out,
                    z,
                    g,
                    &mut grad[head.range.clone()],
                    Some(&mut dshared),
                );
            }
            let mut dobs = vec![0.0; dh_width];
            self.shared.backward(
                &p[self.r_shared.clone()],
                &t.obs,
                &t.shared_out,
                &dshared,
                &mut grad[self.r_shared.clone()],
                Some(&mut dobs),
            );
            if let Some(m) = &t.obs_mask {
                dobs.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
            }
            let mut dh = dh_next.clone();
            linalg::add_assign(&mut dh, &dobs);
            let mut denc = vec![0.0; 2 * u];
            let (dhp, dcp) = self.dialog.backward(
                &p[self.r_dialog.clone()],
                &t.dialog,
                &dh,
                &dc_next,
                &mut grad[self.r_dialog.clone()],
                Some(&mut denc),
            );
            dh_next = dhp;
            dc_next = dcp;
            if let Some(m) = &t.enc_mask {
                denc.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
            }
            self.backward_chain(p, &t.utt.fwd, ids.iter().copied(), self.r_fwd.clone(), &denc[..u], grad);
            self.backward_chain(p, &t.utt.bwd, ids.iter().rev().copied(), self.r_bwd.clone(), &denc[u..], grad);
        }
        loss
    }

    /// Backpropagates through one direction of the utterance encoder; `ids`
    /// are the tokens in the order the chain consumed them.
    fn backward_chain(
        &self,
        p: &[f64],
        chain: &[LstmTrace],
        ids: impl DoubleEndedIterator<Item = u32> + ExactSizeIterator,
        range: Range<usize>,
        dh_final: &[f64],
        grad: &mut [f64],
    ) {
        let mut dh = dh_final.to_vec();
        let mut dc = vec![0.0; self.utt.hidden];
        let mut dx = vec![0.0; self.embed.width];
        for (trace, id) in chain.iter().zip(ids).rev() {
            dx.iter_mut().for_each(|v| *v = 0.0);
            let (dhp, dcp) = self.utt.backward(&p[range.clone()], trace, &dh, &dc, &mut grad[range.clone()], Some(&mut dx));
            self.embed.accumulate(&mut grad[self.r_embed.clone()], id as usize, &dx);
            dh = dhp;
            dc = dcp;
        }
    }
}

/// Memoising wrapper used during rollouts. The utterance encoding of a turn
/// depends only on the acts exchanged, so it is computed once per distinct
/// (domain, system act, user response).
#[derive(Debug)]
pub struct CachedEncoder {
    model: Arc<DstModel>,
    cache: Mutex<HashMap<(usize, DialogAct, UserResponse), Arc<Vec<f64>>>>,
}

impl CachedEncoder {
    pub fn new(model: Arc<DstModel>) -> Self {
        Self {
            model,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn model(&self) -> &DstModel {
        &self.model
    }

    pub fn shared_model(&self) -> Arc<DstModel> {
        Arc::clone(&self.model)
    }

    fn utterance(&self, domain: usize, system: &DialogAct, user: &UserResponse) -> Result<Arc<Vec<f64>>> {
        let key = (domain, *system, *user);
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let spec = &self.model.domains[domain];
        let tokens = turn_tokens(system, user, spec)?;
        let enc = Arc::new(self.model.encode_utterance(&self.model.vocab.encode(&tokens)));
        self.cache.lock().expect("cache lock").insert(key, Arc::clone(&enc));
        Ok(enc)
    }

    /// Advances the dialog state by one exchange.
    pub fn step(
        &self,
        domain: usize,
        hidden: &DialogHidden,
        system: &DialogAct,
        user: &UserResponse,
    ) -> Result<(Observation, DialogHidden)> {
        let enc = self.utterance(domain, system, user)?;
        let next = self.model.dialog_step(&enc, hidden);
        Ok((Observation(next.h.clone()), next))
    }

    /// State after the opening greeting exchange.
    pub fn opening(&self, domain: usize) -> Result<(Observation, DialogHidden)> {
        self.step(
            domain,
            &self.model.initial_hidden(),
            &DialogAct::greet(Actor::System),
            &UserResponse::single(DialogAct::greet(Actor::User)),
        )
    }

    pub fn beliefs(&self, obs: &[f64], domain: usize) -> Result<BeliefState> {
        self.model.predict_slots(obs, domain)
    }
}
