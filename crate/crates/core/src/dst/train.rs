use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::corpus::LabeledDialog;
use super::model::{DstConfig, DstModel, EncodedDialog};
use crate::env::DomainSpec;
use crate::nn::{linalg, Adam, Differentiable};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DstTrainingReport {
    /// Mean training loss of each epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
    /// Validation joint accuracy (averaged over domains) after each epoch.
    pub validation_accuracy: Vec<f64>,
    /// Epoch whose parameters were returned, counted from 0.
    pub best_epoch: usize,
}

/// Per-dialog, per-slot weights realising "mean over domains of mean over
/// slots of mean over supervised turns".
fn loss_weights(model: &DstModel, batch: &[&EncodedDialog]) -> Vec<Vec<f64>> {
    let n_domains = model.domains().len();
    let mut per_domain = vec![0usize; n_domains];
    for d in batch {
        per_domain[d.domain] += 1;
    }
    let present = per_domain.iter().filter(|&&n| n > 0).count() as f64;
    batch
        .iter()
        .map(|d| {
            let slots = d.labels.len();
            (0..slots)
                .map(|s| {
                    let turns = d.supervised_turns(s).max(1) as f64;
                    1.0 / (present * per_domain[d.domain] as f64 * slots as f64 * turns)
                })
                .collect()
        })
        .collect()
}

/// The multi-task tracking objective over a batch of encoded dialogs.
pub struct DstObjective<'a> {
    pub model: &'a DstModel,
}

impl Differentiable for DstObjective<'_> {
    type Batch = [EncodedDialog];

    fn loss(&self, params: &[f64], batch: &[EncodedDialog]) -> Result<f64> {
        let refs: Vec<&EncodedDialog> = batch.iter().collect();
        let w = loss_weights(self.model, &refs);
        Ok(refs
            .iter()
            .zip(&w)
            .map(|(d, w)| self.model.dialog_loss(params, d, w, None, None))
            .sum())
    }

    fn loss_and_grad(&self, params: &[f64], batch: &[EncodedDialog]) -> Result<(f64, Vec<f64>)> {
        let refs: Vec<&EncodedDialog> = batch.iter().collect();
        Ok(batch_grad(self.model, params, &refs, None))
    }
}

/// `dropout` holds the rate and a base seed; dialog `i` of the batch masks
/// with seed `base + i`.
fn batch_grad(
    model: &DstModel,
    params: &[f64],
    batch: &[&EncodedDialog],
    dropout: Option<(f64, u64)>,
) -> (f64, Vec<f64>) {
    let w = loss_weights(model, batch);
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .zip(&w)
        .enumerate()
        .map(|(i, (d, w))| {
            let mut g = vec![0.0; params.len()];
            let drop = dropout.map(|(rate, base)| (rate, base.wrapping_add(i as u64)));
            let l = model.dialog_loss(params, d, w, Some(&mut g), drop);
            (l, g)
        })
        .collect();
    // Summed in batch order so the result does not depend on thread timing.
    let mut total = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        linalg::add_assign(&mut total, &g);
    }
    (loss, total)
}

/// Mean over domains of mean over slots of mean per-turn cross-entropy,
/// counting for each slot only the turns at or after its first mention.
pub fn mtl_loss(model: &DstModel, dialogs: &[LabeledDialog]) -> Result<f64> {
    if dialogs.is_empty() {
        return Err(Error::Empty("mtl_loss needs at least one dialog".into()));
    }
    let encoded = dialogs.iter().map(|d| model.encode_dialog(d)).collect::<Result<Vec<_>>>()?;
    DstObjective { model }.loss(model.params().values(), &encoded)
}

/// Fraction of dialogs whose final-turn prediction gets every slot right.
pub fn joint_accuracy(model: &DstModel, dialogs: &[LabeledDialog], domain: &str) -> Result<f64> {
    let idx = model.domain_index(domain)?;
    let selected: Vec<&LabeledDialog> = dialogs.iter().filter(|d| d.domain == domain).collect();
    if selected.is_empty() {
        return Err(Error::Empty(format!("no test dialogs for domain {domain}")));
    }
    let correct: Vec<bool> = selected
        .par_iter()
        .map(|d| -> Result<bool> {
            let enc = model.encode_dialog(d)?;
            let obs = model.observations(&enc.turns);
            let Some(last) = obs.last() else {
                return Ok(false);
            };
            Ok(model.predict_slots(last, idx)?.values() == d.labels)
        })
        .collect::<Result<_>>()?;
    Ok(correct.iter().filter(|&&c| c).count() as f64 / selected.len() as f64)
}

/// Trains a tracker jointly on every domain's corpus.
///
/// `corpora` pairs each domain with its labelled dialogs. A
/// `validation_fraction` share of each corpus is held out; the parameters
/// with the best mean validation joint accuracy are returned.
pub fn train_dst<R: Rng + ?Sized>(
    corpora: &[(DomainSpec, Vec<LabeledDialog>)],
    config: &DstConfig,
    rng: &mut R,
) -> Result<(DstModel, DstTrainingReport)> {
    if corpora.is_empty() {
        return Err(Error::Empty("no corpora".into()));
    }
    let domains: Vec<DomainSpec> = corpora.iter().map(|(d, _)| d.clone()).collect();
    let mut model = DstModel::new(&domains, *config, rng)?;
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for (domain, dialogs) in corpora {
        if dialogs.is_empty() {
            return Err(Error::Empty(format!("empty corpus for domain {}", domain.name)));
        }
        if let Some(bad) = dialogs.iter().find(|d| d.domain != domain.name) {
            return Err(Error::Contract(format!(
                "dialog of domain {} in the corpus of {}",
                bad.domain, domain.name
            )));
        }
        let n_valid = ((dialogs.len() as f64 * config.validation_fraction).round() as usize).min(dialogs.len() - 1);
        let split = dialogs.len() - n_valid;
        for d in &dialogs[..split] {
            train.push(model.encode_dialog(d)?);
        }
        valid.extend(dialogs[split..].iter().cloned());
    }

    let mut adam = Adam::new(model.params().len(), config.learning_rate);
    let mut params = model.params().values().to_vec();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut report = DstTrainingReport {
        epoch_losses: Vec::new(),
        validation_accuracy: Vec::new(),
        best_epoch: 0,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs.max(1) {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&EncodedDialog> = chunk.iter().map(|&i| &train[i]).collect();
            let dropout = (config.dropout > 0.0).then(|| (config.dropout, rng.gen::<u64>()));
            let (loss, mut g) = batch_grad(&model, &params, &batch, dropout);
            if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("dst gradient at epoch {epoch}")));
            }
            let norm = linalg::norm(&g);
            if config.grad_clip > 0.0 && norm > config.grad_clip {
                linalg::scale(config.grad_clip / norm, &mut g);
            }
            adam.step(&mut params, &g);
            model.set_params(&params)?;
            epoch_loss += loss;
            batches += 1;
        }
        report.epoch_losses.push(epoch_loss / batches.max(1) as f64);
        let acc = if valid.is_empty() {
            0.0
        } else {
            let mut sum = 0.0;
            let mut n = 0;
            for d in &domains {
                if valid.iter().any(|v| v.domain == d.name) {
                    sum += joint_accuracy(&model, &valid, &d.name)?;
                    n += 1;
                }
            }
            sum / n as f64
        };
        report.validation_accuracy.push(acc);
        log::debug!("dst epoch {epoch}: loss {:.4} validation joint accuracy {acc:.4}", report.epoch_losses[epoch]);
        // Without validation data the final epoch wins.
        if valid.is_empty() || best.as_ref().map_or(true, |(b, _, _)| acc > *b) {
            best = Some((acc, epoch, params.clone()));
        }
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    model.set_params(&best_params)?;
    report.best_epoch = best_epoch;
    Ok((model, report))
}
