use super::domain::{DomainSpec, ANSWER_CARDINALITY};
use crate::rng::{fnv1a, mix64, FNV_OFFSET};
use crate::{Error, Result};

/// Deterministic knowledge base: maps a complete user-slot assignment to one
/// answer per system slot by hashing `(domain name, value_vocab_seed,
/// values in slot order)`.
pub fn kb_lookup(domain: &DomainSpec, user_values: &[usize]) -> Result<Vec<usize>> {
    if user_values.len() != domain.user_slots.len() {
        return Err(Error::Contract(format!(
            "kb lookup for `{}` needs {} user values, got {}",
            domain.name,
            domain.user_slots.len(),
            user_values.len()
        )));
    }
    let mut h = fnv1a(domain.name.as_bytes(), FNV_OFFSET);
    h = fnv1a(&domain.value_vocab_seed.to_le_bytes(), h);
    for (i, (&v, slot)) in user_values.iter().zip(&domain.user_slots).enumerate() {
        if v >= slot.cardinality {
            return Err(Error::Contract(format!("value {v} out of range for slot `{}`", slot.name)));
        }
        h = fnv1a(&(i as u64).to_le_bytes(), h);
        h = fnv1a(&(v as u64).to_le_bytes(), h);
    }
    let base = mix64(h);
    Ok((0..domain.system_slots.len())
        .map(|j| (mix64(base ^ mix64(j as u64 + 1)) % ANSWER_CARDINALITY as u64) as usize)
        .collect())
}
