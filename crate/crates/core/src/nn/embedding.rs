use rand::Rng;

use crate::{Error, Result};

/// Lookup table of `vocab x width` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedding {
    pub vocab: usize,
    pub width: usize,
}

impl Embedding {
    pub fn new(vocab: usize, width: usize) -> Self {
        Self { vocab, width }
    }

    pub fn param_count(&self) -> usize {
        self.vocab * self.width
    }

    /// Rows uniform in `±sqrt(3 / width)`, giving roughly unit-norm vectors.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        let bound = (3.0 / self.width as f64).sqrt();
        params.iter_mut().for_each(|p| *p = rng.gen_range(-bound..=bound));
    }

    pub fn lookup<'a>(&self, params: &'a [f64], index: usize) -> Result<&'a [f64]> {
        if index >= self.vocab {
            return Err(Error::Config(format!(
                "embedding index {index} out of range for vocabulary of {}",
                self.vocab
            )));
        }
        Ok(&params[index * self.width..(index + 1) * self.width])
    }

    pub fn accumulate(&self, grad: &mut [f64], index: usize, d: &[f64]) {
        let row = &mut grad[index * self.width..(index + 1) * self.width];
        for (g, v) in row.iter_mut().zip(d) {
            *g += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_checks_bounds() {
        let e = Embedding::new(3, 2);
        let p = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(e.lookup(&p, 2).unwrap(), &[4.0, 5.0]);
        assert!(e.lookup(&p, 3).is_err());
    }
}
