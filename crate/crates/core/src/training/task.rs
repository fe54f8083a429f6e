//! Synthetic next-token prediction on a seeded first-order Markov chain.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Transition mass spread uniformly over all states; the rest goes to each
/// state's favored successors.
const FLOOR_MASS: f64 = 0.1;
const FAVORED_MASS: [f64; 3] = [0.5, 0.25, 0.15];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyTask {
    pub vocab: usize,
    pub seq_len: usize,
    pub seed: u64,
    pub train_size: usize,
    pub val_size: usize,
}

impl Default for ToyTask {
    fn default() -> Self {
        ToyTask {
            vocab: 20,
            seq_len: 32,
            seed: 0,
            train_size: 256,
            val_size: 64,
        }
    }
}

/// Token sequences of length `seq_len + 1`: step `t` reads token `t` and
/// predicts token `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: usize,
    pub train: Vec<Vec<usize>>,
    pub val: Vec<Vec<usize>>,
}

impl ToyTask {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.vocab < FAVORED_MASS.len() {
            return Err(ConfigError::Invalid(format!(
                "vocab must be at least {}, got {}",
                FAVORED_MASS.len(),
                self.vocab
            )));
        }
        for (field, v) in [
            ("seq_len", self.seq_len),
            ("train_size", self.train_size),
            ("val_size", self.val_size),
        ] {
            if v == 0 {
                return Err(ConfigError::Zero { field });
            }
        }
        Ok(())
    }

    /// Row-stochastic `vocab x vocab` transition matrix.
    pub fn transitions(&self) -> Vec<Vec<f64>> {
        let v = self.vocab;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..v)
            .map(|_| {
                let mut row = vec![FLOOR_MASS / v as f64; v];
                for (j, mass) in sample(&mut rng, v, FAVORED_MASS.len())
                    .into_iter()
                    .zip(FAVORED_MASS)
                {
                    row[j] += mass;
                }
                row
            })
            .collect()
    }

    pub fn generate(&self) -> Result<Dataset, ConfigError> {
        self.validate()?;
        let rows = self.transitions();
        let samplers: Vec<WeightedIndex<f64>> = rows
            .iter()
            .map(|r| WeightedIndex::new(r).expect("positive weights"))
            .collect();
        // Separate stream from the one that drew the chain.
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let sequence = |rng: &mut ChaCha8Rng| {
            let mut s = Vec::with_capacity(self.seq_len + 1);
            s.push(rng.gen_range(0..self.vocab));
            for _ in 0..self.seq_len {
                let next = samplers[*s.last().unwrap()].sample(rng);
                s.push(next);
            }
            s
        };
        let train = (0..self.train_size).map(|_| sequence(&mut rng)).collect();
        let val = (0..self.val_size).map(|_| sequence(&mut rng)).collect();
        Ok(Dataset {
            vocab: self.vocab,
            train,
            val,
        })
    }

    /// Cross-entropy of the true chain under its stationary distribution:
    /// the best validation CE any model can expect.
    pub fn entropy_rate(&self) -> f64 {
        let p = self.transitions();
        let v = self.vocab;
        let mut pi = vec![1.0 / v as f64; v];
        for _ in 0..1000 {
            let mut next = vec![0.0; v];
            for (i, row) in p.iter().enumerate() {
                for (j, pij) in row.iter().enumerate() {
                    next[j] += pi[i] * pij;
                }
            }
            pi = next;
        }
        p.iter()
            .zip(&pi)
            .map(|(row, w)| -w * row.iter().map(|q| q * q.ln()).sum::<f64>())
            .sum()
    }
}

impl Dataset {
    /// Validation CE of the add-one-smoothed unigram distribution of the
    /// training targets.
    pub fn unigram_val_ce(&self) -> f64 {
        let mut counts = vec![1.0; self.vocab];
        for s in &self.train {
            for &t in &s[1..] {
                counts[t] += 1.0;
            }
        }
        let total: f64 = counts.iter().sum();
        let (mut ce, mut n) = (0.0, 0usize);
        for s in &self.val {
            for &t in &s[1..] {
                ce -= (counts[t] / total).ln();
                n += 1;
            }
        }
        ce / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_given_seed() {
        let task = ToyTask::default();
        assert_eq!(task.generate().unwrap(), task.generate().unwrap());
        let other = ToyTask { seed: 1, ..task };
        assert_ne!(task.generate().unwrap().train, other.generate().unwrap().train);
    }

    #[test]
    fn shapes_and_range() {
        let task = ToyTask::default();
        let d = task.generate().unwrap();
        assert_eq!(d.train.len(), 256);
        assert_eq!(d.val.len(), 64);
        for s in d.train.iter().chain(&d.val) {
            assert_eq!(s.len(), 33);
            assert!(s.iter().all(|&t| t < 20));
        }
    }

    #[test]
    fn rows_are_distributions() {
        for row in ToyTask::default().transitions() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn structure_beats_unigram() {
        let task = ToyTask::default();
        let d = task.generate().unwrap();
        assert!(task.entropy_rate() + 0.5 < d.unigram_val_ce());
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(ToyTask {
            vocab: 2,
            ..ToyTask::default()
        }
        .generate()
        .is_err());
        assert!(ToyTask {
            seq_len: 0,
            ..ToyTask::default()
        }
        .generate()
        .is_err());
    }
}
