use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ConfigIssue, Error, Result};

pub const DEFAULT_P_DROP: f64 = 0.1;
pub const DEFAULT_SHUFFLE_K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub p_drop: f64,
    /// Maximum displacement of a surviving token.
    pub shuffle_k: usize,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            p_drop: DEFAULT_P_DROP,
            shuffle_k: DEFAULT_SHUFFLE_K,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig {
            p_drop: 0.0,
            shuffle_k: 0,
            seed: 0,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        NoiseConfig { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if (0.0..1.0).contains(&self.p_drop) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(vec![ConfigIssue {
                key: "p_drop".into(),
                reason: format!("{} not in [0, 1)", self.p_drop),
            }]))
        }
    }
}

/// Word dropout followed by a local shuffle, seeded by `cfg.seed`.
pub fn add_noise<T: Clone>(tokens: &[T], cfg: &NoiseConfig) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    add_noise_with(tokens, cfg.p_drop, cfg.shuffle_k, &mut rng)
}

/// Drops each token with probability `p_drop` (one random token survives if
/// all would be dropped), then sorts survivors by `i + U[0, k+1)`, which
/// moves no token more than `k` places.
pub fn add_noise_with<T: Clone, R: Rng + ?Sized>(
    tokens: &[T],
    p_drop: f64,
    k: usize,
    rng: &mut R,
) -> Vec<T> {
    if tokens.is_empty() {
        return Vec::new();
    }
    let mut kept: Vec<&T> = if p_drop > 0.0 {
        tokens
            .iter()
            .filter(|_| rng.random::<f64>() >= p_drop)
            .collect()
    } else {
        tokens.iter().collect()
    };
    if kept.is_empty() {
        kept.push(&tokens[rng.random_range(0..tokens.len())]);
    }
    if k == 0 || kept.len() < 2 {
        return kept.into_iter().cloned().collect();
    }
    let span = (k + 1) as f64;
    let mut keyed: Vec<(f64, &T)> = kept
        .into_iter()
        .enumerate()
        .map(|(i, t)| (i as f64 + rng.random::<f64>() * span, t))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    keyed.into_iter().map(|(_, t)| t.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_is_identity() {
        let x = [5u32, 6, 7, 8];
        assert_eq!(add_noise(&x, &NoiseConfig::none()), x);
    }

    #[test]
    fn keep_one_rule() {
        let cfg = NoiseConfig {
            p_drop: 0.99,
            shuffle_k: 3,
            seed: 4,
        };
        for seed in 0..50 {
            assert_eq!(add_noise(&[9u32], &cfg.with_seed(seed)), [9]);
            assert!(!add_noise(&[1u32, 2, 3], &cfg.with_seed(seed)).is_empty());
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let x: Vec<u32> = (0..20).collect();
        let cfg = NoiseConfig::default().with_seed(9);
        assert_eq!(add_noise(&x, &cfg), add_noise(&x, &cfg));
    }

    #[test]
    fn validation() {
        assert!(NoiseConfig {
            p_drop: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(NoiseConfig::default().validate().is_ok());
    }
}
