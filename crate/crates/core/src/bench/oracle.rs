use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::simgen::{gen_support_sequence, sample_seed, SystemConfig};

/// Empirical mean of `|∪ᵢ Γ^[i]|` over `trials` support sequences drawn with
/// the generator's own law.
pub fn monte_carlo_union_rows(cfg: &SystemConfig, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    cfg.support_bounds()?;
    let sum = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, k as u64));
            gen_support_sequence(cfg, &mut rng).map(|s| s.union_len() as u64)
        })
        .try_reduce(|| 0u64, |a, b| Ok(a + b))?;
    Ok(sum as f64 / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::compute_s;
    use crate::simgen::SupportLaw;

    fn cfg(m: usize, frames: usize, law: SupportLaw) -> SystemConfig {
        SystemConfig {
            m,
            frames,
            support_law: law,
            ..SystemConfig::desk()
        }
    }

    #[test]
    fn single_frame_mean_is_support_mean() {
        let c = SystemConfig {
            s_bar: 15,
            s_c: 10,
            ..cfg(128, 1, SupportLaw::Standard)
        };
        let mean = monte_carlo_union_rows(&c, 20_000, 1).unwrap();
        // sizes uniform on {12, 13, 14}
        assert!((mean - 13.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn fixed_sizes_grow_linearly() {
        let law = SupportLaw::Range {
            size_min: 6,
            size_max: 6,
            shared_min: 4,
            shared_max: 4,
        };
        // frame 2 brings 2 new rows; later frames may revisit earlier rows
        let mean = monte_carlo_union_rows(&cfg(1000, 2, law), 100, 3).unwrap();
        assert_eq!(mean, 8.0);
    }

    #[test]
    fn degenerate_law_matches_recursion() {
        let law = SupportLaw::Range {
            size_min: 8,
            size_max: 8,
            shared_min: 6,
            shared_max: 6,
        };
        let mc = monte_carlo_union_rows(&cfg(64, 5, law), 20_000, 9).unwrap();
        let model = compute_s(64, 5, 10, 6).unwrap();
        assert!((mc - model.expected_rows).abs() / model.expected_rows < 0.01, "{mc} vs {}", model.expected_rows);
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(monte_carlo_union_rows(&SystemConfig::desk(), 0, 1).is_err());
    }
}
