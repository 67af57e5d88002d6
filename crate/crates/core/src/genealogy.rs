//! Ewens sampling formula and the Bernoulli-sum law of the emigration count.
//!
//! When every block of a Kingman coalescent is marked at rate θ/2 per unit
//! tree length, the number of mark-generated families follows the Ewens
//! sampling formula with parameter θ. The block count alone has the exact
//! representation `Z_n = Σ_{i=1..n} ζ_i` with independent
//! `P(ζ_i = 1) = θ/(i+θ)`, which is what the emigration statistics use.
//!
//! Convention note: the sum above starts at mean `θ/(1+θ)`, so `Z_n = 0` is
//! possible and `Z_n` is the table count of a seated-first-customer
//! restaurant shifted by one: `1 + Z_{n-1}` has exactly the ESF block-count
//! marginal for a sample of size `n`.

use rand::Rng;

use crate::error::{CoalError, Result};
use crate::real::Real;

/// Mutation-mark model: marks arrive at rate θ/2 per lineage, with θ twice
/// the migration rate in the emigration reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MutationModel<F: Real> {
    theta: F,
}

impl<F: Real> MutationModel<F> {
    pub fn new(theta: F) -> Result<Self> {
        if !(theta > F::zero()) {
            return Err(CoalError::arg(format!("theta must be positive, got {theta}")));
        }
        Ok(MutationModel { theta })
    }

    /// θ = 2ρ for migration rate ρ.
    pub fn from_migration_rate(rho: F) -> Result<Self> {
        Self::new(rho + rho)
    }

    pub fn theta(&self) -> F {
        self.theta
    }
}

/// Draw the emigration block count `Z_n = Σ_{i=1..n} Bernoulli(θ/(i+θ))`.
pub fn sample_block_count_crp<F: Real, R: Rng + ?Sized>(
    n: u64,
    theta: F,
    rng: &mut R,
) -> Result<u64> {
    if n < 1 {
        return Err(CoalError::arg("block-count sample needs n >= 1"));
    }
    if !(theta > F::zero()) {
        return Err(CoalError::arg("theta must be positive"));
    }
    let mut z = 0u64;
    for i in 1..=n {
        let p = theta / (F::of(i as f64) + theta);
        if F::sample_unit(rng) < p {
            z += 1;
        }
    }
    Ok(z)
}

/// `E Z_n = Σ_{i=1..n} θ/(i+θ)`.
pub fn expected_block_count<F: Real>(n: u64, theta: F) -> F {
    let mut acc = F::zero();
    for i in 1..=n {
        acc += theta / (F::of(i as f64) + theta);
    }
    acc
}

/// Log-probability of a block-size count vector under the Ewens sampling
/// formula.
///
/// `a[i-1]` is the number of blocks of size `i`; the normaliser is the
/// rising factorial `θ(θ+1)…(θ+n-1)` evaluated through log-gamma.
pub fn esf_log_pmf<F: Real>(a: &[u64], theta: F) -> Result<F> {
    if !(theta > F::zero()) {
        return Err(CoalError::arg("theta must be positive"));
    }
    let n: u64 = a
        .iter()
        .enumerate()
        .map(|(idx, &ai)| (idx as u64 + 1) * ai)
        .sum();
    if n < 1 {
        return Err(CoalError::arg(
            "block-size counts must describe a sample of size >= 1",
        ));
    }
    let nf = F::of(n as f64);
    let mut lp = (nf + F::one()).ln_gamma(); // ln n!
    lp -= (theta + nf).ln_gamma() - theta.ln_gamma(); // ln rising factorial
    for (idx, &ai) in a.iter().enumerate() {
        if ai == 0 {
            continue;
        }
        let i = F::of((idx + 1) as f64);
        let aif = F::of(ai as f64);
        lp += aif * theta.ln();
        lp -= aif * i.ln();
        lp -= (aif + F::one()).ln_gamma(); // ln a_i!
    }
    Ok(lp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replica_rng;
    use crate::stats;

    /// All block-size count vectors of the partitions of n.
    fn partition_counts(n: u64) -> Vec<Vec<u64>> {
        fn rec(remaining: u64, max_part: u64, counts: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
            if remaining == 0 {
                out.push(counts.clone());
                return;
            }
            for part in (1..=max_part.min(remaining)).rev() {
                counts[(part - 1) as usize] += 1;
                rec(remaining - part, part, counts, out);
                counts[(part - 1) as usize] -= 1;
            }
        }
        let mut out = Vec::new();
        rec(n, n, &mut vec![0; n as usize], &mut out);
        out
    }

    #[test]
    fn esf_single_sample_is_certain() {
        for theta in [0.5f64, 1.0, 7.0] {
            assert!(esf_log_pmf(&[1], theta).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn esf_two_singletons_half() {
        // two partitions of n=2, each probability 1/2 at θ=1
        let lp = esf_log_pmf(&[2, 0], 1.0f64).unwrap();
        assert!((lp - 0.5f64.ln()).abs() < 1e-12);
        let lp_pair = esf_log_pmf(&[0, 1], 1.0f64).unwrap();
        assert!((lp.exp() + lp_pair.exp() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn esf_n3_normalises() {
        let total: f64 = [[3u64, 0, 0], [1, 1, 0], [0, 0, 1]]
            .iter()
            .map(|a| esf_log_pmf(&a[..], 2.0f64).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn esf_normalises_up_to_eight() {
        for theta in [0.5f64, 1.0, 2.0] {
            for n in 1..=8u64 {
                let total: f64 = partition_counts(n)
                    .iter()
                    .map(|a| esf_log_pmf(a, theta).unwrap().exp())
                    .sum();
                assert!(
                    (total - 1.0).abs() < 1e-10,
                    "n={n} theta={theta}: total {total}"
                );
            }
        }
    }

    #[test]
    fn crp_single_customer_bernoulli() {
        let mut rng = replica_rng(2, 0);
        let reps = 100_000;
        let mean = (0..reps)
            .map(|_| sample_block_count_crp(1, 2.0f64, &mut rng).unwrap() as f64)
            .sum::<f64>()
            / reps as f64;
        let p = 2.0 / 3.0;
        let se = (p * (1.0 - p) / reps as f64).sqrt();
        assert!((mean - p).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn crp_mean_matches_finite_sum() {
        let expect = expected_block_count(5, 2.0f64);
        assert!((expect - 2.185714285714).abs() < 1e-9);
        let mut rng = replica_rng(3, 0);
        let reps = 100_000;
        let vals: Vec<f64> = (0..reps)
            .map(|_| sample_block_count_crp(5, 2.0f64, &mut rng).unwrap() as f64)
            .collect();
        let s = stats::Summary::from_values(&vals);
        assert!((s.mean - expect).abs() < 3.0 * s.stderr, "mean {}", s.mean);
    }

    #[test]
    fn expected_block_count_small() {
        assert!((expected_block_count(1, 1.0f64) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn expected_block_count_log_asymptotics() {
        // value / ln n approaches θ; within 2% at n = 10^8
        let theta = 2.0f64;
        let v = expected_block_count(100_000_000u64, theta);
        let ratio = v / (1e8f64.ln() * theta);
        assert!((ratio - 1.0).abs() < 0.02, "ratio {ratio}");
    }

    #[test]
    fn crp_block_counts_match_esf_marginal() {
        // 1 + Z_{n-1} has the ESF block-count marginal for sample size n.
        // Total variation against the enumerated marginal below 0.01.
        let theta = 1.0f64;
        for n in [2u64, 5, 8] {
            let mut marginal = vec![0.0f64; (n + 1) as usize];
            for a in partition_counts(n) {
                let blocks: u64 = a.iter().sum();
                marginal[blocks as usize] += esf_log_pmf(&a, theta).unwrap().exp();
            }
            let mut rng = replica_rng(4, n);
            let reps = 1_000_000usize;
            let mut freq = vec![0u64; (n + 1) as usize];
            for _ in 0..reps {
                let z = if n == 1 {
                    0
                } else {
                    sample_block_count_crp(n - 1, theta, &mut rng).unwrap()
                };
                freq[(1 + z) as usize] += 1;
            }
            let tv: f64 = marginal
                .iter()
                .zip(&freq)
                .map(|(p, &f)| (p - f as f64 / reps as f64).abs())
                .sum::<f64>()
                / 2.0;
            assert!(tv < 0.01, "n={n}: total variation {tv}");
        }
    }

    #[test]
    fn tail_exceedance_is_tiny() {
        // P(Z_n > 40) at n = 10^4, θ = 2: mean ≈ 16.6 so the exceedance is
        // far below 1e-3.
        let mut rng = replica_rng(6, 0);
        let reps = 20_000;
        let hits = (0..reps)
            .filter(|_| sample_block_count_crp(10_000, 2.0f64, &mut rng).unwrap() > 40)
            .count();
        assert!((hits as f64 / reps as f64) < 1e-3, "hits {hits}");
    }

    #[test]
    fn mutation_model_validation() {
        assert!(MutationModel::new(0.0f64).is_err());
        let m = MutationModel::from_migration_rate(1.5f64).unwrap();
        assert_eq!(m.theta(), 3.0);
    }

    #[test]
    fn rejects_zero_samples() {
        let mut rng = replica_rng(1, 1);
        assert!(sample_block_count_crp(0, 1.0f64, &mut rng).is_err());
    }
}
