//! The mixed exploration-noise distribution N(0, (1-a)*Sigma + a*sigma^2*I).
//!
//! Sigma is rebuilt every K episodes from return-weighted outer products of
//! the episode noises, sigma is calibrated so perturbations cause a target
//! amount of change in action space, and alpha switches between the
//! directional part and the isotropic part based on the relative return gap.

use crate::mvn::{cholesky, default_jitter, sample_mvn, CovMatrix, RngState};
use crate::{Error, Result};

/// Relative tolerance used for the degenerate branches (Jmax = Jmin,
/// Jmax = 0). Returns are float sums, so bitwise equality would let
/// accumulation order flip the branch.
fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct NoiseHyper {
    /// Weight sharpness h.
    pub h: f64,
    /// Switch sharpness h2.
    pub h2: f64,
    /// Episodes per distribution update.
    pub k: usize,
    /// Target action-space stddev delta.
    pub delta: f64,
    /// Initial sigma.
    pub sigma_init: f64,
    /// Multiplicative sigma step, > 1.
    pub sigma_factor: f64,
}

impl Default for NoiseHyper {
    fn default() -> Self {
        NoiseHyper {
            h: 8.0,
            h2: 10.0,
            k: 10,
            delta: 0.1,
            sigma_init: 0.2,
            sigma_factor: 1.01,
        }
    }
}

impl NoiseHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.h >= 0.0
            && self.h2 >= 0.0
            && self.k >= 1
            && self.delta > 0.0
            && self.sigma_init > 0.0
            && self.sigma_factor > 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(format!("bad noise hyper: {self:?}")))
        }
    }
}

/// One buffered episode: the parameter noise used and the undiscounted
/// return it earned.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub noise: Vec<f64>,
    pub ret: f64,
}

/// Per-update exploration diagnostic row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplorationLog {
    pub update_index: u64,
    /// sqrt of the mean diagonal of Sigma.
    pub sigma_bar: f64,
    pub alpha: f64,
    pub sigma: f64,
}

/// The adaptive noise distribution state.
///
/// Starts fully isotropic (alpha = 1, Sigma = sigma_init^2 * I) so the
/// first window is well-defined before any returns exist.
#[derive(Debug, Clone)]
pub struct NoiseDistribution {
    pub sigma: f64,
    pub big_sigma: CovMatrix,
    pub alpha: f64,
    dim: usize,
    updates: u64,
}

impl NoiseDistribution {
    pub fn new(dim: usize, hyper: &NoiseHyper) -> Result<Self> {
        hyper.validate()?;
        Ok(NoiseDistribution {
            sigma: hyper.sigma_init,
            big_sigma: CovMatrix::scaled_identity(dim, hyper.sigma_init * hyper.sigma_init),
            alpha: 1.0,
            dim,
            updates: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn sigma_bar(&self) -> f64 {
        self.big_sigma.mean_diagonal().max(0.0).sqrt()
    }
}

/// Softmax-over-returns weights P_k. The gap is normalized by
/// Jmax - Jmin so the same h works across reward scales; equal returns
/// give the uniform 1/K.
pub fn compute_weights(returns: &[f64], h: f64) -> Result<Vec<f64>> {
    if returns.is_empty() {
        return Err(Error::EmptyReturns);
    }
    for &r in returns {
        if !r.is_finite() {
            return Err(Error::NonFiniteReturn { value: r });
        }
    }
    let jmax = returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let jmin = returns.iter().cloned().fold(f64::INFINITY, f64::min);
    let k = returns.len();
    if approx_eq(jmax, jmin) {
        return Ok(vec![1.0 / k as f64; k]);
    }
    let gap = jmax - jmin;
    let mut w: Vec<f64> = returns
        .iter()
        .map(|&j| (-h * (jmax - j) / gap).exp())
        .collect();
    let z: f64 = w.iter().sum();
    for wi in &mut w {
        *wi /= z;
    }
    Ok(w)
}

/// Sigma <- sum_k P_k * eps_k * eps_k^T. Symmetric and PSD by construction.
pub fn update_covariance(records: &[EpisodeRecord], weights: &[f64]) -> Result<CovMatrix> {
    if records.is_empty() {
        return Err(Error::EmptyReturns);
    }
    if records.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: records.len(),
            got: weights.len(),
        });
    }
    let n = records[0].noise.len();
    let mut cov = CovMatrix::zeros(n);
    for (rec, &w) in records.iter().zip(weights) {
        if rec.noise.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: rec.noise.len(),
            });
        }
        for i in 0..n {
            let wi = w * rec.noise[i];
            for j in 0..=i {
                let v = cov.get(i, j) + wi * rec.noise[j];
                cov.set(i, j, v);
                cov.set(j, i, v);
            }
        }
    }
    Ok(cov)
}

/// Deterministic state-to-action map, used to measure how far a
/// parameter perturbation moved the policy in action space.
pub trait Policy {
    fn action_dim(&self) -> usize;
    fn act(&self, state: &[f64]) -> Vec<f64>;
}

/// Root-mean action discrepancy d(pi, pi~) between a policy and its
/// perturbed copy, estimated over the supplied state batch.
pub fn policy_distance<P: Policy>(policy: &P, perturbed: &P, states: &[Vec<f64>]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let adim = policy.action_dim();
    if perturbed.action_dim() != adim {
        return Err(Error::ArchitectureMismatch);
    }
    let mut sq_sum = vec![0.0; adim];
    for s in states {
        let a = policy.act(s);
        let b = perturbed.act(s);
        if a.len() != adim || b.len() != adim {
            return Err(Error::ArchitectureMismatch);
        }
        for i in 0..adim {
            let d = a[i] - b[i];
            sq_sum[i] += d * d;
        }
    }
    let m = states.len() as f64;
    let mean_total: f64 = sq_sum.iter().map(|s| s / m).sum();
    Ok((mean_total / adim as f64).sqrt())
}

/// Multiplicative sigma calibration toward d ~ delta: grow while the
/// perturbation moves actions less than delta, shrink otherwise.
pub fn adapt_sigma(sigma: f64, d: f64, delta: f64, factor: f64) -> f64 {
    if d < delta {
        sigma * factor
    } else {
        sigma / factor
    }
}

/// Switching coefficient alpha from the relative return gap.
///
/// alpha = exp(-h2 * (Jmax - Jmin) / Jmax), with Jmax = 0 forcing the
/// fully isotropic alpha = 1 and a negative Jmax handled by shifting
/// both extremes down by Jmin first.
pub fn compute_alpha(returns: &[f64], h2: f64) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::EmptyReturns);
    }
    for &r in returns {
        if !r.is_finite() {
            return Err(Error::NonFiniteReturn { value: r });
        }
    }
    let mut jmax = returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut jmin = returns.iter().cloned().fold(f64::INFINITY, f64::min);
    if approx_eq(jmax, jmin) {
        return Ok(1.0);
    }
    if approx_eq(jmax, 0.0) {
        return Ok(1.0);
    }
    if jmax < 0.0 {
        jmax -= jmin;
        jmin = 0.0;
    }
    let a = (-h2 * (jmax - jmin) / jmax).exp();
    Ok(a.clamp(0.0, 1.0))
}

/// (1 - alpha) * Sigma + alpha * sigma^2 * I.
pub fn effective_covariance(dist: &NoiseDistribution) -> CovMatrix {
    let n = dist.dim;
    let mut out = CovMatrix::zeros(n);
    let iso = dist.alpha * dist.sigma * dist.sigma;
    let w = 1.0 - dist.alpha;
    for i in 0..n {
        for j in 0..n {
            let mut v = w * dist.big_sigma.get(i, j);
            if i == j {
                v += iso;
            }
            out.set(i, j, v);
        }
    }
    out
}

/// Draws one parameter-noise vector from the current distribution.
pub fn sample_noise(dist: &NoiseDistribution, rng: &mut RngState) -> Result<Vec<f64>> {
    let cov = effective_covariance(dist);
    let l = cholesky(&cov, default_jitter(&cov))?;
    Ok(sample_mvn(&l, rng))
}

/// End-of-window update: rebuild Sigma from the K buffered episodes,
/// recompute alpha from their returns, and step sigma toward the action
/// distance target when an estimate is supplied (`None` keeps sigma
/// fixed, as in the 2-D benchmark where there is no action space).
pub fn end_of_window_update(
    dist: &NoiseDistribution,
    records: &[EpisodeRecord],
    d_estimate: Option<f64>,
    hyper: &NoiseHyper,
) -> Result<(NoiseDistribution, ExplorationLog)> {
    if records.len() != hyper.k {
        return Err(Error::DimensionMismatch {
            expected: hyper.k,
            got: records.len(),
        });
    }
    for rec in records {
        if rec.noise.len() != dist.dim {
            return Err(Error::DimensionMismatch {
                expected: dist.dim,
                got: rec.noise.len(),
            });
        }
    }
    let returns: Vec<f64> = records.iter().map(|r| r.ret).collect();
    let weights = compute_weights(&returns, hyper.h)?;
    let big_sigma = update_covariance(records, &weights)?;
    let alpha = compute_alpha(&returns, hyper.h2)?;
    let sigma = match d_estimate {
        Some(d) => adapt_sigma(dist.sigma, d, hyper.delta, hyper.sigma_factor),
        None => dist.sigma,
    };
    let next = NoiseDistribution {
        sigma,
        big_sigma,
        alpha,
        dim: dist.dim,
        updates: dist.updates + 1,
    };
    let log = ExplorationLog {
        update_index: next.updates,
        sigma_bar: next.sigma_bar(),
        alpha,
        sigma,
    };
    Ok((next, log))
}

/// Window update for the isotropic-only comparison arm: sigma adapts by
/// the action-distance rule but the covariance stays sigma^2 I and alpha
/// stays 1 (no return-weighted shaping, no switching).
pub fn isotropic_window_update(
    dist: &NoiseDistribution,
    d_estimate: Option<f64>,
    hyper: &NoiseHyper,
) -> (NoiseDistribution, ExplorationLog) {
    let sigma = match d_estimate {
        Some(d) => adapt_sigma(dist.sigma, d, hyper.delta, hyper.sigma_factor),
        None => dist.sigma,
    };
    let next = NoiseDistribution {
        sigma,
        big_sigma: CovMatrix::scaled_identity(dist.dim, sigma * sigma),
        alpha: 1.0,
        dim: dist.dim,
        updates: dist.updates + 1,
    };
    let log = ExplorationLog {
        update_index: next.updates,
        sigma_bar: next.sigma_bar(),
        alpha: 1.0,
        sigma,
    };
    (next, log)
}

/// CSV header for [`ExplorationLog`] rows.
pub const EXPLORATION_LOG_HEADER: &str = "update_index,sigma_bar,alpha,sigma";

pub fn exploration_log_csv_row(log: &ExplorationLog) -> String {
    format!(
        "{},{},{},{}",
        log.update_index,
        crate::fmt_float(log.sigma_bar),
        crate::fmt_float(log.alpha),
        crate::fmt_float(log.sigma)
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear {
        w: Vec<f64>,
    }

    impl Policy for Linear {
        fn action_dim(&self) -> usize {
            self.w.len()
        }
        fn act(&self, state: &[f64]) -> Vec<f64> {
            self.w.iter().map(|wi| wi * state[0]).collect()
        }
    }

    #[test]
    fn weights_equal_returns_uniform() {
        let w = compute_weights(&[5.0, 5.0, 5.0], 8.0).unwrap();
        for wi in w {
            assert!((wi - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_two_returns() {
        let w = compute_weights(&[1.0, 0.0], 8.0).unwrap();
        let e8 = (-8.0f64).exp();
        assert!((w[0] - 1.0 / (1.0 + e8)).abs() < 1e-12);
        assert!((w[1] - e8 / (1.0 + e8)).abs() < 1e-12);
    }

    #[test]
    fn weights_zero_h_uniform() {
        let w = compute_weights(&[3.0, 2.0, 1.0], 0.0).unwrap();
        for wi in w {
            assert!((wi - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_shift_and_scale_invariant() {
        let base = compute_weights(&[3.0, 1.0, 2.0], 8.0).unwrap();
        let shifted = compute_weights(&[103.0, 101.0, 102.0], 8.0).unwrap();
        let scaled = compute_weights(&[30.0, 10.0, 20.0], 8.0).unwrap();
        for i in 0..3 {
            assert!((base[i] - shifted[i]).abs() < 1e-12);
            assert!((base[i] - scaled[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_errors() {
        assert!(matches!(
            compute_weights(&[], 8.0),
            Err(Error::EmptyReturns)
        ));
        assert!(matches!(
            compute_weights(&[1.0, f64::NAN], 8.0),
            Err(Error::NonFiniteReturn { .. })
        ));
    }

    #[test]
    fn covariance_single_outer_product() {
        let rec = vec![EpisodeRecord {
            noise: vec![1.0, 2.0],
            ret: 0.0,
        }];
        let c = update_covariance(&rec, &[1.0]).unwrap();
        assert_eq!(c.entries(), &[1.0, 2.0, 2.0, 4.0]);
    }

    #[test]
    fn covariance_weighted_sum() {
        let recs = vec![
            EpisodeRecord {
                noise: vec![1.0, 0.0],
                ret: 0.0,
            },
            EpisodeRecord {
                noise: vec![0.0, 1.0],
                ret: 0.0,
            },
        ];
        let c = update_covariance(&recs, &[0.5, 0.5]).unwrap();
        assert_eq!(c.entries(), &[0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn covariance_zero_noise() {
        let recs = vec![
            EpisodeRecord {
                noise: vec![0.0, 0.0],
                ret: 1.0,
            };
            3
        ];
        let c = update_covariance(&recs, &[0.4, 0.3, 0.3]).unwrap();
        assert!(c.entries().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distance_identical_policies() {
        let p = Linear { w: vec![1.0, 2.0] };
        let q = Linear { w: vec![1.0, 2.0] };
        let states = vec![vec![0.5], vec![-1.0]];
        assert_eq!(policy_distance(&p, &q, &states).unwrap(), 0.0);
    }

    #[test]
    fn distance_hand_cases() {
        // |A| = 1, per-state action differences of 1 and 1 -> d = 1.
        let p = Linear { w: vec![0.0] };
        let q = Linear { w: vec![1.0] };
        let states = vec![vec![1.0], vec![-1.0]];
        assert!((policy_distance(&p, &q, &states).unwrap() - 1.0).abs() < 1e-15);

        // |A| = 2, differences (2,0) and (0,2) over two states -> sqrt(2).
        struct Fixed {
            out: Vec<Vec<f64>>,
        }
        impl Policy for Fixed {
            fn action_dim(&self) -> usize {
                2
            }
            fn act(&self, state: &[f64]) -> Vec<f64> {
                self.out[state[0] as usize].clone()
            }
        }
        let p = Fixed {
            out: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        };
        let q = Fixed {
            out: vec![vec![2.0, 0.0], vec![0.0, 2.0]],
        };
        let states = vec![vec![0.0], vec![1.0]];
        let d = policy_distance(&p, &q, &states).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn distance_empty_batch() {
        let p = Linear { w: vec![1.0] };
        let q = Linear { w: vec![1.0] };
        assert!(matches!(
            policy_distance(&p, &q, &[]),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn sigma_adaptation_branches() {
        assert!((adapt_sigma(0.2, 0.05, 0.1, 1.01) - 0.202).abs() < 1e-15);
        // d = delta takes the shrink branch
        assert!((adapt_sigma(0.2, 0.1, 0.1, 1.01) - 0.2 / 1.01).abs() < 1e-15);
    }

    #[test]
    fn sigma_adaptation_converges_to_target_band() {
        // Linear policy a = w * s over fixed states: d is proportional to
        // sigma, so alternation settles near the sigma achieving d = delta.
        let states: Vec<Vec<f64>> = vec![vec![1.0], vec![-2.0], vec![0.5]];
        let delta = 0.1;
        let mut sigma = 2.0;
        let mut rng = RngState::from_seed(17);
        for _ in 0..600 {
            let p = Linear { w: vec![1.0] };
            let q = Linear {
                w: vec![1.0 + sigma * rng.standard_normal()],
            };
            let d = policy_distance(&p, &q, &states).unwrap();
            sigma = adapt_sigma(sigma, d, delta, 1.01);
        }
        // d ~ |eps| * rms(s); rms = sqrt((1+4+0.25)/3) ~ 1.32, so the
        // balancing sigma is around delta / (1.32 * E|z|) ~ 0.095.
        assert!(sigma > 0.02 && sigma < 0.4, "sigma {sigma}");
    }

    #[test]
    fn alpha_degenerate_branches() {
        assert_eq!(compute_alpha(&[0.0, 0.0, 0.0], 10.0).unwrap(), 1.0);
        assert_eq!(compute_alpha(&[7.0, 7.0], 10.0).unwrap(), 1.0);
    }

    #[test]
    fn alpha_direct_evaluation() {
        let a = compute_alpha(&[10.0, 5.0], 10.0).unwrap();
        assert!((a - (-5.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn alpha_negative_shift() {
        let a = compute_alpha(&[-2.0, -10.0], 10.0).unwrap();
        assert!((a - (-10.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn alpha_monotone_in_relative_gap() {
        let mut prev = f64::INFINITY;
        for gap in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let a = compute_alpha(&[10.0, 10.0 - gap], 10.0).unwrap();
            assert!(a <= prev);
            prev = a;
        }
    }

    #[test]
    fn effective_covariance_limits() {
        let hyper = NoiseHyper::default();
        let mut dist = NoiseDistribution::new(2, &hyper).unwrap();
        dist.big_sigma = CovMatrix::from_entries(2, vec![2.0, 0.0, 0.0, 2.0]).unwrap();
        dist.sigma = 1.0;

        dist.alpha = 1.0;
        let c = effective_covariance(&dist);
        assert_eq!(c.entries(), &[1.0, 0.0, 0.0, 1.0]);

        dist.alpha = 0.0;
        let c = effective_covariance(&dist);
        assert_eq!(c.entries(), &[2.0, 0.0, 0.0, 2.0]);

        dist.alpha = 0.5;
        let c = effective_covariance(&dist);
        assert_eq!(c.entries(), &[1.5, 0.0, 0.0, 1.5]);
    }

    #[test]
    fn sample_noise_degenerate_zero() {
        let hyper = NoiseHyper::default();
        let mut dist = NoiseDistribution::new(3, &hyper).unwrap();
        dist.alpha = 1.0;
        dist.sigma = 0.0;
        dist.big_sigma = CovMatrix::zeros(3);
        let mut rng = RngState::from_seed(1);
        assert_eq!(sample_noise(&dist, &mut rng).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn sample_noise_rank_one_stays_on_span() {
        let hyper = NoiseHyper::default();
        let mut dist = NoiseDistribution::new(2, &hyper).unwrap();
        dist.alpha = 0.0;
        // Sigma = eps eps^T with eps = (1, 2)
        dist.big_sigma = CovMatrix::from_entries(2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        let mut rng = RngState::from_seed(23);
        let dir = [1.0 / 5f64.sqrt(), 2.0 / 5f64.sqrt()];
        for _ in 0..200 {
            let x = sample_noise(&dist, &mut rng).unwrap();
            let par = x[0] * dir[0] + x[1] * dir[1];
            let orth = (x[0] * dir[1] - x[1] * dir[0]).abs();
            if par.abs() > 1e-3 {
                assert!(orth < 1e-3 * par.abs(), "orth {orth} par {par}");
            }
        }
    }

    #[test]
    fn window_update_degenerate_collapse_state() {
        let hyper = NoiseHyper::default();
        let dist = NoiseDistribution::new(2, &hyper).unwrap();
        let records = vec![
            EpisodeRecord {
                noise: vec![0.0, 0.0],
                ret: 0.0,
            };
            hyper.k
        ];
        let (next, log) = end_of_window_update(&dist, &records, None, &hyper).unwrap();
        assert!(next.big_sigma.entries().iter().all(|&v| v == 0.0));
        assert_eq!(next.alpha, 1.0);
        assert_eq!(log.sigma_bar, 0.0);
        assert_eq!(log.update_index, 1);
    }

    #[test]
    fn window_update_deterministic() {
        let hyper = NoiseHyper::default();
        let dist = NoiseDistribution::new(2, &hyper).unwrap();
        let mut rng = RngState::from_seed(9);
        let records: Vec<EpisodeRecord> = (0..hyper.k)
            .map(|i| EpisodeRecord {
                noise: sample_noise(&dist, &mut rng).unwrap(),
                ret: i as f64,
            })
            .collect();
        let (a, la) = end_of_window_update(&dist, &records, Some(0.05), &hyper).unwrap();
        let (b, lb) = end_of_window_update(&dist, &records, Some(0.05), &hyper).unwrap();
        assert_eq!(a.big_sigma.entries(), b.big_sigma.entries());
        assert_eq!(a.alpha, b.alpha);
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(la, lb);
        assert!(a.alpha >= 0.0 && a.alpha <= 1.0);
    }

    #[test]
    fn window_update_wrong_count() {
        let hyper = NoiseHyper::default();
        let dist = NoiseDistribution::new(2, &hyper).unwrap();
        let records = vec![
            EpisodeRecord {
                noise: vec![0.0, 0.0],
                ret: 0.0,
            };
            3
        ];
        assert!(end_of_window_update(&dist, &records, None, &hyper).is_err());
    }

    /// The variance-collapse pathology and its alpha rescue: with alpha
    /// pinned to 0 and constant zero returns, self-sampled windows shrink
    /// sigma_bar geometrically; with the alpha rule active it holds level.
    #[test]
    fn variance_collapse_and_rescue() {
        let hyper = NoiseHyper {
            sigma_init: 1.0,
            ..NoiseHyper::default()
        };
        let dim = 2;

        let run = |force_alpha_zero: bool| -> Vec<f64> {
            let mut dist = NoiseDistribution::new(dim, &hyper).unwrap();
            let mut rng = RngState::from_seed(77);
            let mut bars = Vec::new();
            for _ in 0..50 {
                if force_alpha_zero && dist.updates > 0 {
                    dist.alpha = 0.0;
                }
                let records: Vec<EpisodeRecord> = (0..hyper.k)
                    .map(|_| EpisodeRecord {
                        noise: sample_noise(&dist, &mut rng).unwrap(),
                        ret: 0.0,
                    })
                    .collect();
                let (next, log) = end_of_window_update(&dist, &records, None, &hyper).unwrap();
                dist = next;
                bars.push(log.sigma_bar);
            }
            bars
        };

        let collapsed = run(true);
        assert!(
            collapsed.last().unwrap() < &(0.05 * collapsed[0]),
            "no geometric decay: first {} last {}",
            collapsed[0],
            collapsed.last().unwrap()
        );

        let rescued = run(false);
        for bar in &rescued {
            assert!(
                *bar > 0.5 * hyper.sigma_init && *bar < 2.0 * hyper.sigma_init,
                "sigma_bar {bar} left the sigma-driven band"
            );
        }
    }
}
