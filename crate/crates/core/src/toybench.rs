//! 2-parameter optimization benchmark comparing three exploration
//! strategies on dense and sparse reward landscapes.
//!
//! The policy is the parameter vector itself. Each window samples K
//! perturbations, evaluates the reward at the perturbed points, and moves
//! the parameter by the averaged reward gradient taken at those points.
//! Steps count parameter updates (one window of K episodes each); this
//! matches the magnitudes of the reference results.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mvn::RngState;
use crate::noise::{
    end_of_window_update, sample_noise, EpisodeRecord, ExplorationLog, NoiseDistribution,
    NoiseHyper,
};
use crate::{fmt_float, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Fixed isotropic variance.
    Fv,
    /// Adaptive covariance only.
    Ac,
    /// The proposed mixture with the alpha switch.
    Pro,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Fv => "FV",
            Strategy::Ac => "AC",
            Strategy::Pro => "Pro",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fv" => Ok(Strategy::Fv),
            "ac" => Ok(Strategy::Ac),
            "pro" => Ok(Strategy::Pro),
            other => Err(Error::ConfigInvalid(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyConfig {
    pub theta_init: [f64; 2],
    pub c: [f64; 2],
    pub sparse: bool,
    pub strategy: Strategy,
    /// Initial variance sigma_fix^2.
    pub sigma_fix_sq: f64,
    pub k: usize,
    pub lr: f64,
    pub h: f64,
    pub h2: f64,
    /// Maximum parameter updates (windows of K episodes).
    pub max_steps: usize,
    /// Success radius on ||theta - c||.
    pub tol: f64,
    pub seed: u64,
    /// Record per-window exploration diagnostics.
    #[serde(default)]
    pub record_windows: bool,
    /// Record (theta, perturbed batch) snapshots for plotting.
    #[serde(default)]
    pub record_trajectory: bool,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            theta_init: [0.0, 0.0],
            c: [3.0, 3.0],
            sparse: false,
            strategy: Strategy::Pro,
            sigma_fix_sq: 1.0,
            k: 10,
            lr: 0.05,
            h: 8.0,
            h2: 10.0,
            max_steps: 300_000,
            tol: 0.01,
            seed: 0,
            record_windows: false,
            record_trajectory: false,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol > 0.0
            && self.lr >= 0.0
            && self.k >= 1
            && self.sigma_fix_sq > 0.0
            && self.max_steps >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(format!("bad toy config: {self:?}")))
        }
    }
}

/// One window's visualization snapshot.
#[derive(Debug, Clone)]
pub struct TrajectorySnapshot {
    pub window: usize,
    pub theta: [f64; 2],
    pub perturbed: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct ToyResult {
    pub moved: bool,
    pub optimized: bool,
    pub steps_to_optimize: Option<usize>,
    pub final_distance: f64,
    pub window_logs: Option<Vec<ExplorationLog>>,
    /// Window index (0-based) of the first window containing a nonzero return.
    pub first_nonzero_return_window: Option<usize>,
    pub trajectory: Option<Vec<TrajectorySnapshot>>,
}

/// exp(-||theta - c||^2), in (0, 1].
pub fn reward_dense(theta: &[f64; 2], c: &[f64; 2]) -> f64 {
    (-dist_sq(theta, c)).exp()
}

/// Dense reward gated to the disc ||theta - c||^2 <= 2.5, zero outside.
/// The boundary is inside the support.
pub fn reward_sparse(theta: &[f64; 2], c: &[f64; 2]) -> f64 {
    let d2 = dist_sq(theta, c);
    if d2 <= 2.5 {
        (-d2).exp()
    } else {
        0.0
    }
}

pub fn reward(theta: &[f64; 2], c: &[f64; 2], sparse: bool) -> f64 {
    if sparse {
        reward_sparse(theta, c)
    } else {
        reward_dense(theta, c)
    }
}

/// Gradient of the selected reward: -2 (theta - c) exp(-||theta - c||^2)
/// inside the support, zero outside it for the sparse case. At the exact
/// sparse boundary the inside branch applies.
pub fn reward_gradient(theta: &[f64; 2], c: &[f64; 2], sparse: bool) -> [f64; 2] {
    let d2 = dist_sq(theta, c);
    if sparse && d2 > 2.5 {
        return [0.0, 0.0];
    }
    let e = (-d2).exp();
    [-2.0 * (theta[0] - c[0]) * e, -2.0 * (theta[1] - c[1]) * e]
}

fn dist_sq(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    dist_sq(a, b).sqrt()
}

pub fn run_toy(config: &ToyConfig) -> Result<ToyResult> {
    config.validate()?;
    let sigma_fix = config.sigma_fix_sq.sqrt();
    let hyper = NoiseHyper {
        h: config.h,
        h2: config.h2,
        k: config.k,
        sigma_init: sigma_fix,
        ..NoiseHyper::default()
    };
    let mut dist_state = NoiseDistribution::new(2, &hyper)?;
    // FV stays fully isotropic; AC uses only the covariance part.
    match config.strategy {
        Strategy::Fv => dist_state.alpha = 1.0,
        Strategy::Ac => dist_state.alpha = 0.0,
        Strategy::Pro => dist_state.alpha = 1.0,
    }

    let mut theta = config.theta_init;
    let mut rng = RngState::from_seed(config.seed);
    let mut steps = 0usize;
    let mut optimized_at = None;
    let mut window_logs = config.record_windows.then(Vec::new);
    let mut trajectory = config.record_trajectory.then(Vec::new);
    let mut first_nonzero = None;
    let mut window = 0usize;

    if dist(&theta, &config.c) < config.tol {
        optimized_at = Some(0);
    }

    while optimized_at.is_none() && steps < config.max_steps {
        let mut records = Vec::with_capacity(config.k);
        let mut grad_sum = [0.0; 2];
        let mut perturbed_points = Vec::new();
        for _ in 0..config.k {
            let eps = sample_noise(&dist_state, &mut rng)?;
            let pt = [theta[0] + eps[0], theta[1] + eps[1]];
            let r = reward(&pt, &config.c, config.sparse);
            let g = reward_gradient(&pt, &config.c, config.sparse);
            grad_sum[0] += g[0];
            grad_sum[1] += g[1];
            records.push(EpisodeRecord { noise: eps, ret: r });
            if trajectory.is_some() {
                perturbed_points.push(pt);
            }
        }
        if first_nonzero.is_none() && records.iter().any(|r| r.ret != 0.0) {
            first_nonzero = Some(window);
        }
        if let Some(traj) = trajectory.as_mut() {
            traj.push(TrajectorySnapshot {
                window,
                theta,
                perturbed: perturbed_points,
            });
        }

        theta[0] += config.lr * grad_sum[0] / config.k as f64;
        theta[1] += config.lr * grad_sum[1] / config.k as f64;
        steps += 1;

        if config.strategy != Strategy::Fv {
            let (next, log) = end_of_window_update(&dist_state, &records, None, &hyper)?;
            dist_state = next;
            if config.strategy == Strategy::Ac {
                dist_state.alpha = 0.0;
            }
            if let Some(logs) = window_logs.as_mut() {
                logs.push(ExplorationLog {
                    alpha: dist_state.alpha,
                    ..log
                });
            }
        } else if let Some(logs) = window_logs.as_mut() {
            logs.push(ExplorationLog {
                update_index: (window + 1) as u64,
                sigma_bar: sigma_fix,
                alpha: 1.0,
                sigma: sigma_fix,
            });
        }

        if dist(&theta, &config.c) < config.tol {
            optimized_at = Some(steps);
        }
        window += 1;
    }

    let moved = (theta[0] - config.theta_init[0]).abs() > 1e-12
        || (theta[1] - config.theta_init[1]).abs() > 1e-12;
    Ok(ToyResult {
        moved,
        optimized: optimized_at.is_some(),
        steps_to_optimize: optimized_at,
        final_distance: dist(&theta, &config.c),
        window_logs,
        first_nonzero_return_window: first_nonzero,
        trajectory,
    })
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub result: ToyResult,
}

/// Aggregates over a seed sweep, computed as in the benchmark protocol:
/// step statistics only over the runs that optimized.
#[derive(Debug, Clone)]
pub struct SweepStats {
    pub n_seeds: usize,
    pub moved: usize,
    pub optimized: usize,
    pub mean_steps: Option<f64>,
    pub std_steps: Option<f64>,
    pub mean_distance: f64,
    pub std_distance: f64,
}

pub struct ToySweep {
    pub outcomes: Vec<SeedOutcome>,
    pub stats: SweepStats,
}

/// Runs `n_seeds` independent runs with seeds base.seed .. base.seed + n,
/// in parallel, reduced in seed order.
pub fn run_sweep(base: &ToyConfig, n_seeds: usize) -> Result<ToySweep> {
    let outcomes: Vec<SeedOutcome> = (0..n_seeds as u64)
        .into_par_iter()
        .map(|i| {
            let cfg = ToyConfig {
                seed: base.seed + i,
                ..base.clone()
            };
            run_toy(&cfg).map(|result| SeedOutcome {
                seed: cfg.seed,
                result,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let stats = aggregate(&outcomes);
    Ok(ToySweep { outcomes, stats })
}

pub fn aggregate(outcomes: &[SeedOutcome]) -> SweepStats {
    let n = outcomes.len();
    let moved = outcomes.iter().filter(|o| o.result.moved).count();
    let steps: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.result.steps_to_optimize.map(|s| s as f64))
        .collect();
    let optimized = steps.len();
    let dists: Vec<f64> = outcomes.iter().map(|o| o.result.final_distance).collect();
    let (mean_steps, std_steps) = if steps.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&steps);
        (Some(m), Some(s))
    };
    let (mean_distance, std_distance) = mean_std(&dists);
    SweepStats {
        n_seeds: n,
        moved,
        optimized,
        mean_steps,
        std_steps,
        mean_distance,
        std_distance,
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub const PER_SEED_HEADER: &str = "seed,moved,optimized,steps,distance";

pub fn per_seed_csv(sweep: &ToySweep) -> String {
    let mut out = String::from(PER_SEED_HEADER);
    out.push('\n');
    for o in &sweep.outcomes {
        let steps = o
            .result
            .steps_to_optimize
            .map(|s| s.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            o.seed,
            o.result.moved as u8,
            o.result.optimized as u8,
            steps,
            fmt_float(o.result.final_distance)
        ));
    }
    out
}

pub const TRAJECTORY_HEADER: &str = "window,role,x,y";

pub fn trajectory_csv(snapshots: &[TrajectorySnapshot]) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for snap in snapshots {
        out.push_str(&format!(
            "{},theta,{},{}\n",
            snap.window,
            fmt_float(snap.theta[0]),
            fmt_float(snap.theta[1])
        ));
        for p in &snap.perturbed {
            out.push_str(&format!(
                "{},perturbed,{},{}\n",
                snap.window,
                fmt_float(p[0]),
                fmt_float(p[1])
            ));
        }
    }
    out
}

/// One summary line per sweep, shaped like the benchmark's results table.
pub fn summary_row(label: &str, stats: &SweepStats) -> String {
    let steps = match (stats.mean_steps, stats.std_steps) {
        (Some(m), Some(s)) => format!("{m:.2e} +- {s:.2e}"),
        _ => "n/a".to_string(),
    };
    format!(
        "{label} | {steps} | {:.2e} +- {:.2e} | {} | {}",
        stats.mean_distance, stats.std_distance, stats.moved, stats.optimized
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_reward_values() {
        let c = [3.0, 3.0];
        assert_eq!(reward_dense(&c, &c), 1.0);
        assert!((reward_dense(&[0.0, 0.0], &c) - (-18.0f64).exp()).abs() < 1e-20);
        assert!((reward_dense(&[2.0, 3.0], &c) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn sparse_reward_values() {
        let c = [3.0, 3.0];
        assert_eq!(reward_sparse(&c, &c), 1.0);
        assert_eq!(reward_sparse(&[0.0, 0.0], &c), 0.0);
        // boundary included: ||theta - c||^2 = 2.25 + 0.25 = 2.5 exactly
        let b = [1.5, 2.5];
        assert!((reward_sparse(&b, &c) - (-2.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn gradient_hand_values() {
        let c = [3.0, 3.0];
        assert_eq!(reward_gradient(&c, &c, false), [0.0, 0.0]);
        let g = reward_gradient(&[2.0, 3.0], &c, false);
        assert!((g[0] - 2.0 * (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(g[1], 0.0);
        assert_eq!(reward_gradient(&[0.0, 0.0], &c, true), [0.0, 0.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let c = [3.0, 3.0];
        let mut rng = RngState::from_seed(5);
        let step = 1e-5;
        let mut checked = 0;
        while checked < 1000 {
            let theta = [
                c[0] + 4.0 * (rng.uniform() - 0.5),
                c[1] + 4.0 * (rng.uniform() - 0.5),
            ];
            for &sparse in &[false, true] {
                // stay away from the sparse discontinuity
                if sparse && dist_sq(&theta, &c) >= 2.4 {
                    continue;
                }
                let g = reward_gradient(&theta, &c, sparse);
                for d in 0..2 {
                    let mut lo = theta;
                    let mut hi = theta;
                    lo[d] -= step;
                    hi[d] += step;
                    let fd = (reward(&hi, &c, sparse) - reward(&lo, &c, sparse)) / (2.0 * step);
                    assert!((g[d] - fd).abs() < 1e-6, "g {g:?} fd {fd} at {theta:?}");
                }
                checked += 1;
            }
        }
    }

    #[test]
    fn zero_lr_does_not_move() {
        let cfg = ToyConfig {
            lr: 0.0,
            max_steps: 500,
            ..ToyConfig::default()
        };
        let res = run_toy(&cfg).unwrap();
        assert!(!res.moved);
        assert!(!res.optimized);
        assert!((res.final_distance - 18.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn run_toy_deterministic() {
        let cfg = ToyConfig {
            strategy: Strategy::Pro,
            sparse: true,
            max_steps: 2000,
            seed: 3,
            ..ToyConfig::default()
        };
        let a = run_toy(&cfg).unwrap();
        let b = run_toy(&cfg).unwrap();
        assert_eq!(a.final_distance, b.final_distance);
        assert_eq!(a.steps_to_optimize, b.steps_to_optimize);
    }

    #[test]
    fn pro_alpha_isotropic_until_first_reward() {
        let cfg = ToyConfig {
            strategy: Strategy::Pro,
            sparse: true,
            max_steps: 5000,
            record_windows: true,
            seed: 1,
            ..ToyConfig::default()
        };
        let res = run_toy(&cfg).unwrap();
        let logs = res.window_logs.unwrap();
        if let Some(first) = res.first_nonzero_return_window {
            for log in logs.iter().take(first) {
                assert_eq!(log.alpha, 1.0);
            }
        } else {
            for log in &logs {
                assert_eq!(log.alpha, 1.0);
            }
        }
    }

    #[test]
    fn ac_sparse_sigma_bar_decays() {
        let cfg = ToyConfig {
            strategy: Strategy::Ac,
            sparse: true,
            max_steps: 2000,
            record_windows: true,
            seed: 2,
            ..ToyConfig::default()
        };
        let res = run_toy(&cfg).unwrap();
        let logs = res.window_logs.unwrap();
        assert!(logs.len() >= 50);
        assert!(logs[49].sigma_bar < logs[0].sigma_bar);
        assert!(logs.last().unwrap().sigma_bar < 0.1);
    }

    #[test]
    fn sweep_aggregates() {
        let base = ToyConfig {
            strategy: Strategy::Pro,
            sparse: false,
            max_steps: 10_000,
            ..ToyConfig::default()
        };
        let sweep = run_sweep(&base, 5).unwrap();
        assert_eq!(sweep.stats.n_seeds, 5);
        assert_eq!(sweep.stats.moved, 5);
        assert!(sweep.stats.optimized >= 4, "{:?}", sweep.stats);
        let csv = per_seed_csv(&sweep);
        assert!(csv.starts_with(PER_SEED_HEADER));
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn empty_optimized_aggregate() {
        let outcomes = vec![SeedOutcome {
            seed: 0,
            result: ToyResult {
                moved: false,
                optimized: false,
                steps_to_optimize: None,
                final_distance: 1.0,
                window_logs: None,
                first_nonzero_return_window: None,
                trajectory: None,
            },
        }];
        let stats = aggregate(&outcomes);
        assert_eq!(stats.optimized, 0);
        assert!(stats.mean_steps.is_none());
    }
}
