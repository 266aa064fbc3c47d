//! Seedable sampling from zero-mean multivariate normals with dense
//! covariance, plus the Cholesky kernel it needs.
//!
//! Randomness comes from ChaCha8, a counter-based stream cipher RNG:
//! a seed plus a stream id fully determine the draw sequence, so
//! per-episode streams can be split off without correlation. Standard
//! normals are generated with the ziggurat method (`rand_distr`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Symmetric N x N covariance matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl CovMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "covariance dimension must be positive");
        CovMatrix {
            dim,
            entries: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    /// c * I
    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.entries[i * dim + i] = c;
        }
        m
    }

    /// Builds from row-major entries; fails if the matrix is not square
    /// or not symmetric within tolerance.
    pub fn from_entries(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        let m = CovMatrix { dim, entries };
        m.check_symmetric()?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.dim + j] = v;
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// trace / N, used to scale the default jitter.
    pub fn mean_diagonal(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum::<f64>() / self.dim as f64
    }

    pub fn check_symmetric(&self) -> Result<()> {
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                let a = self.get(i, j);
                let b = self.get(j, i);
                if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                    return Err(Error::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(())
    }
}

/// Lower-triangular Cholesky factor L with L * L^T = A + j*I.
#[derive(Debug, Clone)]
pub struct LowerTriangular {
    dim: usize,
    entries: Vec<f64>,
    /// The jitter j actually added to the diagonal.
    jitter_used: f64,
}

impl LowerTriangular {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// Zero factor: samples drawn through it are identically zero.
    pub fn zeros(dim: usize) -> Self {
        LowerTriangular {
            dim,
            entries: vec![0.0; dim * dim],
            jitter_used: 0.0,
        }
    }

    /// L * L^T, for reconstruction checks.
    pub fn reconstruct(&self) -> CovMatrix {
        let n = self.dim;
        let mut out = CovMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = 0.0;
                for k in 0..=j.min(i) {
                    s += self.get(i, k) * self.get(j, k);
                }
                out.set(i, j, s);
                out.set(j, i, s);
            }
        }
        out
    }
}

/// Cholesky factorization with escalating diagonal jitter.
///
/// Tries j in {0, jitter, 10*jitter, ...} (ten escalations) and returns
/// the factor for the first j that succeeds. A rank-deficient covariance
/// (K weighted outer products with K < N) factors once a positive jitter
/// is reached.
pub fn cholesky(m: &CovMatrix, jitter: f64) -> Result<LowerTriangular> {
    m.check_symmetric()?;
    assert!(jitter >= 0.0, "jitter must be nonnegative");
    let mut j = 0.0;
    for attempt in 0..=10 {
        if let Some(l) = try_cholesky(m, j) {
            return Ok(l);
        }
        if jitter == 0.0 {
            break;
        }
        j = jitter * 10f64.powi(attempt);
    }
    Err(Error::NotPsd)
}

/// Default jitter scale for a given covariance: 1e-9 * trace/N.
pub fn default_jitter(m: &CovMatrix) -> f64 {
    let base = m.mean_diagonal();
    // Floor keeps the jitter nonzero even when the diagonal has shrunk
    // into the subnormal range (long variance-collapse runs).
    (1e-9 * base).max(f64::MIN_POSITIVE * 1e16)
}

fn try_cholesky(m: &CovMatrix, jitter: f64) -> Option<LowerTriangular> {
    let n = m.dim;
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = m.get(i, j);
            if i == j {
                s += jitter;
            }
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                // Accept exact zero pivots so rank-deficient factors
                // (zero covariance, jitter 0) still go through.
                if s < 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * n + j] = s.sqrt();
            } else {
                let d = l[j * n + j];
                if d == 0.0 {
                    if s.abs() > 1e-300 {
                        return None;
                    }
                    l[i * n + j] = 0.0;
                } else {
                    l[i * n + j] = s / d;
                }
            }
        }
    }
    Some(LowerTriangular {
        dim: n,
        entries: l,
        jitter_used: jitter,
    })
}

/// Seedable RNG state. Equal seeds produce bit-identical sample streams
/// on a given build; `split` derives an independent stream for a worker.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn from_seed(seed: u64) -> Self {
        RngState {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for the same seed, keyed by `stream`.
    pub fn split(&self, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream.wrapping_add(1));
        RngState {
            seed: self.seed,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Position within the current stream, for checkpointing.
    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn stream(&self) -> u64 {
        self.rng.get_stream()
    }

    /// Rebuilds the exact generator state captured by `seed`, `stream`
    /// and `word_pos`.
    pub fn restore(seed: u64, stream: u64, word_pos: u128) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        RngState { seed, rng }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform integer in [0, bound).
    pub fn below(&mut self, bound: usize) -> usize {
        self.rng.gen_range(0..bound)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.standard_normal()).collect()
    }
}

/// Draws L * z with z a vector of iid standard normals; advances `rng`.
pub fn sample_mvn(l: &LowerTriangular, rng: &mut RngState) -> Vec<f64> {
    let n = l.dim;
    let z = rng.normal_vec(n);
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut s = 0.0;
        for k in 0..=i {
            s += l.get(i, k) * z[k];
        }
        out[i] = s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_identity() {
        let l = cholesky(&CovMatrix::identity(2), 0.0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_eq!(l.get(i, j), expect);
            }
        }
        assert_eq!(l.jitter_used(), 0.0);
    }

    #[test]
    fn cholesky_diagonal() {
        let m = CovMatrix::from_entries(2, vec![4.0, 0.0, 0.0, 9.0]).unwrap();
        let l = cholesky(&m, 0.0).unwrap();
        assert_eq!(l.get(0, 0), 2.0);
        assert_eq!(l.get(1, 1), 3.0);
        assert_eq!(l.get(1, 0), 0.0);
    }

    #[test]
    fn cholesky_rank_one_with_jitter() {
        // eps * eps^T with eps = (1, 2)
        let m = CovMatrix::from_entries(2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        let l = cholesky(&m, 1e-9).unwrap();
        let r = l.reconstruct();
        for i in 0..2 {
            for j in 0..2 {
                assert!((r.get(i, j) - m.get(i, j)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cholesky_rejects_asymmetric() {
        let m = CovMatrix {
            dim: 2,
            entries: vec![1.0, 0.5, 0.2, 1.0],
        };
        assert!(matches!(
            cholesky(&m, 0.0),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = CovMatrix::from_entries(2, vec![1.0, 0.0, 0.0, -5.0]).unwrap();
        assert!(matches!(cholesky(&m, 1e-9), Err(Error::NotPsd)));
    }

    #[test]
    fn zero_factor_yields_zero_samples() {
        let l = LowerTriangular::zeros(3);
        let mut rng = RngState::from_seed(7);
        assert_eq!(sample_mvn(&l, &mut rng), vec![0.0; 3]);
    }

    #[test]
    fn identity_sample_statistics() {
        let l = cholesky(&CovMatrix::identity(2), 0.0).unwrap();
        let mut rng = RngState::from_seed(42);
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut sumsq = [0.0; 2];
        for _ in 0..n {
            let x = sample_mvn(&l, &mut rng);
            for d in 0..2 {
                sum[d] += x[d];
                sumsq[d] += x[d] * x[d];
            }
        }
        for d in 0..2 {
            let mean = sum[d] / n as f64;
            let var = sumsq[d] / n as f64 - mean * mean;
            assert!(mean.abs() < 0.02, "mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "var {var}");
        }
    }

    #[test]
    fn diagonal_sample_covariance() {
        let m = CovMatrix::from_entries(2, vec![4.0, 0.0, 0.0, 9.0]).unwrap();
        let l = cholesky(&m, 0.0).unwrap();
        let mut rng = RngState::from_seed(3);
        let n = 100_000;
        let mut cov = [[0.0; 2]; 2];
        for _ in 0..n {
            let x = sample_mvn(&l, &mut rng);
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += x[i] * x[j];
                }
            }
        }
        let expect: [[f64; 2]; 2] = [[4.0, 0.0], [0.0, 9.0]];
        for i in 0..2 {
            for j in 0..2 {
                let c = cov[i][j] / n as f64;
                let tol = 0.05 * expect[i][i].max(expect[j][j]);
                assert!((c - expect[i][j]).abs() < tol, "cov[{i}][{j}] = {c}");
            }
        }
    }

    #[test]
    fn equal_seeds_reproduce() {
        let l = cholesky(&CovMatrix::identity(4), 0.0).unwrap();
        let mut a = RngState::from_seed(99);
        let mut b = RngState::from_seed(99);
        for _ in 0..10 {
            assert_eq!(sample_mvn(&l, &mut a), sample_mvn(&l, &mut b));
        }
    }

    #[test]
    fn split_streams_differ() {
        let root = RngState::from_seed(5);
        let mut a = root.split(0);
        let mut b = root.split(1);
        let xa: Vec<f64> = a.normal_vec(4);
        let xb: Vec<f64> = b.normal_vec(4);
        assert_ne!(xa, xb);
    }

    #[test]
    fn reconstruct_random_matrices() {
        // Random well-conditioned SPD up to N=64: A = B*B^T + I.
        let mut rng = RngState::from_seed(11);
        for &n in &[2usize, 8, 64] {
            let b: Vec<f64> = rng.normal_vec(n * n);
            let mut m = CovMatrix::zeros(n);
            for i in 0..n {
                for j in 0..n {
                    let mut s = if i == j { 1.0 } else { 0.0 };
                    for k in 0..n {
                        s += b[i * n + k] * b[j * n + k];
                    }
                    m.set(i, j, s);
                }
            }
            let l = cholesky(&m, 0.0).unwrap();
            let r = l.reconstruct();
            for i in 0..n {
                for j in 0..n {
                    let scale = m.get(i, i).max(m.get(j, j));
                    assert!(
                        (r.get(i, j) - m.get(i, j)).abs() < 1e-8 * scale.max(1.0),
                        "n={n} i={i} j={j}"
                    );
                }
            }
        }
    }
}
