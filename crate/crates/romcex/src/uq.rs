//! Additive uncertainty channels on a product sample space.
//!
//! Imperfect models and inexact numerics are represented as two additive
//! zero-mean random fields on the state space: a modelling-error channel
//! and a numerical-error channel.  They live on independent factors of a
//! product probability space, so expectations over both factorize into
//! iterated (nested) means.  This module provides the noise descriptions,
//! a deterministic product sampler, snapshot perturbation, nested
//! expectations, and the generalized least-squares loss that folds the
//! noise channels into conditional-expectation fits.

use serde::{Deserialize, Serialize};

use crate::bayes::{kernel_eval, CexMap, KernelKind, KernelSpec};
use crate::error::{Error, Result};
use crate::linalg::{chol_psd, DenseMatrix};
use crate::parametric_map::SnapshotSet;
use crate::rng::{standard_normal_vec, stream_rng, CH_NOISE_M, CH_NOISE_N};

// ── noise descriptions ──────────────────────────────────────────────

/// Structure of one additive noise channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// Independent N(0, scale^2) entries.
    IidGaussian,
    /// Entries correlated across state indices: the covariance is
    /// scale^2 * K where K[i][j] = kernel(i, j) over the integer state
    /// indices treated as 1-d points.
    CorrelatedGaussian { kernel: KernelSpec },
}

/// Which channel a noise description belongs to.  The labels keep run
/// artifacts self-describing; samplers insist on one of each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLabel {
    EtaM,
    EtaN,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Standard deviation multiplier; zero switches the channel off.
    pub scale: f64,
    pub label: NoiseLabel,
}

impl NoiseSpec {
    pub fn iid(scale: f64, label: NoiseLabel) -> Self {
        Self {
            kind: NoiseKind::IidGaussian,
            scale,
            label,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.scale.is_finite() || self.scale < 0.0 {
            return Err(Error::invalid(format!(
                "noise scale must be finite and nonnegative, got {}",
                self.scale
            )));
        }
        if let NoiseKind::CorrelatedGaussian { kernel } = &self.kind {
            kernel.validate()?;
            if kernel.cross_covariance.is_some() {
                return Err(Error::invalid(
                    "noise kernels act over state indices; cross covariance is not meaningful here",
                ));
            }
            if matches!(kernel.kind, KernelKind::SquaredExponential | KernelKind::Exponential)
                && kernel.length_scale.is_none()
            {
                return Err(Error::invalid(
                    "correlated noise needs an explicit kernel length scale",
                ));
            }
        }
        Ok(())
    }
}

// ── product sampler ─────────────────────────────────────────────────

/// Deterministic sampler over the product of the two noise factors.
///
/// The two channels draw from independent seed-derived streams, which
/// realizes the product measure: the draw for grid index m of the
/// modelling channel never depends on the numerical index n, and vice
/// versa.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProductSampler {
    pub spec_m: NoiseSpec,
    pub spec_n: NoiseSpec,
    pub seed: u64,
    /// (N_M, N_N) grid sizes for nested expectations.
    pub counts: (usize, usize),
}

impl ProductSampler {
    pub fn new(spec_m: NoiseSpec, spec_n: NoiseSpec, seed: u64, counts: (usize, usize)) -> Result<Self> {
        let s = Self {
            spec_m,
            spec_n,
            seed,
            counts,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec_m.validate()?;
        self.spec_n.validate()?;
        if self.spec_m.label != NoiseLabel::EtaM || self.spec_n.label != NoiseLabel::EtaN {
            return Err(Error::invalid(
                "sampler factors must be labeled eta_M and eta_N in that order",
            ));
        }
        if self.counts.0 == 0 || self.counts.1 == 0 {
            return Err(Error::invalid("sample counts must be at least 1 per factor"));
        }
        Ok(())
    }

    /// Lower Cholesky factor of the index covariance, or None for iid
    /// noise.  Errors if the kernel covariance is not positive
    /// semidefinite at the requested dimension.
    fn channel_factor(spec: &NoiseSpec, dim: usize) -> Result<Option<DenseMatrix>> {
        let kernel = match &spec.kind {
            NoiseKind::IidGaussian => return Ok(None),
            NoiseKind::CorrelatedGaussian { kernel } => kernel,
        };
        let cov = match &kernel.kind {
            KernelKind::EmpiricalGram { gram } => {
                if gram.rows() != dim {
                    return Err(Error::dim(format!(
                        "noise covariance is {}x{} but the state dimension is {dim}",
                        gram.rows(),
                        gram.cols()
                    )));
                }
                gram.clone()
            }
            _ => {
                let l = kernel.length_scale.expect("validated above");
                DenseMatrix::from_fn(dim, dim, |i, j| {
                    kernel_eval(kernel, l, &[i as f64], &[j as f64])
                })
            }
        };
        let factor = chol_psd(&cov, 0.0).map_err(|_| {
            Error::invalid("correlated noise covariance is not positive semidefinite")
        })?;
        Ok(Some(factor.lower))
    }

    /// One realization of a channel at a grid index.
    fn draw(
        spec: &NoiseSpec,
        factor: &Option<DenseMatrix>,
        seed: u64,
        channel: u64,
        index: u64,
        dim: usize,
    ) -> Vec<f64> {
        let mut rng = stream_rng(seed, channel, index);
        let xi = standard_normal_vec(&mut rng, dim);
        match factor {
            None => xi.iter().map(|v| spec.scale * v).collect(),
            Some(l) => l.matvec(&xi).iter().map(|v| spec.scale * v).collect(),
        }
    }

    /// All modelling-channel draws for indices 0..count at a given
    /// state dimension.
    pub fn draws_m(&self, count: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
        let factor = Self::channel_factor(&self.spec_m, dim)?;
        Ok((0..count)
            .map(|m| Self::draw(&self.spec_m, &factor, self.seed, CH_NOISE_M, m as u64, dim))
            .collect())
    }

    /// All numerical-channel draws for indices 0..count.
    pub fn draws_n(&self, count: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
        let factor = Self::channel_factor(&self.spec_n, dim)?;
        Ok((0..count)
            .map(|n| Self::draw(&self.spec_n, &factor, self.seed, CH_NOISE_N, n as u64, dim))
            .collect())
    }
}

// ── snapshot perturbation ───────────────────────────────────────────

/// Replace each snapshot column r_k by r_k + eta_M,k + eta_N,k with
/// independent per-column draws.  Parameters and weights pass through
/// unchanged.
pub fn perturb_snapshots(snapshots: &SnapshotSet, sampler: &ProductSampler) -> Result<SnapshotSet> {
    sampler.validate()?;
    let d = snapshots.state_dim();
    let k = snapshots.len();
    let eta_m = sampler.draws_m(k, d)?;
    let eta_n = sampler.draws_n(k, d)?;
    let states = DenseMatrix::from_fn(d, k, |i, c| {
        snapshots.states().get(i, c) + eta_m[c][i] + eta_n[c][i]
    });
    SnapshotSet::new(
        snapshots.params().to_vec(),
        states,
        snapshots.weights().to_vec(),
    )
}

// ── nested expectation ──────────────────────────────────────────────

/// Expectation of a pure function of the two noise realizations over
/// the full (N_M, N_N) product grid.
///
/// Both the nested mean (inner mean over the modelling factor, outer
/// mean over the numerical factor) and the flat mean over the grid are
/// evaluated with the identical arithmetic order: per-n inner sums are
/// scaled by 1/N_M before the outer accumulation, then the outer sum is
/// scaled by 1/N_N.  With one shared order the iterated-integral
/// identity holds bitwise, and the function asserts it.
pub fn total_expectation(
    evaluator: impl Fn(&[f64], &[f64]) -> f64,
    sampler: &ProductSampler,
    dim: usize,
) -> Result<f64> {
    sampler.validate()?;
    let (n_m, n_n) = sampler.counts;
    let eta_m = sampler.draws_m(n_m, dim)?;
    let eta_n = sampler.draws_n(n_n, dim)?;

    let nested = {
        let mut outer = 0.0;
        for en in &eta_n {
            let mut inner = 0.0;
            for em in &eta_m {
                inner += evaluator(em, en);
            }
            outer += inner / n_m as f64;
        }
        outer / n_n as f64
    };

    // Flat traversal of the same grid, same order, same scaling.
    let flat = {
        let mut outer = 0.0;
        let mut inner = 0.0;
        for (idx, (en, em)) in eta_n
            .iter()
            .flat_map(|en| eta_m.iter().map(move |em| (en, em)))
            .enumerate()
        {
            inner += evaluator(em, en);
            if (idx + 1) % n_m == 0 {
                outer += inner / n_m as f64;
                inner = 0.0;
            }
        }
        outer / n_n as f64
    };
    assert!(
        nested == flat,
        "iterated and flat means diverged: {nested} vs {flat}"
    );
    Ok(nested)
}

// ── generalized loss ────────────────────────────────────────────────

/// Weighted least-squares distance between noisy states and a candidate
/// observation-to-state map:
///
///   sum_k rho_k * E[ || r_k + eta_M + eta_N - chi(z_k) ||^2 ]
///
/// with the expectation taken over the sampler's product grid.  The
/// same noise grid is shared across parameter samples; it is drawn
/// independently of them, so the estimator is unbiased.
pub fn generalized_loss<M: CexMap + ?Sized>(
    x_samples: &SnapshotSet,
    candidate_map: &M,
    z_samples: &DenseMatrix,
    sampler: &ProductSampler,
) -> Result<f64> {
    sampler.validate()?;
    if z_samples.cols() != x_samples.len() {
        return Err(Error::dim(format!(
            "{} observation columns for {} state samples",
            z_samples.cols(),
            x_samples.len()
        )));
    }
    let d = x_samples.state_dim();
    let (n_m, n_n) = sampler.counts;
    let eta_m = sampler.draws_m(n_m, d)?;
    let eta_n = sampler.draws_n(n_n, d)?;

    let mut loss = 0.0;
    for k in 0..x_samples.len() {
        let r = x_samples.state_col(k);
        let fit = candidate_map.eval(&z_samples.col(k));
        if fit.len() != d {
            return Err(Error::dim(format!(
                "candidate map returned {} entries for state dimension {d}",
                fit.len()
            )));
        }
        let base: Vec<f64> = r.iter().zip(&fit).map(|(a, b)| a - b).collect();
        let mut outer = 0.0;
        for en in &eta_n {
            let mut inner = 0.0;
            for em in &eta_m {
                let mut sq = 0.0;
                for i in 0..d {
                    let v = base[i] + em[i] + en[i];
                    sq += v * v;
                }
                inner += sq;
            }
            outer += inner / n_m as f64;
        }
        loss += x_samples.weights()[k] * (outer / n_n as f64);
    }
    Ok(loss)
}
