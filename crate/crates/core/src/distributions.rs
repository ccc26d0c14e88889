//! Gaussian posteriors, priors, KL divergences and the tied-variance
//! comparison between diagonal and isotropic posteriors.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite distribution parameter")]
    NonFinite,
    #[error("posterior must have at least one dimension")]
    Empty,
    #[error("expected {expected} geometry")]
    Geometry { expected: Geometry },
    #[error("box half-width must be positive, got {0}")]
    NonPositiveWidth(f64),
    #[error("mixture needs at least one component")]
    NoComponents,
    #[error("sample count must be at least 1")]
    NoSamples,
}

/// Covariance structure of a Gaussian posterior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Geometry {
    /// One variance per dimension (DGP).
    Diagonal,
    /// One variance shared by every dimension (IGP).
    Isotropic,
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Geometry::Diagonal => "diagonal",
            Geometry::Isotropic => "isotropic",
        })
    }
}

impl FromStr for Geometry {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "diagonal" | "dgp" => Ok(Geometry::Diagonal),
            "isotropic" | "igp" => Ok(Geometry::Isotropic),
            other => Err(format!("unknown geometry '{other}' (expected diagonal|isotropic)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LogVariance {
    PerDimension(Vec<f64>),
    Shared(f64),
}

/// `N(mean, diag(exp(log_var)))` with either per-dimension or shared log-variance.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    mean: Vec<f64>,
    log_var: LogVariance,
}

/// A reparameterized draw `z = mean + sigma * noise`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample {
    pub z: Vec<f64>,
    pub noise: Vec<f64>,
}

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// Numerically stable `ln(sum(exp(xs)))`; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Probability that a centred normal with std `sigma` lies in `(-eps, eps)`.
pub fn interval_mass(sigma: f64, eps: f64) -> f64 {
    libm::erf(eps / (SQRT_2 * sigma))
}

impl GaussianPosterior {
    pub fn diagonal(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self, DistributionError> {
        if mean.is_empty() {
            return Err(DistributionError::Empty);
        }
        if log_var.len() != mean.len() {
            return Err(DistributionError::DimensionMismatch {
                expected: mean.len(),
                got: log_var.len(),
            });
        }
        let p = GaussianPosterior {
            mean,
            log_var: LogVariance::PerDimension(log_var),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn isotropic(mean: Vec<f64>, log_var: f64) -> Result<Self, DistributionError> {
        if mean.is_empty() {
            return Err(DistributionError::Empty);
        }
        let p = GaussianPosterior {
            mean,
            log_var: LogVariance::Shared(log_var),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn standard(dim: usize) -> Self {
        GaussianPosterior {
            mean: vec![0.0; dim],
            log_var: LogVariance::Shared(0.0),
        }
    }

    fn validate(&self) -> Result<(), DistributionError> {
        let lv_ok = match &self.log_var {
            LogVariance::PerDimension(v) => all_finite(v) && v.iter().all(|x| x.exp().is_finite() && x.exp() > 0.0),
            LogVariance::Shared(v) => v.is_finite() && v.exp().is_finite() && v.exp() > 0.0,
        };
        if !all_finite(&self.mean) || !lv_ok {
            return Err(DistributionError::NonFinite);
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_variance(&self) -> &LogVariance {
        &self.log_var
    }

    pub fn geometry(&self) -> Geometry {
        match self.log_var {
            LogVariance::PerDimension(_) => Geometry::Diagonal,
            LogVariance::Shared(_) => Geometry::Isotropic,
        }
    }

    pub fn log_var_at(&self, i: usize) -> f64 {
        match &self.log_var {
            LogVariance::PerDimension(v) => v[i],
            LogVariance::Shared(v) => *v,
        }
    }

    pub fn log_vars(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.log_var_at(i)).collect()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| (0.5 * self.log_var_at(i)).exp()).collect()
    }

    /// Closed-form `KL(self || N(0, I))`.
    pub fn kl_to_standard_normal(&self) -> f64 {
        0.5 * (0..self.dim())
            .map(|i| {
                let lv = self.log_var_at(i);
                self.mean[i] * self.mean[i] + lv.exp() - 1.0 - lv
            })
            .sum::<f64>()
    }

    pub fn sample_reparameterized(&self, noise: &[f64]) -> Result<LatentSample, DistributionError> {
        if noise.len() != self.dim() {
            return Err(DistributionError::DimensionMismatch {
                expected: self.dim(),
                got: noise.len(),
            });
        }
        let z = self
            .mean
            .iter()
            .zip(self.sigmas())
            .zip(noise)
            .map(|((m, s), e)| m + s * e)
            .collect();
        Ok(LatentSample {
            z,
            noise: noise.to_vec(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LatentSample {
        let noise: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.sample_reparameterized(&noise)
            .expect("noise has posterior dimension")
    }

    /// Isotropic posterior with the same mean and the smallest per-dimension std.
    pub fn tie_variances(&self) -> Result<GaussianPosterior, DistributionError> {
        let LogVariance::PerDimension(lv) = &self.log_var else {
            return Err(DistributionError::Geometry {
                expected: Geometry::Diagonal,
            });
        };
        let min = lv.iter().copied().fold(f64::INFINITY, f64::min);
        GaussianPosterior::isotropic(self.mean.clone(), min)
    }

    /// `Pr(|z_i - mean_i| < eps for all i)` under this posterior.
    pub fn box_probability(&self, eps: f64) -> Result<f64, DistributionError> {
        Ok(self.log_box_probability(eps)?.exp())
    }

    pub fn log_box_probability(&self, eps: f64) -> Result<f64, DistributionError> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(DistributionError::NonPositiveWidth(eps));
        }
        Ok(self.sigmas().iter().map(|&s| interval_mass(s, eps).ln()).sum())
    }

    pub fn log_density(&self, z: &[f64]) -> Result<f64, DistributionError> {
        if z.len() != self.dim() {
            return Err(DistributionError::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        Ok(-0.5
            * (0..self.dim())
                .map(|i| {
                    let lv = self.log_var_at(i);
                    let d = z[i] - self.mean[i];
                    (2.0 * PI).ln() + lv + d * d / lv.exp()
                })
                .sum::<f64>())
    }
}

/// Latent prior.
#[derive(Clone, Debug, PartialEq)]
pub enum Prior {
    StandardNormal {
        dim: usize,
    },
    /// Uniformly weighted mixture.
    Mixture(Vec<GaussianPosterior>),
}

impl Prior {
    pub fn mixture(components: Vec<GaussianPosterior>) -> Result<Self, DistributionError> {
        let first = components.first().ok_or(DistributionError::NoComponents)?;
        if let Some(c) = components.iter().find(|c| c.dim() != first.dim()) {
            return Err(DistributionError::DimensionMismatch {
                expected: first.dim(),
                got: c.dim(),
            });
        }
        Ok(Prior::Mixture(components))
    }

    pub fn dim(&self) -> usize {
        match self {
            Prior::StandardNormal { dim } => *dim,
            Prior::Mixture(c) => c[0].dim(),
        }
    }

    pub fn components(&self) -> usize {
        match self {
            Prior::StandardNormal { .. } => 1,
            Prior::Mixture(c) => c.len(),
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        let k = self.components();
        vec![1.0 / k as f64; k]
    }

    pub fn log_density(&self, z: &[f64]) -> Result<f64, DistributionError> {
        match self {
            Prior::StandardNormal { dim } => GaussianPosterior::standard(*dim).log_density(z),
            Prior::Mixture(components) => {
                let logs = components
                    .iter()
                    .map(|c| c.log_density(z))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(log_sum_exp(&logs) - (components.len() as f64).ln())
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Prior::StandardNormal { dim } => (0..*dim).map(|_| rng.sample(StandardNormal)).collect(),
            Prior::Mixture(components) => {
                let k = rng.random_range(0..components.len());
                components[k].sample(rng).z
            }
        }
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Unbiased `E_q[log q(z) - log prior(z)]` from `n` draws of `q`.
pub fn mc_kl_estimate(
    posterior: &GaussianPosterior,
    prior: &Prior,
    n: usize,
    seed: u64,
) -> Result<McEstimate, DistributionError> {
    if n == 0 {
        return Err(DistributionError::NoSamples);
    }
    if prior.dim() != posterior.dim() {
        return Err(DistributionError::DimensionMismatch {
            expected: posterior.dim(),
            got: prior.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let s = posterior.sample(&mut rng);
        let term = posterior.log_density(&s.z)? - prior.log_density(&s.z)?;
        sum += term;
        sum_sq += term * term;
    }
    let mean = sum / n as f64;
    let var = if n > 1 {
        ((sum_sq - n as f64 * mean * mean) / (n as f64 - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        value: mean,
        std_error: (var / n as f64).sqrt(),
    })
}

/// Result of checking that tying variances to their minimum never lowers
/// the KL to N(0, I) nor the mass of a centred box.
#[derive(Clone, Debug, PartialEq)]
pub struct TiedVarianceReport {
    pub trials: usize,
    pub dim: usize,
    pub widths: Vec<f64>,
    pub kl_violations: usize,
    pub box_violations: usize,
    pub monotone_violations: usize,
    /// Smallest `KL(tied) - KL(diagonal)` seen.
    pub worst_kl_slack: f64,
    /// Smallest `log P_box(tied) - log P_box(diagonal)` seen.
    pub worst_box_slack: f64,
}

impl TiedVarianceReport {
    pub fn passed(&self) -> bool {
        self.kl_violations == 0 && self.box_violations == 0 && self.monotone_violations == 0
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{} trials={} d={} kl_violations={} box_violations={} monotone_violations={} worst_kl_slack={:.3e} worst_box_slack={:.3e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.trials,
            self.dim,
            self.kl_violations,
            self.box_violations,
            self.monotone_violations,
            self.worst_kl_slack,
            self.worst_box_slack,
        )
    }
}

pub const SIGMA_RANGE: (f64, f64) = (0.05, 5.0);
pub const VERIFY_TOLERANCE: f64 = 1e-12;
pub const MONOTONE_GRID_POINTS: usize = 50;

/// Count of grid steps where `interval_mass(sigma, eps)` fails to strictly decrease.
pub fn interval_mass_monotone_violations(eps: f64, points: usize) -> usize {
    let (lo, hi) = SIGMA_RANGE;
    let grid: Vec<f64> = (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1).max(1) as f64)
        .collect();
    grid.windows(2)
        .filter(|w| interval_mass(w[1], eps) >= interval_mass(w[0], eps))
        .count()
}

pub fn verify_theorem1(n_trials: usize, dim: usize, seed: u64) -> TiedVarianceReport {
    verify_tied_variance(n_trials, dim, &[0.1, 1.0], SIGMA_RANGE, seed)
}

/// Samples random diagonal posteriors with stds drawn uniformly from
/// `sigma_range` and checks both inequalities against their tied
/// counterparts for every width.
///
/// The box-mass inequality holds for any stds. The KL inequality only holds
/// when every std is at most 1: `s - 1 - ln s` grows again for `s > 1`, so
/// tying a diagonal posterior with some stds above 1 to its minimum can
/// lower the KL.
pub fn verify_tied_variance(
    n_trials: usize,
    dim: usize,
    widths: &[f64],
    sigma_range: (f64, f64),
    seed: u64,
) -> TiedVarianceReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = sigma_range;
    let mut report = TiedVarianceReport {
        trials: n_trials,
        dim,
        widths: widths.to_vec(),
        kl_violations: 0,
        box_violations: 0,
        monotone_violations: widths
            .iter()
            .map(|&e| interval_mass_monotone_violations(e, MONOTONE_GRID_POINTS))
            .sum(),
        worst_kl_slack: f64::INFINITY,
        worst_box_slack: f64::INFINITY,
    };
    for _ in 0..n_trials {
        let mean: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let log_var: Vec<f64> = (0..dim)
            .map(|_| {
                let s: f64 = rng.random_range(lo..=hi);
                2.0 * s.ln()
            })
            .collect();
        let p = GaussianPosterior::diagonal(mean, log_var).expect("finite by construction");
        let q = p.tie_variances().expect("diagonal input");
        let kl_slack = q.kl_to_standard_normal() - p.kl_to_standard_normal();
        if kl_slack < -VERIFY_TOLERANCE {
            report.kl_violations += 1;
        }
        report.worst_kl_slack = report.worst_kl_slack.min(kl_slack);
        for &eps in widths {
            let slack = q.log_box_probability(eps).unwrap() - p.log_box_probability(eps).unwrap();
            if slack < -VERIFY_TOLERANCE {
                report.box_violations += 1;
            }
            report.worst_box_slack = report.worst_box_slack.min(slack);
        }
    }
    report
}
