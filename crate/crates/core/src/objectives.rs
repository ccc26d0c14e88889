//! Loss assembly: plain ELBO, target-KL constrained objective, β-VAE and IWAE.

use std::fmt;

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("KL term must be non-negative, got {0}")]
    NegativeKl(f64),
    #[error("target KL must be non-negative, got {0}")]
    NegativeTarget(f64),
    #[error("beta must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error("IWAE sample count must be at least 1")]
    ZeroSamples,
    #[error("warm-up must span at least one step")]
    EmptyWarmup,
}

/// Linear ramp of the KL target from `start` to `end` over `steps` updates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Warmup {
    pub start: f64,
    pub end: f64,
    pub steps: u64,
}

impl Warmup {
    pub fn value_at(&self, step: u64) -> f64 {
        let frac = (step as f64 / self.steps as f64).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ObjectiveConfig {
    /// Negative ELBO.
    Plain,
    /// `rec + beta * |kl - C|`.
    Constrained {
        target: f64,
        beta: f64,
        warmup: Option<Warmup>,
    },
    /// `rec + beta * kl`.
    Beta { beta: f64 },
    /// Negative k-sample importance-weighted bound.
    Iwae { k: usize },
}

impl fmt::Display for ObjectiveConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectiveConfig::Plain => write!(f, "plain"),
            ObjectiveConfig::Constrained { target, .. } => write!(f, "constrained(C={target})"),
            ObjectiveConfig::Beta { beta } => write!(f, "beta({beta})"),
            ObjectiveConfig::Iwae { k } => write!(f, "iwae(k={k})"),
        }
    }
}

impl ObjectiveConfig {
    pub fn constrained(target: f64) -> Self {
        ObjectiveConfig::Constrained {
            target,
            beta: 1.0,
            warmup: None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveConfig::Plain => "plain",
            ObjectiveConfig::Constrained { .. } => "constrained",
            ObjectiveConfig::Beta { .. } => "beta",
            ObjectiveConfig::Iwae { .. } => "iwae",
        }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        match *self {
            ObjectiveConfig::Plain => Ok(()),
            ObjectiveConfig::Constrained { target, beta, warmup } => {
                if target.is_nan() || target < 0.0 {
                    return Err(ObjectiveError::NegativeTarget(target));
                }
                if beta.is_nan() || beta <= 0.0 {
                    return Err(ObjectiveError::NonPositiveBeta(beta));
                }
                if let Some(w) = warmup {
                    if w.steps == 0 {
                        return Err(ObjectiveError::EmptyWarmup);
                    }
                    if w.start < 0.0 {
                        return Err(ObjectiveError::NegativeTarget(w.start));
                    }
                }
                Ok(())
            }
            ObjectiveConfig::Beta { beta } if beta.is_nan() || beta <= 0.0 => {
                Err(ObjectiveError::NonPositiveBeta(beta))
            }
            ObjectiveConfig::Beta { .. } => Ok(()),
            ObjectiveConfig::Iwae { k: 0 } => Err(ObjectiveError::ZeroSamples),
            ObjectiveConfig::Iwae { .. } => Ok(()),
        }
    }

    /// KL target in force at optimizer step `step` (constrained only).
    pub fn target_at(&self, step: u64) -> Option<f64> {
        match self {
            ObjectiveConfig::Constrained {
                target,
                warmup: Some(w),
                ..
            } => Some(w.value_at(step).min(*target)),
            ObjectiveConfig::Constrained { target, .. } => Some(*target),
            _ => None,
        }
    }

    pub fn iwae_samples(&self) -> Option<usize> {
        match self {
            ObjectiveConfig::Iwae { k } => Some(*k),
            _ => None,
        }
    }

    /// Scalar value of the objective for already-reduced terms.
    pub fn value(&self, rec: f64, kl: f64, step: u64) -> f64 {
        match self {
            ObjectiveConfig::Plain | ObjectiveConfig::Iwae { .. } => rec + kl,
            ObjectiveConfig::Constrained { beta, .. } => {
                rec + beta * (kl - self.target_at(step).expect("constrained")).abs()
            }
            ObjectiveConfig::Beta { beta } => rec + beta * kl,
        }
    }

    /// Builds the minimized scalar on the tape from batch-mean `rec` and `kl`.
    /// IWAE losses are produced by the model and not assembled here.
    pub fn assemble(&self, tape: &mut Tape, rec: Var, kl: Var, step: u64) -> Result<Var, AutodiffError> {
        match self {
            ObjectiveConfig::Plain | ObjectiveConfig::Iwae { .. } => tape.add(rec, kl),
            ObjectiveConfig::Constrained { beta, .. } => {
                let c = self.target_at(step).expect("constrained");
                let gap = tape.add_scalar(kl, -c)?;
                let dist = tape.abs(gap)?;
                let weighted = tape.scale(dist, *beta)?;
                tape.add(rec, weighted)
            }
            ObjectiveConfig::Beta { beta } => {
                let weighted = tape.scale(kl, *beta)?;
                tape.add(rec, weighted)
            }
        }
    }
}

/// Negative ELBO: `rec + kl`.
pub fn elbo_loss(rec_loss: f64, kl: f64) -> Result<f64, ObjectiveError> {
    if kl < 0.0 {
        return Err(ObjectiveError::NegativeKl(kl));
    }
    Ok(rec_loss + kl)
}

/// `rec + beta * |kl - C|`.
pub fn constrained_loss(rec_loss: f64, kl: f64, target: f64, beta: f64) -> Result<f64, ObjectiveError> {
    if target < 0.0 {
        return Err(ObjectiveError::NegativeTarget(target));
    }
    if beta <= 0.0 {
        return Err(ObjectiveError::NonPositiveBeta(beta));
    }
    if kl < 0.0 {
        return Err(ObjectiveError::NegativeKl(kl));
    }
    Ok(rec_loss + beta * (kl - target).abs())
}

pub fn beta_loss(rec_loss: f64, kl: f64, beta: f64) -> Result<f64, ObjectiveError> {
    if beta <= 0.0 {
        return Err(ObjectiveError::NonPositiveBeta(beta));
    }
    if kl < 0.0 {
        return Err(ObjectiveError::NegativeKl(kl));
    }
    Ok(rec_loss + beta * kl)
}

/// Rate/distortion bookkeeping: `H - D <= I(x, z) <= R`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct CapacityDiagnostics {
    /// Mean reconstruction loss.
    pub distortion: f64,
    /// Mean KL.
    pub rate: f64,
    /// `R + D`, the width of the mutual-information bracket up to the
    /// unknown data entropy `H`.
    pub rate_bound_gap: f64,
}

pub fn capacity_diagnostics(rec_loss_mean: f64, kl_mean: f64) -> CapacityDiagnostics {
    CapacityDiagnostics {
        distortion: rec_loss_mean,
        rate: kl_mean,
        rate_bound_gap: kl_mean + rec_loss_mean,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use proptest::prelude::*;

    fn grads(obj: &ObjectiveConfig, rec: f64, kl: f64) -> (f64, f64) {
        let mut t = Tape::new();
        let r = t.param(Tensor::scalar(rec));
        let k = t.param(Tensor::scalar(kl));
        let l = obj.assemble(&mut t, r, k, 0).unwrap();
        t.backward(l).unwrap();
        (t.grad(r).unwrap().item(), t.grad(k).unwrap().item())
    }

    #[test]
    fn elbo_examples() {
        assert_eq!(elbo_loss(10.0, 0.0).unwrap(), 10.0);
        assert_eq!(elbo_loss(10.0, 5.0).unwrap(), 15.0);
        assert_eq!(grads(&ObjectiveConfig::Plain, 10.0, 5.0), (1.0, 1.0));
        assert_eq!(elbo_loss(1.0, -0.1), Err(ObjectiveError::NegativeKl(-0.1)));
    }

    #[test]
    fn constrained_examples() {
        assert_eq!(constrained_loss(7.5, 5.0, 5.0, 1.0).unwrap(), 7.5);
        assert_eq!(constrained_loss(10.0, 3.0, 5.0, 1.0).unwrap(), 12.0);
        let obj = ObjectiveConfig::constrained(5.0);
        assert_eq!(grads(&obj, 10.0, 3.0).1, -1.0);
        assert_eq!(grads(&obj, 10.0, 7.0).1, 1.0);
        assert_eq!(grads(&obj, 10.0, 5.0).1, 0.0);
        assert!(constrained_loss(1.0, 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn beta_examples() {
        assert_eq!(
            beta_loss(10.0, 5.0, 1.0).unwrap().to_bits(),
            elbo_loss(10.0, 5.0).unwrap().to_bits()
        );
        assert!((beta_loss(10.0, 5.0, 0.2).unwrap() - 11.0).abs() < 1e-12);
        let hi = grads(&ObjectiveConfig::Beta { beta: 0.8 }, 10.0, 5.0).1;
        let lo = grads(&ObjectiveConfig::Beta { beta: 0.2 }, 10.0, 5.0).1;
        assert!((hi / lo - 4.0).abs() < 1e-12);
        assert!(beta_loss(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn capacity_bookkeeping() {
        let d = capacity_diagnostics(20.0, 0.0);
        assert_eq!(d.rate, 0.0);
        let kl_mean = 3.25_f64;
        assert_eq!(capacity_diagnostics(1.0, kl_mean).rate.to_bits(), kl_mean.to_bits());
    }

    #[test]
    fn warmup_ramps_linearly_and_caps() {
        let obj = ObjectiveConfig::Constrained {
            target: 5.0,
            beta: 1.0,
            warmup: Some(Warmup {
                start: 0.0,
                end: 5.0,
                steps: 100,
            }),
        };
        assert_eq!(obj.target_at(0), Some(0.0));
        assert_eq!(obj.target_at(50), Some(2.5));
        assert_eq!(obj.target_at(1000), Some(5.0));
        assert_eq!(ObjectiveConfig::Plain.target_at(3), None);
    }

    #[test]
    fn validation() {
        assert!(ObjectiveConfig::Iwae { k: 0 }.validate().is_err());
        assert!(ObjectiveConfig::Beta { beta: -1.0 }.validate().is_err());
        assert!(ObjectiveConfig::constrained(-2.0).validate().is_err());
        assert!(ObjectiveConfig::constrained(0.0).validate().is_ok());
    }

    proptest! {
        #[test]
        fn objectives_monotone_in_rec(rec in 0.0..100.0f64, d in 0.0..10.0f64, kl in 0.0..20.0f64, c in 0.0..20.0f64) {
            for obj in [ObjectiveConfig::Plain, ObjectiveConfig::constrained(c), ObjectiveConfig::Beta { beta: 0.4 }] {
                prop_assert!(obj.value(rec + d, kl, 0) >= obj.value(rec, kl, 0));
            }
        }

        #[test]
        fn on_target_has_no_kl_contribution(rec in 0.0..100.0f64, c in 0.0..20.0f64) {
            prop_assert_eq!(constrained_loss(rec, c, c, 1.0).unwrap(), rec);
        }

        #[test]
        fn tape_matches_scalar_value(rec in 0.0..100.0f64, kl in 0.0..20.0f64, c in 0.0..20.0f64) {
            for obj in [ObjectiveConfig::Plain, ObjectiveConfig::constrained(c), ObjectiveConfig::Beta { beta: 0.3 }] {
                let mut t = Tape::new();
                let r = t.constant(Tensor::scalar(rec));
                let k = t.constant(Tensor::scalar(kl));
                let l = obj.assemble(&mut t, r, k, 0).unwrap();
                prop_assert!((t.scalar(l) - obj.value(rec, kl, 0)).abs() < 1e-12);
            }
        }
    }
}
