//! Per-sample confidence `kappa` from zero-shot logits, and the fused logit
//! `s = s0 + (beta / kappa) * s_bias`.
//!
//! `kappa` is computed on `s0` exactly as given. Kurtosis is affine
//! invariant, so it does not care whether `s0` holds raw cosines or
//! temperature-scaled logits; the max, top-2 and energy variants do.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::math;
use crate::numerics::{log_sum_exp, standardized_kurtosis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KappaMethod {
    Kurtosis,
    Max,
    Top2,
    Energy,
    /// `kappa = 1`: plain fixed-beta fusion.
    None,
}

impl KappaMethod {
    pub const ALL: [KappaMethod; 5] =
        [KappaMethod::Kurtosis, KappaMethod::Max, KappaMethod::Top2, KappaMethod::Energy, KappaMethod::None];

    pub fn name(self) -> &'static str {
        match self {
            KappaMethod::Kurtosis => "kurtosis",
            KappaMethod::Max => "max",
            KappaMethod::Top2 => "top2",
            KappaMethod::Energy => "energy",
            KappaMethod::None => "none",
        }
    }
}

impl core::fmt::Display for KappaMethod {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for KappaMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kurtosis" | "kurt" => Ok(KappaMethod::Kurtosis),
            "max" => Ok(KappaMethod::Max),
            "top2" => Ok(KappaMethod::Top2),
            "energy" => Ok(KappaMethod::Energy),
            "none" => Ok(KappaMethod::None),
            other => Err(Error::Argument(format!("unknown kappa method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub beta: f64,
    /// Power applied to the confidence base.
    pub rho: f64,
    pub kappa_method: KappaMethod,
    /// Degeneracy threshold for sigma, and the floor that non-positive
    /// bases are clamped to.
    pub epsilon: f64,
    /// On a degenerate (constant) `s0`, fall back to `kappa = 1` instead of
    /// failing.
    pub degenerate_fallback: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            rho: 0.4,
            kappa_method: KappaMethod::Kurtosis,
            epsilon: crate::numerics::DEGENERATE_EPSILON,
            degenerate_fallback: true,
        }
    }
}

impl FusionConfig {
    pub fn fixed_beta(beta: f64) -> Self {
        Self { beta, kappa_method: KappaMethod::None, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Argument(format!("beta must be finite and non-negative, got {}", self.beta)));
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(Error::Argument(format!("rho must be finite and non-negative, got {}", self.rho)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Argument(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// A computed confidence and the guards that fired while computing it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kappa {
    pub value: f64,
    /// Constant `s0` under the kurtosis method; `value` is 1.
    pub fallback: bool,
    /// The base was non-positive (or undefined) and clamped to epsilon.
    pub clamped: bool,
}

fn powered(base: f64, cfg: &FusionConfig) -> Kappa {
    if base.is_finite() && base > 0.0 {
        Kappa { value: math::powf(base, cfg.rho), fallback: false, clamped: false }
    } else {
        Kappa { value: math::powf(cfg.epsilon, cfg.rho), fallback: false, clamped: true }
    }
}

fn top_two(s0: &[f64]) -> (f64, f64) {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &x in s0 {
        if x > first {
            second = first;
            first = x;
        } else if x > second {
            second = x;
        }
    }
    (first, second)
}

/// Confidence of the zero-shot prediction `s0` under `cfg.kappa_method`.
pub fn kappa_detailed(s0: &[f64], cfg: &FusionConfig) -> Result<Kappa> {
    if s0.len() < 2 {
        return Err(Error::Argument(format!("kappa needs at least 2 classes, got {}", s0.len())));
    }
    if let Some(x) = s0.iter().find(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("non-finite zero-shot logit {x}")));
    }
    match cfg.kappa_method {
        KappaMethod::None => Ok(Kappa { value: 1.0, fallback: false, clamped: false }),
        KappaMethod::Kurtosis => match standardized_kurtosis(s0) {
            Ok(k) => Ok(powered(k, cfg)),
            Err(Error::Degenerate { sigma }) if cfg.degenerate_fallback => {
                log::warn!("constant zero-shot logits (sigma = {sigma:e}); using kappa = 1");
                Ok(Kappa { value: 1.0, fallback: true, clamped: false })
            }
            Err(e) => Err(e),
        },
        KappaMethod::Max => Ok(powered(top_two(s0).0, cfg)),
        KappaMethod::Top2 => {
            let (first, second) = top_two(s0);
            let denom = (first + second).abs();
            let base = if denom > 0.0 { (first - second) / denom } else { f64::NAN };
            Ok(powered(base, cfg))
        }
        KappaMethod::Energy => Ok(powered(log_sum_exp(s0)?, cfg)),
    }
}

pub fn kappa(s0: &[f64], cfg: &FusionConfig) -> Result<f64> {
    kappa_detailed(s0, cfg).map(|k| k.value)
}

/// `s0 + (beta / kappa) * s_bias` for an already computed `kappa`.
pub fn fuse_with_kappa(s0: &[f64], s_bias: &[f64], beta: f64, kappa: f64) -> Result<Vec<f64>> {
    check_len(s0.len(), s_bias.len())?;
    let weight = beta / kappa;
    Ok(s0.iter().zip(s_bias).map(|(a, b)| a + weight * b).collect())
}

pub fn fuse(s0: &[f64], s_bias: &[f64], cfg: &FusionConfig) -> Result<Vec<f64>> {
    check_len(s0.len(), s_bias.len())?;
    let k = kappa(s0, cfg)?;
    fuse_with_kappa(s0, s_bias, cfg.beta, k)
}

/// Running summary of `kappa` over a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaStats {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub fallback_count: usize,
    pub clamp_count: usize,
}

impl Default for KappaStats {
    fn default() -> Self {
        Self { count: 0, mean: 0.0, min: f64::INFINITY, max: f64::NEG_INFINITY, fallback_count: 0, clamp_count: 0 }
    }
}

impl KappaStats {
    pub fn push(&mut self, k: &Kappa) {
        self.count += 1;
        self.mean += (k.value - self.mean) / self.count as f64;
        self.min = self.min.min(k.value);
        self.max = self.max.max(k.value);
        self.fallback_count += usize::from(k.fallback);
        self.clamp_count += usize::from(k.clamped);
    }
}
