//! Zero-shot logits and the logit-bias predictors: a linear probe and
//! single/dual cache models.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::math;
use crate::numerics::{cosine_similarity, dot};
use crate::store::{FeatureStore, FewShotTask, ZeroShotHead};

/// Default sharpness of the cache affinity `exp(-gamma * (1 - x))`.
pub const DEFAULT_CACHE_SHARPNESS: f64 = 5.5;
/// Temperature of the two-way softmax that mixes dual-cache branches.
pub const DUAL_CACHE_TEMPERATURE: f64 = 0.5;
/// Allowed deviation from unit norm for cache keys and queries.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

/// `s0[i] = <W0 row i, f>`.
pub fn zero_shot_logits(head: &ZeroShotHead, f: &[f64]) -> Result<Vec<f64>> {
    check_len(head.dim(), f.len())?;
    Ok((0..head.classes()).map(|c| dot(head.row(c), f)).collect())
}

/// Linear probe `W` mapping a `d`-vector to `C` bias logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    classes: usize,
    dim: usize,
    weights: Vec<f64>,
}

impl LinearProbe {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self { classes, dim, weights: vec![0.0; classes * dim] }
    }

    pub fn from_weights(classes: usize, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if classes == 0 || dim == 0 {
            return Err(Error::Argument("probe needs at least one class and one dimension".into()));
        }
        check_len(classes * dim, weights.len())?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Data("probe has non-finite weights".into()));
        }
        Ok(Self { classes, dim, weights })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }

    pub(crate) fn logits_unchecked(&self, f: &[f64]) -> Vec<f64> {
        (0..self.classes).map(|c| dot(self.row(c), f)).collect()
    }
}

/// `s_bias = W f`.
pub fn lp_bias(probe: &LinearProbe, f: &[f64]) -> Result<Vec<f64>> {
    check_len(probe.dim, f.len())?;
    Ok(probe.logits_unchecked(f))
}

/// Feature initialization: row `i` is the mean of the auxiliary train
/// features of class `i`, accumulated in task order.
pub fn init_linear_probe(task: &FewShotTask, aux: &FeatureStore) -> Result<LinearProbe> {
    let c = task.class_count();
    if c != aux.class_count() {
        return Err(Error::Shape { expected: aux.class_count(), found: c });
    }
    let d = aux.dim();
    let mut weights = vec![0.0; c * d];
    for (class, indices) in task.train_indices.iter().enumerate() {
        if indices.is_empty() {
            return Err(Error::Sampling(format!("class {class} has no training samples")));
        }
        let row = &mut weights[class * d..(class + 1) * d];
        for &i in indices {
            if i >= aux.len() {
                return Err(Error::Index { index: i, len: aux.len() });
            }
            if aux.label(i) != class {
                return Err(Error::Data(format!(
                    "sample {i} is labelled {} but listed under class {class}",
                    aux.label(i)
                )));
            }
            for (w, &x) in row.iter_mut().zip(aux.row(i)) {
                *w += f64::from(x);
            }
        }
        let n = indices.len() as f64;
        for w in row.iter_mut() {
            *w /= n;
        }
    }
    LinearProbe::from_weights(c, d, weights)
}

/// "Soft" nearest-neighbour classifier over stored unit-norm training
/// features with a one-hot value matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheModel {
    dim: usize,
    classes: usize,
    keys: Vec<f64>,
    values: Vec<f64>,
    sharpness: f64,
}

impl CacheModel {
    /// `keys` is `n x dim` row-major, `values` is `n x classes` with one-hot
    /// rows.
    pub fn new(dim: usize, classes: usize, keys: Vec<f64>, values: Vec<f64>, sharpness: f64) -> Result<Self> {
        if dim == 0 || classes == 0 || keys.is_empty() {
            return Err(Error::Argument("cache needs keys, a dimension and classes".into()));
        }
        if !keys.len().is_multiple_of(dim) {
            return Err(Error::Shape { expected: keys.len() / dim * dim, found: keys.len() });
        }
        let n = keys.len() / dim;
        check_len(n * classes, values.len())?;
        if !(sharpness.is_finite() && sharpness >= 0.0) {
            return Err(Error::Argument(format!("cache sharpness must be finite and non-negative, got {sharpness}")));
        }
        for (j, key) in keys.chunks_exact(dim).enumerate() {
            let norm = math::sqrt(dot(key, key));
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::Data(format!("cache key {j} has norm {norm}, expected 1")));
            }
        }
        for (j, row) in values.chunks_exact(classes).enumerate() {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || zeros != classes - 1 {
                return Err(Error::Data(format!("cache value row {j} is not one-hot")));
            }
        }
        Ok(Self { dim, classes, keys, values, sharpness })
    }

    /// One key per training sample of `task`, taken from `store`.
    pub fn from_task(task: &FewShotTask, store: &FeatureStore, sharpness: f64) -> Result<Self> {
        let classes = store.class_count();
        let train = task.train_flat();
        let mut keys = Vec::with_capacity(train.len() * store.dim());
        let mut values = vec![0.0; train.len() * classes];
        for (j, &i) in train.iter().enumerate() {
            keys.extend(store.row_f64(i));
            values[j * classes + store.label(i)] = 1.0;
        }
        Self::new(store.dim(), classes, keys, values, sharpness)
    }

    pub fn len(&self) -> usize {
        self.keys.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn sharpness(&self) -> f64 {
        self.sharpness
    }

    pub fn key(&self, j: usize) -> &[f64] {
        &self.keys[j * self.dim..(j + 1) * self.dim]
    }

    pub fn value(&self, j: usize) -> &[f64] {
        &self.values[j * self.classes..(j + 1) * self.classes]
    }
}

fn ensure_unit(f: &[f64]) -> Result<()> {
    let norm = math::sqrt(dot(f, f));
    if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(Error::Data(format!("cache query has norm {norm}, expected 1")));
    }
    Ok(())
}

/// `phi(K f) V` with `phi(x) = exp(-gamma * (1 - x))`.
pub fn cache_bias(cache: &CacheModel, f: &[f64]) -> Result<Vec<f64>> {
    check_len(cache.dim, f.len())?;
    ensure_unit(f)?;
    let mut out = vec![0.0; cache.classes];
    for j in 0..cache.len() {
        let affinity = math::exp(-cache.sharpness * (1.0 - dot(cache.key(j), f)));
        for (o, &v) in out.iter_mut().zip(cache.value(j)) {
            *o += affinity * v;
        }
    }
    Ok(out)
}

/// Mixing weight of the first branch: a softmax at temperature `tau` over
/// the cosine similarities of each branch with `s0`.
pub fn dual_cache_alpha(s0: &[f64], bias_a: &[f64], bias_b: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Argument(format!("temperature must be positive, got {tau}")));
    }
    let sim_a = cosine_similarity(s0, bias_a)?;
    let sim_b = cosine_similarity(s0, bias_b)?;
    Ok(1.0 / (1.0 + math::exp((sim_b - sim_a) / tau)))
}

/// `alpha * cache_bias(a, f_a) + (1 - alpha) * cache_bias(b, f_b)` with
/// `alpha` from [`dual_cache_alpha`] at [`DUAL_CACHE_TEMPERATURE`].
pub fn dual_cache_bias(
    cache_a: &CacheModel,
    cache_b: &CacheModel,
    f_a: &[f64],
    f_b: &[f64],
    s0: &[f64],
) -> Result<Vec<f64>> {
    dual_cache_bias_with_temperature(cache_a, cache_b, f_a, f_b, s0, DUAL_CACHE_TEMPERATURE)
}

pub fn dual_cache_bias_with_temperature(
    cache_a: &CacheModel,
    cache_b: &CacheModel,
    f_a: &[f64],
    f_b: &[f64],
    s0: &[f64],
    tau: f64,
) -> Result<Vec<f64>> {
    check_len(cache_a.classes, cache_b.classes)?;
    check_len(cache_a.classes, s0.len())?;
    let a = cache_bias(cache_a, f_a)?;
    let b = cache_bias(cache_b, f_b)?;
    let alpha = dual_cache_alpha(s0, &a, &b, tau)?;
    Ok(a.iter().zip(&b).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect())
}
