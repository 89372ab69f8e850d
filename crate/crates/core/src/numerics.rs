//! Dense-vector primitives shared by every other module.
//!
//! Logit vectors are plain `&[f64]` slices of length `C`; probability
//! vectors are the `Vec<f64>` returned by [`softmax`]. All arithmetic is
//! done in `f64` even when features are stored as `f32`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::math;

/// Population standard deviations at or below this are treated as degenerate.
pub const DEGENERATE_EPSILON: f64 = 1e-12;

fn ensure_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Domain(format!("non-finite entry {} at index {i}", v[i]))),
    }
}

/// Inner product over the common prefix, summed in four interleaved lanes.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let split = n - n % 4;
    let mut lanes = [0.0f64; 4];
    for (x, y) in a[..split].chunks_exact(4).zip(b[..split].chunks_exact(4)) {
        lanes[0] += x[0] * y[0];
        lanes[1] += x[1] * y[1];
        lanes[2] += x[2] * y[2];
        lanes[3] += x[3] * y[3];
    }
    let tail: f64 = a[split..n].iter().zip(&b[split..n]).map(|(x, y)| x * y).sum();
    (lanes[0] + lanes[2]) + (lanes[1] + lanes[3]) + tail
}

pub fn norm(v: &[f64]) -> f64 {
    math::sqrt(dot(v, v))
}

/// Index of the largest entry; ties go to the smaller index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `log(sum(exp(v)))` computed with max-subtraction.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Argument("log_sum_exp of an empty vector".into()));
    }
    ensure_finite(v)?;
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = v.iter().map(|&x| math::exp(x - max)).sum();
    Ok(max + math::ln(sum))
}

/// Numerically stable softmax.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Argument("softmax of an empty vector".into()));
    }
    ensure_finite(v)?;
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|&x| math::exp(x - max)).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    Ok(out)
}

/// `-log softmax(v)[label]`, via log-sum-exp.
pub fn cross_entropy(v: &[f64], label: usize) -> Result<f64> {
    if label >= v.len() {
        return Err(Error::Index { index: label, len: v.len() });
    }
    Ok(log_sum_exp(v)? - v[label])
}

/// Cosine similarity, clamped into `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("cosine similarity with a zero-norm vector".into()));
    }
    if !(na.is_finite() && nb.is_finite()) {
        return Err(Error::Domain("cosine similarity with a non-finite vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Standardized fourth moment `E[((v - mu) / sigma)^4]` with population
/// moments.
///
/// Returns [`Error::Degenerate`] when `sigma <= DEGENERATE_EPSILON`; the
/// fusion layer decides what to do about it.
pub fn standardized_kurtosis(v: &[f64]) -> Result<f64> {
    if v.len() < 2 {
        return Err(Error::Argument(format!("kurtosis needs at least 2 entries, got {}", v.len())));
    }
    ensure_finite(v)?;
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sigma = math::sqrt(var);
    if sigma <= DEGENERATE_EPSILON {
        return Err(Error::Degenerate { sigma });
    }
    let fourth = v
        .iter()
        .map(|x| {
            let z = (x - mean) / sigma;
            let z2 = z * z;
            z2 * z2
        })
        .sum::<f64>();
    Ok(fourth / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn softmax_uniform_and_ln2_offset() {
        let p = softmax(&[0.0; 4]).unwrap();
        for x in p {
            assert_abs_diff_eq!(x, 0.25, epsilon = 1e-15);
        }
        for c in [-30.0, 0.0, 7.5, 400.0] {
            let p = softmax(&[c, c + core::f64::consts::LN_2]).unwrap();
            assert_abs_diff_eq!(p[0], 1.0 / 3.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p[1], 2.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(softmax(&[0.0, f64::NAN]), Err(Error::Domain(_))));
        assert!(matches!(softmax(&[f64::INFINITY, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn cross_entropy_uniform_and_limit() {
        for y in 0..4 {
            assert_abs_diff_eq!(cross_entropy(&[0.0; 4], y).unwrap(), 4f64.ln(), epsilon = 1e-12);
        }
        assert!(cross_entropy(&[50.0, 0.0, 0.0, 0.0], 0).unwrap() < 1e-6);
        assert_eq!(cross_entropy(&[0.0; 3], 3), Err(Error::Index { index: 3, len: 3 }));
    }

    #[test]
    fn cross_entropy_matches_naive_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let c = rng.random_range(2..12);
            let v: Vec<f64> = (0..c).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y = rng.random_range(0..c);
            let denom: f64 = v.iter().map(|x| x.exp()).sum();
            let naive = -(v[y].exp() / denom).ln();
            assert_abs_diff_eq!(cross_entropy(&v, y).unwrap(), naive, epsilon = 1e-9);
        }
    }

    #[test]
    fn cosine_examples() {
        let a = [0.3, -1.2, 4.0];
        assert_abs_diff_eq!(cosine_similarity(&a, &a).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap(),
            core::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(cosine_similarity(&[1.0], &[1.0, 0.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn kurtosis_two_point_and_constant() {
        assert_eq!(standardized_kurtosis(&[1.0, -1.0, 1.0, -1.0]).unwrap(), 1.0);
        assert!(matches!(standardized_kurtosis(&[2.5; 4]), Err(Error::Degenerate { .. })));
        assert!(matches!(standardized_kurtosis(&[1.0]), Err(Error::Argument(_))));
    }

    #[test]
    fn kurtosis_of_gaussian_samples_is_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..1_000_000).map(|_| rng.sample(StandardNormal)).collect();
        let k = standardized_kurtosis(&v).unwrap();
        assert!((k - 3.0).abs() < 0.05, "kurtosis {k}");
    }

    #[test]
    fn argmax_prefers_smaller_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[0.0; 5]), 0);
    }

    fn logits() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-20.0f64..20.0, 2..16)
    }

    proptest! {
        #[test]
        fn softmax_is_shift_invariant(v in logits(), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let (p, q) = (softmax(&v).unwrap(), softmax(&shifted).unwrap());
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn cross_entropy_is_neg_log_softmax(v in logits(), pick in 0usize..16) {
            let y = pick % v.len();
            let ce = cross_entropy(&v, y).unwrap();
            prop_assert!(ce >= 0.0);
            prop_assert!((ce + softmax(&v).unwrap()[y].ln()).abs() < 1e-9);
        }

        #[test]
        fn kurtosis_is_affine_invariant(
            v in prop::collection::vec(-10.0f64..10.0, 3..32),
            a in prop_oneof![-50.0f64..-0.1, 0.1f64..50.0],
            b in -100.0f64..100.0,
        ) {
            let base = match standardized_kurtosis(&v) {
                Ok(k) => k,
                Err(_) => return Ok(()),
            };
            let mapped: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            let k = standardized_kurtosis(&mapped).unwrap();
            prop_assert!(((k - base) / base).abs() < 1e-9, "{} vs {}", k, base);
        }

        #[test]
        fn cosine_is_scale_invariant(
            a in prop::collection::vec(-5.0f64..5.0, 4),
            b in prop::collection::vec(-5.0f64..5.0, 4),
            alpha in 0.01f64..100.0,
            beta in 0.01f64..100.0,
        ) {
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            let sa: Vec<f64> = a.iter().map(|x| alpha * x).collect();
            let sb: Vec<f64> = b.iter().map(|x| beta * x).collect();
            let base = cosine_similarity(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&base));
            prop_assert!((cosine_similarity(&sa, &sb).unwrap() - base).abs() < 1e-12);
        }
    }
}
