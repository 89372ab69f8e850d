//! Seeded two-view few-shot benchmark with controllable superiority,
//! complementarity and confidence structure.
//!
//! Each class gets a CLIP-view prototype on the unit sphere and an
//! auxiliary-view prototype mixed from the projected CLIP prototype and an
//! independent draw. Samples are unit-normalized `prototype + noise`. The
//! auxiliary noise shares a `view_correlation` fraction of its direction
//! with the CLIP-view noise, so `view_correlation = 1` with equal dimensions
//! and equal noise duplicates the CLIP view exactly. Per-sample CLIP noise
//! is spread around `clip_noise` by `confidence_link`, which ties low
//! zero-shot confidence to zero-shot mistakes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math;
use crate::numerics::{dot, norm};
use crate::rng::{SeedStreams, StreamRng, GENERATE};
use crate::store::{FeatureStore, SplitTag, ZeroShotHead};

pub const CLIP_ENCODER_ID: &str = "synth-clip";
pub const AUX_ENCODER_ID: &str = "synth-aux";
pub const HEAD_ENCODER_ID: &str = "synth-head";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim_clip: usize,
    pub dim_aux: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// 1 duplicates the CLIP view (up to projection), 0 makes the views
    /// independent.
    pub view_correlation: f64,
    pub clip_noise: f64,
    pub aux_noise: f64,
    /// Noise on the prototypes that form the zero-shot head.
    pub head_noise: f64,
    /// Per-sample difficulty coupling in `[0, 1]`. With `u ~ U(0, 1)` a
    /// CLIP-view sample gets noise `clip_noise * (1 + link * (2u - 1))` and
    /// is centred at `(1 - link * u^2) * P_y + link * u^2 * P_o` for a
    /// random other class `o`, so hard samples are both noisier and closer
    /// to a confusable class.
    pub confidence_link: f64,
    /// Norm of every head row, i.e. the zero-shot logit temperature.
    pub logit_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 20,
            dim_clip: 64,
            dim_aux: 96,
            train_per_class: 16,
            val_per_class: 16,
            test_per_class: 32,
            view_correlation: 0.3,
            clip_noise: 3.0,
            aux_noise: 3.0,
            head_noise: 0.6,
            confidence_link: 0.0,
            logit_scale: 10.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Argument(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.dim_clip == 0 || self.dim_aux == 0 {
            return Err(Error::Argument("feature dimensions must be at least 1".into()));
        }
        if self.train_per_class == 0 {
            return Err(Error::Argument("need at least one train sample per class".into()));
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.view_correlation) || !unit(self.confidence_link) {
            return Err(Error::Argument("view_correlation and confidence_link must lie in [0, 1]".into()));
        }
        if !(self.clip_noise > 0.0 && self.aux_noise > 0.0)
            || !(self.clip_noise.is_finite() && self.aux_noise.is_finite())
        {
            return Err(Error::Argument("clip_noise and aux_noise must be positive".into()));
        }
        if !(self.head_noise >= 0.0 && self.head_noise.is_finite()) {
            return Err(Error::Argument("head_noise must be non-negative".into()));
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            return Err(Error::Argument("logit_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn samples_per_class(&self) -> usize {
        self.train_per_class + self.val_per_class + self.test_per_class
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthBenchmark {
    pub clip: FeatureStore,
    pub aux: FeatureStore,
    pub head: ZeroShotHead,
}

fn gaussian(rng: &mut StreamRng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    v.iter().map(|x| x / n).collect()
}

/// Linear map from the CLIP space into the auxiliary space: the identity
/// when dimensions agree, otherwise a seeded random map with orthonormal
/// columns (or rows when the target is smaller).
#[derive(Debug, Clone)]
struct Projection {
    rows: usize,
    cols: usize,
    matrix: Option<Vec<f64>>,
}

impl Projection {
    fn new(rng: &mut StreamRng, rows: usize, cols: usize) -> Self {
        if rows == cols {
            return Self { rows, cols, matrix: None };
        }
        // Orthonormalize `k` random vectors of length `len` by modified
        // Gram-Schmidt, then lay them out as columns or rows.
        let (k, len) = (rows.min(cols), rows.max(cols));
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
        while basis.len() < k {
            let mut v = gaussian(rng, len);
            for b in &basis {
                let p = dot(&v, b);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= p * y;
                }
            }
            let n = norm(&v);
            if n > 1e-8 {
                basis.push(v.iter().map(|x| x / n).collect());
            }
        }
        let mut matrix = vec![0.0; rows * cols];
        for (j, b) in basis.iter().enumerate() {
            for (i, &x) in b.iter().enumerate() {
                if rows > cols {
                    matrix[i * cols + j] = x;
                } else {
                    matrix[j * cols + i] = x;
                }
            }
        }
        Self { rows, cols, matrix: Some(matrix) }
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        match &self.matrix {
            None => v.to_vec(),
            Some(m) => (0..self.rows).map(|r| dot(&m[r * self.cols..(r + 1) * self.cols], v)).collect(),
        }
    }
}

fn push_noisy(out: &mut Vec<f32>, prototype: &[f64], noise: &[f64], scale: f64) {
    let d = prototype.len() as f64;
    let root = math::sqrt(d);
    let noisy: Vec<f64> = prototype.iter().zip(noise).map(|(p, z)| p + scale * z / root).collect();
    out.extend(normalized(&noisy).into_iter().map(|x| x as f32));
}

/// Generates the CLIP-view store, the auxiliary store and the zero-shot
/// head. Deterministic for a given spec. Head weights are f32-representable
/// so a head survives a round trip through a feature file unchanged.
pub fn generate(spec: &SynthSpec) -> Result<SynthBenchmark> {
    spec.validate()?;
    let streams = SeedStreams::new(spec.seed);
    let mut rng = streams.stream(GENERATE);
    let (c, dc, da) = (spec.classes, spec.dim_clip, spec.dim_aux);
    let vc = spec.view_correlation;

    let clip_raw: Vec<Vec<f64>> = (0..c).map(|_| gaussian(&mut rng, dc)).collect();
    let clip_protos: Vec<Vec<f64>> = clip_raw.iter().map(|g| normalized(g)).collect();
    let projection = Projection::new(&mut rng, da, dc);
    let aux_protos: Vec<Vec<f64>> = clip_raw
        .iter()
        .map(|g| {
            let independent = gaussian(&mut rng, da);
            let mixed: Vec<f64> =
                projection.apply(g).iter().zip(&independent).map(|(p, h)| vc * p + (1.0 - vc) * h).collect();
            normalized(&mixed)
        })
        .collect();

    let mut head_weights = Vec::with_capacity(c * dc);
    for proto in &clip_protos {
        let noise = gaussian(&mut rng, dc);
        let root = math::sqrt(dc as f64);
        let noisy: Vec<f64> = proto.iter().zip(&noise).map(|(p, z)| p + spec.head_noise * z / root).collect();
        head_weights.extend(normalized(&noisy).into_iter().map(|x| f64::from((spec.logit_scale * x) as f32)));
    }
    let head = ZeroShotHead::new(c, dc, head_weights)?;

    let per_class = spec.samples_per_class();
    let n = c * per_class;
    let mut clip_features = Vec::with_capacity(n * dc);
    let mut aux_features = Vec::with_capacity(n * da);
    let mut labels = Vec::with_capacity(n);
    let mut tags = Vec::with_capacity(n);
    let shared = math::sqrt(1.0 - vc * vc);
    for class in 0..c {
        let mut rng = streams.indexed(GENERATE, class as u64);
        for j in 0..per_class {
            let u: f64 = rng.random();
            let clip_scale = spec.clip_noise * (1.0 + spec.confidence_link * (2.0 * u - 1.0));
            let z = gaussian(&mut rng, dc);
            let z_aux = gaussian(&mut rng, da);
            if spec.confidence_link > 0.0 {
                let other = (class + rng.random_range(1..c)) % c;
                let pull = spec.confidence_link * u * u;
                let centre: Vec<f64> = clip_protos[class]
                    .iter()
                    .zip(&clip_protos[other])
                    .map(|(p, q)| (1.0 - pull) * p + pull * q)
                    .collect();
                push_noisy(&mut clip_features, &centre, &z, clip_scale);
            } else {
                push_noisy(&mut clip_features, &clip_protos[class], &z, clip_scale);
            }
            let aux_noise: Vec<f64> =
                projection.apply(&z).iter().zip(&z_aux).map(|(p, q)| vc * p + shared * q).collect();
            push_noisy(&mut aux_features, &aux_protos[class], &aux_noise, spec.aux_noise);
            labels.push(class);
            tags.push(if j < spec.train_per_class {
                SplitTag::Train
            } else if j < spec.train_per_class + spec.val_per_class {
                SplitTag::Val
            } else {
                SplitTag::Test
            });
        }
    }
    let clip = FeatureStore::new(CLIP_ENCODER_ID, dc, c, clip_features, labels.clone(), tags.clone())?;
    let aux = FeatureStore::new(AUX_ENCODER_ID, da, c, aux_features, labels, tags)?;
    Ok(SynthBenchmark { clip, aux, head })
}
