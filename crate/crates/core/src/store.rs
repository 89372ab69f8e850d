//! In-memory feature stores, zero-shot heads and few-shot tasks.
//!
//! Features are kept as `f32` exactly as they come from an encoder and are
//! promoted to `f64` whenever they enter a computation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::IndexedRandom;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{SeedStreams, SAMPLING};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn code(self) -> u8 {
        match self {
            SplitTag::Train => 0,
            SplitTag::Val => 1,
            SplitTag::Test => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SplitTag::Train),
            1 => Some(SplitTag::Val),
            2 => Some(SplitTag::Test),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

impl core::str::FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "val" | "validation" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            other => Err(Error::Argument(format!("unknown split `{other}`"))),
        }
    }
}

/// Per-sample embeddings from one encoder, with labels and split tags.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    encoder_id: String,
    dim: usize,
    class_count: usize,
    features: Vec<f32>,
    labels: Vec<usize>,
    split_tags: Vec<SplitTag>,
}

impl FeatureStore {
    /// Builds a store and checks every invariant: `N >= 1`, `d >= 1`,
    /// `features.len() == N * d`, finite entries, labels below `C`.
    pub fn new(
        encoder_id: impl Into<String>,
        dim: usize,
        class_count: usize,
        features: Vec<f32>,
        labels: Vec<usize>,
        split_tags: Vec<SplitTag>,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::Data("feature store has no samples".into()));
        }
        if dim == 0 {
            return Err(Error::Data("feature dimension must be at least 1".into()));
        }
        if class_count == 0 {
            return Err(Error::Data("class count must be at least 1".into()));
        }
        if features.len() != n * dim {
            return Err(Error::Data(format!(
                "expected {n}x{dim} = {} feature values, found {}",
                n * dim,
                features.len()
            )));
        }
        if split_tags.len() != n {
            return Err(Error::Data(format!("expected {n} split tags, found {}", split_tags.len())));
        }
        if let Some(i) = features.iter().position(|x| !x.is_finite()) {
            return Err(Error::Data(format!("non-finite feature value at row {}, column {}", i / dim, i % dim)));
        }
        if let Some(i) = labels.iter().position(|&y| y >= class_count) {
            return Err(Error::Data(format!(
                "label {} at row {i} is not below the class count {class_count}",
                labels[i]
            )));
        }
        Ok(Self { encoder_id: encoder_id.into(), dim, class_count, features, labels, split_tags })
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split_tags(&self) -> &[SplitTag] {
        &self.split_tags
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&x| f64::from(x)).collect()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn tag(&self, i: usize) -> SplitTag {
        self.split_tags[i]
    }

    pub fn indices_with_tag(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split_tags[i] == tag).collect()
    }

    pub fn with_encoder_id(mut self, encoder_id: impl Into<String>) -> Self {
        self.encoder_id = encoder_id.into();
        self
    }

    /// Checks that `other` describes the same samples: count, labels, split
    /// tags and class count.
    pub fn ensure_aligned(&self, other: &FeatureStore) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Shape { expected: self.len(), found: other.len() });
        }
        if self.class_count != other.class_count {
            return Err(Error::Shape { expected: self.class_count, found: other.class_count });
        }
        if self.labels != other.labels || self.split_tags != other.split_tags {
            return Err(Error::Data(format!(
                "stores `{}` and `{}` disagree on labels or split tags",
                self.encoder_id, other.encoder_id
            )));
        }
        Ok(())
    }
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize(store: &FeatureStore) -> Result<FeatureStore> {
    let mut features = Vec::with_capacity(store.features.len());
    for i in 0..store.len() {
        let row = store.row(i);
        let norm = math::sqrt(row.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>());
        if norm == 0.0 {
            return Err(Error::Data(format!("row {i} has zero norm")));
        }
        features.extend(row.iter().map(|&x| (f64::from(x) / norm) as f32));
    }
    Ok(FeatureStore { features, ..store.clone() })
}

/// Frozen class-weight matrix `W0` (one row per class).
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotHead {
    classes: usize,
    dim: usize,
    weights: Vec<f64>,
}

impl ZeroShotHead {
    pub fn new(classes: usize, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if classes == 0 || dim == 0 {
            return Err(Error::Data("zero-shot head needs at least one class and one dimension".into()));
        }
        if weights.len() != classes * dim {
            return Err(Error::Shape { expected: classes * dim, found: weights.len() });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Data("zero-shot head has non-finite weights".into()));
        }
        Ok(Self { classes, dim, weights })
    }

    /// Reads a head from a store holding one row per class, with row `i`
    /// labelled `i`.
    pub fn from_store(store: &FeatureStore) -> Result<Self> {
        let classes = store.len();
        if store.labels().iter().enumerate().any(|(i, &y)| i != y) {
            return Err(Error::Data("head rows must be labelled 0..C-1 in order".into()));
        }
        let weights = store.features().iter().map(|&x| f64::from(x)).collect();
        Self::new(classes, store.dim(), weights)
    }

    /// The head as a store with `N = C` and labels `0..C-1`, all tagged train.
    pub fn to_store(&self, encoder_id: &str) -> Result<FeatureStore> {
        FeatureStore::new(
            encoder_id,
            self.dim,
            self.classes,
            self.weights.iter().map(|&w| w as f32).collect(),
            (0..self.classes).collect(),
            alloc::vec![SplitTag::Train; self.classes],
        )
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

    pub fn row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }

    /// Checks that this head can score features from `store`.
    pub fn ensure_compatible(&self, store: &FeatureStore) -> Result<()> {
        if self.classes != store.class_count() {
            return Err(Error::Shape { expected: store.class_count(), found: self.classes });
        }
        if self.dim != store.dim() {
            return Err(Error::Shape { expected: store.dim(), found: self.dim });
        }
        Ok(())
    }
}

/// A C-way N-shot task over a store: `shots` train indices per class plus
/// every validation and test sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotTask {
    pub shots: usize,
    pub train_indices: Vec<Vec<usize>>,
    pub val_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl FewShotTask {
    pub fn class_count(&self) -> usize {
        self.train_indices.len()
    }

    /// Train indices flattened class by class.
    pub fn train_flat(&self) -> Vec<usize> {
        self.train_indices.iter().flatten().copied().collect()
    }

    pub fn split(&self, tag: SplitTag) -> Vec<usize> {
        match tag {
            SplitTag::Train => self.train_flat(),
            SplitTag::Val => self.val_indices.clone(),
            SplitTag::Test => self.test_indices.clone(),
        }
    }
}

/// Draws `shots` train-tagged samples per class without replacement.
///
/// Chosen indices are reported in ascending order within each class. Every
/// validation- and test-tagged sample joins the respective split.
pub fn sample_few_shot(store: &FeatureStore, shots: usize, seed: u64) -> Result<FewShotTask> {
    if shots == 0 {
        return Err(Error::Argument("shots must be at least 1".into()));
    }
    let c = store.class_count();
    let mut pools: Vec<Vec<usize>> = alloc::vec![Vec::new(); c];
    for i in store.indices_with_tag(SplitTag::Train) {
        pools[store.label(i)].push(i);
    }
    let mut rng = SeedStreams::new(seed).stream(SAMPLING);
    let mut train_indices = Vec::with_capacity(c);
    for (class, pool) in pools.iter().enumerate() {
        if pool.len() < shots {
            return Err(Error::Sampling(format!("class {class} has {} train samples, {shots} requested", pool.len())));
        }
        let mut chosen: Vec<usize> = pool.choose_multiple(&mut rng, shots).copied().collect();
        chosen.sort_unstable();
        train_indices.push(chosen);
    }
    Ok(FewShotTask {
        shots,
        train_indices,
        val_indices: store.indices_with_tag(SplitTag::Val),
        test_indices: store.indices_with_tag(SplitTag::Test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn store(features: Vec<f32>, dim: usize, labels: Vec<usize>, c: usize) -> FeatureStore {
        let n = labels.len();
        FeatureStore::new("t", dim, c, features, labels, vec![SplitTag::Train; n]).unwrap()
    }

    #[test]
    fn rejects_bad_stores() {
        let t = vec![SplitTag::Train];
        assert!(FeatureStore::new("x", 2, 2, vec![], vec![], vec![]).is_err());
        assert!(FeatureStore::new("x", 0, 2, vec![], vec![0], t.clone()).is_err());
        assert!(FeatureStore::new("x", 2, 2, vec![1.0], vec![0], t.clone()).is_err());
        assert!(FeatureStore::new("x", 2, 2, vec![1.0, f32::NAN], vec![0], t.clone()).is_err());
        assert!(FeatureStore::new("x", 2, 2, vec![1.0, 2.0], vec![2], t.clone()).is_err());
        assert!(FeatureStore::new("x", 1, 2, vec![1.0], vec![1], t).is_ok());
    }

    #[test]
    fn normalize_examples() {
        let s = store(vec![3.0, 4.0, 0.6, 0.8], 2, vec![0, 1], 2);
        let n = l2_normalize(&s).unwrap();
        assert!((n.row(0)[0] - 0.6).abs() < 1e-7 && (n.row(0)[1] - 0.8).abs() < 1e-7);
        assert!((n.row(1)[0] - 0.6).abs() < 1e-7 && (n.row(1)[1] - 0.8).abs() < 1e-7);
        let zero = store(vec![0.0, 0.0], 2, vec![0], 2);
        assert!(matches!(l2_normalize(&zero), Err(Error::Data(_))));
    }

    #[test]
    fn sampling_examples() {
        let s = store(vec![1.0, 2.0, 3.0], 1, vec![0, 1, 1], 2);
        let task = sample_few_shot(&s, 1, 5).unwrap();
        assert_eq!(task.train_indices[0], vec![0]);
        assert_eq!(task.train_indices[1].len(), 1);
        assert_eq!(sample_few_shot(&s, 1, 5).unwrap(), task);
        assert!(matches!(sample_few_shot(&s, 2, 5), Err(Error::Sampling(_))));
        assert!(sample_few_shot(&s, 0, 5).is_err());
    }

    #[test]
    fn sampling_skips_val_and_test_tags() {
        let tags = vec![SplitTag::Train, SplitTag::Val, SplitTag::Test, SplitTag::Train];
        let s = FeatureStore::new("t", 1, 1, vec![0.0; 4], vec![0; 4], tags).unwrap();
        let task = sample_few_shot(&s, 2, 0).unwrap();
        assert_eq!(task.train_indices, vec![vec![0, 3]]);
        assert_eq!(task.val_indices, vec![1]);
        assert_eq!(task.test_indices, vec![2]);
    }

    #[test]
    fn head_round_trips_through_store() {
        let head = ZeroShotHead::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.5]).unwrap();
        let back = ZeroShotHead::from_store(&head.to_store("head").unwrap()).unwrap();
        assert_eq!(back, head);
    }

    proptest! {
        #[test]
        fn normalize_is_unit_idempotent_and_preserves_cosines(
            rows in prop::collection::vec(prop::collection::vec(-10.0f32..10.0, 5), 2..8)
        ) {
            prop_assume!(rows.iter().all(|r| r.iter().map(|x| x * x).sum::<f32>() > 1e-2));
            let n = rows.len();
            let s = store(rows.concat(), 5, vec![0; n], 1);
            let once = l2_normalize(&s).unwrap();
            let twice = l2_normalize(&once).unwrap();
            for i in 0..n {
                let a = s.row_f64(i);
                let u = once.row_f64(i);
                let norm: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-6);
                for (x, y) in once.row(i).iter().zip(twice.row(i)) {
                    prop_assert!((x - y).abs() < 1e-7);
                }
                for j in 0..n {
                    let cos_raw = crate::numerics::cosine_similarity(&a, &s.row_f64(j)).unwrap();
                    let cos_unit = crate::numerics::dot(&u, &once.row_f64(j));
                    prop_assert!((cos_raw - cos_unit).abs() < 1e-6);
                }
            }
        }
    }
}
