//! Accuracy reports, the zero-shot confidence histogram, the
//! individual-vs-joint strategy comparison, predictor baselines and
//! hyper-parameter sweeps.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::fusion::{fuse_with_kappa, FusionConfig, KappaMethod, KappaStats};
use crate::metrics::{complementarity, zero_shot_accuracy};
use crate::numerics::argmax;
use crate::predictors::{cache_bias, dual_cache_bias, CacheModel, LinearProbe};
use crate::store::{FeatureStore, FewShotTask, ZeroShotHead};
use crate::training::{
    branch_accuracies, grid_search, train, train_individual, PreparedSplit, SearchGrid, TrainConfig, TrainMode,
};

pub const DEFAULT_BUCKETS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bucket {
    pub low: f64,
    pub high: f64,
    pub correct: usize,
    pub wrong: usize,
}

impl Bucket {
    pub fn total(&self) -> usize {
        self.correct + self.wrong
    }

    pub fn accuracy(&self) -> Option<f64> {
        (self.total() > 0).then(|| self.correct as f64 / self.total() as f64)
    }
}

/// Per-sample max zero-shot logit, bucketed with equal width over
/// `[min, max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceHistogram {
    pub buckets: Vec<Bucket>,
}

impl ConfidenceHistogram {
    pub fn total(&self) -> usize {
        self.buckets.iter().map(Bucket::total).sum()
    }

    /// Spearman correlation between bucket index and bucket accuracy over
    /// the non-empty buckets. `None` with fewer than two such buckets or
    /// when either side is constant.
    pub fn accuracy_trend(&self) -> Option<f64> {
        let (idx, acc): (Vec<f64>, Vec<f64>) =
            self.buckets.iter().enumerate().filter_map(|(i, b)| b.accuracy().map(|a| (i as f64, a))).unzip();
        spearman(&idx, &acc)
    }
}

pub fn confidence_histogram(s0_batch: &[Vec<f64>], correct: &[bool], buckets: usize) -> Result<ConfidenceHistogram> {
    check_len(s0_batch.len(), correct.len())?;
    if s0_batch.is_empty() {
        return Err(Error::Argument("confidence histogram of an empty batch".into()));
    }
    if buckets < 2 {
        return Err(Error::Argument(format!("need at least 2 buckets, got {buckets}")));
    }
    let mut maxima = Vec::with_capacity(s0_batch.len());
    for s0 in s0_batch {
        if s0.is_empty() || s0.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("zero-shot logits must be finite and non-empty".into()));
        }
        maxima.push(s0[argmax(s0)]);
    }
    let low = maxima.iter().copied().fold(f64::INFINITY, f64::min);
    let high = maxima.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (high - low) / buckets as f64;
    let mut out: Vec<Bucket> = (0..buckets)
        .map(|b| Bucket {
            low: low + width * b as f64,
            high: if b + 1 == buckets { high } else { low + width * (b + 1) as f64 },
            correct: 0,
            wrong: 0,
        })
        .collect();
    for (&m, &ok) in maxima.iter().zip(correct) {
        let b = if width > 0.0 { (((m - low) / width) as usize).min(buckets - 1) } else { 0 };
        if ok {
            out[b].correct += 1;
        } else {
            out[b].wrong += 1;
        }
    }
    Ok(ConfidenceHistogram { buckets: out })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / crate::math::sqrt(sxx * syy))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub count: usize,
    pub fused_acc: f64,
    pub zero_shot_acc: f64,
    pub aux_branch_acc: f64,
    /// Complementarity of the bias branch against `s0`; `None` when some
    /// bias vector is zero (an untrained zero probe, for instance).
    pub cmy: Option<f64>,
    /// Standalone accuracy of the bias branch.
    pub sup: f64,
    pub kappa_stats: KappaStats,
    pub confidence_histogram: ConfidenceHistogram,
}

/// Top-1 accuracies of the fused, zero-shot and bias branches over
/// `indices`. Argmax ties go to the smaller class index.
pub fn evaluate(
    probe: &LinearProbe,
    head: &ZeroShotHead,
    clip: &FeatureStore,
    aux: &FeatureStore,
    fusion: &FusionConfig,
    indices: &[usize],
    buckets: usize,
) -> Result<EvalReport> {
    if indices.is_empty() {
        return Err(Error::Argument("evaluation split is empty".into()));
    }
    check_len(aux.dim(), probe.dim())?;
    check_len(aux.class_count(), probe.classes())?;
    let split = PreparedSplit::new(indices, aux, clip, head, fusion)?;
    let mut fused_hits = 0usize;
    let mut zero_hits = 0usize;
    let mut aux_hits = 0usize;
    let mut s0_batch = Vec::with_capacity(split.len());
    let mut bias_batch = Vec::with_capacity(split.len());
    let mut zero_correct = Vec::with_capacity(split.len());
    for s in &split.samples {
        let bias = probe.logits_unchecked(&s.aux);
        let fused = fuse_with_kappa(&s.s0, &bias, fusion.beta, s.kappa)?;
        let zs_ok = argmax(&s.s0) == s.label;
        zero_hits += usize::from(zs_ok);
        aux_hits += usize::from(argmax(&bias) == s.label);
        fused_hits += usize::from(argmax(&fused) == s.label);
        zero_correct.push(zs_ok);
        s0_batch.push(s.s0.clone());
        bias_batch.push(bias);
    }
    let n = split.len() as f64;
    let aux_branch_acc = aux_hits as f64 / n;
    Ok(EvalReport {
        count: split.len(),
        fused_acc: fused_hits as f64 / n,
        zero_shot_acc: zero_hits as f64 / n,
        aux_branch_acc,
        cmy: complementarity(&s0_batch, &bias_batch).ok(),
        sup: aux_branch_acc,
        kappa_stats: split.kappa_stats,
        confidence_histogram: confidence_histogram(&s0_batch, &zero_correct, buckets)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRow {
    pub encoder_id: String,
    pub individual_aux_acc: f64,
    pub joint_aux_acc: f64,
    pub joint_fused_acc: f64,
    pub zero_shot_acc: f64,
}

/// Individual (aux loss only) against joint (fusion loss only) training of
/// the bias branch, per auxiliary store, scored on the test split. Joint
/// training and scoring fuse as `s0 + beta * s_bias`, without confidence
/// scaling.
///
/// `train_cfg.mode` is overridden; its `init` applies to both runs when set.
pub fn compare_strategies(
    task: &FewShotTask,
    clip: &FeatureStore,
    aux_stores: &[&FeatureStore],
    head: &ZeroShotHead,
    train_cfg: &TrainConfig,
    beta: f64,
) -> Result<Vec<StrategyRow>> {
    let fusion = &FusionConfig::fixed_beta(beta);
    if clip.class_count() < 2 {
        return Err(Error::Argument("strategy comparison needs at least 2 classes".into()));
    }
    if task.test_indices.is_empty() {
        return Err(Error::Argument("strategy comparison needs a test split".into()));
    }
    let zero_shot_acc = zero_shot_accuracy(clip, head, &task.test_indices)?;
    let mut rows = Vec::with_capacity(aux_stores.len());
    for aux in aux_stores {
        let individual = train_individual(task, aux, &TrainConfig { mode: TrainMode::Individual, ..*train_cfg })?;
        let joint = train(task, aux, clip, head, &TrainConfig { mode: TrainMode::Joint, ..*train_cfg }, fusion)?;
        let test = PreparedSplit::new(&task.test_indices, aux, clip, head, fusion)?;
        let (individual_aux_acc, _) = branch_accuracies(&test, &individual.probe, fusion.beta)?;
        let (joint_aux_acc, joint_fused_acc) = branch_accuracies(&test, &joint.probe, fusion.beta)?;
        rows.push(StrategyRow {
            encoder_id: aux.encoder_id().into(),
            individual_aux_acc,
            joint_aux_acc,
            joint_fused_acc,
            zero_shot_acc,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub name: &'static str,
    /// Whether the row scores a single branch rather than a fusion with `s0`.
    pub single_branch: bool,
    pub val_acc: f64,
    pub test_acc: f64,
    pub beta: Option<f64>,
    pub rho: Option<f64>,
}

fn accuracy_of(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let hits = logits.iter().zip(labels).filter(|(l, &y)| argmax(l) == y).count();
    hits as f64 / labels.len() as f64
}

/// Zero-shot logits and two bias matrices for a split, for the
/// training-free cache baselines.
struct CacheScores {
    labels: Vec<usize>,
    s0: Vec<Vec<f64>>,
    single: Vec<Vec<f64>>,
    dual: Vec<Vec<f64>>,
}

impl CacheScores {
    fn new(
        indices: &[usize],
        clip: &FeatureStore,
        aux: &FeatureStore,
        head: &ZeroShotHead,
        clip_cache: &CacheModel,
        aux_cache: &CacheModel,
    ) -> Result<Self> {
        let mut out = CacheScores { labels: Vec::new(), s0: Vec::new(), single: Vec::new(), dual: Vec::new() };
        for &i in indices {
            let fc = clip.row_f64(i);
            let fa = aux.row_f64(i);
            let s0 = crate::predictors::zero_shot_logits(head, &fc)?;
            out.single.push(cache_bias(clip_cache, &fc)?);
            out.dual.push(dual_cache_bias(clip_cache, aux_cache, &fc, &fa, &s0)?);
            out.s0.push(s0);
            out.labels.push(clip.label(i));
        }
        Ok(out)
    }

    fn fused(&self, bias: &[Vec<f64>], beta: f64) -> Result<Vec<Vec<f64>>> {
        self.s0.iter().zip(bias).map(|(s0, b)| fuse_with_kappa(s0, b, beta, 1.0)).collect()
    }
}

fn pick_beta(val: &CacheScores, bias: &[Vec<f64>], betas: &[f64]) -> Result<(f64, f64)> {
    let mut sorted = betas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (f64::NEG_INFINITY, sorted[0]);
    for &beta in &sorted {
        let acc = accuracy_of(&val.fused(bias, beta)?, &val.labels);
        if acc > best.0 {
            best = (acc, beta);
        }
    }
    Ok(best)
}

/// Side-by-side accuracies of the zero-shot head, an individually trained
/// probe, single and dual caches (alone and fused with `s0`), and the
/// feature-initialized multi-branch probe under fixed-beta and
/// `fusion.kappa_method` fusion.
///
/// Every fused row picks its hyper-parameters on the validation split from
/// `grid` (beta only for caches and fixed-beta; beta and rho for the
/// confidence-weighted row). `train_cfg.lambda` is held fixed.
#[allow(clippy::too_many_arguments)]
pub fn baselines(
    task: &FewShotTask,
    clip: &FeatureStore,
    aux: &FeatureStore,
    head: &ZeroShotHead,
    train_cfg: &TrainConfig,
    fusion: &FusionConfig,
    grid: &SearchGrid,
    cache_sharpness: f64,
) -> Result<Vec<BaselineRow>> {
    if task.val_indices.is_empty() || task.test_indices.is_empty() {
        return Err(Error::Argument("baselines need validation and test splits".into()));
    }
    if grid.betas.is_empty() || grid.rhos.is_empty() {
        return Err(Error::Argument("baselines need non-empty beta and rho grids".into()));
    }
    let mut rows = Vec::new();
    let row = |name, single_branch, val_acc, test_acc, beta, rho| BaselineRow {
        name,
        single_branch,
        val_acc,
        test_acc,
        beta,
        rho,
    };

    rows.push(row(
        "zero_shot",
        true,
        zero_shot_accuracy(clip, head, &task.val_indices)?,
        zero_shot_accuracy(clip, head, &task.test_indices)?,
        None,
        None,
    ));

    let lp = train_individual(task, aux, &TrainConfig { mode: TrainMode::Individual, ..*train_cfg })?.probe;
    let aux_acc = |indices: &[usize]| -> Result<f64> {
        Ok(branch_accuracies(&PreparedSplit::aux_only(indices, aux)?, &lp, 1.0)?.0)
    };
    rows.push(row("lp_only", true, aux_acc(&task.val_indices)?, aux_acc(&task.test_indices)?, None, None));

    let clip_cache = CacheModel::from_task(task, clip, cache_sharpness)?;
    let aux_cache = CacheModel::from_task(task, aux, cache_sharpness)?;
    let val = CacheScores::new(&task.val_indices, clip, aux, head, &clip_cache, &aux_cache)?;
    let test = CacheScores::new(&task.test_indices, clip, aux, head, &clip_cache, &aux_cache)?;
    for (name, fused_name, dual) in [("cache_only", "cache", false), ("dual_cache_only", "dual_cache", true)] {
        let (vb, tb) = if dual { (&val.dual, &test.dual) } else { (&val.single, &test.single) };
        rows.push(row(name, true, accuracy_of(vb, &val.labels), accuracy_of(tb, &test.labels), None, None));
        let (val_acc, beta) = pick_beta(&val, vb, &grid.betas)?;
        let test_acc = accuracy_of(&test.fused(tb, beta)?, &test.labels);
        rows.push(row(fused_name, false, val_acc, test_acc, Some(beta), None));
    }

    let mtfi = TrainConfig { mode: TrainMode::Mtfi, ..*train_cfg };
    for (name, method, rhos) in
        [("amu_fixed_beta", KappaMethod::None, vec![fusion.rho]), ("amu_kappa", fusion.kappa_method, grid.rhos.clone())]
    {
        let base = FusionConfig { kappa_method: method, ..*fusion };
        let g = SearchGrid { lambdas: vec![train_cfg.lambda], rhos, betas: grid.betas.clone() };
        let sel = grid_search(task, aux, clip, head, &mtfi, &base, &g)?;
        let probe = train(task, aux, clip, head, &sel.train, &sel.fusion)?.probe;
        let test_split = PreparedSplit::new(&task.test_indices, aux, clip, head, &sel.fusion)?;
        let test_acc = branch_accuracies(&test_split, &probe, sel.fusion.beta)?.1;
        let rho = (method != KappaMethod::None).then_some(sel.fusion.rho);
        rows.push(row(name, false, sel.best.val_accuracy, test_acc, Some(sel.fusion.beta), rho));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    Lambda,
    Rho,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Lambda => "lambda",
            SweepParameter::Rho => "rho",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub parameter: SweepParameter,
    pub value: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub test_aux_acc: f64,
}

/// Fused accuracy as one of lambda or rho varies with everything else held
/// at `train_cfg` / `fusion`.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    task: &FewShotTask,
    clip: &FeatureStore,
    aux: &FeatureStore,
    head: &ZeroShotHead,
    train_cfg: &TrainConfig,
    fusion: &FusionConfig,
    parameter: SweepParameter,
    values: &[f64],
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::Argument("empty sweep".into()));
    }
    let mut out = Vec::with_capacity(values.len());
    for &value in values {
        let (t, f) = match parameter {
            SweepParameter::Lambda => (TrainConfig { mode: TrainMode::Mtfi, lambda: value, ..*train_cfg }, *fusion),
            SweepParameter::Rho => {
                (TrainConfig { mode: TrainMode::Mtfi, ..*train_cfg }, FusionConfig { rho: value, ..*fusion })
            }
        };
        let probe = train(task, aux, clip, head, &t, &f)?.probe;
        let val = PreparedSplit::new(&task.val_indices, aux, clip, head, &f)?;
        let test = PreparedSplit::new(&task.test_indices, aux, clip, head, &f)?;
        let (_, val_acc) = branch_accuracies(&val, &probe, f.beta)?;
        let (test_aux_acc, test_acc) = branch_accuracies(&test, &probe, f.beta)?;
        out.push(SweepPoint { parameter, value, val_acc, test_acc, test_aux_acc });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_single_bucket_and_endpoints() {
        let same = vec![vec![1.0, 0.5], vec![0.0, 1.0], vec![1.0, 1.0]];
        let h = confidence_histogram(&same, &[true, false, true], 4).unwrap();
        assert_eq!((h.buckets[0].correct, h.buckets[0].wrong), (2, 1));
        assert_eq!(h.total(), 3);

        let ends = vec![vec![0.0, -1.0], vec![5.0, 2.0]];
        let h = confidence_histogram(&ends, &[false, true], 5).unwrap();
        assert_eq!(h.buckets[0].wrong, 1);
        assert_eq!(h.buckets[4].correct, 1);
        assert_eq!(h.buckets[0].low, 0.0);
        assert_eq!(h.buckets[4].high, 5.0);
        for w in h.buckets.windows(2) {
            assert_eq!(w[0].high, w[1].low);
        }
        assert!(confidence_histogram(&ends, &[true, true], 1).is_err());
        assert!(confidence_histogram(&[], &[], 4).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0], &[1.0, 1.0]), None);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 2.0]).unwrap();
        assert!((r - 0.894_427_190_999_915_9).abs() < 1e-12);
    }
}
