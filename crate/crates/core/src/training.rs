//! Multi-branch loss, the analytic probe gradient, AdamW and the training
//! loop for the linear-probe bias branch.
//!
//! Only the probe `W` is trainable. The fused logit is
//! `s = s0 + (beta / kappa) W f`, where `s0` and `kappa` depend on frozen
//! inputs only and are therefore constants under differentiation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{check_len, Error, Result};
use crate::fusion::{fuse_with_kappa, kappa_detailed, FusionConfig, KappaStats};
use crate::math;
use crate::numerics::{argmax, cross_entropy, dot};
use crate::predictors::{init_linear_probe, zero_shot_logits, LinearProbe};
use crate::rng::{SeedStreams, SHUFFLE};
use crate::store::{FeatureStore, FewShotTask, ZeroShotHead};

/// Which losses drive the probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainMode {
    /// Auxiliary-branch cross-entropy only (`lambda = 0`).
    Individual,
    /// Fused-logit cross-entropy only (`lambda = 1`).
    Joint,
    /// `(1 - lambda) * aux + lambda * fusion` on a feature-initialized probe.
    Mtfi,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Individual => "individual",
            TrainMode::Joint => "joint",
            TrainMode::Mtfi => "mtfi",
        }
    }
}

impl core::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "individual" => Ok(TrainMode::Individual),
            "joint" => Ok(TrainMode::Joint),
            "mtfi" => Ok(TrainMode::Mtfi),
            other => Err(Error::Argument(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProbeInit {
    Zero,
    /// Per-class means of the auxiliary train features.
    Feature,
}

impl ProbeInit {
    pub fn name(self) -> &'static str {
        match self {
            ProbeInit::Zero => "zero",
            ProbeInit::Feature => "feature",
        }
    }
}

impl core::str::FromStr for ProbeInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(ProbeInit::Zero),
            "feature" | "mean" => Ok(ProbeInit::Feature),
            other => Err(Error::Argument(format!("unknown probe init `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the initial rate to zero over the run.
    Cosine,
}

impl LrSchedule {
    pub fn name(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        }
    }
}

impl core::str::FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(Error::Argument(format!("unknown learning-rate schedule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Weight of the fusion loss in `Mtfi` mode.
    pub lambda: f64,
    pub adamw: AdamWConfig,
    pub seed: u64,
    pub mode: TrainMode,
    /// `None` picks the mode default: zero for `Individual`, feature
    /// initialization otherwise.
    pub init: Option<ProbeInit>,
    pub schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: 8,
            lambda: 0.4,
            adamw: AdamWConfig::default(),
            seed: 0,
            mode: TrainMode::Mtfi,
            init: None,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Argument(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Argument(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        let a = &self.adamw;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0 && a.weight_decay >= 0.0) {
            return Err(Error::Argument("invalid AdamW hyper-parameters".into()));
        }
        Ok(())
    }

    pub fn effective_lambda(&self) -> f64 {
        match self.mode {
            TrainMode::Individual => 0.0,
            TrainMode::Joint => 1.0,
            TrainMode::Mtfi => self.lambda,
        }
    }

    pub fn effective_init(&self) -> ProbeInit {
        self.init.unwrap_or(match self.mode {
            TrainMode::Individual => ProbeInit::Zero,
            TrainMode::Joint | TrainMode::Mtfi => ProbeInit::Feature,
        })
    }

    fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let progress = epoch as f64 / self.epochs as f64;
                0.5 * self.learning_rate * (1.0 + libm::cos(core::f64::consts::PI * progress))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub aux: f64,
    pub fusion: f64,
}

/// `aux = CE(s_bias, y)`, `fusion = CE(s_fused, y)`,
/// `total = (1 - lambda) * aux + lambda * fusion`.
pub fn multi_branch_loss(s_fused: &[f64], s_bias: &[f64], label: usize, lambda: f64) -> Result<LossParts> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Argument(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let aux = cross_entropy(s_bias, label)?;
    let fusion = cross_entropy(s_fused, label)?;
    Ok(LossParts { total: (1.0 - lambda) * aux + lambda * fusion, aux, fusion })
}

/// One training or evaluation sample with its frozen zero-shot logits.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub aux: Vec<f64>,
    pub s0: Vec<f64>,
    pub kappa: f64,
    pub label: usize,
}

/// Samples taken from aligned auxiliary and CLIP-view stores, scored once by
/// the zero-shot head.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSplit {
    pub samples: Vec<PreparedSample>,
    pub kappa_stats: KappaStats,
}

impl PreparedSplit {
    pub fn new(
        indices: &[usize],
        aux: &FeatureStore,
        clip: &FeatureStore,
        head: &ZeroShotHead,
        fusion: &FusionConfig,
    ) -> Result<Self> {
        aux.ensure_aligned(clip)?;
        head.ensure_compatible(clip)?;
        let mut samples = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= aux.len() {
                return Err(Error::Index { index: i, len: aux.len() });
            }
            let s0 = zero_shot_logits(head, &clip.row_f64(i))?;
            samples.push(PreparedSample { aux: aux.row_f64(i), s0, kappa: 1.0, label: aux.label(i) });
        }
        let mut split = Self { samples, kappa_stats: KappaStats::default() };
        split.set_kappa(fusion)?;
        Ok(split)
    }

    /// Samples without a zero-shot view: `s0 = 0` and `kappa = 1`, so the
    /// fused logit is just `beta * s_bias`.
    pub fn aux_only(indices: &[usize], aux: &FeatureStore) -> Result<Self> {
        let c = aux.class_count();
        let mut samples = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= aux.len() {
                return Err(Error::Index { index: i, len: aux.len() });
            }
            samples.push(PreparedSample { aux: aux.row_f64(i), s0: vec![0.0; c], kappa: 1.0, label: aux.label(i) });
        }
        let kappa_stats = KappaStats::default();
        Ok(Self { samples, kappa_stats })
    }

    /// Recomputes `kappa` for every sample under `fusion`.
    pub fn set_kappa(&mut self, fusion: &FusionConfig) -> Result<KappaStats> {
        fusion.validate()?;
        let mut stats = KappaStats::default();
        for s in &mut self.samples {
            let k = kappa_detailed(&s.s0, fusion)?;
            stats.push(&k);
            s.kappa = k.value;
        }
        self.kappa_stats = stats;
        Ok(stats)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Batch-mean loss gradient with respect to the probe weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeGradient {
    /// `C x d`, row-major like the probe.
    pub values: Vec<f64>,
    /// Batch-mean losses at the current weights.
    pub loss: LossParts,
}

/// Analytic gradient of the batch-mean multi-branch loss:
///
/// `(1/B) sum_b [ (1 - lambda)(p_aux - y) + lambda (beta / kappa_b)(p_fused - y) ] f_b^T`.
///
/// Samples are accumulated in slice order.
pub fn probe_gradient(batch: &[PreparedSample], probe: &LinearProbe, lambda: f64, beta: f64) -> Result<ProbeGradient> {
    gradient_over(batch.iter(), probe, lambda, beta)
}

/// Writes `softmax(logits)` into `out` and returns `log_sum_exp(logits)`.
fn probabilities(logits: &[f64], out: &mut [f64]) -> Result<f64> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("non-finite logit during training".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(logits) {
        *o = math::exp(x - max);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(max + math::ln(sum))
}

fn gradient_over<'a>(
    batch: impl ExactSizeIterator<Item = &'a PreparedSample>,
    probe: &LinearProbe,
    lambda: f64,
    beta: f64,
) -> Result<ProbeGradient> {
    let count = batch.len();
    if count == 0 {
        return Err(Error::Argument("gradient of an empty batch".into()));
    }
    let (c, d) = (probe.classes(), probe.dim());
    let mut values = vec![0.0; c * d];
    let mut loss = LossParts::default();
    let (mut p_aux, mut p_fused) = (vec![0.0; c], vec![0.0; c]);
    let mut s_bias = vec![0.0; c];
    let mut fused = vec![0.0; c];
    for sample in batch {
        check_len(d, sample.aux.len())?;
        check_len(c, sample.s0.len())?;
        if sample.label >= c {
            return Err(Error::Index { index: sample.label, len: c });
        }
        let weight = beta / sample.kappa;
        for k in 0..c {
            s_bias[k] = dot(probe.row(k), &sample.aux);
            fused[k] = sample.s0[k] + weight * s_bias[k];
        }
        let aux_lse = probabilities(&s_bias, &mut p_aux)?;
        let fused_lse = probabilities(&fused, &mut p_fused)?;
        let aux_ce = aux_lse - s_bias[sample.label];
        let fused_ce = fused_lse - fused[sample.label];
        loss.total += (1.0 - lambda) * aux_ce + lambda * fused_ce;
        loss.aux += aux_ce;
        loss.fusion += fused_ce;

        for k in 0..c {
            let y = if k == sample.label { 1.0 } else { 0.0 };
            let g = (1.0 - lambda) * (p_aux[k] - y) + lambda * weight * (p_fused[k] - y);
            for (out, &x) in values[k * d..(k + 1) * d].iter_mut().zip(&sample.aux) {
                *out += g * x;
            }
        }
    }
    let scale = 1.0 / count as f64;
    for v in &mut values {
        *v *= scale;
    }
    loss.total *= scale;
    loss.aux *= scale;
    loss.fusion *= scale;
    Ok(ProbeGradient { values, loss })
}

/// First and second moment buffers plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamWState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One AdamW update in place. Decoupled weight decay
/// `p <- p * (1 - lr * wd)` is applied before the bias-corrected adaptive
/// step.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamWState,
    learning_rate: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    check_len(params.len(), grads.len())?;
    check_len(params.len(), state.m.len())?;
    check_len(params.len(), state.v.len())?;
    state.step += 1;
    let t = state.step as f64;
    let inv_correction1 = 1.0 / (1.0 - math::powf(cfg.beta1, t));
    let inv_correction2 = 1.0 / (1.0 - math::powf(cfg.beta2, t));
    let decay = 1.0 - learning_rate * cfg.weight_decay;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        *p *= decay;
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let v_hat = *v * inv_correction2;
        *p -= learning_rate * (*m * inv_correction1) / (math::sqrt(v_hat) + cfg.eps);
    }
    Ok(())
}

/// Losses and train-set accuracies, either at initialization or after an
/// epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochRecord {
    pub total_loss: f64,
    pub aux_loss: f64,
    pub fusion_loss: f64,
    pub aux_accuracy: f64,
    pub fused_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub initial: EpochRecord,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub probe: LinearProbe,
    pub history: TrainHistory,
}

/// Top-1 accuracies of the bias branch alone and of the fused logits.
pub fn branch_accuracies(split: &PreparedSplit, probe: &LinearProbe, beta: f64) -> Result<(f64, f64)> {
    if split.is_empty() {
        return Err(Error::Argument("accuracy over an empty split".into()));
    }
    let (mut aux_hits, mut fused_hits) = (0usize, 0usize);
    for s in &split.samples {
        check_len(probe.dim(), s.aux.len())?;
        let s_bias = probe.logits_unchecked(&s.aux);
        aux_hits += usize::from(argmax(&s_bias) == s.label);
        let fused = fuse_with_kappa(&s.s0, &s_bias, beta, s.kappa)?;
        fused_hits += usize::from(argmax(&fused) == s.label);
    }
    let n = split.len() as f64;
    Ok((aux_hits as f64 / n, fused_hits as f64 / n))
}

fn epoch_record(loss: LossParts, accuracies: (f64, f64)) -> EpochRecord {
    EpochRecord {
        total_loss: loss.total,
        aux_loss: loss.aux,
        fusion_loss: loss.fusion,
        aux_accuracy: accuracies.0,
        fused_accuracy: accuracies.1,
    }
}

/// Runs the optimizer over a prepared train split from `probe`.
pub fn fit(train: &PreparedSplit, probe: LinearProbe, cfg: &TrainConfig, beta: f64) -> Result<TrainOutcome> {
    let mut initial = EpochRecord::default();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let probe = optimize(train, probe, cfg, beta, Some((&mut initial, &mut epochs)))?;
    Ok(TrainOutcome { probe, history: TrainHistory { initial, epochs } })
}

type HistorySink<'a> = Option<(&'a mut EpochRecord, &'a mut Vec<EpochRecord>)>;

fn optimize(
    train: &PreparedSplit,
    mut probe: LinearProbe,
    cfg: &TrainConfig,
    beta: f64,
    mut history: HistorySink<'_>,
) -> Result<LinearProbe> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("empty training split".into()));
    }
    let lambda = cfg.effective_lambda();
    if let Some((initial, _)) = history.as_mut() {
        let loss = probe_gradient(&train.samples, &probe, lambda, beta)?.loss;
        **initial = epoch_record(loss, branch_accuracies(train, &probe, beta)?);
    }

    let mut rng = SeedStreams::new(cfg.seed).stream(SHUFFLE);
    let mut state = AdamWState::new(probe.weights().len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.learning_rate_at(epoch);
        let mut sums = LossParts::default();
        for chunk in order.chunks(cfg.batch_size) {
            let grad = gradient_over(chunk.iter().map(|&i| &train.samples[i]), &probe, lambda, beta)?;
            let b = chunk.len() as f64;
            sums.total += grad.loss.total * b;
            sums.aux += grad.loss.aux * b;
            sums.fusion += grad.loss.fusion * b;
            adamw_step(probe.weights_mut(), &grad.values, &mut state, lr, &cfg.adamw)?;
        }
        if let Some((_, epochs)) = history.as_mut() {
            let n = train.len() as f64;
            let mean = LossParts { total: sums.total / n, aux: sums.aux / n, fusion: sums.fusion / n };
            epochs.push(epoch_record(mean, branch_accuracies(train, &probe, beta)?));
        }
    }
    if probe.weights().iter().any(|w| !w.is_finite()) {
        return Err(Error::Domain("training diverged to non-finite weights".into()));
    }
    Ok(probe)
}

fn initial_probe(task: &FewShotTask, aux: &FeatureStore, init: ProbeInit) -> Result<LinearProbe> {
    match init {
        ProbeInit::Zero => Ok(LinearProbe::zeros(aux.class_count(), aux.dim())),
        ProbeInit::Feature => init_linear_probe(task, aux),
    }
}

fn check_task(task: &FewShotTask, store: &FeatureStore) -> Result<()> {
    if task.class_count() != store.class_count() {
        return Err(Error::Shape { expected: store.class_count(), found: task.class_count() });
    }
    if let Some((class, _)) = task.train_indices.iter().enumerate().find(|(_, v)| v.is_empty()) {
        return Err(Error::Sampling(format!("class {class} has no training samples")));
    }
    Ok(())
}

/// Trains the bias branch for `task` under `train_cfg.mode`.
pub fn train(
    task: &FewShotTask,
    aux: &FeatureStore,
    clip: &FeatureStore,
    head: &ZeroShotHead,
    train_cfg: &TrainConfig,
    fusion_cfg: &FusionConfig,
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    check_task(task, aux)?;
    let split = PreparedSplit::new(&task.train_flat(), aux, clip, head, fusion_cfg)?;
    let probe = initial_probe(task, aux, train_cfg.effective_init())?;
    fit(&split, probe, train_cfg, fusion_cfg.beta)
}

/// Trains an auxiliary-only probe (no zero-shot view), as used to measure
/// the standalone strength of a feature set.
pub fn train_individual(task: &FewShotTask, aux: &FeatureStore, train_cfg: &TrainConfig) -> Result<TrainOutcome> {
    let cfg = TrainConfig { mode: TrainMode::Individual, ..*train_cfg };
    cfg.validate()?;
    check_task(task, aux)?;
    let split = PreparedSplit::aux_only(&task.train_flat(), aux)?;
    let probe = initial_probe(task, aux, cfg.effective_init())?;
    fit(&split, probe, &cfg, 1.0)
}

/// Candidate values for the cross-validated hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchGrid {
    pub lambdas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub betas: Vec<f64>,
}

impl Default for SearchGrid {
    fn default() -> Self {
        let tenths: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        Self { lambdas: tenths.clone(), rhos: tenths, betas: vec![0.25, 0.5, 1.0, 2.0, 4.0] }
    }
}

impl SearchGrid {
    pub fn single(lambda: f64, rho: f64, beta: f64) -> Self {
        Self { lambdas: vec![lambda], rhos: vec![rho], betas: vec![beta] }
    }

    pub fn len(&self) -> usize {
        self.lambdas.len() * self.rhos.len() * self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub lambda: f64,
    pub rho: f64,
    pub beta: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSelection {
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    pub best: GridPoint,
    pub evaluated: Vec<GridPoint>,
}

/// Distance of `lambda` from 0.4 on a 1e-9 lattice, so that 0.3 and 0.5
/// count as equally close.
fn lambda_distance(lambda: f64) -> u64 {
    libm::round((lambda - 0.4).abs() * 1e9) as u64
}

/// Preference of `a` over `b` at equal validation accuracy: smaller beta,
/// then smaller rho, then lambda closest to 0.4, then smaller lambda.
fn tie_break(a: &GridPoint, b: &GridPoint) -> core::cmp::Ordering {
    a.beta
        .total_cmp(&b.beta)
        .then(a.rho.total_cmp(&b.rho))
        .then(lambda_distance(a.lambda).cmp(&lambda_distance(b.lambda)))
        .then(a.lambda.total_cmp(&b.lambda))
}

/// Exhaustive search over `grid`, retraining the probe at every point and
/// scoring fused accuracy on the validation split.
///
/// `lambda` only affects `Mtfi` training; for other modes the lambda axis
/// collapses to its value in `base_train`.
pub fn grid_search(
    task: &FewShotTask,
    aux: &FeatureStore,
    clip: &FeatureStore,
    head: &ZeroShotHead,
    base_train: &TrainConfig,
    base_fusion: &FusionConfig,
    grid: &SearchGrid,
) -> Result<GridSelection> {
    if grid.is_empty() {
        return Err(Error::Argument("empty hyper-parameter grid".into()));
    }
    if task.val_indices.is_empty() {
        return Err(Error::Argument("grid search needs a non-empty validation split".into()));
    }
    base_train.validate()?;
    check_task(task, aux)?;
    let mut train_split = PreparedSplit::new(&task.train_flat(), aux, clip, head, base_fusion)?;
    let mut val_split = PreparedSplit::new(&task.val_indices, aux, clip, head, base_fusion)?;
    let init = initial_probe(task, aux, base_train.effective_init())?;

    let lambdas: Vec<f64> =
        if base_train.mode == TrainMode::Mtfi { grid.lambdas.clone() } else { vec![base_train.lambda] };
    let mut evaluated = Vec::with_capacity(grid.len());
    let mut best: Option<GridPoint> = None;
    for &rho in &grid.rhos {
        let fusion = FusionConfig { rho, ..*base_fusion };
        train_split.set_kappa(&fusion)?;
        val_split.set_kappa(&fusion)?;
        for &beta in &grid.betas {
            for &lambda in &lambdas {
                let cfg = TrainConfig { lambda, ..*base_train };
                let probe = optimize(&train_split, init.clone(), &cfg, beta, None)?;
                let (_, val_accuracy) = branch_accuracies(&val_split, &probe, beta)?;
                let point = GridPoint { lambda, rho, beta, val_accuracy };
                evaluated.push(point);
                let better = match &best {
                    None => true,
                    Some(b) => {
                        point.val_accuracy > b.val_accuracy
                            || (point.val_accuracy == b.val_accuracy && tie_break(&point, b).is_lt())
                    }
                };
                if better {
                    best = Some(point);
                }
            }
        }
    }
    let best = best.ok_or_else(|| Error::Argument("empty hyper-parameter grid".into()))?;
    Ok(GridSelection {
        fusion: FusionConfig { rho: best.rho, beta: best.beta, ..*base_fusion },
        train: TrainConfig { lambda: best.lambda, ..*base_train },
        best,
        evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::KappaMethod;
    use crate::store::SplitTag;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn multi_branch_loss_examples() {
        let fused = [2.0, 0.0, -1.0];
        let bias = [0.5, 0.5, 0.0];
        let one = multi_branch_loss(&fused, &bias, 1, 1.0).unwrap();
        assert_eq!(one.total, cross_entropy(&fused, 1).unwrap());
        let zero = multi_branch_loss(&fused, &bias, 1, 0.0).unwrap();
        assert_eq!(zero.total, cross_entropy(&bias, 1).unwrap());
        let mixed = multi_branch_loss(&fused, &bias, 1, 0.4).unwrap();
        assert!((mixed.total - (0.6 * mixed.aux + 0.4 * mixed.fusion)).abs() < 1e-12);
        // aux = 1, fusion = 2 at lambda = 0.4 weighs to 0.6 + 0.8
        assert!(((1.0 - 0.4) * 1.0 + 0.4 * 2.0 - 1.4f64).abs() < 1e-12);
        assert!(multi_branch_loss(&fused, &bias, 3, 0.4).is_err());
        assert!(multi_branch_loss(&fused, &bias, 0, 1.5).is_err());
    }

    fn sample(aux: Vec<f64>, s0: Vec<f64>, label: usize) -> PreparedSample {
        PreparedSample { aux, s0, kappa: 1.0, label }
    }

    #[test]
    fn gradient_vanishes_at_confident_aux_prediction() {
        let probe = LinearProbe::from_weights(2, 2, vec![40.0, 0.0, 0.0, -40.0]).unwrap();
        let batch = [sample(vec![1.0, 0.0], vec![0.0, 0.0], 0)];
        let g = probe_gradient(&batch, &probe, 0.0, 1.0).unwrap();
        let norm = crate::numerics::norm(&g.values);
        assert!(norm < 1e-4, "{norm}");
    }

    #[test]
    fn gradient_is_linear_in_features_for_aux_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let probe = LinearProbe::zeros(3, 4);
        let f: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f2: Vec<f64> = f.iter().map(|x| 2.0 * x).collect();
        let g1 = probe_gradient(&[sample(f, vec![0.0; 3], 2)], &probe, 0.0, 1.0).unwrap();
        let g2 = probe_gradient(&[sample(f2, vec![0.0; 3], 2)], &probe, 0.0, 1.0).unwrap();
        for (a, b) in g1.values.iter().zip(&g2.values) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
        assert!(probe_gradient(&[], &probe, 0.0, 1.0).is_err());
    }

    #[test]
    fn adamw_examples() {
        let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
        let mut params = vec![0.5, -1.5, 2.0];
        let mut state = AdamWState::new(3);
        adamw_step(&mut params, &[0.0; 3], &mut state, 1e-3, &cfg).unwrap();
        assert_eq!(params, vec![0.5, -1.5, 2.0]);

        let cfg = AdamWConfig { weight_decay: 0.01, ..AdamWConfig::default() };
        let mut state = AdamWState::new(3);
        adamw_step(&mut params, &[0.0; 3], &mut state, 1e-3, &cfg).unwrap();
        for (p, orig) in params.iter().zip([0.5, -1.5, 2.0]) {
            assert!((p - orig * (1.0 - 1e-5)).abs() < 1e-15);
        }
        assert!(adamw_step(&mut params, &[0.0; 2], &mut state, 1e-3, &cfg).is_err());
    }

    /// Textbook AdamW written out scalar by scalar.
    fn reference_adamw(mut p: f64, grads: &[f64], lr: f64, b1: f64, b2: f64, eps: f64, wd: f64) -> f64 {
        let (mut m, mut v) = (0.0, 0.0);
        for (t, &g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            p -= lr * wd * p;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        p
    }

    #[test]
    fn adamw_matches_reference_steps() {
        let cfg = AdamWConfig::default();
        let grads = [0.3, -0.1, 0.7, 0.7, -2.0];
        let mut params = vec![1.25];
        let mut state = AdamWState::new(1);
        for (i, &g) in grads.iter().enumerate() {
            adamw_step(&mut params, &[g], &mut state, 1e-3, &cfg).unwrap();
            let want = reference_adamw(1.25, &grads[..=i], 1e-3, 0.9, 0.999, 1e-8, 0.01);
            assert!((params[0] - want).abs() < 1e-14);
        }
        // The first step with constant gradient moves by lr * sign(g).
        let mut p = vec![0.0, 0.0];
        let mut state = AdamWState::new(2);
        let cfg = AdamWConfig { weight_decay: 0.0, ..cfg };
        adamw_step(&mut p, &[3.0, -0.02], &mut state, 1e-3, &cfg).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-9 && (p[1] - 1e-3).abs() < 1e-9);
    }

    fn separable_store() -> (FeatureStore, FewShotTask) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (c, per_class, d) = (2, 12, 3);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for class in 0..c {
            for _ in 0..per_class {
                let sign = if class == 0 { 1.0f32 } else { -1.0 };
                features.extend([sign * rng.random_range(0.5f32..1.0), rng.random_range(-0.2f32..0.2), 0.3]);
                labels.push(class);
            }
        }
        let n = labels.len();
        let store = FeatureStore::new("sep", d, c, features, labels, vec![SplitTag::Train; n]).unwrap();
        let task = crate::store::sample_few_shot(&store, 8, 4).unwrap();
        (store, task)
    }

    #[test]
    fn individual_training_separates_and_is_deterministic() {
        let (store, task) = separable_store();
        let cfg = TrainConfig { mode: TrainMode::Individual, learning_rate: 0.05, ..TrainConfig::default() };
        let a = train_individual(&task, &store, &cfg).unwrap();
        assert_eq!(a.history.epochs.len(), 50);
        assert_eq!(a.history.epochs.last().unwrap().aux_accuracy, 1.0);
        let b = train_individual(&task, &store, &cfg).unwrap();
        assert_eq!(a.probe, b.probe);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn joint_equals_mtfi_at_lambda_one() {
        let (store, task) = separable_store();
        let head = ZeroShotHead::new(2, 3, vec![0.2, 0.9, 0.0, -0.1, 0.4, 0.6]).unwrap();
        let fusion = FusionConfig::fixed_beta(1.0);
        for init in [ProbeInit::Zero, ProbeInit::Feature] {
            let joint = TrainConfig { mode: TrainMode::Joint, init: Some(init), epochs: 5, ..TrainConfig::default() };
            let mtfi = TrainConfig { mode: TrainMode::Mtfi, lambda: 1.0, ..joint };
            let a = train(&task, &store, &store, &head, &joint, &fusion).unwrap();
            let b = train(&task, &store, &store, &head, &mtfi, &fusion).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn full_batch_loss_is_non_increasing() {
        let (store, task) = separable_store();
        let head = ZeroShotHead::new(2, 3, vec![0.2, 0.9, 0.0, -0.1, 0.4, 0.6]).unwrap();
        let fusion = FusionConfig { kappa_method: KappaMethod::Kurtosis, ..FusionConfig::default() };
        let cfg = TrainConfig { learning_rate: 1e-4, batch_size: 16, epochs: 40, ..TrainConfig::default() };
        let out = train(&task, &store, &store, &head, &cfg, &fusion).unwrap();
        let mut prev = out.history.initial.total_loss;
        for e in &out.history.epochs {
            assert!(e.total_loss <= prev + 1e-12, "{} > {prev}", e.total_loss);
            prev = e.total_loss;
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lambda: 1.1, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert_eq!(
            TrainConfig { mode: TrainMode::Individual, ..TrainConfig::default() }.effective_init(),
            ProbeInit::Zero
        );
        assert_eq!(TrainConfig::default().effective_init(), ProbeInit::Feature);
        assert_eq!("joint".parse::<TrainMode>().unwrap(), TrainMode::Joint);
    }

    #[test]
    fn grid_search_single_point_and_errors() {
        let (store, mut task) = separable_store();
        let head = ZeroShotHead::new(2, 3, vec![0.2, 0.9, 0.0, -0.1, 0.4, 0.6]).unwrap();
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        let fusion = FusionConfig::default();
        assert!(grid_search(&task, &store, &store, &head, &cfg, &fusion, &SearchGrid::single(0.3, 0.2, 2.0)).is_err());
        task.val_indices = task.train_flat();
        let sel = grid_search(&task, &store, &store, &head, &cfg, &fusion, &SearchGrid::single(0.3, 0.2, 2.0)).unwrap();
        assert_eq!((sel.best.lambda, sel.best.rho, sel.best.beta), (0.3, 0.2, 2.0));
        assert_eq!((sel.train.lambda, sel.fusion.rho, sel.fusion.beta), (0.3, 0.2, 2.0));
        let empty = SearchGrid { betas: vec![], ..SearchGrid::default() };
        assert!(matches!(grid_search(&task, &store, &store, &head, &cfg, &fusion, &empty), Err(Error::Argument(_))));
    }

    #[test]
    fn tie_break_order() {
        let p = |lambda, rho, beta| GridPoint { lambda, rho, beta, val_accuracy: 0.5 };
        assert!(tie_break(&p(0.0, 0.9, 0.5), &p(0.4, 0.0, 1.0)).is_lt());
        assert!(tie_break(&p(0.9, 0.1, 1.0), &p(0.4, 0.2, 1.0)).is_lt());
        assert!(tie_break(&p(0.5, 0.1, 1.0), &p(0.0, 0.1, 1.0)).is_lt());
        assert!(tie_break(&p(0.3, 0.1, 1.0), &p(0.5, 0.1, 1.0)).is_lt());
    }
}
