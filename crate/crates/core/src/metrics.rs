//! Superiority and complementarity of candidate auxiliary feature sets, and
//! Top-K / Top-M selection.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::fusion::FusionConfig;
use crate::numerics::{argmax, cosine_similarity};
use crate::predictors::LinearProbe;
use crate::store::{FeatureStore, FewShotTask, SplitTag, ZeroShotHead};
use crate::training::{branch_accuracies, train_individual, PreparedSplit, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct AuxCandidateReport {
    pub encoder_id: String,
    /// Test accuracy of an individually trained probe.
    pub sup: f64,
    /// Mean `1 - cos(s0, s_aux)` on the chosen split.
    pub cmy: f64,
    /// Test accuracy of `s0 + beta * s_aux` at the validation-selected beta.
    pub fused_acc: f64,
    pub fused_beta: f64,
}

/// Mean over samples of `1 - cos(s0_i, s_aux_i)`, computed on raw logits.
pub fn complementarity(s0_batch: &[Vec<f64>], s_aux_batch: &[Vec<f64>]) -> Result<f64> {
    check_len(s0_batch.len(), s_aux_batch.len())?;
    if s0_batch.is_empty() {
        return Err(Error::Argument("complementarity of an empty batch".into()));
    }
    let mut total = 0.0;
    for (a, b) in s0_batch.iter().zip(s_aux_batch) {
        total += 1.0 - cosine_similarity(a, b)?;
    }
    Ok(total / s0_batch.len() as f64)
}

fn individual_probe(aux: &FeatureStore, task: &FewShotTask, train_cfg: &TrainConfig) -> Result<LinearProbe> {
    Ok(train_individual(task, aux, train_cfg)?.probe)
}

fn aux_accuracy(aux: &FeatureStore, probe: &LinearProbe, indices: &[usize]) -> Result<f64> {
    let split = PreparedSplit::aux_only(indices, aux)?;
    Ok(branch_accuracies(&split, probe, 1.0)?.0)
}

/// Test accuracy of an individually trained linear probe on `aux`.
pub fn superiority(aux: &FeatureStore, task: &FewShotTask, train_cfg: &TrainConfig) -> Result<f64> {
    if task.test_indices.is_empty() {
        return Err(Error::Argument("superiority needs a non-empty test split".into()));
    }
    let probe = individual_probe(aux, task, train_cfg)?;
    aux_accuracy(aux, &probe, &task.test_indices)
}

/// Superiority, complementarity (on `cmy_split`) and fused accuracy of one
/// candidate. The fusion weight is picked from `betas` by validation
/// accuracy, smaller beta on ties.
pub fn assess_candidate(
    aux: &FeatureStore,
    clip: &FeatureStore,
    head: &ZeroShotHead,
    task: &FewShotTask,
    train_cfg: &TrainConfig,
    betas: &[f64],
    cmy_split: SplitTag,
) -> Result<AuxCandidateReport> {
    if betas.is_empty() {
        return Err(Error::Argument("empty beta list".into()));
    }
    if task.test_indices.is_empty() || task.val_indices.is_empty() {
        return Err(Error::Argument("candidate assessment needs validation and test samples".into()));
    }
    let probe = individual_probe(aux, task, train_cfg)?;
    let sup = aux_accuracy(aux, &probe, &task.test_indices)?;

    let plain = FusionConfig::fixed_beta(1.0);
    let cmy_indices = task.split(cmy_split);
    let cmy_set = PreparedSplit::new(&cmy_indices, aux, clip, head, &plain)?;
    let s0: Vec<Vec<f64>> = cmy_set.samples.iter().map(|s| s.s0.clone()).collect();
    let s_aux: Vec<Vec<f64>> =
        cmy_set.samples.iter().map(|s| crate::predictors::lp_bias(&probe, &s.aux)).collect::<Result<_>>()?;
    let cmy = complementarity(&s0, &s_aux)?;

    let val = PreparedSplit::new(&task.val_indices, aux, clip, head, &plain)?;
    let mut best = (f64::NEG_INFINITY, betas[0]);
    let mut sorted = betas.to_vec();
    sorted.sort_by(f64::total_cmp);
    for &beta in &sorted {
        let acc = branch_accuracies(&val, &probe, beta)?.1;
        if acc > best.0 {
            best = (acc, beta);
        }
    }
    let test = PreparedSplit::new(&task.test_indices, aux, clip, head, &plain)?;
    let fused_acc = branch_accuracies(&test, &probe, best.1)?.1;
    Ok(AuxCandidateReport { encoder_id: aux.encoder_id().into(), sup, cmy, fused_acc, fused_beta: best.1 })
}

fn top(reports: &[AuxCandidateReport], n: usize, key: impl Fn(&AuxCandidateReport) -> f64) -> BTreeSet<&str> {
    let mut order: Vec<&AuxCandidateReport> = reports.iter().collect();
    order.sort_by(|a, b| key(b).total_cmp(&key(a)).then_with(|| a.encoder_id.cmp(&b.encoder_id)));
    order.into_iter().take(n).map(|r| r.encoder_id.as_str()).collect()
}

/// Encoders in both the Top-K by superiority and the Top-M by
/// complementarity. Ties inside a ranking go to the lexicographically
/// smaller encoder id.
pub fn select_aux(reports: &[AuxCandidateReport], k: usize, m: usize) -> Result<BTreeSet<String>> {
    if reports.is_empty() {
        return Err(Error::Argument("no auxiliary candidates".into()));
    }
    if k == 0 || m == 0 || k > reports.len() || m > reports.len() {
        return Err(Error::Argument(format!("K = {k} and M = {m} must lie in 1..={}", reports.len())));
    }
    let by_sup = top(reports, k, |r| r.sup);
    let by_cmy = top(reports, m, |r| r.cmy);
    Ok(by_sup.intersection(&by_cmy).map(|s| String::from(*s)).collect())
}

/// Zero-shot top-1 accuracy over `indices`.
pub fn zero_shot_accuracy(clip: &FeatureStore, head: &ZeroShotHead, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Argument("accuracy over an empty split".into()));
    }
    let mut hits = 0usize;
    for &i in indices {
        let s0 = crate::predictors::zero_shot_logits(head, &clip.row_f64(i))?;
        hits += usize::from(argmax(&s0) == clip.label(i));
    }
    Ok(hits as f64 / indices.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn report(id: &str, sup: f64, cmy: f64) -> AuxCandidateReport {
        AuxCandidateReport { encoder_id: id.into(), sup, cmy, fused_acc: 0.0, fused_beta: 1.0 }
    }

    #[test]
    fn complementarity_examples() {
        let s0 = vec![vec![1.0, 2.0, -0.5], vec![0.3, 0.0, 0.1]];
        let neg: Vec<Vec<f64>> = s0.iter().map(|v| v.iter().map(|x| -x).collect()).collect();
        assert!(complementarity(&s0, &s0).unwrap().abs() < 1e-12);
        assert!((complementarity(&s0, &neg).unwrap() - 2.0).abs() < 1e-12);
        let a = vec![vec![1.0, 0.0], vec![0.0, 3.0]];
        let b = vec![vec![0.0, 2.0], vec![5.0, 0.0]];
        assert!((complementarity(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!(complementarity(&a, &[vec![0.0, 0.0], vec![1.0, 0.0]]).is_err());
        assert!(complementarity(&a, &b[..1]).is_err());
    }

    #[test]
    fn selection_examples() {
        let one = [report("only", 0.5, 0.5)];
        assert_eq!(select_aux(&one, 1, 1).unwrap(), BTreeSet::from([String::from("only")]));
        let three = [report("A", 0.9, 0.1), report("B", 0.8, 0.5), report("C", 0.1, 0.9)];
        assert_eq!(select_aux(&three, 2, 2).unwrap(), BTreeSet::from([String::from("B")]));
        assert!(select_aux(&[], 1, 1).is_err());
        assert!(select_aux(&three, 0, 1).is_err());
        assert!(select_aux(&three, 1, 4).is_err());
    }

    #[test]
    fn selection_of_published_candidates() {
        let table = [
            report("CLIP", 56.93, 0.438),
            report("DINO", 55.65, 0.816),
            report("MoCov3", 57.68, 0.837),
            report("MAE", 38.98, 0.722),
            report("SparK", 28.31, 0.770),
            report("MILAN", 66.36, 0.718),
        ];
        let chosen = select_aux(&table, 3, 3).unwrap();
        assert!(chosen.contains("MoCov3"));
        assert_eq!(chosen.len(), 1);
    }

    #[test]
    fn ties_are_broken_lexicographically() {
        let tied = [report("b", 0.5, 0.5), report("a", 0.5, 0.5), report("c", 0.5, 0.5)];
        assert_eq!(select_aux(&tied, 1, 2).unwrap(), BTreeSet::from([String::from("a")]));
        assert_eq!(select_aux(&tied, 2, 2).unwrap(), BTreeSet::from([String::from("a"), String::from("b")]));
    }
}
