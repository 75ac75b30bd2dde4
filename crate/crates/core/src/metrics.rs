//! Evaluation metrics.
//!
//! Ranking metrics treat the single ground-truth label as the only relevant
//! item: recall@k is 1 when the label is among the top `k` classes and
//! precision@k is that hit divided by `k` (`k` clamped to the class count).

use serde::{Deserialize, Serialize};

use crate::counterfactual::{exact_search, greedy_search, SearchOptions, EXACT_FACT_CAP};
use crate::error::{Error, Result};
use crate::model::LogicModel;
use crate::scenario::Scenario;
use crate::split::novel_patterns;
use crate::vocab::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub k: usize,
    /// Mean over classes of recall@k.
    pub mean_recall_at_k: f64,
    /// Mean over classes of precision@k.
    pub mean_precision_at_k: f64,
    /// Macro mean average precision of the per-class posterior rankings.
    pub mean_average_precision: Option<f64>,
    /// Macro one-vs-rest ROC AUC over classes with both outcomes present.
    pub auc: Option<f64>,
    /// Risk predicted on samples whose ground truth is not a risk class.
    pub false_alarm_rate: Option<f64>,
    /// Fact detection accuracy at threshold 0.5.
    pub fact_accuracy: Option<f64>,
    /// Accuracy on held-out fact compositions.
    pub cgs: Option<f64>,
    /// Held-out samples correctly classified with a pattern unseen in training.
    pub npr: Option<f64>,
    /// Risk-predicted samples with a verified flipping intervention.
    pub cf_validity: Option<f64>,
    pub cf_evaluated: Option<usize>,
}

/// Metrics that depend only on labels and posteriors.
#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<(usize, f64, f64, f64)>,
    pub mean_recall_at_k: f64,
    pub mean_precision_at_k: f64,
    pub mean_average_precision: Option<f64>,
    pub auc: Option<f64>,
    pub false_alarm_rate: Option<f64>,
}

fn argmax(p: &[f64]) -> usize {
    crate::numeric::ops::argmax(p)
}

/// Rank of `class` in `posterior` (0 = top); ties resolved like `argmax`.
fn rank_of(posterior: &[f64], class: usize) -> usize {
    let target = posterior[class];
    posterior
        .iter()
        .enumerate()
        .filter(|&(i, &p)| p > target || (p == target && i < class))
        .count()
}

/// Mann-Whitney AUC of `scores` with binary `positive`; ties count half.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Average precision of ranking `scores` against `positive`.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        if positive[idx] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / n_pos as f64)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn classify(labels: &[usize], posteriors: &[Vec<f64>], classes: usize, risk: &[bool], k: usize) -> Result<Classification> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if posteriors.len() != labels.len() {
        return Err(Error::shape("posteriors", labels.len(), posteriors.len()));
    }
    if risk.len() != classes {
        return Err(Error::shape("risk flags", classes, risk.len()));
    }
    for (&y, p) in labels.iter().zip(posteriors) {
        if y >= classes {
            return Err(Error::ClassOutOfRange { index: y, classes });
        }
        if p.len() != classes {
            return Err(Error::shape("posterior", classes, p.len()));
        }
    }
    let k = k.clamp(1, classes);
    let preds: Vec<usize> = posteriors.iter().map(|p| argmax(p)).collect();
    let n = labels.len() as f64;
    let accuracy = labels.iter().zip(&preds).filter(|(a, b)| a == b).count() as f64 / n;

    let mut per_class = Vec::with_capacity(classes);
    let mut recall_k = Vec::new();
    let mut precision_k = Vec::new();
    let mut aucs = Vec::new();
    let mut aps = Vec::new();
    for y in 0..classes {
        let tp = labels.iter().zip(&preds).filter(|&(&l, &p)| l == y && p == y).count() as f64;
        let predicted = preds.iter().filter(|&&p| p == y).count() as f64;
        let support = labels.iter().filter(|&&l| l == y).count() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if support > 0.0 { tp / support } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push((y, precision, recall, f1));
        if support > 0.0 {
            let hits = labels
                .iter()
                .zip(posteriors)
                .filter(|&(&l, p)| l == y && rank_of(p, y) < k)
                .count() as f64;
            recall_k.push(hits / support);
            precision_k.push(hits / support / k as f64);
        }
        let scores: Vec<f64> = posteriors.iter().map(|p| p[y]).collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == y).collect();
        if let Some(a) = binary_auc(&scores, &positive) {
            aucs.push(a);
        }
        if let Some(a) = average_precision(&scores, &positive) {
            aps.push(a);
        }
    }
    let macro_f1 = mean(per_class.iter().map(|c| c.3)).unwrap_or(0.0);
    let non_risk: Vec<usize> = (0..labels.len()).filter(|&i| !risk[labels[i]]).collect();
    let false_alarm_rate = (!non_risk.is_empty())
        .then(|| non_risk.iter().filter(|&&i| risk[preds[i]]).count() as f64 / non_risk.len() as f64);
    Ok(Classification {
        accuracy,
        macro_f1,
        per_class,
        mean_recall_at_k: mean(recall_k).unwrap_or(0.0),
        mean_precision_at_k: mean(precision_k).unwrap_or(0.0),
        mean_average_precision: mean(aps),
        auc: mean(aucs),
        false_alarm_rate,
    })
}

/// Extra evaluation inputs.
#[derive(Clone, Debug, Default)]
pub struct EvalOptions<'a> {
    /// Held-out compositions and the training set they are compared with.
    pub compositional: Option<(&'a [Scenario], &'a [Scenario])>,
    /// Run counterfactual search on risk-predicted samples.
    pub counterfactual: Option<SearchOptions>,
    /// Cap on the number of risk-predicted samples searched.
    pub counterfactual_limit: Option<usize>,
    pub k: Option<usize>,
}

pub const DEFAULT_K: usize = 5;

/// Deterministic-mode predictions and fused confidences.
pub struct Predictions {
    pub posteriors: Vec<Vec<f64>>,
    pub confidences: Vec<Vec<f64>>,
}

pub fn predict(model: &LogicModel<f64>, samples: &[Scenario]) -> Result<Predictions> {
    let reasoner = model.eval_reasoner();
    let mut posteriors = Vec::with_capacity(samples.len());
    let mut confidences = Vec::with_capacity(samples.len());
    for s in samples {
        let graph = model.fact_graph(&s.views)?;
        let inf = model.infer_graph(graph, &reasoner)?;
        posteriors.push(inf.posterior);
        confidences.push(inf.graph.confidences);
    }
    Ok(Predictions {
        posteriors,
        confidences,
    })
}

/// Fraction of `(sample, fact)` pairs detected correctly at threshold 0.5.
pub fn fact_accuracy(confidences: &[Vec<f64>], samples: &[Scenario]) -> Option<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (c, s) in confidences.iter().zip(samples) {
        for (&ck, &pk) in c.iter().zip(&s.facts) {
            total += 1;
            hits += usize::from((ck > 0.5) == (pk == 1));
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

pub fn accuracy(model: &LogicModel<f64>, samples: &[Scenario]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let reasoner = model.eval_reasoner();
    let mut hits = 0usize;
    for s in samples {
        let graph = model.fact_graph(&s.views)?;
        hits += usize::from(model.infer_graph(graph, &reasoner)?.predicted == s.label);
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Counterfactual validity over risk-predicted confidence vectors.
///
/// Returns `(valid fraction, samples searched)`; a result counts as valid only
/// if re-applying its interventions flips the prediction.
pub fn counterfactual_validity(
    model: &LogicModel<f64>,
    confidences: &[Vec<f64>],
    posteriors: &[Vec<f64>],
    risk: &[bool],
    options: &SearchOptions,
    limit: Option<usize>,
) -> Result<(Option<f64>, usize)> {
    let reasoner = model.eval_reasoner();
    let mut valid = 0usize;
    let mut tried = 0usize;
    for (c, p) in confidences.iter().zip(posteriors) {
        if limit.is_some_and(|l| tried >= l) {
            break;
        }
        let pred = argmax(p);
        if !risk[pred] {
            continue;
        }
        tried += 1;
        let found = if c.len() <= EXACT_FACT_CAP || options.force_exact {
            exact_search(&reasoner, c, options)
        } else {
            greedy_search(&reasoner, c, options)
        };
        match found {
            Ok(res) => {
                let after = reasoner.posterior(&crate::counterfactual::apply(c, &res.interventions));
                valid += usize::from(argmax(&after) != pred);
            }
            Err(Error::NoCounterfactual(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(((tried > 0).then(|| valid as f64 / tried as f64), tried))
}

pub fn evaluate(model: &LogicModel<f64>, vocab: &Vocabulary, samples: &[Scenario], options: &EvalOptions<'_>) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = vocab.num_classes();
    if model.dims.classes != classes || model.dims.facts != vocab.num_facts() {
        return Err(Error::Config("model and vocabulary disagree".into()));
    }
    let risk: Vec<bool> = (0..classes).map(|c| vocab.is_risk(c)).collect();
    let preds = predict(model, samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let k = options.k.unwrap_or(DEFAULT_K);
    let cls = classify(&labels, &preds.posteriors, classes, &risk, k)?;

    let (cgs, npr) = match options.compositional {
        Some((test, train)) if !test.is_empty() => {
            let test_preds = predict(model, test)?;
            let correct: Vec<bool> = test
                .iter()
                .zip(&test_preds.posteriors)
                .map(|(s, p)| argmax(p) == s.label)
                .collect();
            let cgs = correct.iter().filter(|&&c| c).count() as f64 / test.len() as f64;
            let novel: std::collections::HashSet<u64> =
                novel_patterns(test, train).into_iter().map(|s| s.id).collect();
            let npr = test
                .iter()
                .zip(&correct)
                .filter(|(s, &c)| c && novel.contains(&s.id))
                .count() as f64
                / test.len() as f64;
            (Some(cgs), Some(npr))
        }
        _ => (None, None),
    };

    let (cf_validity, cf_evaluated) = match &options.counterfactual {
        Some(opts) => {
            let (v, n) = counterfactual_validity(
                model,
                &preds.confidences,
                &preds.posteriors,
                &risk,
                opts,
                options.counterfactual_limit,
            )?;
            (v, Some(n))
        }
        None => (None, None),
    };

    Ok(MetricsReport {
        samples: samples.len(),
        accuracy: cls.accuracy,
        macro_f1: cls.macro_f1,
        per_class: cls
            .per_class
            .iter()
            .map(|&(y, precision, recall, f1)| ClassMetrics {
                class: vocab.classes[y].id.clone(),
                support: labels.iter().filter(|&&l| l == y).count(),
                precision,
                recall,
                f1,
            })
            .collect(),
        k: k.clamp(1, classes),
        mean_recall_at_k: cls.mean_recall_at_k,
        mean_precision_at_k: cls.mean_precision_at_k,
        mean_average_precision: cls.mean_average_precision,
        auc: cls.auc,
        false_alarm_rate: cls.false_alarm_rate,
        fact_accuracy: fact_accuracy(&preds.confidences, samples),
        cgs,
        npr,
        cf_validity,
        cf_evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::LogicConfig;
    use crate::oracle::oracle_model;
    use crate::scenario::GeneratorConfig;
    use crate::split::{compositional_split, HoldoutSpec};

    fn one_hot(c: usize, k: usize) -> Vec<f64> {
        (0..c).map(|i| if i == k { 0.9 } else { 0.1 / (c - 1) as f64 }).collect()
    }

    #[test]
    fn constant_classifier_false_alarms() {
        let labels = [0, 1, 2, 0, 1];
        let risk = [false, false, true];
        let post: Vec<Vec<f64>> = labels.iter().map(|_| one_hot(3, 2)).collect();
        let m = classify(&labels, &post, 3, &risk, 5).unwrap();
        assert_eq!(m.false_alarm_rate, Some(1.0));
        let post: Vec<Vec<f64>> = labels.iter().map(|_| one_hot(3, 0)).collect();
        let m = classify(&labels, &post, 3, &risk, 5).unwrap();
        assert_eq!(m.false_alarm_rate, Some(0.0));
        assert_eq!(m.accuracy, 0.4);
    }

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 2];
        let post: Vec<Vec<f64>> = labels.iter().map(|&y| one_hot(3, y)).collect();
        let m = classify(&labels, &post, 3, &[false; 3], 1).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.auc, Some(1.0));
        assert_eq!(m.mean_average_precision, Some(1.0));
        assert_eq!(m.mean_recall_at_k, 1.0);
        assert_eq!(m.mean_precision_at_k, 1.0);
        assert_eq!(m.false_alarm_rate, Some(0.0));
    }

    #[test]
    fn top_k_clamped_to_class_count() {
        let labels = [0, 1];
        let post = vec![one_hot(2, 1), one_hot(2, 0)];
        let m = classify(&labels, &post, 2, &[false; 2], 5).unwrap();
        assert_eq!(m.accuracy, 0.0);
        assert_eq!(m.mean_recall_at_k, 1.0);
        assert_eq!(m.mean_precision_at_k, 0.5);
    }

    #[test]
    fn auc_matches_pair_counting() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.4, 0.9, 0.2];
        let pos = [false, true, false, true, false, true, false];
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if pos[i] && !pos[j] {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        assert!((binary_auc(&scores, &pos).unwrap() - wins / pairs).abs() < 1e-15);
        assert_eq!(binary_auc(&scores, &[true; 7]), None);
    }

    #[test]
    fn average_precision_by_hand() {
        // ranks of positives: 1, 3 -> (1/1 + 2/3) / 2
        let ap = average_precision(&[0.9, 0.5, 0.4, 0.1], &[true, false, true, false]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(classify(&[], &[], 2, &[false; 2], 1), Err(Error::EmptyDataset)));
        assert!(classify(&[3], &[vec![0.5, 0.5]], 2, &[false; 2], 1).is_err());
    }

    #[test]
    fn oracle_model_report() {
        let g = GeneratorConfig::clinic8().with_noise(0.0).with_occlusion(0.0).compile().unwrap();
        let model = oracle_model::<f64>(&g, LogicConfig::default()).unwrap();
        let corpus = g.generate(1500);
        let split = compositional_split(&corpus, &HoldoutSpec::clinic8_default(), g.vocabulary()).unwrap();
        let options = EvalOptions {
            compositional: Some((&split.test, &split.train)),
            counterfactual: Some(SearchOptions::default().with_risk_classes(g.vocabulary().risk_classes())),
            ..EvalOptions::default()
        };
        let report = evaluate(&model, g.vocabulary(), &split.train, &options).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.fact_accuracy, Some(1.0));
        assert_eq!(report.cgs, Some(1.0));
        assert_eq!(report.npr, Some(1.0));
        assert_eq!(report.cf_validity, Some(1.0));
        assert_eq!(report.false_alarm_rate, Some(0.0));
        assert!(report.cf_evaluated.unwrap() > 0);
    }

    #[test]
    fn no_holdout_means_absent_cgs() {
        let g = GeneratorConfig::clinic8().with_noise(0.0).with_occlusion(0.0).compile().unwrap();
        let model = oracle_model::<f64>(&g, LogicConfig::default()).unwrap();
        let corpus = g.generate(50);
        let report = evaluate(
            &model,
            g.vocabulary(),
            &corpus,
            &EvalOptions {
                compositional: Some((&[], &corpus)),
                ..EvalOptions::default()
            },
        )
        .unwrap();
        assert_eq!(report.cgs, None);
        assert_eq!(report.cf_validity, None);
    }
}
