//! Metrics against gold labels, per-manifesto proportions and report tables.

mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::LearnerKind;
use crate::corpus::{Dimension, Role};
use crate::ensemble::{Classification, Threshold};

pub use report::{
    emit_manifesto_table, emit_model_table, emit_report, emit_summary_table, ReportFormat, ReportTable,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("{gold} gold labels but {pred} predictions")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("manifesto group {year} {party} has no paragraphs")]
    EmptyGroup { year: i32, party: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, gold: bool, pred: bool) {
        match (gold, pred) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

pub fn confusion(gold: &[bool], pred: &[bool]) -> Result<ConfusionMatrix, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut cm = ConfusionMatrix::default();
    for (&g, &p) in gold.iter().zip(pred) {
        cm.record(g, p);
    }
    Ok(cm)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
///
/// Evaluated as `2p * (r / (p + r))`, which returns `p` exactly when
/// `p == r` and never leaves `[min(p, r), max(p, r)]`.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    let sum = precision + recall;
    if sum > 0.0 {
        2.0 * precision * (recall / sum)
    } else {
        0.0
    }
}

/// Which ratios had a zero denominator (and were reported as 0).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degenerate {
    pub accuracy: bool,
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

impl Degenerate {
    pub fn any(&self) -> bool {
        self.accuracy || self.precision || self.recall || self.f1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dimension: Dimension,
    pub role: Option<Role>,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: Degenerate,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn metrics(cm: &ConfusionMatrix, dimension: Dimension, role: Option<Role>) -> MetricReport {
    let (accuracy, d_acc) = ratio(cm.tp + cm.tn, cm.total());
    let (precision, d_p) = ratio(cm.tp, cm.tp + cm.fp);
    let (recall, d_r) = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = f1_score(precision, recall);
    MetricReport {
        dimension,
        role,
        confusion: *cm,
        accuracy,
        precision,
        recall,
        f1,
        degenerate: Degenerate {
            accuracy: d_acc,
            precision: d_p,
            recall: d_r,
            f1: precision + recall == 0.0,
        },
    }
}

/// Half-up rounding for display, with a small guard so values like 0.845
/// (stored as 0.84499999...) round the way they read.
pub fn round_half_up(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (x * scale + 0.5 + 1e-9).floor() / scale
}

/// Row label in the model-performance table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type")]
pub enum ModelLabel {
    Learner { kind: LearnerKind },
    Ensemble { threshold: Threshold },
}

impl ModelLabel {
    pub fn display_name(&self) -> String {
        match self {
            ModelLabel::Learner { kind } => kind.display_name().to_owned(),
            ModelLabel::Ensemble { threshold } => format!("Ensemble (>={threshold})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPerformance {
    pub model: ModelLabel,
    pub ae: MetricReport,
    pub pc: MetricReport,
}

impl ModelPerformance {
    pub fn get(&self, dimension: Dimension) -> &MetricReport {
        match dimension {
            Dimension::Pc => &self.pc,
            Dimension::Ae => &self.ae,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestoReport {
    pub year: i32,
    pub party: String,
    pub ae_true_prop: f64,
    pub ae_pred_prop: f64,
    pub pc_true_prop: f64,
    pub pc_pred_prop: f64,
    pub f1_ae: f64,
    pub f1_pc: f64,
    pub paragraph_count: usize,
    pub ae_confusion: ConfusionMatrix,
    pub pc_confusion: ConfusionMatrix,
}

/// One paragraph's gold labels (absent when uncoded) and predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParagraphOutcome {
    pub year: i32,
    pub party: String,
    pub gold_pc: Option<bool>,
    pub gold_ae: Option<bool>,
    pub pred_pc: bool,
    pub pred_ae: bool,
}

/// Groups outcomes by `(year, party)` in ascending order. Unlabelled gold is
/// left out of the confusion counts but still counts towards the paragraph
/// total used as every proportion's denominator.
pub fn aggregate_manifesto(outcomes: &[ParagraphOutcome]) -> Result<Vec<ManifestoReport>, EvalError> {
    let mut groups: BTreeMap<(i32, &str), Vec<&ParagraphOutcome>> = BTreeMap::new();
    for o in outcomes {
        if o.party.is_empty() {
            return Err(EvalError::EmptyGroup {
                year: o.year,
                party: String::new(),
            });
        }
        groups.entry((o.year, o.party.as_str())).or_default().push(o);
    }
    Ok(groups
        .into_iter()
        .map(|((year, party), rows)| {
            let n = rows.len();
            let share = |f: &dyn Fn(&ParagraphOutcome) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / n as f64;
            let mut ae = ConfusionMatrix::default();
            let mut pc = ConfusionMatrix::default();
            for r in &rows {
                if let Some(g) = r.gold_ae {
                    ae.record(g, r.pred_ae);
                }
                if let Some(g) = r.gold_pc {
                    pc.record(g, r.pred_pc);
                }
            }
            ManifestoReport {
                year,
                party: party.to_owned(),
                ae_true_prop: share(&|r| r.gold_ae == Some(true)),
                ae_pred_prop: share(&|r| r.pred_ae),
                pc_true_prop: share(&|r| r.gold_pc == Some(true)),
                pc_pred_prop: share(&|r| r.pred_pc),
                f1_ae: metrics(&ae, Dimension::Ae, None).f1,
                f1_pc: metrics(&pc, Dimension::Pc, None).f1,
                paragraph_count: n,
                ae_confusion: ae,
                pc_confusion: pc,
            }
        })
        .collect())
}

/// Everything `evaluate` produces for one role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub role: Role,
    pub threshold: Threshold,
    pub models: Vec<ModelPerformance>,
    pub manifestos: Vec<ManifestoReport>,
}

impl EvaluationReport {
    pub fn ensemble(&self) -> Option<&ModelPerformance> {
        self.models.iter().find(|m| matches!(m.model, ModelLabel::Ensemble { .. }))
    }
}

/// Gold labels and metadata for one paragraph, keyed by para_id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldParagraph<'a> {
    pub para_id: &'a str,
    pub year: i32,
    pub party: &'a str,
    pub pc: Option<bool>,
    pub ae: Option<bool>,
}

/// Scores every learner and the ensemble against gold. `classified` must hold
/// a pc and an ae classification for each gold paragraph.
pub fn evaluate_classifications(
    role: Role,
    gold: &[GoldParagraph<'_>],
    classified: &[Classification],
) -> Result<EvaluationReport, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut by_id: BTreeMap<(&str, Dimension), &Classification> = BTreeMap::new();
    let mut threshold = None;
    for c in classified {
        by_id.insert((c.votes.para_id.as_str(), c.votes.dimension), c);
        threshold.get_or_insert(c.decision.threshold_used);
    }
    let lookup = |id: &str, d: Dimension| by_id.get(&(id, d)).copied();
    let missing = gold
        .iter()
        .filter(|g| lookup(g.para_id, Dimension::Pc).is_none() || lookup(g.para_id, Dimension::Ae).is_none())
        .count();
    if missing > 0 {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: gold.len() - missing,
        });
    }

    let mut learner_cm: BTreeMap<(LearnerKind, Dimension), ConfusionMatrix> = BTreeMap::new();
    let mut ensemble_cm: BTreeMap<Dimension, ConfusionMatrix> = BTreeMap::new();
    let mut outcomes = Vec::with_capacity(gold.len());
    for g in gold {
        let pc = lookup(g.para_id, Dimension::Pc).expect("checked above");
        let ae = lookup(g.para_id, Dimension::Ae).expect("checked above");
        for (dimension, label, c) in [(Dimension::Pc, g.pc, pc), (Dimension::Ae, g.ae, ae)] {
            let Some(label) = label else { continue };
            for (kind, &vote) in c.votes.votes.iter() {
                learner_cm.entry((kind, dimension)).or_default().record(label, vote);
            }
            ensemble_cm.entry(dimension).or_default().record(label, c.decision.decision);
        }
        outcomes.push(ParagraphOutcome {
            year: g.year,
            party: g.party.to_owned(),
            gold_pc: g.pc,
            gold_ae: g.ae,
            pred_pc: pc.decision.decision,
            pred_ae: ae.decision.decision,
        });
    }
    let labelled = |d: Dimension| ensemble_cm.get(&d).map_or(0, ConfusionMatrix::total);
    if labelled(Dimension::Pc) == 0 && labelled(Dimension::Ae) == 0 {
        return Err(EvalError::EmptyInput);
    }

    let report = |cm: Option<&ConfusionMatrix>, d: Dimension| metrics(&cm.copied().unwrap_or_default(), d, Some(role));
    let mut models: Vec<ModelPerformance> = LearnerKind::ALL
        .into_iter()
        .map(|kind| ModelPerformance {
            model: ModelLabel::Learner { kind },
            ae: report(learner_cm.get(&(kind, Dimension::Ae)), Dimension::Ae),
            pc: report(learner_cm.get(&(kind, Dimension::Pc)), Dimension::Pc),
        })
        .collect();
    let threshold = threshold.unwrap_or_default();
    models.push(ModelPerformance {
        model: ModelLabel::Ensemble { threshold },
        ae: report(ensemble_cm.get(&Dimension::Ae), Dimension::Ae),
        pc: report(ensemble_cm.get(&Dimension::Pc), Dimension::Pc),
    });
    Ok(EvaluationReport {
        role,
        threshold,
        models,
        manifestos: aggregate_manifesto(&outcomes)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[true, false, true, false], &[true, false, false, true]).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 1, fp: 1, tn: 1, fn_: 1 });
        let g = [true, false, false];
        let same = confusion(&g, &g).unwrap();
        assert_eq!((same.fp, same.fn_), (0, 0));
        let all_fp = confusion(&[false; 4], &[true; 4]).unwrap();
        assert_eq!((all_fp.tp, all_fp.fp), (0, 4));
        assert_eq!(confusion(&[], &[]), Err(EvalError::EmptyInput));
        assert_eq!(confusion(&[true], &[]), Err(EvalError::LengthMismatch { gold: 1, pred: 0 }));
    }

    #[test]
    fn all_negative_is_degenerate() {
        let m = metrics(&ConfusionMatrix { tp: 0, fp: 0, tn: 7, fn_: 0 }, Dimension::Pc, None);
        assert_eq!(m.accuracy, 1.0);
        assert!(m.degenerate.precision && m.degenerate.recall && m.degenerate.f1);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn f1_of_published_rates() {
        // published ensemble AE precision 0.84, recall 0.85
        assert!((f1_score(0.84, 0.85) - 0.845).abs() < 0.005);
        // harmonic mean by hand: 2 * 0.4 * 0.64 / 1.04
        assert!((f1_score(0.40, 0.64) - 0.4923).abs() < 1e-4);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
        assert_eq!(f1_score(0.3, 0.3), 0.3);
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(round_half_up(0.845, 2), 0.85);
        assert_eq!(round_half_up(0.156028, 2), 0.16);
        assert_eq!(round_half_up(0.125, 2), 0.13);
        assert_eq!(round_half_up(0.0, 2), 0.0);
        assert_eq!(round_half_up(1.0, 2), 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]
        #[test]
        fn metric_identities(tp in 0u64..300, fp in 0u64..300, tn in 0u64..300, fn_ in 0u64..300) {
            prop_assume!(tp + fp + tn + fn_ > 0);
            let m = metrics(&ConfusionMatrix { tp, fp, tn, fn_ }, Dimension::Ae, None);
            prop_assert!((0.0..=1.0).contains(&m.accuracy));
            if m.precision + m.recall > 0.0 {
                let h = 2.0 * m.precision * m.recall / (m.precision + m.recall);
                prop_assert!((m.f1 - h).abs() <= 4.0 * f64::EPSILON * h);
            }
            if m.precision > 0.0 && m.recall > 0.0 {
                prop_assert!(m.precision.min(m.recall) <= m.f1 && m.f1 <= m.precision.max(m.recall));
            }
        }

        #[test]
        fn permutation_invariance(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..60), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let split = |v: &[(bool, bool)]| -> (Vec<bool>, Vec<bool>) { v.iter().copied().unzip() };
            let (g1, p1) = split(&pairs);
            let (g2, p2) = split(&shuffled);
            prop_assert_eq!(confusion(&g1, &p1).unwrap(), confusion(&g2, &p2).unwrap());
        }

        #[test]
        fn group_counts_decompose(rows in proptest::collection::vec((0i32..3, 0usize..3, any::<bool>(), any::<bool>(), any::<bool>()), 1..80)) {
            let parties = ["A", "B", "C"];
            let outcomes: Vec<ParagraphOutcome> = rows
                .iter()
                .map(|&(y, p, g, pr, coded)| ParagraphOutcome {
                    year: 2016 + y,
                    party: parties[p].to_owned(),
                    gold_pc: coded.then_some(g),
                    gold_ae: Some(g),
                    pred_pc: pr,
                    pred_ae: !pr,
                })
                .collect();
            let reports = aggregate_manifesto(&outcomes).unwrap();
            let mut total = ConfusionMatrix::default();
            let mut total_pc = ConfusionMatrix::default();
            for r in &reports {
                total.merge(&r.ae_confusion);
                total_pc.merge(&r.pc_confusion);
            }
            let g: Vec<bool> = outcomes.iter().map(|o| o.gold_ae.unwrap()).collect();
            let p: Vec<bool> = outcomes.iter().map(|o| o.pred_ae).collect();
            prop_assert_eq!(total, confusion(&g, &p).unwrap());
            let coded = outcomes.iter().filter(|o| o.gold_pc.is_some()).count() as u64;
            prop_assert_eq!(total_pc.total(), coded);
            prop_assert_eq!(reports.iter().map(|r| r.paragraph_count).sum::<usize>(), outcomes.len());
        }
    }

    fn outcome(year: i32, party: &str, gold_ae: bool, pred_ae: bool) -> ParagraphOutcome {
        ParagraphOutcome {
            year,
            party: party.to_owned(),
            gold_pc: Some(gold_ae),
            gold_ae: Some(gold_ae),
            pred_pc: pred_ae,
            pred_ae,
        }
    }

    #[test]
    fn manifesto_proportions() {
        let mut rows: Vec<_> = (0..141).map(|i| outcome(2016, "DK", i < 22, i < 20)).collect();
        rows.push(outcome(2020, "X", true, true));
        let reports = aggregate_manifesto(&rows).unwrap();
        assert_eq!(reports.len(), 2);
        let dk = &reports[0];
        assert!((dk.ae_true_prop - 22.0 / 141.0).abs() < 1e-15);
        assert_eq!(round_half_up(dk.ae_true_prop, 2), 0.16);
        let single = &reports[1];
        assert_eq!(
            (single.ae_true_prop, single.ae_pred_prop, single.pc_true_prop, single.pc_pred_prop, single.f1_ae, single.f1_pc),
            (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn uncoded_gold_counts_only_in_denominator() {
        let mut rows = vec![outcome(2016, "P", true, true), outcome(2016, "P", false, false)];
        rows[1].gold_ae = None;
        let r = &aggregate_manifesto(&rows).unwrap()[0];
        assert_eq!(r.paragraph_count, 2);
        assert_eq!(r.ae_true_prop, 0.5);
        assert_eq!(r.ae_confusion.total(), 1);
    }
}
