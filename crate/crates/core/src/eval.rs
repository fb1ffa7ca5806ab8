//! Precision, recall, instruction-weighted coverage, PR curves, AUPRC, and
//! calibrated threshold-point reports.
//!
//! Every metric is computed for a *label view*: the overall unsafe/safe
//! split, one specific unsafe type, or the bug flag. The prediction side is
//! always the same rule `û(x) = 1 ⇔ unsafeness(x) ≥ τ`, so per-type and bug
//! views measure how well the single unsafe ranking recovers those subsets.
//! Coverage weighs predictions by deep size — the instruction count with
//! callee expansion — because that is what downstream analysis (fuzzing,
//! auditing) actually pays for.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::CalibrationReport;
use crate::corpus::{Corpus, LabeledFunction};
use crate::features::deep_size;
use crate::model::{ModelError, ScoreContext, ScoreModel};

/// Errors raised during evaluation.
#[derive(Debug, Error)]
pub enum EvalError {
    /// The test corpus contained no functions.
    #[error("empty corpus: nothing to evaluate")]
    EmptyCorpus,
    /// The bug view was requested but functions carry no bug flags.
    #[error("bug view requires bug flags; {0} function(s) lack one")]
    NoBugLabels(u64),
    /// AUPRC over a view with no positive functions.
    #[error("no positive functions under the requested view")]
    NoPositives,
    /// A label view string that does not parse.
    #[error("invalid label view {0:?}: expected \"unsafe\", \"type:<1..14>\", or \"bug\"")]
    InvalidView(String),
    /// The calibration artifact was produced by a different model.
    #[error("calibration was computed with model fingerprint {expected}, got {got}")]
    ModelMismatch {
        /// Fingerprint recorded in the calibration artifact.
        expected: String,
        /// Fingerprint of the model being evaluated.
        got: String,
    },
    /// Scoring failed.
    #[error(transparent)]
    Model(#[from] ModelError),
    /// CSV export failed.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which labels count as positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelView {
    /// Positive ⇔ the label set is not `{0}`.
    Unsafe,
    /// Positive ⇔ the label set contains this type (1..=14).
    Type(u8),
    /// Positive ⇔ the bug flag is set.
    Bug,
}

impl LabelView {
    /// Parse `"unsafe"`, `"type:<j>"`, or `"bug"`.
    pub fn parse(s: &str) -> Result<Self, EvalError> {
        match s {
            "unsafe" => Ok(LabelView::Unsafe),
            "bug" => Ok(LabelView::Bug),
            _ => {
                let id = s
                    .strip_prefix("type:")
                    .and_then(|v| v.parse::<u8>().ok())
                    .filter(|v| (1..=14).contains(v))
                    .ok_or_else(|| EvalError::InvalidView(s.to_owned()))?;
                Ok(LabelView::Type(id))
            }
        }
    }

    fn is_positive(self, f: &LabeledFunction) -> bool {
        match self {
            LabelView::Unsafe => f.labels.is_unsafe(),
            LabelView::Type(j) => f.labels.contains(j),
            LabelView::Bug => f.bug == Some(true),
        }
    }
}

impl fmt::Display for LabelView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelView::Unsafe => write!(f, "unsafe"),
            LabelView::Type(j) => write!(f, "type:{j}"),
            LabelView::Bug => write!(f, "bug"),
        }
    }
}

impl Serialize for LabelView {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LabelView {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        LabelView::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Metrics of the classifier `unsafeness ≥ threshold` at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// The threshold the point was computed at.
    pub threshold: f64,
    /// `tp / predicted`; pinned to 1.0 when nothing is predicted (see
    /// `no_predictions`).
    pub precision: f64,
    /// `tp / positives`; pinned to 1.0 when the view has no positives (see
    /// `no_positives`).
    pub recall: f64,
    /// Deep-size-weighted fraction of the corpus predicted positive.
    pub coverage: f64,
    /// True positives.
    pub tp: u64,
    /// False positives.
    pub fp: u64,
    /// False negatives.
    #[serde(rename = "fn")]
    pub false_negatives: u64,
    /// Functions predicted positive.
    pub predicted: u64,
    /// Positive functions under the view.
    pub positives: u64,
    /// Sum of deep sizes over the corpus.
    pub total_size: u64,
    /// Sum of deep sizes over predicted functions.
    pub covered_size: u64,
    /// Set when `predicted == 0`, flagging the pinned precision.
    pub no_predictions: bool,
    /// Set when `positives == 0`, flagging the pinned recall.
    pub no_positives: bool,
}

/// Pre-scored corpus item: everything a threshold sweep needs.
struct Item {
    unsafeness: f64,
    positive: bool,
    deep: u64,
}

fn score_items(
    test: &Corpus,
    model: &ScoreModel,
    ctx: &ScoreContext<'_>,
    view: LabelView,
) -> Result<Vec<Item>, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    if view == LabelView::Bug {
        let unflagged = test.functions.iter().filter(|f| f.bug.is_none()).count() as u64;
        if unflagged > 0 {
            return Err(EvalError::NoBugLabels(unflagged));
        }
    }
    test.functions
        .par_iter()
        .map(|f| {
            let scores = model.score_labeled(f, ctx)?;
            Ok(Item {
                unsafeness: scores.unsafeness(),
                positive: view.is_positive(f),
                deep: deep_size(&f.function, ctx.index, &ctx.config).deep,
            })
        })
        .collect()
}

fn point_at(items: &[Item], threshold: f64) -> CurvePoint {
    let mut tp = 0u64;
    let mut predicted = 0u64;
    let mut positives = 0u64;
    let mut total_size = 0u64;
    let mut covered_size = 0u64;
    for item in items {
        let hit = item.unsafeness >= threshold;
        total_size += item.deep;
        if hit {
            predicted += 1;
            covered_size += item.deep;
        }
        if item.positive {
            positives += 1;
            if hit {
                tp += 1;
            }
        }
    }
    let no_predictions = predicted == 0;
    let no_positives = positives == 0;
    CurvePoint {
        threshold,
        precision: if no_predictions { 1.0 } else { tp as f64 / predicted as f64 },
        recall: if no_positives { 1.0 } else { tp as f64 / positives as f64 },
        coverage: if total_size == 0 { 0.0 } else { covered_size as f64 / total_size as f64 },
        tp,
        fp: predicted - tp,
        false_negatives: positives - tp,
        predicted,
        positives,
        total_size,
        covered_size,
        no_predictions,
        no_positives,
    }
}

/// Metrics of the classifier at one fixed threshold.
pub fn precision_recall(
    test: &Corpus,
    model: &ScoreModel,
    ctx: &ScoreContext<'_>,
    threshold: f64,
    view: LabelView,
) -> Result<CurvePoint, EvalError> {
    let items = score_items(test, model, ctx, view)?;
    Ok(point_at(&items, threshold))
}

/// Full threshold sweep: one point per distinct observed unsafeness value, in
/// descending threshold order (ascending recall).
pub fn curve(
    test: &Corpus,
    model: &ScoreModel,
    ctx: &ScoreContext<'_>,
    view: LabelView,
) -> Result<Vec<CurvePoint>, EvalError> {
    let items = score_items(test, model, ctx, view)?;
    let mut thresholds: Vec<f64> = items.iter().map(|i| i.unsafeness).collect();
    thresholds.sort_by(|a, b| f64::total_cmp(b, a));
    thresholds.dedup();
    Ok(thresholds
        .par_iter()
        .map(|t| point_at(&items, *t))
        .collect())
}

/// Area under the precision-recall curve by the step rule: precision is held
/// constant from each achieved recall level back to the previous one, i.e.
/// `Σ (r_i − r_{i−1}) · p_i` over points in ascending recall with `r_0 = 0`.
pub fn auprc(curve: &[CurvePoint]) -> Result<f64, EvalError> {
    if curve.is_empty() || curve.iter().any(|p| p.no_positives) {
        return Err(EvalError::NoPositives);
    }
    let mut points: Vec<(f64, f64)> = curve.iter().map(|p| (p.recall, p.precision)).collect();
    points.sort_by(|a, b| f64::total_cmp(&a.0, &b.0));
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision) in points {
        if recall > prev_recall {
            area += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
    }
    Ok(area)
}

/// Smallest coverage among curve points achieving at least the given recall,
/// or `None` when no point does.
pub fn coverage_at_recall(curve: &[CurvePoint], recall: f64) -> Option<f64> {
    curve
        .iter()
        .filter(|p| p.recall >= recall - 1e-9)
        .map(|p| p.coverage)
        .min_by(f64::total_cmp)
}

/// One curve with its area, for a single label view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEval {
    /// The view the curve was computed under.
    pub view: LabelView,
    /// Threshold sweep, descending threshold.
    pub curve: Vec<CurvePoint>,
    /// Area under the PR curve; absent when the view has no positives.
    pub auprc: Option<f64>,
}

fn class_eval(
    test: &Corpus,
    model: &ScoreModel,
    ctx: &ScoreContext<'_>,
    view: LabelView,
) -> Result<ClassEval, EvalError> {
    let curve = curve(test, model, ctx, view)?;
    let auprc = match auprc(&curve) {
        Ok(a) => Some(a),
        Err(EvalError::NoPositives) => None,
        Err(e) => return Err(e),
    };
    Ok(ClassEval { view, curve, auprc })
}

/// The classifier's operating point at a calibrated threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    /// The view the point was computed under.
    pub view: LabelView,
    /// Metrics at `τ̂`.
    pub point: CurvePoint,
    /// Recall target the threshold was calibrated for.
    pub epsilon: f64,
    /// Confidence budget of the calibration.
    pub delta: f64,
    /// Whether calibration found any feasible threshold.
    pub feasible: bool,
    /// Grouping keys shared between the calibration and test corpora. Empty
    /// for a sound split; non-empty is a leakage warning, not an error.
    pub shared_groups: Vec<String>,
}

/// Evaluate the classifier at a calibrated threshold.
///
/// The calibration artifact must come from the same model (fingerprints are
/// compared when recorded). Shared grouping keys between calibration and test
/// are reported in the result as a leakage warning.
pub fn threshold_point(
    test: &Corpus,
    model: &ScoreModel,
    ctx: &ScoreContext<'_>,
    calibration: &CalibrationReport,
    view: LabelView,
) -> Result<ThresholdPoint, EvalError> {
    if let Some(expected) = &calibration.model_fingerprint {
        let got = model.fingerprint();
        if *expected != got {
            return Err(EvalError::ModelMismatch {
                expected: expected.clone(),
                got,
            });
        }
    }
    let shared_groups: Vec<String> = calibration
        .groups
        .intersection(&test.provenance.groups)
        .cloned()
        .collect();
    let point = precision_recall(test, model, ctx, calibration.tau_hat, view)?;
    Ok(ThresholdPoint {
        view,
        point,
        epsilon: calibration.epsilon,
        delta: calibration.delta,
        feasible: calibration.feasible,
        shared_groups,
    })
}

/// Everything `evaluate` reports, serialized as `eval.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Corpus the report was computed on.
    pub corpus: String,
    /// Overall unsafe-view curve and area.
    pub overall: ClassEval,
    /// Per-type curves, for the types with at least one positive function.
    pub per_type: BTreeMap<u8, ClassEval>,
    /// Bug-view curve, when the corpus carries bug flags.
    pub bug: Option<ClassEval>,
    /// Operating points at the calibrated threshold, when one was supplied.
    pub threshold_points: Vec<ThresholdPoint>,
}

/// Compute the full evaluation report: overall, per-type, and bug curves
/// plus calibrated operating points.
pub fn eval_report(
    test: &Corpus,
    model: &ScoreModel,
    ctx: &ScoreContext<'_>,
    calibration: Option<&CalibrationReport>,
) -> Result<EvalReport, EvalError> {
    let overall = class_eval(test, model, ctx, LabelView::Unsafe)?;
    let mut per_type = BTreeMap::new();
    for j in 1..=14u8 {
        if test.functions.iter().any(|f| f.labels.contains(j)) {
            per_type.insert(j, class_eval(test, model, ctx, LabelView::Type(j))?);
        }
    }
    let has_bug_flags = test.functions.iter().all(|f| f.bug.is_some()) && !test.is_empty();
    let bug = if has_bug_flags {
        Some(class_eval(test, model, ctx, LabelView::Bug)?)
    } else {
        None
    };
    let mut threshold_points = Vec::new();
    if let Some(cal) = calibration {
        threshold_points.push(threshold_point(test, model, ctx, cal, LabelView::Unsafe)?);
        if has_bug_flags {
            threshold_points.push(threshold_point(test, model, ctx, cal, LabelView::Bug)?);
        }
    }
    Ok(EvalReport {
        corpus: test.name.clone(),
        overall,
        per_type,
        bug,
        threshold_points,
    })
}

/// Write every curve of a report as one flat CSV for plotting.
pub fn write_curves_csv<W: Write>(report: &EvalReport, mut out: W) -> Result<(), EvalError> {
    writeln!(
        out,
        "view,threshold,precision,recall,coverage,tp,fp,fn,predicted,positives,total_size,covered_size"
    )?;
    let mut write_curve = |class: &ClassEval| -> std::io::Result<()> {
        for p in &class.curve {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                class.view,
                p.threshold,
                p.precision,
                p.recall,
                p.coverage,
                p.tp,
                p.fp,
                p.false_negatives,
                p.predicted,
                p.positives,
                p.total_size,
                p.covered_size
            )?;
        }
        Ok(())
    };
    write_curve(&report.overall)?;
    for class in report.per_type.values() {
        write_curve(class)?;
    }
    if let Some(bug) = &report.bug {
        write_curve(bug)?;
    }
    Ok(())
}

/// [`write_curves_csv`] to a file path.
pub fn export_curves_csv(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    let mut buffer = Vec::new();
    write_curves_csv(report, &mut buffer)?;
    std::fs::write(path, buffer)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::{function, ins};
    use crate::corpus::{
        FunctionIndex, Provenance, Split, UnsafeLabels, UnsafeType,
    };
    use crate::features::ExpansionConfig;
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn labeled_sized(
        id: &str,
        instructions: usize,
        label: Option<u8>,
        bug: Option<bool>,
    ) -> LabeledFunction {
        let body: Vec<_> = (0..instructions)
            .map(|i| ins(0x1000 + i as u64, "nop", &[]))
            .collect();
        LabeledFunction {
            function: function(id, "bin", 0x1000, body),
            labels: match label {
                Some(t) => UnsafeLabels::from_types([UnsafeType::new(t).unwrap()]),
                None => UnsafeLabels::safe(),
            },
            bug,
        }
    }

    /// Six functions with labels [8], safe, [5], safe, [3], safe; bug flags
    /// T, F, F, F, T, F; shallow (= deep, no calls) sizes 10..=60.
    fn six_function_fixture() -> Corpus {
        let specs: [(Option<u8>, bool); 6] = [
            (Some(8), true),
            (None, false),
            (Some(5), false),
            (None, false),
            (Some(3), true),
            (None, false),
        ];
        let functions = specs
            .iter()
            .enumerate()
            .map(|(i, (label, bug))| {
                labeled_sized(&format!("f{i}"), (i + 1) * 10, *label, Some(*bug))
            })
            .collect();
        Corpus::new("six", Split::Test, functions, Provenance::default()).unwrap()
    }

    fn default_ctx<'a>(index: &'a FunctionIndex<'a>) -> ScoreContext<'a> {
        ScoreContext::new(index, ExpansionConfig::default())
    }

    #[test]
    fn six_function_fixture_bug_view_matches_hand_enumeration() {
        let corpus = six_function_fixture();
        let index = corpus.index();
        let ctx = default_ctx(&index);
        let point = precision_recall(&corpus, &ScoreModel::Oracle, &ctx, 0.5, LabelView::Bug)
            .unwrap();
        // Oracle predicts the three unsafe functions (sizes 10, 30, 50); the
        // two bug functions are among them.
        assert_eq!(point.tp, 2);
        assert_eq!(point.fp, 1);
        assert_eq!(point.false_negatives, 0);
        assert_eq!(point.predicted, 3);
        assert_eq!(point.positives, 2);
        assert!((point.precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(point.recall, 1.0);
        assert_eq!(point.total_size, 210);
        assert_eq!(point.covered_size, 90);
        assert!((point.coverage - 3.0 / 7.0).abs() < 1e-12);
        assert!(!point.no_predictions);
        assert!(!point.no_positives);
    }

    #[test]
    fn oracle_curve_is_perfect() {
        let corpus = six_function_fixture();
        let index = corpus.index();
        let ctx = default_ctx(&index);
        let curve = curve(&corpus, &ScoreModel::Oracle, &ctx, LabelView::Unsafe).unwrap();
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[0].threshold, 1.0);
        assert_eq!(curve[0].precision, 1.0);
        assert_eq!(curve[0].recall, 1.0);
        assert_eq!(curve[1].threshold, 0.0);
        assert_eq!(curve[1].recall, 1.0);
        assert!((curve[1].precision - 0.5).abs() < 1e-12);
        assert_eq!(auprc(&curve).unwrap(), 1.0);
    }

    #[test]
    fn two_point_step_area_is_exact() {
        let mk = |threshold: f64, precision: f64, recall: f64| CurvePoint {
            threshold,
            precision,
            recall,
            coverage: 0.0,
            tp: 0,
            fp: 0,
            false_negatives: 0,
            predicted: 1,
            positives: 1,
            total_size: 0,
            covered_size: 0,
            no_predictions: false,
            no_positives: false,
        };
        let curve = vec![mk(0.9, 1.0, 0.5), mk(0.1, 0.5, 1.0)];
        assert!((auprc(&curve).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn empty_prediction_set_pins_precision_with_flag() {
        let corpus = six_function_fixture();
        let index = corpus.index();
        let ctx = default_ctx(&index);
        let point = precision_recall(
            &corpus,
            &ScoreModel::ExternalCall,
            &ctx,
            0.5,
            LabelView::Unsafe,
        )
        .unwrap();
        // No function calls externally, so nothing is predicted.
        assert!(point.no_predictions);
        assert_eq!(point.precision, 1.0);
        assert_eq!(point.recall, 0.0);
        assert_eq!(point.coverage, 0.0);
    }

    #[test]
    fn predict_everything_recovers_prevalence() {
        let corpus = six_function_fixture();
        let index = corpus.index();
        let ctx = default_ctx(&index);
        let point =
            precision_recall(&corpus, &ScoreModel::Oracle, &ctx, 0.0, LabelView::Unsafe).unwrap();
        assert_eq!(point.predicted, 6);
        assert_eq!(point.recall, 1.0);
        assert_eq!(point.coverage, 1.0);
        assert!((point.precision - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bug_view_requires_flags() {
        let functions = vec![labeled_sized("a", 3, Some(2), None)];
        let corpus = Corpus::new("unflagged", Split::Test, functions, Provenance::default())
            .unwrap();
        let index = corpus.index();
        let ctx = default_ctx(&index);
        assert!(matches!(
            precision_recall(&corpus, &ScoreModel::Oracle, &ctx, 0.5, LabelView::Bug),
            Err(EvalError::NoBugLabels(1))
        ));
    }

    #[test]
    fn view_parsing_round_trips() {
        assert_eq!(LabelView::parse("unsafe").unwrap(), LabelView::Unsafe);
        assert_eq!(LabelView::parse("bug").unwrap(), LabelView::Bug);
        assert_eq!(LabelView::parse("type:8").unwrap(), LabelView::Type(8));
        for bad in ["type:0", "type:15", "type:x", "Unsafe", ""] {
            assert!(LabelView::parse(bad).is_err(), "{bad:?} should not parse");
        }
        let json = serde_json::to_string(&LabelView::Type(3)).unwrap();
        assert_eq!(json, "\"type:3\"");
        let back: LabelView = serde_json::from_str(&json).unwrap();
        assert_eq!(back, LabelView::Type(3));
    }

    #[test]
    fn metrics_match_brute_force_on_random_corpora() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..50 {
            let n = 1 + (rng.next_u64() % 12) as usize;
            let functions: Vec<LabeledFunction> = (0..n)
                .map(|i| {
                    let label = match rng.next_u64() % 3 {
                        0 => None,
                        1 => Some(8),
                        _ => Some(2),
                    };
                    let bug = label.is_some() && rng.next_u64() % 2 == 0;
                    labeled_sized(
                        &format!("f{trial}_{i}"),
                        1 + (rng.next_u64() % 9) as usize,
                        label,
                        Some(bug),
                    )
                })
                .collect();
            let corpus =
                Corpus::new("random", Split::Test, functions, Provenance::default()).unwrap();
            let model = ScoreModel::Random { seed: trial };
            let index = corpus.index();
            let ctx = default_ctx(&index);
            let tau = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            for view in [LabelView::Unsafe, LabelView::Type(8), LabelView::Bug] {
                let got = precision_recall(&corpus, &model, &ctx, tau, view).unwrap();

                // Independent re-derivation: raw filters and integer sums.
                let mut tp = 0u64;
                let mut predicted = 0u64;
                let mut positives = 0u64;
                let mut total = 0u64;
                let mut covered = 0u64;
                for f in &corpus.functions {
                    let u = model.score_labeled(f, &ctx).unwrap().unsafeness();
                    let hit = u >= tau;
                    let pos = match view {
                        LabelView::Unsafe => f.labels.is_unsafe(),
                        LabelView::Type(j) => f.labels.contains(j),
                        LabelView::Bug => f.bug == Some(true),
                    };
                    let size = f.function.instructions.len() as u64;
                    total += size;
                    if hit {
                        predicted += 1;
                        covered += size;
                    }
                    if pos {
                        positives += 1;
                        if hit {
                            tp += 1;
                        }
                    }
                }
                assert_eq!(got.tp, tp);
                assert_eq!(got.predicted, predicted);
                assert_eq!(got.positives, positives);
                assert_eq!(got.covered_size, covered);
                assert_eq!(got.total_size, total);
                let want_p = if predicted == 0 { 1.0 } else { tp as f64 / predicted as f64 };
                let want_r = if positives == 0 { 1.0 } else { tp as f64 / positives as f64 };
                let want_c = if total == 0 { 0.0 } else { covered as f64 / total as f64 };
                assert!((got.precision - want_p).abs() <= 1e-12);
                assert!((got.recall - want_r).abs() <= 1e-12);
                assert!((got.coverage - want_c).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn curve_recall_is_monotone_in_descending_threshold() {
        let corpus = six_function_fixture();
        let index = corpus.index();
        let ctx = default_ctx(&index);
        let model = ScoreModel::Random { seed: 5 };
        let curve = curve(&corpus, &model, &ctx, LabelView::Unsafe).unwrap();
        for pair in curve.windows(2) {
            assert!(pair[1].threshold < pair[0].threshold);
            assert!(pair[1].recall >= pair[0].recall);
            assert!(pair[1].coverage >= pair[0].coverage);
        }
    }

    fn feasible_report(tau_hat: f64) -> CalibrationReport {
        CalibrationReport {
            tau_hat,
            epsilon: 0.1,
            delta: 0.001,
            calibration_size: 100,
            feasible: tau_hat > 0.0,
            candidates: Vec::new(),
            guarantee: String::new(),
            model_fingerprint: None,
            groups: BTreeSet::new(),
        }
    }

    #[test]
    fn threshold_point_at_oracle_tau_recovers_all_bugs() {
        let corpus = six_function_fixture();
        let index = corpus.index();
        let ctx = default_ctx(&index);
        let report = feasible_report(0.8);
        let tp = threshold_point(&corpus, &ScoreModel::Oracle, &ctx, &report, LabelView::Bug)
            .unwrap();
        assert_eq!(tp.point.recall, 1.0);
        assert_eq!(tp.epsilon, 0.1);
        assert!(tp.shared_groups.is_empty());
    }

    #[test]
    fn threshold_point_infeasible_fallback_accepts_everything() {
        let corpus = six_function_fixture();
        let index = corpus.index();
        let ctx = default_ctx(&index);
        let report = feasible_report(0.0);
        let tp = threshold_point(&corpus, &ScoreModel::Oracle, &ctx, &report, LabelView::Bug)
            .unwrap();
        assert_eq!(tp.point.coverage, 1.0);
        assert_eq!(tp.point.recall, 1.0);
        assert!(!tp.feasible);
    }

    #[test]
    fn threshold_point_reports_shared_groups_and_checks_fingerprint() {
        let mut corpus = six_function_fixture();
        corpus.provenance.groups = BTreeSet::from(["pkg-a".to_owned(), "pkg-b".to_owned()]);
        let index = corpus.index();
        let ctx = default_ctx(&index);

        let mut report = feasible_report(0.5);
        report.groups = BTreeSet::from(["pkg-b".to_owned(), "pkg-c".to_owned()]);
        let tp = threshold_point(&corpus, &ScoreModel::Oracle, &ctx, &report, LabelView::Unsafe)
            .unwrap();
        assert_eq!(tp.shared_groups, vec!["pkg-b".to_owned()]);

        report.model_fingerprint = Some("not-the-oracle".into());
        assert!(matches!(
            threshold_point(&corpus, &ScoreModel::Oracle, &ctx, &report, LabelView::Unsafe),
            Err(EvalError::ModelMismatch { .. })
        ));
    }

    #[test]
    fn report_collects_views_and_exports_csv() {
        let corpus = six_function_fixture();
        let index = corpus.index();
        let ctx = default_ctx(&index);
        let report = feasible_report(0.9);
        let eval =
            eval_report(&corpus, &ScoreModel::Oracle, &ctx, Some(&report)).unwrap();
        assert_eq!(eval.overall.auprc, Some(1.0));
        let types: Vec<u8> = eval.per_type.keys().copied().collect();
        assert_eq!(types, vec![3, 5, 8]);
        assert!(eval.bug.is_some());
        assert_eq!(eval.threshold_points.len(), 2);

        let mut csv = Vec::new();
        write_curves_csv(&eval, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "view,threshold,precision,recall,coverage,tp,fp,fn,predicted,positives,total_size,covered_size"
        );
        let rows: Vec<&str> = lines.collect();
        // Overall (2 points) + three type curves (2 each) + bug (2).
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().any(|r| r.starts_with("type:8,")));
        assert!(rows.iter().any(|r| r.starts_with("bug,")));
    }

    #[test]
    fn coverage_at_recall_takes_cheapest_point() {
        let corpus = six_function_fixture();
        let index = corpus.index();
        let ctx = default_ctx(&index);
        let curve = curve(&corpus, &ScoreModel::Oracle, &ctx, LabelView::Unsafe).unwrap();
        // Recall 1 is achieved at both points; the oracle point covers 90 of
        // 210 instructions, the accept-everything point covers all of them.
        let cov = coverage_at_recall(&curve, 1.0).unwrap();
        assert!((cov - 90.0 / 210.0).abs() < 1e-12);
        assert_eq!(coverage_at_recall(&[], 0.5), None);
    }
}
