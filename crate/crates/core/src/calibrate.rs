//! Distribution-free calibration of the unsafeness decision threshold.
//!
//! Flagging a function as unsafe-relevant uses the rule `1 − ŝ(x, 0) ≥ τ`.
//! Picking τ by eye trades recall for precision invisibly; instead, the
//! threshold is calibrated so that, with probability at least `1 − δ` over
//! the draw of the calibration set, the rule catches at least a `1 − ε`
//! fraction of unsafe functions from the same distribution.
//!
//! The machinery is an exact binomial tail bound: for `k` observed misses
//! among `m` calibration scores, [`cp_upper`] returns the smallest miss
//! probability that the data cannot rule out at confidence `1 − δ`. The
//! threshold scan ([`pac_threshold`]) walks candidate thresholds upward and
//! keeps the largest one whose bound still sits below ε. Because the miss
//! count only changes at observed score values, scanning those values is
//! exactly as good as scanning a dense grid.

use std::collections::BTreeSet;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::model::{ScoreContext, ScoreModel};

/// Errors raised during calibration.
#[derive(Debug, Error)]
pub enum CalibrateError {
    /// The calibration corpus contained no unsafe function.
    #[error("empty calibration set: no unsafe functions to calibrate on")]
    EmptyCalibrationSet,
    /// A parameter left its domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// Scoring the calibration corpus failed.
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Exact binomial CDF `P[X ≤ k]` for `X ~ Binomial(m, theta)`.
///
/// Evaluated through the regularized incomplete beta function, which stays
/// accurate to better than 1e-12 absolute error for `m` up to a million —
/// far beyond what naive summation of `m` terms delivers.
///
/// # Panics
/// When `k > m`, `m == 0`, or `theta` is outside `[0, 1]`.
pub fn binomial_cdf(k: u64, m: u64, theta: f64) -> f64 {
    assert!(m >= 1, "binomial_cdf: m must be at least 1");
    assert!(k <= m, "binomial_cdf: k must not exceed m");
    assert!(
        (0.0..=1.0).contains(&theta),
        "binomial_cdf: theta must lie in [0, 1]"
    );
    if k == m || theta == 0.0 {
        return 1.0;
    }
    if theta == 1.0 {
        return 0.0; // k < m here
    }
    // P[X ≤ k] = I_{1-θ}(m-k, k+1)
    statrs::function::beta::beta_reg((m - k) as f64, (k + 1) as f64, 1.0 - theta)
}

/// Width at which the bisection of [`cp_upper`] stops. Chosen so that the
/// residual `|F(k; m, θ̄) − δ|` stays below 1e-9 even where the CDF is
/// steepest at the scales this crate works at (m up to 1e6).
const BISECTION_TOLERANCE: f64 = 1e-14;

/// Exact upper confidence bound for a binomial proportion.
///
/// Returns the smallest `θ̄` such that `P[X ≤ k] ≤ δ` under
/// `X ~ Binomial(m, θ̄)` — the classic exact upper bound: any true miss
/// probability above `θ̄` would make the observed count `k` or fewer too
/// unlikely. When no `θ` satisfies the condition (`k = m`), the bound is 1.
///
/// # Panics
/// When `k > m`, `m == 0`, or `delta` is outside `(0, 1)`.
pub fn cp_upper(k: u64, m: u64, delta: f64) -> f64 {
    assert!(m >= 1, "cp_upper: m must be at least 1");
    assert!(k <= m, "cp_upper: k must not exceed m");
    assert!(
        delta > 0.0 && delta < 1.0,
        "cp_upper: delta must lie in (0, 1)"
    );
    if k == m {
        return 1.0;
    }
    // F(k; m, ·) falls continuously and strictly from 1 at θ=0 to 0 at θ=1,
    // so bisection over the bracket [lo, hi] with F(lo) > δ ≥ F(hi) converges
    // to the crossing point.
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for _ in 0..200 {
        if hi - lo <= BISECTION_TOLERANCE {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if binomial_cdf(k, m, mid) <= delta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// One scanned candidate threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    /// Candidate threshold value.
    pub tau: f64,
    /// Strict misses at this candidate: calibration scores below `tau`.
    pub misses: u64,
    /// Upper confidence bound on the miss probability.
    pub bound: f64,
    /// Whether the candidate satisfied `bound ≤ ε`.
    pub retained: bool,
}

/// Outcome of threshold calibration, serialized as `calibration.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// The calibrated threshold `τ̂` (0 when infeasible).
    pub tau_hat: f64,
    /// Target miss fraction.
    pub epsilon: f64,
    /// Confidence budget.
    pub delta: f64,
    /// Number of unsafe calibration functions used.
    pub calibration_size: u64,
    /// Whether any candidate satisfied the bound.
    pub feasible: bool,
    /// Audit trail: every candidate scanned, in scan order, ending at the
    /// first violation.
    pub candidates: Vec<CandidateRow>,
    /// Human-readable statement of what the threshold guarantees.
    pub guarantee: String,
    /// Fingerprint of the model the scores came from, for compatibility
    /// checks downstream.
    #[serde(default)]
    pub model_fingerprint: Option<String>,
    /// Grouping keys of the calibration corpus, for split-overlap checks.
    #[serde(default)]
    pub groups: BTreeSet<String>,
}

fn validate_eps_delta(epsilon: f64, delta: f64) -> Result<(), CalibrateError> {
    if !epsilon.is_finite() || epsilon <= 0.0 || epsilon > 1.0 {
        return Err(CalibrateError::InvalidParameter(format!(
            "epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    if !delta.is_finite() || delta <= 0.0 || delta >= 1.0 {
        return Err(CalibrateError::InvalidParameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    Ok(())
}

/// Calibrate the threshold from raw unsafeness scores of unsafe functions.
///
/// Candidates are `0`, every distinct observed score in ascending order, and
/// `1 + ulp` (one step above any achievable score). For each candidate τ, the
/// miss count `k(τ)` is the number of scores strictly below τ; the candidate
/// is retained while `cp_upper(k, m, δ) ≤ ε`, and the scan stops at the first
/// violation — valid because `k(τ)` is non-decreasing in τ, so feasibility is
/// monotone. `τ̂` is the largest retained candidate; when even τ = 0 fails,
/// the report carries `tau_hat = 0` and `feasible = false`.
pub fn pac_threshold_from_scores(
    scores: &[f64],
    epsilon: f64,
    delta: f64,
) -> Result<CalibrationReport, CalibrateError> {
    validate_eps_delta(epsilon, delta)?;
    if scores.is_empty() {
        return Err(CalibrateError::EmptyCalibrationSet);
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite() || **s < 0.0 || **s > 1.0) {
        return Err(CalibrateError::InvalidParameter(format!(
            "unsafeness scores must lie in [0, 1], got {bad}"
        )));
    }
    let m = scores.len() as u64;
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut grid: Vec<f64> = Vec::with_capacity(sorted.len() + 2);
    grid.push(0.0);
    grid.extend(sorted.iter().copied());
    grid.push(1.0 + f64::EPSILON);
    grid.dedup();

    let mut rows = Vec::new();
    let mut tau_hat = 0.0f64;
    let mut feasible = false;
    for tau in grid {
        let misses = sorted.partition_point(|s| *s < tau) as u64;
        let bound = cp_upper(misses, m, delta);
        let retained = bound <= epsilon;
        rows.push(CandidateRow {
            tau,
            misses,
            bound,
            retained,
        });
        if retained {
            feasible = true;
            tau_hat = tau_hat.max(tau);
        } else {
            break;
        }
    }

    let guarantee = format!(
        "With probability at least {:.6} over the calibration draw, a function \
         whose label set is not {{0}} satisfies 1 - s(x, 0) >= {tau_hat:.6} with \
         probability at least {:.6}.",
        1.0 - delta,
        1.0 - epsilon,
    );
    Ok(CalibrationReport {
        tau_hat,
        epsilon,
        delta,
        calibration_size: m,
        feasible,
        candidates: rows,
        guarantee,
        model_fingerprint: None,
        groups: BTreeSet::new(),
    })
}

/// Calibrate the threshold on a corpus, using the model's unsafeness scores
/// of the corpus's unsafe-labeled functions.
pub fn pac_threshold(
    cal: &Corpus,
    model: &ScoreModel,
    ctx: &ScoreContext<'_>,
    epsilon: f64,
    delta: f64,
) -> Result<CalibrationReport, CalibrateError> {
    validate_eps_delta(epsilon, delta)?;
    let mut scores = Vec::new();
    for lf in &cal.functions {
        if lf.labels.is_unsafe() {
            scores.push(model.score_labeled(lf, ctx)?.unsafeness());
        }
    }
    if scores.is_empty() {
        return Err(CalibrateError::EmptyCalibrationSet);
    }
    let mut report = pac_threshold_from_scores(&scores, epsilon, delta)?;
    report.model_fingerprint = Some(model.fingerprint());
    report.groups = cal.provenance.groups.clone();
    Ok(report)
}

/// Synthetic unsafeness distribution with a known law, used to check the
/// calibration guarantee by simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum UnsafenessLaw {
    /// Scores uniform on `[0, 1]`.
    Uniform,
    /// Two-point mixture: `low` with probability `weight_low`, else `high`.
    TwoPoint {
        /// Lower support point.
        low: f64,
        /// Upper support point.
        high: f64,
        /// Probability mass on `low`.
        weight_low: f64,
    },
    /// Beta-distributed scores.
    Beta {
        /// First shape parameter.
        alpha: f64,
        /// Second shape parameter.
        beta: f64,
    },
}

impl UnsafenessLaw {
    fn validate(&self) -> Result<(), CalibrateError> {
        let bad = |msg: String| Err(CalibrateError::InvalidParameter(msg));
        match *self {
            UnsafenessLaw::Uniform => Ok(()),
            UnsafenessLaw::TwoPoint { low, high, weight_low } => {
                if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low > high {
                    return bad(format!("two-point support must satisfy 0 <= low <= high <= 1, got ({low}, {high})"));
                }
                if !(0.0..=1.0).contains(&weight_low) {
                    return bad(format!("weight_low must lie in [0, 1], got {weight_low}"));
                }
                Ok(())
            }
            UnsafenessLaw::Beta { alpha, beta } => {
                if alpha <= 0.0 || beta <= 0.0 || !alpha.is_finite() || !beta.is_finite() {
                    return bad(format!("beta shapes must be positive, got ({alpha}, {beta})"));
                }
                Ok(())
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        use rand::Rng;
        match *self {
            UnsafenessLaw::Uniform => rng.random::<f64>(),
            UnsafenessLaw::TwoPoint { low, high, weight_low } => {
                if rng.random::<f64>() < weight_low {
                    low
                } else {
                    high
                }
            }
            UnsafenessLaw::Beta { alpha, beta } => {
                use rand_distr::Distribution;
                let dist = rand_distr::Beta::new(alpha, beta).expect("validated shapes");
                dist.sample(rng)
            }
        }
    }

    /// Survival function `P[S ≥ tau]` — the exact recall of the rule
    /// `unsafeness ≥ tau` under this law.
    pub fn survival(&self, tau: f64) -> f64 {
        match *self {
            UnsafenessLaw::Uniform => (1.0 - tau).clamp(0.0, 1.0),
            UnsafenessLaw::TwoPoint { low, high, weight_low } => {
                let mut p = 0.0;
                if low >= tau {
                    p += weight_low;
                }
                if high >= tau {
                    p += 1.0 - weight_low;
                }
                p
            }
            UnsafenessLaw::Beta { alpha, beta } => {
                if tau <= 0.0 {
                    1.0
                } else if tau >= 1.0 {
                    0.0
                } else {
                    1.0 - statrs::function::beta::beta_reg(alpha, beta, tau)
                }
            }
        }
    }
}

/// Monte-Carlo check of the calibration guarantee, `verify-guarantee` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeCheck {
    /// Simulated calibration draws.
    pub trials: u64,
    /// Draws whose calibrated threshold under-covered: true recall < 1 − ε.
    pub violations: u64,
    /// `violations / trials`; the guarantee promises this stays ≲ δ.
    pub violation_rate: f64,
    /// Mean true recall of the calibrated rule across draws.
    pub mean_recall: f64,
    /// Mean calibrated threshold across draws.
    pub mean_tau: f64,
    /// Parameters echoed for the record.
    pub epsilon: f64,
    /// Confidence budget echoed.
    pub delta: f64,
    /// Calibration set size per draw.
    pub n_cal: u64,
}

/// Simulate calibration draws from a known law and count guarantee
/// violations.
///
/// Each trial draws `n_cal` unsafeness scores, calibrates `τ̂`, and evaluates
/// the exact recall `P[S ≥ τ̂]` under the law. A violation is a trial whose
/// recall falls below `1 − ε`; across trials the violation rate should stay
/// within sampling error of δ or below.
pub fn verify_guarantee(
    law: UnsafenessLaw,
    n_cal: usize,
    epsilon: f64,
    delta: f64,
    trials: u64,
    seed: u64,
) -> Result<GuaranteeCheck, CalibrateError> {
    validate_eps_delta(epsilon, delta)?;
    law.validate()?;
    if n_cal == 0 {
        return Err(CalibrateError::InvalidParameter(
            "n_cal must be at least 1".into(),
        ));
    }
    if trials == 0 {
        return Err(CalibrateError::InvalidParameter(
            "trials must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0u64;
    let mut recall_sum = 0.0f64;
    let mut tau_sum = 0.0f64;
    let mut scores = vec![0.0f64; n_cal];
    for _ in 0..trials {
        for s in scores.iter_mut() {
            *s = law.sample(&mut rng);
        }
        let report = pac_threshold_from_scores(&scores, epsilon, delta)?;
        let recall = law.survival(report.tau_hat);
        recall_sum += recall;
        tau_sum += report.tau_hat;
        if recall < 1.0 - epsilon {
            violations += 1;
        }
    }
    Ok(GuaranteeCheck {
        trials,
        violations,
        violation_rate: violations as f64 / trials as f64,
        mean_recall: recall_sum / trials as f64,
        mean_tau: tau_sum / trials as f64,
        epsilon,
        delta,
        n_cal: n_cal as u64,
    })
}
