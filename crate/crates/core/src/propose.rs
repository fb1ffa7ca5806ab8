//! Assemble the calibrated unsafe classifier into ranked proposal sets,
//! export fuzzer focus-function lists, and analyze fuzz-campaign outcomes.
//!
//! A proposal set for a binary is exactly `{x : unsafeness(x) ≥ τ̂}`, ranked
//! by unsafeness with function-id tie-breaking so output files are stable.
//! Focus lists are plain newline-separated symbol names, one file per binary,
//! tied together by a `campaign.json` manifest that is written atomically
//! once every list is on disk.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::CalibrationReport;
use crate::corpus::{Corpus, FunctionRecord};
use crate::features::deep_size;
use crate::model::{ModelError, ScoreContext, ScoreModel};

/// Errors raised while assembling or analyzing proposals.
#[derive(Debug, Error)]
pub enum ProposeError {
    /// Model and calibration artifact disagree about the model identity.
    #[error(
        "calibration is bound to model fingerprint {expected}, but the \
         supplied model has fingerprint {got}"
    )]
    ConfigMismatch {
        /// Fingerprint recorded in the calibration artifact.
        expected: String,
        /// Fingerprint of the supplied model.
        got: String,
    },
    /// A proposal member cannot be written as a focus-list line.
    #[error("function id {0:?} is not a linkable symbol name")]
    UnmappableSymbol(String),
    /// A binary id that cannot name a focus-list file.
    #[error("binary id {0:?} cannot name a focus-list file; allowed: [A-Za-z0-9._-]")]
    InvalidBinaryId(String),
    /// A fuzz target without exactly one treatment and one baseline record.
    #[error("fuzz target {0:?} lacks a paired treatment/baseline record")]
    UnpairedTarget(String),
    /// A fuzz-outcome line that does not parse.
    #[error("malformed fuzz outcome on line {line}: {detail}")]
    MalformedOutcome {
        /// 1-based input line.
        line: usize,
        /// Parser message.
        detail: String,
    },
    /// Scoring failed.
    #[error(transparent)]
    Model(#[from] ModelError),
    /// Filesystem failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One ranked proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalMember {
    /// Proposed function.
    pub function_id: String,
    /// Its unsafeness at proposal time.
    pub unsafeness: f64,
}

/// All proposals for one binary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalSet {
    /// The binary the proposals belong to.
    pub binary_id: String,
    /// Members with `unsafeness ≥ τ̂`, sorted by unsafeness descending and
    /// function id ascending.
    pub members: Vec<ProposalMember>,
    /// Threshold the membership rule used.
    pub tau_hat: f64,
    /// Recall target of the calibration that produced `tau_hat`.
    pub epsilon: f64,
    /// Confidence budget of that calibration.
    pub delta: f64,
    /// Deep-size-weighted fraction of this binary's instructions inside the
    /// proposal set.
    pub estimated_coverage: f64,
    /// True exactly when no function cleared the threshold; such binaries
    /// are skipped downstream.
    pub skip: bool,
}

fn check_fingerprint(
    model: &ScoreModel,
    calibration: &CalibrationReport,
) -> Result<(), ProposeError> {
    if let Some(expected) = &calibration.model_fingerprint {
        let got = model.fingerprint();
        if *expected != got {
            return Err(ProposeError::ConfigMismatch {
                expected: expected.clone(),
                got,
            });
        }
    }
    Ok(())
}

struct ScoredRecord<'a> {
    function: &'a FunctionRecord,
    unsafeness: f64,
    deep: u64,
}

fn assemble(
    per_binary: BTreeMap<&str, Vec<ScoredRecord<'_>>>,
    calibration: &CalibrationReport,
) -> Vec<ProposalSet> {
    let mut sets = Vec::with_capacity(per_binary.len());
    for (binary_id, scored) in &per_binary {
        let total: u64 = scored.iter().map(|s| s.deep).sum();
        let mut members: Vec<&ScoredRecord<'_>> = scored
            .iter()
            .filter(|s| s.unsafeness >= calibration.tau_hat)
            .collect();
        members.sort_by(|a, b| {
            f64::total_cmp(&b.unsafeness, &a.unsafeness)
                .then_with(|| a.function.function_id.cmp(&b.function.function_id))
        });
        let covered: u64 = members.iter().map(|s| s.deep).sum();
        sets.push(ProposalSet {
            binary_id: (*binary_id).to_owned(),
            members: members
                .iter()
                .map(|s| ProposalMember {
                    function_id: s.function.function_id.clone(),
                    unsafeness: s.unsafeness,
                })
                .collect(),
            tau_hat: calibration.tau_hat,
            epsilon: calibration.epsilon,
            delta: calibration.delta,
            estimated_coverage: if total == 0 {
                0.0
            } else {
                covered as f64 / total as f64
            },
            skip: members.is_empty(),
        });
    }
    sets
}

/// Classify a labeled corpus into per-binary proposal sets, one per distinct
/// `binary_id`, in binary-id order.
///
/// The calibration artifact must have been computed from the same model;
/// recorded fingerprints are compared and a mismatch is an error.
pub fn classify(
    corpus: &Corpus,
    model: &ScoreModel,
    calibration: &CalibrationReport,
    ctx: &ScoreContext<'_>,
) -> Result<Vec<ProposalSet>, ProposeError> {
    check_fingerprint(model, calibration)?;
    let mut per_binary: BTreeMap<&str, Vec<ScoredRecord<'_>>> = BTreeMap::new();
    for f in &corpus.functions {
        let scores = model.score_labeled(f, ctx)?;
        per_binary
            .entry(f.function.binary_id.as_str())
            .or_default()
            .push(ScoredRecord {
                function: &f.function,
                unsafeness: scores.unsafeness(),
                deep: deep_size(&f.function, ctx.index, &ctx.config).deep,
            });
    }
    Ok(assemble(per_binary, calibration))
}

/// Classify raw (unlabeled) function records. The oracle model cannot be
/// used here; it needs labels.
pub fn classify_records(
    records: &[FunctionRecord],
    model: &ScoreModel,
    calibration: &CalibrationReport,
    ctx: &ScoreContext<'_>,
) -> Result<Vec<ProposalSet>, ProposeError> {
    check_fingerprint(model, calibration)?;
    let mut per_binary: BTreeMap<&str, Vec<ScoredRecord<'_>>> = BTreeMap::new();
    for f in records {
        let scores = model.score(f, ctx)?;
        per_binary
            .entry(f.binary_id.as_str())
            .or_default()
            .push(ScoredRecord {
                function: f,
                unsafeness: scores.unsafeness(),
                deep: deep_size(f, ctx.index, &ctx.config).deep,
            });
    }
    Ok(assemble(per_binary, calibration))
}

fn check_symbol(id: &str) -> Result<(), ProposeError> {
    if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Err(ProposeError::UnmappableSymbol(id.to_owned()));
    }
    Ok(())
}

fn focus_file_name(binary_id: &str) -> Result<String, ProposeError> {
    let ok = !binary_id.is_empty()
        && binary_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if !ok {
        return Err(ProposeError::InvalidBinaryId(binary_id.to_owned()));
    }
    Ok(format!("{binary_id}.txt"))
}

/// Write one proposal set as a focus-function list: one symbol per line in
/// rank order, an empty file for a skipped binary. Symbols pass through
/// verbatim — no demangling.
pub fn export_focus(set: &ProposalSet, path: &Path) -> Result<(), ProposeError> {
    let mut out = String::new();
    for member in &set.members {
        check_symbol(&member.function_id)?;
        out.push_str(&member.function_id);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One binary's entry in the campaign manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignEntry {
    /// Focus-list path relative to the manifest.
    pub focus_list: String,
    /// Whether the binary was skipped (empty proposal set).
    pub skip: bool,
    /// Number of proposed functions.
    pub members: u64,
}

/// Manifest tying binaries to their focus lists, serialized as
/// `campaign.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignManifest {
    /// Per-binary entries, keyed by binary id.
    pub binaries: BTreeMap<String, CampaignEntry>,
}

/// Export a whole campaign: `focus/<binary_id>.txt` per set, then the
/// `campaign.json` manifest.
///
/// The manifest is staged to a temporary file and renamed into place only
/// after every focus list has been written, so a manifest on disk always
/// describes complete lists.
pub fn export_campaign(
    sets: &[ProposalSet],
    dir: &Path,
) -> Result<CampaignManifest, ProposeError> {
    let focus_dir = dir.join("focus");
    std::fs::create_dir_all(&focus_dir)?;
    let mut manifest = CampaignManifest::default();
    for set in sets {
        let file_name = focus_file_name(&set.binary_id)?;
        export_focus(set, &focus_dir.join(&file_name))?;
        manifest.binaries.insert(
            set.binary_id.clone(),
            CampaignEntry {
                focus_list: format!("focus/{file_name}"),
                skip: set.skip,
                members: set.members.len() as u64,
            },
        );
    }
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    let staged: PathBuf = dir.join("campaign.json.tmp");
    std::fs::write(&staged, &bytes)?;
    std::fs::rename(&staged, dir.join("campaign.json"))?;
    Ok(manifest)
}

/// Which side of the paired experiment a fuzz record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FuzzArm {
    /// Fuzzing with the proposal-set focus functions.
    Treatment,
    /// Fuzzing without them.
    Baseline,
}

/// One arm of one fuzz target, one line of `fuzz_outcomes.jsonl`.
///
/// Each target contributes two records — one per arm — and carries its
/// unsafe-region hit count in the field matching its arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzOutcome {
    /// Fuzz target (binary or harness id).
    pub target: String,
    /// Which arm this record describes.
    pub arm: FuzzArm,
    /// Errors found, by kind.
    #[serde(default)]
    pub errors: BTreeMap<String, u64>,
    /// Wall time spent on this arm.
    pub seconds: f64,
    /// Unsafe-region hits of the treatment arm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hits_treatment: Option<u64>,
    /// Unsafe-region hits of the baseline arm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hits_baseline: Option<u64>,
}

/// Read `fuzz_outcomes.jsonl`.
pub fn ingest_fuzz_outcomes<R: BufRead>(reader: R) -> Result<Vec<FuzzOutcome>, ProposeError> {
    let mut outcomes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let outcome: FuzzOutcome =
            serde_json::from_str(&line).map_err(|e| ProposeError::MalformedOutcome {
                line: i + 1,
                detail: e.to_string(),
            })?;
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

/// Aggregated campaign comparison between the focused (treatment) and
/// unfocused (baseline) arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzSummary {
    /// Paired targets analyzed.
    pub targets: u64,
    /// Errors found by the treatment arm, by kind.
    pub errors_treatment: BTreeMap<String, u64>,
    /// Errors found by the baseline arm, by kind.
    pub errors_baseline: BTreeMap<String, u64>,
    /// Total treatment errors.
    pub total_errors_treatment: u64,
    /// Total baseline errors.
    pub total_errors_baseline: u64,
    /// Total treatment wall time.
    pub seconds_treatment: f64,
    /// Total baseline wall time.
    pub seconds_baseline: f64,
    /// `1 − seconds_treatment / seconds_baseline`; 0 when the baseline spent
    /// no time.
    pub time_saved: f64,
    /// Sum over targets of `(hits_treatment + 1) / (hits_baseline + 1)`.
    pub normalized_hit_sum: f64,
    /// `normalized_hit_sum / targets`.
    pub mean_normalized_hit: f64,
}

/// Pair up treatment/baseline records per target and aggregate the campaign.
///
/// Every target must appear exactly once per arm; anything else is an
/// [`ProposeError::UnpairedTarget`]. A missing hit-count field counts as 0,
/// so the per-target normalized hit `(hits_t + 1) / (hits_b + 1)` is 1 when
/// neither arm hit an unsafe region.
pub fn analyze_fuzz(outcomes: &[FuzzOutcome]) -> Result<FuzzSummary, ProposeError> {
    let mut pairs: BTreeMap<&str, (Option<&FuzzOutcome>, Option<&FuzzOutcome>)> = BTreeMap::new();
    for outcome in outcomes {
        let slot = pairs.entry(outcome.target.as_str()).or_default();
        let arm_slot = match outcome.arm {
            FuzzArm::Treatment => &mut slot.0,
            FuzzArm::Baseline => &mut slot.1,
        };
        if arm_slot.is_some() {
            return Err(ProposeError::UnpairedTarget(outcome.target.clone()));
        }
        *arm_slot = Some(outcome);
    }

    let mut summary = FuzzSummary {
        targets: 0,
        errors_treatment: BTreeMap::new(),
        errors_baseline: BTreeMap::new(),
        total_errors_treatment: 0,
        total_errors_baseline: 0,
        seconds_treatment: 0.0,
        seconds_baseline: 0.0,
        time_saved: 0.0,
        normalized_hit_sum: 0.0,
        mean_normalized_hit: 0.0,
    };
    for (target, (treatment, baseline)) in pairs {
        let (Some(t), Some(b)) = (treatment, baseline) else {
            return Err(ProposeError::UnpairedTarget(target.to_owned()));
        };
        summary.targets += 1;
        summary.seconds_treatment += t.seconds;
        summary.seconds_baseline += b.seconds;
        for (kind, n) in &t.errors {
            *summary.errors_treatment.entry(kind.clone()).or_insert(0) += n;
            summary.total_errors_treatment += n;
        }
        for (kind, n) in &b.errors {
            *summary.errors_baseline.entry(kind.clone()).or_insert(0) += n;
            summary.total_errors_baseline += n;
        }
        let hits_t = t.hits_treatment.unwrap_or(0);
        let hits_b = b.hits_baseline.unwrap_or(0);
        summary.normalized_hit_sum += (hits_t as f64 + 1.0) / (hits_b as f64 + 1.0);
    }
    if summary.seconds_baseline > 0.0 {
        summary.time_saved = 1.0 - summary.seconds_treatment / summary.seconds_baseline;
    }
    if summary.targets > 0 {
        summary.mean_normalized_hit = summary.normalized_hit_sum / summary.targets as f64;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::{function, ins};
    use crate::corpus::{
        FunctionIndex, LabeledFunction, Provenance, Split, UnsafeLabels, UnsafeType,
    };
    use crate::features::ExpansionConfig;
    use std::collections::BTreeSet;
    use std::io::Cursor;

    fn labeled(id: &str, binary: &str, size: usize, unsafe_type: Option<u8>) -> LabeledFunction {
        let body: Vec<_> = (0..size)
            .map(|i| ins(0x1000 + i as u64, "nop", &[]))
            .collect();
        LabeledFunction {
            function: function(id, binary, 0x1000, body),
            labels: match unsafe_type {
                Some(t) => UnsafeLabels::from_types([UnsafeType::new(t).unwrap()]),
                None => UnsafeLabels::safe(),
            },
            bug: None,
        }
    }

    fn report(tau_hat: f64) -> CalibrationReport {
        CalibrationReport {
            tau_hat,
            epsilon: 0.1,
            delta: 0.001,
            calibration_size: 50,
            feasible: tau_hat > 0.0,
            candidates: Vec::new(),
            guarantee: String::new(),
            model_fingerprint: None,
            groups: BTreeSet::new(),
        }
    }

    fn two_binary_corpus() -> Corpus {
        let functions = vec![
            labeled("alpha", "bin-a", 4, Some(8)),
            labeled("beta", "bin-a", 6, None),
            labeled("gamma", "bin-b", 10, None),
            labeled("delta", "bin-b", 2, Some(2)),
            labeled("epsilon", "bin-b", 8, Some(5)),
        ];
        Corpus::new("two-binary", Split::Test, functions, Provenance::default()).unwrap()
    }

    #[test]
    fn oracle_with_feasible_threshold_selects_exactly_unsafe() {
        let corpus = two_binary_corpus();
        let index = corpus.index();
        let ctx = ScoreContext::new(&index, ExpansionConfig::default());
        let sets = classify(&corpus, &ScoreModel::Oracle, &report(0.7), &ctx).unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0].binary_id, "bin-a");
        let ids: Vec<&str> = sets[0].members.iter().map(|m| m.function_id.as_str()).collect();
        assert_eq!(ids, vec!["alpha"]);
        assert!((sets[0].estimated_coverage - 0.4).abs() < 1e-12);
        assert!(!sets[0].skip);

        let ids: Vec<&str> = sets[1].members.iter().map(|m| m.function_id.as_str()).collect();
        // Tie at unsafeness 1.0 broken by id.
        assert_eq!(ids, vec!["delta", "epsilon"]);
        assert!((sets[1].estimated_coverage - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_threshold_fallback_proposes_everything() {
        let corpus = two_binary_corpus();
        let index = corpus.index();
        let ctx = ScoreContext::new(&index, ExpansionConfig::default());
        let sets = classify(&corpus, &ScoreModel::Oracle, &report(0.0), &ctx).unwrap();
        for set in &sets {
            assert!(!set.skip);
            assert_eq!(set.estimated_coverage, 1.0);
        }
        assert_eq!(sets[0].members.len(), 2);
        assert_eq!(sets[1].members.len(), 3);
    }

    #[test]
    fn membership_matches_brute_force_filter() {
        let corpus = two_binary_corpus();
        let index = corpus.index();
        let ctx = ScoreContext::new(&index, ExpansionConfig::default());
        let model = ScoreModel::Random { seed: 12 };
        let cal = report(0.43);
        let sets = classify(&corpus, &model, &cal, &ctx).unwrap();
        let proposed: BTreeSet<&str> = sets
            .iter()
            .flat_map(|s| s.members.iter().map(|m| m.function_id.as_str()))
            .collect();
        for f in &corpus.functions {
            let u = model.score_labeled(f, &ctx).unwrap().unsafeness();
            assert_eq!(
                proposed.contains(f.function.function_id.as_str()),
                u >= cal.tau_hat,
                "membership law violated for {}",
                f.function.function_id
            );
        }
        for set in &sets {
            for pair in set.members.windows(2) {
                assert!(
                    pair[0].unsafeness > pair[1].unsafeness
                        || (pair[0].unsafeness == pair[1].unsafeness
                            && pair[0].function_id < pair[1].function_id)
                );
            }
        }
    }

    #[test]
    fn fingerprint_mismatch_is_rejected() {
        let corpus = two_binary_corpus();
        let index = corpus.index();
        let ctx = ScoreContext::new(&index, ExpansionConfig::default());
        let mut cal = report(0.5);
        cal.model_fingerprint = Some("someone-else".into());
        assert!(matches!(
            classify(&corpus, &ScoreModel::Oracle, &cal, &ctx),
            Err(ProposeError::ConfigMismatch { .. })
        ));
    }

    #[test]
    fn classify_records_rejects_oracle() {
        let corpus = two_binary_corpus();
        let records: Vec<FunctionRecord> =
            corpus.functions.iter().map(|f| f.function.clone()).collect();
        let index = FunctionIndex::from_records(records.iter());
        let ctx = ScoreContext::new(&index, ExpansionConfig::default());
        assert!(matches!(
            classify_records(&records, &ScoreModel::Oracle, &report(0.5), &ctx),
            Err(ProposeError::Model(ModelError::MissingLabels))
        ));
        // A label-free model works on raw records.
        let sets =
            classify_records(&records, &ScoreModel::ExternalCall, &report(0.5), &ctx).unwrap();
        assert_eq!(sets.len(), 2);
        assert!(sets.iter().all(|s| s.skip));
    }

    #[test]
    fn focus_export_writes_ranked_lines() {
        let set = ProposalSet {
            binary_id: "bin-a".into(),
            members: vec![
                ProposalMember { function_id: "first".into(), unsafeness: 0.9 },
                ProposalMember { function_id: "second".into(), unsafeness: 0.8 },
                ProposalMember { function_id: "third".into(), unsafeness: 0.7 },
            ],
            tau_hat: 0.5,
            epsilon: 0.1,
            delta: 0.001,
            estimated_coverage: 0.4,
            skip: false,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("focus.txt");
        export_focus(&set, &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "first\nsecond\nthird\n"
        );

        let mut bad = set.clone();
        bad.members[1].function_id = "has space".into();
        assert!(matches!(
            export_focus(&bad, &path),
            Err(ProposeError::UnmappableSymbol(_))
        ));
    }

    #[test]
    fn campaign_export_writes_manifest_and_lists() {
        let corpus = two_binary_corpus();
        let index = corpus.index();
        let ctx = ScoreContext::new(&index, ExpansionConfig::default());
        let sets = classify(&corpus, &ScoreModel::Oracle, &report(0.7), &ctx).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = export_campaign(&sets, dir.path()).unwrap();

        assert!(!dir.path().join("campaign.json.tmp").exists());
        let on_disk: CampaignManifest = serde_json::from_slice(
            &std::fs::read(dir.path().join("campaign.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(on_disk, manifest);
        assert_eq!(manifest.binaries.len(), 2);
        let entry = &manifest.binaries["bin-a"];
        assert_eq!(entry.focus_list, "focus/bin-a.txt");
        assert!(!entry.skip);
        assert_eq!(entry.members, 1);
        assert_eq!(
            std::fs::read_to_string(dir.path().join("focus/bin-a.txt")).unwrap(),
            "alpha\n"
        );

        // A skipped binary gets an empty list and a marked manifest entry.
        let skipped = vec![ProposalSet {
            binary_id: "empty-bin".into(),
            members: Vec::new(),
            tau_hat: 0.9,
            epsilon: 0.1,
            delta: 0.001,
            estimated_coverage: 0.0,
            skip: true,
        }];
        let dir2 = tempfile::tempdir().unwrap();
        let manifest = export_campaign(&skipped, dir2.path()).unwrap();
        assert!(manifest.binaries["empty-bin"].skip);
        assert_eq!(
            std::fs::read_to_string(dir2.path().join("focus/empty-bin.txt")).unwrap(),
            ""
        );

        let bad = vec![ProposalSet {
            binary_id: "../escape".into(),
            members: Vec::new(),
            tau_hat: 0.9,
            epsilon: 0.1,
            delta: 0.001,
            estimated_coverage: 0.0,
            skip: true,
        }];
        assert!(matches!(
            export_campaign(&bad, dir2.path()),
            Err(ProposeError::InvalidBinaryId(_))
        ));
    }

    fn outcome(
        target: &str,
        arm: FuzzArm,
        seconds: f64,
        hits: Option<u64>,
        errors: &[(&str, u64)],
    ) -> FuzzOutcome {
        FuzzOutcome {
            target: target.into(),
            arm,
            errors: errors.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            seconds,
            hits_treatment: matches!(arm, FuzzArm::Treatment).then_some(hits).flatten(),
            hits_baseline: matches!(arm, FuzzArm::Baseline).then_some(hits).flatten(),
        }
    }

    #[test]
    fn normalized_hits_match_hand_values() {
        let outcomes = vec![
            outcome("t1", FuzzArm::Treatment, 1.0, Some(0), &[]),
            outcome("t1", FuzzArm::Baseline, 1.0, Some(0), &[]),
            outcome("t2", FuzzArm::Treatment, 1.0, Some(9), &[]),
            outcome("t2", FuzzArm::Baseline, 1.0, Some(4), &[]),
        ];
        let summary = analyze_fuzz(&outcomes).unwrap();
        assert_eq!(summary.targets, 2);
        // (0+1)/(0+1) = 1 and (9+1)/(4+1) = 2.
        assert!((summary.normalized_hit_sum - 3.0).abs() < 1e-12);
        assert!((summary.mean_normalized_hit - 1.5).abs() < 1e-12);
    }

    #[test]
    fn time_saved_matches_published_campaign_pair() {
        let outcomes = vec![
            outcome("all", FuzzArm::Treatment, 63.50, None, &[("heap-overflow", 27)]),
            outcome("all", FuzzArm::Baseline, 79.88, None, &[("heap-overflow", 28)]),
        ];
        let summary = analyze_fuzz(&outcomes).unwrap();
        assert!(
            (summary.time_saved - 0.205).abs() < 0.001,
            "time saved {} not within 0.1pp of 20.5%",
            summary.time_saved
        );
        assert_eq!(summary.total_errors_treatment, 27);
        assert_eq!(summary.total_errors_baseline, 28);
    }

    #[test]
    fn unpaired_and_duplicated_targets_are_rejected() {
        let lone = vec![outcome("t1", FuzzArm::Treatment, 1.0, Some(1), &[])];
        assert!(matches!(
            analyze_fuzz(&lone),
            Err(ProposeError::UnpairedTarget(_))
        ));
        let duplicated = vec![
            outcome("t1", FuzzArm::Treatment, 1.0, Some(1), &[]),
            outcome("t1", FuzzArm::Treatment, 2.0, Some(2), &[]),
            outcome("t1", FuzzArm::Baseline, 1.0, Some(0), &[]),
        ];
        assert!(matches!(
            analyze_fuzz(&duplicated),
            Err(ProposeError::UnpairedTarget(_))
        ));
    }

    #[test]
    fn outcomes_round_trip_through_jsonl() {
        let text = concat!(
            r#"{"target":"t1","arm":"treatment","errors":{"uaf":2},"seconds":10.5,"hits_treatment":9}"#,
            "\n",
            r#"{"target":"t1","arm":"baseline","errors":{},"seconds":12.0,"hits_baseline":4}"#,
            "\n"
        );
        let outcomes = ingest_fuzz_outcomes(Cursor::new(text)).unwrap();
        assert_eq!(outcomes.len(), 2);
        assert_eq!(outcomes[0].arm, FuzzArm::Treatment);
        assert_eq!(outcomes[0].hits_treatment, Some(9));
        assert_eq!(outcomes[1].hits_baseline, Some(4));
        let summary = analyze_fuzz(&outcomes).unwrap();
        assert!((summary.normalized_hit_sum - 2.0).abs() < 1e-12);

        let err = ingest_fuzz_outcomes(Cursor::new("{\n")).unwrap_err();
        assert!(matches!(err, ProposeError::MalformedOutcome { line: 1, .. }));
    }
}
