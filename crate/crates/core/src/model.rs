//! Score functions over token features: a trainable reference scorer and
//! three baselines.
//!
//! Everything downstream (calibration, evaluation, proposals) depends only on
//! the contract: a model maps a function to fifteen scores in `[0, 1]`, one
//! per label class, with the safe score at index 0 and the derived
//! *unsafeness* `1 − ŝ(x, 0)` driving the unsafe/safe decision. The reference
//! implementation is a bag-of-tokens one-vs-rest logistic scorer — small
//! enough to train at desk scale, rich enough to exercise every downstream
//! code path; heavier embedding models slot in behind the same enum without
//! interface changes.

use std::collections::BTreeSet;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, FunctionIndex, FunctionRecord, LabeledFunction, NUM_CLASSES};
use crate::features::{
    strip_depth_marks, tokenize, vectorize, ExpansionConfig, FeatureVector, Vocabulary,
    EXTERNAL_CALL_TOKEN,
};

/// Errors raised by training, scoring, and model serialization.
#[derive(Debug, Error)]
pub enum ModelError {
    /// Training data contained only one class.
    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),
    /// The training objective left the finite range.
    #[error("non-finite loss at epoch {epoch}; lower the learning rate")]
    NonFiniteLoss {
        /// Epoch (0-based) at which the objective became non-finite.
        epoch: u32,
    },
    /// The oracle model was asked to score a function without labels.
    #[error("oracle model requires labels at query time")]
    MissingLabels,
    /// A model file from an unsupported format generation.
    #[error("unsupported model format version {0}, expected {MODEL_FORMAT_VERSION}")]
    VersionMismatch(u32),
    /// A model file that does not parse or fails its integrity checks.
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    /// Scoring was requested under a different expansion config than the
    /// model was trained with; features would not line up with the weights.
    #[error(
        "expansion config mismatch: model built with max_depth={expected_depth}, \
         max_tokens={expected_tokens}; scoring requested max_depth={got_depth}, \
         max_tokens={got_tokens}"
    )]
    ConfigMismatch {
        /// Depth the model was trained with.
        expected_depth: u32,
        /// Token budget the model was trained with.
        expected_tokens: usize,
        /// Depth requested at scoring time.
        got_depth: u32,
        /// Token budget requested at scoring time.
        got_tokens: usize,
    },
    /// Fine-tuning is only defined for the reference scorer.
    #[error("fine-tune requires a reference-linear model, got kind {0:?}")]
    NotFineTunable(String),
    /// Filesystem failure while saving or loading.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-class scores `ŝ(x, 0..=14)` for one function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores(pub [f64; NUM_CLASSES]);

impl Scores {
    /// Unsafeness `1 − ŝ(x, 0)`: the model's belief that the function
    /// contains unsafe code.
    pub fn unsafeness(&self) -> f64 {
        1.0 - self.0[0]
    }

    /// Score for one class.
    pub fn class(&self, j: usize) -> f64 {
        self.0[j]
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    /// Passes over the training data.
    pub epochs: u32,
    /// Gradient step size.
    pub learning_rate: f64,
    /// L2 penalty on feature weights (biases are never regularized).
    pub l2: f64,
    /// Seed for example ordering.
    pub seed: u64,
    /// Reweight classes to equal total mass. On by default because unsafe
    /// functions are a small minority of real corpora.
    pub class_balance: bool,
    /// Use exact full-batch gradient steps instead of per-example updates.
    pub full_batch: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            epochs: 30,
            learning_rate: 0.2,
            l2: 1e-6,
            seed: 0,
            class_balance: true,
            full_batch: false,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Dot product of a dense weight row with a sparse feature vector. The last
/// weight slot belongs to the out-of-vocabulary bucket.
fn dot(weights: &[f64], x: &FeatureVector) -> f64 {
    let mut z = 0.0;
    for (idx, count) in &x.counts {
        z += weights[*idx as usize] * f64::from(*count);
    }
    if x.oov > 0 {
        z += weights[weights.len() - 1] * f64::from(x.oov);
    }
    z
}

/// Regularized, class-weighted binary-cross-entropy objective of one head.
///
/// `class_weights` is `(w_pos, w_neg)`; the penalty is `l2/2 · ‖w‖²` over
/// feature weights only. Public so the analytic gradient can be audited
/// against finite differences of this exact function.
pub fn head_objective(
    weights: &[f64],
    bias: f64,
    vectors: &[FeatureVector],
    targets: &[bool],
    class_weights: (f64, f64),
    l2: f64,
) -> f64 {
    assert_eq!(vectors.len(), targets.len());
    let m = vectors.len() as f64;
    let mut loss = 0.0;
    for (x, y) in vectors.iter().zip(targets) {
        let z = dot(weights, x) + bias;
        let wy = if *y { class_weights.0 } else { class_weights.1 };
        // −log-likelihood of a logistic unit: softplus(z) − y·z.
        loss += wy * (softplus(z) - if *y { z } else { 0.0 });
    }
    let penalty: f64 = weights.iter().map(|w| w * w).sum::<f64>() * 0.5 * l2;
    loss / m + penalty
}

/// Analytic gradient of [`head_objective`] in `(weights, bias)`.
pub fn head_gradient(
    weights: &[f64],
    bias: f64,
    vectors: &[FeatureVector],
    targets: &[bool],
    class_weights: (f64, f64),
    l2: f64,
) -> (Vec<f64>, f64) {
    assert_eq!(vectors.len(), targets.len());
    let m = vectors.len() as f64;
    let mut gw = vec![0.0f64; weights.len()];
    let mut gb = 0.0f64;
    for (x, y) in vectors.iter().zip(targets) {
        let z = dot(weights, x) + bias;
        let wy = if *y { class_weights.0 } else { class_weights.1 };
        let gz = wy * (sigmoid(z) - f64::from(u8::from(*y)));
        for (idx, count) in &x.counts {
            gw[*idx as usize] += gz * f64::from(*count);
        }
        if x.oov > 0 {
            let last = gw.len() - 1;
            gw[last] += gz * f64::from(x.oov);
        }
        gb += gz;
    }
    for (g, w) in gw.iter_mut().zip(weights) {
        *g = *g / m + l2 * w;
    }
    (gw, gb / m)
}

/// The trainable one-vs-rest logistic scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScorer {
    /// Token vocabulary fixed at training time.
    pub vocabulary: Vocabulary,
    /// Expansion config the features were computed with.
    pub config: ExpansionConfig,
    /// Hyperparameters of the most recent training run.
    pub hyper: Hyper,
    /// One dense weight row per class; the final slot of each row is the
    /// out-of-vocabulary bucket.
    pub weights: Vec<Vec<f64>>,
    /// Per-class intercepts.
    pub biases: Vec<f64>,
}

impl LinearScorer {
    /// Zero-initialized scorer: every score starts at `σ(0) = 0.5`.
    pub fn zeroed(vocabulary: Vocabulary, config: ExpansionConfig, hyper: Hyper) -> Self {
        let dim = vocabulary.len() + 1;
        LinearScorer {
            vocabulary,
            config,
            hyper,
            weights: vec![vec![0.0; dim]; NUM_CLASSES],
            biases: vec![0.0; NUM_CLASSES],
        }
    }

    /// Score a pre-vectorized function.
    pub fn score_features(&self, x: &FeatureVector) -> Scores {
        let mut out = [0.0f64; NUM_CLASSES];
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = sigmoid(dot(&self.weights[j], x) + self.biases[j]);
        }
        Scores(out)
    }

    fn finite(&self) -> bool {
        self.biases.iter().all(|b| b.is_finite())
            && self
                .weights
                .iter()
                .all(|row| row.iter().all(|w| w.is_finite()))
    }
}

/// What the surrounding corpus looks like at scoring time: callee resolution
/// for token expansion plus the expansion config.
#[derive(Clone, Copy)]
pub struct ScoreContext<'a> {
    /// Resolves callee ids to function bodies.
    pub index: &'a FunctionIndex<'a>,
    /// Expansion knobs; must match the model's training config for trained
    /// models.
    pub config: ExpansionConfig,
}

impl<'a> ScoreContext<'a> {
    /// Bundle an index with an expansion config.
    pub fn new(index: &'a FunctionIndex<'a>, config: ExpansionConfig) -> Self {
        ScoreContext { index, config }
    }
}

/// A score function `ŝ(x, j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScoreModel {
    /// Trained linear one-vs-rest scorer.
    ReferenceLinear(LinearScorer),
    /// Scores derived from a seeded hash of the function id: the
    /// uninformed-ranking baseline.
    Random {
        /// Stream selector; same seed and function id give the same scores.
        seed: u64,
    },
    /// Flags exactly the functions whose expanded token sequence contains an
    /// external call.
    ExternalCall,
    /// Perfect-knowledge baseline; requires labels at query time.
    Oracle,
}

impl ScoreModel {
    /// Short kind name, matching the serialized `kind` tag.
    pub fn kind(&self) -> &'static str {
        match self {
            ScoreModel::ReferenceLinear(_) => "reference-linear",
            ScoreModel::Random { .. } => "random",
            ScoreModel::ExternalCall => "external-call",
            ScoreModel::Oracle => "oracle",
        }
    }

    /// The expansion config this model's features are bound to, when fixed
    /// at training time.
    pub fn expansion_config(&self) -> Option<ExpansionConfig> {
        match self {
            ScoreModel::ReferenceLinear(s) => Some(s.config),
            _ => None,
        }
    }

    /// Hash of the model's vocabulary, when it has one.
    pub fn vocabulary_hash(&self) -> Option<String> {
        match self {
            ScoreModel::ReferenceLinear(s) => Some(s.vocabulary.content_hash()),
            _ => None,
        }
    }

    /// Stable content fingerprint over the full serialized model, used to
    /// tie calibration artifacts to the model they were computed from.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("model serializes");
        let mut hasher = Sha256::new();
        hasher.update(b"unsafespot-model\x1f");
        hasher.update(&json);
        hex(&hasher.finalize())
    }

    /// Score an unlabeled function.
    ///
    /// The oracle kind cannot answer without labels and returns
    /// [`ModelError::MissingLabels`]; use [`ScoreModel::score_labeled`].
    pub fn score(
        &self,
        function: &FunctionRecord,
        ctx: &ScoreContext<'_>,
    ) -> Result<Scores, ModelError> {
        match self {
            ScoreModel::ReferenceLinear(scorer) => {
                if scorer.config != ctx.config {
                    return Err(ModelError::ConfigMismatch {
                        expected_depth: scorer.config.max_depth,
                        expected_tokens: scorer.config.max_tokens,
                        got_depth: ctx.config.max_depth,
                        got_tokens: ctx.config.max_tokens,
                    });
                }
                let sequence = tokenize(function, ctx.index, &ctx.config);
                let x = vectorize(&sequence, &scorer.vocabulary);
                Ok(scorer.score_features(&x))
            }
            ScoreModel::Random { seed } => Ok(random_scores(*seed, &function.function_id)),
            ScoreModel::ExternalCall => {
                let sequence = tokenize(function, ctx.index, &ctx.config);
                let has_external = sequence
                    .tokens
                    .iter()
                    .any(|t| strip_depth_marks(t).1 == EXTERNAL_CALL_TOKEN);
                let mut out = [0.0f64; NUM_CLASSES];
                out[0] = if has_external { 0.0 } else { 1.0 };
                Ok(Scores(out))
            }
            ScoreModel::Oracle => Err(ModelError::MissingLabels),
        }
    }

    /// Score a labeled function; the only entry point the oracle supports.
    pub fn score_labeled(
        &self,
        labeled: &LabeledFunction,
        ctx: &ScoreContext<'_>,
    ) -> Result<Scores, ModelError> {
        match self {
            ScoreModel::Oracle => {
                let mut out = [0.0f64; NUM_CLASSES];
                if labeled.labels.is_safe() {
                    out[0] = 1.0;
                } else {
                    for class in labeled.labels.iter() {
                        out[class as usize] = 1.0;
                    }
                }
                Ok(Scores(out))
            }
            _ => self.score(&labeled.function, ctx),
        }
    }
}

/// Deterministic pseudo-random scores from `(seed, function_id, class)`.
fn random_scores(seed: u64, function_id: &str) -> Scores {
    let mut out = [0.0f64; NUM_CLASSES];
    for (j, slot) in out.iter_mut().enumerate() {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update([0x1f]);
        hasher.update(function_id.as_bytes());
        hasher.update([0x1f, j as u8]);
        let digest = hasher.finalize();
        let x = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        // Top 53 bits as a uniform double in [0, 1).
        *slot = (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    }
    Scores(out)
}

fn hex(digest: &[u8]) -> String {
    let mut out = String::with_capacity(digest.len() * 2);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Per-head class weights: `(w_pos, w_neg)` scaled so each class carries half
/// the total mass, or `(1, 1)` when balancing is off or a class is empty.
fn class_weights(targets: &[bool], balance: bool) -> (f64, f64) {
    if !balance {
        return (1.0, 1.0);
    }
    let m = targets.len() as f64;
    let pos = targets.iter().filter(|t| **t).count() as f64;
    let neg = m - pos;
    if pos == 0.0 || neg == 0.0 {
        return (1.0, 1.0);
    }
    (m / (2.0 * pos), m / (2.0 * neg))
}

/// Continue training a scorer in place on pre-vectorized examples.
///
/// Returns the summed per-head objective after each epoch. Heads whose
/// positive class is absent from `targets` are left untouched. In
/// per-example mode the L2 term decays only the coordinates touched by each
/// example (the usual sparse-update shortcut); the exact penalty applies in
/// full-batch mode.
fn train_in_place(
    scorer: &mut LinearScorer,
    vectors: &[FeatureVector],
    targets: &[Vec<bool>; NUM_CLASSES],
    hyper: Hyper,
) -> Result<Vec<f64>, ModelError> {
    let lr = hyper.learning_rate;
    let per_head: Vec<Option<(f64, f64)>> = targets
        .iter()
        .map(|t| {
            t.iter()
                .any(|y| *y)
                .then(|| class_weights(t, hyper.class_balance))
        })
        .collect();

    let mut history = Vec::with_capacity(hyper.epochs as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    for epoch in 0..hyper.epochs {
        if hyper.full_batch {
            for j in 0..NUM_CLASSES {
                let Some(cw) = per_head[j] else { continue };
                let (gw, gb) =
                    head_gradient(&scorer.weights[j], scorer.biases[j], vectors, &targets[j], cw, hyper.l2);
                for (w, g) in scorer.weights[j].iter_mut().zip(gw) {
                    *w -= lr * g;
                }
                scorer.biases[j] -= lr * gb;
            }
        } else {
            crate::corpus::shuffle(&mut order, &mut rng);
            for &i in &order {
                let x = &vectors[i];
                for j in 0..NUM_CLASSES {
                    let Some((w_pos, w_neg)) = per_head[j] else { continue };
                    let y = targets[j][i];
                    let row = &mut scorer.weights[j];
                    let z = dot(row, x) + scorer.biases[j];
                    let wy = if y { w_pos } else { w_neg };
                    let gz = wy * (sigmoid(z) - f64::from(u8::from(y)));
                    for (idx, count) in &x.counts {
                        let idx = *idx as usize;
                        row[idx] -= lr * (gz * f64::from(*count) + hyper.l2 * row[idx]);
                    }
                    if x.oov > 0 {
                        let last = row.len() - 1;
                        row[last] -= lr * (gz * f64::from(x.oov) + hyper.l2 * row[last]);
                    }
                    scorer.biases[j] -= lr * gz;
                }
            }
        }
        if !scorer.finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
        let epoch_loss: f64 = (0..NUM_CLASSES)
            .map(|j| {
                per_head[j].map_or(0.0, |cw| {
                    head_objective(
                        &scorer.weights[j],
                        scorer.biases[j],
                        vectors,
                        &targets[j],
                        cw,
                        hyper.l2,
                    )
                })
            })
            .sum();
        if !epoch_loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
        history.push(epoch_loss);
    }
    Ok(history)
}

fn check_two_classes(corpus: &Corpus, what: &str) -> Result<(), ModelError> {
    let unsafe_count = corpus.functions.iter().filter(|f| f.labels.is_unsafe()).count();
    if corpus.is_empty() {
        return Err(ModelError::DegenerateCorpus(format!("{what} corpus is empty")));
    }
    if unsafe_count == 0 {
        return Err(ModelError::DegenerateCorpus(format!(
            "{what} corpus has no unsafe functions"
        )));
    }
    if unsafe_count == corpus.len() {
        return Err(ModelError::DegenerateCorpus(format!(
            "{what} corpus has no safe functions"
        )));
    }
    Ok(())
}

/// Tokenize and vectorize every corpus function against a vocabulary.
fn vectorize_corpus(
    corpus: &Corpus,
    vocabulary: &Vocabulary,
    config: &ExpansionConfig,
) -> Vec<FeatureVector> {
    let index = corpus.index();
    corpus
        .functions
        .par_iter()
        .map(|f| vectorize(&tokenize(&f.function, &index, config), vocabulary))
        .collect()
}

fn head_targets(corpus: &Corpus) -> [Vec<bool>; NUM_CLASSES] {
    let mut targets: [Vec<bool>; NUM_CLASSES] =
        std::array::from_fn(|_| Vec::with_capacity(corpus.len()));
    for f in &corpus.functions {
        targets[0].push(f.labels.is_safe());
        for (j, t) in targets.iter_mut().enumerate().skip(1) {
            t.push(f.labels.contains(j as u8));
        }
    }
    targets
}

/// Train the reference scorer from scratch on a corpus.
///
/// The vocabulary is built from this corpus alone; functions seen later fall
/// back to the out-of-vocabulary bucket. Training is deterministic for a
/// fixed corpus, config, and hyperparameters, and zero epochs leave the
/// zero-initialized scorer (every score 0.5) untouched.
pub fn train_reference(
    train: &Corpus,
    config: ExpansionConfig,
    hyper: Hyper,
) -> Result<ScoreModel, ModelError> {
    check_two_classes(train, "training")?;
    let index = train.index();
    let sequences: Vec<_> = train
        .functions
        .par_iter()
        .map(|f| tokenize(&f.function, &index, &config))
        .collect();
    let vocabulary = Vocabulary::build(sequences.iter());
    let vectors: Vec<FeatureVector> = sequences
        .par_iter()
        .map(|s| vectorize(s, &vocabulary))
        .collect();
    let targets = head_targets(train);
    let mut scorer = LinearScorer::zeroed(vocabulary, config, hyper);
    train_in_place(&mut scorer, &vectors, &targets, hyper)?;
    Ok(ScoreModel::ReferenceLinear(scorer))
}

/// Continue training an existing reference scorer on a new corpus.
///
/// The vocabulary and expansion config are kept; tokens unseen at initial
/// training time pool into the out-of-vocabulary bucket. With zero epochs
/// this is the identity, valid even on an empty corpus.
pub fn fine_tune(
    model: &ScoreModel,
    target_train: &Corpus,
    hyper: Hyper,
) -> Result<ScoreModel, ModelError> {
    let ScoreModel::ReferenceLinear(scorer) = model else {
        return Err(ModelError::NotFineTunable(model.kind().to_owned()));
    };
    let mut tuned = scorer.clone();
    tuned.hyper = hyper;
    if hyper.epochs == 0 {
        return Ok(ScoreModel::ReferenceLinear(tuned));
    }
    check_two_classes(target_train, "fine-tune")?;
    let vectors = vectorize_corpus(target_train, &tuned.vocabulary, &tuned.config);
    let targets = head_targets(target_train);
    train_in_place(&mut tuned, &vectors, &targets, hyper)?;
    Ok(ScoreModel::ReferenceLinear(tuned))
}

/// A function id with its scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredFunction {
    /// The function scored.
    pub function_id: String,
    /// Its per-class scores.
    pub scores: Scores,
}

/// Score every function of a corpus, in corpus order.
pub fn score_corpus(
    corpus: &Corpus,
    model: &ScoreModel,
    ctx: &ScoreContext<'_>,
) -> Result<Vec<ScoredFunction>, ModelError> {
    corpus
        .functions
        .par_iter()
        .map(|f| {
            Ok(ScoredFunction {
                function_id: f.function.function_id.clone(),
                scores: model.score_labeled(f, ctx)?,
            })
        })
        .collect()
}

/// On-disk model format generation this build reads and writes.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    /// Integrity check over the embedded vocabulary, present for trained
    /// kinds.
    vocabulary_hash: Option<String>,
    model: ScoreModel,
}

/// Write a model to `model.json`.
pub fn save_model(model: &ScoreModel, path: &Path) -> Result<(), ModelError> {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        vocabulary_hash: model.vocabulary_hash(),
        model: model.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&file).expect("model serializes");
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Read a model back from `model.json`, verifying version and vocabulary
/// integrity.
pub fn load_model(path: &Path) -> Result<ScoreModel, ModelError> {
    let bytes = std::fs::read(path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| ModelError::CorruptFile(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| ModelError::CorruptFile("missing format_version".into()))?;
    if version != u64::from(MODEL_FORMAT_VERSION) {
        return Err(ModelError::VersionMismatch(version as u32));
    }
    let file: ModelFile =
        serde_json::from_value(value).map_err(|e| ModelError::CorruptFile(e.to_string()))?;
    if file.vocabulary_hash != file.model.vocabulary_hash() {
        return Err(ModelError::CorruptFile(
            "vocabulary hash does not match embedded vocabulary".into(),
        ));
    }
    Ok(file.model)
}

/// Distinct binaries of a corpus, in id order. Handy for per-binary
/// proposal assembly.
pub fn binary_ids(corpus: &Corpus) -> BTreeSet<String> {
    corpus
        .functions
        .iter()
        .map(|f| f.function.binary_id.clone())
        .collect()
}
