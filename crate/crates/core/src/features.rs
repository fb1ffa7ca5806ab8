//! Token features over disassembled functions.
//!
//! A function is rendered as one token per instruction: the mnemonic and its
//! operands joined with commas, e.g. `mov,qword ptr [rsp + 0x10],rdi`. Calls
//! that stay inside the corpus are followed by the callee's own tokens, each
//! prefixed with one `|<C>|` marker per expansion level, so the consumer sees
//! callee context without losing track of where it came from:
//!
//! ```text
//! sub,rsp,0x20
//! call,0x1b740
//! |<C>|sub,rsp,0x30
//! |<C>|mov,qword ptr [rsp + 0x10],rdi
//! ```
//!
//! Calls that leave the binary render as the literal token `call,externalcall`.
//! Expansion never follows a call to a function already on the current
//! expansion path, so recursion terminates, and stops at `max_depth` levels.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{CallTarget, FunctionIndex, FunctionRecord, Instruction};

/// Depth marker prepended once per expansion level.
pub const DEPTH_MARK: &str = "|<C>|";

/// Rendering of an external call, regardless of raw operands.
pub const EXTERNAL_CALL_TOKEN: &str = "call,externalcall";

/// Knobs for callee expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    /// Maximum expansion depth; `0` disables callee expansion entirely.
    pub max_depth: u32,
    /// Hard cap on emitted tokens; the sequence is cut there and flagged.
    pub max_tokens: usize,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            max_depth: 2,
            max_tokens: 4096,
        }
    }
}

/// A tokenized function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    /// Tokens in instruction order, callee bodies inlined after their call
    /// sites.
    pub tokens: Vec<String>,
    /// True when `max_tokens` cut the sequence short.
    pub truncated: bool,
    /// True when a resolvable callee was left unexpanded because the depth
    /// limit was reached.
    pub depth_max_reached: bool,
}

/// Instruction counts of a function with and without callee expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeMetrics {
    /// The function's own instruction count.
    pub shallow: u64,
    /// Instruction count after callee expansion under the same cycle and
    /// depth rules as tokenization (the token budget does not apply here).
    pub deep: u64,
    /// `deep / shallow`; `1.0` for an empty function.
    pub semantic: f64,
}

/// Render one instruction as a token.
pub fn render_instruction(ins: &Instruction) -> String {
    if matches!(ins.call_target, Some(CallTarget::External)) {
        return EXTERNAL_CALL_TOKEN.to_owned();
    }
    if ins.operands.is_empty() {
        return ins.mnemonic.clone();
    }
    let mut out = ins.mnemonic.clone();
    for op in &ins.operands {
        out.push(',');
        out.push_str(op);
    }
    out
}

/// Split a token into its depth (number of leading markers) and payload.
pub fn strip_depth_marks(token: &str) -> (u32, &str) {
    let mut depth = 0;
    let mut rest = token;
    while let Some(stripped) = rest.strip_prefix(DEPTH_MARK) {
        depth += 1;
        rest = stripped;
    }
    (depth, rest)
}

/// Walk a function's instructions with callee expansion.
///
/// `emit` sees `(depth, instruction)` for every expanded instruction in
/// order and returns `false` to abort the walk (token budget exhausted).
/// Returns `false` when the walk was aborted. Cycle breaking takes precedence
/// over the depth limit: a call back into the current expansion path is never
/// expanded and never counts as a depth hit.
fn expand<'a>(
    function: &'a FunctionRecord,
    index: &FunctionIndex<'a>,
    max_depth: u32,
    depth: u32,
    path: &mut Vec<&'a str>,
    depth_hit: &mut bool,
    emit: &mut dyn FnMut(u32, &'a Instruction) -> bool,
) -> bool {
    path.push(function.function_id.as_str());
    for ins in &function.instructions {
        if !emit(depth, ins) {
            path.pop();
            return false;
        }
        let Some(CallTarget::Function(callee_id)) = &ins.call_target else {
            continue;
        };
        let Some(callee) = index.get(callee_id) else {
            continue; // target outside the corpus: the call token stands alone
        };
        if path.contains(&callee_id.as_str()) {
            continue; // back-edge on the current path
        }
        if depth + 1 > max_depth {
            *depth_hit = true;
            continue;
        }
        if !expand(callee, index, max_depth, depth + 1, path, depth_hit, emit) {
            path.pop();
            return false;
        }
    }
    path.pop();
    true
}

/// Tokenize a function with depth-marked callee expansion.
pub fn tokenize(
    function: &FunctionRecord,
    index: &FunctionIndex<'_>,
    config: &ExpansionConfig,
) -> TokenSequence {
    let mut tokens: Vec<String> = Vec::with_capacity(function.instructions.len());
    let mut truncated = false;
    let mut depth_hit = false;
    let mut path = Vec::new();
    expand(
        function,
        index,
        config.max_depth,
        0,
        &mut path,
        &mut depth_hit,
        &mut |depth, ins| {
            if tokens.len() >= config.max_tokens {
                truncated = true;
                return false;
            }
            let mut token = DEPTH_MARK.repeat(depth as usize);
            token.push_str(&render_instruction(ins));
            tokens.push(token);
            true
        },
    );
    TokenSequence {
        tokens,
        truncated,
        depth_max_reached: depth_hit,
    }
}

/// Measure a function's shallow, deep, and semantic size.
///
/// `deep` counts instructions under exactly the cycle and depth rules of
/// [`tokenize`]; with a non-binding token budget, `deep` equals the token
/// count of the tokenized function.
pub fn deep_size(
    function: &FunctionRecord,
    index: &FunctionIndex<'_>,
    config: &ExpansionConfig,
) -> SizeMetrics {
    let mut deep = 0u64;
    let mut depth_hit = false;
    let mut path = Vec::new();
    expand(
        function,
        index,
        config.max_depth,
        0,
        &mut path,
        &mut depth_hit,
        &mut |_, _| {
            deep += 1;
            true
        },
    );
    let shallow = function.instructions.len() as u64;
    let semantic = if shallow == 0 {
        1.0
    } else {
        deep as f64 / shallow as f64
    };
    SizeMetrics {
        shallow,
        deep,
        semantic,
    }
}

/// Token-to-index mapping built from a training split.
///
/// Tokens are indexed in lexicographic order, so two builds over the same
/// token multiset agree exactly. Tokens outside the vocabulary fall into a
/// shared out-of-vocabulary bucket during [`vectorize`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary {
    index: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Collect the distinct tokens of the given sequences.
    pub fn build<'a, I>(sequences: I) -> Self
    where
        I: IntoIterator<Item = &'a TokenSequence>,
    {
        let distinct: BTreeSet<&str> = sequences
            .into_iter()
            .flat_map(|s| s.tokens.iter().map(String::as_str))
            .collect();
        let index = distinct
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t.to_owned(), i as u32))
            .collect();
        Vocabulary { index }
    }

    /// Index of a token, if in vocabulary.
    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Number of vocabulary entries (the OOV bucket is not one).
    pub fn len(&self) -> usize {
        self.index.len()
    }

    /// True when the vocabulary is empty.
    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Iterate `(token, index)` pairs in token order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.index.iter().map(|(t, i)| (t.as_str(), *i))
    }

    /// Content hash used to detect vocabulary mismatches between artifacts.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (token, index) in &self.index {
            hasher.update(token.as_bytes());
            hasher.update([0x1f]);
            hasher.update(index.to_le_bytes());
            hasher.update([0x0a]);
        }
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

/// Sparse token-count vector plus out-of-vocabulary count.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Vocabulary index to count, sparse.
    pub counts: BTreeMap<u32, u32>,
    /// Number of tokens that missed the vocabulary.
    pub oov: u32,
}

/// Count a token sequence against a vocabulary.
pub fn vectorize(sequence: &TokenSequence, vocabulary: &Vocabulary) -> FeatureVector {
    let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
    let mut oov = 0u32;
    for token in &sequence.tokens {
        match vocabulary.get(token) {
            Some(idx) => *counts.entry(idx).or_insert(0) += 1,
            None => oov += 1,
        }
    }
    FeatureVector { counts, oov }
}

/// One row of `features.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRecord {
    /// The function the row describes.
    pub function_id: String,
    /// Sparse vocabulary counts.
    pub counts: BTreeMap<u32, u32>,
    /// Out-of-vocabulary token count.
    pub oov: u32,
    /// Deep size under the expansion config in force.
    pub deep: u64,
    /// Own instruction count.
    pub shallow: u64,
}
