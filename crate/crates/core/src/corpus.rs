//! Corpus model: disassembled functions, debug-line maps, recorded source
//! spans, and the label projection that ties them together.
//!
//! The pipeline starts from three artifacts produced while building a binary:
//! a disassembly listing (`functions.jsonl`), a per-address source line map
//! (DWARF `.debug_line` or a plain-text fallback), and a set of recorded
//! source spans marking unsafe regions and, for report-style corpora, buggy
//! regions. [`project_labels`] joins them: an instruction carries unsafe type
//! `t` exactly when its `(file, line)` falls inside a recorded span of kind
//! `t`, and a function's label set is the union over its instructions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dwarf;

/// Marker used for call targets that leave the analyzed binary (PLT stubs,
/// shared-library imports). The literal spelling is part of the token format.
pub const EXTERNAL_CALL: &str = "externalcall";

/// Number of label classes: class `0` (safe) plus unsafe types `1..=14`.
pub const NUM_CLASSES: usize = 15;

/// Errors raised while building or transforming corpora.
#[derive(Debug, Error)]
pub enum CorpusError {
    /// A JSONL record failed to parse or violated a field invariant.
    #[error("malformed record at line {line}: {detail}")]
    MalformedRecord { line: usize, detail: String },
    /// The same `function_id` appeared twice within one binary.
    #[error("duplicate function {0}")]
    DuplicateFunction(String),
    /// Instruction addresses were not strictly increasing inside `[start, end)`.
    #[error("address order violation in function {0}")]
    AddressOrderViolation(String),
    /// A debug-line source could not be decoded.
    #[error("debug line decode error: {0}")]
    DecodeError(String),
    /// Line-map addresses went backwards.
    #[error("non-monotone addresses in line map near {0:#x}")]
    NonMonotoneAddresses(u64),
    /// An operation that needs at least one function got none.
    #[error("empty corpus")]
    EmptyCorpus,
    /// A function had no grouping key during splitting.
    #[error("missing group key for function {0}")]
    MissingGroupKey(String),
    /// Split fractions were negative or did not sum to one.
    #[error("invalid split fractions: {0}")]
    InvalidFractions(String),
    /// An unsafe type id fell outside `1..=14`.
    #[error("invalid unsafe type id {0}")]
    InvalidUnsafeType(u8),
    /// A label set violated the safe/unsafe exclusivity invariant.
    #[error("invalid label set: {0}")]
    InvalidLabelSet(String),
}

/// Target of a call instruction: another function in the corpus, or an
/// external symbol rendered as the literal [`EXTERNAL_CALL`] token.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum CallTarget {
    /// Call to a function identified by its `function_id`.
    Function(String),
    /// Call that leaves the binary.
    External,
}

impl From<String> for CallTarget {
    fn from(s: String) -> Self {
        if s == EXTERNAL_CALL {
            CallTarget::External
        } else {
            CallTarget::Function(s)
        }
    }
}

impl From<CallTarget> for String {
    fn from(t: CallTarget) -> String {
        match t {
            CallTarget::Function(id) => id,
            CallTarget::External => EXTERNAL_CALL.to_owned(),
        }
    }
}

/// One disassembled instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    /// Virtual address of the instruction.
    #[serde(rename = "addr")]
    pub address: u64,
    /// Lower-case mnemonic, e.g. `mov`.
    pub mnemonic: String,
    /// Operand strings exactly as the disassembler printed them. A bracketed
    /// memory operand such as `qword ptr [rsp + 0x10]` is a single operand.
    #[serde(default)]
    pub operands: Vec<String>,
    /// Resolved call target. `None` for non-call instructions and for
    /// indirect calls whose callee cannot be inferred statically.
    #[serde(default)]
    pub call_target: Option<CallTarget>,
}

impl Instruction {
    /// True when the mnemonic belongs to the call class (`call`, `callq`, ...).
    pub fn is_call(&self) -> bool {
        self.mnemonic.starts_with("call")
    }
}

/// One function as recorded by the disassembler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionRecord {
    /// Stable key: the linked symbol, or `fn_<start>` when the binary is
    /// stripped of names.
    pub function_id: String,
    /// The binary this function was extracted from.
    pub binary_id: String,
    /// First address of the function body.
    pub start: u64,
    /// One past the last address of the function body.
    pub end: u64,
    /// Instructions sorted by strictly increasing address.
    pub instructions: Vec<Instruction>,
    /// Distinct call targets of this function. Derived from the instruction
    /// stream when absent from the input record.
    #[serde(default)]
    pub callees: Vec<CallTarget>,
}

impl FunctionRecord {
    /// Distinct call targets in first-appearance order, derived from the
    /// instruction stream.
    pub fn derived_callees(&self) -> Vec<CallTarget> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for ins in &self.instructions {
            if let Some(t) = &ins.call_target {
                if seen.insert(t.clone()) {
                    out.push(t.clone());
                }
            }
        }
        out
    }

    fn validate(&self, line: usize) -> Result<(), CorpusError> {
        let malformed = |detail: String| CorpusError::MalformedRecord { line, detail };
        if self.function_id.is_empty() {
            return Err(malformed("empty function_id".into()));
        }
        if self.binary_id.is_empty() {
            return Err(malformed("empty binary_id".into()));
        }
        if self.start >= self.end {
            return Err(malformed(format!(
                "start {:#x} is not below end {:#x}",
                self.start, self.end
            )));
        }
        let mut prev: Option<u64> = None;
        for ins in &self.instructions {
            if ins.address < self.start || ins.address >= self.end {
                return Err(CorpusError::AddressOrderViolation(self.function_id.clone()));
            }
            if let Some(p) = prev {
                if ins.address <= p {
                    return Err(CorpusError::AddressOrderViolation(self.function_id.clone()));
                }
            }
            prev = Some(ins.address);
            if ins.mnemonic.is_empty() {
                return Err(malformed(format!("empty mnemonic at {:#x}", ins.address)));
            }
            // Only call-class instructions may carry a target; indirect calls
            // legitimately carry none.
            if ins.call_target.is_some() && !ins.is_call() {
                return Err(malformed(format!(
                    "call_target on non-call mnemonic `{}` at {:#x}",
                    ins.mnemonic, ins.address
                )));
            }
        }
        let derived: BTreeSet<_> = self.derived_callees().into_iter().collect();
        let declared: BTreeSet<_> = self.callees.iter().cloned().collect();
        if !self.callees.is_empty() && derived != declared {
            return Err(malformed(
                "callees list disagrees with instruction call targets".into(),
            ));
        }
        Ok(())
    }
}

/// Read-only lookup from `function_id` to its record, used to resolve call
/// edges during token expansion.
pub struct FunctionIndex<'a> {
    map: BTreeMap<&'a str, &'a FunctionRecord>,
}

impl<'a> FunctionIndex<'a> {
    /// Index a set of plain records.
    pub fn from_records<I>(records: I) -> Self
    where
        I: IntoIterator<Item = &'a FunctionRecord>,
    {
        let map = records
            .into_iter()
            .map(|r| (r.function_id.as_str(), r))
            .collect();
        FunctionIndex { map }
    }

    /// Index the function records inside labeled functions.
    pub fn from_labeled(functions: &'a [LabeledFunction]) -> Self {
        Self::from_records(functions.iter().map(|f| &f.function))
    }

    /// Resolve a function id.
    pub fn get(&self, id: &str) -> Option<&'a FunctionRecord> {
        self.map.get(id).copied()
    }

    /// Number of indexed functions.
    pub fn len(&self) -> usize {
        self.map.len()
    }

    /// True when the index holds nothing.
    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Parse a JSONL disassembly listing into validated function records.
///
/// Each line is one [`FunctionRecord`]. Blank lines are ignored. Duplicate
/// `function_id`s within one binary are rejected, as are instruction streams
/// that leave `[start, end)` or go backwards.
pub fn ingest_disassembly<R: BufRead>(reader: R) -> Result<Vec<FunctionRecord>, CorpusError> {
    let mut out: Vec<FunctionRecord> = Vec::new();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::MalformedRecord {
            line: line_no,
            detail: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut record: FunctionRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: line_no,
                detail: e.to_string(),
            })?;
        record.validate(line_no)?;
        if record.callees.is_empty() {
            record.callees = record.derived_callees();
        }
        let key = (record.binary_id.clone(), record.function_id.clone());
        if !seen.insert(key) {
            return Err(CorpusError::DuplicateFunction(record.function_id));
        }
        out.push(record);
    }
    Ok(out)
}

/// One row of the address-to-source map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineEntry {
    /// Instruction address the row describes.
    pub address: u64,
    /// Source file path as recorded by the compiler.
    pub file: String,
    /// 1-based source line.
    pub line: u32,
}

/// Monotone map from instruction address to `(file, line)`.
///
/// Addresses absent from the map have no line information; instructions at
/// such addresses contribute nothing during label projection and are counted
/// in the projection provenance instead.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebugLineMap {
    entries: Vec<LineEntry>,
}

impl DebugLineMap {
    /// Build a map from rows, enforcing monotone addresses and at most one
    /// `(file, line)` per address. Exact duplicate rows are collapsed.
    pub fn from_entries(mut entries: Vec<LineEntry>) -> Result<Self, CorpusError> {
        let mut prev: Option<&LineEntry> = None;
        for e in &entries {
            if let Some(p) = prev {
                if e.address < p.address {
                    return Err(CorpusError::NonMonotoneAddresses(e.address));
                }
                if e.address == p.address && (e.file != p.file || e.line != p.line) {
                    return Err(CorpusError::DecodeError(format!(
                        "conflicting line entries at {:#x}",
                        e.address
                    )));
                }
            }
            prev = Some(e);
        }
        entries.dedup();
        Ok(DebugLineMap { entries })
    }

    /// Exact-address lookup.
    pub fn lookup(&self, address: u64) -> Option<(&str, u32)> {
        self.entries
            .binary_search_by_key(&address, |e| e.address)
            .ok()
            .map(|i| (self.entries[i].file.as_str(), self.entries[i].line))
    }

    /// Number of mapped addresses.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// True when no address is mapped.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Iterate the rows in address order.
    pub fn iter(&self) -> impl Iterator<Item = &LineEntry> {
        self.entries.iter()
    }
}

/// Decode a debug-line source into a [`DebugLineMap`].
///
/// Two encodings are accepted: an ELF object containing DWARF line tables,
/// recognized by its magic bytes, and a plain-text fallback with one
/// `<hex-addr> <file> <line>` row per line.
pub fn ingest_debug_lines(bytes: &[u8]) -> Result<DebugLineMap, CorpusError> {
    if bytes.starts_with(&[0x7f, b'E', b'L', b'F']) {
        let mut entries = dwarf::elf_line_entries(bytes)?;
        entries.sort_by(|a, b| {
            a.address
                .cmp(&b.address)
                .then_with(|| a.file.cmp(&b.file))
                .then_with(|| a.line.cmp(&b.line))
        });
        DebugLineMap::from_entries(entries)
    } else {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| CorpusError::DecodeError(format!("input is not UTF-8: {e}")))?;
        parse_text_lines(text)
    }
}

fn parse_text_lines(text: &str) -> Result<DebugLineMap, CorpusError> {
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(CorpusError::DecodeError(format!(
                "line {line_no}: expected `<hex-addr> <file> <line>`, got {} fields",
                fields.len()
            )));
        }
        let addr_text = fields[0].strip_prefix("0x").unwrap_or(fields[0]);
        let address = u64::from_str_radix(addr_text, 16).map_err(|e| {
            CorpusError::DecodeError(format!("line {line_no}: bad address `{}`: {e}", fields[0]))
        })?;
        let line = fields[2].parse::<u32>().map_err(|e| {
            CorpusError::DecodeError(format!("line {line_no}: bad line number `{}`: {e}", fields[2]))
        })?;
        if line == 0 {
            return Err(CorpusError::DecodeError(format!(
                "line {line_no}: source lines are 1-based"
            )));
        }
        entries.push(LineEntry {
            address,
            file: fields[1].to_owned(),
            line,
        });
    }
    DebugLineMap::from_entries(entries)
}

/// One of the fourteen recorded unsafe operation types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct UnsafeType(u8);

impl UnsafeType {
    /// Validate and wrap a raw type id.
    pub fn new(id: u8) -> Result<Self, CorpusError> {
        if (1..=14).contains(&id) {
            Ok(UnsafeType(id))
        } else {
            Err(CorpusError::InvalidUnsafeType(id))
        }
    }

    /// The raw id in `1..=14`.
    pub fn id(self) -> u8 {
        self.0
    }

    /// Human-readable name of the operation type.
    pub fn name(self) -> &'static str {
        match self.0 {
            1 => "CallToUnsafeFunctionInternal",
            2 => "CallToUnsafeFunctionExternal",
            3 => "UseOfInlineAssembly",
            4 => "InitializingTypeWith",
            5 => "CastOfPointerToInt",
            6 => "UseOfMutableStatic",
            7 => "UseOfExternStatic",
            8 => "DerefOfRawPointer",
            9 => "AssignToDroppingUnionField",
            10 => "AccessToUnionField",
            11 => "MutationOfLayoutConstrainedField",
            12 => "BorrowOfLayoutConstrainedField",
            13 => "CallToFunctionWith",
            14 => "UnsafeFunction",
            _ => unreachable!("invariant: id in 1..=14"),
        }
    }

    /// All fourteen type ids in ascending order.
    pub fn all() -> impl Iterator<Item = UnsafeType> {
        (1..=14).map(UnsafeType)
    }
}

impl TryFrom<u8> for UnsafeType {
    type Error = CorpusError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        UnsafeType::new(v)
    }
}

impl From<UnsafeType> for u8 {
    fn from(t: UnsafeType) -> u8 {
        t.0
    }
}

impl fmt::Display for UnsafeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Kind of a recorded source span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpanKind {
    /// Region compiled from an unsafe operation of the given type. Whole
    /// `unsafe fn` bodies arrive as ordinary spans of type 14.
    Unsafe(UnsafeType),
    /// Region implicated in a report-style bug record.
    Bug(BugMarker),
}

/// Serialization marker for bug spans (`"kind": "bug"`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BugMarker {
    #[serde(rename = "bug")]
    Bug,
}

/// Marker value for constructing bug spans.
pub const BUG: SpanKind = SpanKind::Bug(BugMarker::Bug);

/// An inclusive range of source lines recorded at compile time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpan {
    /// Source file path, matched exactly against line-map rows.
    pub file: String,
    /// First line of the span (1-based, inclusive).
    pub line_start: u32,
    /// Last line of the span (inclusive).
    pub line_end: u32,
    /// What the span records.
    pub kind: SpanKind,
}

impl SourceSpan {
    /// True when `(file, line)` falls inside this span.
    pub fn contains(&self, file: &str, line: u32) -> bool {
        self.file == file && self.line_start <= line && line <= self.line_end
    }
}

/// A function's unsafe label set `u ⊆ {0..14}`.
///
/// The safe label `0` is exclusive: `u = {0}` when no unsafe type applies,
/// and `0 ∉ u` otherwise. The set is never empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct UnsafeLabels(BTreeSet<u8>);

impl UnsafeLabels {
    /// The safe label set `{0}`.
    pub fn safe() -> Self {
        UnsafeLabels(BTreeSet::from([0]))
    }

    /// Build from unsafe types; an empty collection yields `{0}`.
    pub fn from_types<I: IntoIterator<Item = UnsafeType>>(types: I) -> Self {
        let set: BTreeSet<u8> = types.into_iter().map(|t| t.id()).collect();
        if set.is_empty() {
            Self::safe()
        } else {
            UnsafeLabels(set)
        }
    }

    /// True when the set is exactly `{0}`.
    pub fn is_safe(&self) -> bool {
        self.0.contains(&0)
    }

    /// True when at least one unsafe type applies.
    pub fn is_unsafe(&self) -> bool {
        !self.is_safe()
    }

    /// Membership test over the full class range `0..=14`.
    pub fn contains(&self, class: u8) -> bool {
        self.0.contains(&class)
    }

    /// Iterate the member class ids in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        self.0.iter().copied()
    }
}

impl TryFrom<Vec<u8>> for UnsafeLabels {
    type Error = CorpusError;
    fn try_from(v: Vec<u8>) -> Result<Self, Self::Error> {
        let set: BTreeSet<u8> = v.into_iter().collect();
        if set.is_empty() {
            return Err(CorpusError::InvalidLabelSet("label set is empty".into()));
        }
        if let Some(&max) = set.iter().next_back() {
            if max > 14 {
                return Err(CorpusError::InvalidUnsafeType(max));
            }
        }
        if set.contains(&0) && set.len() > 1 {
            return Err(CorpusError::InvalidLabelSet(
                "safe label 0 must be exclusive".into(),
            ));
        }
        Ok(UnsafeLabels(set))
    }
}

impl From<UnsafeLabels> for Vec<u8> {
    fn from(l: UnsafeLabels) -> Vec<u8> {
        l.0.into_iter().collect()
    }
}

mod bug_flag {
    //! `y` is serialized as `0 | 1 | null`.
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<bool>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(b) => s.serialize_u8(u8::from(*b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<bool>, D::Error> {
        let raw = Option::<u8>::deserialize(d)?;
        match raw {
            None => Ok(None),
            Some(0) => Ok(Some(false)),
            Some(1) => Ok(Some(true)),
            Some(other) => Err(serde::de::Error::custom(format!(
                "bug flag must be 0, 1, or null, got {other}"
            ))),
        }
    }
}

/// A function together with its projected labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFunction {
    /// The underlying disassembled function.
    #[serde(flatten)]
    pub function: FunctionRecord,
    /// Unsafe label set.
    #[serde(rename = "u")]
    pub labels: UnsafeLabels,
    /// Bug flag for report-style corpora; `None` when the corpus records no
    /// bug spans at all.
    #[serde(rename = "y", with = "bug_flag", default)]
    pub bug: Option<bool>,
}

/// Which role a corpus plays in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Training data for the score function.
    Train,
    /// Validation data; doubles as the calibration set.
    #[serde(alias = "cal")]
    Val,
    /// Held-out test data.
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// Free-form origin metadata carried alongside a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Grouping keys (package names or report ids) present in this corpus.
    #[serde(default)]
    pub groups: BTreeSet<String>,
    /// Instructions that had no line-map row during projection.
    #[serde(default)]
    pub missing_line_info: u64,
    /// Anything else worth recording.
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

/// A named, split-assigned set of labeled functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    /// Display name.
    pub name: String,
    /// Pipeline role.
    pub split: Split,
    /// Member functions, unique by `function_id`.
    pub functions: Vec<LabeledFunction>,
    /// Origin metadata.
    pub provenance: Provenance,
}

impl Corpus {
    /// Assemble a corpus, enforcing `function_id` uniqueness.
    pub fn new(
        name: impl Into<String>,
        split: Split,
        functions: Vec<LabeledFunction>,
        provenance: Provenance,
    ) -> Result<Self, CorpusError> {
        let mut seen = BTreeSet::new();
        for f in &functions {
            if !seen.insert(f.function.function_id.as_str()) {
                return Err(CorpusError::DuplicateFunction(
                    f.function.function_id.clone(),
                ));
            }
        }
        Ok(Corpus {
            name: name.into(),
            split,
            functions,
            provenance,
        })
    }

    /// Number of member functions.
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    /// True when the corpus has no functions.
    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Index the member function records for call resolution.
    pub fn index(&self) -> FunctionIndex<'_> {
        FunctionIndex::from_labeled(&self.functions)
    }
}

/// Result of projecting spans onto a set of functions.
#[derive(Debug, Clone)]
pub struct LabelProjection {
    /// Functions with their projected label sets.
    pub functions: Vec<LabeledFunction>,
    /// Instructions whose address had no line-map row. These contribute no
    /// labels; the count is surfaced so lossy debug info is visible.
    pub missing_line_info: u64,
}

/// Project recorded source spans onto disassembled functions.
///
/// An instruction carries unsafe type `t` exactly when its `(file, line)`
/// under `lines` lies inside a span of kind `t`; a function's label set is
/// the union over its instructions, or `{0}` when the union is empty. Bug
/// spans work the same way and set the per-function bug flag; the flag stays
/// `None` for every function when `spans` records no bug span at all.
pub fn project_labels(
    functions: Vec<FunctionRecord>,
    lines: &DebugLineMap,
    spans: &[SourceSpan],
) -> LabelProjection {
    let report_style = spans.iter().any(|s| matches!(s.kind, SpanKind::Bug(_)));
    let mut missing = 0u64;
    let mut out = Vec::with_capacity(functions.len());
    for function in functions {
        let mut types: BTreeSet<UnsafeType> = BTreeSet::new();
        let mut bug_hit = false;
        for ins in &function.instructions {
            let Some((file, line)) = lines.lookup(ins.address) else {
                missing += 1;
                continue;
            };
            for span in spans {
                if span.contains(file, line) {
                    match span.kind {
                        SpanKind::Unsafe(t) => {
                            types.insert(t);
                        }
                        SpanKind::Bug(_) => bug_hit = true,
                    }
                }
            }
        }
        out.push(LabeledFunction {
            function,
            labels: UnsafeLabels::from_types(types),
            bug: report_style.then_some(bug_hit),
        });
    }
    LabelProjection {
        functions: out,
        missing_line_info: missing,
    }
}

/// Fractions of grouping keys assigned to each split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    /// Share of groups for training.
    pub train: f64,
    /// Share of groups for validation/calibration.
    pub val: f64,
    /// Share of groups for testing.
    pub test: f64,
}

impl SplitFractions {
    fn validate(&self) -> Result<(), CorpusError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(CorpusError::InvalidFractions(
                "fractions must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidFractions(format!(
                "fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

/// The three corpora produced by [`split_corpus`].
#[derive(Debug, Clone)]
pub struct SplitCorpora {
    /// Training corpus.
    pub train: Corpus,
    /// Validation/calibration corpus.
    pub val: Corpus,
    /// Test corpus.
    pub test: Corpus,
}

/// Deterministic Fisher-Yates shuffle driven by `next_u64 % (i + 1)`.
///
/// The shuffle is pinned here rather than delegated so the assignment is
/// reproducible independently of RNG-library shuffle internals.
pub(crate) fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

/// Partition functions into train/val/test corpora by grouping key.
///
/// Every function must map to a grouping key (package name or report id);
/// all functions sharing a key land in the same split so near-duplicate
/// builds of one package cannot leak across splits. Keys are sorted, shuffled
/// with a seeded generator, and cut at `ceil(f·G)` boundaries, so a single
/// group always lands in train. Function order within each split follows the
/// input order.
pub fn split_corpus<F>(
    name: &str,
    functions: Vec<LabeledFunction>,
    group_of: F,
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitCorpora, CorpusError>
where
    F: Fn(&LabeledFunction) -> Option<String>,
{
    if functions.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    fractions.validate()?;

    let mut key_of: Vec<String> = Vec::with_capacity(functions.len());
    for f in &functions {
        let key = group_of(f)
            .ok_or_else(|| CorpusError::MissingGroupKey(f.function.function_id.clone()))?;
        key_of.push(key);
    }
    let mut keys: Vec<String> = key_of.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle(&mut keys, &mut rng);

    let g = keys.len();
    let b1 = ((fractions.train * g as f64).ceil() as usize).min(g);
    let b2 = (((fractions.train + fractions.val) * g as f64).ceil() as usize).clamp(b1, g);
    let assignment: BTreeMap<&str, Split> = keys
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let split = if i < b1 {
                Split::Train
            } else if i < b2 {
                Split::Val
            } else {
                Split::Test
            };
            (k.as_str(), split)
        })
        .collect();

    let mut buckets: BTreeMap<Split, (Vec<LabeledFunction>, BTreeSet<String>)> = BTreeMap::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        buckets.insert(split, (Vec::new(), BTreeSet::new()));
    }
    for (f, key) in functions.into_iter().zip(key_of) {
        let split = assignment[key.as_str()];
        let bucket = buckets.get_mut(&split).expect("bucket exists");
        bucket.0.push(f);
        bucket.1.insert(key);
    }

    let mut build = |split: Split, suffix: &str| -> Result<Corpus, CorpusError> {
        let (functions, groups) = buckets.remove(&split).expect("bucket exists");
        Corpus::new(
            format!("{name}/{suffix}"),
            split,
            functions,
            Provenance {
                groups,
                ..Provenance::default()
            },
        )
    };
    Ok(SplitCorpora {
        train: build(Split::Train, "train")?,
        val: build(Split::Val, "val")?,
        test: build(Split::Test, "test")?,
    })
}

impl std::hash::Hash for Split {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        (*self as u8).hash(state);
    }
}

impl PartialOrd for Split {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Split {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (*self as u8).cmp(&(*other as u8))
    }
}
