//! Shared corpus generators for the acceptance suite.
//!
//! Everything here is deterministic in its seed so that acceptance runs are
//! reproducible bit for bit.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use unsafespot_core::corpus::{
    Corpus, FunctionRecord, Instruction, LabeledFunction, LineEntry, Provenance, SourceSpan,
    SpanKind, Split, UnsafeLabels, UnsafeType, BUG,
};

/// Filler mnemonics shared by every synthetic corpus.
pub const FILLERS: &[&str] = &[
    "mov", "add", "sub", "xor", "cmp", "jmp", "push", "pop", "lea", "test",
];

pub fn ins(address: u64, mnemonic: &str, operands: &[&str]) -> Instruction {
    Instruction {
        address,
        mnemonic: mnemonic.to_owned(),
        operands: operands.iter().map(|s| (*s).to_owned()).collect(),
        call_target: None,
    }
}

pub fn function(
    id: &str,
    binary: &str,
    start: u64,
    instructions: Vec<Instruction>,
) -> FunctionRecord {
    let end = instructions
        .last()
        .map(|i| i.address + 4)
        .unwrap_or(start);
    FunctionRecord {
        function_id: id.to_owned(),
        binary_id: binary.to_owned(),
        start,
        end,
        instructions,
        callees: Vec::new(),
    }
}

pub fn labeled(function: FunctionRecord, types: &[u8], bug: Option<bool>) -> LabeledFunction {
    let labels = if types.is_empty() {
        UnsafeLabels::safe()
    } else {
        UnsafeLabels::from_types(types.iter().map(|t| UnsafeType::new(*t).unwrap()))
    };
    LabeledFunction {
        function,
        labels,
        bug,
    }
}

pub fn corpus(name: &str, split: Split, functions: Vec<LabeledFunction>) -> Corpus {
    Corpus::new(name, split, functions, Provenance::default()).unwrap()
}

/// A function body of `len` filler instructions drawn from [`FILLERS`], with
/// an optional extra marker mnemonic appended. Marker presence is the only
/// label signal any generator here plants.
fn body(rng: &mut ChaCha8Rng, start: u64, len: usize, marker: Option<&str>) -> Vec<Instruction> {
    let mut instructions = Vec::with_capacity(len + 1);
    for k in 0..len {
        let mnemonic = FILLERS[rng.random_range(0..FILLERS.len())];
        let reg = ["rax", "rbx", "rcx", "rdx"][rng.random_range(0..4)];
        instructions.push(ins(start + 4 * k as u64, mnemonic, &[reg]));
    }
    if let Some(m) = marker {
        instructions.push(ins(start + 4 * len as u64, m, &[]));
    }
    instructions
}

/// Source-domain corpus: unsafe functions carry `umark`, safe ones `smark`,
/// and `mshift` appears in both classes at the same rate, so it lands in the
/// vocabulary without carrying any signal.
pub fn separable_source(name: &str, split: Split, n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut functions = Vec::with_capacity(n);
    for i in 0..n {
        let is_unsafe = rng.random::<f64>() < 0.3;
        let start = 0x1000 * (i as u64 + 1);
        let len = rng.random_range(3..=10);
        let marker = if is_unsafe { "umark" } else { "smark" };
        let mut instructions = body(&mut rng, start, len, Some(marker));
        if rng.random::<f64>() < 0.5 {
            let next = instructions.last().unwrap().address + 4;
            instructions.push(ins(next, "mshift", &[]));
        }
        let types: Vec<u8> = if is_unsafe {
            vec![1 + (i % 14) as u8]
        } else {
            Vec::new()
        };
        functions.push(labeled(
            function(&format!("{name}_f{i}"), "src-bin", start, instructions),
            &types,
            None,
        ));
    }
    corpus(name, split, functions)
}

/// Target-domain corpus under covariate shift: the source markers are gone
/// and `mshift` now separates unsafe from safe.
pub fn shifted_target(name: &str, split: Split, n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut functions = Vec::with_capacity(n);
    for i in 0..n {
        let is_unsafe = rng.random::<f64>() < 0.3;
        let start = 0x1000 * (i as u64 + 1);
        let len = rng.random_range(3..=10);
        let marker = if is_unsafe { Some("mshift") } else { None };
        let instructions = body(&mut rng, start, len, marker);
        let types: Vec<u8> = if is_unsafe {
            vec![1 + (i % 14) as u8]
        } else {
            Vec::new()
        };
        functions.push(labeled(
            function(&format!("{name}_f{i}"), "tgt-bin", start, instructions),
            &types,
            None,
        ));
    }
    corpus(name, split, functions)
}

/// Large corpus with an informative but imperfect marker: unsafe functions
/// carry `umark` with probability 0.8, safe ones with probability 0.05.
/// Body length (hence deep size) varies widely and independently of the
/// label.
pub fn noisy_corpus(name: &str, split: Split, n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut functions = Vec::with_capacity(n);
    for i in 0..n {
        let is_unsafe = rng.random::<f64>() < 0.2;
        let marked = if is_unsafe {
            rng.random::<f64>() < 0.8
        } else {
            rng.random::<f64>() < 0.05
        };
        let start = 0x1000 * (i as u64 + 1);
        let len = rng.random_range(1..=60);
        let marker = if marked { Some("umark") } else { None };
        let instructions = body(&mut rng, start, len, marker);
        let types: Vec<u8> = if is_unsafe {
            vec![1 + (i % 14) as u8]
        } else {
            Vec::new()
        };
        functions.push(labeled(
            function(&format!("{name}_f{i}"), "big-bin", start, instructions),
            &types,
            None,
        ));
    }
    corpus(name, split, functions)
}

/// Small corpus with arbitrary label sets, sizes, and (on demand) bug flags,
/// for exhaustive metric cross-checks.
pub fn random_small_corpus(seed: u64, with_bugs: bool) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=12);
    let mut functions = Vec::with_capacity(n);
    for i in 0..n {
        let start = 0x1000 * (i as u64 + 1);
        let len = rng.random_range(1..=6);
        let instructions = body(&mut rng, start, len, None);
        let mut types = Vec::new();
        if rng.random::<f64>() < 0.5 {
            let k = rng.random_range(1..=3);
            for _ in 0..k {
                let t = rng.random_range(1..=14u8);
                if !types.contains(&t) {
                    types.push(t);
                }
            }
        }
        let bug = with_bugs.then(|| rng.random::<f64>() < 0.3);
        functions.push(labeled(
            function(&format!("s{seed}_f{i}"), "small-bin", start, instructions),
            &types,
            bug,
        ));
    }
    corpus(&format!("small-{seed}"), Split::Test, functions)
}

/// One fuzz-generated label-projection instance: functions, raw line-map
/// rows, and recorded spans. Roughly a tenth of instances carry no spans at
/// all.
pub fn projection_instance(
    seed: u64,
) -> (Vec<FunctionRecord>, Vec<LineEntry>, Vec<SourceSpan>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let files = ["a.rs", "b.rs", "c.rs"];
    let n_funcs = rng.random_range(1..=6);
    let mut records = Vec::with_capacity(n_funcs);
    let mut entries = Vec::new();
    for f in 0..n_funcs {
        let start = 0x1000 * (f as u64 + 1);
        let len = rng.random_range(1..=8);
        let instructions = body(&mut rng, start, len, None);
        for instruction in &instructions {
            if rng.random::<f64>() < 0.8 {
                entries.push(LineEntry {
                    address: instruction.address,
                    file: files[rng.random_range(0..files.len())].to_owned(),
                    line: rng.random_range(1..=30),
                });
            }
        }
        records.push(function(&format!("p{seed}_f{f}"), "proj-bin", start, instructions));
    }
    let n_spans = if rng.random::<f64>() < 0.1 {
        0
    } else {
        rng.random_range(1..=5)
    };
    let mut spans = Vec::with_capacity(n_spans);
    for _ in 0..n_spans {
        let line_start = rng.random_range(1..=30);
        let line_end = (line_start + rng.random_range(0..=5)).min(30);
        let kind = if rng.random::<f64>() < 0.8 {
            SpanKind::Unsafe(UnsafeType::new(rng.random_range(1..=14)).unwrap())
        } else {
            BUG
        };
        spans.push(SourceSpan {
            file: files[rng.random_range(0..files.len())].to_owned(),
            line_start,
            line_end,
            kind,
        });
    }
    (records, entries, spans)
}
