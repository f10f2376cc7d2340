//! Synthetic paired corpora of ESIL-like functions.
//!
//! Every label gets a base program over abstract instructions. Each variant
//! renders it for one pseudo-architecture (its register alphabet, stack and
//! program-counter names, word width) and then applies stochastic
//! mutations. Immediates, memory addresses and call/data targets are redrawn
//! per variant; normalization erases them.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{EsilInstruction, OpcodeCategory, RawFunction};
use crate::normalize::{canonical_architecture, DEFAULT_ADDR_MIN};
use crate::{Error, Result};

/// Per-variant mutation probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MutationRates {
    /// Per operator token: replaced by a random operator.
    pub substitution: f64,
    /// Per instruction: a random instruction is inserted before it.
    pub insertion: f64,
    /// Per instruction: dropped.
    pub deletion: f64,
    /// Per variant (except the first): registers are permuted consistently.
    pub register_renaming: f64,
}

impl Default for MutationRates {
    fn default() -> Self {
        Self::uniform(0.1)
    }
}

impl MutationRates {
    pub fn uniform(rate: f64) -> Self {
        Self {
            substitution: rate,
            insertion: rate,
            deletion: rate,
            register_renaming: rate,
        }
    }

    pub fn none() -> Self {
        Self::uniform(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_labels: usize,
    pub variants_per_label: usize,
    /// Variant `v` is rendered for `architectures[v % len]`.
    pub architectures: Vec<String>,
    /// When false every variant uses the first architecture.
    pub architecture_renaming: bool,
    /// Fraction of the operator alphabet each non-first architecture
    /// spells differently (a fixed permutation per architecture).
    pub operator_renaming: f64,
    pub alphabet_size: usize,
    /// Inclusive instruction-count range of base programs.
    pub body_len: (usize, usize),
    pub mutation: MutationRates,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_labels: 200,
            variants_per_label: 4,
            architectures: ["x86-64", "arm64", "mips32", "riscv64"].map(String::from).to_vec(),
            architecture_renaming: true,
            operator_renaming: 1.0,
            alphabet_size: 24,
            body_len: (16, 18),
            mutation: MutationRates::default(),
            seed: 0,
        }
    }
}

const ESIL_OPS: [&str; 12] = ["+", "-", "*", "/", "%", "^", "&", "|", "<<", ">>", "<<<", ">>>"];

/// Register slots a base program may use; every arch has at least this many.
const SLOTS: usize = 7;

struct ArchProfile {
    name: String,
    /// Spelling of each abstract operator on this architecture.
    operators: Vec<String>,
    bitness: u32,
    registers: Vec<String>,
    sp: &'static str,
    pc: &'static str,
}

fn profile(arch: &str) -> Result<ArchProfile> {
    let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let numbered = |p: &str, r: std::ops::Range<usize>| r.map(|n| format!("{p}{n}")).collect::<Vec<_>>();
    let (bitness, registers, sp, pc) = match canonical_architecture(arch).as_str() {
        "x8664" => {
            let mut r = names(&["rax", "rbx", "rcx", "rdx", "rsi", "rdi"]);
            r.extend(numbered("r", 8..16));
            (64, r, "rsp", "rip")
        }
        "x86" => (32, names(&["eax", "ebx", "ecx", "edx", "esi", "edi", "ebp"]), "esp", "eip"),
        "arm64" => (64, numbered("x", 0..16), "sp", "pc"),
        "arm32" => (32, numbered("r", 0..13), "sp", "pc"),
        k @ ("mips32" | "mips64") => {
            let mut r = numbered("a", 0..4);
            r.extend(numbered("t", 0..8));
            r.extend(numbered("s", 0..8));
            (if k == "mips32" { 32 } else { 64 }, r, "sp", "pc")
        }
        k @ ("riscv32" | "riscv64") => {
            let mut r = numbered("a", 0..8);
            r.extend(numbered("t", 0..7));
            r.extend(numbered("s", 1..12));
            (if k == "riscv32" { 32 } else { 64 }, r, "sp", "pc")
        }
        _ => return Err(Error::Config(format!("fixtures have no profile for architecture {arch}"))),
    };
    Ok(ArchProfile {
        name: arch.to_string(),
        operators: Vec::new(),
        bitness,
        registers,
        sp,
        pc,
    })
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.variants_per_label < 2 {
            return Err(Error::Config("variants_per_label must be >= 2".into()));
        }
        if self.architectures.is_empty() {
            return Err(Error::Config("at least one architecture is required".into()));
        }
        for a in &self.architectures {
            profile(a)?;
        }
        if self.alphabet_size < 2 {
            return Err(Error::Config("alphabet_size must be >= 2".into()));
        }
        let (lo, hi) = self.body_len;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("invalid body length range {lo}..={hi}")));
        }
        let m = self.mutation;
        for (name, r) in [
            ("operator_renaming", self.operator_renaming),
            ("substitution", m.substitution),
            ("insertion", m.insertion),
            ("deletion", m.deletion),
            ("register_renaming", m.register_renaming),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} rate {r} outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn alphabet(&self) -> Vec<String> {
        let mut ops: Vec<String> = ESIL_OPS.iter().take(self.alphabet_size).map(|s| s.to_string()).collect();
        ops.extend((ops.len()..self.alphabet_size).map(|k| format!("op{k}")));
        ops
    }
}

#[derive(Debug, Clone, Copy)]
enum Tok {
    Lit(&'static str),
    Reg(usize),
    Op(usize),
    /// Operator followed by `=`, as in `+=`.
    OpAssign(usize),
    Dec(u32),
    Imm,
    Mem,
    Target,
    Sp,
    Pc,
    Word,
    Load,
    Store,
}

#[derive(Debug, Clone)]
struct Inst {
    toks: Vec<Tok>,
    call: bool,
}

fn random_inst<R: Rng>(rng: &mut R, ops: usize) -> Inst {
    use Tok::*;
    let reg = |rng: &mut R| Reg(rng.random_range(0..SLOTS));
    let op = rng.random_range(0..ops);
    let call = false;
    let toks = match rng.random_range(0..12) {
        0 => vec![reg(rng), reg(rng), Lit("=")],
        1 => vec![reg(rng), Dec(4 * rng.random_range(1..16)), Op(op), Load, reg(rng), Lit("=")],
        2 => vec![reg(rng), reg(rng), Dec(4 * rng.random_range(1..16)), Op(op), Store],
        3 => vec![Imm, reg(rng), OpAssign(op)],
        4 => vec![reg(rng), reg(rng), OpAssign(op)],
        5 => vec![Imm, reg(rng), Lit("=="), Lit("$z"), Lit("zf"), Lit(":=")],
        6 => vec![Mem, Pc, Lit("=")],
        7 => vec![Target, reg(rng), Lit("=")],
        8 => {
            return Inst {
                toks: vec![Target, Pc, Word, Sp, Lit("-="), Sp, Store, Pc, Lit("=")],
                call: true,
            }
        }
        9 => vec![reg(rng), Word, Sp, Lit("-="), Sp, Store],
        10 => vec![Sp, Load, reg(rng), Lit("="), Word, Sp, Lit("+=")],
        _ => vec![Lit("zf"), Lit("?{"), Mem, Pc, Lit("="), Lit("}")],
    };
    Inst { toks, call }
}

fn mutate<R: Rng>(base: &[Inst], rates: &MutationRates, ops: usize, rng: &mut R) -> Vec<Inst> {
    let mut out = Vec::with_capacity(base.len() + 4);
    for inst in base {
        if rng.random_bool(rates.insertion) {
            out.push(random_inst(rng, ops));
        }
        if rng.random_bool(rates.deletion) {
            continue;
        }
        let mut inst = inst.clone();
        for t in inst.toks.iter_mut() {
            if let Tok::Op(k) | Tok::OpAssign(k) = t {
                if rng.random_bool(rates.substitution) {
                    *k = rng.random_range(0..ops);
                }
            }
        }
        out.push(inst);
    }
    if out.is_empty() {
        out.push(base[0].clone());
    }
    out
}

fn render<R: Rng>(insts: &[Inst], arch: &ArchProfile, slots: &[usize], rng: &mut R) -> Vec<EsilInstruction> {
    let word = arch.bitness / 8;
    insts
        .iter()
        .map(|inst| {
            let parts: Vec<String> = inst
                .toks
                .iter()
                .map(|t| match *t {
                    Tok::Lit(s) => s.to_string(),
                    Tok::Reg(s) => arch.registers[slots[s]].clone(),
                    Tok::Op(k) => arch.operators[k].clone(),
                    Tok::OpAssign(k) => format!("{}=", arch.operators[k]),
                    Tok::Dec(v) => v.to_string(),
                    Tok::Imm => format!("0x{:x}", rng.random_range(1u32..0x1000)),
                    Tok::Mem => format!("0x{:x}", rng.random_range(0x1_0000u32..0x100_0000)),
                    Tok::Target => rng.random_range(DEFAULT_ADDR_MIN..1 << 24).to_string(),
                    Tok::Sp => arch.sp.to_string(),
                    Tok::Pc => arch.pc.to_string(),
                    Tok::Word => word.to_string(),
                    Tok::Load => format!("[{word}]"),
                    Tok::Store => format!("=[{word}]"),
                })
                .collect();
            let category = if inst.call { OpcodeCategory::Call } else { OpcodeCategory::Other };
            EsilInstruction::new(parts.join(","), category)
        })
        .collect()
}

/// A slot-to-register assignment that differs from the identity on at
/// least one slot the program uses.
fn renaming<R: Rng>(n_regs: usize, used: &[bool], rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n_regs).collect();
    if !used.iter().any(|&u| u) {
        return perm;
    }
    loop {
        perm.shuffle(rng);
        if (0..SLOTS).any(|s| used[s] && perm[s] != s) {
            return perm;
        }
    }
}

/// Architecture `arch_index` permutes a random subset of the alphabet; the
/// first architecture keeps the canonical spelling.
fn operator_spelling(alphabet: &[String], fraction: f64, seed: u64, arch_index: usize) -> Vec<String> {
    let mut ops = alphabet.to_vec();
    if arch_index == 0 {
        return ops;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f70_7370_656c_6c00);
    rng.set_stream(arch_index as u64);
    let count = (fraction * alphabet.len() as f64).round() as usize;
    let chosen: Vec<usize> = rand::seq::index::sample(&mut rng, alphabet.len(), count).into_vec();
    let mut shuffled = chosen.clone();
    shuffled.shuffle(&mut rng);
    for (&dst, &src) in chosen.iter().zip(&shuffled) {
        ops[dst] = alphabet[src].clone();
    }
    ops
}

const COMPILERS: [&str; 2] = ["gcc", "clang"];
const OPT_LEVELS: [&str; 4] = ["O0", "O1", "O2", "O3"];

fn label_variants(cfg: &SynthConfig, profiles: &[ArchProfile], alphabet: &[String], label: usize) -> Vec<RawFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(label as u64);
    let ops = alphabet.len();
    let len = rng.random_range(cfg.body_len.0..=cfg.body_len.1);
    let base: Vec<Inst> = (0..len).map(|_| random_inst(&mut rng, ops)).collect();
    let mut used = [false; SLOTS];
    for inst in &base {
        for t in &inst.toks {
            if let Tok::Reg(s) = t {
                used[*s] = true;
            }
        }
    }
    let name = format!("fn_{label:05}");
    (0..cfg.variants_per_label)
        .map(|v| {
            let arch = if cfg.architecture_renaming {
                &profiles[v % profiles.len()]
            } else {
                &profiles[0]
            };
            let n_regs = arch.registers.len();
            let slots = if v > 0 && rng.random_bool(cfg.mutation.register_renaming) {
                renaming(n_regs, &used, &mut rng)
            } else {
                (0..n_regs).collect()
            };
            let insts = mutate(&base, &cfg.mutation, ops, &mut rng);
            let compiler = *COMPILERS.choose(&mut rng).expect("non-empty");
            let opt = *OPT_LEVELS.choose(&mut rng).expect("non-empty");
            RawFunction {
                name: name.clone(),
                binary_id: format!("synth-{}-{v}", arch.name),
                architecture: arch.name.clone(),
                bitness: arch.bitness,
                compiler: compiler.to_string(),
                opt_level: opt.to_string(),
                instructions: render(&insts, arch, &slots, &mut rng),
            }
        })
        .collect()
}

/// Generates `num_labels × variants_per_label` functions, label-major.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<RawFunction>> {
    cfg.validate()?;
    let alphabet = cfg.alphabet();
    let mut profiles = cfg
        .architectures
        .iter()
        .map(|a| profile(a))
        .collect::<Result<Vec<_>>>()?;
    for (i, p) in profiles.iter_mut().enumerate() {
        p.operators = operator_spelling(&alphabet, cfg.operator_renaming, cfg.seed, i);
    }
    let per_label: Vec<Vec<RawFunction>> = (0..cfg.num_labels)
        .into_par_iter()
        .map(|l| label_variants(cfg, &profiles, &alphabet, l))
        .collect();
    Ok(per_label.into_iter().flatten().collect())
}
