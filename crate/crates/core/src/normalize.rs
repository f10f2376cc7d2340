//! Token-level normalization of ESIL function strings.
//!
//! Rules are applied per token in a fixed order, first match wins:
//!
//! 1. hex literal starting `0xfffff` -> `IMM`
//! 2. hex literal with 1-3 digits -> `IMM`
//! 3. hex literal with 4+ digits -> `MEM`
//! 4. decimal literal `>= addr_min` -> `FUNC` inside a call instruction, else `DATA`
//! 5. general-purpose register (register mode only) -> `reg32` / `reg64`
//!
//! Every rule rewrites one token into one token, so token counts are preserved.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FunctionMeta, FunctionString, OpcodeCategory};

pub const IMM: &str = "IMM";
pub const MEM: &str = "MEM";
pub const FUNC: &str = "FUNC";
pub const DATA: &str = "DATA";
pub const REG32: &str = "reg32";
pub const REG64: &str = "reg64";

/// Decimal literals at or above this value are treated as addresses.
pub const DEFAULT_ADDR_MIN: u64 = 4096;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationMode {
    pub register_normalization: bool,
}

impl NormalizationMode {
    pub const NRM: Self = Self {
        register_normalization: false,
    };
    pub const RN: Self = Self {
        register_normalization: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegisterWidth {
    Bits32,
    Bits64,
    Other,
}

impl RegisterWidth {
    fn from_bits(bits: u64) -> Self {
        match bits {
            32 => Self::Bits32,
            64 => Self::Bits64,
            _ => Self::Other,
        }
    }
}

/// Per-architecture register name to width-class maps.
///
/// Architecture names are matched after lowercasing and dropping `-`/`_`,
/// so `x86-64`, `x86_64` and `X8664` are the same key. Register lookup is
/// case-insensitive.
#[derive(Debug, Clone, Default)]
pub struct RegisterTable {
    tables: BTreeMap<String, HashMap<String, RegisterWidth>>,
}

/// Lower-cased architecture name with separators stripped and common
/// aliases folded (`amd64` and `x86-64` both become `x8664`).
pub fn canonical_architecture(arch: &str) -> String {
    let key: String = arch
        .chars()
        .filter(|c| *c != '-' && *c != '_')
        .flat_map(char::to_lowercase)
        .collect();
    match key.as_str() {
        "i386" | "i686" | "x8632" | "x32" => "x86".into(),
        "amd64" | "x64" => "x8664".into(),
        "arm" | "armv7" | "aarch32" => "arm32".into(),
        "aarch64" | "armv8" => "arm64".into(),
        "mips" => "mips32".into(),
        "riscv" | "rv32" => "riscv32".into(),
        "rv64" => "riscv64".into(),
        _ => key,
    }
}

impl RegisterTable {
    pub fn empty() -> Self {
        Self::default()
    }

    /// General-purpose register tables for x86, x86-64, ARM32, ARM64,
    /// MIPS32, MIPS64, RISC-V32 and RISC-V64. Program counters and flag
    /// registers are deliberately absent.
    pub fn builtin() -> Self {
        let mut t = Self::default();
        use RegisterWidth::*;

        let x86_32 = ["eax", "ebx", "ecx", "edx", "esi", "edi", "ebp", "esp"];
        t.insert_all("x86", x86_32.iter().map(|r| (r.to_string(), Bits32)));

        let mut x64: Vec<(String, RegisterWidth)> = [
            "rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rbp", "rsp",
        ]
        .iter()
        .map(|r| (r.to_string(), Bits64))
        .collect();
        x64.extend(x86_32.iter().map(|r| (r.to_string(), Bits32)));
        for n in 8..16 {
            x64.push((format!("r{n}"), Bits64));
            x64.push((format!("r{n}d"), Bits32));
        }
        t.insert_all("x86-64", x64);

        let mut arm32: Vec<(String, RegisterWidth)> =
            (0..13).map(|n| (format!("r{n}"), Bits32)).collect();
        arm32.extend(["sb", "sl", "fp", "ip", "sp", "lr"].iter().map(|r| (r.to_string(), Bits32)));
        t.insert_all("arm32", arm32);

        let mut arm64: Vec<(String, RegisterWidth)> = Vec::new();
        for n in 0..31 {
            arm64.push((format!("x{n}"), Bits64));
            arm64.push((format!("w{n}"), Bits32));
        }
        arm64.extend(["fp", "lr", "sp", "xzr"].iter().map(|r| (r.to_string(), Bits64)));
        arm64.extend(["wsp", "wzr"].iter().map(|r| (r.to_string(), Bits32)));
        t.insert_all("arm64", arm64);

        let mips_names = mips_gprs();
        t.insert_all("mips32", mips_names.iter().map(|r| (r.clone(), Bits32)));
        t.insert_all("mips64", mips_names.iter().map(|r| (r.clone(), Bits64)));

        let riscv_names = riscv_gprs();
        t.insert_all("riscv32", riscv_names.iter().map(|r| (r.clone(), Bits32)));
        t.insert_all("riscv64", riscv_names.iter().map(|r| (r.clone(), Bits64)));
        t
    }

    pub fn insert_all(
        &mut self,
        arch: &str,
        regs: impl IntoIterator<Item = (String, RegisterWidth)>,
    ) {
        let table = self.tables.entry(canonical_architecture(arch)).or_default();
        for (name, width) in regs {
            table.insert(name.to_lowercase(), width);
        }
    }

    /// Parses `{"<arch>": {"<reg>": 32 | 64, ...}, ...}`.
    ///
    /// Widths other than 32 and 64 are accepted and classed as
    /// [`RegisterWidth::Other`], which normalization leaves untouched.
    pub fn from_json<R: Read>(reader: R) -> Result<Self> {
        let raw: BTreeMap<String, BTreeMap<String, u64>> = serde_json::from_reader(reader)
            .map_err(|e| Error::RegisterTable(e.to_string()))?;
        let mut t = Self::default();
        for (arch, regs) in raw {
            if let Some(dup) = find_case_duplicate(regs.keys()) {
                return Err(Error::RegisterTable(format!(
                    "register {dup} listed twice for {arch}"
                )));
            }
            t.insert_all(
                &arch,
                regs.into_iter().map(|(r, w)| (r, RegisterWidth::from_bits(w))),
            );
        }
        Ok(t)
    }

    /// Replaces whole architecture tables with those from `other`.
    pub fn override_with(&mut self, other: RegisterTable) {
        self.tables.extend(other.tables);
    }

    pub fn has_architecture(&self, arch: &str) -> bool {
        self.tables.contains_key(&canonical_architecture(arch))
    }

    pub fn architecture(&self, arch: &str) -> Option<ArchRegisters<'_>> {
        self.tables.get(&canonical_architecture(arch)).map(ArchRegisters)
    }

    pub fn lookup(&self, arch: &str, register: &str) -> Option<RegisterWidth> {
        self.architecture(arch)?.lookup(register)
    }
}

fn find_case_duplicate<'a>(names: impl Iterator<Item = &'a String>) -> Option<String> {
    let mut seen = std::collections::HashSet::new();
    names
        .map(|n| n.to_lowercase())
        .find(|n| !seen.insert(n.clone()))
}

fn mips_gprs() -> Vec<String> {
    let mut v: Vec<String> = ["zero", "at", "v0", "v1", "gp", "sp", "fp", "ra", "k0", "k1"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    v.extend((0..4).map(|n| format!("a{n}")));
    v.extend((0..10).map(|n| format!("t{n}")));
    v.extend((0..9).map(|n| format!("s{n}")));
    v
}

fn riscv_gprs() -> Vec<String> {
    let mut v: Vec<String> = ["zero", "ra", "sp", "gp", "tp", "fp"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    v.extend((0..32).map(|n| format!("x{n}")));
    v.extend((0..7).map(|n| format!("t{n}")));
    v.extend((0..12).map(|n| format!("s{n}")));
    v.extend((0..8).map(|n| format!("a{n}")));
    v
}

/// One architecture's view into a [`RegisterTable`].
#[derive(Debug, Clone, Copy)]
pub struct ArchRegisters<'a>(&'a HashMap<String, RegisterWidth>);

impl ArchRegisters<'_> {
    pub fn lookup(&self, register: &str) -> Option<RegisterWidth> {
        if let Some(w) = self.0.get(register) {
            return Some(*w);
        }
        if register.bytes().any(|b| b.is_ascii_uppercase()) {
            return self.0.get(&register.to_ascii_lowercase()).copied();
        }
        None
    }
}

/// Per-token context the rules depend on.
#[derive(Debug, Clone, Copy)]
pub struct TokenContext<'a> {
    pub opcode_category: OpcodeCategory,
    pub registers: Option<ArchRegisters<'a>>,
    pub mode: NormalizationMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedFunction {
    pub label: String,
    pub meta: FunctionMeta,
    pub body: String,
    pub token_count: usize,
}

impl NormalizedFunction {
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.body.split(',')
    }
}

fn hex_digits(tok: &str) -> Option<&str> {
    let digits = tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X"))?;
    (!digits.is_empty() && digits.bytes().all(|b| b.is_ascii_hexdigit())).then_some(digits)
}

fn decimal_at_least(tok: &str, min: u64) -> bool {
    if tok.is_empty() || !tok.bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    // Anything too long for u64 is certainly above any threshold.
    tok.parse::<u64>().map_or(true, |v| v >= min)
}

#[derive(Debug, Clone)]
pub struct Normalizer {
    pub mode: NormalizationMode,
    pub addr_min: u64,
    pub registers: RegisterTable,
}

impl Normalizer {
    pub fn new(mode: NormalizationMode) -> Self {
        Self {
            mode,
            addr_min: DEFAULT_ADDR_MIN,
            registers: RegisterTable::builtin(),
        }
    }

    pub fn with_addr_min(mut self, addr_min: u64) -> Self {
        self.addr_min = addr_min;
        self
    }

    pub fn with_registers(mut self, registers: RegisterTable) -> Self {
        self.registers = registers;
        self
    }

    pub fn normalize_token<'t>(&self, tok: &'t str, ctx: &TokenContext<'_>) -> &'t str {
        normalize_token(tok, ctx, self.addr_min)
    }

    pub fn normalize_function(&self, fs: &FunctionString) -> Result<NormalizedFunction> {
        let registers = if self.mode.register_normalization {
            Some(
                self.registers
                    .architecture(&fs.meta.architecture)
                    .ok_or_else(|| Error::MissingRegisterTable(fs.meta.architecture.clone()))?,
            )
        } else {
            None
        };
        let mut body = String::with_capacity(fs.body.len());
        let mut token_count = 0;
        for (tok, cat) in fs.categorized_tokens() {
            let ctx = TokenContext {
                opcode_category: cat,
                registers,
                mode: self.mode,
            };
            if token_count > 0 {
                body.push(',');
            }
            body.push_str(normalize_token(tok, &ctx, self.addr_min));
            token_count += 1;
        }
        Ok(NormalizedFunction {
            label: fs.label.clone(),
            meta: fs.meta.clone(),
            body,
            token_count,
        })
    }
}

/// Applies the first matching rewrite rule to a single comma-free token.
pub fn normalize_token<'t>(tok: &'t str, ctx: &TokenContext<'_>, addr_min: u64) -> &'t str {
    if let Some(digits) = hex_digits(tok) {
        if digits.len() >= 5 && digits[..5].eq_ignore_ascii_case("fffff") {
            return IMM;
        }
        return if digits.len() <= 3 { IMM } else { MEM };
    }
    if decimal_at_least(tok, addr_min) {
        return match ctx.opcode_category {
            OpcodeCategory::Call => FUNC,
            OpcodeCategory::Other => DATA,
        };
    }
    if ctx.mode.register_normalization {
        match ctx.registers.and_then(|r| r.lookup(tok)) {
            Some(RegisterWidth::Bits32) => return REG32,
            Some(RegisterWidth::Bits64) => return REG64,
            _ => {}
        }
    }
    tok
}
