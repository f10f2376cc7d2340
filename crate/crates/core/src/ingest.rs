//! Line-delimited corpus of lifted functions and function-as-string assembly.
//!
//! Each corpus line is one JSON object describing a function and its
//! per-instruction ESIL strings. [`to_function_string`] concatenates those
//! strings into a single comma-separated body.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether an instruction's originating opcode is a call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpcodeCategory {
    Call,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EsilInstruction {
    pub esil: String,
    pub opcode_category: OpcodeCategory,
}

impl EsilInstruction {
    pub fn new(esil: impl Into<String>, opcode_category: OpcodeCategory) -> Self {
        Self {
            esil: esil.into(),
            opcode_category,
        }
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.esil.split(',')
    }

    pub fn token_count(&self) -> usize {
        self.tokens().count()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.esil.is_empty() {
            return Err("empty esil string".into());
        }
        if self.tokens().any(|t| t.trim().is_empty()) {
            return Err(format!("esil {:?} contains an empty token", self.esil));
        }
        Ok(())
    }
}

/// Provenance of a function: which build of which binary it came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FunctionMeta {
    pub binary_id: String,
    pub architecture: String,
    pub bitness: u32,
    pub compiler: String,
    pub opt_level: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawFunction {
    pub name: String,
    pub binary_id: String,
    pub architecture: String,
    pub bitness: u32,
    pub compiler: String,
    pub opt_level: String,
    pub instructions: Vec<EsilInstruction>,
}

impl RawFunction {
    pub fn meta(&self) -> FunctionMeta {
        FunctionMeta {
            binary_id: self.binary_id.clone(),
            architecture: self.architecture.clone(),
            bitness: self.bitness,
            compiler: self.compiler.clone(),
            opt_level: self.opt_level.clone(),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.instructions.is_empty() {
            return Err("instructions is empty".into());
        }
        if self.bitness != 32 && self.bitness != 64 {
            return Err(format!("bitness must be 32 or 64, got {}", self.bitness));
        }
        for (i, ins) in self.instructions.iter().enumerate() {
            ins.validate().map_err(|e| format!("instruction {i}: {e}"))?;
        }
        Ok(())
    }
}

/// A function rendered as one long token string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionString {
    pub label: String,
    pub meta: FunctionMeta,
    pub body: String,
    pub token_count: usize,
    /// Ascending indices of body tokens that came from call instructions.
    ///
    /// Omitted from the record when empty. The normalizer needs it to tell
    /// call targets from data references.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub call_positions: Vec<u32>,
}

impl FunctionString {
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.body.split(',')
    }

    /// Tokens paired with the category of the instruction they came from.
    pub fn categorized_tokens(&self) -> impl Iterator<Item = (&str, OpcodeCategory)> {
        let mut calls = self.call_positions.iter().peekable();
        self.tokens().enumerate().map(move |(i, t)| {
            while calls.next_if(|&&p| (p as usize) < i).is_some() {}
            let cat = if calls.peek().is_some_and(|&&p| p as usize == i) {
                OpcodeCategory::Call
            } else {
                OpcodeCategory::Other
            };
            (t, cat)
        })
    }
}

/// Reads a corpus, one [`RawFunction`] per non-blank line.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<RawFunction>> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: RawFunction = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            reason: schema_reason(&e),
        })?;
        f.validate().map_err(|reason| Error::Parse {
            line: line_no,
            reason,
        })?;
        if !seen.insert((f.name.clone(), f.binary_id.clone())) {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("duplicate function {} in binary {}", f.name, f.binary_id),
            });
        }
        out.push(f);
    }
    Ok(out)
}

// serde reports "missing field `instructions` at line 1 column N"; keep the
// field name and drop the position, which refers to the single-line record.
fn schema_reason(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    let msg = match msg.find(" at line ") {
        Some(pos) => &msg[..pos],
        None => &msg[..],
    };
    msg.replace('`', "")
}

pub fn write_corpus<W: Write>(mut w: W, fns: &[RawFunction]) -> Result<()> {
    for f in fns {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_function_string(f: &RawFunction) -> FunctionString {
    let body = f
        .instructions
        .iter()
        .map(|i| i.esil.as_str())
        .collect::<Vec<_>>()
        .join(",");
    let mut call_positions = Vec::new();
    let mut token_count = 0usize;
    for ins in &f.instructions {
        let n = ins.token_count();
        if ins.opcode_category == OpcodeCategory::Call {
            call_positions.extend((token_count..token_count + n).map(|p| p as u32));
        }
        token_count += n;
    }
    FunctionString {
        label: f.name.clone(),
        meta: f.meta(),
        body,
        token_count,
        call_positions,
    }
}

pub fn write_function_strings<W: Write>(mut w: W, fns: &[FunctionString]) -> Result<()> {
    for f in fns {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
