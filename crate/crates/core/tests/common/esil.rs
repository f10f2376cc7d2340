//! Random ESIL-like functions for normalization properties.

use faser_core::ingest::{EsilInstruction, OpcodeCategory, RawFunction};
use rand::seq::IndexedRandom;
use rand::Rng;

pub const REGISTERS: [&str; 14] = [
    "rax", "eax", "rbp", "RSP", "rsp", "rip", "r8", "r9d", "ebx", "Rdi", "esi", "r15", "zf", "cf",
];

const OPERATORS: [&str; 16] = [
    "=", "+", "-", "*", "=[8]", "=[4]", "[8]", "-=", "+=", "GOTO", "?{", "}", "$z", "$c64", "^", "DUP",
];

const ODD: [&str; 8] = ["0x", "0xzz", "IMM", "MEM", "reg64", "-1", "0b101", "x0"];

fn hex<R: Rng>(rng: &mut R) -> String {
    let len = rng.random_range(1..=12);
    let mut digits: String = (0..len)
        .map(|_| {
            let c = b"0123456789abcdefABCDEF"[rng.random_range(0..22)];
            c as char
        })
        .collect();
    if rng.random_bool(0.15) {
        digits = format!("fffff{digits}");
    }
    let prefix = if rng.random_bool(0.9) { "0x" } else { "0X" };
    format!("{prefix}{digits}")
}

fn decimal<R: Rng>(rng: &mut R) -> String {
    match rng.random_range(0..4) {
        0 => rng.random_range(0..16u64).to_string(),
        1 => rng.random_range(4000..4200u64).to_string(),
        2 => rng.random::<u64>().to_string(),
        _ => format!("{}{}", rng.random::<u64>(), rng.random::<u32>()),
    }
}

pub fn token<R: Rng>(rng: &mut R) -> String {
    match rng.random_range(0..10) {
        0..=2 => REGISTERS.choose(rng).unwrap().to_string(),
        3..=4 => OPERATORS.choose(rng).unwrap().to_string(),
        5..=6 => hex(rng),
        7..=8 => decimal(rng),
        _ => ODD.choose(rng).unwrap().to_string(),
    }
}

pub fn instruction<R: Rng>(rng: &mut R) -> EsilInstruction {
    let n = rng.random_range(1..=7);
    let esil = (0..n).map(|_| token(rng)).collect::<Vec<_>>().join(",");
    let cat = if rng.random_bool(0.2) {
        OpcodeCategory::Call
    } else {
        OpcodeCategory::Other
    };
    EsilInstruction::new(esil, cat)
}

pub fn function<R: Rng>(rng: &mut R, name: &str) -> RawFunction {
    let n = rng.random_range(1..=12);
    RawFunction {
        name: name.to_string(),
        binary_id: format!("bin-{}", rng.random_range(0..4)),
        architecture: "x86-64".into(),
        bitness: 64,
        compiler: "gcc".into(),
        opt_level: ["O0", "O1", "O2", "O3"].choose(rng).unwrap().to_string(),
        instructions: (0..n).map(|_| instruction(rng)).collect(),
    }
}
