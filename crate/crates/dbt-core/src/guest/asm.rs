//! Assembler for the guest subset.
//!
//! The format is line oriented: `;` starts a comment, `label:` binds the
//! current address, `.org <hex>` moves the location counter, `.word <hex>`
//! places an initial data word, and everything else is one instruction.
//! Mnemonics are case-insensitive and suffixes compose as
//! mnemonic + condition + `s`, so `addeqs` is a conditional flag-setting add.
//!
//! Instructions land in the instruction store and `.word` data in physical
//! memory; the two address spaces are independent, so a program may locate
//! data at the same numeric address as code.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::{AluOp, Cond, Instr, MoveOp, Operand, Program, Reg, SysReg, INSTR_SIZE};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AsmError {
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown mnemonic `{token}`")]
    UnknownMnemonic { line: usize, token: String },
    #[error("line {line}: malformed operand: {msg}")]
    Operand { line: usize, msg: String },
    #[error("line {line}: duplicate label `{name}`")]
    DuplicateLabel { line: usize, name: String },
    #[error("line {line}: unknown label `{name}`")]
    UnknownLabel { line: usize, name: String },
    #[error("line {line}: address {addr:#x} already holds an instruction")]
    Overlap { line: usize, addr: u32 },
    #[error("line {line}: address {addr:#x} is not 4-byte aligned")]
    Misaligned { line: usize, addr: u32 },
}

/// Parse assembly text into a program.
pub fn parse_program(text: &str) -> Result<Program, AsmError> {
    let statements = layout(text)?;
    let mut labels = BTreeMap::new();
    for stmt in &statements {
        if let Payload::Label(name) = &stmt.payload {
            if labels.insert(name.clone(), stmt.addr).is_some() {
                return Err(AsmError::DuplicateLabel { line: stmt.line, name: name.clone() });
            }
        }
    }

    let mut program = Program { labels: labels.clone(), ..Program::default() };
    let mut entry = None;
    for stmt in &statements {
        match &stmt.payload {
            Payload::Label(_) => {}
            Payload::Word(value) => {
                program.data.insert(stmt.addr, *value);
            }
            Payload::Instr(text) => {
                let instr = parse_instr(text, stmt.line, stmt.addr, &labels)?;
                if program.instrs.insert(stmt.addr, instr).is_some() {
                    return Err(AsmError::Overlap { line: stmt.line, addr: stmt.addr });
                }
                entry.get_or_insert(stmt.addr);
            }
        }
    }
    program.entry = entry.unwrap_or(0);
    Ok(program)
}

struct Statement {
    line: usize,
    addr: u32,
    payload: Payload,
}

enum Payload {
    Label(String),
    Word(u32),
    Instr(String),
}

/// First pass: strip comments, assign addresses, split off labels.
fn layout(text: &str) -> Result<Vec<Statement>, AsmError> {
    let mut out = Vec::new();
    let mut addr: u32 = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let mut rest = raw.split(';').next().unwrap_or("").trim();
        while let Some(colon) = label_split(rest) {
            let (name, tail) = rest.split_at(colon);
            out.push(Statement { line, addr, payload: Payload::Label(name.trim().to_string()) });
            rest = tail[1..].trim();
        }
        if rest.is_empty() {
            continue;
        }
        if let Some(arg) = rest.strip_prefix(".org") {
            addr = parse_int(arg.trim(), line, true)? as u32;
            if addr % INSTR_SIZE != 0 {
                return Err(AsmError::Misaligned { line, addr });
            }
            continue;
        }
        if let Some(arg) = rest.strip_prefix(".word") {
            let value = parse_int(arg.trim(), line, true)? as u32;
            out.push(Statement { line, addr, payload: Payload::Word(value) });
            addr = addr.wrapping_add(INSTR_SIZE);
            continue;
        }
        out.push(Statement { line, addr, payload: Payload::Instr(rest.to_string()) });
        addr = addr.wrapping_add(INSTR_SIZE);
    }
    Ok(out)
}

/// Offset of the colon ending a leading label, if the line starts with one.
fn label_split(s: &str) -> Option<usize> {
    let mut chars = s.char_indices();
    match chars.next() {
        Some((_, c)) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return None,
    }
    for (i, c) in chars {
        if c == ':' {
            return Some(i);
        }
        if !c.is_ascii_alphanumeric() && c != '_' {
            return None;
        }
    }
    None
}

/// Mnemonics that accept a condition suffix.
fn takes_cond(m: &str) -> bool {
    matches!(
        m,
        "mov" | "mvn" | "add" | "sub" | "and" | "orr" | "eor" | "lsl" | "lsr" | "cmp" | "b"
    )
}

/// Mnemonics that accept an `s` suffix.
fn takes_s(m: &str) -> bool {
    matches!(m, "mov" | "mvn" | "add" | "sub" | "and" | "orr" | "eor" | "lsl" | "lsr")
}

const MNEMONICS: &[&str] = &[
    "setcpsr", "getcpsr", "vmsr", "vmrs", "tlbi", "halt", "svc", "mov", "mvn", "add", "sub",
    "and", "orr", "eor", "lsl", "lsr", "cmp", "ldr", "str", "bl", "bx", "b",
];

/// Split a head token into mnemonic, condition, and flag-setting suffix.
fn split_mnemonic(token: &str, line: usize) -> Result<(&'static str, Cond, bool), AsmError> {
    let mut found: Option<(&'static str, Cond, bool)> = None;
    for m in MNEMONICS {
        let Some(mut rest) = token.strip_prefix(m) else { continue };
        let mut cond = Cond::Al;
        let mut explicit_cond = false;
        for (suffix, c) in
            [("eq", Cond::Eq), ("ne", Cond::Ne), ("ge", Cond::Ge), ("lt", Cond::Lt), ("al", Cond::Al)]
        {
            if let Some(r) = rest.strip_prefix(suffix) {
                cond = c;
                explicit_cond = true;
                rest = r;
                break;
            }
        }
        let set_flags = if let Some(r) = rest.strip_prefix('s') {
            rest = r;
            true
        } else {
            false
        };
        if !rest.is_empty() {
            continue;
        }
        if explicit_cond && !takes_cond(m) {
            return Err(AsmError::Syntax {
                line,
                msg: format!("`{m}` does not take a condition suffix"),
            });
        }
        if set_flags && !takes_s(m) {
            continue;
        }
        // Prefer the longest mnemonic when two decompositions both parse.
        if found.map_or(true, |(prev, _, _)| m.len() > prev.len()) {
            found = Some((m, cond, set_flags));
        }
    }
    found.ok_or_else(|| AsmError::UnknownMnemonic { line, token: token.to_string() })
}

fn parse_instr(
    text: &str,
    line: usize,
    addr: u32,
    labels: &BTreeMap<String, u32>,
) -> Result<Instr, AsmError> {
    let lower = text.to_ascii_lowercase();
    let (head, tail) = match lower.find(char::is_whitespace) {
        Some(i) => (&lower[..i], lower[i..].trim()),
        None => (lower.as_str(), ""),
    };
    let (mnemonic, cond, set_flags) = split_mnemonic(head, line)?;
    let ops = split_operands(tail);
    let argc = ops.len();
    let wrong_argc = |want: &str| AsmError::Operand {
        line,
        msg: format!("`{mnemonic}` expects {want}, got {argc} operands"),
    };

    let instr = match mnemonic {
        "mov" | "mvn" => {
            if argc != 2 {
                return Err(wrong_argc("2 operands"));
            }
            let op = if mnemonic == "mov" { MoveOp::Mov } else { MoveOp::Mvn };
            Instr::Move { op, cond, set_flags, rd: parse_reg(ops[0], line)?, src: parse_operand(ops[1], line)? }
        }
        "add" | "sub" | "and" | "orr" | "eor" | "lsl" | "lsr" => {
            if argc != 3 {
                return Err(wrong_argc("3 operands"));
            }
            let op = match mnemonic {
                "add" => AluOp::Add,
                "sub" => AluOp::Sub,
                "and" => AluOp::And,
                "orr" => AluOp::Orr,
                "eor" => AluOp::Eor,
                "lsl" => AluOp::Lsl,
                _ => AluOp::Lsr,
            };
            Instr::Alu {
                op,
                cond,
                set_flags,
                rd: parse_reg(ops[0], line)?,
                rn: parse_reg(ops[1], line)?,
                src: parse_operand(ops[2], line)?,
            }
        }
        "cmp" => {
            if argc != 2 {
                return Err(wrong_argc("2 operands"));
            }
            if cond != Cond::Al {
                return Err(AsmError::Syntax {
                    line,
                    msg: "`cmp` is always unconditional".to_string(),
                });
            }
            Instr::Cmp { rn: parse_reg(ops[0], line)?, src: parse_operand(ops[1], line)? }
        }
        "ldr" | "str" => {
            if argc != 2 {
                return Err(wrong_argc("a register and an address"));
            }
            let r = parse_reg(ops[0], line)?;
            let (rn, off) = parse_mem(ops[1], line)?;
            if mnemonic == "ldr" {
                Instr::Ldr { rd: r, rn, off }
            } else {
                Instr::Str { rs: r, rn, off }
            }
        }
        "b" | "bl" => {
            if argc != 1 {
                return Err(wrong_argc("a target"));
            }
            let target = parse_target(ops[0], line, labels)?;
            if mnemonic == "b" {
                Instr::B { cond, target }
            } else {
                Instr::Bl { target }
            }
        }
        "bx" => {
            if argc != 1 {
                return Err(wrong_argc("a register"));
            }
            Instr::Bx { rm: parse_reg(ops[0], line)? }
        }
        "vmsr" => {
            if argc != 2 {
                return Err(wrong_argc("sysreg, register"));
            }
            Instr::Vmsr { sysreg: parse_sysreg(ops[0], line)?, rn: parse_reg(ops[1], line)? }
        }
        "vmrs" => {
            if argc != 2 {
                return Err(wrong_argc("register, sysreg"));
            }
            Instr::Vmrs { rd: parse_reg(ops[0], line)?, sysreg: parse_sysreg(ops[1], line)? }
        }
        "setcpsr" => {
            if argc != 1 {
                return Err(wrong_argc("a register"));
            }
            Instr::SetCpsr { rn: parse_reg(ops[0], line)? }
        }
        "getcpsr" => {
            if argc != 1 {
                return Err(wrong_argc("a register"));
            }
            Instr::GetCpsr { rd: parse_reg(ops[0], line)? }
        }
        "tlbi" => {
            if argc != 0 {
                return Err(wrong_argc("no operands"));
            }
            Instr::Tlbi
        }
        "svc" => {
            if argc != 1 {
                return Err(wrong_argc("a vector number"));
            }
            let text = ops[0].strip_prefix('#').unwrap_or(ops[0]);
            Instr::Svc { vector: parse_int(text, line, false)? as u32 }
        }
        "halt" => {
            if argc != 0 {
                return Err(wrong_argc("no operands"));
            }
            Instr::Halt
        }
        _ => unreachable!("mnemonic table covers all cases"),
    };
    let _ = addr;
    Ok(instr)
}

fn split_operands(s: &str) -> Vec<&str> {
    if s.is_empty() {
        return Vec::new();
    }
    // Bracketed memory operands contain a comma, so split at top level only.
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    for (i, c) in s.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(s[start..].trim());
    out
}

fn parse_reg(s: &str, line: usize) -> Result<Reg, AsmError> {
    let bad = || AsmError::Operand { line, msg: format!("expected register, got `{s}`") };
    match s {
        "sp" => return Ok(Reg(13)),
        "lr" => return Ok(Reg(14)),
        _ => {}
    }
    let num = s.strip_prefix('r').ok_or_else(bad)?;
    let n: u8 = num.parse().map_err(|_| bad())?;
    if n > 14 {
        return Err(AsmError::Operand { line, msg: format!("register r{n} out of range (r0-r14)") });
    }
    Ok(Reg(n))
}

fn parse_operand(s: &str, line: usize) -> Result<Operand, AsmError> {
    if let Some(imm) = s.strip_prefix('#') {
        Ok(Operand::Imm(parse_int(imm, line, false)?))
    } else {
        Ok(Operand::Reg(parse_reg(s, line)?))
    }
}

fn parse_mem(s: &str, line: usize) -> Result<(Reg, i32), AsmError> {
    let bad = |msg: &str| AsmError::Operand { line, msg: format!("{msg} in `{s}`") };
    let inner = s
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| bad("expected [base] or [base, #offset]"))?;
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [base] => Ok((parse_reg(base, line)?, 0)),
        [base, off] => {
            let imm = off.strip_prefix('#').ok_or_else(|| bad("offset needs `#`"))?;
            Ok((parse_reg(base, line)?, parse_int(imm, line, false)? as i32))
        }
        _ => Err(bad("too many components")),
    }
}

fn parse_target(s: &str, line: usize, labels: &BTreeMap<String, u32>) -> Result<u32, AsmError> {
    if let Some(addr) = labels.get(s) {
        return Ok(*addr);
    }
    if let Some(imm) = s.strip_prefix('#') {
        return Ok(parse_int(imm, line, false)? as u32);
    }
    if s.starts_with(|c: char| c.is_ascii_digit()) {
        return Ok(parse_int(s, line, false)? as u32);
    }
    Err(AsmError::UnknownLabel { line, name: s.to_string() })
}

fn parse_sysreg(s: &str, line: usize) -> Result<SysReg, AsmError> {
    match s {
        "fpscr" => Ok(SysReg::Fpscr),
        "elr" => Ok(SysReg::Elr),
        "spsr" => Ok(SysReg::Spsr),
        _ => Err(AsmError::Operand { line, msg: format!("unknown system register `{s}`") }),
    }
}

/// Parse an integer literal. Directive arguments (`.org`, `.word`) default to
/// hex; everywhere else bare digits are decimal and hex needs `0x`.
fn parse_int(s: &str, line: usize, directive_hex: bool) -> Result<i64, AsmError> {
    let bad = || AsmError::Operand { line, msg: format!("bad integer literal `{s}`") };
    let (negative, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let value = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16).map_err(|_| bad())?
    } else if directive_hex {
        i64::from_str_radix(body, 16).map_err(|_| bad())?
    } else {
        body.parse().map_err(|_| bad())?
    };
    Ok(if negative { -value } else { value })
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = |set: &bool| if *set { "s" } else { "" };
        match self {
            Instr::Move { op, cond, set_flags, rd, src } => {
                let name = if *op == MoveOp::Mov { "mov" } else { "mvn" };
                write!(f, "{name}{}{} {rd}, {src}", cond.suffix(), s(set_flags))
            }
            Instr::Alu { op, cond, set_flags, rd, rn, src } => {
                write!(f, "{}{}{} {rd}, {rn}, {src}", op.name(), cond.suffix(), s(set_flags))
            }
            Instr::Cmp { rn, src } => write!(f, "cmp {rn}, {src}"),
            Instr::Ldr { rd, rn, off } if *off == 0 => write!(f, "ldr {rd}, [{rn}]"),
            Instr::Ldr { rd, rn, off } => write!(f, "ldr {rd}, [{rn}, #{off}]"),
            Instr::Str { rs, rn, off } if *off == 0 => write!(f, "str {rs}, [{rn}]"),
            Instr::Str { rs, rn, off } => write!(f, "str {rs}, [{rn}, #{off}]"),
            Instr::B { cond, target } => write!(f, "b{} #{target:#x}", cond.suffix()),
            Instr::Bl { target } => write!(f, "bl #{target:#x}"),
            Instr::Bx { rm } => write!(f, "bx {rm}"),
            Instr::Vmsr { sysreg, rn } => write!(f, "vmsr {}, {rn}", sysreg.name()),
            Instr::Vmrs { rd, sysreg } => write!(f, "vmrs {rd}, {}", sysreg.name()),
            Instr::SetCpsr { rn } => write!(f, "setcpsr {rn}"),
            Instr::GetCpsr { rd } => write!(f, "getcpsr {rd}"),
            Instr::Tlbi => write!(f, "tlbi"),
            Instr::Svc { vector } => write!(f, "svc #{vector}"),
            Instr::Halt => write!(f, "halt"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guest::Category;

    #[test]
    fn cmp_decodes_as_flag_setting() {
        let p = parse_program("cmp r1, r2\n").unwrap();
        let instr = p.fetch(0).unwrap();
        assert_eq!(*instr, Instr::Cmp { rn: Reg(1), src: Operand::Reg(Reg(2)) });
        assert_eq!(instr.flags_defined(), crate::guest::FlagSet::NZCV);
        assert_eq!(p.entry, 0);
    }

    #[test]
    fn suffix_order_is_mnemonic_cond_s() {
        let p = parse_program("addeqs r0, r1, #2\n").unwrap();
        match p.fetch(0).unwrap() {
            Instr::Alu { op: AluOp::Add, cond: Cond::Eq, set_flags: true, .. } => {}
            other => panic!("bad decode: {other:?}"),
        }
    }

    #[test]
    fn blt_is_branch_on_less_than() {
        let p = parse_program("loop: blt loop\n").unwrap();
        assert_eq!(*p.fetch(0).unwrap(), Instr::B { cond: Cond::Lt, target: 0 });
    }

    #[test]
    fn bl_and_bx_decode_without_cond() {
        let text = "start: bl fn\nhalt\nfn: bx lr\n";
        let p = parse_program(text).unwrap();
        assert_eq!(*p.fetch(0).unwrap(), Instr::Bl { target: 8 });
        assert_eq!(*p.fetch(8).unwrap(), Instr::Bx { rm: Reg(14) });
        assert!(parse_program("bleq somewhere\n").is_err());
    }

    #[test]
    fn org_word_and_labels_assign_addresses() {
        let text = "\
.org 100
entry: mov r0, #1
value: .word deadbeef
b entry
";
        let p = parse_program(text).unwrap();
        assert_eq!(p.entry, 0x100);
        assert_eq!(p.labels["value"], 0x104);
        assert_eq!(p.data[&0x104], 0xdeadbeef);
        assert_eq!(*p.fetch(0x108).unwrap(), Instr::B { cond: Cond::Al, target: 0x100 });
    }

    #[test]
    fn memory_operands_with_and_without_offset() {
        let p = parse_program("ldr r0, [r1]\nstr r2, [r3, #-8]\n").unwrap();
        assert_eq!(*p.fetch(0).unwrap(), Instr::Ldr { rd: Reg(0), rn: Reg(1), off: 0 });
        assert_eq!(*p.fetch(4).unwrap(), Instr::Str { rs: Reg(2), rn: Reg(3), off: -8 });
    }

    #[test]
    fn conditions_rejected_where_not_allowed() {
        assert!(matches!(
            parse_program("ldreq r0, [r1]\n"),
            Err(AsmError::Syntax { .. })
        ));
        assert!(matches!(
            parse_program("cmpeq r0, r1\n"),
            Err(AsmError::Syntax { .. })
        ));
        assert!(matches!(
            parse_program("halts\n"),
            Err(AsmError::UnknownMnemonic { .. })
        ));
    }

    #[test]
    fn unknown_label_reports_line() {
        match parse_program("mov r0, #0\nb nowhere\n") {
            Err(AsmError::UnknownLabel { line, name }) => {
                assert_eq!(line, 2);
                assert_eq!(name, "nowhere");
            }
            other => panic!("expected unknown label, got {other:?}"),
        }
    }

    #[test]
    fn display_round_trips_through_the_parser() {
        let text = "\
mov r0, #42
mvneqs r1, r0
subs r2, r1, r0
andge r3, r2, #0xff
lsls r4, r3, #2
cmp r4, r2
ldr r5, [r4, #12]
str r5, [r4]
vmsr fpscr, r5
vmrs r6, fpscr
setcpsr r6
getcpsr r7
tlbi
svc #3
bne #0x0
halt
";
        let p = parse_program(text).unwrap();
        let rendered: String =
            p.instrs.values().map(|i| format!("{i}\n")).collect();
        let reparsed = parse_program(&rendered).unwrap();
        assert_eq!(p.instrs, reparsed.instrs);
    }

    #[test]
    fn categories_by_mnemonic_family() {
        let p = parse_program("add r0, r0, #1\nldr r1, [r0]\nsvc #0\nb #0\nhalt\n").unwrap();
        let cats: Vec<Category> = p.instrs.values().map(|i| i.category()).collect();
        assert_eq!(
            cats,
            vec![
                Category::RuleEligible,
                Category::MemoryAccess,
                Category::SystemLevel,
                Category::Branch,
                Category::Halt
            ]
        );
    }
}
