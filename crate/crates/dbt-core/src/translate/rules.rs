//! Translation rules: parameterized guest patterns paired with host
//! templates.
//!
//! A rule file holds one record per rule:
//!
//! ```text
//! rule alu_rrr_cond constrained
//! guest: %aluop%cond %Rd, %Rn, %Rm
//! host: %guard
//! host: h%aluop %Rd, %Rn, %Rm
//! host: %endguard
//! ```
//!
//! Guest lines are parameterized guest assembly. `%Rd`, `%Rn` and `%Rm`
//! bind registers (a repeated placeholder must rebind the same register),
//! `#%imm` binds an immediate, `%aluop` binds any member of the
//! three-operand ALU family, and `%cond` binds an explicit condition
//! suffix. Host lines are parameterized host assembly; `h%aluop` derives
//! the host mnemonic from the bound ALU operation, and the `%guard` /
//! `%endguard` pair brackets the template in the conditional-skip sequence
//! for the bound condition. An optional `distinct:` line lists placeholders
//! that must bind pairwise different registers, for templates that reorder
//! reads around a write.
//!
//! A rule is `constrained` when its template writes the host flags with
//! values that are not the guest's condition codes, which in this rule
//! grammar means it contains a guard: the guard's compare clobbers the
//! flags, so translation owes a flags restore after the rule's code.

use std::collections::BTreeMap;
use std::fmt;

use crate::guest::{AluOp, Category, Cond, Instr, MoveOp, Operand, Reg};
use crate::host::isa::{HAluOp, HOperand, HReg, HostInstr};
use crate::machine::area::offsets;

use super::block::{Guard, GuardForm, HostBlock, Item};

/// One segment of a parameterized mnemonic.
#[derive(Debug, Clone, PartialEq, Eq)]
enum MnemonicSeg {
    Lit(String),
    Aluop,
    CondPh,
}

/// One operand slot of a guest pattern line.
#[derive(Debug, Clone, PartialEq, Eq)]
enum PatOperand {
    /// `%Rd`, `%Rn`, `%Rm`: binds a register.
    Reg(String),
    /// `#%imm`: binds an immediate.
    Imm,
    /// A literal immediate that must match exactly.
    LitImm(i64),
}

/// One parameterized guest instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
struct PatInstr {
    mnemonic: Vec<MnemonicSeg>,
    operands: Vec<PatOperand>,
}

/// Register slot of a host template instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
enum TReg {
    Ph(String),
    Lit(HReg),
}

/// Second-source slot of a host template instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
enum TSrc {
    Reg(TReg),
    ImmPh,
    Imm(u32),
}

/// ALU selector of a host template instruction: fixed, or derived from the
/// pattern's bound ALU operation.
#[derive(Debug, Clone, PartialEq, Eq)]
enum TAlu {
    Fixed(HAluOp),
    FromPattern,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum TemplateInstr {
    Mov { rd: TReg, src: TSrc },
    Alu { op: TAlu, set_flags: bool, rd: TReg, rn: TReg, src: TSrc },
    Cmp { rn: TReg, src: TSrc },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum TemplateItem {
    Instr(TemplateInstr),
    GuardOpen,
    GuardClose,
}

/// A parsed translation rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationRule {
    pub name: String,
    pub constrained: bool,
    pattern: Vec<PatInstr>,
    template: Vec<TemplateItem>,
    distinct: Vec<(String, String)>,
}

impl TranslationRule {
    /// Number of guest instructions the pattern covers.
    pub fn pattern_len(&self) -> usize {
        self.pattern.len()
    }
}

/// An ordered rule collection; order breaks ties between equal-length
/// matches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    pub rules: Vec<TranslationRule>,
}

/// Rule file parse failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for RuleParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rule file line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for RuleParseError {}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, RuleParseError> {
    Err(RuleParseError { line, message: message.into() })
}

const ALU_NAMES: [(&str, AluOp); 7] = [
    ("add", AluOp::Add),
    ("sub", AluOp::Sub),
    ("and", AluOp::And),
    ("orr", AluOp::Orr),
    ("eor", AluOp::Eor),
    ("lsl", AluOp::Lsl),
    ("lsr", AluOp::Lsr),
];

const COND_NAMES: [(&str, Cond); 4] =
    [("eq", Cond::Eq), ("ne", Cond::Ne), ("ge", Cond::Ge), ("lt", Cond::Lt)];

fn host_alu(op: AluOp) -> HAluOp {
    match op {
        AluOp::Add => HAluOp::Add,
        AluOp::Sub => HAluOp::Sub,
        AluOp::And => HAluOp::And,
        AluOp::Orr => HAluOp::Or,
        AluOp::Eor => HAluOp::Xor,
        AluOp::Lsl => HAluOp::Shl,
        AluOp::Lsr => HAluOp::Shr,
    }
}

fn parse_mnemonic_segs(token: &str, line: usize) -> Result<Vec<MnemonicSeg>, RuleParseError> {
    let mut segs = Vec::new();
    let mut rest = token;
    while !rest.is_empty() {
        if let Some(after) = rest.strip_prefix("%aluop") {
            segs.push(MnemonicSeg::Aluop);
            rest = after;
        } else if let Some(after) = rest.strip_prefix("%cond") {
            segs.push(MnemonicSeg::CondPh);
            rest = after;
        } else if rest.starts_with('%') {
            return err(line, format!("unknown mnemonic placeholder in '{token}'"));
        } else {
            let end = rest.find('%').unwrap_or(rest.len());
            segs.push(MnemonicSeg::Lit(rest[..end].to_string()));
            rest = &rest[end..];
        }
    }
    Ok(segs)
}

fn parse_int_lit(text: &str) -> Option<i64> {
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let value = if let Some(hex) = body.strip_prefix("0x") {
        i64::from_str_radix(hex, 16).ok()?
    } else {
        body.parse::<i64>().ok()?
    };
    Some(if neg { -value } else { value })
}

fn parse_pat_operand(text: &str, line: usize) -> Result<PatOperand, RuleParseError> {
    if let Some(name) = text.strip_prefix('%') {
        if name.starts_with('R') {
            return Ok(PatOperand::Reg(name.to_string()));
        }
        return err(line, format!("unknown operand placeholder '{text}'"));
    }
    if let Some(imm) = text.strip_prefix('#') {
        if imm == "%imm" {
            return Ok(PatOperand::Imm);
        }
        return match parse_int_lit(imm) {
            Some(v) => Ok(PatOperand::LitImm(v)),
            None => err(line, format!("bad immediate literal '{text}'")),
        };
    }
    err(line, format!("unsupported pattern operand '{text}' (register literals are not supported)"))
}

fn parse_guest_line(body: &str, line: usize) -> Result<PatInstr, RuleParseError> {
    let body = body.trim();
    let (mnemonic, ops) = match body.split_once(char::is_whitespace) {
        Some((m, rest)) => (m, rest.trim()),
        None => (body, ""),
    };
    let mnemonic = parse_mnemonic_segs(mnemonic, line)?;
    let mut operands = Vec::new();
    if !ops.is_empty() {
        for op in ops.split(',') {
            operands.push(parse_pat_operand(op.trim(), line)?);
        }
    }
    Ok(PatInstr { mnemonic, operands })
}

fn parse_treg(text: &str, line: usize) -> Result<TReg, RuleParseError> {
    if let Some(name) = text.strip_prefix('%') {
        if name.starts_with('R') {
            return Ok(TReg::Ph(name.to_string()));
        }
        return err(line, format!("unknown register placeholder '{text}'"));
    }
    if let Some(index) = text.strip_prefix('h') {
        if let Ok(i) = index.parse::<u8>() {
            if i < 16 {
                return Ok(TReg::Lit(HReg(i)));
            }
        }
    }
    err(line, format!("bad host register '{text}'"))
}

fn parse_tsrc(text: &str, line: usize) -> Result<TSrc, RuleParseError> {
    if let Some(imm) = text.strip_prefix('#') {
        if imm == "%imm" {
            return Ok(TSrc::ImmPh);
        }
        return match parse_int_lit(imm) {
            Some(v) => Ok(TSrc::Imm(v as u32)),
            None => err(line, format!("bad immediate literal '{text}'")),
        };
    }
    Ok(TSrc::Reg(parse_treg(text, line)?))
}

fn parse_host_line(body: &str, line: usize) -> Result<TemplateItem, RuleParseError> {
    let body = body.trim();
    if body == "%guard" {
        return Ok(TemplateItem::GuardOpen);
    }
    if body == "%endguard" {
        return Ok(TemplateItem::GuardClose);
    }
    let (mnemonic, rest) = match body.split_once(char::is_whitespace) {
        Some((m, rest)) => (m, rest.trim()),
        None => (body, ""),
    };
    let ops: Vec<&str> = if rest.is_empty() {
        Vec::new()
    } else {
        rest.split(',').map(str::trim).collect()
    };

    let (alu, set_flags): (Option<TAlu>, bool) = if let Some(suffix) = mnemonic.strip_prefix("h%aluop")
    {
        match suffix {
            "" => (Some(TAlu::FromPattern), false),
            "s" => (Some(TAlu::FromPattern), true),
            _ => return err(line, format!("bad mnemonic '{mnemonic}'")),
        }
    } else {
        let (base, flagged) = match mnemonic.strip_suffix('s') {
            Some(base) if base != "hflag" => (base, true),
            _ => (mnemonic, false),
        };
        let fixed = match base {
            "hadd" => Some(HAluOp::Add),
            "hsub" => Some(HAluOp::Sub),
            "hand" => Some(HAluOp::And),
            "hor" => Some(HAluOp::Or),
            "hxor" => Some(HAluOp::Xor),
            "hshl" => Some(HAluOp::Shl),
            "hshr" => Some(HAluOp::Shr),
            _ => None,
        };
        (fixed.map(TAlu::Fixed), flagged)
    };

    if let Some(op) = alu {
        if ops.len() != 3 {
            return err(line, format!("ALU template '{mnemonic}' needs three operands"));
        }
        return Ok(TemplateItem::Instr(TemplateInstr::Alu {
            op,
            set_flags,
            rd: parse_treg(ops[0], line)?,
            rn: parse_treg(ops[1], line)?,
            src: parse_tsrc(ops[2], line)?,
        }));
    }
    match mnemonic {
        "hmov" => {
            if ops.len() != 2 {
                return err(line, "hmov template needs two operands");
            }
            Ok(TemplateItem::Instr(TemplateInstr::Mov {
                rd: parse_treg(ops[0], line)?,
                src: parse_tsrc(ops[1], line)?,
            }))
        }
        "hcmp" => {
            if ops.len() != 2 {
                return err(line, "hcmp template needs two operands");
            }
            Ok(TemplateItem::Instr(TemplateInstr::Cmp {
                rn: parse_treg(ops[0], line)?,
                src: parse_tsrc(ops[1], line)?,
            }))
        }
        _ => err(line, format!("unknown host mnemonic '{mnemonic}' in rule template")),
    }
}

impl RuleSet {
    /// Parse a rule file.
    pub fn parse(text: &str) -> Result<RuleSet, RuleParseError> {
        let mut rules = Vec::new();
        let mut current: Option<(usize, TranslationRule)> = None;

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            if let Some(header) = content.strip_prefix("rule ") {
                if let Some((l, rule)) = current.take() {
                    Self::finish_rule(l, rule, &mut rules)?;
                }
                let mut parts = header.split_whitespace();
                let name = match parts.next() {
                    Some(n) => n.to_string(),
                    None => return err(line, "rule record without a name"),
                };
                let constrained = match parts.next() {
                    None => false,
                    Some("constrained") => true,
                    Some(other) => return err(line, format!("unknown rule attribute '{other}'")),
                };
                current = Some((
                    line,
                    TranslationRule {
                        name,
                        constrained,
                        pattern: Vec::new(),
                        template: Vec::new(),
                        distinct: Vec::new(),
                    },
                ));
                continue;
            }
            let Some((_, rule)) = current.as_mut() else {
                return err(line, "directive outside a rule record");
            };
            if let Some(body) = content.strip_prefix("guest:") {
                rule.pattern.push(parse_guest_line(body, line)?);
            } else if let Some(body) = content.strip_prefix("host:") {
                rule.template.push(parse_host_line(body, line)?);
            } else if let Some(body) = content.strip_prefix("distinct:") {
                let names: Vec<String> = body
                    .split_whitespace()
                    .map(|n| match n.strip_prefix('%') {
                        Some(stripped) => Ok(stripped.to_string()),
                        None => err(line, format!("distinct entries are placeholders, got '{n}'")),
                    })
                    .collect::<Result<_, _>>()?;
                if names.len() < 2 {
                    return err(line, "distinct needs at least two placeholders");
                }
                for a in 0..names.len() {
                    for b in a + 1..names.len() {
                        rule.distinct.push((names[a].clone(), names[b].clone()));
                    }
                }
            } else {
                return err(line, format!("unrecognized directive '{content}'"));
            }
        }
        if let Some((l, rule)) = current.take() {
            Self::finish_rule(l, rule, &mut rules)?;
        }
        Ok(RuleSet { rules })
    }

    fn finish_rule(
        line: usize,
        rule: TranslationRule,
        rules: &mut Vec<TranslationRule>,
    ) -> Result<(), RuleParseError> {
        if rule.pattern.is_empty() {
            return err(line, format!("rule '{}' has no guest pattern", rule.name));
        }
        if rule.template.is_empty() {
            return err(line, format!("rule '{}' has no host template", rule.name));
        }

        let mut bound_regs: Vec<&String> = Vec::new();
        let mut binds_imm = false;
        let mut binds_aluop = false;
        let mut binds_cond = false;
        for pat in &rule.pattern {
            for seg in &pat.mnemonic {
                match seg {
                    MnemonicSeg::Aluop => binds_aluop = true,
                    MnemonicSeg::CondPh => binds_cond = true,
                    MnemonicSeg::Lit(_) => {}
                }
            }
            for op in &pat.operands {
                match op {
                    PatOperand::Reg(name) => bound_regs.push(name),
                    PatOperand::Imm => binds_imm = true,
                    PatOperand::LitImm(_) => {}
                }
            }
        }

        let mut depth = 0i32;
        let mut has_guard = false;
        for item in &rule.template {
            match item {
                TemplateItem::GuardOpen => {
                    depth += 1;
                    has_guard = true;
                }
                TemplateItem::GuardClose => depth -= 1,
                TemplateItem::Instr(instr) => {
                    let check_reg = |r: &TReg| -> Result<(), RuleParseError> {
                        if let TReg::Ph(name) = r {
                            if !bound_regs.iter().any(|b| *b == name) {
                                return err(
                                    line,
                                    format!("rule '{}': template placeholder %{name} is unbound", rule.name),
                                );
                            }
                        }
                        Ok(())
                    };
                    let src = match instr {
                        TemplateInstr::Mov { rd, src } => {
                            check_reg(rd)?;
                            src
                        }
                        TemplateInstr::Alu { op, rd, rn, src, .. } => {
                            if *op == TAlu::FromPattern && !binds_aluop {
                                return err(
                                    line,
                                    format!("rule '{}': h%aluop without an %aluop pattern", rule.name),
                                );
                            }
                            check_reg(rd)?;
                            check_reg(rn)?;
                            src
                        }
                        TemplateInstr::Cmp { rn, src } => {
                            check_reg(rn)?;
                            src
                        }
                    };
                    match src {
                        TSrc::Reg(r) => check_reg(r)?,
                        TSrc::ImmPh if !binds_imm => {
                            return err(
                                line,
                                format!("rule '{}': template %imm is unbound", rule.name),
                            );
                        }
                        _ => {}
                    }
                }
            }
        }
        if depth != 0 {
            return err(line, format!("rule '{}': unbalanced %guard/%endguard", rule.name));
        }
        if has_guard && !binds_cond {
            return err(line, format!("rule '{}': %guard without a %cond pattern", rule.name));
        }
        if has_guard != rule.constrained {
            let what = if has_guard {
                "its guard writes the host flags, so it must be marked constrained"
            } else {
                "it never writes foreign flag values, so it must not be marked constrained"
            };
            return err(line, format!("rule '{}': {what}", rule.name));
        }
        for (a, b) in &rule.distinct {
            for name in [a, b] {
                if !bound_regs.iter().any(|r| *r == name) {
                    return err(
                        line,
                        format!("rule '{}': distinct names unbound placeholder %{name}", rule.name),
                    );
                }
            }
        }
        rules.push(rule);
        Ok(())
    }

    /// The rule set that ships with the repository.
    pub fn starter() -> RuleSet {
        RuleSet::parse(include_str!("../../rules/starter.rules"))
            .expect("shipped rule set parses")
    }
}

/// A successful rule match: the rule, the guest span it covers, and the
/// placeholder assignments.
#[derive(Debug, Clone)]
pub struct Binding<'r> {
    pub rule: &'r TranslationRule,
    pub rule_index: usize,
    regs: BTreeMap<String, Reg>,
    imm: Option<i64>,
    aluop: Option<AluOp>,
    cond: Option<Cond>,
}

impl Binding<'_> {
    pub fn span(&self) -> usize {
        self.rule.pattern.len()
    }

    pub fn reg(&self, name: &str) -> Option<Reg> {
        self.regs.get(name).copied()
    }

    pub fn cond(&self) -> Option<Cond> {
        self.cond
    }
}

fn concrete_mnemonic(instr: &Instr) -> Option<String> {
    match instr {
        Instr::Move { op, cond, set_flags, .. } => {
            let base = match op {
                MoveOp::Mov => "mov",
                MoveOp::Mvn => "mvn",
            };
            Some(format!("{base}{}{}", cond.suffix(), if *set_flags { "s" } else { "" }))
        }
        Instr::Alu { op, cond, set_flags, .. } => {
            Some(format!("{}{}{}", op.name(), cond.suffix(), if *set_flags { "s" } else { "" }))
        }
        Instr::Cmp { .. } => Some("cmp".to_string()),
        _ => None,
    }
}

fn guest_operands(instr: &Instr) -> Vec<Operand> {
    match *instr {
        Instr::Move { rd, src, .. } => vec![Operand::Reg(rd), src],
        Instr::Alu { rd, rn, src, .. } => vec![Operand::Reg(rd), Operand::Reg(rn), src],
        Instr::Cmp { rn, src } => vec![Operand::Reg(rn), src],
        _ => Vec::new(),
    }
}

fn match_mnemonic(segs: &[MnemonicSeg], text: &str, binding: &mut Binding<'_>) -> bool {
    let mut rest = text;
    for seg in segs {
        match seg {
            MnemonicSeg::Lit(lit) => match rest.strip_prefix(lit.as_str()) {
                Some(after) => rest = after,
                None => return false,
            },
            MnemonicSeg::Aluop => {
                let Some((name, op)) = ALU_NAMES.iter().find(|(n, _)| rest.starts_with(n)) else {
                    return false;
                };
                if let Some(bound) = binding.aluop {
                    if bound != *op {
                        return false;
                    }
                }
                binding.aluop = Some(*op);
                rest = &rest[name.len()..];
            }
            MnemonicSeg::CondPh => {
                let Some((name, cond)) = COND_NAMES.iter().find(|(n, _)| rest.starts_with(n)) else {
                    return false;
                };
                if let Some(bound) = binding.cond {
                    if bound != *cond {
                        return false;
                    }
                }
                binding.cond = Some(*cond);
                rest = &rest[name.len()..];
            }
        }
    }
    rest.is_empty()
}

fn try_match<'r>(rule: &'r TranslationRule, rule_index: usize, window: &[Instr]) -> Option<Binding<'r>> {
    if rule.pattern.len() > window.len() {
        return None;
    }
    let mut binding = Binding {
        rule,
        rule_index,
        regs: BTreeMap::new(),
        imm: None,
        aluop: None,
        cond: None,
    };
    for (pat, instr) in rule.pattern.iter().zip(window) {
        let mnemonic = concrete_mnemonic(instr)?;
        if !match_mnemonic(&pat.mnemonic, &mnemonic, &mut binding) {
            return None;
        }
        let operands = guest_operands(instr);
        if operands.len() != pat.operands.len() {
            return None;
        }
        for (pat_op, op) in pat.operands.iter().zip(&operands) {
            match (pat_op, op) {
                (PatOperand::Reg(name), Operand::Reg(r)) => {
                    if let Some(bound) = binding.regs.get(name) {
                        if bound != r {
                            return None;
                        }
                    }
                    binding.regs.insert(name.clone(), *r);
                }
                (PatOperand::Imm, Operand::Imm(v)) => {
                    if let Some(bound) = binding.imm {
                        if bound != *v {
                            return None;
                        }
                    }
                    binding.imm = Some(*v);
                }
                (PatOperand::LitImm(lit), Operand::Imm(v)) => {
                    if lit != v {
                        return None;
                    }
                }
                _ => return None,
            }
        }
    }
    for (a, b) in &rule.distinct {
        if let (Some(ra), Some(rb)) = (binding.regs.get(a), binding.regs.get(b)) {
            if ra == rb {
                return None;
            }
        }
    }
    Some(binding)
}

/// Find the best rule match at the start of `window`: the longest pattern
/// wins, with ties broken by rule file order. System-level, memory and
/// control instructions never match.
pub fn match_rule<'r>(ruleset: &'r RuleSet, window: &[Instr]) -> Option<Binding<'r>> {
    let first = window.first()?;
    if first.category() != Category::RuleEligible {
        return None;
    }
    let mut best: Option<Binding<'r>> = None;
    for (i, rule) in ruleset.rules.iter().enumerate() {
        if let Some(binding) = try_match(rule, i, window) {
            let longer = match &best {
                None => true,
                Some(current) => binding.span() > current.span(),
            };
            if longer {
                best = Some(binding);
            }
        }
    }
    best
}

/// Host-register home of a guest register during one rule application.
struct SpillState {
    homes: BTreeMap<Reg, HReg>,
    next_scratch: u8,
    store_back: Option<(Reg, HReg)>,
    out: Vec<HostInstr>,
}

impl SpillState {
    fn new() -> SpillState {
        SpillState { homes: BTreeMap::new(), next_scratch: 12, store_back: None, out: Vec::new() }
    }

    fn read(&mut self, reg: Reg) -> HReg {
        if let Some(h) = HReg::for_guest(reg.index()) {
            return h;
        }
        if let Some(h) = self.homes.get(&reg) {
            return *h;
        }
        assert!(self.next_scratch < 14, "rule template reads more than two spilled registers");
        let h = HReg(self.next_scratch);
        self.next_scratch += 1;
        self.out.push(HostInstr::HLd { rd: h, addr: crate::host::isa::HAddr::env(offsets::gpr(reg.index())) });
        self.homes.insert(reg, h);
        h
    }

    fn write(&mut self, reg: Reg) -> HReg {
        if let Some(h) = HReg::for_guest(reg.index()) {
            return h;
        }
        let h = HReg::S2;
        self.homes.insert(reg, h);
        if let Some((pending, _)) = self.store_back {
            assert_eq!(pending, reg, "rule template writes two spilled registers");
        }
        self.store_back = Some((reg, h));
        h
    }
}

impl Binding<'_> {
    fn resolve_reg(&self, t: &TReg) -> Reg {
        match t {
            TReg::Ph(name) => self.regs[name],
            TReg::Lit(h) => {
                assert!(h.0 < 12, "literal scratch registers cannot appear as guest operands");
                Reg(h.0)
            }
        }
    }

    fn resolve_src(&self, t: &TSrc, spills: &mut SpillState) -> HOperand {
        match t {
            TSrc::Reg(r) => HOperand::Reg(spills.read(self.resolve_reg(r))),
            TSrc::ImmPh => HOperand::Imm(self.imm.expect("imm placeholder bound") as u32),
            TSrc::Imm(v) => HOperand::Imm(*v),
        }
    }

    /// Expand the rule's template into block items. Spilled guest registers
    /// gain load and store fixups around the template code. `in_guard_tail`
    /// is appended inside the guard, before the skip label, for callers
    /// that owe coordination on the executed path only.
    pub fn instantiate(&self, block: &mut HostBlock, in_guard_tail: Vec<Item>) -> Vec<Item> {
        let mut items = Vec::new();
        let mut spills = SpillState::new();
        let mut guard_skip = None;

        for t in &self.rule.template {
            match t {
                TemplateItem::GuardOpen => {
                    let skip = block.fresh_label();
                    let cond = self.cond.expect("guard without bound condition");
                    items.push(Item::Guard(Guard { cond, form: GuardForm::MemCompare, skip }));
                    guard_skip = Some(skip);
                }
                TemplateItem::GuardClose => {
                    Self::flush_code(&mut items, &mut spills);
                    items.extend(in_guard_tail.iter().cloned());
                    items.push(Item::SetLabel(guard_skip.expect("guard close without open")));
                }
                TemplateItem::Instr(instr) => {
                    let lowered = match instr {
                        TemplateInstr::Mov { rd, src } => {
                            let src = self.resolve_src(src, &mut spills);
                            let rd = spills.write(self.resolve_reg(rd));
                            HostInstr::HMov { rd, src }
                        }
                        TemplateInstr::Alu { op, set_flags, rd, rn, src } => {
                            let rn = spills.read(self.resolve_reg(rn));
                            let src = self.resolve_src(src, &mut spills);
                            let rd = spills.write(self.resolve_reg(rd));
                            let op = match op {
                                TAlu::Fixed(h) => *h,
                                TAlu::FromPattern => host_alu(self.aluop.expect("aluop bound")),
                            };
                            HostInstr::HAlu { op, rd, rn, src, set_flags: *set_flags }
                        }
                        TemplateInstr::Cmp { rn, src } => {
                            let rn = spills.read(self.resolve_reg(rn));
                            let src = self.resolve_src(src, &mut spills);
                            HostInstr::HCmp { rn, src }
                        }
                    };
                    spills.out.push(lowered);
                }
            }
        }
        Self::flush_code(&mut items, &mut spills);
        items
    }

    fn flush_code(items: &mut Vec<Item>, spills: &mut SpillState) {
        let mut code = std::mem::take(&mut spills.out);
        if let Some((reg, h)) = spills.store_back.take() {
            code.push(HostInstr::HSt {
                rs: h,
                addr: crate::host::isa::HAddr::env(offsets::gpr(reg.index())),
            });
        }
        if !code.is_empty() {
            items.push(Item::Code(code));
        }
    }
}
