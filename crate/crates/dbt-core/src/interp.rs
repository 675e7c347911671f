//! Ground-truth sequential interpreter.
//!
//! Executes the guest program architecturally, one instruction at a time,
//! with interrupts checked before every instruction and data memory reached
//! through a fresh page walk on each access. Every translated configuration
//! is judged against this module, so it favors directness over speed and
//! shares no lowering machinery with the translator.
//!
//! The interpreter delivers interrupts at instruction granularity while the
//! translator only checks at block checkpoints, so equality against it is
//! asserted at quiescent points (halt, and the states around handler entry
//! and exit), not per instruction.

use serde::{Deserialize, Serialize};

use crate::guest::{AluOp, Ccr, Instr, MoveOp, Operand, Reg};
use crate::machine::{Fault, Machine, Mode};

/// One retired instruction: where it was, what it was, and the flags after.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub pc: u32,
    pub instr: Instr,
    pub nzcv: Ccr,
}

/// A delivery that interrupted the retired-instruction stream: an external
/// interrupt, a fault, or a software interrupt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    /// How many instructions had retired when the delivery happened.
    pub at_retired: u64,
    pub vector: u32,
    /// Address the handler will return to.
    pub link: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
    pub deliveries: Vec<Delivery>,
}

impl Trace {
    pub fn retired(&self) -> u64 {
        self.entries.len() as u64
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunOutcome {
    Halted,
    FuelExhausted,
    /// pc does not map to an instruction.
    UndefinedInstruction { pc: u32 },
    /// A fault or interrupt had no configured handler.
    DeliveryFailed { vector: u32 },
    /// Deliveries kept firing without an instruction retiring in between.
    Wedged { pc: u32 },
}

/// Effect of one step on the machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepEvent {
    /// An instruction retired; `raised` carries the vector if it was a
    /// software interrupt.
    Retired { pc: u32, instr: Instr, raised: Option<u32> },
    /// The halt instruction retired; pc stays on it.
    Halted { pc: u32 },
    /// A pending external interrupt was delivered instead of executing.
    Interrupt { vector: u32, link: u32 },
    /// The instruction faulted; it did not retire and will re-execute
    /// after the handler returns.
    Faulted { vector: u32, link: u32 },
    Undefined { pc: u32 },
    DeliveryFailed { vector: u32 },
}

/// What executing a single instruction does, besides register effects.
enum Effect {
    Continue,
    Jump(u32),
    Halted,
    Raise { vector: u32, link: u32 },
}

/// Execute one architectural step: service a pending interrupt if any,
/// otherwise fetch, execute, and retire (or fault) one instruction.
pub fn step(m: &mut Machine) -> StepEvent {
    if let Some(trigger) = m.irq.peek(m.retired) {
        let link = m.cpu.pc;
        return match m.deliver(trigger.vector, link) {
            Ok(()) => {
                m.irq.acknowledge(m.retired);
                StepEvent::Interrupt { vector: trigger.vector, link }
            }
            Err(_) => StepEvent::DeliveryFailed { vector: trigger.vector },
        };
    }

    let pc = m.cpu.pc;
    let Some(instr) = m.program.instrs.get(&pc).cloned() else {
        return StepEvent::Undefined { pc };
    };

    match execute(m, &instr, pc) {
        Ok(Effect::Continue) => {
            m.cpu.pc = pc.wrapping_add(4);
            m.retired += 1;
            StepEvent::Retired { pc, instr, raised: None }
        }
        Ok(Effect::Jump(target)) => {
            m.cpu.pc = target;
            m.retired += 1;
            StepEvent::Retired { pc, instr, raised: None }
        }
        Ok(Effect::Halted) => {
            m.retired += 1;
            StepEvent::Halted { pc }
        }
        Ok(Effect::Raise { vector, link }) => {
            m.retired += 1;
            match m.deliver(vector, link) {
                Ok(()) => StepEvent::Retired { pc, instr, raised: Some(vector) },
                Err(_) => StepEvent::DeliveryFailed { vector },
            }
        }
        Err(fault) => {
            let vector = fault.vector();
            let link = fault.link(pc);
            match m.deliver(vector, link) {
                Ok(()) => StepEvent::Faulted { vector, link },
                Err(_) => StepEvent::DeliveryFailed { vector },
            }
        }
    }
}

/// Deliveries allowed without an intervening retirement before the run is
/// declared wedged (a handler whose first instruction faults back into
/// itself, for example).
const MAX_BACK_TO_BACK_DELIVERIES: u32 = 64;

/// Run until halt, fuel exhaustion, or a terminal condition. `fuel` bounds
/// retired instructions.
pub fn run(m: &mut Machine, fuel: u64) -> (RunOutcome, Trace) {
    let mut trace = Trace::default();
    let mut stuck = 0u32;
    loop {
        if m.retired >= fuel {
            return (RunOutcome::FuelExhausted, trace);
        }
        match step(m) {
            StepEvent::Retired { pc, instr, raised } => {
                stuck = 0;
                trace.entries.push(TraceEntry { pc, instr, nzcv: m.cpu.nzcv });
                if let Some(vector) = raised {
                    trace.deliveries.push(Delivery {
                        at_retired: m.retired,
                        vector,
                        link: pc.wrapping_add(4),
                    });
                }
            }
            StepEvent::Halted { pc } => {
                trace.entries.push(TraceEntry {
                    pc,
                    instr: Instr::Halt,
                    nzcv: m.cpu.nzcv,
                });
                return (RunOutcome::Halted, trace);
            }
            StepEvent::Interrupt { vector, link } | StepEvent::Faulted { vector, link } => {
                stuck += 1;
                if stuck > MAX_BACK_TO_BACK_DELIVERIES {
                    return (RunOutcome::Wedged { pc: m.cpu.pc }, trace);
                }
                trace.deliveries.push(Delivery { at_retired: m.retired, vector, link });
            }
            StepEvent::Undefined { pc } => {
                return (RunOutcome::UndefinedInstruction { pc }, trace);
            }
            StepEvent::DeliveryFailed { vector } => {
                return (RunOutcome::DeliveryFailed { vector }, trace);
            }
        }
    }
}

fn operand(m: &Machine, op: Operand) -> u32 {
    match op {
        Operand::Reg(r) => m.cpu.reg(r),
        Operand::Imm(v) => v as u32,
    }
}

fn execute(m: &mut Machine, instr: &Instr, pc: u32) -> Result<Effect, Fault> {
    let require_privileged = |m: &Machine| {
        if m.cpu.mode == Mode::User {
            Err(Fault::Privilege { pc })
        } else {
            Ok(())
        }
    };
    match *instr {
        Instr::Move { op, cond, set_flags, rd, src } => {
            if cond.holds(m.cpu.nzcv) {
                let value = match op {
                    MoveOp::Mov => operand(m, src),
                    MoveOp::Mvn => !operand(m, src),
                };
                m.cpu.set_reg(rd, value);
                if set_flags {
                    set_nz(&mut m.cpu.nzcv, value);
                }
            }
            Ok(Effect::Continue)
        }
        Instr::Alu { op, cond, set_flags, rd, rn, src } => {
            if cond.holds(m.cpu.nzcv) {
                let a = m.cpu.reg(rn);
                let b = operand(m, src);
                let (value, flags) = alu(op, a, b, m.cpu.nzcv);
                m.cpu.set_reg(rd, value);
                if set_flags {
                    m.cpu.nzcv = flags;
                }
            }
            Ok(Effect::Continue)
        }
        Instr::Cmp { rn, src } => {
            let a = m.cpu.reg(rn);
            let b = operand(m, src);
            let (_, flags) = alu(AluOp::Sub, a, b, m.cpu.nzcv);
            m.cpu.nzcv = flags;
            Ok(Effect::Continue)
        }
        Instr::Ldr { rd, rn, off } => {
            let addr = m.cpu.reg(rn).wrapping_add(off as u32);
            let value = m.load(addr)?;
            m.cpu.set_reg(rd, value);
            Ok(Effect::Continue)
        }
        Instr::Str { rs, rn, off } => {
            let addr = m.cpu.reg(rn).wrapping_add(off as u32);
            let value = m.cpu.reg(rs);
            m.store(addr, value)?;
            Ok(Effect::Continue)
        }
        Instr::B { cond, target } => {
            if cond.holds(m.cpu.nzcv) {
                Ok(Effect::Jump(target))
            } else {
                Ok(Effect::Continue)
            }
        }
        Instr::Bl { target } => {
            m.cpu.set_reg(Reg::LR, pc.wrapping_add(4));
            Ok(Effect::Jump(target))
        }
        Instr::Bx { rm } => Ok(Effect::Jump(m.cpu.reg(rm))),
        Instr::Vmsr { sysreg, rn } => {
            require_privileged(m)?;
            let value = m.cpu.reg(rn);
            m.cpu.sysregs.insert(sysreg, value);
            Ok(Effect::Continue)
        }
        Instr::Vmrs { rd, sysreg } => {
            require_privileged(m)?;
            let value = m.cpu.sysreg(sysreg);
            m.cpu.set_reg(rd, value);
            Ok(Effect::Continue)
        }
        Instr::SetCpsr { rn } => {
            require_privileged(m)?;
            let value = m.cpu.reg(rn);
            m.cpu.nzcv = Ccr((value & 0xf) as u8);
            m.cpu.mode = Mode::from_bit((value >> 4) & 1);
            Ok(Effect::Continue)
        }
        Instr::GetCpsr { rd } => {
            require_privileged(m)?;
            let value = m.cpu.cpsr();
            m.cpu.set_reg(rd, value);
            Ok(Effect::Continue)
        }
        Instr::Tlbi => {
            require_privileged(m)?;
            m.tlb.invalidate_all();
            Ok(Effect::Continue)
        }
        Instr::Svc { vector } => {
            Ok(Effect::Raise { vector, link: pc.wrapping_add(4) })
        }
        Instr::Halt => Ok(Effect::Halted),
    }
}

fn set_nz(nzcv: &mut Ccr, value: u32) {
    let n = value & 0x8000_0000 != 0;
    let z = value == 0;
    *nzcv = Ccr::from_bits(n, z, nzcv.c(), nzcv.v());
}

/// Compute one ALU operation and the full flag word it would produce with
/// the S suffix, starting from the current flags for the preserved bits.
fn alu(op: AluOp, a: u32, b: u32, current: Ccr) -> (u32, Ccr) {
    match op {
        AluOp::Add => {
            let value = a.wrapping_add(b);
            let carry = (u64::from(a) + u64::from(b)) > u64::from(u32::MAX);
            let overflow = (a ^ value) & (b ^ value) & 0x8000_0000 != 0;
            (value, full_flags(value, carry, overflow))
        }
        AluOp::Sub => {
            let value = a.wrapping_sub(b);
            let carry = a >= b;
            let overflow = (a ^ b) & (a ^ value) & 0x8000_0000 != 0;
            (value, full_flags(value, carry, overflow))
        }
        AluOp::And => logical(a & b, current),
        AluOp::Orr => logical(a | b, current),
        AluOp::Eor => logical(a ^ b, current),
        AluOp::Lsl => {
            let amount = b & 31;
            let value = a << amount;
            let carry = if amount == 0 {
                current.c()
            } else {
                (u64::from(a) << amount) >> 32 & 1 != 0
            };
            shifted(value, carry, current)
        }
        AluOp::Lsr => {
            let amount = b & 31;
            let value = a >> amount;
            let carry = if amount == 0 {
                current.c()
            } else {
                (a >> (amount - 1)) & 1 != 0
            };
            shifted(value, carry, current)
        }
    }
}

fn full_flags(value: u32, carry: bool, overflow: bool) -> Ccr {
    Ccr::from_bits(value & 0x8000_0000 != 0, value == 0, carry, overflow)
}

fn logical(value: u32, current: Ccr) -> (u32, Ccr) {
    let flags =
        Ccr::from_bits(value & 0x8000_0000 != 0, value == 0, current.c(), current.v());
    (value, flags)
}

fn shifted(value: u32, carry: bool, current: Ccr) -> (u32, Ccr) {
    let flags = Ccr::from_bits(value & 0x8000_0000 != 0, value == 0, carry, current.v());
    (value, flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guest::asm::parse_program;
    use crate::guest::SysReg;
    use crate::machine::irq::IrqTrigger;
    use crate::machine::mmu::PageTableBuilder;
    use crate::machine::{vectors, InterruptController};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn machine(src: &str) -> Machine {
        Machine::new(parse_program(src).unwrap())
    }

    #[test]
    fn cmp_of_equal_values_sets_z_clears_n() {
        let mut m = machine("mov r1, #7\ncmp r1, r1\nhalt\n");
        let (outcome, _) = run(&mut m, 100);
        assert_eq!(outcome, RunOutcome::Halted);
        assert!(m.cpu.nzcv.z());
        assert!(!m.cpu.nzcv.n());
    }

    #[test]
    fn failed_condition_nullifies_but_retires() {
        let mut m = machine("cmp r0, #1\naddeq r0, r0, #1\nhalt\n");
        let (outcome, trace) = run(&mut m, 100);
        assert_eq!(outcome, RunOutcome::Halted);
        assert_eq!(m.cpu.reg(Reg(0)), 0);
        assert_eq!(trace.retired(), 3);
    }

    #[test]
    fn summing_loop_matches_hand_arithmetic() {
        let src = "\
mov r0, #0
mov r1, #5
loop:
add r0, r0, r1
subs r1, r1, #1
bne loop
halt
";
        let mut m = machine(src);
        let (outcome, trace) = run(&mut m, 100);
        assert_eq!(outcome, RunOutcome::Halted);
        // 5+4+3+2+1 by hand; 2 setup + 5*3 loop + halt retirements.
        assert_eq!(m.cpu.reg(Reg(0)), 15);
        assert_eq!(trace.retired(), 18);
    }

    #[test]
    fn empty_program_stops_with_nothing_retired() {
        let mut m = Machine::new(parse_program("").unwrap());
        let (outcome, trace) = run(&mut m, 100);
        assert_eq!(outcome, RunOutcome::UndefinedInstruction { pc: 0 });
        assert_eq!(trace.retired(), 0);
    }

    #[test]
    fn zero_fuel_exhausts_immediately() {
        let mut m = machine("halt\n");
        let (outcome, trace) = run(&mut m, 0);
        assert_eq!(outcome, RunOutcome::FuelExhausted);
        assert_eq!(trace.retired(), 0);
    }

    #[test]
    fn halt_leaves_pc_on_the_halt_instruction() {
        let mut m = machine("mov r0, #1\nhalt\n");
        let (outcome, _) = run(&mut m, 100);
        assert_eq!(outcome, RunOutcome::Halted);
        assert_eq!(m.cpu.pc, 4);
    }

    #[test]
    fn bl_links_and_bx_returns() {
        let src = "\
bl sub
mov r1, #9
halt
sub:
mov r0, #3
bx lr
";
        let mut m = machine(src);
        let (outcome, _) = run(&mut m, 100);
        assert_eq!(outcome, RunOutcome::Halted);
        assert_eq!(m.cpu.reg(Reg(0)), 3);
        assert_eq!(m.cpu.reg(Reg(1)), 9);
        assert_eq!(m.cpu.reg(Reg::LR), 4);
    }

    #[test]
    fn flag_semantics_match_wide_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x41c4);
        for _ in 0..4000 {
            let a: u32 = rng.gen();
            let b: u32 = rng.gen();
            let start = Ccr((rng.gen::<u8>()) & 0xf);

            let (value, f) = alu(AluOp::Add, a, b, start);
            let wide = u64::from(a) + u64::from(b);
            let signed = i64::from(a as i32) + i64::from(b as i32);
            assert_eq!(value, wide as u32);
            assert_eq!(f.n(), (wide as u32) & 0x8000_0000 != 0);
            assert_eq!(f.z(), wide as u32 == 0);
            assert_eq!(f.c(), wide > u64::from(u32::MAX));
            assert_eq!(f.v(), signed < i64::from(i32::MIN) || signed > i64::from(i32::MAX));

            let (value, f) = alu(AluOp::Sub, a, b, start);
            let signed = i64::from(a as i32) - i64::from(b as i32);
            assert_eq!(value, a.wrapping_sub(b));
            assert_eq!(f.c(), u64::from(a) >= u64::from(b));
            assert_eq!(f.v(), signed < i64::from(i32::MIN) || signed > i64::from(i32::MAX));

            let (_, f) = alu(AluOp::And, a, b, start);
            assert_eq!((f.c(), f.v()), (start.c(), start.v()));

            let amount = b & 31;
            let (value, f) = alu(AluOp::Lsl, a, b, start);
            assert_eq!(value, a << amount);
            let expect_c =
                if amount == 0 { start.c() } else { (a >> (32 - amount)) & 1 != 0 };
            assert_eq!(f.c(), expect_c);
            assert_eq!(f.v(), start.v());

            let (value, f) = alu(AluOp::Lsr, a, b, start);
            assert_eq!(value, a >> amount);
            let expect_c =
                if amount == 0 { start.c() } else { (a >> (amount - 1)) & 1 != 0 };
            assert_eq!(f.c(), expect_c);
        }
    }

    #[test]
    fn interrupt_fires_at_its_trigger_and_handler_returns() {
        let src = "\
mov r7, #0
work:
add r7, r7, #1
cmp r7, #30
bne work
halt

.org 0x8000
handler:
add r9, r9, #1
vmrs r10, spsr
setcpsr r10
vmrs r10, elr
bx r10
";
        let mut m = machine(src);
        m.handlers.insert(0x20, 0x8000);
        m.irq = InterruptController::new(vec![IrqTrigger { after: 10, vector: 0x20 }]);
        let (outcome, trace) = run(&mut m, 1000);
        assert_eq!(outcome, RunOutcome::Halted);
        assert_eq!(m.cpu.reg(Reg(9)), 1);
        assert_eq!(m.cpu.reg(Reg(7)), 30);
        assert_eq!(trace.deliveries.len(), 1);
        assert_eq!(trace.deliveries[0].at_retired, 10);
        // Handler effects appear only at retired index >= 10.
        for entry in &trace.entries[..10] {
            assert!(entry.pc < 0x8000);
        }
        assert_eq!(trace.entries[10].pc, 0x8000);

        // Determinism: an identical machine produces an identical trace.
        let mut m2 = machine(src);
        m2.handlers.insert(0x20, 0x8000);
        m2.irq = InterruptController::new(vec![IrqTrigger { after: 10, vector: 0x20 }]);
        let (outcome2, trace2) = run(&mut m2, 1000);
        assert_eq!(outcome2, outcome);
        assert_eq!(trace2, trace);
        assert_eq!(m2.cpu, m.cpu);
    }

    #[test]
    fn svc_links_past_the_instruction() {
        let src = "\
svc 0x30
mov r1, #5
halt

.org 0x200
handler:
vmrs r2, elr
vmrs r3, spsr
setcpsr r3
bx r2
";
        let mut m = machine(src);
        m.handlers.insert(0x30, 0x200);
        let (outcome, trace) = run(&mut m, 100);
        assert_eq!(outcome, RunOutcome::Halted);
        assert_eq!(m.cpu.reg(Reg(1)), 5);
        assert_eq!(m.cpu.reg(Reg(2)), 4);
        assert_eq!(trace.deliveries.len(), 1);
        assert_eq!(trace.deliveries[0].link, 4);
    }

    #[test]
    fn fault_banks_state_and_reexecutes_after_fix() {
        // Page 0x10 mapped read-only; the handler flips it writable and
        // returns, so the faulting store runs again and succeeds.
        let src = "\
mov r0, #0x10000
mov r1, #0x77
str r1, [r0]
ldr r2, [r0]
halt

.org 0x400
handler:
mov r4, #0x5040
mov r5, #0x10003
str r5, [r4]
tlbi
vmrs r6, spsr
setcpsr r6
vmrs r6, elr
bx r6
";
        let mut m = machine(src);
        m.handlers.insert(vectors::PAGE_FAULT, 0x400);
        let mut builder = PageTableBuilder::new(0x4000);
        builder.map(&mut m.mem, 0x10, 0x10, false);
        // Identity-map the page holding the second-level table (the first
        // one the builder allocates, at 0x5000) so the handler can rewrite
        // the leaf descriptor for page 0x10 through the mmu.
        builder.map(&mut m.mem, 0x5, 0x5, true);
        m.page_table = builder.finish();
        let (outcome, trace) = run(&mut m, 100);
        assert_eq!(outcome, RunOutcome::Halted);
        assert_eq!(m.cpu.reg(Reg(2)), 0x77);
        assert_eq!(trace.deliveries.len(), 1);
        // Link points at the faulting store, which retires exactly once.
        assert_eq!(trace.deliveries[0].link, 8);
        let stores = trace.entries.iter().filter(|e| e.pc == 8).count();
        assert_eq!(stores, 1);
    }

    #[test]
    fn privilege_fault_reports_the_trapping_pc() {
        let src = "\
mov r0, #0
setcpsr r0
vmsr fpscr, r1
halt

.org 0x300
handler:
vmrs r8, elr
halt
";
        let mut m = machine(src);
        m.handlers.insert(vectors::PRIVILEGE, 0x300);
        let (outcome, _) = run(&mut m, 100);
        assert_eq!(outcome, RunOutcome::Halted);
        assert_eq!(m.cpu.reg(Reg(8)), 8);
        assert_eq!(m.cpu.mode, Mode::Privileged);
    }

    #[test]
    fn unconfigured_vector_is_terminal() {
        let mut m = machine("ldr r0, [r1, #1]\nhalt\n");
        m.cpu.set_reg(Reg(1), 1);
        let (outcome, _) = run(&mut m, 100);
        assert_eq!(
            outcome,
            RunOutcome::DeliveryFailed { vector: vectors::ALIGNMENT }
        );
    }

    #[test]
    fn endlessly_refaulting_handler_is_wedged() {
        // The page-fault handler begins with a load that itself page
        // faults, so deliveries recur without progress.
        let src = "\
ldr r0, [r1]
halt

.org 0x500
handler:
ldr r2, [r3]
halt
";
        let mut m = machine(src);
        m.handlers.insert(vectors::PAGE_FAULT, 0x500);
        let mut builder = PageTableBuilder::new(0x4000);
        builder.map(&mut m.mem, 0x1, 0x1, true);
        m.page_table = builder.finish();
        m.cpu.set_reg(Reg(1), 0x9_0000);
        m.cpu.set_reg(Reg(3), 0x9_0000);
        let (outcome, _) = run(&mut m, 10_000);
        assert!(matches!(outcome, RunOutcome::Wedged { .. }));
    }

    #[test]
    fn getcpsr_setcpsr_round_trip() {
        let src = "\
cmp r0, #1
getcpsr r1
mov r2, #0x10
setcpsr r2
setcpsr r1
halt
";
        let mut m = machine(src);
        let (outcome, _) = run(&mut m, 100);
        assert_eq!(outcome, RunOutcome::Halted);
        // cmp 0,#1 gives N=1 C=0 (borrow), Z=0, V=0; mode bit 4 set.
        assert_eq!(m.cpu.reg(Reg(1)), 0b1_1000);
        assert_eq!(m.cpu.nzcv, Ccr(0b1000));
        assert_eq!(m.cpu.mode, Mode::Privileged);
    }

    #[test]
    fn vmsr_round_trips_through_sysreg_file() {
        let mut m = machine("mov r3, #0x55\nvmsr fpscr, r3\nvmrs r4, fpscr\nhalt\n");
        let (outcome, _) = run(&mut m, 100);
        assert_eq!(outcome, RunOutcome::Halted);
        assert_eq!(m.cpu.sysreg(SysReg::Fpscr), 0x55);
        assert_eq!(m.cpu.reg(Reg(4)), 0x55);
    }
}
