//! Microprogram executor: one instruction set shared by every arithmetic
//! routine, so results and cost ledgers always come from the same machine.
//!
//! The machine owns a DBC, a single 512-bit row buffer, the latched signals
//! of the most recent transverse read, and the two predication banks. Every
//! instruction charges the ledger as it executes:
//!
//! | op                    | charge                                  |
//! |-----------------------|-----------------------------------------|
//! | `shift up/down k`     | k shifts, k cycles                      |
//! | `read` / `write`      | 1 access, 1 cycle                       |
//! | `wor`                 | 1 write, 1 cycle (set-only merge pulse) |
//! | `setrb imm`           | 1 cycle                                 |
//! | `rbnot/rband/rbor/rbxor` | 1 cycle (peripheral logic on the buffered row) |
//! | `tr k`                | 1 TR, 1 cycle                           |
//! | `selsig` / `lanes`    | 1 cycle                                 |
//! | `wsig`                | 1 write, 1 cycle                        |
//! | `lsh`                 | 1 logical shift, 1 cycle                |
//! | `pred` / `papply`     | 1 predicated op, 1 cycle (+1 write when the action writes a row) |
//!
//! Microprograms have a stable text form, one op per line, `#` comments.
//! Parsing that text and building [`Program`]s in code yield the same ops.

use serde::Serialize;

use crate::cim::{
    lane_shift, logical_shift, CimSignals, PredBank, PredGate, PredLoadMode, PredUnit,
    ShiftAmount, ShiftSide, SignalKind,
};
use crate::cost::CostLedger;
use crate::device::{AccessPort, Dbc, Geometry, ShiftDir};
use crate::error::ExecError;
use crate::row::{Row512, LANE_WIDTHS};

/// Action half of a predicated apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredAction {
    /// Merge the row buffer into the addressed row in gated lanes.
    Write(AccessPort),
    /// Zero the row buffer in gated lanes.
    Reset,
    /// Complement the row buffer in gated lanes.
    Not,
    /// Lane-confined logical shift of the row buffer in gated lanes.
    Shl(ShiftAmount),
    Shr(ShiftAmount),
    /// Load an immediate into the row buffer in gated lanes.
    SetImm(Row512),
}

impl std::fmt::Display for PredAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PredAction::Write(ap) => write!(f, "write {ap}"),
            PredAction::Reset => write!(f, "reset"),
            PredAction::Not => write!(f, "not"),
            PredAction::Shl(a) => write!(f, "shl{}", a.bits()),
            PredAction::Shr(a) => write!(f, "shr{}", a.bits()),
            PredAction::SetImm(row) => write!(f, "setimm {row}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MicroOp {
    /// Select the lane width for predication and lane-confined shifts.
    Lanes(usize),
    Shift(ShiftDir, u32),
    Read(AccessPort),
    Write(AccessPort),
    /// OR-merge the row buffer into the addressed row.
    WriteOr(AccessPort),
    SetRb(Row512),
    RbNot,
    RbAnd(Row512),
    RbOr(Row512),
    RbXor(Row512),
    /// Transverse read; the operand count fixes the k-ary AND threshold.
    Tr(u32),
    SelSig(SignalKind),
    /// Masked write of a latched signal to a row: only mask bits change.
    WSig(SignalKind, AccessPort, Row512),
    Lsh(ShiftSide, ShiftAmount),
    Pred(PredBank, PredLoadMode, u32),
    PApply(PredGate, PredAction),
}

impl std::fmt::Display for MicroOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MicroOp::Lanes(w) => write!(f, "lanes {w}"),
            MicroOp::Shift(dir, k) => write!(f, "shift {dir} {k}"),
            MicroOp::Read(ap) => write!(f, "read {ap}"),
            MicroOp::Write(ap) => write!(f, "write {ap}"),
            MicroOp::WriteOr(ap) => write!(f, "wor {ap}"),
            MicroOp::SetRb(row) => write!(f, "setrb {row}"),
            MicroOp::RbNot => write!(f, "rbnot"),
            MicroOp::RbAnd(row) => write!(f, "rband {row}"),
            MicroOp::RbOr(row) => write!(f, "rbor {row}"),
            MicroOp::RbXor(row) => write!(f, "rbxor {row}"),
            MicroOp::Tr(k) => write!(f, "tr {k}"),
            MicroOp::SelSig(sig) => write!(f, "selsig {sig}"),
            MicroOp::WSig(sig, ap, mask) => write!(f, "wsig {sig} {ap} {mask}"),
            MicroOp::Lsh(side, amount) => {
                let s = match side {
                    ShiftSide::Left => "l",
                    ShiftSide::Right => "r",
                };
                write!(f, "lsh {s} {}", amount.bits())
            }
            MicroOp::Pred(bank, mode, src) => write!(f, "pred {bank} {mode} {src}"),
            MicroOp::PApply(gate, action) => write!(f, "papply {gate} {action}"),
        }
    }
}

/// A microprogram: a flat op sequence with a text serialization.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Program(pub Vec<MicroOp>);

impl Program {
    pub fn new() -> Program {
        Program(Vec::new())
    }

    pub fn push(&mut self, op: MicroOp) {
        self.0.push(op);
    }

    pub fn extend(&mut self, other: &Program) {
        self.0.extend_from_slice(&other.0);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn parse(text: &str) -> Result<Program, ExecError> {
        let mut ops = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let stripped = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            };
            let toks: Vec<&str> = stripped.split_whitespace().collect();
            if toks.is_empty() {
                continue;
            }
            ops.push(parse_op(&toks).map_err(|msg| ExecError::Parse { line, msg })?);
        }
        Ok(Program(ops))
    }
}

impl std::fmt::Display for Program {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for op in &self.0 {
            writeln!(f, "{op}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Program {
    type Err = ExecError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Program::parse(s)
    }
}

fn parse_ap(tok: &str) -> Result<AccessPort, String> {
    match tok {
        "ap0" => Ok(AccessPort::Ap0),
        "ap1" => Ok(AccessPort::Ap1),
        other => Err(format!("unknown access port `{other}`")),
    }
}

fn parse_row(tok: &str) -> Result<Row512, String> {
    Row512::parse(tok)
}

fn parse_num<T: std::str::FromStr>(tok: &str, what: &str) -> Result<T, String> {
    tok.parse::<T>().map_err(|_| format!("bad {what} `{tok}`"))
}

fn parse_op(toks: &[&str]) -> Result<MicroOp, String> {
    let arity = |n: usize| {
        if toks.len() == n + 1 {
            Ok(())
        } else {
            Err(format!("`{}` takes {n} argument(s)", toks[0]))
        }
    };
    match toks[0] {
        "lanes" => {
            arity(1)?;
            Ok(MicroOp::Lanes(parse_num(toks[1], "lane width")?))
        }
        "shift" => {
            arity(2)?;
            let dir = match toks[1] {
                "up" => ShiftDir::Up,
                "down" => ShiftDir::Down,
                other => return Err(format!("unknown shift direction `{other}`")),
            };
            Ok(MicroOp::Shift(dir, parse_num(toks[2], "shift count")?))
        }
        "read" => {
            arity(1)?;
            Ok(MicroOp::Read(parse_ap(toks[1])?))
        }
        "write" => {
            arity(1)?;
            Ok(MicroOp::Write(parse_ap(toks[1])?))
        }
        "wor" => {
            arity(1)?;
            Ok(MicroOp::WriteOr(parse_ap(toks[1])?))
        }
        "setrb" => {
            arity(1)?;
            Ok(MicroOp::SetRb(parse_row(toks[1])?))
        }
        "rbnot" => {
            arity(0)?;
            Ok(MicroOp::RbNot)
        }
        "rband" => {
            arity(1)?;
            Ok(MicroOp::RbAnd(parse_row(toks[1])?))
        }
        "rbor" => {
            arity(1)?;
            Ok(MicroOp::RbOr(parse_row(toks[1])?))
        }
        "rbxor" => {
            arity(1)?;
            Ok(MicroOp::RbXor(parse_row(toks[1])?))
        }
        "tr" => {
            arity(1)?;
            Ok(MicroOp::Tr(parse_num(toks[1], "operand count")?))
        }
        "selsig" => {
            arity(1)?;
            Ok(MicroOp::SelSig(toks[1].parse()?))
        }
        "wsig" => {
            arity(3)?;
            Ok(MicroOp::WSig(
                toks[1].parse()?,
                parse_ap(toks[2])?,
                parse_row(toks[3])?,
            ))
        }
        "lsh" => {
            arity(2)?;
            let side = match toks[1] {
                "l" => ShiftSide::Left,
                "r" => ShiftSide::Right,
                other => return Err(format!("unknown shift side `{other}`")),
            };
            let amount = match toks[2] {
                "1" => ShiftAmount::One,
                "8" => ShiftAmount::Eight,
                other => return Err(format!("logical shifter supports 1 or 8, not `{other}`")),
            };
            Ok(MicroOp::Lsh(side, amount))
        }
        "pred" => {
            arity(3)?;
            let bank = match toks[1] {
                "p" => PredBank::P,
                "q" => PredBank::Q,
                other => return Err(format!("unknown predicate bank `{other}`")),
            };
            Ok(MicroOp::Pred(
                bank,
                toks[2].parse()?,
                parse_num(toks[3], "predicate source")?,
            ))
        }
        "papply" => {
            if toks.len() < 3 {
                return Err("`papply` takes a gate and an action".into());
            }
            let gate: PredGate = toks[1].parse()?;
            let action = match (toks[2], toks.len()) {
                ("write", 4) => PredAction::Write(parse_ap(toks[3])?),
                ("reset", 3) => PredAction::Reset,
                ("not", 3) => PredAction::Not,
                ("shl1", 3) => PredAction::Shl(ShiftAmount::One),
                ("shr1", 3) => PredAction::Shr(ShiftAmount::One),
                ("shl8", 3) => PredAction::Shl(ShiftAmount::Eight),
                ("shr8", 3) => PredAction::Shr(ShiftAmount::Eight),
                ("setimm", 4) => PredAction::SetImm(parse_row(toks[3])?),
                (other, _) => return Err(format!("unknown papply action `{other}`")),
            };
            Ok(MicroOp::PApply(gate, action))
        }
        other => Err(format!("unknown op `{other}`")),
    }
}

/// One executed op with its ledger delta; a trace is the per-op cost story.
#[derive(Debug, Clone, Serialize)]
pub struct TraceEvent {
    pub index: usize,
    pub op: String,
    pub charge: CostLedger,
    pub rb: String,
}

#[derive(Debug)]
pub struct Machine {
    pub dbc: Dbc,
    pub rb: Row512,
    signals: Option<CimSignals>,
    pred: PredUnit,
    lane_width: usize,
    executed: usize,
    trace: Option<Vec<TraceEvent>>,
    traced: CostLedger,
}

impl Machine {
    pub fn new(geom: Geometry) -> Machine {
        Machine {
            dbc: Dbc::new(geom),
            rb: Row512::ZERO,
            signals: None,
            pred: PredUnit::default(),
            lane_width: 64,
            executed: 0,
            trace: None,
            traced: CostLedger::default(),
        }
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
        self.traced = self.dbc.ledger;
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        self.trace.take().unwrap_or_default()
    }

    pub fn lane_width(&self) -> usize {
        self.lane_width
    }

    pub fn ledger(&self) -> CostLedger {
        self.dbc.ledger
    }

    fn signals(&self) -> Result<&CimSignals, ExecError> {
        self.signals
            .as_ref()
            .ok_or(ExecError::NoSignals(self.executed))
    }

    /// Row value behind a port without a device access (merge source for
    /// masked writes; the datapath keeps unselected bit lines quiescent).
    fn backing_row(&self, ap: AccessPort) -> Row512 {
        let idx = self.dbc.row_at(ap);
        if idx >= 0 && (idx as u32) < self.dbc.geometry().data_domains {
            self.dbc.peek_row(idx as usize)
        } else {
            Row512::ZERO
        }
    }

    pub fn step(&mut self, op: &MicroOp) -> Result<(), ExecError> {
        match *op {
            MicroOp::Lanes(w) => {
                if !LANE_WIDTHS.contains(&w) {
                    return Err(ExecError::LanePackingError(format!(
                        "unsupported lane width {w}"
                    )));
                }
                self.lane_width = w;
                self.dbc.ledger.cycles += 1;
            }
            MicroOp::Shift(dir, k) => self.dbc.shift(dir, k)?,
            MicroOp::Read(ap) => self.rb = self.dbc.read_row(ap)?,
            MicroOp::Write(ap) => self.dbc.write_row(ap, self.rb)?,
            MicroOp::WriteOr(ap) => {
                let merged = self.backing_row(ap).or(&self.rb);
                self.dbc.write_row(ap, merged)?;
            }
            MicroOp::SetRb(row) => {
                self.rb = row;
                self.dbc.ledger.cycles += 1;
            }
            MicroOp::RbNot => {
                self.rb = self.rb.not();
                self.charge_rb_logic();
            }
            MicroOp::RbAnd(row) => {
                self.rb = self.rb.and(&row);
                self.charge_rb_logic();
            }
            MicroOp::RbOr(row) => {
                self.rb = self.rb.or(&row);
                self.charge_rb_logic();
            }
            MicroOp::RbXor(row) => {
                self.rb = self.rb.xor(&row);
                self.charge_rb_logic();
            }
            MicroOp::Tr(k) => {
                let counts = self.dbc.transverse_read()?;
                self.signals = Some(CimSignals::derive(&counts, k)?);
            }
            MicroOp::SelSig(kind) => {
                self.rb = self.signals()?.select(kind);
                self.dbc.ledger.cycles += 1;
            }
            MicroOp::WSig(kind, ap, mask) => {
                let sig = self.signals()?.select(kind);
                let merged = sig.and(&mask).or(&self.backing_row(ap).and(&mask.not()));
                self.dbc.write_row(ap, merged)?;
            }
            MicroOp::Lsh(side, amount) => {
                self.rb = logical_shift(&self.rb, side, amount);
                self.dbc.ledger.logical_shifts += 1;
                self.dbc.ledger.cycles += 1;
            }
            MicroOp::Pred(bank, mode, src) => {
                self.pred.load(bank, mode, &self.rb, src, self.lane_width)?;
                self.dbc.ledger.predicated_ops += 1;
                self.dbc.ledger.cycles += 1;
            }
            MicroOp::PApply(gate, action) => {
                match action {
                    PredAction::Write(ap) => {
                        let merged = self.pred.apply(gate, &self.backing_row(ap), &self.rb);
                        self.dbc.write_row(ap, merged)?;
                        self.dbc.ledger.predicated_ops += 1;
                        // write_row already charged the cycle.
                        self.executed += 1;
                        self.note_trace(op);
                        return Ok(());
                    }
                    PredAction::Reset => {
                        self.rb = self.pred.apply(gate, &self.rb, &Row512::ZERO);
                    }
                    PredAction::Not => {
                        self.rb = self.pred.apply(gate, &self.rb, &self.rb.not());
                    }
                    PredAction::Shl(a) => {
                        let shifted = lane_shift(&self.rb, self.lane_width, ShiftSide::Left, a);
                        self.rb = self.pred.apply(gate, &self.rb, &shifted);
                    }
                    PredAction::Shr(a) => {
                        let shifted = lane_shift(&self.rb, self.lane_width, ShiftSide::Right, a);
                        self.rb = self.pred.apply(gate, &self.rb, &shifted);
                    }
                    PredAction::SetImm(row) => {
                        self.rb = self.pred.apply(gate, &self.rb, &row);
                    }
                }
                self.dbc.ledger.predicated_ops += 1;
                self.dbc.ledger.cycles += 1;
            }
        }
        self.executed += 1;
        self.note_trace(op);
        Ok(())
    }

    fn charge_rb_logic(&mut self) {
        self.dbc.ledger.cycles += 1;
    }

    fn note_trace(&mut self, op: &MicroOp) {
        if self.trace.is_none() {
            return;
        }
        let index = self.executed - 1;
        let ledger = self.dbc.ledger;
        let charge = ledger.since(&self.traced);
        self.traced = ledger;
        self.trace.as_mut().unwrap().push(TraceEvent {
            index,
            op: op.to_string(),
            charge,
            rb: self.rb.to_string(),
        });
    }

    pub fn run(&mut self, prog: &Program) -> Result<(), ExecError> {
        for (index, op) in prog.0.iter().enumerate() {
            self.step(op).map_err(|e| ExecError::At {
                index,
                op: op.to_string(),
                source: Box::new(e),
            })?;
        }
        Ok(())
    }
}
