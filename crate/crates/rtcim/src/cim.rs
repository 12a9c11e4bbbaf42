//! CIM unit: turns transverse-read ones counts into logic signals, holds the
//! row buffer's predication state, and applies lane-wise predicated actions.
//!
//! For a 7-row window the sensed count per nanowire is 0..=7, i.e. three
//! bits. Writing the count as S + 2C + 4C' gives the signal set directly:
//!
//! * `xor`/`S`  = count bit 0 (odd parity)
//! * `c`        = count bit 1, equivalently (2 <= ones < 4) or (ones >= 6)
//! * `cprime`   = count bit 2, equivalently ones >= 4
//! * `or`       = ones >= 1
//! * `and`      = ones == operand count (pad unused window rows with
//!                all-ones rows to take a k-ary AND, k < 7)
//!
//! Predication: two lane-wise banks (P and Q). A bank loads from a row-buffer
//! bit of each lane, restricted to positions 0, 31 and 47, optionally
//! complemented or combined (or / and / andnot) with what the bank already
//! holds. Applies are gated on P, not-P, Q, not-Q or P-and-Q; a lane whose
//! gate is off performs a no-op that costs the same cycle.

use crate::device::OnesCounts;
use crate::error::ExecError;
use crate::row::Row512;

/// Row-buffer bit positions a predication register may load from.
pub const PREDICATE_SOURCES: [u32; 3] = [0, 31, 47];

/// Signals derived from one transverse read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CimSignals {
    pub operand_count: u32,
    /// Bit planes of the per-wire ones count (weights 1, 2, 4).
    pub ones: [Row512; 3],
    pub s: Row512,
    pub c: Row512,
    pub cprime: Row512,
    pub and: Row512,
    pub or: Row512,
}

impl CimSignals {
    /// Derive the signal set for a window sensed with `operand_count` live
    /// operand rows (1..=7).
    pub fn derive(counts: &OnesCounts, operand_count: u32) -> Result<CimSignals, ExecError> {
        if !(1..=7).contains(&operand_count) {
            return Err(ExecError::BadOperandCount(operand_count as usize));
        }
        let [b0, b1, b2] = counts.planes;
        let eq_plane = |plane: Row512, bit: u32| {
            if (operand_count >> bit) & 1 == 1 {
                plane
            } else {
                plane.not()
            }
        };
        Ok(CimSignals {
            operand_count,
            ones: counts.planes,
            s: b0,
            c: b1,
            cprime: b2,
            and: eq_plane(b0, 0).and(&eq_plane(b1, 1)).and(&eq_plane(b2, 2)),
            or: b0.or(&b1).or(&b2),
        })
    }

    pub fn select(&self, kind: SignalKind) -> Row512 {
        match kind {
            SignalKind::S => self.s,
            SignalKind::C => self.c,
            SignalKind::CPrime => self.cprime,
            SignalKind::And => self.and,
            SignalKind::Or => self.or,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SignalKind {
    S,
    C,
    CPrime,
    And,
    Or,
}

impl std::fmt::Display for SignalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            SignalKind::S => "s",
            SignalKind::C => "c",
            SignalKind::CPrime => "cp",
            SignalKind::And => "and",
            SignalKind::Or => "or",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for SignalKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "s" | "xor" => Ok(SignalKind::S),
            "c" => Ok(SignalKind::C),
            "cp" | "cprime" => Ok(SignalKind::CPrime),
            "and" => Ok(SignalKind::And),
            "or" => Ok(SignalKind::Or),
            other => Err(format!("unknown signal `{other}`")),
        }
    }
}

/// How a predicate load combines the sourced bit with the bank's old value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PredLoadMode {
    Set,
    SetNot,
    Or,
    And,
    AndNot,
}

impl std::fmt::Display for PredLoadMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            PredLoadMode::Set => "set",
            PredLoadMode::SetNot => "setnot",
            PredLoadMode::Or => "or",
            PredLoadMode::And => "and",
            PredLoadMode::AndNot => "andnot",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for PredLoadMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "set" => Ok(PredLoadMode::Set),
            "setnot" => Ok(PredLoadMode::SetNot),
            "or" => Ok(PredLoadMode::Or),
            "and" => Ok(PredLoadMode::And),
            "andnot" => Ok(PredLoadMode::AndNot),
            other => Err(format!("unknown predicate load mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PredBank {
    P,
    Q,
}

impl std::fmt::Display for PredBank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PredBank::P => write!(f, "p"),
            PredBank::Q => write!(f, "q"),
        }
    }
}

/// Gate controlling which lanes a predicated apply touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PredGate {
    P,
    NotP,
    Q,
    NotQ,
    PAndQ,
    PAndNotQ,
}

impl std::fmt::Display for PredGate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            PredGate::P => "p",
            PredGate::NotP => "np",
            PredGate::Q => "q",
            PredGate::NotQ => "nq",
            PredGate::PAndQ => "pq",
            PredGate::PAndNotQ => "pnq",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for PredGate {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "p" => Ok(PredGate::P),
            "np" => Ok(PredGate::NotP),
            "q" => Ok(PredGate::Q),
            "nq" => Ok(PredGate::NotQ),
            "pq" => Ok(PredGate::PAndQ),
            "pnq" => Ok(PredGate::PAndNotQ),
            other => Err(format!("unknown predicate gate `{other}`")),
        }
    }
}

/// The two lane-wise predication banks. Each is stored as a full-row mask
/// with a lane's every bit set when its predicate holds, which turns
/// predicated applies into three bitwise ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredUnit {
    p: Row512,
    q: Row512,
}

impl Default for PredUnit {
    fn default() -> Self {
        PredUnit {
            p: Row512::ZERO,
            q: Row512::ZERO,
        }
    }
}

impl PredUnit {
    /// Load a bank from row-buffer bit `source` of every `lane_width` lane.
    pub fn load(
        &mut self,
        bank: PredBank,
        mode: PredLoadMode,
        rb: &Row512,
        source: u32,
        lane_width: usize,
    ) -> Result<(), ExecError> {
        if !PREDICATE_SOURCES.contains(&source) {
            return Err(ExecError::IllegalPredicateSource(source));
        }
        if source as usize >= lane_width {
            return Err(ExecError::LanePackingError(format!(
                "predicate source bit {source} outside {lane_width}-bit lane"
            )));
        }
        let lanes = Row512::lanes(lane_width);
        let mut mask = Row512::ZERO;
        for lane in 0..lanes {
            let bit = rb.get_bit(lane * lane_width + source as usize);
            if bit {
                mask.set_lane(lane_width, lane, u64::MAX >> (64 - lane_width.min(64)));
            }
        }
        let target = match bank {
            PredBank::P => &mut self.p,
            PredBank::Q => &mut self.q,
        };
        *target = match mode {
            PredLoadMode::Set => mask,
            PredLoadMode::SetNot => mask.not(),
            PredLoadMode::Or => target.or(&mask),
            PredLoadMode::And => target.and(&mask),
            PredLoadMode::AndNot => target.and(&mask.not()),
        };
        Ok(())
    }

    pub fn clear(&mut self) {
        self.p = Row512::ZERO;
        self.q = Row512::ZERO;
    }

    /// Full-row mask of the gate (lanes fully set where the gate holds).
    pub fn gate_mask(&self, gate: PredGate) -> Row512 {
        match gate {
            PredGate::P => self.p,
            PredGate::NotP => self.p.not(),
            PredGate::Q => self.q,
            PredGate::NotQ => self.q.not(),
            PredGate::PAndQ => self.p.and(&self.q),
            PredGate::PAndNotQ => self.p.and(&self.q.not()),
        }
    }

    /// Merge `new` into `old` in the lanes where the gate holds.
    pub fn apply(&self, gate: PredGate, old: &Row512, new: &Row512) -> Row512 {
        let mask = self.gate_mask(gate);
        old.and(&mask.not()).or(&new.and(&mask))
    }
}

/// Logical shift of a whole row by the two amounts the shifter supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ShiftAmount {
    One,
    Eight,
}

impl ShiftAmount {
    pub fn bits(&self) -> usize {
        match self {
            ShiftAmount::One => 1,
            ShiftAmount::Eight => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ShiftSide {
    Left,
    Right,
}

pub fn logical_shift(row: &Row512, side: ShiftSide, amount: ShiftAmount) -> Row512 {
    match side {
        ShiftSide::Left => row.shl(amount.bits()),
        ShiftSide::Right => row.shr(amount.bits()),
    }
}

/// Per-lane logical shift: bits never cross a lane wall (the microcode's
/// masked view of a predicated shift).
pub fn lane_shift(row: &Row512, lane_width: usize, side: ShiftSide, amount: ShiftAmount) -> Row512 {
    let shifted = logical_shift(row, side, amount);
    if lane_width == 512 {
        return shifted;
    }
    // Zero the bits that crossed a lane boundary.
    let k = amount.bits();
    let keep = match side {
        // After a left shift the low k bits of each lane must be clear.
        ShiftSide::Left => {
            let mut m = Row512::ONES;
            for bit in 0..k {
                m = m.and(&Row512::lane_bit_mask(lane_width, bit).not());
            }
            m
        }
        // After a right shift the high k bits of each lane must be clear.
        ShiftSide::Right => {
            let mut m = Row512::ONES;
            for bit in (lane_width - k)..lane_width {
                m = m.and(&Row512::lane_bit_mask(lane_width, bit).not());
            }
            m
        }
    };
    shifted.and(&keep)
}
