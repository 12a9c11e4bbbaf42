//! Floating-point unit: fp32 multiply, multi-operand add and exponent max,
//! all as microprograms over 64-bit lanes (eight values per row).
//!
//! Encodings are IEEE-754 single precision with three deliberate hardware
//! simplifications, mirrored bit-for-bit by the reference oracles:
//!
//! * a zero exponent field means zero (denormals flush to +0),
//! * results truncate toward zero,
//! * exponents accumulate in a 9-bit field (bits 23..=31 of the lane); a
//!   result exponent in [256, 511] raises the lane's out-of-range flag and
//!   a zero result exponent flushes the lane to +0.
//!
//! Internally a value is a sign bit (lane bit 31), the exponent field in
//! place (bits 23..=30) and a 48-bit significand register with its leading
//! one at bit 47. Multiplication runs the bit-serial integer multiplier on
//! 24-bit significands; addition aligns every significand to the largest
//! exponent with predicated shifts, sums exact two's-complement integers
//! through the carry-save reducer, and renormalizes by scanning for the
//! leading one.

use crate::alu::{emit_add5, emit_csa, emit_multiply, Builder};
use crate::cim::{PredBank, PredGate, PredLoadMode, ShiftAmount, ShiftSide, SignalKind};
use crate::device::AccessPort;
use crate::error::ExecError;
use crate::exec::{Machine, MicroOp, PredAction};
use crate::row::Row512;

/// fp32 values ride in 64-bit lanes: eight per row.
pub const FP_LANES: usize = 8;

const SIGN: u64 = 0x8000_0000;
const EXP: u64 = 0x7f80_0000;
const EXP9: u64 = 0xff80_0000;
const FRAC: u64 = 0x007f_ffff;
const LEAD: u64 = 0x0080_0000;
/// (-127) mod 512, shifted into the exponent field: rebias for products.
const REBIAS: u64 = 385 << 23;

pub fn pack_bits(bits: &[u32]) -> Row512 {
    assert!(bits.len() <= FP_LANES, "a row holds at most eight values");
    let mut lanes = [0u64; FP_LANES];
    for (i, b) in bits.iter().enumerate() {
        lanes[i] = *b as u64;
    }
    Row512::from_lanes(64, &lanes)
}

pub fn pack_f32(vals: &[f32]) -> Row512 {
    let bits: Vec<u32> = vals.iter().map(|v| v.to_bits()).collect();
    pack_bits(&bits)
}

pub fn unpack_bits(row: &Row512) -> [u32; FP_LANES] {
    std::array::from_fn(|i| row.lane(64, i) as u32)
}

pub fn unpack_f32(row: &Row512) -> [f32; FP_LANES] {
    unpack_bits(row).map(f32::from_bits)
}

/// Result rows of an fp routine: packed fp32 lanes plus the per-lane
/// out-of-range flag (bit 31 of each lane).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FpResult {
    pub packed: Row512,
    pub flag: Row512,
}

impl FpResult {
    pub fn values(&self) -> [u32; FP_LANES] {
        unpack_bits(&self.packed)
    }

    pub fn flags(&self) -> [bool; FP_LANES] {
        std::array::from_fn(|i| self.flag.lane(64, i) & SIGN != 0)
    }
}

fn splat(v: u64) -> Row512 {
    Row512::splat64(v)
}

/// OR-fold the masked bits of `src` so lane bit 31 becomes "any bit set in
/// [16, 31] of the masked value"; `tmp` is scratch. Leaves the fold in rb.
fn emit_nonzero_fold(b: &mut Builder, src: i32, tmp: i32, mask: u64) {
    b.read_at(src);
    b.op(MicroOp::RbAnd(splat(mask)));
    b.store_rb_at(tmp);
    for shifts in [1usize, 2, 4] {
        for _ in 0..shifts {
            b.op(MicroOp::Lsh(ShiftSide::Left, ShiftAmount::One));
        }
        b.op(MicroOp::WriteOr(AccessPort::Ap0));
        b.op(MicroOp::Read(AccessPort::Ap0));
    }
    b.op(MicroOp::Lsh(ShiftSide::Left, ShiftAmount::Eight));
    b.op(MicroOp::WriteOr(AccessPort::Ap0));
    b.op(MicroOp::Read(AccessPort::Ap0));
}

/// Bring lane bit `pos` of rb up to the predicate tap at bit 31.
fn emit_to_bit31(b: &mut Builder, pos: u32) {
    debug_assert!(pos <= 31);
    let n = 31 - pos;
    if n >= 8 {
        for _ in 0..n / 8 {
            b.op(MicroOp::Lsh(ShiftSide::Left, ShiftAmount::Eight));
        }
    }
    for _ in 0..n % 8 {
        b.op(MicroOp::Lsh(ShiftSide::Left, ShiftAmount::One));
    }
}

/// Per-lane maximum by bitwise elimination. Operand rows sit at
/// base..=base+6 with value bits at lane positions msb and below (msb <= 30);
/// rows base+7..=base+12 are workspace. Each round compares one bit via the
/// window OR and zeroes the lanes of operands that lost. Rows end up shifted
/// left by `rounds`; the final window OR of the survivors is left in rb,
/// also shifted left by `rounds`.
pub fn emit_bitwise_max(b: &mut Builder, base: i32, rounds: u32) {
    let mut src = base;
    for r in 0..rounds {
        b.goto(src);
        b.op(MicroOp::Tr(7));
        b.op(MicroOp::SelSig(SignalKind::Or));
        b.op(MicroOp::Lsh(ShiftSide::Left, ShiftAmount::One));
        b.op(MicroOp::Pred(PredBank::Q, PredLoadMode::Set, 31));
        if r % 2 == 0 {
            // Copy region [src, src+6] up to [src+6, src+12], losers zeroed.
            for j in (0..7).rev() {
                b.goto(src + j);
                b.op(MicroOp::Read(AccessPort::Ap0));
                b.op(MicroOp::Lsh(ShiftSide::Left, ShiftAmount::One));
                b.op(MicroOp::Pred(PredBank::P, PredLoadMode::SetNot, 31));
                b.op(MicroOp::PApply(PredGate::PAndQ, PredAction::Reset));
                b.op(MicroOp::Write(AccessPort::Ap1));
            }
            src += 6;
        } else {
            // Copy region [src, src+6] back down to [src-6, src].
            for j in 0..7 {
                b.goto(src - 6 + j);
                b.op(MicroOp::Read(AccessPort::Ap1));
                b.op(MicroOp::Lsh(ShiftSide::Left, ShiftAmount::One));
                b.op(MicroOp::Pred(PredBank::P, PredLoadMode::SetNot, 31));
                b.op(MicroOp::PApply(PredGate::PAndQ, PredAction::Reset));
                b.op(MicroOp::Write(AccessPort::Ap0));
            }
            src -= 6;
        }
    }
    // Survivors all equal the maximum; their OR is the answer.
    b.goto(src);
    b.op(MicroOp::Tr(7));
    b.op(MicroOp::SelSig(SignalKind::Or));
}

/// Row map for the multiplier program.
mod mul_rows {
    pub const PRODUCT: i32 = 0; // ..=7 multiplier workspace
    pub const MANT_A: i32 = 8;
    pub const MANT_B: i32 = 9;
    pub const MANT_OUT: i32 = 10;
    pub const TMP: i32 = 11;
    pub const FLAG: i32 = 12;
    pub const OUT: i32 = 13;
    pub const IN_A: i32 = 14;
    pub const IN_B: i32 = 15;
    pub const EXP_A: i32 = 16;
    pub const EXP_B: i32 = 17;
    pub const SIGN_OUT: i32 = 18; // ..=24 sign-xor window
}

/// Lane-parallel fp32 multiply of two packed rows.
pub fn fp_multiply(m: &mut Machine, a: &Row512, b: &Row512) -> Result<FpResult, ExecError> {
    use mul_rows::*;
    let mut bld = Builder::new();
    bld.op(MicroOp::Lanes(64));
    bld.write_at(IN_A, *a);
    bld.write_at(IN_B, *b);

    // Sign: XOR the two sign bits through a transverse read.
    bld.read_at(IN_A);
    bld.op(MicroOp::RbAnd(splat(SIGN)));
    bld.store_rb_at(SIGN_OUT);
    bld.read_at(IN_B);
    bld.op(MicroOp::RbAnd(splat(SIGN)));
    bld.store_rb_at(SIGN_OUT + 1);
    for r in 2..7 {
        bld.write_at(SIGN_OUT + r, Row512::ZERO);
    }
    bld.goto(SIGN_OUT);
    bld.op(MicroOp::Tr(2));
    bld.op(MicroOp::WSig(SignalKind::S, AccessPort::Ap0, splat(SIGN)));

    // Exponent fields and significands.
    bld.read_at(IN_A);
    bld.op(MicroOp::RbAnd(splat(EXP)));
    bld.store_rb_at(EXP_A);
    bld.read_at(IN_B);
    bld.op(MicroOp::RbAnd(splat(EXP)));
    bld.store_rb_at(EXP_B);
    bld.read_at(IN_A);
    bld.op(MicroOp::RbAnd(splat(FRAC)));
    bld.op(MicroOp::RbOr(splat(LEAD)));
    bld.store_rb_at(MANT_A);
    bld.read_at(IN_B);
    bld.op(MicroOp::RbAnd(splat(FRAC)));
    bld.op(MicroOp::RbOr(splat(LEAD)));
    bld.store_rb_at(MANT_B);

    // 24x24 -> 48 bit significand product.
    for r in 0..8 {
        bld.write_at(r, Row512::ZERO);
    }
    emit_multiply(&mut bld, 24, 64);

    // Normalize: leading one to bit 47. P remembers which lanes carried.
    bld.read_at(PRODUCT);
    bld.op(MicroOp::Pred(PredBank::P, PredLoadMode::Set, 47));
    bld.op(MicroOp::Lsh(ShiftSide::Left, ShiftAmount::One));
    bld.op(MicroOp::PApply(PredGate::P, PredAction::Shr(ShiftAmount::One)));
    bld.store_rb_at(MANT_OUT);

    // Exponent: ea + eb - 127 + norm, mod 512 in the 9-bit field.
    bld.op(MicroOp::SetRb(Row512::ZERO));
    bld.op(MicroOp::PApply(PredGate::P, PredAction::SetImm(splat(LEAD))));
    bld.store_rb_at(4);
    bld.write_at(0, Row512::ZERO);
    bld.copy(EXP_A, 1);
    bld.copy(EXP_B, 2);
    bld.write_at(3, splat(REBIAS));
    bld.write_at(5, Row512::ZERO);
    bld.write_at(6, Row512::ZERO);
    emit_add5(&mut bld, 0, 64, 9, 23);

    bld.read_at(0);
    bld.op(MicroOp::RbAnd(splat(SIGN)));
    bld.store_rb_at(FLAG);

    // Zero inputs: Q = both exponents nonzero.
    emit_nonzero_fold(&mut bld, EXP_A, TMP, EXP);
    bld.op(MicroOp::Pred(PredBank::Q, PredLoadMode::Set, 31));
    emit_nonzero_fold(&mut bld, EXP_B, TMP, EXP);
    bld.op(MicroOp::Pred(PredBank::Q, PredLoadMode::And, 31));

    // Pack: fraction, exponent, sign; then flush zero lanes and their flags.
    bld.read_at(MANT_OUT);
    for _ in 0..3 {
        bld.op(MicroOp::Lsh(ShiftSide::Right, ShiftAmount::Eight));
    }
    bld.op(MicroOp::RbAnd(splat(FRAC)));
    bld.store_rb_at(OUT);
    bld.read_at(0);
    bld.op(MicroOp::RbAnd(splat(EXP)));
    bld.goto(OUT);
    bld.op(MicroOp::WriteOr(AccessPort::Ap0));
    bld.read_at(SIGN_OUT);
    bld.goto(OUT);
    bld.op(MicroOp::WriteOr(AccessPort::Ap0));
    bld.read_at(OUT);
    bld.op(MicroOp::PApply(PredGate::NotQ, PredAction::Reset));
    bld.op(MicroOp::Write(AccessPort::Ap0));
    bld.read_at(FLAG);
    bld.op(MicroOp::PApply(PredGate::NotQ, PredAction::Reset));
    bld.op(MicroOp::Write(AccessPort::Ap0));

    m.run(&bld.finish())?;
    Ok(FpResult {
        packed: m.dbc.peek_row(OUT as usize),
        flag: m.dbc.peek_row(FLAG as usize),
    })
}

/// Row map for the adder program. Operands stream through one at a time,
/// so the footprint is independent of the addend count.
mod add_rows {
    pub const SUM: i32 = 0; // final add5 window 0..=6
    pub const STACK: i32 = 1; // ..=7 carry-save stack
    pub const DIFF: i32 = 8; // ..=14 diff add5 window; also exponent-max base
    pub const EMAX: i32 = 15;
    pub const TMP: i32 = 16;
    pub const STAGE: i32 = 17;
    pub const ALIGNED: i32 = 18;
    pub const GROUP_MAX: i32 = 21; // ..=27 per-group exponent maxima
    // After streaming, the diff window recycles for normalization.
    pub const SCRATCH: i32 = 8;
    pub const MANT_OUT: i32 = 9;
    pub const EADJ: i32 = 10;
    pub const SIGN_OUT: i32 = 11;
    pub const OUT: i32 = 12;
    pub const FLAG: i32 = 13;
}

/// Most addends one adder call takes: seven groups of seven in the
/// exponent tournament.
pub const FP_MAX_ADDENDS: usize = 49;

/// Lane-parallel sum of up to [`FP_MAX_ADDENDS`] packed fp32 rows (one
/// addend per row, eight independent sums across the lanes). Every addend
/// aligns to the one global maximum exponent before an exact carry-save
/// sum, so the result is independent of operand order.
pub fn fp_add(m: &mut Machine, addends: &[Row512]) -> Result<FpResult, ExecError> {
    use add_rows::*;
    let n = addends.len();
    if n == 0 || n > FP_MAX_ADDENDS {
        return Err(ExecError::TooManyOperands {
            got: n,
            limit: FP_MAX_ADDENDS,
        });
    }
    let mut b = Builder::new();
    b.op(MicroOp::Lanes(64));

    // Global maximum exponent: a per-group elimination, then one more
    // round over the group winners. Zero pads never win unless all do.
    let chunks: Vec<&[Row512]> = addends.chunks(7).collect();
    for (g, chunk) in chunks.iter().enumerate() {
        for j in 0..7 {
            if let Some(row) = chunk.get(j) {
                b.write_at(STAGE, *row);
                b.read_at(STAGE);
                b.op(MicroOp::RbAnd(splat(EXP)));
                b.store_rb_at(DIFF + j as i32);
            } else {
                b.write_at(DIFF + j as i32, Row512::ZERO);
            }
        }
        emit_bitwise_max(&mut b, DIFF, 8);
        b.op(MicroOp::Lsh(ShiftSide::Right, ShiftAmount::Eight));
        b.store_rb_at(GROUP_MAX + g as i32);
    }
    if chunks.len() == 1 {
        b.copy(GROUP_MAX, EMAX);
    } else {
        for g in 0..7 {
            if g < chunks.len() {
                b.copy(GROUP_MAX + g as i32, DIFF + g as i32);
            } else {
                b.write_at(DIFF + g as i32, Row512::ZERO);
            }
        }
        emit_bitwise_max(&mut b, DIFF, 8);
        b.op(MicroOp::Lsh(ShiftSide::Right, ShiftAmount::Eight));
        b.store_rb_at(EMAX);
    }

    // Stream the addends: align each significand to emax, two's-complement
    // it on its sign with a companion +1 row, and feed the carry-save stack.
    let mut stack = 0i32;
    let push = |b: &mut Builder, stack: &mut i32| {
        b.store_rb_at(STACK + *stack);
        *stack += 1;
        if *stack == 7 {
            emit_csa(b, STACK, 64);
            *stack = 3;
        }
    };
    for row in addends {
        b.write_at(STAGE, *row);

        // diff = emax - e, a 9-bit field add of emax + NOT(e) + 1.
        b.write_at(DIFF, Row512::ZERO);
        b.copy(EMAX, DIFF + 1);
        b.read_at(STAGE);
        b.op(MicroOp::RbAnd(splat(EXP)));
        b.op(MicroOp::RbXor(splat(EXP9)));
        b.store_rb_at(DIFF + 2);
        b.write_at(DIFF + 3, splat(LEAD));
        for r in 4..7 {
            b.write_at(DIFF + r, Row512::ZERO);
        }
        emit_add5(&mut b, DIFF, 64, 9, 23);

        b.read_at(STAGE);
        b.op(MicroOp::RbAnd(splat(FRAC)));
        b.op(MicroOp::RbOr(splat(LEAD)));
        for _ in 0..3 {
            b.op(MicroOp::Lsh(ShiftSide::Left, ShiftAmount::Eight));
        }
        b.store_rb_at(ALIGNED);

        // Zero-exponent lanes contribute nothing.
        emit_nonzero_fold(&mut b, STAGE, TMP, EXP);
        b.op(MicroOp::Pred(PredBank::P, PredLoadMode::Set, 31));
        b.read_at(ALIGNED);
        b.op(MicroOp::PApply(PredGate::NotP, PredAction::Reset));
        b.op(MicroOp::Write(AccessPort::Ap0));

        // Shift right by the difference, bit by bit: the two top bits each
        // flush to zero (shift >= 64), bits 5:3 are byte-shift groups,
        // bits 2:0 single-shift groups.
        for bit in (0..8u32).rev() {
            b.read_at(DIFF);
            emit_to_bit31(&mut b, 23 + bit);
            b.op(MicroOp::Pred(PredBank::P, PredLoadMode::Set, 31));
            b.read_at(ALIGNED);
            match bit {
                7 | 6 => b.op(MicroOp::PApply(PredGate::P, PredAction::Reset)),
                5 | 4 | 3 => {
                    for _ in 0..(1 << (bit - 3)) {
                        b.op(MicroOp::PApply(PredGate::P, PredAction::Shr(ShiftAmount::Eight)));
                    }
                }
                _ => {
                    for _ in 0..(1 << bit) {
                        b.op(MicroOp::PApply(PredGate::P, PredAction::Shr(ShiftAmount::One)));
                    }
                }
            }
            b.op(MicroOp::Write(AccessPort::Ap0));
        }

        b.read_at(STAGE);
        b.op(MicroOp::Pred(PredBank::P, PredLoadMode::Set, 31));
        b.read_at(ALIGNED);
        b.op(MicroOp::PApply(PredGate::P, PredAction::Not));
        push(&mut b, &mut stack);
        b.op(MicroOp::SetRb(Row512::ZERO));
        b.op(MicroOp::PApply(PredGate::P, PredAction::SetImm(splat(1))));
        push(&mut b, &mut stack);
    }
    if stack == 6 {
        b.write_at(STACK + 6, Row512::ZERO);
        emit_csa(&mut b, STACK, 64);
        stack = 3;
    }
    for r in (stack + 1)..=6 {
        b.write_at(r, Row512::ZERO);
    }
    b.write_at(SUM, Row512::ZERO);
    emit_add5(&mut b, SUM, 64, 64, 0);

    // Sign and magnitude of the two's-complement sum.
    b.read_at(0);
    for _ in 0..4 {
        b.op(MicroOp::Lsh(ShiftSide::Right, ShiftAmount::Eight));
    }
    b.op(MicroOp::Pred(PredBank::P, PredLoadMode::Set, 31));
    b.op(MicroOp::SetRb(Row512::ZERO));
    b.op(MicroOp::PApply(PredGate::P, PredAction::SetImm(splat(SIGN))));
    b.store_rb_at(SIGN_OUT);
    b.read_at(0);
    b.op(MicroOp::PApply(PredGate::P, PredAction::Not));
    b.store_rb_at(1);
    b.op(MicroOp::SetRb(Row512::ZERO));
    b.op(MicroOp::PApply(PredGate::P, PredAction::SetImm(splat(1))));
    b.store_rb_at(2);
    for r in 3..=6 {
        b.write_at(r, Row512::ZERO);
    }
    b.write_at(0, Row512::ZERO);
    emit_add5(&mut b, 0, 64, 64, 0);

    // Leading-one scan: 63 steps over the magnitude, watching bit 31 of a
    // sliding scratch copy. Q marks lanes whose leading one was found; on
    // the discovery step the exponent adjustment latches into EADJ, and the
    // significand register shifts toward bit 47 one step per round.
    b.copy(0, MANT_OUT);
    b.write_at(EADJ, Row512::ZERO);
    b.op(MicroOp::SetRb(Row512::ZERO));
    b.op(MicroOp::Pred(PredBank::Q, PredLoadMode::Set, 0));
    for (phase, down) in [(0u32, 4usize), (1, 2), (2, 0)] {
        b.read_at(0);
        for _ in 0..down {
            b.op(MicroOp::Lsh(ShiftSide::Right, ShiftAmount::Eight));
        }
        b.store_rb_at(SCRATCH);
        let (lo, hi) = match phase {
            0 => (0u32, 16u32),
            1 => (16, 32),
            _ => (32, 63),
        };
        for i in lo..hi {
            let bit = 62 - i;
            b.read_at(SCRATCH);
            b.op(MicroOp::Lsh(ShiftSide::Left, ShiftAmount::One));
            b.op(MicroOp::Write(AccessPort::Ap0));
            b.op(MicroOp::Pred(PredBank::P, PredLoadMode::Set, 31));
            let adj9 = if bit >= 47 { (bit - 47) as u64 } else { 512 - (47 - bit) as u64 };
            b.read_at(EADJ);
            b.op(MicroOp::PApply(PredGate::PAndNotQ, PredAction::SetImm(splat(adj9 << 23))));
            b.op(MicroOp::Write(AccessPort::Ap0));
            if i >= 16 {
                b.read_at(MANT_OUT);
                b.op(MicroOp::PApply(PredGate::NotQ, PredAction::Shl(ShiftAmount::One)));
                b.op(MicroOp::Write(AccessPort::Ap0));
            }
            b.read_at(SCRATCH);
            b.op(MicroOp::Pred(PredBank::Q, PredLoadMode::Or, 31));
            if i <= 14 {
                b.read_at(MANT_OUT);
                b.op(MicroOp::PApply(PredGate::Q, PredAction::Shr(ShiftAmount::One)));
                b.op(MicroOp::Write(AccessPort::Ap0));
            }
        }
    }

    // Result exponent: emax + adjustment, mod 512.
    b.write_at(0, Row512::ZERO);
    b.copy(EMAX, 1);
    b.copy(EADJ, 2);
    for r in 3..=6 {
        b.write_at(r, Row512::ZERO);
    }
    emit_add5(&mut b, 0, 64, 9, 23);

    b.read_at(0);
    b.op(MicroOp::RbAnd(splat(SIGN)));
    b.store_rb_at(FLAG);

    // Pack and flush: lanes with a zero sum (Q never set) and lanes whose
    // exponent wrapped to zero become +0 with a clear flag.
    b.read_at(MANT_OUT);
    for _ in 0..3 {
        b.op(MicroOp::Lsh(ShiftSide::Right, ShiftAmount::Eight));
    }
    b.op(MicroOp::RbAnd(splat(FRAC)));
    b.store_rb_at(OUT);
    b.read_at(0);
    b.op(MicroOp::RbAnd(splat(EXP)));
    b.goto(OUT);
    b.op(MicroOp::WriteOr(AccessPort::Ap0));
    b.read_at(SIGN_OUT);
    b.goto(OUT);
    b.op(MicroOp::WriteOr(AccessPort::Ap0));

    b.read_at(OUT);
    b.op(MicroOp::PApply(PredGate::NotQ, PredAction::Reset));
    b.op(MicroOp::Write(AccessPort::Ap0));
    b.read_at(FLAG);
    b.op(MicroOp::PApply(PredGate::NotQ, PredAction::Reset));
    b.op(MicroOp::Write(AccessPort::Ap0));

    emit_nonzero_fold(&mut b, 0, MANT_OUT, EXP9);
    b.op(MicroOp::Pred(PredBank::P, PredLoadMode::Set, 31));
    b.read_at(OUT);
    b.op(MicroOp::PApply(PredGate::NotP, PredAction::Reset));
    b.op(MicroOp::Write(AccessPort::Ap0));

    m.run(&b.finish())?;
    Ok(FpResult {
        packed: m.dbc.peek_row(OUT as usize),
        flag: m.dbc.peek_row(FLAG as usize),
    })
}

/// Sum any number of packed rows with a tournament of full-width adds; the
/// flag row ORs over every stage.
pub fn fp_add_many(m: &mut Machine, addends: &[Row512]) -> Result<FpResult, ExecError> {
    if addends.is_empty() {
        return Err(ExecError::TooManyOperands {
            got: 0,
            limit: FP_MAX_ADDENDS,
        });
    }
    if addends.len() == 1 {
        return fp_add(m, addends);
    }
    let mut layer = addends.to_vec();
    let mut flag = Row512::ZERO;
    loop {
        let mut next = Vec::with_capacity(layer.len().div_ceil(FP_MAX_ADDENDS));
        for chunk in layer.chunks(FP_MAX_ADDENDS) {
            let r = fp_add(m, chunk)?;
            next.push(r.packed);
            flag = flag.or(&r.flag);
        }
        if next.len() == 1 {
            return Ok(FpResult { packed: next[0], flag });
        }
        layer = next;
    }
}

/// Per-lane maximum exponent field over up to seven packed rows: returns
/// the winning exponent in place (bits 23..=30), as the adder's alignment
/// step sees it. Missing rows zero-fill and never win unless all are zero.
pub fn find_max_exponent(m: &mut Machine, addends: &[Row512]) -> Result<Row512, ExecError> {
    let n = addends.len();
    if n == 0 || n > 7 {
        return Err(ExecError::TooManyOperands { got: n, limit: 7 });
    }
    let stage = 15;
    let mut b = Builder::new();
    b.op(MicroOp::Lanes(64));
    for j in 0..7 {
        if let Some(row) = addends.get(j) {
            b.write_at(stage, *row);
            b.read_at(stage);
            b.op(MicroOp::RbAnd(splat(EXP)));
            b.store_rb_at(j as i32);
        } else {
            b.write_at(j as i32, Row512::ZERO);
        }
    }
    emit_bitwise_max(&mut b, 0, 8);
    b.op(MicroOp::Lsh(ShiftSide::Right, ShiftAmount::Eight));
    m.run(&b.finish())?;
    Ok(m.rb)
}

/// One machine program per chained multiply is wasteful for callers doing
/// many independent products; this convenience maps a whole slice.
pub fn fp_multiply_all(
    m: &mut Machine,
    pairs: &[(Row512, Row512)],
) -> Result<Vec<FpResult>, ExecError> {
    pairs.iter().map(|(a, b)| fp_multiply(m, a, b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::Geometry;
    use crate::verify::oracle;
    use proptest::prelude::*;

    fn machine() -> Machine {
        Machine::new(Geometry::new(32, 7).unwrap())
    }

    fn mul_lanes(av: &[u32], bv: &[u32]) -> (Vec<u32>, Vec<bool>) {
        let mut m = machine();
        let r = fp_multiply(&mut m, &pack_bits(av), &pack_bits(bv)).unwrap();
        (r.values()[..av.len()].to_vec(), r.flags()[..av.len()].to_vec())
    }

    #[test]
    fn multiply_simple_values() {
        let a: Vec<f32> = vec![1.0, 1.5, -1.25, 2.0, 0.0, 7.25, 1e30, 1e-30];
        let b: Vec<f32> = vec![1.0, 2.0, 4.0, 0.5, 3.5, 0.0, 1e30, 1e-30];
        let want: Vec<f32> = vec![1.0, 3.0, -5.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let abits: Vec<u32> = a.iter().map(|v| v.to_bits()).collect();
        let bbits: Vec<u32> = b.iter().map(|v| v.to_bits()).collect();
        let (got, flags) = mul_lanes(&abits, &bbits);
        for i in 0..6 {
            assert_eq!(
                f32::from_bits(got[i]),
                want[i],
                "lane {i}: {} * {}",
                a[i],
                b[i]
            );
            assert!(!flags[i], "lane {i} in range");
        }
        // Lanes 6 and 7 overflow and underflow the 9-bit exponent.
        assert!(flags[6] && flags[7]);
    }

    #[test]
    fn multiply_matches_oracle_on_edge_encodings() {
        let edges: Vec<u32> = vec![
            0,
            0x8000_0000,        // -0
            1,                  // denormal
            0x0080_0000,        // smallest normal
            0x7f7f_ffff,        // largest finite
            0x3f80_0000,        // 1.0
            0x3f80_0001,
            0x7f80_0000,        // inf encoding (treated as a value)
            0x0100_0000,
            0xc0a0_0000,
        ];
        let mut m = machine();
        for &a in &edges {
            for chunk in edges.chunks(FP_LANES) {
                let av = vec![a; chunk.len()];
                let r = fp_multiply(&mut m, &pack_bits(&av), &pack_bits(chunk)).unwrap();
                for (i, &b) in chunk.iter().enumerate() {
                    let (want, wf) = oracle::fp_mul(a, b);
                    assert_eq!(r.values()[i], want, "{a:#010x} * {b:#010x}");
                    assert_eq!(r.flags()[i], wf, "flag {a:#010x} * {b:#010x}");
                }
            }
        }
    }

    #[test]
    fn add_simple_values() {
        let cases: Vec<(Vec<f32>, f32)> = vec![
            (vec![1.0, 2.0], 3.0),
            (vec![1.5, 1.5], 3.0),
            (vec![1.0, -1.0], 0.0),
            (vec![0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0078125], 0.9921875),
            (vec![1048576.0, -1048576.0, 3.0], 3.0),
            (vec![-2.5, -2.5], -5.0),
            (vec![0.0, 0.0], 0.0),
            (vec![42.0], 42.0),
            (vec![1.0e10, -1.0e10, 0.0], 0.0),
        ];
        for (vals, want) in cases {
            let rows: Vec<Row512> = vals.iter().map(|v| pack_f32(&[*v; 8])).collect();
            let mut m = machine();
            let r = fp_add(&mut m, &rows).unwrap();
            for lane in 0..8 {
                assert_eq!(
                    f32::from_bits(r.values()[lane]),
                    want,
                    "{vals:?} lane {lane}"
                );
                assert!(!r.flags()[lane]);
            }
        }
    }

    #[test]
    fn add_matches_oracle_lanewise() {
        // Eight different problems ride the lanes of one call.
        let problems: [[u32; 3]; 8] = [
            [1.0f32.to_bits(), 2.0f32.to_bits(), 4.0f32.to_bits()],
            [1.0f32.to_bits(), (2.0f32.powi(-24)).to_bits(), 0],
            [(-1.0f32).to_bits(), 1.0f32.to_bits(), 3.5f32.to_bits()],
            [0, 0, 0],
            [f32::MAX.to_bits(), f32::MAX.to_bits(), 0],
            [1e-38f32.to_bits(), (-9.9e-39f32).to_bits(), 0],
            [123456.78f32.to_bits(), (-0.0f32).to_bits(), 1.0f32.to_bits()],
            [(2.0f32).to_bits(), (-1.9999999f32).to_bits(), 0],
        ];
        let rows: Vec<Row512> = (0..3)
            .map(|j| pack_bits(&problems.iter().map(|p| p[j]).collect::<Vec<_>>()))
            .collect();
        let mut m = machine();
        let r = fp_add(&mut m, &rows).unwrap();
        for lane in 0..8 {
            let (want, wf) = oracle::fp_add(&problems[lane]);
            assert_eq!(r.values()[lane], want, "lane {lane} {:x?}", problems[lane]);
            assert_eq!(r.flags()[lane], wf, "flag lane {lane}");
        }
    }

    #[test]
    fn add_single_operand_repacks_identically() {
        let vals: Vec<u32> = vec![
            1.0f32.to_bits(),
            (-3.75f32).to_bits(),
            0,
            0x8000_0000,
            2, // denormal flushes
            f32::MAX.to_bits(),
            (1.0e-37f32).to_bits(),
            (-1.0f32).to_bits(),
        ];
        let mut m = machine();
        let r = fp_add(&mut m, &[pack_bits(&vals)]).unwrap();
        for lane in 0..8 {
            let (want, _) = oracle::fp_add(&vals[lane..=lane]);
            assert_eq!(r.values()[lane], want, "lane {lane}");
        }
    }

    #[test]
    fn add_many_runs_a_tournament() {
        // 131 addends: three chunks of 49/49/33, then one add of the partials.
        let vals: Vec<f32> = (0..131).map(|i| (i as f32 - 65.0) * 0.37).collect();
        let rows: Vec<Row512> = vals.iter().map(|v| pack_f32(&[*v; 8])).collect();
        let bits: Vec<u32> = vals.iter().map(|v| v.to_bits()).collect();
        let (want, wf) = oracle::fp_add_tree(&bits);
        let mut m = machine();
        let r = fp_add_many(&mut m, &rows).unwrap();
        assert_eq!(r.values()[0], want);
        assert_eq!(r.flags()[0], wf);
    }

    #[test]
    fn add_is_order_insensitive_at_full_width() {
        let vals: Vec<f32> = (0..49)
            .map(|i| (i as f32 - 24.0) * 0.7 + 0.011 * (i * i) as f32)
            .collect();
        let mut rows: Vec<Row512> = vals.iter().map(|v| pack_f32(&[*v; 8])).collect();
        let mut m = machine();
        let forward = fp_add(&mut m, &rows).unwrap();
        rows.reverse();
        assert_eq!(fp_add(&mut m, &rows).unwrap(), forward);
        rows.rotate_left(13);
        assert_eq!(fp_add(&mut m, &rows).unwrap(), forward);

        let bits: Vec<u32> = vals.iter().map(|v| v.to_bits()).collect();
        let (want, wf) = oracle::fp_add(&bits);
        assert_eq!(forward.values()[3], want);
        assert_eq!(forward.flags()[3], wf);
    }

    #[test]
    fn find_max_is_order_insensitive() {
        let vals: [f32; 5] = [1.5, -300.25, 0.0078125, 2.0e20, -6.0e-10];
        let emax = vals
            .iter()
            .map(|v| (v.to_bits() >> 23) & 0xff)
            .max()
            .unwrap();
        let perms: [[usize; 5]; 4] = [[0, 1, 2, 3, 4], [4, 3, 2, 1, 0], [2, 0, 4, 1, 3], [1, 4, 0, 3, 2]];
        for perm in perms {
            let rows: Vec<Row512> = perm.iter().map(|&i| pack_f32(&[vals[i]; 8])).collect();
            let mut m = machine();
            let got = find_max_exponent(&mut m, &rows).unwrap();
            for lane in 0..8 {
                assert_eq!(got.lane(64, lane) >> 23, emax as u64, "perm {perm:?}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn multiply_matches_oracle(lanes_a in proptest::collection::vec(any::<u32>(), 8),
                                   lanes_b in proptest::collection::vec(any::<u32>(), 8)) {
            let mut m = machine();
            let r = fp_multiply(&mut m, &pack_bits(&lanes_a), &pack_bits(&lanes_b)).unwrap();
            for i in 0..8 {
                let (want, wf) = oracle::fp_mul(lanes_a[i], lanes_b[i]);
                prop_assert_eq!(r.values()[i], want, "lane {} {:#010x}*{:#010x}", i, lanes_a[i], lanes_b[i]);
                prop_assert_eq!(r.flags()[i], wf);
            }
        }

        #[test]
        fn add_matches_oracle(n in 1usize..=49, seed in any::<u64>()) {
            // Random finite-looking bit patterns, eight problems per call.
            let mut s = seed;
            let mut next = || {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 32) as u32
            };
            let problems: Vec<Vec<u32>> = (0..8).map(|_| (0..n).map(|_| next()).collect()).collect();
            let rows: Vec<Row512> = (0..n)
                .map(|j| pack_bits(&problems.iter().map(|p| p[j]).collect::<Vec<_>>()))
                .collect();
            let mut m = machine();
            let r = fp_add(&mut m, &rows).unwrap();
            for lane in 0..8 {
                let (want, wf) = oracle::fp_add(&problems[lane]);
                prop_assert_eq!(r.values()[lane], want, "lane {} inputs {:x?}", lane, &problems[lane]);
                prop_assert_eq!(r.flags()[lane], wf);
            }
        }
    }
}
