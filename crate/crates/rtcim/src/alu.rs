//! Integer arithmetic as microprograms: carry-save reduction of a full
//! 7-row window, a bit-serial multi-operand adder, and a shift-and-add
//! multiplier that streams partial products through the reducer.
//!
//! All routines work lane-parallel: a 512-bit row packs 512/w independent
//! w-bit lanes and one program computes all of them at once.
//!
//! Adder window layout, for a window based at row `b`:
//!
//! ```text
//! row b     result (starts zero; also stages the weight-4 carries)
//! row b+1..=b+5   up to five addend rows
//! row b+6   weight-2 carry staging (starts zero)
//! ```
//!
//! Bit i of the result needs one transverse read: the count of column i over
//! the window is addend bits plus staged carries, and its three count bits
//! are the sum bit (kept), the carry into column i+1 (staged in row b+6) and
//! the carry into column i+2 (staged in the result row, where the sum bit
//! overwrites it after it has been consumed).

use crate::cim::SignalKind;
use crate::device::{AccessPort, ShiftDir};
use crate::error::ExecError;
use crate::exec::{Machine, MicroOp, Program};
use crate::row::{Row512, LANE_WIDTHS};

/// The adder takes at most five addend rows: with the result row and one
/// carry row that fills the 7-row transverse-read window exactly.
pub const MAX_ADDENDS: usize = 5;

/// Emits ops while tracking where the access ports sit, so routines can
/// address rows instead of counting shifts by hand. Entry and exit head
/// position is row 0 under ap0 unless stated otherwise.
#[derive(Debug, Default)]
pub struct Builder {
    prog: Program,
    head: i32,
}

impl Builder {
    pub fn new() -> Builder {
        Builder::default()
    }

    pub fn head(&self) -> i32 {
        self.head
    }

    pub fn op(&mut self, op: MicroOp) {
        self.prog.push(op);
    }

    /// Shift until ap0 sits at `row`.
    pub fn goto(&mut self, row: i32) {
        let delta = row - self.head;
        if delta > 0 {
            self.op(MicroOp::Shift(ShiftDir::Up, delta as u32));
        } else if delta < 0 {
            self.op(MicroOp::Shift(ShiftDir::Down, (-delta) as u32));
        }
        self.head = row;
    }

    pub fn write_at(&mut self, row: i32, value: Row512) {
        self.goto(row);
        self.op(MicroOp::SetRb(value));
        self.op(MicroOp::Write(AccessPort::Ap0));
    }

    /// Leave rb holding the named row.
    pub fn read_at(&mut self, row: i32) {
        self.goto(row);
        self.op(MicroOp::Read(AccessPort::Ap0));
    }

    pub fn store_rb_at(&mut self, row: i32) {
        self.goto(row);
        self.op(MicroOp::Write(AccessPort::Ap0));
    }

    pub fn copy(&mut self, src: i32, dst: i32) {
        self.read_at(src);
        self.store_rb_at(dst);
    }

    pub fn finish(mut self) -> Program {
        self.goto(0);
        self.prog
    }
}

fn check_lane(lane_width: usize) -> Result<(), ExecError> {
    if LANE_WIDTHS.contains(&lane_width) {
        Ok(())
    } else {
        Err(ExecError::LanePackingError(format!(
            "unsupported lane width {lane_width}"
        )))
    }
}

/// Mask with lane bit `bit` cleared in every lane (rest set).
fn clear_lane_bit(lane_width: usize, bit: usize) -> Row512 {
    Row512::lane_bit_mask(lane_width, bit).not()
}

/// Emit one 7-row carry-save reduction over window [base, base+6].
///
/// Afterwards rows base..=base+2 hold S, 2C and 4C' with the shifted-out
/// lane bits cleared, so per lane S + 2C + 4C' = the seven addends summed
/// mod 2^lane. Rows base+3..=base+6 keep their old contents.
pub fn emit_csa(b: &mut Builder, base: i32, lane_width: usize) {
    b.goto(base);
    b.op(MicroOp::Tr(7));
    b.op(MicroOp::WSig(SignalKind::S, AccessPort::Ap0, Row512::ONES));
    b.op(MicroOp::SelSig(SignalKind::C));
    b.op(MicroOp::Lsh(crate::cim::ShiftSide::Left, crate::cim::ShiftAmount::One));
    b.op(MicroOp::RbAnd(clear_lane_bit(lane_width, 0)));
    b.store_rb_at(base + 1);
    b.op(MicroOp::SelSig(SignalKind::CPrime));
    b.op(MicroOp::Lsh(crate::cim::ShiftSide::Left, crate::cim::ShiftAmount::One));
    b.op(MicroOp::Lsh(crate::cim::ShiftSide::Left, crate::cim::ShiftAmount::One));
    let m = clear_lane_bit(lane_width, 0).and(&clear_lane_bit(lane_width, 1));
    b.op(MicroOp::RbAnd(m));
    b.store_rb_at(base + 2);
}

/// Emit the bit-serial add loop over window [base, base+6] for lane bits
/// [l, l+w). Row base and row base+6 must be zero on entry; the addends sit
/// in rows base+1..=base+5 (unused ones zero). One transverse read per bit.
pub fn emit_add5(b: &mut Builder, base: i32, lane_width: usize, w: u32, l: u32) {
    b.goto(base);
    for i in 0..w {
        let p = (l + i) as usize;
        b.op(MicroOp::Tr(7));
        b.op(MicroOp::WSig(
            SignalKind::S,
            AccessPort::Ap0,
            Row512::lane_bit_mask(lane_width, p),
        ));
        // Carries that would land at or past bit l+w are dropped: the sum is
        // taken mod 2^w and nothing above the field gets written.
        if i + 1 < w {
            b.op(MicroOp::SelSig(SignalKind::C));
            b.op(MicroOp::Lsh(crate::cim::ShiftSide::Left, crate::cim::ShiftAmount::One));
            b.op(MicroOp::RbAnd(Row512::lane_bit_mask(lane_width, p + 1)));
            b.op(MicroOp::WriteOr(AccessPort::Ap1));
        }
        if i + 2 < w {
            b.op(MicroOp::SelSig(SignalKind::CPrime));
            b.op(MicroOp::Lsh(crate::cim::ShiftSide::Left, crate::cim::ShiftAmount::One));
            b.op(MicroOp::Lsh(crate::cim::ShiftSide::Left, crate::cim::ShiftAmount::One));
            b.op(MicroOp::RbAnd(Row512::lane_bit_mask(lane_width, p + 2)));
            b.op(MicroOp::WriteOr(AccessPort::Ap0));
        }
    }
}

/// Sum up to five addend rows lane-wise over bits [l, l+w): the returned row
/// holds each lane's sum mod 2^w at offset l, zero elsewhere.
pub fn add5(
    m: &mut Machine,
    addends: &[Row512],
    lane_width: usize,
    w: u32,
    l: u32,
) -> Result<Row512, ExecError> {
    check_lane(lane_width)?;
    if addends.len() > MAX_ADDENDS {
        return Err(ExecError::TooManyOperands {
            got: addends.len(),
            limit: MAX_ADDENDS,
        });
    }
    if w < 1 || (l + w) as usize > lane_width {
        return Err(ExecError::LanePackingError(format!(
            "bit field [{l}, {}) does not fit a {lane_width}-bit lane",
            l + w
        )));
    }
    let mut b = Builder::new();
    b.op(MicroOp::Lanes(lane_width));
    b.write_at(0, Row512::ZERO);
    for (i, row) in addends.iter().enumerate() {
        b.write_at(1 + i as i32, *row);
    }
    for i in addends.len()..MAX_ADDENDS {
        b.write_at(1 + i as i32, Row512::ZERO);
    }
    b.write_at(6, Row512::ZERO);
    emit_add5(&mut b, 0, lane_width, w, l);
    b.read_at(0);
    m.run(&b.finish())?;
    Ok(m.rb)
}

/// Reduce seven addend rows to three (S, 2C, 4C') in one transverse read.
pub fn csa_reduce(
    m: &mut Machine,
    addends: &[Row512; 7],
    lane_width: usize,
) -> Result<(Row512, Row512, Row512), ExecError> {
    check_lane(lane_width)?;
    let mut b = Builder::new();
    b.op(MicroOp::Lanes(lane_width));
    for (i, row) in addends.iter().enumerate() {
        b.write_at(i as i32, *row);
    }
    emit_csa(&mut b, 0, lane_width);
    m.run(&b.finish())?;
    let s = m.dbc.peek_row(0);
    let c2 = m.dbc.peek_row(1);
    let cp4 = m.dbc.peek_row(2);
    Ok((s, c2, cp4))
}

/// Row layout used by the multiplier.
const MUL_STACK_BASE: i32 = 1;
pub const MUL_ROW_A: i32 = 8;
pub const MUL_ROW_B: i32 = 9;

/// Emit the shift-and-add multiply loop. Multiplier lanes sit in row 8,
/// multiplicand lanes in row 9; both hold w-bit values in lanes of
/// `lane >= 2w` bits. Rows 0..=7 must be zero on entry. The 2w-bit products
/// land in row 0.
pub fn emit_multiply(b: &mut Builder, w: u32, lane: usize) {
    use crate::cim::{PredBank, PredGate, PredLoadMode, ShiftAmount, ShiftSide};
    use crate::exec::PredAction;

    b.op(MicroOp::Lanes(lane));
    let mut stack = 0i32;
    for i in 0..w {
        let last = i == w - 1;
        // Multiplier bit 0 decides whether this round's partial is B<<i or 0.
        b.read_at(MUL_ROW_A);
        b.op(MicroOp::Pred(PredBank::P, PredLoadMode::Set, 0));
        if !last {
            b.op(MicroOp::Lsh(ShiftSide::Right, ShiftAmount::One));
            b.op(MicroOp::Write(AccessPort::Ap0));
        }
        b.read_at(MUL_ROW_B);
        b.op(MicroOp::PApply(PredGate::NotP, PredAction::Reset));
        b.store_rb_at(MUL_STACK_BASE + stack);
        stack += 1;
        if !last {
            b.read_at(MUL_ROW_B);
            b.op(MicroOp::Lsh(ShiftSide::Left, ShiftAmount::One));
            b.op(MicroOp::Write(AccessPort::Ap0));
        }
        if stack == 7 {
            emit_csa(b, MUL_STACK_BASE, lane);
            stack = 3;
        }
    }
    if stack == 6 {
        b.write_at(MUL_STACK_BASE + 6, Row512::ZERO);
        emit_csa(b, MUL_STACK_BASE, lane);
        stack = 3;
    }
    // Clear the result row, the carry row and stale rows above the stack,
    // then fold the remaining addends with the bit-serial adder.
    for r in (stack + 1)..=6 {
        b.write_at(r, Row512::ZERO);
    }
    b.write_at(0, Row512::ZERO);
    emit_add5(b, 0, lane, 2 * w, 0);
    b.read_at(0);
}

/// Narrowest legal lane that holds a full 2w-bit product.
pub fn mul_lane(w: u32) -> Result<usize, ExecError> {
    LANE_WIDTHS
        .iter()
        .copied()
        .find(|&l| l >= 2 * w as usize && w >= 1)
        .ok_or_else(|| ExecError::LanePackingError(format!("no lane fits a {w}-bit multiply")))
}

/// Lane-parallel w-bit multiply: w-bit factors in `mul_lane(w)`-bit lanes,
/// exact 2w-bit products per lane in the returned row.
pub fn multiply(m: &mut Machine, a: &Row512, b: &Row512, w: u32) -> Result<Row512, ExecError> {
    let lane = mul_lane(w)?;
    let mut bld = Builder::new();
    for r in 0..8 {
        bld.write_at(r, Row512::ZERO);
    }
    bld.write_at(MUL_ROW_A, *a);
    bld.write_at(MUL_ROW_B, *b);
    emit_multiply(&mut bld, w, lane);
    m.run(&bld.finish())?;
    Ok(m.rb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::Geometry;
    use proptest::prelude::*;

    fn machine() -> Machine {
        Machine::new(Geometry::new(32, 7).unwrap())
    }

    /// Host reference: lane-wise sum of the addends' [l, l+w) fields,
    /// reduced mod 2^w and returned at offset l.
    fn host_add(addends: &[Row512], lane_width: usize, w: u32, l: u32) -> Row512 {
        let lanes = Row512::lanes(lane_width);
        let mut out = Row512::ZERO;
        let wmask = if w as usize == 64 { u64::MAX } else { (1u64 << w) - 1 };
        for lane in 0..lanes {
            let sum: u64 = addends
                .iter()
                .map(|r| (r.lane(lane_width, lane) >> l) & wmask)
                .fold(0, |a, v| a.wrapping_add(v));
            out.set_lane(lane_width, lane, (sum & wmask) << l);
        }
        out
    }

    #[test]
    fn add5_small_words() {
        let mut m = machine();
        // 3 + 1 = 4 in a 4-bit field of 8-bit lanes.
        let got = add5(
            &mut m,
            &[Row512::splat(8, 3), Row512::splat(8, 1)],
            8,
            4,
            0,
        )
        .unwrap();
        assert_eq!(got, Row512::splat(8, 4));

        // 15 + 1 wraps to 0 in 4 bits.
        let mut m = machine();
        let got = add5(
            &mut m,
            &[Row512::splat(8, 15), Row512::splat(8, 1)],
            8,
            4,
            0,
        )
        .unwrap();
        assert_eq!(got, Row512::ZERO);
    }

    #[test]
    fn add5_five_operands_offset_field() {
        let mut m = machine();
        let addends: Vec<Row512> = (1..=5u64).map(|v| Row512::splat(16, v << 3)).collect();
        let got = add5(&mut m, &addends, 16, 9, 3).unwrap();
        assert_eq!(got, host_add(&addends, 16, 9, 3));
        // 1+2+3+4+5 = 15 at offset 3.
        assert_eq!(got.lane(16, 0), 15 << 3);
    }

    #[test]
    fn add5_ignores_bits_outside_field() {
        let mut m = machine();
        // Garbage above and below the field must not leak into the sum.
        let a = Row512::splat(32, 0xffff_0007);
        let b = Row512::splat(32, 0x8000_0001);
        let got = add5(&mut m, &[a, b], 32, 4, 0).unwrap();
        assert_eq!(got, Row512::splat(32, 8));
    }

    #[test]
    fn add5_rejects_too_many_or_misfit() {
        let mut m = machine();
        let rows = [Row512::ZERO; 6];
        assert!(matches!(
            add5(&mut m, &rows, 32, 8, 0),
            Err(ExecError::TooManyOperands { got: 6, limit: 5 })
        ));
        assert!(add5(&mut m, &rows[..2], 32, 30, 8).is_err());
        assert!(add5(&mut m, &rows[..2], 24, 8, 0).is_err());
    }

    #[test]
    fn add5_uses_one_tr_per_bit() {
        let mut m = machine();
        m.enable_trace();
        add5(&mut m, &[Row512::splat(32, 5)], 32, 13, 2).unwrap();
        let trace = m.take_trace();
        let trs = trace.iter().filter(|e| e.op.starts_with("tr ")).count();
        assert_eq!(trs, 13, "one transverse read per result bit");
    }

    #[test]
    fn csa_identity_exhaustive_patterns() {
        // Every 7-bit column pattern, via rows that enumerate all patterns
        // across lane positions.
        let mut rows = [Row512::ZERO; 7];
        for pat in 0u32..128 {
            for (r, row) in rows.iter_mut().enumerate() {
                // Bit `pat` of row r encodes pattern `pat`'s row-r membership.
                row.set_bit(pat as usize, (pat >> r) & 1 == 1);
            }
        }
        let mut m = machine();
        let (s, c2, cp4) = csa_reduce(&mut m, &rows, 64).unwrap();
        for pat in 0u32..128 {
            let i = pat as usize;
            let ones = pat.count_ones();
            assert_eq!(s.get_bit(i), ones & 1 == 1);
            // 2C and 4C' live one and two positions up from column `i`.
            if i % 64 != 63 {
                assert_eq!(c2.get_bit(i + 1), (ones >> 1) & 1 == 1, "pat {pat}");
            }
            if i % 64 < 62 {
                assert_eq!(cp4.get_bit(i + 2), (ones >> 2) & 1 == 1, "pat {pat}");
            }
        }
    }

    #[test]
    fn csa_preserves_lane_sums() {
        let mut m = machine();
        let rows: [Row512; 7] = std::array::from_fn(|i| Row512::splat64(0x0123_4567_89ab_cdef_u64.rotate_left(i as u32 * 11)));
        let (s, c2, cp4) = csa_reduce(&mut m, &rows, 64).unwrap();
        for lane in 0..8 {
            let want: u64 = rows
                .iter()
                .map(|r| r.lane(64, lane))
                .fold(0, |a, v| a.wrapping_add(v));
            let got = s
                .lane(64, lane)
                .wrapping_add(c2.lane(64, lane))
                .wrapping_add(cp4.lane(64, lane));
            assert_eq!(got, want, "lane {lane}");
        }
    }

    #[test]
    fn multiply_field_vs_host() {
        let mut m = machine();
        // 32 lanes of 16 bits: 8-bit factors.
        let a = Row512::from_lanes(16, &(0..32).map(|i| (i * 7 + 3) % 256).collect::<Vec<_>>());
        let b = Row512::from_lanes(16, &(0..32).map(|i| (i * 11 + 197) % 256).collect::<Vec<_>>());
        let got = multiply(&mut m, &a, &b, 8).unwrap();
        for lane in 0..32 {
            let want = a.lane(16, lane) * b.lane(16, lane);
            assert_eq!(got.lane(16, lane), want, "lane {lane}");
        }
    }

    #[test]
    fn multiply_extremes() {
        for (a, b, w) in [
            (0u64, 0u64, 8u32),
            (255, 255, 8),
            (1, 255, 8),
            (0xffff, 0xffff, 16),
            (0xffff_ffff, 0xffff_ffff, 32),
            (3, 0, 4),
            (15, 15, 4),
        ] {
            let mut m = machine();
            let got = multiply(&mut m, &Row512::splat((2 * w) as usize, a), &Row512::splat((2 * w) as usize, b), w)
                .unwrap();
            let want = a.wrapping_mul(b);
            assert_eq!(got.lane((2 * w) as usize, 0), want, "{a}*{b} w={w}");
        }
    }

    #[test]
    fn multiply_rejects_bad_width() {
        let mut m = machine();
        assert!(multiply(&mut m, &Row512::ZERO, &Row512::ZERO, 0).is_err());
        assert!(multiply(&mut m, &Row512::ZERO, &Row512::ZERO, 33).is_err());
        // Widths between lane sizes round the lane up instead of failing.
        assert_eq!(mul_lane(12).unwrap(), 32);
        let got = multiply(&mut m, &Row512::splat(32, 3000), &Row512::splat(32, 2001), 12).unwrap();
        assert_eq!(got.lane(32, 0), 3000 * 2001);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn add5_matches_host_reference(
            seeds in proptest::collection::vec(any::<u64>(), 1..=5),
            lane_sel in 0usize..4,
            w_frac in 0.0f64..1.0,
            l_frac in 0.0f64..1.0,
        ) {
            let lane_width = LANE_WIDTHS[lane_sel];
            let w = 1 + (w_frac * (lane_width as f64 - 1.0)) as u32;
            let l = (l_frac * (lane_width as u32 - w) as f64) as u32;
            let addends: Vec<Row512> = seeds
                .iter()
                .map(|s| Row512::splat64(s.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
                .collect();
            let mut m = machine();
            let got = add5(&mut m, &addends, lane_width, w, l).unwrap();
            prop_assert_eq!(got, host_add(&addends, lane_width, w, l));
        }

        #[test]
        fn multiply_matches_host_reference(a in any::<u64>(), b in any::<u64>(), wi in 0usize..4) {
            let w = [4u32, 8, 16, 32][wi];
            let lane = (2 * w) as usize;
            let mask = (1u64 << w) - 1;
            let lanes = Row512::lanes(lane);
            let av: Vec<u64> = (0..lanes).map(|i| (a.rotate_left(i as u32 * 7)) & mask).collect();
            let bv: Vec<u64> = (0..lanes).map(|i| (b.rotate_left(i as u32 * 13)) & mask).collect();
            let ar = Row512::from_lanes(lane, &av);
            let br = Row512::from_lanes(lane, &bv);
            let mut m = machine();
            let got = multiply(&mut m, &ar, &br, w).unwrap();
            for i in 0..lanes {
                prop_assert_eq!(got.lane(lane, i), av[i] * bv[i]);
            }
        }
    }
}
