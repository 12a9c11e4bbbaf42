//! Racetrack device model: nanowires, domain-block clusters, transverse read.
//!
//! A domain-block cluster (DBC) bundles 512 nanowires that shift in lock-step.
//! Each nanowire carries `d` data domains plus `trd - 1` overhead domains at
//! each end. Two access ports sit a fixed `trd - 1` domains apart; shifting
//! the cluster changes which domain is under each port. A transverse read
//! senses the whole window between the ports at once and reports, per
//! nanowire, how many of those `trd` domains hold a one.
//!
//! `head` is the data-row index currently aligned at ap0. The legal range is
//! `-(trd-1) ..= d-1`: at the low end ap0 hangs over the near overhead so ap1
//! can reach row 0; at the high end ap1 hangs over the far overhead. Pushing
//! beyond either end would shift data off the wire and is an error, not a
//! silent loss.

use crate::cost::CostLedger;
use crate::error::DeviceError;
use crate::row::{Row512, ROW_BITS};

pub const WIRES_PER_DBC: usize = 512;

/// Which access port an operation targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AccessPort {
    Ap0,
    Ap1,
}

impl std::fmt::Display for AccessPort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AccessPort::Ap0 => write!(f, "ap0"),
            AccessPort::Ap1 => write!(f, "ap1"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftDir {
    Up,
    Down,
}

impl std::fmt::Display for ShiftDir {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ShiftDir::Up => write!(f, "up"),
            ShiftDir::Down => write!(f, "down"),
        }
    }
}

/// DBC geometry: data domains per wire and transverse-read distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub data_domains: u32,
    pub trd: u32,
}

impl Geometry {
    pub fn new(data_domains: u32, trd: u32) -> Result<Geometry, DeviceError> {
        if ![16, 32, 64].contains(&data_domains) {
            return Err(DeviceError::InvalidGeometry(format!(
                "data domains must be 16, 32 or 64, got {data_domains}"
            )));
        }
        if !(2..=10).contains(&trd) {
            return Err(DeviceError::InvalidGeometry(format!(
                "transverse-read distance must be in 2..=10, got {trd}"
            )));
        }
        Ok(Geometry { data_domains, trd })
    }

    /// Overhead domains at each wire end.
    pub fn overhead(&self) -> u32 {
        self.trd - 1
    }

    fn head_min(&self) -> i32 {
        -(self.overhead() as i32)
    }

    fn head_max(&self) -> i32 {
        self.data_domains as i32 - 1
    }
}

/// Per-wire ones counts from a transverse read, stored as three bit planes
/// (counts fit in 3 bits for trd <= 7).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OnesCounts {
    pub planes: [Row512; 3],
    /// Window size the counts were taken over.
    pub window: u32,
}

impl OnesCounts {
    /// Carry-save accumulate up to 7 one-bit rows into 3 bit planes.
    pub fn from_rows(rows: &[Row512]) -> OnesCounts {
        assert!(rows.len() <= 7, "bit-plane counts hold at most 7 rows");
        let full_add = |x: Row512, y: Row512, z: Row512| -> (Row512, Row512) {
            let s = x.xor(&y).xor(&z);
            let c = x.and(&y).or(&z.and(&x.xor(&y)));
            (s, c)
        };
        let mut padded = [Row512::ZERO; 7];
        padded[..rows.len()].copy_from_slice(rows);
        let (s1, c1) = full_add(padded[0], padded[1], padded[2]);
        let (s2, c2) = full_add(padded[3], padded[4], padded[5]);
        let (b0, c3) = full_add(s1, s2, padded[6]);
        let (b1, b2) = full_add(c1, c2, c3);
        OnesCounts {
            planes: [b0, b1, b2],
            window: rows.len() as u32,
        }
    }

    /// Ones count for nanowire `i`.
    pub fn count(&self, i: usize) -> u8 {
        debug_assert!(i < ROW_BITS);
        (self.planes[0].get_bit(i) as u8)
            | ((self.planes[1].get_bit(i) as u8) << 1)
            | ((self.planes[2].get_bit(i) as u8) << 2)
    }

    pub fn counts(&self) -> Vec<u8> {
        (0..ROW_BITS).map(|i| self.count(i)).collect()
    }
}

/// Reference model of a single nanowire. The DBC stores rows across 512
/// wires for speed; this per-wire model exists so the two can be checked
/// against each other.
#[derive(Debug, Clone)]
pub struct Nanowire {
    geom: Geometry,
    data: Vec<bool>,
    head: i32,
}

impl Nanowire {
    pub fn new(geom: Geometry) -> Nanowire {
        Nanowire {
            geom,
            data: vec![false; geom.data_domains as usize],
            head: 0,
        }
    }

    pub fn head(&self) -> i32 {
        self.head
    }

    fn port_index(&self, ap: AccessPort) -> i32 {
        match ap {
            AccessPort::Ap0 => self.head,
            AccessPort::Ap1 => self.head + self.geom.overhead() as i32,
        }
    }

    pub fn shift(&mut self, dir: ShiftDir, count: u32) -> Result<(), DeviceError> {
        let delta = match dir {
            ShiftDir::Up => count as i32,
            ShiftDir::Down => -(count as i32),
        };
        let next = self.head + delta;
        if next < self.geom.head_min() || next > self.geom.head_max() {
            return Err(DeviceError::OverheadExceeded {
                head: self.head,
                delta,
                min: self.geom.head_min(),
                max: self.geom.head_max(),
            });
        }
        self.head = next;
        Ok(())
    }

    pub fn read(&self, ap: AccessPort) -> Result<bool, DeviceError> {
        let idx = self.port_index(ap);
        self.data_index(idx, "read").map(|i| self.data[i])
    }

    pub fn write(&mut self, ap: AccessPort, v: bool) -> Result<(), DeviceError> {
        let idx = self.port_index(ap);
        let i = self.data_index(idx, "write")?;
        self.data[i] = v;
        Ok(())
    }

    /// Popcount of the domains between the two ports, both ends inclusive.
    pub fn transverse_read(&self) -> Result<u8, DeviceError> {
        let lo = self.port_index(AccessPort::Ap0);
        let hi = self.port_index(AccessPort::Ap1);
        let lo_i = self.data_index(lo, "transverse read")?;
        let hi_i = self.data_index(hi, "transverse read")?;
        Ok(self.data[lo_i..=hi_i].iter().filter(|&&b| b).count() as u8)
    }

    fn data_index(&self, idx: i32, what: &'static str) -> Result<usize, DeviceError> {
        if idx < 0 || idx >= self.geom.data_domains as i32 {
            return Err(DeviceError::Misaligned {
                what,
                index: idx,
                rows: self.geom.data_domains,
            });
        }
        Ok(idx as usize)
    }
}

/// A domain-block cluster: 512 nanowires shifting in lock-step, stored
/// row-major (one `Row512` per data row). The ledger counts every primitive
/// the cluster performs.
#[derive(Debug, Clone)]
pub struct Dbc {
    geom: Geometry,
    rows: Vec<Row512>,
    head: i32,
    pub ledger: CostLedger,
}

impl Dbc {
    pub fn new(geom: Geometry) -> Dbc {
        Dbc {
            geom,
            rows: vec![Row512::ZERO; geom.data_domains as usize],
            head: 0,
            ledger: CostLedger::default(),
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.geom
    }

    pub fn head(&self) -> i32 {
        self.head
    }

    /// Data-row index currently under the given port, which may point into
    /// overhead (then reads and writes fail with `Misaligned`).
    pub fn row_at(&self, ap: AccessPort) -> i32 {
        match ap {
            AccessPort::Ap0 => self.head,
            AccessPort::Ap1 => self.head + self.geom.overhead() as i32,
        }
    }

    pub fn shift(&mut self, dir: ShiftDir, count: u32) -> Result<(), DeviceError> {
        let delta = match dir {
            ShiftDir::Up => count as i32,
            ShiftDir::Down => -(count as i32),
        };
        let next = self.head + delta;
        if next < self.geom.head_min() || next > self.geom.head_max() {
            return Err(DeviceError::OverheadExceeded {
                head: self.head,
                delta,
                min: self.geom.head_min(),
                max: self.geom.head_max(),
            });
        }
        self.head = next;
        self.ledger.shifts += count as u64;
        self.ledger.cycles += count as u64;
        Ok(())
    }

    pub fn read_row(&mut self, ap: AccessPort) -> Result<Row512, DeviceError> {
        let idx = self.data_index(self.row_at(ap), "read")?;
        self.ledger.reads += 1;
        self.ledger.cycles += 1;
        Ok(self.rows[idx])
    }

    pub fn write_row(&mut self, ap: AccessPort, row: Row512) -> Result<(), DeviceError> {
        let idx = self.data_index(self.row_at(ap), "write")?;
        self.rows[idx] = row;
        self.ledger.writes += 1;
        self.ledger.cycles += 1;
        Ok(())
    }

    /// Sense the whole ap0..=ap1 window at once: per-wire ones counts over
    /// the `trd` domains. The window must lie entirely over data domains.
    pub fn transverse_read(&mut self) -> Result<OnesCounts, DeviceError> {
        let lo = self.data_index(self.row_at(AccessPort::Ap0), "transverse read")?;
        let hi = self.data_index(self.row_at(AccessPort::Ap1), "transverse read")?;
        self.ledger.transverse_reads += 1;
        self.ledger.cycles += 1;
        Ok(OnesCounts::from_rows(&self.rows[lo..=hi]))
    }

    /// Debug/inspection access that does not touch the ledger.
    pub fn peek_row(&self, index: usize) -> Row512 {
        self.rows[index]
    }

    fn data_index(&self, idx: i32, what: &'static str) -> Result<usize, DeviceError> {
        if idx < 0 || idx >= self.geom.data_domains as i32 {
            return Err(DeviceError::Misaligned {
                what,
                index: idx,
                rows: self.geom.data_domains,
            });
        }
        Ok(idx as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geom() -> Geometry {
        Geometry::new(32, 7).unwrap()
    }

    #[test]
    fn shift_up_then_down_restores_alignment() {
        let mut dbc = Dbc::new(geom());
        let marker = Row512::splat64(0xdead_beef);
        dbc.write_row(AccessPort::Ap0, marker).unwrap();
        dbc.shift(ShiftDir::Up, 1).unwrap();
        dbc.shift(ShiftDir::Down, 1).unwrap();
        assert_eq!(dbc.read_row(AccessPort::Ap0).unwrap(), marker);
    }

    #[test]
    fn shift_beyond_overhead_errors() {
        let mut dbc = Dbc::new(geom());
        // Down by overhead is fine, one more is not.
        dbc.shift(ShiftDir::Down, 6).unwrap();
        let err = dbc.shift(ShiftDir::Down, 1).unwrap_err();
        assert!(matches!(err, DeviceError::OverheadExceeded { .. }));
        // Up to the last row is fine, one more is not.
        dbc.shift(ShiftDir::Up, 6 + 31).unwrap();
        let err = dbc.shift(ShiftDir::Up, 1).unwrap_err();
        assert!(matches!(err, DeviceError::OverheadExceeded { .. }));
    }

    #[test]
    fn ap1_sits_trd_minus_one_rows_above_ap0() {
        let mut dbc = Dbc::new(geom());
        // Write a distinct marker into every row through ap0.
        for r in 0..32 {
            while dbc.head() < r {
                dbc.shift(ShiftDir::Up, 1).unwrap();
            }
            dbc.write_row(AccessPort::Ap0, Row512::splat64(r as u64)).unwrap();
        }
        while dbc.head() > 3 {
            dbc.shift(ShiftDir::Down, 1).unwrap();
        }
        // Row 3 at ap0, so ap1 must see row 3 + 6 = 9.
        assert_eq!(dbc.read_row(AccessPort::Ap1).unwrap(), Row512::splat64(9));
    }

    #[test]
    fn round_trip_every_row_exhaustive() {
        let mut dbc = Dbc::new(geom());
        for r in 0..32i32 {
            let value = Row512::splat64(0x0101_0101u64.wrapping_mul(r as u64 + 1));
            let delta = r - dbc.head();
            if delta >= 0 {
                dbc.shift(ShiftDir::Up, delta as u32).unwrap();
            } else {
                dbc.shift(ShiftDir::Down, (-delta) as u32).unwrap();
            }
            dbc.write_row(AccessPort::Ap0, value).unwrap();
            dbc.shift(ShiftDir::Down, 1).ok();
            let back = r - dbc.head();
            if back >= 0 {
                dbc.shift(ShiftDir::Up, back as u32).unwrap();
            }
            assert_eq!(dbc.read_row(AccessPort::Ap0).unwrap(), value, "row {r}");
        }
    }

    #[test]
    fn cross_port_round_trip_reaches_row_zero() {
        let mut dbc = Dbc::new(geom());
        // ap1 over row 0 requires head = -(trd-1).
        dbc.shift(ShiftDir::Down, 6).unwrap();
        let v = Row512::splat64(0x42);
        dbc.write_row(AccessPort::Ap1, v).unwrap();
        assert!(matches!(
            dbc.read_row(AccessPort::Ap0).unwrap_err(),
            DeviceError::Misaligned { .. }
        ));
        dbc.shift(ShiftDir::Up, 6).unwrap();
        assert_eq!(dbc.read_row(AccessPort::Ap0).unwrap(), v);
    }

    #[test]
    fn transverse_read_window_is_inclusive_and_checked() {
        let mut dbc = Dbc::new(geom());
        // Set bit 0 of rows 0 and 6 (the two window ends) and row 7 (outside).
        let mut one = Row512::ZERO;
        one.set_bit(0, true);
        for r in [0i32, 6, 7] {
            let delta = r - dbc.head();
            dbc.shift(ShiftDir::Up, delta as u32).unwrap();
            dbc.write_row(AccessPort::Ap0, one).unwrap();
            dbc.shift(ShiftDir::Down, dbc.head() as u32).unwrap();
        }
        let counts = dbc.transverse_read().unwrap();
        assert_eq!(counts.count(0), 2, "both ends of the window count, row 7 does not");
        assert_eq!(counts.count(1), 0);

        // A window straddling overhead is misaligned.
        dbc.shift(ShiftDir::Down, 1).unwrap();
        assert!(matches!(
            dbc.transverse_read().unwrap_err(),
            DeviceError::Misaligned { .. }
        ));
        dbc.shift(ShiftDir::Up, 1 + 26).unwrap();
        assert!(matches!(
            dbc.transverse_read().unwrap_err(),
            DeviceError::Misaligned { .. }
        ));
    }

    #[test]
    fn fresh_dbc_reads_zero_and_counts_costs() {
        let mut dbc = Dbc::new(geom());
        assert_eq!(dbc.read_row(AccessPort::Ap0).unwrap(), Row512::ZERO);
        dbc.shift(ShiftDir::Up, 3).unwrap();
        dbc.write_row(AccessPort::Ap0, Row512::ONES).unwrap();
        dbc.transverse_read().unwrap();
        assert_eq!(dbc.ledger.reads, 1);
        assert_eq!(dbc.ledger.writes, 1);
        assert_eq!(dbc.ledger.shifts, 3);
        assert_eq!(dbc.ledger.transverse_reads, 1);
        // One cycle per accessed primitive, one per shifted domain.
        assert_eq!(dbc.ledger.cycles, 6);
    }

    #[test]
    fn ones_counts_match_scalar_popcount_exhaustively() {
        // Every window pattern on a single wire: 2^7 cases.
        for pattern in 0u32..128 {
            let rows: Vec<Row512> = (0..7)
                .map(|r| {
                    let mut row = Row512::ZERO;
                    if (pattern >> r) & 1 == 1 {
                        row.set_bit(0, true);
                        row.set_bit(511, true);
                    }
                    row
                })
                .collect();
            let counts = OnesCounts::from_rows(&rows);
            assert_eq!(counts.count(0), pattern.count_ones() as u8);
            assert_eq!(counts.count(511), pattern.count_ones() as u8);
            assert_eq!(counts.count(5), 0);
        }
    }

    proptest! {
        /// The row-parallel DBC and 512 independent single-wire models agree.
        #[test]
        fn dbc_matches_nanowire_reference(ops in proptest::collection::vec(0u8..6, 1..60),
                                          seed in any::<u64>()) {
            let g = geom();
            let mut dbc = Dbc::new(g);
            let mut wires: Vec<Nanowire> = (0..8).map(|_| Nanowire::new(g)).collect();
            // Track 8 sample wires (bits 0, 73, 128, 200, 255, 300, 444, 511).
            let sample = [0usize, 73, 128, 200, 255, 300, 444, 511];
            let mut state = seed;
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                state
            };
            for op in ops {
                match op {
                    0 => {
                        let r = dbc.shift(ShiftDir::Up, 1);
                        for w in &mut wires {
                            prop_assert_eq!(w.shift(ShiftDir::Up, 1).is_ok(), r.is_ok());
                        }
                    }
                    1 => {
                        let r = dbc.shift(ShiftDir::Down, 1);
                        for w in &mut wires {
                            prop_assert_eq!(w.shift(ShiftDir::Down, 1).is_ok(), r.is_ok());
                        }
                    }
                    2 | 3 => {
                        let ap = if op == 2 { AccessPort::Ap0 } else { AccessPort::Ap1 };
                        let mut row = Row512::ZERO;
                        for (wi, &bit) in sample.iter().enumerate() {
                            row.set_bit(bit, (next() >> wi) & 1 == 1);
                        }
                        let r = dbc.write_row(ap, row);
                        for (wi, w) in wires.iter_mut().enumerate() {
                            let wr = w.write(ap, row.get_bit(sample[wi]));
                            prop_assert_eq!(wr.is_ok(), r.is_ok());
                        }
                    }
                    4 => {
                        let ap = if next() & 1 == 0 { AccessPort::Ap0 } else { AccessPort::Ap1 };
                        let r = dbc.read_row(ap);
                        for (wi, w) in wires.iter().enumerate() {
                            match (&r, w.read(ap)) {
                                (Ok(row), Ok(bit)) => prop_assert_eq!(row.get_bit(sample[wi]), bit),
                                (Err(_), Err(_)) => {}
                                (a, b) => prop_assert!(false, "divergence: {:?} vs {:?}", a, b),
                            }
                        }
                    }
                    _ => {
                        let r = dbc.transverse_read();
                        for (wi, w) in wires.iter().enumerate() {
                            match (&r, w.transverse_read()) {
                                (Ok(counts), Ok(c)) => prop_assert_eq!(counts.count(sample[wi]), c),
                                (Err(_), Err(_)) => {}
                                (a, b) => prop_assert!(false, "divergence: {:?} vs {:?}", a, b),
                            }
                        }
                    }
                }
            }
        }
    }
}
