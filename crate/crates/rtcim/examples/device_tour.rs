//! Walk one domain-block cluster by hand: shift the tape, use both access
//! ports, and read the ones-count planes a transverse read produces.

use rtcim::device::{AccessPort, Dbc, Geometry, ShiftDir};
use rtcim::row::Row512;

fn main() {
    let geom = Geometry::new(32, 7).unwrap();
    println!(
        "geometry: {} data domains per wire, {}-point read window, overhead {} per end",
        geom.data_domains,
        geom.trd,
        geom.overhead()
    );

    let mut dbc = Dbc::new(geom);

    // Fill seven rows so every wire sees a known ones pattern: row r gets
    // bit i set when i % 7 < r. Wire i then holds min(r) ... patterns with
    // popcount i%7 over the first seven rows.
    for r in 0..7u32 {
        let mut row = Row512::ZERO;
        for i in 0..512 {
            row.set_bit(i, (i % 7) as u32 >= r);
        }
        dbc.write_row(AccessPort::Ap0, row).unwrap();
        if r < 6 {
            dbc.shift(ShiftDir::Up, 1).unwrap();
        }
    }
    // The two ports sit overhead() rows apart; walk back so the window
    // covers rows 0..=6 again.
    dbc.shift(ShiftDir::Down, 6).unwrap();
    println!(
        "head at row {}, ap0 -> row {}, ap1 -> row {}",
        dbc.head(),
        dbc.row_at(AccessPort::Ap0),
        dbc.row_at(AccessPort::Ap1)
    );

    let counts = dbc.transverse_read().unwrap();
    print!("per-wire ones over the window (wires 0..14):");
    for i in 0..14 {
        print!(" {}", counts.count(i));
    }
    println!();
    println!("wire 6 is set in all 7 rows, wire 0 in just one; counts cycle mod 7");

    // Shifting past the overhead region is refused and moves nothing.
    let before = dbc.head();
    let err = dbc.shift(ShiftDir::Down, 64).unwrap_err();
    println!("oversized shift refused: {err}");
    assert_eq!(dbc.head(), before);

    let ledger = dbc.ledger;
    println!(
        "ledger: {} shifts, {} writes, {} transverse reads, {} cycles",
        ledger.shifts, ledger.writes, ledger.transverse_reads, ledger.cycles
    );
}
