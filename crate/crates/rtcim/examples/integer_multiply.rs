//! Lane-parallel integer arithmetic: a five-operand add, a seven-row
//! carry-save reduction, and a shift-and-add multiply, each checked against
//! plain host integers.

use rtcim::alu;
use rtcim::device::Geometry;
use rtcim::exec::Machine;
use rtcim::row::Row512;

fn main() {
    let mut m = Machine::new(Geometry::new(32, 7).unwrap());

    // 16 lanes of 32 bits; five addends summed with one transverse read per
    // result bit.
    let addends: Vec<Row512> = (1..=5u64)
        .map(|k| Row512::from_lanes(32, &(0..16).map(|i| k * 1000 + i).collect::<Vec<_>>()))
        .collect();
    let sum = alu::add5(&mut m, &addends, 32, 32, 0).unwrap();
    for i in [0usize, 7, 15] {
        let want: u64 = (1..=5u64).map(|k| k * 1000 + i as u64).sum();
        assert_eq!(sum.lane(32, i), want);
    }
    println!("add5: 16 lanes x 5 addends, lane 0 = {}", sum.lane(32, 0));

    // Seven rows collapse to three bit planes in a single transverse read;
    // their plain sum is the seven-operand sum.
    let rows: [Row512; 7] = std::array::from_fn(|r| Row512::splat(64, 11 * (r as u64 + 1)));
    let (s, c2, cp4) = alu::csa_reduce(&mut m, &rows, 64).unwrap();
    let folded = s.lane(64, 0) + c2.lane(64, 0) + cp4.lane(64, 0);
    assert_eq!(folded, 11 * 28);
    println!("csa: s + 2c + 4c' = {folded} = 11+22+...+77");

    // 8-bit factors in 16-bit lanes: 32 independent products per call.
    let a = Row512::from_lanes(16, &(0..32).map(|i| (i * 5 + 7) % 256).collect::<Vec<_>>());
    let b = Row512::from_lanes(16, &(0..32).map(|i| (251 - i * 3) % 256).collect::<Vec<_>>());
    let prod = alu::multiply(&mut m, &a, &b, 8).unwrap();
    for i in 0..32 {
        assert_eq!(prod.lane(16, i), a.lane(16, i) * b.lane(16, i));
    }
    println!(
        "multiply: 32 lanes of 8-bit products, lane 0 = {} * {} = {}",
        a.lane(16, 0),
        b.lane(16, 0),
        prod.lane(16, 0)
    );

    // Odd widths round the lane up: 24-bit factors run in 64-bit lanes.
    let w24 = alu::mul_lane(24).unwrap();
    let big = alu::multiply(
        &mut m,
        &Row512::splat(w24, 0xabcdef),
        &Row512::splat(w24, 0x123456),
        24,
    )
    .unwrap();
    assert_eq!(big.lane(64, 0), 0xabcdef * 0x123456);
    println!("multiply w=24 runs in {w24}-bit lanes: 0xabcdef * 0x123456 = {:#x}", big.lane(64, 0));

    let ledger = m.ledger();
    println!(
        "total cost: {} cycles ({} transverse reads, {} row writes)",
        ledger.cycles, ledger.transverse_reads, ledger.writes
    );
}
