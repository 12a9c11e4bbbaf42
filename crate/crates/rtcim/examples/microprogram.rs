//! Microprograms are plain text: build one with the op builder, print it,
//! parse it back, and execute it with a full per-op cost trace.

use rtcim::alu::Builder;
use rtcim::device::Geometry;
use rtcim::exec::{Machine, MicroOp, Program};
use rtcim::row::Row512;

fn main() {
    // Two rows, one transverse read: the ones-count planes of 0b111 + 0b001.
    let mut b = Builder::new();
    b.op(MicroOp::Lanes(64));
    b.write_at(0, Row512::splat(64, 0b111));
    b.write_at(1, Row512::splat(64, 0b001));
    b.goto(0);
    b.op(MicroOp::Tr(2));
    b.op(MicroOp::SelSig(rtcim::cim::SignalKind::S));
    let prog = b.finish();

    let text: String = prog.0.iter().map(|op| format!("{op}\n")).collect();
    println!("--- program text ---");
    print!("{text}");

    let reparsed = Program::parse(&text).unwrap();
    assert_eq!(reparsed, prog);
    println!("--- parses back identically ---");

    let mut m = Machine::new(Geometry::new(32, 7).unwrap());
    m.enable_trace();
    m.run(&prog).unwrap();

    // Sum plane of popcount(0b111, 0b001) per wire: wire 0 saw two ones
    // (s=0), wires 1 and 2 saw one each (s=1) -> 0b110.
    assert_eq!(m.rb.lane(64, 0), 0b110);
    println!("s plane = {:#05b} per lane", m.rb.lane(64, 0));

    println!();
    println!("--- trace ---");
    let events = m.take_trace();
    for ev in &events {
        println!(
            "{:>3}  {:<24} +{} cycle(s)",
            ev.index, ev.op, ev.charge.cycles
        );
    }
    let folded: u64 = events.iter().map(|e| e.charge.cycles).sum();
    assert_eq!(folded, m.ledger().cycles);
    println!("trace folds to the ledger: {} cycles", folded);

    // Comments and blank lines are fine in the text form.
    let commented = "# ones-count demo\nlanes 64\nsetrb rep64:0x3\nwrite ap0\n\ntr 1\nselsig s\n";
    let mut m2 = Machine::new(Geometry::new(32, 7).unwrap());
    m2.run(&Program::parse(commented).unwrap()).unwrap();
    println!();
    println!("parsed a commented program: s plane = {:#x}", m2.rb.lane(64, 0));
}
