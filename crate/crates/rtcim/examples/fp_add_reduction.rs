//! Multi-operand float addition. Up to 49 addends align once to the global
//! maximum exponent and sum exactly in carry-save form, so the result is
//! independent of operand order — unlike IEEE sequential addition.

use rtcim::device::Geometry;
use rtcim::exec::Machine;
use rtcim::fp;
use rtcim::row::Row512;

fn main() {
    let mut m = Machine::new(Geometry::new(32, 7).unwrap());

    // 49 values that sequential IEEE addition reorders badly: mixed signs
    // and a 2^20 magnitude spread.
    let vals: Vec<f32> = (0..49i32)
        .map(|i| {
            let mag = 2f32.powi(i % 21 - 10) * (1.0 + i as f32 / 97.0);
            if i % 3 == 0 {
                -mag
            } else {
                mag
            }
        })
        .collect();

    let rows: Vec<Row512> = vals.iter().map(|&v| fp::pack_f32(&[v; 8])).collect();
    let fwd = fp::fp_add(&mut m, &rows).unwrap();

    let mut rev = rows.clone();
    rev.reverse();
    let bwd = fp::fp_add(&mut m, &rev).unwrap();
    assert_eq!(fwd.values(), bwd.values(), "order changed the bits");

    let machine = fp::unpack_f32(&fwd.packed)[0];
    let seq_fwd: f32 = vals.iter().sum();
    let seq_bwd: f32 = vals.iter().rev().sum();
    let exact: f64 = vals.iter().map(|&v| v as f64).sum();

    println!("machine sum (any order): {machine}");
    println!("ieee forward:            {seq_fwd}");
    println!("ieee backward:           {seq_bwd}");
    println!("exact (f64):             {exact}");
    println!();
    println!(
        "machine relative error: {:.2e} (bound: n * 2^-23 = {:.2e})",
        ((machine as f64 - exact) / exact).abs(),
        49.0 * 2f64.powi(-23)
    );

    // Wider reductions tournament through 49-operand stages; the flag ORs
    // across every stage.
    let many: Vec<Row512> = (0..200)
        .map(|i| fp::pack_f32(&[(i as f32 * 0.25 - 20.0).tanh(); 8]))
        .collect();
    let wide = fp::fp_add_many(&mut m, &many).unwrap();
    let wide_exact: f64 = many
        .iter()
        .map(|r| fp::unpack_f32(r)[0] as f64)
        .sum();
    println!();
    println!(
        "200-operand tree: machine {} vs exact {:.6} (flag {})",
        fp::unpack_f32(&wide.packed)[0],
        wide_exact,
        wide.flags()[0]
    );
}
