//! Packed single-precision products. Eight fp32 values ride one row; the
//! result truncates toward zero, flushes denormals to +0, and flags lanes
//! whose 9-bit exponent left the representable range.

use rtcim::device::Geometry;
use rtcim::exec::Machine;
use rtcim::fp;

fn main() {
    let mut m = Machine::new(Geometry::new(32, 7).unwrap());

    let a = [1.5f32, -2.25, 3.1415926, 1e20, 1e-20, -0.875, 1000.0, 7.0];
    let b = [2.0f32, 4.0, 2.7182817, 1e20, 1e-20, -8.0, 0.001, 1.0 / 3.0];
    let out = fp::fp_multiply(&mut m, &fp::pack_f32(&a), &fp::pack_f32(&b)).unwrap();

    let vals = fp::unpack_f32(&out.packed);
    let flags = out.flags();
    println!("lane  a          b          machine      ieee         flag");
    for i in 0..fp::FP_LANES {
        println!(
            "{i:>4}  {:<9}  {:<9}  {:<11}  {:<11}  {}",
            a[i],
            b[i],
            vals[i],
            a[i] * b[i],
            flags[i]
        );
    }
    println!();
    println!("lane 3 overflows (1e40 has no fp32 encoding) and raises its flag;");
    println!("lane 4 underflows to a wrapped exponent and flags too;");
    println!("the rest differ from IEEE by at most one truncated mantissa step.");

    // Truncation bias is one-sided: the machine product never exceeds the
    // exact product in magnitude.
    for i in [0usize, 1, 2, 5, 6, 7] {
        let exact = a[i] as f64 * b[i] as f64;
        assert!(vals[i].abs() as f64 <= exact.abs() + f64::EPSILON);
    }
}
