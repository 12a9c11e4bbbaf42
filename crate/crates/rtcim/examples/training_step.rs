//! The in-memory pieces of a training step: kernel rotation for the
//! backward pass (an index reversal done with masked lane moves, no
//! arithmetic) and the weight update w <- w - lr * dw.

use rtcim::device::Geometry;
use rtcim::exec::Machine;
use rtcim::fp;
use rtcim::kernels::{rotate180, weight_update};
use rtcim::row::Row512;

fn main() {
    let mut m = Machine::new(Geometry::new(32, 7).unwrap());

    // A 5x5 kernel packed eight values per row. rotate180 reverses the
    // flattened index order, which is exactly the 180-degree rotation of
    // the k x k grid.
    let k = 5usize;
    let vals: Vec<f32> = (0..k * k).map(|i| i as f32 + 0.5).collect();
    let rows: Vec<Row512> = vals
        .chunks(8)
        .map(|c| {
            let mut lane = [0f32; 8];
            lane[..c.len()].copy_from_slice(c);
            fp::pack_f32(&lane)
        })
        .collect();

    let rot = rotate180(&mut m, &rows, k).unwrap();
    let flat: Vec<f32> = rot
        .iter()
        .flat_map(|r| fp::unpack_f32(r))
        .take(k * k)
        .collect();
    println!("kernel front row:  {:?}", &vals[..k]);
    println!("rotated front row: {:?}", &flat[..k]);
    assert!(flat.iter().zip(vals.iter().rev()).all(|(a, b)| a == b));

    let back = rotate180(&mut m, &rot, k).unwrap();
    let restored: Vec<f32> = back
        .iter()
        .flat_map(|r| fp::unpack_f32(r))
        .take(k * k)
        .collect();
    assert_eq!(restored, vals);
    println!("rotate180 twice restores the kernel bit-for-bit");

    // One SGD step on eight weights at once.
    let w = fp::pack_f32(&[0.25, -0.5, 1.0, 2.0, -3.0, 0.125, 10.0, -0.75]);
    let dw = fp::pack_f32(&[1.0, 1.0, -2.0, 0.5, 0.5, -0.25, 4.0, 8.0]);
    let lr = 0.0625f32;
    let updated = weight_update(&mut m, &w, lr, &dw).unwrap();

    println!();
    println!("sgd with lr = {lr}:");
    let wv = fp::unpack_f32(&w);
    let dv = fp::unpack_f32(&dw);
    let uv = fp::unpack_f32(&updated.packed);
    for i in 0..8 {
        println!(
            "  w {:>6}  dw {:>6}  ->  {:>8}  (exact {:>8})",
            wv[i],
            dv[i],
            uv[i],
            wv[i] - lr * dv[i]
        );
    }
    // lr and dw here are exact powers of two times small integers, so the
    // machine result matches IEEE exactly.
    for i in 0..8 {
        assert_eq!(uv[i], wv[i] - lr * dv[i]);
    }

    // lr = 0 must leave the weights bit-identical (no drift from the
    // arithmetic path).
    let frozen = weight_update(&mut m, &w, 0.0, &dw).unwrap();
    assert_eq!(fp::unpack_f32(&frozen.packed), wv);
    println!("lr = 0 leaves weights bit-identical");
}
