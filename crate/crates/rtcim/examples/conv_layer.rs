//! A convolution layer end to end on the machine: im2col-free windowed
//! multiply-accumulate with eight output positions per call, then relu and
//! 2x2 max pooling, compared against a host float reference.

use rtcim::device::Geometry;
use rtcim::exec::Machine;
use rtcim::kernels::{conv_forward, max_pool_tensor, relu_tensor, ConvWeights, Tensor};

fn main() {
    let mut m = Machine::new(Geometry::new(32, 7).unwrap());

    // 1x12x12 input, 4 output channels, 3x3 kernels, stride 1 no padding.
    let mut input = Tensor::zeros(1, 12, 12);
    for r in 0..12 {
        for c in 0..12 {
            input.set(0, r, c, ((r * 12 + c) as f32 * 0.37).sin());
        }
    }
    let wdata: Vec<f32> = (0..4 * 9).map(|i| (i as f32 * 0.91).cos() * 0.5).collect();
    let weights = ConvWeights::from_vec(4, 1, 3, wdata.clone()).unwrap();

    let (conv, flagged) = conv_forward(&mut m, &input, &weights, 1, 0).unwrap();
    let relu = relu_tensor(&mut m, &conv).unwrap();
    let pool = max_pool_tensor(&mut m, &relu, 2, 2).unwrap();
    println!(
        "conv 1x12x12 -> 4x10x10, relu, pool -> 4x{}x{} (range flag: {flagged})",
        pool.rows, pool.cols
    );

    // Host reference in f64. The machine truncates each product and aligns
    // the sum once, so each output sits within T * 2^-23 of the reference,
    // scaled by the largest term (T = 9 products per window here).
    let mut worst_ratio = 0f64;
    for oc in 0..4 {
        for r in 0..10 {
            for c in 0..10 {
                let mut acc = 0f64;
                let mut max_term = 0f64;
                for i in 0..3 {
                    for j in 0..3 {
                        let t = (input.get(0, r + i, c + j) as f64)
                            * (wdata[oc * 9 + i * 3 + j] as f64);
                        acc += t;
                        max_term = max_term.max(t.abs());
                    }
                }
                let err = (conv.get(oc, r, c) as f64 - acc).abs();
                let bound = 9.0 * 2f64.powi(-23) * max_term;
                worst_ratio = worst_ratio.max(err / bound);
            }
        }
    }
    println!("worst conv error vs f64 reference: {worst_ratio:.3} of the T * 2^-23 bound");
    assert!(worst_ratio <= 1.0);

    for r in 0..3 {
        for c in 0..3 {
            assert!(pool.get(0, r, c) >= relu.get(0, 2 * r, 2 * c));
        }
    }
    println!("pool output dominates every window element it covers");

    let ledger = m.ledger();
    println!(
        "machine cost: {} cycles, {} transverse reads",
        ledger.cycles, ledger.transverse_reads
    );
}
