//! CNN building blocks on the in-memory machine: windowed convolution with
//! multi-operand reduction, ReLU, max pooling, 180-degree weight rotation
//! and the gradient-descent weight update.
//!
//! Tensors live on the host as flat f32 buffers; kernels stage values into
//! 64-bit lanes (eight per row), run the microprograms, and read results
//! back. Loss back-propagation needs no kernel of its own: it is the
//! composition rotate180 -> conv_window -> fp_add over channels.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alu::Builder;
use crate::cim::{PredBank, PredGate, PredLoadMode, ShiftAmount, ShiftSide};
use crate::device::AccessPort;
use crate::error::{ConfigError, KernelError};
use crate::exec::{Machine, MicroOp, PredAction};
use crate::fp::{fp_add_many, fp_multiply, pack_f32, unpack_bits, unpack_f32, FpResult, FP_LANES};
use crate::row::Row512;

const SIGN: u64 = 0x8000_0000;
const EXP: u32 = 0x7f80_0000;

/// Mask selecting one whole 64-bit lane.
fn lane_mask(lane: usize) -> Row512 {
    let mut lanes = [0u64; FP_LANES];
    lanes[lane] = u64::MAX;
    Row512::from_lanes(64, &lanes)
}

/// Shape and window parameters of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    /// Input channels.
    pub n: usize,
    /// Output channels.
    pub m: usize,
    pub r_in: usize,
    pub c_in: usize,
    /// Kernel size, 1..=11.
    pub k: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
}

fn default_stride() -> usize {
    1
}

impl TensorSpec {
    pub fn validate(&self) -> Result<(), KernelError> {
        if self.n == 0 || self.m == 0 || self.r_in == 0 || self.c_in == 0 {
            return Err(KernelError::ShapeMismatch(
                "all dimensions must be positive".into(),
            ));
        }
        if !(1..=11).contains(&self.k) {
            return Err(KernelError::ShapeMismatch(format!(
                "kernel size must be 1..=11, got {}",
                self.k
            )));
        }
        if self.stride == 0 {
            return Err(KernelError::ShapeMismatch("stride must be positive".into()));
        }
        if self.r_in + 2 * self.padding < self.k || self.c_in + 2 * self.padding < self.k {
            return Err(KernelError::ShapeMismatch(format!(
                "window {}x{} does not fit {}x{} input with padding {}",
                self.k, self.k, self.r_in, self.c_in, self.padding
            )));
        }
        Ok(())
    }

    pub fn r_out(&self) -> usize {
        (self.r_in + 2 * self.padding - self.k) / self.stride + 1
    }

    pub fn c_out(&self) -> usize {
        (self.c_in + 2 * self.padding - self.k) / self.stride + 1
    }

    /// Multiply-accumulate pairs per output element.
    pub fn window_len(&self) -> usize {
        self.k * self.k * self.n
    }
}

/// Host-side tensor: channel-major, row-major f32 buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Tensor {
        Tensor {
            channels,
            rows,
            cols,
            data: vec![0.0; channels * rows * cols],
        }
    }

    pub fn from_vec(
        channels: usize,
        rows: usize,
        cols: usize,
        data: Vec<f32>,
    ) -> Result<Tensor, KernelError> {
        if data.len() != channels * rows * cols {
            return Err(KernelError::ShapeMismatch(format!(
                "{} values cannot fill {channels}x{rows}x{cols}",
                data.len()
            )));
        }
        Ok(Tensor {
            channels,
            rows,
            cols,
            data,
        })
    }

    pub fn get(&self, ch: usize, r: usize, c: usize) -> f32 {
        self.data[(ch * self.rows + r) * self.cols + c]
    }

    pub fn set(&mut self, ch: usize, r: usize, c: usize, v: f32) {
        self.data[(ch * self.rows + r) * self.cols + c] = v;
    }

    /// Value at a window coordinate, zero outside the padded bounds.
    fn at_padded(&self, ch: usize, r: isize, c: isize) -> f32 {
        if r < 0 || c < 0 || r as usize >= self.rows || c as usize >= self.cols {
            0.0
        } else {
            self.get(ch, r as usize, c as usize)
        }
    }

    /// Reject NaN / infinity encodings before a machine run.
    pub fn validate_finite(&self) -> Result<(), KernelError> {
        for (i, v) in self.data.iter().enumerate() {
            if v.to_bits() & EXP == EXP {
                return Err(KernelError::NonFiniteInput {
                    lane: i,
                    value: v.to_bits(),
                });
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Tensor, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let t: Tensor = serde_json::from_str(&text).map_err(|source| ConfigError::Json {
            path: path.display().to_string(),
            source,
        })?;
        if t.data.len() != t.channels * t.rows * t.cols {
            return Err(ConfigError::Invalid(format!(
                "tensor data length {} does not match shape {}x{}x{}",
                t.data.len(),
                t.channels,
                t.rows,
                t.cols
            )));
        }
        Ok(t)
    }

    /// Raw little-endian f32, channel-major row-major, no header.
    pub fn write_bin(&self, path: &Path) -> Result<(), ConfigError> {
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read_bin(
        path: &Path,
        channels: usize,
        rows: usize,
        cols: usize,
    ) -> Result<Tensor, ConfigError> {
        let bytes = fs::read(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let want = channels * rows * cols * 4;
        if bytes.len() != want {
            return Err(ConfigError::Invalid(format!(
                "{} holds {} bytes, shape {channels}x{rows}x{cols} needs {want}",
                path.display(),
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Tensor {
            channels,
            rows,
            cols,
            data,
        })
    }
}

/// Convolution weights: [out_channel][in_channel][k][k].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvWeights {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub data: Vec<f32>,
}

impl ConvWeights {
    pub fn from_vec(m: usize, n: usize, k: usize, data: Vec<f32>) -> Result<ConvWeights, KernelError> {
        if data.len() != m * n * k * k {
            return Err(KernelError::ShapeMismatch(format!(
                "{} values cannot fill {m}x{n}x{k}x{k} weights",
                data.len()
            )));
        }
        Ok(ConvWeights { m, n, k, data })
    }

    pub fn get(&self, oc: usize, ic: usize, i: usize, j: usize) -> f32 {
        self.data[((oc * self.n + ic) * self.k + i) * self.k + j]
    }
}

/// ReLU on one packed row: lanes with the sign bit set reset to +0.
pub fn relu_row(m: &mut Machine, row: &Row512) -> Result<Row512, KernelError> {
    let mut b = Builder::new();
    b.op(MicroOp::Lanes(64));
    b.write_at(0, *row);
    b.read_at(0);
    b.op(MicroOp::Pred(PredBank::P, PredLoadMode::Set, 31));
    b.op(MicroOp::PApply(PredGate::P, PredAction::Reset));
    b.op(MicroOp::Write(AccessPort::Ap0));
    m.run(&b.finish())?;
    Ok(m.dbc.peek_row(0))
}

/// Per-lane maximum of packed non-negative fp32 rows by bitwise elimination
/// over all 31 value bits, in tournaments of up to seven rows.
pub fn max_pool_rows(m: &mut Machine, values: &[Row512]) -> Result<Row512, KernelError> {
    if values.is_empty() {
        return Err(KernelError::ShapeMismatch("empty pool window".into()));
    }
    for row in values {
        for (lane, bits) in unpack_bits(row).iter().enumerate() {
            if *bits as u64 & SIGN != 0 {
                return Err(KernelError::NegativeMaxPoolInput { lane, value: *bits });
            }
        }
    }
    let mut layer: Vec<Row512> = values.to_vec();
    while layer.len() > 1 {
        let mut next = Vec::with_capacity(layer.len().div_ceil(7));
        for chunk in layer.chunks(7) {
            let mut b = Builder::new();
            b.op(MicroOp::Lanes(64));
            for j in 0..7 {
                b.write_at(j as i32, chunk.get(j).copied().unwrap_or(Row512::ZERO));
            }
            crate::fp::emit_bitwise_max(&mut b, 0, 31);
            for _ in 0..3 {
                b.op(MicroOp::Lsh(ShiftSide::Right, ShiftAmount::Eight));
            }
            for _ in 0..7 {
                b.op(MicroOp::Lsh(ShiftSide::Right, ShiftAmount::One));
            }
            m.run(&b.finish())?;
            next.push(m.rb);
        }
        layer = next;
    }
    Ok(layer[0])
}

/// One convolution window: pairwise products kept decomposed, then one
/// multi-operand sum. Result lanes are independent windows.
pub fn conv_window(
    m: &mut Machine,
    weights: &[Row512],
    inputs: &[Row512],
) -> Result<FpResult, KernelError> {
    if weights.is_empty() || weights.len() != inputs.len() {
        return Err(KernelError::ShapeMismatch(format!(
            "window has {} weights and {} inputs",
            weights.len(),
            inputs.len()
        )));
    }
    let mut products = Vec::with_capacity(weights.len());
    let mut flag = Row512::ZERO;
    for (w, x) in weights.iter().zip(inputs) {
        let p = fp_multiply(m, w, x)?;
        products.push(p.packed);
        flag = flag.or(&p.flag);
    }
    let sum = fp_add_many(m, &products)?;
    Ok(FpResult {
        packed: sum.packed,
        flag: flag.or(&sum.flag),
    })
}

/// Rotate a k x k kernel by 180 degrees: element (i, j) moves to
/// (k-1-i, k-1-j), i.e. the lane-packed sequence reverses. Each value is
/// masked out with AND, walked to its mirrored lane with logical shifts,
/// and recombined with OR.
pub fn rotate180(m: &mut Machine, rows: &[Row512], k: usize) -> Result<Vec<Row512>, KernelError> {
    if !(1..=11).contains(&k) {
        return Err(KernelError::ShapeMismatch(format!(
            "kernel size must be 1..=11, got {k}"
        )));
    }
    let count = k * k;
    let rows_in = count.div_ceil(FP_LANES);
    if rows.len() != rows_in {
        return Err(KernelError::ShapeMismatch(format!(
            "{}x{} kernel needs {} rows, got {}",
            k,
            k,
            rows_in,
            rows.len()
        )));
    }
    let out_base = rows_in as i32;
    let mut b = Builder::new();
    b.op(MicroOp::Lanes(64));
    for (r, row) in rows.iter().enumerate() {
        b.write_at(r as i32, *row);
    }
    for r in 0..rows_in {
        b.write_at(out_base + r as i32, Row512::ZERO);
    }
    for idx in 0..count {
        let mirror = count - 1 - idx;
        let (src_row, src_lane) = (idx / FP_LANES, idx % FP_LANES);
        let (dst_row, dst_lane) = (mirror / FP_LANES, mirror % FP_LANES);
        b.read_at(src_row as i32);
        b.op(MicroOp::RbAnd(lane_mask(src_lane)));
        let (side, delta) = if dst_lane >= src_lane {
            (ShiftSide::Left, dst_lane - src_lane)
        } else {
            (ShiftSide::Right, src_lane - dst_lane)
        };
        for _ in 0..delta * 8 {
            b.op(MicroOp::Lsh(side, ShiftAmount::Eight));
        }
        b.goto(out_base + dst_row as i32);
        b.op(MicroOp::WriteOr(AccessPort::Ap0));
    }
    m.run(&b.finish())?;
    Ok((0..rows_in)
        .map(|r| m.dbc.peek_row(rows_in + r))
        .collect())
}

/// Gradient-descent step W' = W - lr * dW: multiply, flip the product sign,
/// add. lr = 0 leaves W bit-identical (the -0 product is dropped by the
/// adder's zero-exponent rule).
pub fn weight_update(
    m: &mut Machine,
    w: &Row512,
    lr: f32,
    dw: &Row512,
) -> Result<FpResult, KernelError> {
    let lr_row = pack_f32(&[lr; FP_LANES]);
    let product = fp_multiply(m, &lr_row, dw)?;

    let mut b = Builder::new();
    b.op(MicroOp::Lanes(64));
    b.write_at(0, product.packed);
    b.read_at(0);
    b.op(MicroOp::RbXor(Row512::splat64(SIGN)));
    b.op(MicroOp::Write(AccessPort::Ap0));
    m.run(&b.finish())?;
    let negated = m.dbc.peek_row(0);

    let sum = crate::fp::fp_add(m, &[*w, negated])?;
    Ok(FpResult {
        packed: sum.packed,
        flag: product.flag.or(&sum.flag),
    })
}

/// Full convolution layer forward pass. Output positions ride the lanes
/// eight at a time; the weight operand is splatted across lanes. Returns
/// the output tensor and whether any used lane raised the range flag.
pub fn conv_forward(
    m: &mut Machine,
    input: &Tensor,
    weights: &ConvWeights,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, bool), KernelError> {
    let spec = TensorSpec {
        n: weights.n,
        m: weights.m,
        r_in: input.rows,
        c_in: input.cols,
        k: weights.k,
        stride,
        padding,
    };
    spec.validate()?;
    if input.channels != weights.n {
        return Err(KernelError::ShapeMismatch(format!(
            "input has {} channels, weights expect {}",
            input.channels, weights.n
        )));
    }
    input.validate_finite()?;

    let (r_out, c_out) = (spec.r_out(), spec.c_out());
    let mut out = Tensor::zeros(weights.m, r_out, c_out);
    let mut flagged = false;
    let k = weights.k;

    for oc in 0..weights.m {
        // One weight row per window element, identical across lanes.
        let w_rows: Vec<Row512> = (0..weights.n)
            .flat_map(|ic| (0..k * k).map(move |ij| (ic, ij / k, ij % k)))
            .map(|(ic, i, j)| pack_f32(&[weights.get(oc, ic, i, j); FP_LANES]))
            .collect();

        let positions: Vec<(usize, usize)> = (0..r_out)
            .flat_map(|r| (0..c_out).map(move |c| (r, c)))
            .collect();
        for group in positions.chunks(FP_LANES) {
            let x_rows: Vec<Row512> = (0..weights.n)
                .flat_map(|ic| (0..k * k).map(move |ij| (ic, ij / k, ij % k)))
                .map(|(ic, i, j)| {
                    let mut lanes = [0.0f32; FP_LANES];
                    for (p, &(r, c)) in group.iter().enumerate() {
                        lanes[p] = input.at_padded(
                            ic,
                            (r * stride + i) as isize - padding as isize,
                            (c * stride + j) as isize - padding as isize,
                        );
                    }
                    pack_f32(&lanes)
                })
                .collect();
            let result = conv_window(m, &w_rows, &x_rows)?;
            let vals = unpack_f32(&result.packed);
            let flags = result.flags();
            for (p, &(r, c)) in group.iter().enumerate() {
                out.set(oc, r, c, vals[p]);
                flagged |= flags[p];
            }
        }
    }
    Ok((out, flagged))
}

/// Elementwise ReLU over a tensor, eight values per machine call.
pub fn relu_tensor(m: &mut Machine, input: &Tensor) -> Result<Tensor, KernelError> {
    let mut out = input.clone();
    for chunk in out.data.chunks_mut(FP_LANES) {
        let row = pack_f32(chunk);
        let result = unpack_f32(&relu_row(m, &row)?);
        chunk.copy_from_slice(&result[..chunk.len()]);
    }
    Ok(out)
}

/// Max pooling with a square window; inputs must be non-negative
/// (post-ReLU). Output positions ride the lanes eight at a time.
pub fn max_pool_tensor(
    m: &mut Machine,
    input: &Tensor,
    pool: usize,
    stride: usize,
) -> Result<Tensor, KernelError> {
    if pool == 0 || stride == 0 || input.rows < pool || input.cols < pool {
        return Err(KernelError::ShapeMismatch(format!(
            "pool {pool} stride {stride} does not fit {}x{}",
            input.rows, input.cols
        )));
    }
    let r_out = (input.rows - pool) / stride + 1;
    let c_out = (input.cols - pool) / stride + 1;
    let mut out = Tensor::zeros(input.channels, r_out, c_out);
    for ch in 0..input.channels {
        let positions: Vec<(usize, usize)> = (0..r_out)
            .flat_map(|r| (0..c_out).map(move |c| (r, c)))
            .collect();
        for group in positions.chunks(FP_LANES) {
            let rows: Vec<Row512> = (0..pool * pool)
                .map(|ij| {
                    let mut lanes = [0.0f32; FP_LANES];
                    for (p, &(r, c)) in group.iter().enumerate() {
                        lanes[p] = input.get(ch, r * stride + ij / pool, c * stride + ij % pool);
                    }
                    pack_f32(&lanes)
                })
                .collect();
            let max = unpack_f32(&max_pool_rows(m, &rows)?);
            for (p, &(r, c)) in group.iter().enumerate() {
                out.set(ch, r, c, max[p]);
            }
        }
    }
    Ok(out)
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

    fn lcg(seed: &mut u64) -> u32 {
        *seed = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (*seed >> 32) as u32
    }

    /// Small normal-ish f32 from a seed, in (-4, 4).
    fn small_f32(seed: &mut u64) -> f32 {
        let raw = lcg(seed);
        (raw as f32 / u32::MAX as f32 - 0.5) * 8.0
    }

    #[test]
    fn relu_resets_negative_lanes() {
        let vals = [-2.5f32, 3.0, -0.0, 0.0, -1e-20, 7.5, -1e20, 0.125];
        let mut m = machine();
        let out = unpack_f32(&relu_row(&mut m, &pack_f32(&vals)).unwrap());
        for (i, v) in vals.iter().enumerate() {
            let want = if v.to_bits() & SIGN as u32 != 0 { 0.0 } else { *v };
            assert_eq!(out[i].to_bits(), want.to_bits(), "lane {i}");
        }
    }

    #[test]
    fn max_pool_picks_the_largest() {
        let mut m = machine();
        let groups: [&[f32]; 4] = [
            &[0.0, 1.5, 0.25, 3.0],
            &[2.0, 2.0, 2.0, 2.0],
            &[42.0],
            &[0.5, 0.25, 9.75, 1.5, 6.0, 0.125, 8.5, 7.0, 3.25],
        ];
        for vals in groups {
            let rows: Vec<Row512> = vals.iter().map(|v| pack_f32(&[*v; 8])).collect();
            let got = unpack_f32(&max_pool_rows(&mut m, &rows).unwrap());
            let want = vals.iter().cloned().fold(0.0f32, f32::max);
            for lane in 0..8 {
                assert_eq!(got[lane], want, "{vals:?}");
            }
        }
    }

    #[test]
    fn max_pool_rejects_negative_lanes() {
        let mut m = machine();
        let rows = [pack_f32(&[1.0; 8]), pack_f32(&[0.5, -0.25, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0])];
        match max_pool_rows(&mut m, &rows) {
            Err(KernelError::NegativeMaxPoolInput { lane: 1, value }) => {
                assert_eq!(value, (-0.25f32).to_bits());
            }
            other => panic!("expected negative-input error, got {other:?}"),
        }
    }

    #[test]
    fn conv_window_hand_cases() {
        let mut m = machine();
        let ones: Vec<Row512> = (0..9).map(|_| pack_f32(&[1.0; 8])).collect();
        let r = conv_window(&mut m, &ones, &ones).unwrap();
        assert_eq!(unpack_f32(&r.packed)[0], 9.0);

        let zeros: Vec<Row512> = (0..9).map(|_| pack_f32(&[0.0; 8])).collect();
        let r = conv_window(&mut m, &zeros, &ones).unwrap();
        assert_eq!(r.packed, Row512::ZERO);
    }

    #[test]
    fn conv_window_matches_oracle_and_ignores_pair_order() {
        let mut seed = 0x5eed_1234u64;
        let mut m = machine();
        let pairs: Vec<(f32, f32)> = (0..12)
            .map(|_| (small_f32(&mut seed), small_f32(&mut seed)))
            .collect();
        let w: Vec<Row512> = pairs.iter().map(|(a, _)| pack_f32(&[*a; 8])).collect();
        let x: Vec<Row512> = pairs.iter().map(|(_, b)| pack_f32(&[*b; 8])).collect();
        let got = conv_window(&mut m, &w, &x).unwrap();

        let products: Vec<u32> = pairs
            .iter()
            .map(|(a, b)| oracle::fp_mul(a.to_bits(), b.to_bits()).0)
            .collect();
        let (want, _) = oracle::fp_add_tree(&products);
        assert_eq!(got.values()[0], want);

        let mut shuffled = pairs.clone();
        shuffled.reverse();
        shuffled.rotate_left(5);
        let w2: Vec<Row512> = shuffled.iter().map(|(a, _)| pack_f32(&[*a; 8])).collect();
        let x2: Vec<Row512> = shuffled.iter().map(|(_, b)| pack_f32(&[*b; 8])).collect();
        let got2 = conv_window(&mut m, &w2, &x2).unwrap();
        assert_eq!(got2.values()[0], want);
    }

    #[test]
    fn rotate180_matches_index_reversal() {
        let k = 3;
        let vals: Vec<f32> = (1..=9).map(|i| i as f32).collect();
        let rows = vec![pack_f32(&vals[..8]), pack_f32(&vals[8..])];
        let mut m = machine();
        let out = rotate180(&mut m, &rows, k).unwrap();
        let mut got = Vec::new();
        for row in &out {
            got.extend_from_slice(&unpack_f32(row));
        }
        let want: Vec<f32> = vals.iter().rev().cloned().collect();
        assert_eq!(&got[..9], &want[..]);
    }

    #[test]
    fn rotate180_k1_is_unchanged() {
        let rows = vec![pack_f32(&[5.25])];
        let mut m = machine();
        let out = rotate180(&mut m, &rows, 1).unwrap();
        assert_eq!(unpack_f32(&out[0])[0], 5.25);
    }

    #[test]
    fn weight_update_identities() {
        let mut m = machine();
        let w = pack_f32(&[1.0, -2.5, 0.25, 3.5, -0.125, 100.0, 1e-20, -7.0]);
        let dw = pack_f32(&[0.5; 8]);

        // lr = 0 leaves W bit-identical.
        let r = weight_update(&mut m, &w, 0.0, &dw).unwrap();
        assert_eq!(r.packed, w);

        // dW = 0 leaves W bit-identical.
        let r = weight_update(&mut m, &w, 0.25, &pack_f32(&[0.0; 8])).unwrap();
        assert_eq!(r.packed, w);

        // lr = 1, W = 0 gives -dW.
        let r = weight_update(&mut m, &Row512::ZERO, 1.0, &dw).unwrap();
        for lane in 0..8 {
            assert_eq!(unpack_f32(&r.packed)[lane], -0.5);
        }
    }

    #[test]
    fn conv_forward_matches_per_element_oracle() {
        let mut seed = 0xfeed_beefu64;
        let input = Tensor::from_vec(
            2,
            5,
            5,
            (0..50).map(|_| small_f32(&mut seed)).collect(),
        )
        .unwrap();
        let weights = ConvWeights::from_vec(
            3,
            2,
            3,
            (0..54).map(|_| small_f32(&mut seed)).collect(),
        )
        .unwrap();
        let mut m = machine();
        let (out, _) = conv_forward(&mut m, &input, &weights, 1, 0).unwrap();
        assert_eq!((out.channels, out.rows, out.cols), (3, 3, 3));

        for oc in 0..3 {
            for r in 0..3 {
                for c in 0..3 {
                    let mut products = Vec::new();
                    for ic in 0..2 {
                        for i in 0..3 {
                            for j in 0..3 {
                                let wv = weights.get(oc, ic, i, j).to_bits();
                                let xv = input.get(ic, r + i, c + j).to_bits();
                                products.push(oracle::fp_mul(wv, xv).0);
                            }
                        }
                    }
                    let (want, _) = oracle::fp_add_tree(&products);
                    assert_eq!(
                        out.get(oc, r, c).to_bits(),
                        want,
                        "element ({oc},{r},{c})"
                    );
                }
            }
        }
    }

    #[test]
    fn conv_forward_applies_stride_and_padding() {
        // 1x3x3 input, identity-ish 1x1 kernel, stride 2, padding 1.
        let input = Tensor::from_vec(1, 3, 3, (1..=9).map(|i| i as f32).collect()).unwrap();
        let weights = ConvWeights::from_vec(1, 1, 1, vec![2.0]).unwrap();
        let mut m = machine();
        let (out, flagged) = conv_forward(&mut m, &input, &weights, 2, 1).unwrap();
        assert!(!flagged);
        assert_eq!((out.rows, out.cols), (3, 3));
        // Padding ring contributes zeros; interior picks strided samples.
        assert_eq!(out.get(0, 0, 0), 0.0);
        assert_eq!(out.get(0, 1, 1), 2.0 * input.get(0, 1, 1));
        assert_eq!(out.get(0, 2, 2), 0.0);
    }

    #[test]
    fn max_pool_tensor_2x2() {
        let input = Tensor::from_vec(
            1,
            4,
            4,
            vec![
                1.0, 2.0, 5.0, 4.0, //
                3.0, 0.5, 4.5, 1.5, //
                0.0, 8.0, 0.25, 0.5, //
                7.0, 6.0, 0.75, 1.0,
            ],
        )
        .unwrap();
        let mut m = machine();
        let out = max_pool_tensor(&mut m, &input, 2, 2).unwrap();
        assert_eq!(out.data, vec![3.0, 5.0, 8.0, 1.0]);
    }

    #[test]
    fn tensor_bin_and_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_vec(2, 2, 3, (0..12).map(|i| i as f32 * 0.5 - 2.0).collect()).unwrap();

        let bin = dir.path().join("t.bin");
        t.write_bin(&bin).unwrap();
        let back = Tensor::read_bin(&bin, 2, 2, 3).unwrap();
        assert_eq!(back, t);
        assert!(Tensor::read_bin(&bin, 2, 2, 4).is_err());

        let json = dir.path().join("t.json");
        std::fs::write(&json, serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(Tensor::from_json_file(&json).unwrap(), t);
    }

    #[test]
    fn spec_shapes_and_validation() {
        let spec = TensorSpec {
            n: 3,
            m: 8,
            r_in: 28,
            c_in: 28,
            k: 5,
            stride: 1,
            padding: 0,
        };
        spec.validate().unwrap();
        assert_eq!((spec.r_out(), spec.c_out()), (24, 24));
        assert_eq!(spec.window_len(), 75);

        let bad = TensorSpec { k: 13, ..spec };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn rotate180_is_an_involution(k in 1usize..=11, seed in any::<u64>()) {
            let mut s = seed;
            let count = k * k;
            let vals: Vec<f32> = (0..count.div_ceil(8) * 8)
                .map(|i| if i < count { small_f32(&mut s) } else { 0.0 })
                .collect();
            let rows: Vec<Row512> = vals.chunks(8).map(pack_f32).collect();
            let mut m = machine();
            let once = rotate180(&mut m, &rows, k).unwrap();
            let twice = rotate180(&mut m, &once, k).unwrap();
            prop_assert_eq!(twice, rows);

            // And the single rotation is the index reversal.
            let mut flat = Vec::new();
            for row in &once {
                flat.extend_from_slice(&unpack_f32(row));
            }
            for idx in 0..count {
                prop_assert_eq!(flat[count - 1 - idx].to_bits(), vals[idx].to_bits());
            }
        }

        #[test]
        fn max_pool_matches_host_max(seed in any::<u64>(), n in 1usize..=12) {
            let mut s = seed;
            let mut m = machine();
            let vals: Vec<Vec<f32>> = (0..n)
                .map(|_| (0..8).map(|_| small_f32(&mut s).abs()).collect())
                .collect();
            let rows: Vec<Row512> = vals.iter().map(|v| pack_f32(v)).collect();
            let got = unpack_f32(&max_pool_rows(&mut m, &rows).unwrap());
            for lane in 0..8 {
                let want = vals.iter().map(|v| v[lane]).fold(0.0f32, f32::max);
                prop_assert_eq!(got[lane], want, "lane {}", lane);
            }
        }

        #[test]
        fn weight_update_matches_oracle(seed in any::<u64>()) {
            let mut s = seed;
            let mut m = machine();
            let w: Vec<f32> = (0..8).map(|_| small_f32(&mut s)).collect();
            let dw: Vec<f32> = (0..8).map(|_| small_f32(&mut s)).collect();
            let lr = small_f32(&mut s).abs() * 0.1;
            let r = weight_update(&mut m, &pack_f32(&w), lr, &pack_f32(&dw)).unwrap();
            for lane in 0..8 {
                let (p, _) = oracle::fp_mul(lr.to_bits(), dw[lane].to_bits());
                let (want, _) = oracle::fp_add(&[w[lane].to_bits(), p ^ SIGN as u32]);
                prop_assert_eq!(r.values()[lane], want, "lane {}", lane);
            }
        }
    }
}
