//! Self-checking: host-arithmetic reference models ("oracles") for every
//! machine routine, and runnable verification suites that sweep the machine
//! against them.
//!
//! The oracles are deliberately plain host integer code with no shared
//! machinery with the simulator, so agreement means two independent routes
//! reached the same bits.

pub mod oracle {
    //! Reference semantics for the floating-point datapath.
    //!
    //! Number format: IEEE-754 single-precision encodings, with three
    //! deliberate departures that the hardware model makes and these oracles
    //! mirror exactly:
    //!
    //! * zero exponent means zero (denormals flush to +0, results with a
    //!   zero exponent flush to +0),
    //! * results truncate toward zero (no round-to-nearest),
    //! * the 9-bit exponent accumulator wraps mod 512 and raises a per-lane
    //!   out-of-range flag when the result lands in [256, 511].

    /// Exponent bias plus the mod-512 encoding of -127: ea + eb + 385 = ea +
    /// eb - 127 (mod 512).
    const EXP_REBIAS: u32 = 385;

    /// Product of two packed fp32 encodings: (packed result, out-of-range flag).
    pub fn fp_mul(a: u32, b: u32) -> (u32, bool) {
        let ea = (a >> 23) & 0xff;
        let eb = (b >> 23) & 0xff;
        if ea == 0 || eb == 0 {
            return (0, false);
        }
        let ma = ((a & 0x7f_ffff) | 0x80_0000) as u64;
        let mb = ((b & 0x7f_ffff) | 0x80_0000) as u64;
        let p = ma * mb;
        let norm = (p >> 47) & 1;
        let m48 = if norm == 1 { p } else { p << 1 };
        let e9 = (ea + eb + EXP_REBIAS + norm as u32) & 0x1ff;
        let flag = e9 >= 256;
        let s = (a ^ b) & 0x8000_0000;
        let frac = ((m48 >> 24) & 0x7f_ffff) as u32;
        (s | ((e9 & 0xff) << 23) | frac, flag)
    }

    /// Sum of up to 49 packed fp32 encodings, all aligned to the one global
    /// largest exponent before an exact integer add, truncating toward zero:
    /// (packed result, out-of-range flag). A single alignment step makes the
    /// sum independent of operand order.
    pub fn fp_add(vals: &[u32]) -> (u32, bool) {
        assert!(
            !vals.is_empty() && vals.len() <= 49,
            "adder takes 1..=49 values"
        );
        let emax = vals.iter().map(|v| (v >> 23) & 0xff).max().unwrap();
        let mut sum: i64 = 0;
        for &v in vals {
            let e = (v >> 23) & 0xff;
            if e == 0 {
                continue;
            }
            let m48 = (((v & 0x7f_ffff) | 0x80_0000) as u64) << 24;
            let diff = emax - e;
            let m = if diff >= 64 { 0 } else { m48 >> diff };
            if v >> 31 == 1 {
                sum -= m as i64;
            } else {
                sum += m as i64;
            }
        }
        if sum == 0 {
            return (0, false);
        }
        let sign = if sum < 0 { 1u32 << 31 } else { 0 };
        let mag = sum.unsigned_abs();
        let b = 63 - mag.leading_zeros();
        let e9 = (emax as i64 + b as i64 - 47).rem_euclid(512) as u32;
        if e9 == 0 {
            return (0, false);
        }
        let aligned = if b >= 47 { mag >> (b - 47) } else { mag << (47 - b) };
        let frac = ((aligned >> 24) & 0x7f_ffff) as u32;
        (sign | ((e9 & 0xff) << 23) | frac, e9 >= 256)
    }

    /// Tree sum matching the machine's tournament for wide reductions:
    /// chunks of 49, then the partials fold the same way. Flag is the OR
    /// over every stage.
    pub fn fp_add_tree(vals: &[u32]) -> (u32, bool) {
        assert!(!vals.is_empty());
        // A single value still passes through one normalize-and-repack.
        if vals.len() == 1 {
            return fp_add(vals);
        }
        let mut layer: Vec<u32> = vals.to_vec();
        let mut flag = false;
        while layer.len() > 1 {
            let mut next = Vec::with_capacity(layer.len().div_ceil(49));
            for chunk in layer.chunks(49) {
                let (v, f) = fp_add(chunk);
                next.push(v);
                flag |= f;
            }
            layer = next;
        }
        (layer[0], flag)
    }

    /// Truncate an exact f64 toward zero into the fp32 encoding the hardware
    /// model produces (normal range only; callers filter).
    pub fn chop_f64_to_f32_bits(x: f64) -> u32 {
        let bits = x.to_bits();
        let s = ((bits >> 63) as u32) << 31;
        let e11 = ((bits >> 52) & 0x7ff) as i64;
        let e8 = e11 - 1023 + 127;
        assert!((1..255).contains(&e8), "chop target must be fp32-normal");
        let frac = ((bits >> 29) & 0x7f_ffff) as u32;
        s | ((e8 as u32) << 23) | frac
    }
}

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alu;
use crate::device::{AccessPort, Dbc, Geometry, ShiftDir};
use crate::exec::Machine;
use crate::fp;
use crate::kernels;
use crate::row::{Row512, LANE_WIDTHS};

/// One family of machine-vs-reference checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Device,
    Int,
    Fp,
    Kernels,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Device, Suite::Int, Suite::Fp, Suite::Kernels];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Device => "device",
            Suite::Int => "int",
            Suite::Fp => "fp",
            Suite::Kernels => "kernels",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Suite, String> {
        match s {
            "device" => Ok(Suite::Device),
            "int" => Ok(Suite::Int),
            "fp" => Ok(Suite::Fp),
            "kernels" => Ok(Suite::Kernels),
            other => Err(format!(
                "unknown suite {other:?} (expected device, int, fp, kernels or all)"
            )),
        }
    }
}

/// Tally for one named check inside a suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check: String,
    pub trials: u64,
    pub mismatches: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_mismatch: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
}

/// Result of running one or more suites under a single seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub trials: u64,
    pub suites: Vec<SuiteReport>,
    pub passed: bool,
}

struct Checker {
    out: CheckOutcome,
}

impl Checker {
    fn new(name: &str) -> Checker {
        Checker {
            out: CheckOutcome {
                check: name.to_string(),
                trials: 0,
                mismatches: 0,
                first_mismatch: None,
            },
        }
    }

    fn trial(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.out.trials += 1;
        if !ok {
            self.out.mismatches += 1;
            if self.out.first_mismatch.is_none() {
                self.out.first_mismatch = Some(detail());
            }
        }
    }
}

fn rng_for(suite: Suite, seed: u64) -> ChaCha8Rng {
    // Distinct streams per suite so "all" and a single suite agree.
    let tag = match suite {
        Suite::Device => 0x6465_7669u64,
        Suite::Int => 0x696e_74u64,
        Suite::Fp => 0x6670u64,
        Suite::Kernels => 0x6b65_726eu64,
    };
    ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn rand_row(rng: &mut ChaCha8Rng) -> Row512 {
    let words: Vec<u64> = (0..8).map(|_| rng.gen()).collect();
    Row512::from_lanes(64, &words)
}

/// Random packed fp32 with exponent in [lo, hi] (0 allowed: +0 encodings).
fn rand_fp(rng: &mut ChaCha8Rng, lo: u32, hi: u32) -> u32 {
    let e = rng.gen_range(lo..=hi);
    if e == 0 {
        return 0;
    }
    let s = if rng.gen_bool(0.5) { 1u32 << 31 } else { 0 };
    s | (e << 23) | rng.gen_range(0..1u32 << 23)
}

fn rand_fp_row(rng: &mut ChaCha8Rng, lo: u32, hi: u32) -> Row512 {
    let vals: Vec<u32> = (0..fp::FP_LANES).map(|_| rand_fp(rng, lo, hi)).collect();
    fp::pack_bits(&vals)
}

fn suite_device(rng: &mut ChaCha8Rng, trials: u64) -> Vec<CheckOutcome> {
    let geom = Geometry::new(32, 7).unwrap();
    let d = geom.data_domains as i32;
    let span = geom.trd as i32 - 1;

    let mut walk = Checker::new("tape random walk matches a host mirror");
    let mut dbc = Dbc::new(geom);
    let mut tape = vec![Row512::ZERO; d as usize];
    for _ in 0..trials {
        // Keep both ports on data so every access is legal.
        let head = rng.gen_range(0..=d - 1 - span);
        let delta = head - dbc.head();
        if delta > 0 {
            dbc.shift(ShiftDir::Up, delta as u32).unwrap();
        } else if delta < 0 {
            dbc.shift(ShiftDir::Down, (-delta) as u32).unwrap();
        }
        let ap = if rng.gen_bool(0.5) { AccessPort::Ap0 } else { AccessPort::Ap1 };
        let idx = (head + if ap == AccessPort::Ap1 { span } else { 0 }) as usize;
        if rng.gen_bool(0.5) {
            let row = rand_row(rng);
            dbc.write_row(ap, row).unwrap();
            tape[idx] = row;
        } else {
            let got = dbc.read_row(ap).unwrap();
            walk.trial(got == tape[idx], || {
                format!("row {idx} read back differs after walk to head {head}")
            });
        }
    }

    let mut ones = Checker::new("transverse-read planes satisfy s + 2c + 4c' = popcount");
    for _ in 0..trials {
        let head = rng.gen_range(0..=d - 1 - span);
        let delta = head - dbc.head();
        if delta > 0 {
            dbc.shift(ShiftDir::Up, delta as u32).unwrap();
        } else if delta < 0 {
            dbc.shift(ShiftDir::Down, (-delta) as u32).unwrap();
        }
        let counts = dbc.transverse_read().unwrap().counts();
        let mut ok = true;
        'wires: for wire in 0..crate::device::WIRES_PER_DBC {
            let mut want = 0u8;
            for r in head..=head + span {
                if tape[r as usize].get_bit(wire) {
                    want += 1;
                }
            }
            if counts[wire] != want {
                ok = false;
                break 'wires;
            }
        }
        ones.trial(ok, || format!("ones-count mismatch at head {head}"));
    }

    let mut bounds = Checker::new("shifting past the overhead region fails and moves nothing");
    for _ in 0..trials {
        let head = dbc.head();
        let err = if rng.gen_bool(0.5) {
            dbc.shift(ShiftDir::Up, (d - 1 - head + 1) as u32)
        } else {
            dbc.shift(ShiftDir::Down, (head + span + 1) as u32)
        };
        bounds.trial(err.is_err() && dbc.head() == head, || {
            format!("out-of-range shift from head {head} did not fail cleanly")
        });
    }

    vec![walk.out, ones.out, bounds.out]
}

fn suite_int(rng: &mut ChaCha8Rng, trials: u64) -> Vec<CheckOutcome> {
    let mut m = Machine::new(Geometry::new(32, 7).unwrap());

    let mut add = Checker::new("add5 equals lane-wise host sums");
    for _ in 0..trials {
        let lane = LANE_WIDTHS[rng.gen_range(0..LANE_WIDTHS.len())];
        let w = rng.gen_range(1..=lane as u32);
        let l = rng.gen_range(0..=(lane as u32 - w));
        let n = rng.gen_range(1..=alu::MAX_ADDENDS);
        let addends: Vec<Row512> = (0..n).map(|_| rand_row(rng)).collect();
        let got = alu::add5(&mut m, &addends, lane, w, l).unwrap();
        let wmask = if w == 64 { u64::MAX } else { (1u64 << w) - 1 };
        let mut ok = true;
        for i in 0..Row512::lanes(lane) {
            let want = addends
                .iter()
                .map(|r| (r.lane(lane, i) >> l) & wmask)
                .fold(0u64, u64::wrapping_add)
                & wmask;
            if got.lane(lane, i) != want << l {
                ok = false;
                break;
            }
        }
        add.trial(ok, || format!("add5 lane={lane} w={w} l={l} n={n}"));
    }

    let mut csa = Checker::new("carry-save planes sum to the seven addends");
    for _ in 0..trials {
        let lane = LANE_WIDTHS[rng.gen_range(0..LANE_WIDTHS.len())];
        let rows: [Row512; 7] = std::array::from_fn(|_| rand_row(rng));
        let (s, c2, cp4) = alu::csa_reduce(&mut m, &rows, lane).unwrap();
        let mut ok = true;
        for i in 0..Row512::lanes(lane) {
            let want = rows
                .iter()
                .map(|r| r.lane(lane, i))
                .fold(0u64, u64::wrapping_add);
            let got = s
                .lane(lane, i)
                .wrapping_add(c2.lane(lane, i))
                .wrapping_add(cp4.lane(lane, i));
            let mask = if lane == 64 { u64::MAX } else { (1u64 << lane) - 1 };
            if got & mask != want & mask {
                ok = false;
                break;
            }
        }
        csa.trial(ok, || format!("csa identity lane={lane}"));
    }

    let mut mul = Checker::new("multiply equals host products at every width");
    const WIDTHS: [u32; 6] = [4, 8, 12, 16, 24, 32];
    for _ in 0..trials {
        let w = WIDTHS[rng.gen_range(0..WIDTHS.len())];
        let lane = alu::mul_lane(w).unwrap();
        let wmask = (1u64 << w) - 1;
        let a = rand_row(rng).and(&Row512::splat(lane, wmask));
        let b = rand_row(rng).and(&Row512::splat(lane, wmask));
        let got = alu::multiply(&mut m, &a, &b, w).unwrap();
        let mut ok = true;
        for i in 0..Row512::lanes(lane) {
            if got.lane(lane, i) != a.lane(lane, i) * b.lane(lane, i) {
                ok = false;
                break;
            }
        }
        mul.trial(ok, || format!("multiply w={w}"));
    }

    vec![add.out, csa.out, mul.out]
}

fn suite_fp(rng: &mut ChaCha8Rng, trials: u64) -> Vec<CheckOutcome> {
    let mut m = Machine::new(Geometry::new(32, 7).unwrap());

    let mut mul = Checker::new("fp multiply is bit-equal to the truncating reference");
    for _ in 0..trials {
        let a = rand_fp_row(rng, 0, 255);
        let b = rand_fp_row(rng, 0, 255);
        let got = fp::fp_multiply(&mut m, &a, &b).unwrap();
        let av = fp::unpack_bits(&a);
        let bv = fp::unpack_bits(&b);
        let mut ok = true;
        for lane in 0..fp::FP_LANES {
            let (want, want_flag) = oracle::fp_mul(av[lane], bv[lane]);
            if got.values()[lane] != want || got.flags()[lane] != want_flag {
                ok = false;
                break;
            }
        }
        mul.trial(ok, || {
            format!("fp_mul {:08x} * {:08x}", av[0], bv[0])
        });
    }

    let mut add = Checker::new("fp add is bit-equal to the single-alignment reference");
    for _ in 0..trials {
        let n = rng.gen_range(1..=fp::FP_MAX_ADDENDS);
        let rows: Vec<Row512> = (0..n).map(|_| rand_fp_row(rng, 90, 165)).collect();
        let got = fp::fp_add(&mut m, &rows).unwrap();
        let mut ok = true;
        for lane in 0..fp::FP_LANES {
            let vals: Vec<u32> = rows.iter().map(|r| fp::unpack_bits(r)[lane]).collect();
            let (want, want_flag) = oracle::fp_add(&vals);
            if got.values()[lane] != want || got.flags()[lane] != want_flag {
                ok = false;
                break;
            }
        }
        add.trial(ok, || format!("fp_add n={n}"));
    }

    let mut tree = Checker::new("wide fp reduction matches the reference tournament");
    for _ in 0..trials.min(200) {
        let n = rng.gen_range(50..=150);
        let rows: Vec<Row512> = (0..n).map(|_| rand_fp_row(rng, 100, 155)).collect();
        let got = fp::fp_add_many(&mut m, &rows).unwrap();
        let mut ok = true;
        for lane in 0..fp::FP_LANES {
            let vals: Vec<u32> = rows.iter().map(|r| fp::unpack_bits(r)[lane]).collect();
            let (want, want_flag) = oracle::fp_add_tree(&vals);
            if got.values()[lane] != want || got.flags()[lane] != want_flag {
                ok = false;
                break;
            }
        }
        tree.trial(ok, || format!("fp_add_many n={n}"));
    }

    let mut fmax = Checker::new("exponent max equals the host maximum");
    for _ in 0..trials {
        let n = rng.gen_range(1..=7);
        let rows: Vec<Row512> = (0..n).map(|_| rand_fp_row(rng, 0, 255)).collect();
        let got = fp::find_max_exponent(&mut m, &rows).unwrap();
        let mut ok = true;
        for lane in 0..fp::FP_LANES {
            let want = rows
                .iter()
                .map(|r| fp::unpack_bits(r)[lane] & (0xff << 23))
                .max()
                .unwrap();
            if got.lane(64, lane) != want as u64 {
                ok = false;
                break;
            }
        }
        fmax.trial(ok, || format!("find_max n={n}"));
    }

    vec![mul.out, add.out, tree.out, fmax.out]
}

fn suite_kernels(rng: &mut ChaCha8Rng, trials: u64) -> Vec<CheckOutcome> {
    let mut m = Machine::new(Geometry::new(32, 7).unwrap());

    let mut relu = Checker::new("relu zeroes negative lanes and keeps the rest");
    for _ in 0..trials {
        let row = rand_fp_row(rng, 0, 255);
        let got = kernels::relu_row(&mut m, &row).unwrap();
        let vals = fp::unpack_bits(&row);
        let out = fp::unpack_bits(&got);
        let ok = (0..fp::FP_LANES).all(|i| {
            let want = if vals[i] >> 31 == 1 { 0 } else { vals[i] };
            out[i] == want
        });
        relu.trial(ok, || format!("relu {:08x}", vals[0]));
    }

    let mut pool = Checker::new("max pool picks the host maximum in every lane");
    for _ in 0..trials {
        let n = rng.gen_range(1..=9);
        let rows: Vec<Row512> = (0..n)
            .map(|_| rand_fp_row(rng, 0, 254).and(&Row512::splat(64, 0x7fff_ffff)))
            .collect();
        let got = kernels::max_pool_rows(&mut m, &rows).unwrap();
        let mut ok = true;
        for lane in 0..fp::FP_LANES {
            let want = rows
                .iter()
                .map(|r| fp::unpack_bits(r)[lane])
                .max()
                .unwrap();
            if fp::unpack_bits(&got)[lane] != want {
                ok = false;
                break;
            }
        }
        pool.trial(ok, || format!("max_pool n={n}"));
    }

    let mut rot = Checker::new("rotate180 reverses indices and is an involution");
    for _ in 0..trials.min(300) {
        let k = [1usize, 3, 5, 7, 9, 11][rng.gen_range(0..6)];
        let vals: Vec<u32> = (0..k * k).map(|_| rand_fp(rng, 1, 254)).collect();
        let rows = pack_values(&vals);
        let once = kernels::rotate180(&mut m, &rows, k).unwrap();
        let twice = kernels::rotate180(&mut m, &once, k).unwrap();
        let fwd = unpack_values(&once, k * k);
        let back = unpack_values(&twice, k * k);
        let reversed: Vec<u32> = vals.iter().rev().copied().collect();
        rot.trial(fwd == reversed && back == vals, || format!("rotate180 k={k}"));
    }

    let mut conv = Checker::new("conv window equals multiply-then-add of the references");
    for _ in 0..trials.min(300) {
        let t = rng.gen_range(1..=25);
        let ws: Vec<Row512> = (0..t).map(|_| rand_fp_row(rng, 110, 145)).collect();
        let xs: Vec<Row512> = (0..t).map(|_| rand_fp_row(rng, 110, 145)).collect();
        let got = kernels::conv_window(&mut m, &ws, &xs).unwrap();
        let mut ok = true;
        for lane in 0..fp::FP_LANES {
            let mut prods = Vec::with_capacity(t);
            let mut flag = false;
            for i in 0..t {
                let (p, f) =
                    oracle::fp_mul(fp::unpack_bits(&ws[i])[lane], fp::unpack_bits(&xs[i])[lane]);
                prods.push(p);
                flag |= f;
            }
            let (want, f) = oracle::fp_add_tree(&prods);
            flag |= f;
            if got.values()[lane] != want || got.flags()[lane] != flag {
                ok = false;
                break;
            }
        }
        conv.trial(ok, || format!("conv_window t={t}"));
    }

    let mut upd = Checker::new("weight update equals w - lr * dw in reference arithmetic");
    for _ in 0..trials.min(300) {
        let w = rand_fp_row(rng, 110, 145);
        let dw = rand_fp_row(rng, 110, 145);
        let lr = f32::from_bits(rand_fp(rng, 118, 127) & 0x7fff_ffff);
        let got = kernels::weight_update(&mut m, &w, lr, &dw).unwrap();
        let mut ok = true;
        for lane in 0..fp::FP_LANES {
            let (p, f1) = oracle::fp_mul(lr.to_bits(), fp::unpack_bits(&dw)[lane]);
            let (want, f2) = oracle::fp_add(&[fp::unpack_bits(&w)[lane], p ^ (1 << 31)]);
            if got.values()[lane] != want || got.flags()[lane] != (f1 || f2) {
                ok = false;
                break;
            }
        }
        upd.trial(ok, || format!("weight_update lr={lr}"));
    }

    vec![relu.out, pool.out, rot.out, conv.out, upd.out]
}

fn pack_values(vals: &[u32]) -> Vec<Row512> {
    vals.chunks(fp::FP_LANES)
        .map(|c| {
            let mut lane = [0u32; fp::FP_LANES];
            lane[..c.len()].copy_from_slice(c);
            fp::pack_bits(&lane)
        })
        .collect()
}

fn unpack_values(rows: &[Row512], n: usize) -> Vec<u32> {
    rows.iter()
        .flat_map(|r| fp::unpack_bits(r))
        .take(n)
        .collect()
}

/// Run one suite with its own deterministic random stream.
pub fn run_suite(suite: Suite, seed: u64, trials: u64) -> SuiteReport {
    let mut rng = rng_for(suite, seed);
    let checks = match suite {
        Suite::Device => suite_device(&mut rng, trials),
        Suite::Int => suite_int(&mut rng, trials),
        Suite::Fp => suite_fp(&mut rng, trials),
        Suite::Kernels => suite_kernels(&mut rng, trials),
    };
    let passed = checks.iter().all(|c| c.mismatches == 0);
    SuiteReport {
        suite: suite.name().to_string(),
        checks,
        passed,
    }
}

pub fn run_suites(suites: &[Suite], seed: u64, trials: u64) -> VerifyReport {
    let suites: Vec<SuiteReport> = suites.iter().map(|&s| run_suite(s, seed, trials)).collect();
    let passed = suites.iter().all(|s| s.passed);
    VerifyReport {
        seed,
        trials,
        suites,
        passed,
    }
}
