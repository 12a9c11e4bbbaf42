//! Cost accounting: primitive-event ledgers, device parameters, the fold
//! from counts to latency / energy / power, and CNN workload mapping.
//!
//! Every device or CIM primitive bumps a counter in a [`CostLedger`]. Ledgers
//! are additive across program fragments; folding one against a
//! [`DeviceParams`] table gives latency (sequential within a DBC) and energy.
//! Work spread across parallel DBCs takes the max latency and the summed
//! energy, which [`fold_parallel`] captures.
//!
//! Workload mapping measures per-operation ledgers by running the real
//! microprograms once on a scratch machine ([`ProbeBench`]): every program
//! here is straight-line (predicated lanes burn the same cycles either way),
//! so one probe per shape is exact, and additivity composes them into
//! layers. Latency spreads over parallel DBCs as an even fluid split; energy
//! is unaffected by the split.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::alu::{self, emit_add5, emit_csa, Builder};
use crate::device::Geometry;
use crate::error::{ConfigError, KernelError};
use crate::exec::{Machine, MicroOp};
use crate::fp::{self, pack_f32};
use crate::kernels::{self, TensorSpec};
use crate::row::Row512;

/// Counts of the primitive events a DBC plus its CIM unit performed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    /// Single-domain shift steps (a shift by k counts k).
    pub shifts: u64,
    /// Row reads through an access port.
    pub reads: u64,
    /// Row writes through an access port (masked bit writes included).
    pub writes: u64,
    /// Transverse reads of the full AP window.
    pub transverse_reads: u64,
    /// Row-buffer logical shifts by 1 or 8.
    pub logical_shifts: u64,
    /// Predication-unit operations: bank loads and predicated applies
    /// (taken and not-taken cost the same).
    pub predicated_ops: u64,
    /// Total device cycles (each primitive is one cycle; shifts cost one
    /// cycle per domain stepped).
    pub cycles: u64,
}

impl CostLedger {
    pub fn add(&mut self, other: &CostLedger) {
        self.shifts += other.shifts;
        self.reads += other.reads;
        self.writes += other.writes;
        self.transverse_reads += other.transverse_reads;
        self.logical_shifts += other.logical_shifts;
        self.predicated_ops += other.predicated_ops;
        self.cycles += other.cycles;
    }

    pub fn sum(ledgers: impl IntoIterator<Item = CostLedger>) -> CostLedger {
        let mut total = CostLedger::default();
        for l in ledgers {
            total.add(&l);
        }
        total
    }

    /// Difference since an earlier snapshot of the same ledger.
    pub fn since(&self, earlier: &CostLedger) -> CostLedger {
        CostLedger {
            shifts: self.shifts - earlier.shifts,
            reads: self.reads - earlier.reads,
            writes: self.writes - earlier.writes,
            transverse_reads: self.transverse_reads - earlier.transverse_reads,
            logical_shifts: self.logical_shifts - earlier.logical_shifts,
            predicated_ops: self.predicated_ops - earlier.predicated_ops,
            cycles: self.cycles - earlier.cycles,
        }
    }

    /// Scale every count by an integer factor (layer = blocks x block cost).
    pub fn scaled(&self, factor: u64) -> CostLedger {
        CostLedger {
            shifts: self.shifts * factor,
            reads: self.reads * factor,
            writes: self.writes * factor,
            transverse_reads: self.transverse_reads * factor,
            logical_shifts: self.logical_shifts * factor,
            predicated_ops: self.predicated_ops * factor,
            cycles: self.cycles * factor,
        }
    }

    pub fn total_events(&self) -> u64 {
        self.shifts
            + self.reads
            + self.writes
            + self.transverse_reads
            + self.logical_shifts
            + self.predicated_ops
    }
}

/// One cost parameter with a required provenance note saying where the
/// number comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: f64,
    pub provenance: String,
}

impl Param {
    fn new(value: f64, provenance: &str) -> Param {
        Param {
            value,
            provenance: provenance.to_string(),
        }
    }
}

/// Per-event timing and energy parameters. Times are nanoseconds, energies
/// picojoules, static power watts; the fold converts to SI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    pub t_shift_ns: Param,
    pub t_access_ns: Param,
    pub t_transverse_read_ns: Param,
    pub t_cim_op_ns: Param,
    pub e_shift_pj: Param,
    pub e_read_pj: Param,
    pub e_write_pj: Param,
    pub e_transverse_read_pj: Param,
    pub e_cim_op_pj: Param,
    pub static_power_w: Param,
}

impl Default for DeviceParams {
    fn default() -> DeviceParams {
        DeviceParams {
            t_shift_ns: Param::new(1.0, "default: single-domain wall step, ~1 ns class device"),
            t_access_ns: Param::new(1.0, "default: access-port read/write latency ~1 ns"),
            t_transverse_read_ns: Param::new(1.0, "default: assumed equal to a port access"),
            t_cim_op_ns: Param::new(1.0, "default: row-buffer/predication stage, one cycle"),
            e_shift_pj: Param::new(0.1, "default: assumed comparable to a write"),
            e_read_pj: Param::new(0.1, "default: assumed comparable to a write"),
            e_write_pj: Param::new(0.1, "default: characteristic racetrack write energy ~0.1 pJ"),
            e_transverse_read_pj: Param::new(0.1, "default: multi-domain sense, write-class energy"),
            e_cim_op_pj: Param::new(0.05, "default: small logic stage, half a port access"),
            static_power_w: Param::new(0.005, "default: peripheral/idle draw per active bank"),
        }
    }
}

impl DeviceParams {
    /// Reject empty provenance notes; every figure must say where it came from.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fields: [(&'static str, &Param); 10] = [
            ("t_shift_ns", &self.t_shift_ns),
            ("t_access_ns", &self.t_access_ns),
            ("t_transverse_read_ns", &self.t_transverse_read_ns),
            ("t_cim_op_ns", &self.t_cim_op_ns),
            ("e_shift_pj", &self.e_shift_pj),
            ("e_read_pj", &self.e_read_pj),
            ("e_write_pj", &self.e_write_pj),
            ("e_transverse_read_pj", &self.e_transverse_read_pj),
            ("e_cim_op_pj", &self.e_cim_op_pj),
            ("static_power_w", &self.static_power_w),
        ];
        for (name, p) in fields {
            if p.provenance.trim().is_empty() {
                return Err(ConfigError::MissingProvenance(name));
            }
            if !p.value.is_finite() || p.value < 0.0 {
                return Err(ConfigError::Invalid(format!(
                    "{name} must be finite and non-negative, got {}",
                    p.value
                )));
            }
        }
        Ok(())
    }
}

/// Latency and energy for one sequential event stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldedCost {
    pub latency_s: f64,
    pub energy_j: f64,
}

const NS: f64 = 1e-9;
const PJ: f64 = 1e-12;

/// Fold one ledger against the parameter table. Latency treats the ledger
/// as a single DBC's sequential stream.
pub fn fold_costs(ledger: &CostLedger, params: &DeviceParams) -> FoldedCost {
    let latency_ns = ledger.shifts as f64 * params.t_shift_ns.value
        + (ledger.reads + ledger.writes) as f64 * params.t_access_ns.value
        + ledger.transverse_reads as f64 * params.t_transverse_read_ns.value
        + (ledger.logical_shifts + ledger.predicated_ops) as f64 * params.t_cim_op_ns.value;
    let energy_pj = ledger.shifts as f64 * params.e_shift_pj.value
        + ledger.reads as f64 * params.e_read_pj.value
        + ledger.writes as f64 * params.e_write_pj.value
        + ledger.transverse_reads as f64 * params.e_transverse_read_pj.value
        + (ledger.logical_shifts + ledger.predicated_ops) as f64 * params.e_cim_op_pj.value;
    FoldedCost {
        latency_s: latency_ns * NS,
        energy_j: energy_pj * PJ,
    }
}

/// Combine per-DBC folds running in parallel: max latency, summed energy.
pub fn fold_parallel(folds: &[FoldedCost]) -> FoldedCost {
    FoldedCost {
        latency_s: folds.iter().map(|f| f.latency_s).fold(0.0, f64::max),
        energy_j: folds.iter().map(|f| f.energy_j).sum(),
    }
}

/// Average power over a fold, including the static floor.
pub fn power_w(fold: &FoldedCost, params: &DeviceParams) -> f64 {
    if fold.latency_s <= 0.0 {
        return params.static_power_w.value;
    }
    fold.energy_j / fold.latency_s + params.static_power_w.value
}

/// Arithmetic mode a workload maps to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Ternary weights: multiplications become bulk-bitwise sign flips,
    /// sums a carry-save popcount. 16-bit lanes.
    Ternary,
    /// 8-bit integer multiply-accumulate. 16-bit product lanes, 32-bit sums.
    Integer,
    /// Single-precision float. 64-bit lanes, eight values per row.
    Fp32,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Ternary, Mode::Integer, Mode::Fp32];

    /// Independent windows per machine call (values per row at the mode's
    /// accumulator lane width).
    fn windows_per_call(self) -> u64 {
        match self {
            Mode::Ternary => 32,
            Mode::Integer => 16,
            Mode::Fp32 => 8,
        }
    }

    /// Lanes for elementwise activation passes (ReLU / pooling).
    fn activation_lanes(self) -> u64 {
        match self {
            Mode::Ternary | Mode::Integer => 16,
            Mode::Fp32 => 8,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ternary => "ternary",
            Mode::Integer => "integer",
            Mode::Fp32 => "fp32",
        })
    }
}

impl FromStr for Mode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Mode, ConfigError> {
        match s {
            "ternary" => Ok(Mode::Ternary),
            "integer" => Ok(Mode::Integer),
            "fp32" => Ok(Mode::Fp32),
            other => Err(ConfigError::Invalid(format!(
                "unknown mode {other:?}, expected ternary|integer|fp32"
            ))),
        }
    }
}

/// One network layer for workload mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv {
        #[serde(flatten)]
        spec: TensorSpec,
    },
    Pool {
        channels: usize,
        r_in: usize,
        c_in: usize,
        k: usize,
        stride: usize,
    },
    Fc {
        inputs: usize,
        outputs: usize,
    },
}

impl LayerSpec {
    fn conv(n: usize, m: usize, r_in: usize, c_in: usize, k: usize, stride: usize, padding: usize) -> LayerSpec {
        LayerSpec::Conv {
            spec: TensorSpec {
                n,
                m,
                r_in,
                c_in,
                k,
                stride,
                padding,
            },
        }
    }

    fn pool(channels: usize, r_in: usize, c_in: usize, k: usize, stride: usize) -> LayerSpec {
        LayerSpec::Pool {
            channels,
            r_in,
            c_in,
            k,
            stride,
        }
    }

    fn fc(inputs: usize, outputs: usize) -> LayerSpec {
        LayerSpec::Fc { inputs, outputs }
    }

    fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Pool { .. } => "pool",
            LayerSpec::Fc { .. } => "fc",
        }
    }

    /// Multiply-add FLOPs (2 per MAC); pooling counts zero.
    pub fn flops(&self) -> u64 {
        match self {
            LayerSpec::Conv { spec } => {
                2 * (spec.k * spec.k * spec.n * spec.m * spec.r_out() * spec.c_out()) as u64
            }
            LayerSpec::Pool { .. } => 0,
            LayerSpec::Fc { inputs, outputs } => 2 * (inputs * outputs) as u64,
        }
    }
}

/// A named stack of layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Network {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

impl Network {
    pub fn lenet5() -> Network {
        Network {
            name: "lenet5".into(),
            layers: vec![
                LayerSpec::conv(1, 6, 32, 32, 5, 1, 0),
                LayerSpec::pool(6, 28, 28, 2, 2),
                LayerSpec::conv(6, 16, 14, 14, 5, 1, 0),
                LayerSpec::pool(16, 10, 10, 2, 2),
                LayerSpec::fc(400, 120),
                LayerSpec::fc(120, 84),
                LayerSpec::fc(84, 10),
            ],
        }
    }

    pub fn alexnet() -> Network {
        Network {
            name: "alexnet".into(),
            layers: vec![
                LayerSpec::conv(3, 96, 227, 227, 11, 4, 0),
                LayerSpec::pool(96, 55, 55, 3, 2),
                LayerSpec::conv(96, 256, 27, 27, 5, 1, 2),
                LayerSpec::pool(256, 27, 27, 3, 2),
                LayerSpec::conv(256, 384, 13, 13, 3, 1, 1),
                LayerSpec::conv(384, 384, 13, 13, 3, 1, 1),
                LayerSpec::conv(384, 256, 13, 13, 3, 1, 1),
                LayerSpec::pool(256, 13, 13, 3, 2),
                LayerSpec::fc(9216, 4096),
                LayerSpec::fc(4096, 4096),
                LayerSpec::fc(4096, 1000),
            ],
        }
    }

    pub fn vgg16() -> Network {
        let mut layers = Vec::new();
        let blocks: [(usize, usize, usize); 5] = [
            (64, 2, 224),
            (128, 2, 112),
            (256, 3, 56),
            (512, 3, 28),
            (512, 3, 14),
        ];
        let mut channels = 3;
        for (width, convs, side) in blocks {
            for _ in 0..convs {
                layers.push(LayerSpec::conv(channels, width, side, side, 3, 1, 1));
                channels = width;
            }
            layers.push(LayerSpec::pool(channels, side, side, 2, 2));
        }
        layers.push(LayerSpec::fc(512 * 7 * 7, 4096));
        layers.push(LayerSpec::fc(4096, 4096));
        layers.push(LayerSpec::fc(4096, 1000));
        Network {
            name: "vgg16".into(),
            layers,
        }
    }

    pub fn by_name(name: &str) -> Option<Network> {
        match name {
            "lenet5" => Some(Network::lenet5()),
            "alexnet" => Some(Network::alexnet()),
            "vgg16" => Some(Network::vgg16()),
            _ => None,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Network, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn total_flops(&self) -> u64 {
        self.layers.iter().map(LayerSpec::flops).sum()
    }
}

/// Measures per-operation ledgers by running the real microprograms once on
/// a scratch machine and caching the deltas.
pub struct ProbeBench {
    m: Machine,
    cache: HashMap<(&'static str, usize), CostLedger>,
}

impl Default for ProbeBench {
    fn default() -> ProbeBench {
        ProbeBench::new()
    }
}

impl ProbeBench {
    pub fn new() -> ProbeBench {
        ProbeBench {
            m: Machine::new(Geometry::new(32, 7).expect("default geometry")),
            cache: HashMap::new(),
        }
    }

    fn measured<F>(&mut self, key: (&'static str, usize), run: F) -> CostLedger
    where
        F: FnOnce(&mut Machine) -> Result<(), KernelError>,
    {
        if let Some(hit) = self.cache.get(&key) {
            return *hit;
        }
        let before = self.m.ledger();
        run(&mut self.m).expect("probe programs are well-formed");
        let delta = self.m.ledger().since(&before);
        self.cache.insert(key, delta);
        delta
    }

    /// One lane-parallel fp32 multiply (eight products).
    pub fn fp_multiply(&mut self) -> CostLedger {
        self.measured(("fp_multiply", 0), |m| {
            let a = pack_f32(&[1.5; 8]);
            let b = pack_f32(&[-2.25; 8]);
            fp::fp_multiply(m, &a, &b)?;
            Ok(())
        })
    }

    /// One fp32 add of `n` operands.
    pub fn fp_add(&mut self, n: usize) -> CostLedger {
        self.measured(("fp_add", n), |m| {
            let rows: Vec<Row512> = (0..n).map(|i| pack_f32(&[i as f32 + 0.5; 8])).collect();
            fp::fp_add(m, &rows)?;
            Ok(())
        })
    }

    /// Full fp32 reduction of `t` products: the add tournament's chunking.
    pub fn fp_reduce(&mut self, t: usize) -> CostLedger {
        let mut total = CostLedger::default();
        if t == 1 {
            return self.fp_add(1);
        }
        let mut count = t;
        while count > 1 {
            let full = count / fp::FP_MAX_ADDENDS;
            let rem = count % fp::FP_MAX_ADDENDS;
            total.add(&self.fp_add(fp::FP_MAX_ADDENDS).scaled(full as u64));
            if rem > 0 {
                total.add(&self.fp_add(rem));
            }
            count = full + usize::from(rem > 0);
        }
        total
    }

    /// One predicated sign-reset pass (ReLU over one row).
    pub fn relu(&mut self) -> CostLedger {
        self.measured(("relu", 0), |m| {
            let row = pack_f32(&[-1.0, 2.0, -3.0, 4.0, -5.0, 6.0, -7.0, 8.0]);
            kernels::relu_row(m, &row)?;
            Ok(())
        })
    }

    /// One seven-row bitwise-elimination maximum.
    pub fn max7(&mut self) -> CostLedger {
        self.measured(("max7", 0), |m| {
            let rows: Vec<Row512> = (0..7).map(|i| pack_f32(&[i as f32; 8])).collect();
            kernels::max_pool_rows(m, &rows)?;
            Ok(())
        })
    }

    /// Tournament cost of a max over `t` values.
    pub fn max_reduce(&mut self, t: usize) -> CostLedger {
        let mut total = CostLedger::default();
        let mut count = t;
        while count > 1 {
            let chunks = count.div_ceil(7);
            total.add(&self.max7().scaled(chunks as u64));
            count = chunks;
        }
        total
    }

    /// One 8-bit integer multiply (32 products in 16-bit lanes).
    pub fn int_multiply(&mut self) -> CostLedger {
        self.measured(("int_multiply", 0), |m| {
            let a = Row512::splat(16, 0x55);
            let b = Row512::splat(16, 0x33);
            alu::multiply(m, &a, &b, 8)?;
            Ok(())
        })
    }

    /// Carry-save accumulation of `t` staged product rows in 32-bit lanes.
    pub fn accumulate(&mut self, t: usize) -> CostLedger {
        self.measured(("accumulate", t), |m| {
            let mut b = Builder::new();
            b.op(MicroOp::Lanes(32));
            b.write_at(8, Row512::splat(32, 0x0102_0304));
            let mut stack = 0i32;
            for _ in 0..t {
                b.read_at(8);
                b.store_rb_at(1 + stack);
                stack += 1;
                if stack == 7 {
                    emit_csa(&mut b, 1, 32);
                    stack = 3;
                }
            }
            if stack == 6 {
                b.write_at(7, Row512::ZERO);
                emit_csa(&mut b, 1, 32);
                stack = 3;
            }
            for r in (stack + 1)..=6 {
                b.write_at(r, Row512::ZERO);
            }
            b.write_at(0, Row512::ZERO);
            emit_add5(&mut b, 0, 32, 32, 0);
            b.read_at(0);
            m.run(&b.finish())?;
            Ok(())
        })
    }

    /// A whole ternary window of `t` operands: stage, bulk-bitwise sign
    /// flip, carry-save popcount-sum. 16-bit lanes.
    pub fn ternary_window(&mut self, t: usize) -> CostLedger {
        self.measured(("ternary_window", t), |m| {
            let mut b = Builder::new();
            b.op(MicroOp::Lanes(16));
            let mut stack = 0i32;
            for i in 0..t {
                b.write_at(8, Row512::splat(16, (i as u64) & 0xff));
                b.read_at(8);
                b.op(MicroOp::RbXor(Row512::splat(16, 0x8000)));
                b.store_rb_at(1 + stack);
                stack += 1;
                if stack == 7 {
                    emit_csa(&mut b, 1, 16);
                    stack = 3;
                }
            }
            if stack == 6 {
                b.write_at(7, Row512::ZERO);
                emit_csa(&mut b, 1, 16);
                stack = 3;
            }
            for r in (stack + 1)..=6 {
                b.write_at(r, Row512::ZERO);
            }
            b.write_at(0, Row512::ZERO);
            emit_add5(&mut b, 0, 16, 16, 0);
            b.read_at(0);
            m.run(&b.finish())?;
            Ok(())
        })
    }
}

/// Per-layer slice of a workload report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    pub calls: u64,
    pub ledger: CostLedger,
    pub latency_s: f64,
    pub energy_j: f64,
    pub flops: u64,
}

/// Throughput / power / efficiency summary for one network in one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadReport {
    pub network: String,
    pub mode: Mode,
    pub parallel_dbcs: u32,
    pub latency_s: f64,
    pub energy_j: f64,
    pub fps: f64,
    pub gflops: f64,
    pub power_w: f64,
    pub efficiency_fps_per_w: f64,
    pub layers: Vec<LayerReport>,
}

impl WorkloadReport {
    /// Tabular per-layer breakdown plus a total row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "layer,calls,shifts,reads,writes,transverse_reads,logical_shifts,\
             predicated_ops,cycles,latency_s,energy_j,flops\n",
        );
        let mut row = |name: &str, calls: u64, l: &CostLedger, lat: f64, en: f64, flops: u64| {
            out.push_str(&format!(
                "{name},{calls},{},{},{},{},{},{},{},{lat:.9e},{en:.9e},{flops}\n",
                l.shifts,
                l.reads,
                l.writes,
                l.transverse_reads,
                l.logical_shifts,
                l.predicated_ops,
                l.cycles,
            ));
        };
        let mut total = CostLedger::default();
        let mut calls = 0;
        for layer in &self.layers {
            row(
                &layer.name,
                layer.calls,
                &layer.ledger,
                layer.latency_s,
                layer.energy_j,
                layer.flops,
            );
            total.add(&layer.ledger);
            calls += layer.calls;
        }
        let flops: u64 = self.layers.iter().map(|l| l.flops).sum();
        row("total", calls, &total, self.latency_s, self.energy_j, flops);
        out
    }
}

/// Map a network to operation counts in the given mode, fold against the
/// parameters, and derive throughput / power / efficiency for one inference
/// spread over `parallel_dbcs` DBCs.
pub fn map_workload(
    net: &Network,
    mode: Mode,
    parallel_dbcs: u32,
    params: &DeviceParams,
) -> Result<WorkloadReport, KernelError> {
    if parallel_dbcs == 0 {
        return Err(KernelError::ShapeMismatch(
            "parallel_dbcs must be at least 1".into(),
        ));
    }
    let mut bench = ProbeBench::new();
    let mut layers = Vec::with_capacity(net.layers.len());
    let mut total_latency = 0.0f64;
    let mut total_energy = 0.0f64;

    for (i, layer) in net.layers.iter().enumerate() {
        let name = format!("{}{}", layer.kind(), i + 1);
        let (ledger, calls) = match layer {
            LayerSpec::Conv { spec } => {
                spec.validate()?;
                mac_layer(&mut bench, mode, spec.window_len(), spec.m * spec.r_out() * spec.c_out())
            }
            LayerSpec::Fc { inputs, outputs } => {
                if *inputs == 0 || *outputs == 0 {
                    return Err(KernelError::ShapeMismatch(
                        "fc layer dimensions must be positive".into(),
                    ));
                }
                mac_layer(&mut bench, mode, *inputs, *outputs)
            }
            LayerSpec::Pool {
                channels,
                r_in,
                c_in,
                k,
                stride,
            } => {
                if *k == 0 || *stride == 0 || r_in < k || c_in < k {
                    return Err(KernelError::ShapeMismatch(format!(
                        "pool {k}x{k} stride {stride} does not fit {r_in}x{c_in}"
                    )));
                }
                let windows = channels * ((r_in - k) / stride + 1) * ((c_in - k) / stride + 1);
                let per_call = bench.max_reduce(k * k);
                let calls = (windows as u64).div_ceil(mode.activation_lanes());
                (per_call.scaled(calls), calls)
            }
        };
        let fold = fold_costs(&ledger, params);
        let latency_s = fold.latency_s / parallel_dbcs as f64;
        total_latency += latency_s;
        total_energy += fold.energy_j;
        layers.push(LayerReport {
            name,
            calls,
            ledger,
            latency_s,
            energy_j: fold.energy_j,
            flops: layer.flops(),
        });
    }

    let fps = if total_latency > 0.0 {
        1.0 / total_latency
    } else {
        0.0
    };
    let gflops = net.total_flops() as f64 * fps / 1e9;
    let pw = total_energy / total_latency.max(f64::MIN_POSITIVE) + params.static_power_w.value;
    Ok(WorkloadReport {
        network: net.name.clone(),
        mode,
        parallel_dbcs,
        latency_s: total_latency,
        energy_j: total_energy,
        fps,
        gflops,
        power_w: pw,
        efficiency_fps_per_w: fps / pw,
        layers,
    })
}

/// Ledger for a multiply-accumulate layer: `windows` independent windows of
/// `t` MACs each, plus the activation pass.
fn mac_layer(bench: &mut ProbeBench, mode: Mode, t: usize, windows: usize) -> (CostLedger, u64) {
    let per_call = match mode {
        Mode::Fp32 => {
            let mut l = bench.fp_multiply().scaled(t as u64);
            l.add(&bench.fp_reduce(t));
            l
        }
        Mode::Integer => {
            let mut l = bench.int_multiply().scaled(t as u64);
            l.add(&bench.accumulate(t));
            l
        }
        Mode::Ternary => bench.ternary_window(t),
    };
    let calls = (windows as u64).div_ceil(mode.windows_per_call());
    let mut ledger = per_call.scaled(calls);
    let relu_calls = (windows as u64).div_ceil(mode.activation_lanes());
    ledger.add(&bench.relu().scaled(relu_calls));
    (ledger, calls + relu_calls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_write_folds_to_defaults() {
        let ledger = CostLedger {
            writes: 1,
            cycles: 1,
            ..Default::default()
        };
        let fold = fold_costs(&ledger, &DeviceParams::default());
        assert!((fold.latency_s - 1e-9).abs() < 1e-18);
        assert!((fold.energy_j - 0.1e-12).abs() < 1e-20);
    }

    #[test]
    fn ledger_addition_is_componentwise() {
        let a = CostLedger {
            shifts: 3,
            reads: 1,
            writes: 2,
            transverse_reads: 4,
            logical_shifts: 5,
            predicated_ops: 6,
            cycles: 21,
        };
        let mut b = a;
        b.add(&a);
        assert_eq!(b, a.scaled(2));
        assert_eq!(b.since(&a), a);
    }

    #[test]
    fn provenance_is_mandatory() {
        let mut params = DeviceParams::default();
        params.e_write_pj.provenance = String::new();
        assert!(matches!(
            params.validate(),
            Err(ConfigError::MissingProvenance("e_write_pj"))
        ));
    }

    #[test]
    fn probes_are_deterministic_and_cached() {
        let mut bench = ProbeBench::new();
        let a = bench.fp_multiply();
        let b = bench.fp_multiply();
        assert_eq!(a, b);
        assert!(a.transverse_reads > 0 && a.cycles > 0);

        let add3 = bench.fp_add(3);
        let add7 = bench.fp_add(7);
        assert!(add7.cycles > add3.cycles, "more operands cost more");

        let mut fresh = ProbeBench::new();
        assert_eq!(fresh.fp_add(3), add3);
    }

    #[test]
    fn flop_counts_match_analytic_formula() {
        // 2 * k^2 * N * M * R_out * C_out per conv layer.
        let alexnet = Network::alexnet();
        assert_eq!(alexnet.layers[0].flops(), 2 * 11 * 11 * 3 * 96 * 55 * 55);
        let lenet = Network::lenet5();
        assert_eq!(lenet.layers[0].flops(), 2 * 5 * 5 * 1 * 6 * 28 * 28);
        assert_eq!(lenet.layers[4].flops(), 2 * 400 * 120);
        assert_eq!(lenet.layers[1].flops(), 0);
        // VGG-16 lands near its textbook ~30.9 GFLOPs.
        let vgg = Network::vgg16().total_flops() as f64;
        assert!((30.0e9..32.0e9).contains(&vgg), "vgg16 flops {vgg}");
    }

    #[test]
    fn modeled_energy_orders_ternary_integer_fp32() {
        let params = DeviceParams::default();
        let net = Network::lenet5();
        let energies: Vec<f64> = Mode::ALL
            .iter()
            .map(|&mode| map_workload(&net, mode, 64, &params).unwrap().energy_j)
            .collect();
        assert!(
            energies[0] < energies[1] && energies[1] < energies[2],
            "ternary {} < integer {} < fp32 {}",
            energies[0],
            energies[1],
            energies[2]
        );
    }

    #[test]
    fn doubling_dbcs_halves_latency_and_keeps_energy() {
        let params = DeviceParams::default();
        let net = Network {
            name: "one-layer".into(),
            layers: vec![LayerSpec::conv(3, 8, 16, 16, 3, 1, 0)],
        };
        let base = map_workload(&net, Mode::Fp32, 8, &params).unwrap();
        let wide = map_workload(&net, Mode::Fp32, 16, &params).unwrap();
        assert!((wide.latency_s - base.latency_s / 2.0).abs() < 1e-15);
        assert!((wide.energy_j - base.energy_j).abs() < 1e-20);
        assert!(map_workload(&net, Mode::Fp32, 0, &params).is_err());
    }

    #[test]
    fn report_round_trips_and_csv_has_total() {
        let params = DeviceParams::default();
        let report = map_workload(&Network::lenet5(), Mode::Ternary, 64, &params).unwrap();
        assert_eq!(report.layers.len(), 7);
        assert!(report.fps > 0.0 && report.power_w > 0.0);

        let json = serde_json::to_string(&report).unwrap();
        let back: WorkloadReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);

        let csv = report.to_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 1 + 7 + 1);
        assert!(lines[1].starts_with("conv1,"));
        assert!(lines.last().unwrap().starts_with("total,"));
    }

    #[test]
    fn network_json_round_trip() {
        let net = Network::alexnet();
        let json = serde_json::to_string_pretty(&net).unwrap();
        let back: Network = serde_json::from_str(&json).unwrap();
        assert_eq!(back, net);
        assert!(json.contains("\"type\": \"conv\""));
        assert!(Network::by_name("lenet5").is_some());
        assert!(Network::by_name("resnet50").is_none());
    }

    proptest! {
        /// Increasing any count or any parameter never decreases energy.
        #[test]
        fn energy_is_monotone(shifts in 0u64..1000, reads in 0u64..1000,
                              writes in 0u64..1000, trs in 0u64..1000,
                              bump in 0u64..500, scale in 1.0f64..4.0) {
            let base = CostLedger {
                shifts, reads, writes,
                transverse_reads: trs,
                logical_shifts: reads / 2,
                predicated_ops: writes / 2,
                cycles: shifts + reads + writes + trs,
            };
            let params = DeviceParams::default();
            let e0 = fold_costs(&base, &params).energy_j;

            let mut more = base;
            more.writes += bump;
            prop_assert!(fold_costs(&more, &params).energy_j >= e0);

            let mut hot = params.clone();
            hot.e_shift_pj.value *= scale;
            hot.e_transverse_read_pj.value *= scale;
            prop_assert!(fold_costs(&base, &hot).energy_j >= e0);
        }

        #[test]
        fn parallel_fold_takes_max_latency_and_sums_energy(
            lat in proptest::collection::vec(0.0f64..1.0, 1..8)
        ) {
            let folds: Vec<FoldedCost> = lat.iter()
                .map(|&l| FoldedCost { latency_s: l, energy_j: l * 2.0 })
                .collect();
            let combined = fold_parallel(&folds);
            let max = lat.iter().cloned().fold(0.0, f64::max);
            let sum: f64 = lat.iter().map(|l| l * 2.0).sum();
            prop_assert!((combined.latency_s - max).abs() < 1e-12);
            prop_assert!((combined.energy_j - sum).abs() < 1e-12);
        }
    }
}
