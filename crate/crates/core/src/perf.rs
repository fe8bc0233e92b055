//! SoC cycle, energy and power accounting over an operation trace.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::basecaller::CnnSpec;
use crate::ed_engine::{ed_cycles, EdCycleConfig};
use crate::mat_engine::{conv_to_gemm_dims, core_gemm_cycles, systolic_cycles, CoreConfig, SystolicConfig};
use crate::{Error, Result};

const DEFAULT_SOC_TOML: &str = include_str!("../configs/soc_default.toml");
pub const SOC_CONFIG_VERSION: i64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyTable {
    pub core_mac: f64,
    pub mat_mac: f64,
    /// Accelerator energy per DP cell.
    pub ed_cell: f64,
    /// Core energy per cycle spent on edit distance.
    pub core_cycle: f64,
    pub scratchpad_byte: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SocConfig {
    pub clock_hz: f64,
    pub sram_bytes: u64,
    pub core: CoreConfig,
    pub systolic: SystolicConfig,
    pub ed: EdCycleConfig,
    pub energy_pj: EnergyTable,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SocFile {
    version: i64,
    #[serde(flatten)]
    cfg: SocConfig,
}

impl Default for SocConfig {
    fn default() -> Self {
        SocConfig::from_toml(DEFAULT_SOC_TOML).expect("shipped SoC config is valid")
    }
}

impl SocConfig {
    /// Text of the shipped default configuration.
    pub fn default_toml() -> &'static str {
        DEFAULT_SOC_TOML
    }

    pub fn from_toml(text: &str) -> Result<SocConfig> {
        let file: SocFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("SoC config: {e}")))?;
        if file.version != SOC_CONFIG_VERSION {
            return Err(Error::Config(format!(
                "SoC config: unsupported version {}",
                file.version
            )));
        }
        file.cfg.validate()?;
        Ok(file.cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.energy_pj;
        let positive = [
            self.clock_hz,
            self.core.macs_per_cycle,
            e.core_mac,
            e.mat_mac,
            e.ed_cell,
            e.core_cycle,
            e.scratchpad_byte,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || self.sram_bytes == 0 {
            return Err(Error::Config(format!("SoC config entries must be positive: {self:?}")));
        }
        self.systolic.validate()?;
        self.ed.validate()
    }
}

/// `count` GEMMs of shape `M×K × K×N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmOp {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub count: u64,
}

/// `count` edit-distance comparisons of an `n`-base query against `m` bases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdOp {
    pub n: usize,
    pub m: usize,
    pub count: u64,
}

/// Stage-tagged operation counts. Shapes are kept sorted, so two traces of
/// the same work compare equal regardless of the order it was recorded in.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorkloadTrace {
    gemms: BTreeMap<(usize, usize, usize), u64>,
    eds: BTreeMap<(usize, usize), u64>,
}

#[derive(Serialize, Deserialize)]
struct TraceRepr {
    basecaller: Vec<GemmOp>,
    alignment: Vec<EdOp>,
}

impl Serialize for WorkloadTrace {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TraceRepr {
            basecaller: self.gemm_ops(),
            alignment: self.ed_ops(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for WorkloadTrace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = TraceRepr::deserialize(d)?;
        let mut t = WorkloadTrace::default();
        for g in r.basecaller {
            t.add_gemm(g.m, g.k, g.n, g.count);
        }
        for e in r.alignment {
            t.add_ed(e.n, e.m, e.count);
        }
        Ok(t)
    }
}

impl WorkloadTrace {
    pub fn add_gemm(&mut self, m: usize, k: usize, n: usize, count: u64) {
        if count > 0 && m * k * n > 0 {
            *self.gemms.entry((m, k, n)).or_default() += count;
        }
    }

    pub fn add_ed(&mut self, n: usize, m: usize, count: u64) {
        if count > 0 && n * m > 0 {
            *self.eds.entry((n, m)).or_default() += count;
        }
    }

    /// Records the lowered GEMMs of one forward pass over `t` samples.
    pub fn add_forward(&mut self, spec: &CnnSpec, t: usize) -> Result<()> {
        let mut len = t;
        for l in &spec.layers {
            let (m, k, n) = conv_to_gemm_dims(l, len)?;
            self.add_gemm(m, k, n, 1);
            len = n;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &WorkloadTrace) {
        for (&(m, k, n), &c) in &other.gemms {
            self.add_gemm(m, k, n, c);
        }
        for (&(n, m), &c) in &other.eds {
            self.add_ed(n, m, c);
        }
    }

    /// The same trace with every count multiplied by `k`.
    pub fn repeated(&self, k: u64) -> WorkloadTrace {
        let mut t = self.clone();
        t.gemms.values_mut().for_each(|c| *c *= k);
        t.eds.values_mut().for_each(|c| *c *= k);
        t.gemms.retain(|_, c| *c > 0);
        t.eds.retain(|_, c| *c > 0);
        t
    }

    pub fn is_empty(&self) -> bool {
        self.gemms.is_empty() && self.eds.is_empty()
    }

    pub fn gemm_ops(&self) -> Vec<GemmOp> {
        self.gemms
            .iter()
            .map(|(&(m, k, n), &count)| GemmOp { m, k, n, count })
            .collect()
    }

    pub fn ed_ops(&self) -> Vec<EdOp> {
        self.eds
            .iter()
            .map(|(&(n, m), &count)| EdOp { n, m, count })
            .collect()
    }

    pub fn macs(&self) -> u64 {
        self.gemms
            .iter()
            .map(|(&(m, k, n), &c)| (m * k * n) as u64 * c)
            .sum()
    }

    pub fn dp_cells(&self) -> u64 {
        self.eds.iter().map(|(&(n, m), &c)| (n * m) as u64 * c).sum()
    }

    /// Query bases streamed through edit-distance comparisons.
    pub fn ed_query_bases(&self) -> u64 {
        self.eds.iter().map(|(&(n, _), &c)| n as u64 * c).sum()
    }
}

/// Scratchpad bytes the array moves for one GEMM: per output tile, int8
/// operand panels of `P × K` from each side and `P × P` int32 results.
pub fn scratchpad_bytes(m: usize, k: usize, n: usize, cfg: &SystolicConfig) -> u64 {
    let p = cfg.array_dim;
    let tiles = m.div_ceil(p) as u64 * n.div_ceil(p) as u64;
    tiles * (2 * p * k + 4 * p * p) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub core_cycles: u64,
    pub accel_cycles: u64,
    pub macs: u64,
    pub dp_cells: u64,
    pub scratchpad_bytes: u64,
    pub energy_core_pj: f64,
    pub energy_accel_pj: f64,
    pub speedup: f64,
    pub energy_ratio: f64,
}

impl StageReport {
    fn new(stage: &str) -> StageReport {
        StageReport {
            stage: stage.to_string(),
            core_cycles: 0,
            accel_cycles: 0,
            macs: 0,
            dp_cells: 0,
            scratchpad_bytes: 0,
            energy_core_pj: 0.0,
            energy_accel_pj: 0.0,
            speedup: 0.0,
            energy_ratio: 0.0,
        }
    }

    fn finish(mut self) -> StageReport {
        self.speedup = ratio(self.core_cycles as f64, self.accel_cycles as f64);
        self.energy_ratio = ratio(self.energy_core_pj, self.energy_accel_pj);
        self
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub clock_hz: f64,
    pub stages: Vec<StageReport>,
    pub total: StageReport,
    pub speedup: f64,
    pub energy_ratio: f64,
    /// Accelerated energy over accelerated run time.
    pub avg_power_w: f64,
    /// Edit-distance query bases per second on the accelerator.
    pub ed_query_bases_per_s: f64,
    pub sram_bytes: u64,
    pub sram_peak_bytes: u64,
    pub sram_overflow: bool,
}

impl PerfReport {
    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned-column table, one row per stage plus the total.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<11} {:>15} {:>15} {:>15} {:>13} {:>17} {:>17} {:>8} {:>8}",
            "stage",
            "core_cycles",
            "accel_cycles",
            "macs",
            "dp_cells",
            "energy_core_pj",
            "energy_accel_pj",
            "speedup",
            "e_ratio"
        );
        for s in self.stages.iter().chain(std::iter::once(&self.total)) {
            let _ = writeln!(
                out,
                "{:<11} {:>15} {:>15} {:>15} {:>13} {:>17.1} {:>17.1} {:>8.2} {:>8.2}",
                s.stage,
                s.core_cycles,
                s.accel_cycles,
                s.macs,
                s.dp_cells,
                s.energy_core_pj,
                s.energy_accel_pj,
                s.speedup,
                s.energy_ratio
            );
        }
        let _ = writeln!(out, "avg_power_w      {:.6}", self.avg_power_w);
        let _ = writeln!(out, "ed_bases_per_s   {:.0}", self.ed_query_bases_per_s);
        let _ = writeln!(
            out,
            "sram_peak_bytes  {} / {}{}",
            self.sram_peak_bytes,
            self.sram_bytes,
            if self.sram_overflow { " OVERFLOW" } else { "" }
        );
        out
    }
}

pub const STAGE_BASECALLER: &str = "basecaller";
pub const STAGE_ALIGNMENT: &str = "alignment";

pub fn perf_report(trace: &WorkloadTrace, working_sets: &[WorkingSet], cfg: &SocConfig) -> Result<PerfReport> {
    cfg.validate()?;
    let e = &cfg.energy_pj;

    let mut bc = StageReport::new(STAGE_BASECALLER);
    for g in trace.gemm_ops() {
        let macs = (g.m * g.k * g.n) as u64;
        bc.core_cycles += g.count * core_gemm_cycles(g.m, g.k, g.n, &cfg.core);
        bc.accel_cycles += g.count * systolic_cycles(g.m, g.k, g.n, &cfg.systolic);
        bc.macs += g.count * macs;
        bc.scratchpad_bytes += g.count * scratchpad_bytes(g.m, g.k, g.n, &cfg.systolic);
    }
    bc.energy_core_pj = bc.macs as f64 * e.core_mac;
    bc.energy_accel_pj = bc.macs as f64 * e.mat_mac + bc.scratchpad_bytes as f64 * e.scratchpad_byte;

    let mut al = StageReport::new(STAGE_ALIGNMENT);
    for op in trace.ed_ops() {
        let (core, accel) = ed_cycles(op.n, op.m, &cfg.ed);
        al.core_cycles += op.count * core;
        al.accel_cycles += op.count * accel;
        al.dp_cells += op.count * (op.n * op.m) as u64;
    }
    al.energy_core_pj = al.core_cycles as f64 * e.core_cycle;
    al.energy_accel_pj = al.dp_cells as f64 * e.ed_cell;

    let stages = vec![bc.finish(), al.finish()];
    let mut total = StageReport::new("total");
    for s in &stages {
        total.core_cycles += s.core_cycles;
        total.accel_cycles += s.accel_cycles;
        total.macs += s.macs;
        total.dp_cells += s.dp_cells;
        total.scratchpad_bytes += s.scratchpad_bytes;
        total.energy_core_pj += s.energy_core_pj;
        total.energy_accel_pj += s.energy_accel_pj;
    }
    let total = total.finish();
    let accel_seconds = total.accel_cycles as f64 / cfg.clock_hz;
    let al_seconds = stages[1].accel_cycles as f64 / cfg.clock_hz;
    let sram = sram_check(working_sets, cfg);
    Ok(PerfReport {
        clock_hz: cfg.clock_hz,
        speedup: total.speedup,
        energy_ratio: total.energy_ratio,
        avg_power_w: ratio(total.energy_accel_pj * 1e-12, accel_seconds),
        ed_query_bases_per_s: ratio(trace.ed_query_bases() as f64, al_seconds),
        sram_bytes: cfg.sram_bytes,
        sram_peak_bytes: sram.peak_bytes(),
        sram_overflow: !sram.fits(),
        stages,
        total,
    })
}

/// Buffers one stage keeps resident at the same time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingSet {
    pub stage: String,
    pub items: Vec<(String, u64)>,
}

impl WorkingSet {
    pub fn bytes(&self) -> u64 {
        self.items.iter().map(|(_, b)| b).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightPrecision {
    Float32,
    Int8,
}

/// Basecaller residency: weights at the given precision plus an
/// activation buffer. Int8 layers also keep their `f32` bias and scale.
pub fn basecaller_working_set(spec: &CnnSpec, precision: WeightPrecision, activation_bytes: u64) -> WorkingSet {
    let weights: u64 = spec
        .layers
        .iter()
        .map(|l| match precision {
            WeightPrecision::Float32 => 4 * l.param_count() as u64,
            WeightPrecision::Int8 => l.weight_count() as u64 + 4 * l.c_out as u64 + 4,
        })
        .sum();
    WorkingSet {
        stage: STAGE_BASECALLER.into(),
        items: vec![
            ("weights".into(), weights),
            ("activations".into(), activation_bytes),
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "status")]
pub enum SramCheck {
    Fits { peak_bytes: u64 },
    Overflow { peak_bytes: u64, excess_bytes: u64 },
}

impl SramCheck {
    pub fn fits(&self) -> bool {
        matches!(self, SramCheck::Fits { .. })
    }

    pub fn peak_bytes(&self) -> u64 {
        match *self {
            SramCheck::Fits { peak_bytes } | SramCheck::Overflow { peak_bytes, .. } => peak_bytes,
        }
    }
}

/// Stages run one at a time, so the peak is the largest single working set.
pub fn sram_check(working_sets: &[WorkingSet], cfg: &SocConfig) -> SramCheck {
    let peak = working_sets.iter().map(WorkingSet::bytes).max().unwrap_or(0);
    if peak <= cfg.sram_bytes {
        SramCheck::Fits { peak_bytes: peak }
    } else {
        SramCheck::Overflow {
            peak_bytes: peak,
            excess_bytes: peak - cfg.sram_bytes,
        }
    }
}
