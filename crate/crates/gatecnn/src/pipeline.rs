//! First-order latency and throughput model of the streaming
//! accelerator pipeline.
//!
//! Each stage costs `ceil(macs / parallelism)` cycles of MAC work plus
//! one cycle per scalar op (activations, combines, pool comparisons),
//! plus a fixed fill overhead. The gate and content branches run
//! concurrently, so frame latency takes the slower of the two before
//! the combine stage. This is an analytical estimate with a documented
//! gap to silicon, not a cycle simulation.

use crate::error::{Error, Result};
use crate::model::{stage_ops, GateCnnConfig};

/// Cycle cost of one pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageCost {
    pub name: &'static str,
    pub mac_count: u64,
    /// One-cycle scalar ops: activations, combines, pool comparisons.
    pub elementwise_count: u64,
    /// Cycles between accepting consecutive frames.
    pub initiation_interval: u64,
    /// Cycles from first input to last output for one frame.
    pub stage_latency: u64,
}

/// Model knobs. `fill_cycles` is the fixed per-stage pipeline fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineParams {
    /// MACs retired per cycle within each stage.
    pub parallelism: u64,
    pub clock_hz: u64,
    pub fill_cycles: u64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self { parallelism: 1, clock_hz: 100_000_000, fill_cycles: 5 }
    }
}

/// Latency and throughput estimate for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub stages: Vec<StageCost>,
    pub total_latency_cycles: u64,
    pub clock_hz: u64,
    pub latency_seconds: f64,
    /// Sustained rate of a pipelined design: clock over the widest
    /// initiation interval.
    pub throughput_inf_per_s: f64,
    pub realtime_ok: bool,
}

/// Real-time budget for one inference.
pub const REALTIME_BUDGET_SECONDS: f64 = 0.020;

/// Measured accelerator datapoint: 107.5 microseconds at 100 MHz.
pub const REFERENCE_LATENCY_CYCLES: u64 = 10_750;

pub fn cycles_to_seconds(cycles: u64, clock_hz: u64) -> f64 {
    cycles as f64 / clock_hz as f64
}

/// Inferences per second when a new frame enters every `max_ii` cycles.
pub fn pipelined_throughput(max_ii: u64, clock_hz: u64) -> f64 {
    clock_hz as f64 / max_ii.max(1) as f64
}

fn path_latency(stages: &[StageCost], names: &[&str]) -> u64 {
    names
        .iter()
        .map(|want| {
            stages
                .iter()
                .find(|s| s.name == *want)
                .map(|s| s.stage_latency)
                .expect("stage present")
        })
        .sum()
}

/// Costs every stage and folds the concurrent gate/content branches
/// into the frame latency.
pub fn estimate(cfg: &GateCnnConfig, params: &PipelineParams) -> Result<PipelineReport> {
    cfg.validate()?;
    if params.parallelism == 0 {
        return Err(Error::Config("parallelism must be at least 1".into()));
    }
    if params.clock_hz == 0 {
        return Err(Error::Config("clock_hz must be nonzero".into()));
    }

    let stages: Vec<StageCost> = stage_ops(cfg)
        .into_iter()
        .map(|op| {
            let scalar_ops = op.elementwise + op.comparisons;
            let work = op.macs.div_ceil(params.parallelism) + scalar_ops;
            StageCost {
                name: op.name,
                mac_count: op.macs,
                elementwise_count: scalar_ops,
                initiation_interval: work,
                stage_latency: work + params.fill_cycles,
            }
        })
        .collect();

    let front = path_latency(&stages, &["fuse", "pool", "embed"]);
    let gate_path = path_latency(&stages, &["gate"]);
    let content_path = path_latency(&stages, &["content", "cascade1", "cascade2", "cascade3"]);
    let tail = path_latency(&stages, &["combine", "average", "classify"]);
    let total_latency_cycles = front + gate_path.max(content_path) + tail;

    let latency_seconds = cycles_to_seconds(total_latency_cycles, params.clock_hz);
    let max_ii = stages.iter().map(|s| s.initiation_interval).max().unwrap_or(0);
    Ok(PipelineReport {
        stages,
        total_latency_cycles,
        clock_hz: params.clock_hz,
        latency_seconds,
        throughput_inf_per_s: pipelined_throughput(max_ii, params.clock_hz),
        realtime_ok: latency_seconds < REALTIME_BUDGET_SECONDS,
    })
}

impl PipelineReport {
    /// Line-delimited stage table plus the totals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.stages {
            out.push_str(&format!(
                "stage={} macs={} elementwise={} ii={} latency={}\n",
                s.name, s.mac_count, s.elementwise_count, s.initiation_interval, s.stage_latency
            ));
        }
        out.push_str(&format!("total_latency_cycles={}\n", self.total_latency_cycles));
        out.push_str(&format!("clock_hz={}\n", self.clock_hz));
        out.push_str(&format!("latency_us={:.3}\n", self.latency_seconds * 1e6));
        out.push_str(&format!("throughput_inf_per_s={:.1}\n", self.throughput_inf_per_s));
        out.push_str(&format!("realtime_ok={}\n", self.realtime_ok));
        out
    }
}

/// One-line comparison of a report against the measured datapoint.
/// The ratio is cycles over cycles, so it does not move with clock_hz.
pub fn compare_to_reference(report: &PipelineReport) -> String {
    let ratio = report.total_latency_cycles as f64 / REFERENCE_LATENCY_CYCLES as f64;
    format!(
        "modeled {} cycles vs measured {} cycles (107.5 us at 100 MHz): ratio {:.2}",
        report.total_latency_cycles, REFERENCE_LATENCY_CYCLES, ratio
    )
}
