//! Dimension-gated CNN engine for radar micro-Doppler activity
//! recognition: float training and inference, a 32-bit fixed-point
//! inference path that mirrors a hardware accelerator, operation and
//! parameter accounting, a streaming-pipeline latency model, and a
//! synthetic data generator.

pub mod error;
pub mod fixed;
pub mod model;
pub mod pipeline;
pub mod quant;
pub mod scalar;
pub mod selftest;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use fixed::{FixedPointSpec, FixedScalar, Overflow, Rounding, WideAcc};
pub use model::{forward, predict, ForwardTrace, GateCnnConfig, ModelWeights};
pub use pipeline::{estimate, PipelineParams, PipelineReport, StageCost};
pub use quant::{
    audit_ranges, export_rom, forward_fixed, parse_rom, predict_fixed, quantize_model, QuantizedModel,
    RangeAudit,
};
pub use scalar::Real;
pub use selftest::{run_selftest, SelftestReport};
pub use synth::{MicroDopplerFrame, SynthSpec};
pub use tensor::{add, conv1d_time, conv2d, hadamard, maxpool2d, relu, Tensor, Tensor4};
pub use train::{backward, loss, train, EpochStats, Gradients, TrainConfig};

/// Single-precision tensor, the training default.
pub type Tensor32 = Tensor<f32>;
/// Double-precision tensor, used by gradient checks and calibration.
pub type Tensor64 = Tensor<f64>;
/// Single-precision weights.
pub type ModelWeights32 = ModelWeights<f32>;
/// Double-precision weights.
pub type ModelWeights64 = ModelWeights<f64>;
