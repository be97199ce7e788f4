//! The dimension-gated network: configuration, parameters, float
//! inference, operation accounting, and the weight file format.

pub mod config;
pub mod count;
pub mod forward;
pub mod io;
pub mod weights;

pub use config::GateCnnConfig;
pub use count::{axis_taps, flop_count, mac_count, param_count, stage_ops, StageOps};
pub use forward::{forward, predict, ForwardTrace};
pub use io::{load_weights, save_weights, weights_from_bytes, weights_to_bytes};
pub use weights::{expected_extents, ModelWeights, WEIGHT_NAMES};
