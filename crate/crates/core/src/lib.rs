//! Sample-accurate simulation of distributed multichannel active noise
//! control networks.
//!
//! Each of the `K` nodes owns a loudspeaker, an error microphone and an FIR
//! control filter driven by a common reference signal. The crate provides the
//! centralized multiple-error FxLMS baseline, the per-sample mixed-gradient
//! distributed variant, and the weight-constrained variants that only talk to
//! each other when their residual noise level gets worse (synchronously or
//! asynchronously), together with the scene synthesis, compensation filter
//! training and evaluation tooling needed to compare them.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`). The
//! `*64` aliases at the crate root name the double-precision instantiations
//! used by the command-line runner.
//!
//! ```
//! use dmcanc::{run_scenario, Algorithm, AlgorithmConfig, SimConfig};
//!
//! let mut config: SimConfig = toml_like_defaults();
//! config.run = AlgorithmConfig::new(Algorithm::Acdmcanc, 1e-3, 20.0);
//! let log = run_scenario::<f64>(&config).unwrap();
//! assert_eq!(log.samples(), 1600);
//! # fn toml_like_defaults() -> SimConfig {
//! #     SimConfig {
//! #         fs: 16000.0, nodes: 2, control_len: 16, compensation_len: 5, duration_s: 0.1,
//! #         anse_window: 500, trace_stride: 100,
//! #         scene: Default::default(), noise: Default::default(),
//! #         run: AlgorithmConfig::new(Algorithm::Off, 1e-3, 0.0),
//! #     }
//! # }
//! ```

// Indexed loops mirror the filter equations; `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod archive;
pub mod compensation;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod protocol;
pub mod report;
pub mod scalar;
pub mod scene;
pub mod signal;

pub use adaptive::{ControlFilterState, FilteredReferenceBank};
pub use compensation::{apply_compensation, estimate_compensation, CompensationSet};
pub use error::{Error, Result};
pub use harness::{
    prepare, run_scenario, run_with, Algorithm, AlgorithmConfig, NoiseConfig, NoiseKindConfig, PerNode, SceneConfig,
    SceneSource, SimConfig, Simulation,
};
pub use metrics::{anse, power_spectrum, RunLog};
pub use protocol::{CommEvent, EventTag, PolicyKind, TransmitterReset, TriggerMonitor};
pub use scalar::Real;
pub use scene::{factorable_scene, synthesize_scene, AcousticScene, PathMatrix, PathSynthesisSpec};
pub use signal::{ImpulseResponse, NoiseSource, TappedDelayLine};

pub type ImpulseResponse64 = ImpulseResponse<f64>;
pub type Scene64 = AcousticScene<f64>;
pub type CompensationSet64 = CompensationSet<f64>;
pub type ControlFilter64 = ControlFilterState<f64>;
pub type RunLog64 = RunLog<f64>;
pub type Scene32 = AcousticScene<f32>;
pub type RunLog32 = RunLog<f32>;
