//! Memory output-feedback synthesis for interval type-2 Takagi–Sugeno fuzzy
//! systems under dynamic event triggering, fading channels and actuator
//! failures, with a closed-loop simulator to check the designs.

extern crate openblas_src;

pub mod channel;
pub mod config;
pub mod controller;
pub mod expr;
pub mod fixtures;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod sim;
pub mod study;
pub mod synth;
pub mod trigger;

pub use channel::{fade_packet, sample_fade, FadingConfig, FadingFamily, SpreadMeaning};
pub use config::{Case, ConfigError, ToolkitConfig};
pub use controller::{apply_failure, ControllerGains, FailureConfig};
pub use expr::{parse, Expr};
pub use lmi::{LmiProgram, OmegaMode, SynthesisGivens};
pub use model::{IT2Plant, MembershipSpec};
pub use sim::{ClosedLoopScenario, SimTrace};
pub use study::{DesignFile, SweepCell};
pub use synth::{DesignProblem, DesignResult, DesignStatus, Method, SdpBackend};
pub use trigger::{TriggerConfig, TriggerState};
