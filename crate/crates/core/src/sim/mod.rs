//! Deterministic differential-drive simulator of the MIRTO robot and the
//! ASIP device emulator built on it.

pub mod clock;
pub mod emulator;
pub mod harness;
pub mod physics;
pub mod world;

pub use clock::VirtualClock;
pub use emulator::{
    run_emulator, BumpOverride, Emulator, EmulatorError, EmulatorOptions, EmulatorReport, MotorCommand, Pacing,
};
pub use physics::{bump_contacts, ir_coverage, sample_ir, step_sim, ConfigError, RobotState, SimConfig};
pub use world::{Point, Pose, Segment, Track, WorldError, WorldModel};
