//! Demonstration-guided diffusion sampling of parallel-jaw grasps on SE(3).
//!
//! The crate is organized around a single pipeline:
//!
//! 1. [`scenes`] builds synthetic desk-scale objects with analytic surfaces,
//!    oracle-labeled stable grasps, and task demonstrations.
//! 2. [`network`] defines the noise-conditional score network (point-cloud
//!    encoder, gripper-point tokens, DiT backbone) together with exact
//!    reverse-mode gradients for its fixed architecture.
//! 3. [`diffusion`] trains the score model by denoising score matching and
//!    draws grasps with annealed Langevin sampling, optionally steered by
//!    closed-form demonstration constraints from [`constraints`].
//! 4. [`eval`] scores grasps with an analytic antipodal force-closure oracle
//!    and benchmarks guided single-stage sampling against the two-stage
//!    sample-then-filter baseline.
//!
//! Everything is deterministic given a seed: all randomness flows through
//! caller-supplied ChaCha streams and reductions run in a fixed order.

pub mod constraints;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod gripper;
pub mod lie;
pub mod network;
pub mod scenes;

pub use error::{Error, Result};
pub use gripper::GripperSpec;
pub use lie::{GraspPose, Rotation, Twist};
