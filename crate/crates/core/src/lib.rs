//! Iterative consistency training on analytically tractable targets.

pub mod cli;
pub mod consistency;
pub mod error;
pub mod forward;
pub mod harness;
pub mod pf_ode;
pub mod report;
pub mod rng;
pub mod sample;
pub mod schedule;
pub mod score;
pub mod targets;
pub mod theory_check;
pub mod transport;

pub use error::{Error, Result};
pub use sample::EmpiricalSample;
pub use schedule::Schedule;
pub use targets::Target;
