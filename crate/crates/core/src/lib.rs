//! Small-signal stability certification for interconnected power systems via
//! matrix-valued differential passivity indices.
//!
//! The library models a power network as a feedback interconnection between a
//! set of dynamic devices (synchronous generators and droop-controlled
//! inverters) and a static power-flow network. Each device gets a 2x2
//! passivity matrix computed in closed form from its parameters; the network
//! gets one matrix computed from the power-flow Jacobian at the operating
//! point. Positive definiteness of their sum certifies stability of the
//! interconnection — either centrally from the full matrices, or fully
//! distributed from scalar indices alone.
//!
//! The high-level entry points live in [`pipeline`]; the modules underneath
//! expose every intermediate artifact (admittance matrix, power flow,
//! Jacobians, passivity matrices, eigenvalue oracle, nonlinear simulation)
//! so each step can be inspected and tested in isolation.

pub mod case;
pub mod criteria;
pub mod devices;
pub mod error;
pub mod linalg;
pub mod network;
pub mod oracle;
pub mod pipeline;
pub mod sim;

pub use error::{Error, Result};
