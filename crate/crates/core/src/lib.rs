//! Core of the scenario forge: scenario data, unicycle dynamics with a
//! reverse-mode adjoint, an action-space diffusion model, guidance templates
//! with an adaptive guided sampler, and the closed-loop co-simulation harness
//! with collision, fault and criticality metrics.

pub mod diffusion;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod guidance;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
pub use geometry::Vec2;
pub use scenario::{Action, ActionLimits, AgentId, AgentState, AgentType, Scenario};
