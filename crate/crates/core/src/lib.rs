//! Classical and quantum simulation of a levitated nano-diamond whose embedded
//! electron spin is split into two arms by a nonlinear magnetic trap.
//!
//! The crate is organised bottom-up: [`physconst`] and [`field`] define the
//! physics, [`ode`] and [`dynamics`] integrate a single arm, [`protocol`]
//! chains stages for the paired arms, [`coherence`] turns closure errors into
//! field-accuracy budgets, [`quantum`] propagates a wavepacket on a grid and
//! [`analysis`] extracts the stage-I scaling laws.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod coherence;
pub mod dynamics;
pub mod error;
pub mod export;
pub mod field;
pub mod ode;
pub mod physconst;
pub mod protocol;
pub mod quantum;
pub mod roots;

pub use error::{Error, Result};
pub use field::FieldParams;
pub use physconst::{Constants, ParticleParams, Spin};
