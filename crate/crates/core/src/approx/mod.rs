//! Numeric building blocks shared by the learners and the regularizer:
//! dense networks with reverse-mode gradients, the Adam optimizer, and a
//! fixed-step RK4 integrator with its adjoint.

mod adam;
mod net;
mod ode;

pub use adam::AdamState;
pub use net::{Activation, DenseNet, NetGradient, Tape};
pub use ode::{OdeStepper, OdeSystem};
