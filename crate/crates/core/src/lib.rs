//! First-order robust policy evaluation for robust MDPs with s-rectangular
//! mixing ambiguity sets.
//!
//! The robust value of a fixed agent policy `ϑ` is recovered as the optimal
//! value of a "nature" MDP whose decisions are kernel perturbations. Nature's
//! policy is optimized by dual averaging with an entropic prox:
//!
//! * [`frpe`] uses an exact (or bounded-error) evaluation oracle and converges
//!   linearly;
//! * [`sfrpe`] uses stochastic evaluation, either simulator rollouts
//!   ([`sfrpe::se`]) or least-squares TD with linear features
//!   ([`sfrpe::slpe`]).
//!
//! [`oracle`] computes the same quantity by robust value iteration and is the
//! ground truth for every run.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ambiguity;
pub mod error;
pub mod frpe;
pub mod harness;
pub mod mdp;
pub mod oracle;
pub mod rng;
pub mod sfrpe;

pub use ambiguity::{AmbiguityDescriptor, AmbiguitySet, DgfSpec, ProxAccumulator};
pub use error::{Error, Result};
pub use mdp::{
    AgentPolicy, Distribution, Kernel, KernelSlice, NaturePolicy, RobustMdp, StateChainMatrix, ValidationReport,
    ValueVector,
};
pub use oracle::RobustBellmanResult;
