//! Provably efficient reinforcement learning in episodic MDPs whose
//! transitions follow a multinomial-logit model.
//!
//! The crate provides the transition model and exact planning ([`mdp`]),
//! regularized maximum-likelihood and online mirror-descent estimators with
//! matching confidence sets ([`mle`], [`omd`]), optimistic value backups
//! ([`planner`]), three ready-made agents ([`agent`]), instance generators
//! ([`envs`]) and a reproducible experiment harness ([`harness`]).

pub mod agent;
pub mod envs;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod mle;
pub mod numdiff;
pub mod omd;
pub mod planner;
pub mod rng;

pub use error::{Error, Result};
pub use mdp::{MnlMdp, Policy, Trajectory};

/// Crate version recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
