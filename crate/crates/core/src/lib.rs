//! Generalized planning over PDDL grid domains with sparse, goal-aware
//! graph-network policies.
//!
//! Pipeline: [`pddl`] parses domains and problems, [`grounding`] builds the
//! symbolic transition system, [`encoder`] turns states into graphs,
//! [`neural`] and [`agent`] score actions, [`training`] runs PPO with a
//! grid-size curriculum and [`search`] plans with the learned policy.

pub mod agent;
pub mod cli;
pub mod encoder;
pub mod grounding;
pub mod neural;
pub mod pddl;
pub mod search;
pub mod training;
pub mod worlds;
