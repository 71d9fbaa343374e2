//! Solver and verification library for finite multiplayer stochastic games.

pub mod corpus;
pub mod detect;
pub mod error;
pub mod game;
pub mod lp;
pub mod martin;
pub mod mediator;
pub mod nash;
pub mod oneshot;
pub mod oracle;
pub mod report;
pub mod solvable;
pub mod strategy;
pub mod synth;
pub mod values;
