pub mod game;
pub mod nn;
pub mod env;
pub mod marl;
pub mod pruning;
pub mod harness;
