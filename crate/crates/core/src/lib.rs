//! Population Based Training and FIRE PBT over simulated training tasks.

pub mod binomial;
pub mod checkpoint;
pub mod curve;
pub mod gp;
pub mod population;
pub mod schedule;
pub mod task;
pub mod engine;
pub mod fire;
pub mod cli;
