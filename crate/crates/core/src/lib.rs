//! Flow-based uniform trajectory sampling for sampling-based MPC.

pub mod dynamics;
pub mod env;
pub mod geom;
pub mod levelsets;
pub mod seeds;
pub mod flowpolicy;
pub mod metrics;
pub mod samplers;
pub mod controller;
pub mod bench;
