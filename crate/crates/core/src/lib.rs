//! Receding-horizon MILP control of a shared autonomous electric vehicle
//! fleet that also backs up a critical building during grid outages.

pub mod analytics;
pub mod config;
pub mod demand;
pub mod fixtures;
pub mod milp;
pub mod mpc;
pub mod par;
pub mod resilience;
pub mod scenario;
pub mod solver;
pub mod state;
