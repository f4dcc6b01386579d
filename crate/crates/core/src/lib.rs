//! Discrete-event simulation and analytic loss model of a LoRaWAN network in
//! which the server coordinates urgent uplinks through downlink control
//! packets (DCPs) sent in reply to periodic regular packets (RPs).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod device;
pub mod engine;
pub mod gateway;
pub mod metrics;
pub mod phy;
pub mod rng;
pub mod scenario;
pub mod sensor;
pub mod server;
pub mod sim;
pub mod time;
pub mod units;

pub use time::{SimDuration, SimTime};
