//! Deterministic synthetic locomotion and IMU simulation.
//!
//! The gait generator drives the feet along explicit plant/swing
//! trajectories and solves the legs analytically, so ground contacts happen
//! exactly on a known schedule; the rest of the body follows phase-locked
//! sinusoids. [`simulate_imu`] differentiates a mounted point and segment
//! orientation to produce accelerometer and gyroscope readings.

mod gait;
mod imu;

pub use gait::{
    generate_gait, generate_mixed, generate_with_schedule, FlightEvent, GaitNoise, GaitSpec, GeneratedGait,
    MotionType,
};
pub use imu::{simulate_imu, ImuNoise, SensorMount, GRAVITY};
