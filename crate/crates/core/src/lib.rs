//! Core of the voxel bridge: simulated world, occupancy mapping, distance field,
//! planning, frame conversion, wire protocol, mesh assets and session metrics.

pub mod esdf;
pub mod frames;
pub mod geometry;
pub mod mesh;
pub mod metrics;
pub mod mission;
pub mod occupancy;
pub mod planner;
pub mod protocol;
pub mod sim;
pub mod world;

pub use geometry::{Aabb, Vec3};
