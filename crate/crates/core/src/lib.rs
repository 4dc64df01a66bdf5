//! Motion planning for cinematographic drones.
//!
//! Viewpoints live on a safe surface of revolution around one or two targets
//! (the drone toric space). On top of it sit a feasible-orientation solver,
//! through-the-lens manipulators, a sphere roadmap with A* search, C4 quintic
//! smoothing, a path follower and a min-conflict multi-drone coordinator.

pub mod camera;
pub mod coordinator;
pub mod dts;
pub mod error;
pub mod follower;
pub mod geometry;
pub mod manipulators;
pub mod orientation;
pub mod planner;
pub mod roadmap;
pub mod smoother;

pub use error::{Error, Result};
pub use geometry::Vec3;
