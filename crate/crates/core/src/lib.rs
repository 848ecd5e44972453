//! Online estimation of accelerometer intrinsics and gravity direction from
//! IMU samples and externally supplied poses.

pub mod error;
pub mod estimator;
pub mod evaluate;
pub mod io;
pub mod map_gravity;
pub mod nlls;
pub mod odometry;
pub mod s2;
pub mod so3;
pub mod synth;

pub use error::{Error, Result};
