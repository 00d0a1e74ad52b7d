//! Shared scene builders for integration tests (re-exported from the
//! library's fixtures module).

#![allow(unused_imports)]

pub use polyvol::fixtures::{axis_camera, dc_sh, jitter_scene, orbit_camera, random_scene, SceneParams};
