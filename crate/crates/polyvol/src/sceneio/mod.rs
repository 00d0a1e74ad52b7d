//! Scene ingestion and serialization: COLMAP text reconstructions, PLY
//! checkpoints, image codecs, the raw depth-map format, and the
//! `section.key = value` configuration grammar.

pub mod colmap;
pub mod config;
pub mod images;
pub mod ply;

use crate::math::{Real, Vec3};
use crate::projection::CameraModel;

/// Shared intrinsics block from `cameras.txt`.
#[derive(Clone, Debug)]
pub struct Intrinsics {
    pub id: u64,
    pub model: String,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// One registered image: name plus a fully composed camera.
#[derive(Clone, Debug)]
pub struct View<T> {
    pub name: String,
    pub camera: CameraModel<T>,
}

/// A sparse reconstruction: views with cameras plus colored points.
#[derive(Clone, Debug)]
pub struct SfmScene<T> {
    pub intrinsics: Vec<Intrinsics>,
    pub views: Vec<View<T>>,
    pub points: Vec<Vec3<T>>,
    pub point_colors: Vec<Vec3<T>>,
}

impl<T: Real> SfmScene<T> {
    pub fn cameras(&self) -> Vec<CameraModel<T>> {
        self.views.iter().map(|v| v.camera.clone()).collect()
    }
}
