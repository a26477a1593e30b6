//! Synthetic RGB-D datasets with ground truth: procedural rooms, sweep
//! cutouts for the database, and query views with movable objects.

mod dataset;
mod sampling;
mod scene;
mod texture;

use thiserror::Error;

use crate::io::IoError;

pub use dataset::{
    generate_dataset, place_query_objects, plan_dataset, render_scene, render_textured, surface_point, write_dataset,
    DatasetConfig, DatasetPlan, DatasetSummary, QuerySpec, RenderedImage,
};
pub use sampling::{
    sample_query_poses, sample_sweep_centers, sample_sweep_poses, view_pose, CutoutSampling, CAMERA_CLEARANCE,
};
pub use scene::{
    generate_scene, Aabb, Instance, MovableSpec, Scene, SceneSpec, Shape, ShapeKind, PLACEMENT_ATTEMPTS,
};
pub use texture::Material;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("could not place {class_name} after {attempts} attempts")]
    PlacementFailure { class_name: String, attempts: usize },
    #[error("free space holds only {placed} of {requested} camera positions")]
    InsufficientFreeSpace { placed: usize, requested: usize },
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] IoError),
}
