//! Offline map: TSDF fusion, surface extraction and the sparse model.

mod marching_cubes;
mod mc_tables;
mod sparse;
mod tsdf;

use thiserror::Error;

use crate::geom::{CameraIntrinsics, GeomError, Pose};
use crate::io::IoError;
use crate::raster::{DepthMap, RgbImage};

pub use marching_cubes::extract_mesh;
pub use sparse::{
    build_sparse_model, build_sparse_model_from_features, retrieval_pairs, ImageFeatures, SparseConfig, SparseModel,
    Visibility, NO_POINT,
};
pub use tsdf::{fuse_tsdf, fuse_tsdf_with_budget, TsdfVolume, DEFAULT_MAX_VOXELS};

#[derive(Debug, Error)]
pub enum MapError {
    #[error("no images to fuse")]
    NoImages,
    #[error("volume {dims:?} exceeds the budget of {budget} voxels")]
    VolumeTooLarge { dims: [usize; 3], budget: usize },
    #[error("volume has no observed voxels")]
    EmptyVolume,
    #[error("invalid map parameters: {0}")]
    InvalidParameters(String),
    #[error("image {id}: {msg}")]
    InvalidImage { id: String, msg: String },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// One posed RGB-D database image.
#[derive(Clone, Debug, PartialEq)]
pub struct MapImage {
    pub id: String,
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
}

impl MapImage {
    pub fn new(id: String, rgb: RgbImage, depth: DepthMap, pose: Pose, intrinsics: CameraIntrinsics) -> Result<Self, MapError> {
        if !rgb.same_size(&depth) {
            return Err(MapError::InvalidImage {
                id,
                msg: format!("rgb {}x{} vs depth {}x{}", rgb.width(), rgb.height(), depth.width(), depth.height()),
            });
        }
        if rgb.width() != intrinsics.width as usize || rgb.height() != intrinsics.height as usize {
            return Err(MapError::InvalidImage {
                id,
                msg: "image size differs from intrinsics".into(),
            });
        }
        if depth.data().iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(MapError::InvalidImage {
                id,
                msg: "negative or non-finite depth".into(),
            });
        }
        Ok(Self {
            id,
            rgb,
            depth,
            pose,
            intrinsics,
        })
    }
}
