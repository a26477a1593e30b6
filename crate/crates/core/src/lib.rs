//! Visual localization against an RGB-D map with movable-object filtering.

pub mod dynfilter;
pub mod evalx;
pub mod features;
pub mod geom;
pub mod io;
pub mod mapstore;
pub mod mesh;
pub mod pipeline;
pub mod pose;
pub mod raster;
pub mod render;
pub mod retrieval;
pub mod synthgen;
