//! Pipeline parameters and their `key value` text form.

use std::fmt;
use std::path::Path;

use crate::dynfilter::{ClassTaxonomy, Combiner, MovingObjectCriterion};
use crate::features::{FeatureConfig, MatchConfig};
use crate::geom::{EpipolarConfig, ResidualKind};
use crate::io;
use crate::pose::RansacConfig;
use crate::render::SelectConfig;

use super::PipelineError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// No mask handling, naive comparator (λ = 0).
    Baseline,
    /// Coverage-penalized comparator only.
    SelectOnly,
    /// Mask filtering with the naive comparator.
    FilterOnly,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::SelectOnly, Variant::FilterOnly, Variant::Full];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "baseline" => Some(Self::Baseline),
            "select_only" | "select-only" => Some(Self::SelectOnly),
            "filter_only" | "filter-only" => Some(Self::FilterOnly),
            "full" => Some(Self::Full),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::SelectOnly => "select_only",
            Self::FilterOnly => "filter_only",
            Self::Full => "full",
        }
    }

    pub fn filters_masks(self) -> bool {
        matches!(self, Self::FilterOnly | Self::Full)
    }

    pub fn penalizes_coverage(self) -> bool {
        matches!(self, Self::SelectOnly | Self::Full)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub retrieval_k: usize,
    pub top_t: usize,
    pub render_l: usize,
    pub gamma: f64,
    pub criterion: MovingObjectCriterion,
    /// λ applied by the coverage-penalizing variants.
    pub lambda: f64,
    pub epipolar: EpipolarConfig,
    pub ransac: RansacConfig,
    pub patch: usize,
    pub stride: usize,
    pub features: FeatureConfig,
    pub matching: MatchConfig,
    pub voxel_size: f64,
    pub truncation: f64,
    pub max_voxels: usize,
    pub taxonomy: ClassTaxonomy,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            retrieval_k: 10,
            top_t: 10,
            render_l: 10,
            gamma: 0.005,
            criterion: MovingObjectCriterion::default(),
            lambda: 1.0,
            epipolar: EpipolarConfig::default(),
            ransac: RansacConfig::default(),
            patch: 16,
            stride: 4,
            features: FeatureConfig::default(),
            matching: MatchConfig::default(),
            voxel_size: 0.05,
            truncation: 0.2,
            max_voxels: crate::mapstore::DEFAULT_MAX_VOXELS,
            taxonomy: ClassTaxonomy::default(),
            jobs: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value
        .parse()
        .map_err(|_| PipelineError::Config(format!("invalid value `{value}` for `{key}`")))
}

fn positive(key: &str, value: &str) -> Result<f64, PipelineError> {
    let v: f64 = parse(key, value)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(PipelineError::Config(format!("`{key}` must be positive, got {value}")))
    }
}

fn count(key: &str, value: &str) -> Result<usize, PipelineError> {
    let v: usize = parse(key, value)?;
    if v == 0 {
        return Err(PipelineError::Config(format!("`{key}` must be at least 1")));
    }
    Ok(v)
}

impl PipelineConfig {
    /// Keys accepted by [`PipelineConfig::set`].
    pub const KEYS: [&'static str; 28] = [
        "variant",
        "retrieval_k",
        "top_t",
        "render_l",
        "gamma",
        "delta",
        "combiner",
        "min_track_length",
        "lambda",
        "epipolar_residual",
        "epipolar_threshold",
        "ransac_threshold",
        "ransac_iters",
        "ransac_confidence",
        "lo_rounds",
        "seed",
        "patch",
        "stride",
        "max_keypoints",
        "match_ratio",
        "voxel_size",
        "truncation",
        "max_voxels",
        "taxonomy",
        "jobs",
        "nms_radius",
        "harris_k",
        "relative_threshold",
    ];

    /// Sets one parameter; dashes in `key` are read as underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let key = key.replace('-', "_");
        let k = key.as_str();
        match k {
            "variant" => {
                self.variant =
                    Variant::parse(value).ok_or_else(|| PipelineError::Config(format!("unknown variant `{value}`")))?
            }
            "retrieval_k" => self.retrieval_k = count(k, value)?,
            "top_t" => self.top_t = count(k, value)?,
            "render_l" => self.render_l = count(k, value)?,
            "gamma" => self.gamma = positive(k, value)?,
            "delta" => self.criterion.delta = positive(k, value)?,
            "combiner" => {
                self.criterion.combiner =
                    Combiner::parse(value).ok_or_else(|| PipelineError::Config(format!("unknown combiner `{value}`")))?
            }
            "min_track_length" => self.criterion.min_track_length = parse(k, value)?,
            "lambda" => {
                let v: f64 = parse(k, value)?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(PipelineError::Config(format!("`lambda` must be non-negative, got {value}")));
                }
                self.lambda = v;
            }
            "epipolar_residual" => {
                self.epipolar.residual_kind = match value {
                    "sampson" => ResidualKind::Sampson,
                    "algebraic" => ResidualKind::Algebraic,
                    _ => return Err(PipelineError::Config(format!("unknown residual `{value}`"))),
                }
            }
            "epipolar_threshold" => self.epipolar.threshold = positive(k, value)?,
            "ransac_threshold" => self.ransac.threshold = positive(k, value)?,
            "ransac_iters" => self.ransac.max_iters = count(k, value)?,
            "ransac_confidence" => {
                let v: f64 = parse(k, value)?;
                if !(v > 0.0 && v < 1.0) {
                    return Err(PipelineError::Config(format!("`ransac_confidence` must be in (0, 1), got {value}")));
                }
                self.ransac.confidence = v;
            }
            "lo_rounds" => self.ransac.lo_rounds = parse(k, value)?,
            "seed" => self.ransac.seed = parse(k, value)?,
            "patch" => self.patch = count(k, value)?,
            "stride" => self.stride = count(k, value)?,
            "max_keypoints" => self.features.max_keypoints = count(k, value)?,
            "nms_radius" => self.features.nms_radius = count(k, value)?,
            "harris_k" => self.features.harris_k = positive(k, value)? as f32,
            "relative_threshold" => self.features.relative_threshold = positive(k, value)? as f32,
            "match_ratio" => {
                let v = positive(k, value)?;
                if v > 1.0 {
                    return Err(PipelineError::Config(format!("`match_ratio` must be at most 1, got {value}")));
                }
                self.matching.ratio = v as f32;
            }
            "voxel_size" => self.voxel_size = positive(k, value)?,
            "truncation" => self.truncation = positive(k, value)?,
            "max_voxels" => self.max_voxels = count(k, value)?,
            "taxonomy" => {
                self.taxonomy = ClassTaxonomy::from_file(Path::new(value))
                    .map_err(|e| PipelineError::Config(format!("taxonomy: {e}")))?
            }
            "jobs" => self.jobs = parse(k, value)?,
            _ => return Err(PipelineError::Config(format!("unknown key `{key}`"))),
        }
        if self.criterion.min_track_length < 2 {
            return Err(PipelineError::Config("`min_track_length` must be at least 2".into()));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.ransac.seed
    }

    /// Reads `key value` lines; `#` starts a comment.
    pub fn load_file(&mut self, path: &Path) -> Result<(), PipelineError> {
        for (line, key, value) in io::read_key_values(path)? {
            self.set(&key, &value)
                .map_err(|e| PipelineError::Config(format!("{}:{line}: {e}", path.display())))?;
        }
        Ok(())
    }

    /// λ actually applied for the configured variant.
    pub fn effective_lambda(&self) -> f64 {
        if self.variant.penalizes_coverage() {
            self.lambda
        } else {
            0.0
        }
    }

    pub fn select_config(&self) -> SelectConfig {
        SelectConfig {
            render_l: self.render_l,
            patch: self.patch,
            stride: self.stride,
            lambda: self.effective_lambda(),
            keep_renders: false,
        }
    }

    /// Parameters that determine the offline map, in a stable text form.
    pub fn map_fingerprint(&self) -> String {
        let f = &self.features;
        let mut s = format!(
            "voxel_size {}\ntruncation {}\nmax_voxels {}\nretrieval_k {}\nepipolar {:?} {}\nmatch_ratio {}\n\
             features {} {} {} {} {} {} {} {}\ngamma {}\n",
            self.voxel_size,
            self.truncation,
            self.max_voxels,
            self.retrieval_k,
            self.epipolar.residual_kind,
            self.epipolar.threshold,
            self.matching.ratio,
            f.max_keypoints,
            f.nms_radius,
            f.harris_k,
            f.relative_threshold,
            f.absolute_threshold,
            f.smoothing_sigma,
            f.integration_sigma,
            f.patch,
            self.gamma,
        );
        for (class, layer) in self.taxonomy.entries() {
            s.push_str(&format!("class {class} {}\n", layer.name()));
        }
        s
    }
}
