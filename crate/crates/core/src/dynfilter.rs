//! Instance-mask taxonomy (static / dynamic / unknown), small-mask and
//! moving-object reassignment, and static-only match filtering.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector2;
use thiserror::Error;

use crate::features::{Keypoint, Match};
use crate::io::{self, IoError};
use crate::raster::{BinaryMask, LabelImage, Raster};

#[derive(Debug, Error)]
pub enum DynFilterError {
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("invalid moving-object criterion: {0}")]
    InvalidCriterion(String),
    #[error("{path}:{line}: unknown layer `{layer}`")]
    UnknownLayer { path: String, line: usize, layer: String },
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Layer {
    Static,
    Dynamic,
    Unknown,
}

impl Layer {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "static" => Some(Self::Static),
            "dynamic" => Some(Self::Dynamic),
            "unknown" => Some(Self::Unknown),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Static => "static",
            Self::Dynamic => "dynamic",
            Self::Unknown => "unknown",
        }
    }

    /// Painting priority when instances overlap; higher wins.
    fn priority(self) -> u8 {
        match self {
            Self::Static => 0,
            Self::Unknown => 1,
            Self::Dynamic => 2,
        }
    }
}

/// Class name to layer. Unmapped classes are unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassTaxonomy {
    map: BTreeMap<String, Layer>,
}

impl Default for ClassTaxonomy {
    fn default() -> Self {
        let mut map = BTreeMap::new();
        for c in ["background", "tv", "refrigerator"] {
            map.insert(c.to_string(), Layer::Static);
        }
        map.insert("person".to_string(), Layer::Dynamic);
        Self { map }
    }
}

impl ClassTaxonomy {
    pub fn empty() -> Self {
        Self { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, class: &str, layer: Layer) {
        self.map.insert(class.to_ascii_lowercase(), layer);
    }

    pub fn layer_of(&self, class: &str) -> Layer {
        self.map
            .get(&class.to_ascii_lowercase())
            .copied()
            .unwrap_or(Layer::Unknown)
    }

    /// Lines `class_name static|dynamic|unknown`, layered over the defaults.
    pub fn from_file(path: &Path) -> Result<Self, DynFilterError> {
        let mut tax = Self::default();
        for (line, class, layer) in io::read_key_values(path)? {
            let l = Layer::parse(&layer).ok_or_else(|| DynFilterError::UnknownLayer {
                path: path.display().to_string(),
                line,
                layer: layer.clone(),
            })?;
            tax.insert(&class, l);
        }
        Ok(tax)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, Layer)> {
        self.map.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskInstance {
    pub id: u16,
    pub class_name: String,
    pub layer: Layer,
    pub pixel_count: usize,
}

/// Per-image partition into static, dynamic and unknown layers. Label 0 is
/// background and always static; every other label refers to one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    labels: LabelImage,
    instances: Vec<MaskInstance>,
    /// Dense lookup from label to instance index.
    lookup: Vec<u32>,
}

const NO_INSTANCE: u32 = u32::MAX;

impl MaskSet {
    pub fn empty(width: usize, height: usize) -> Self {
        Self::from_parts(Raster::new(width, height, 0), Vec::new())
    }

    fn from_parts(labels: LabelImage, instances: Vec<MaskInstance>) -> Self {
        let max_id = instances.iter().map(|i| i.id as usize).max().unwrap_or(0);
        let mut lookup = vec![NO_INSTANCE; max_id + 1];
        for (k, inst) in instances.iter().enumerate() {
            lookup[inst.id as usize] = k as u32;
        }
        Self {
            labels,
            instances,
            lookup,
        }
    }

    /// Builds from an instance-label raster and an `id -> class` table.
    /// Labels missing from the table get class `unlabeled` (unknown layer).
    pub fn from_labels(labels: LabelImage, classes: &[(u16, String)], taxonomy: &ClassTaxonomy) -> Self {
        let table: BTreeMap<u16, &str> = classes.iter().map(|(i, c)| (*i, c.as_str())).collect();
        let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
        for &l in labels.data() {
            if l != 0 {
                *counts.entry(l).or_default() += 1;
            }
        }
        let instances = counts
            .into_iter()
            .map(|(id, pixel_count)| {
                let class_name = table.get(&id).copied().unwrap_or("unlabeled").to_string();
                MaskInstance {
                    id,
                    layer: taxonomy.layer_of(&class_name),
                    class_name,
                    pixel_count,
                }
            })
            .collect();
        Self::from_parts(labels, instances)
    }

    /// Rasterizes overlapping binary instance masks with priority
    /// dynamic > unknown > static; later instances win ties.
    pub fn compose(
        width: usize,
        height: usize,
        parts: &[(u16, String, BinaryMask)],
        taxonomy: &ClassTaxonomy,
    ) -> Result<Self, DynFilterError> {
        let mut labels: LabelImage = Raster::new(width, height, 0);
        let mut order: Vec<usize> = (0..parts.len()).collect();
        order.sort_by_key(|&k| (taxonomy.layer_of(&parts[k].1).priority(), k));
        for k in order {
            let (id, _, mask) = &parts[k];
            if mask.width() != width || mask.height() != height {
                return Err(DynFilterError::DimensionMismatch(mask.width(), mask.height(), width, height));
            }
            for (l, &m) in labels.data_mut().iter_mut().zip(mask.data()) {
                if m {
                    *l = *id;
                }
            }
        }
        let classes: Vec<(u16, String)> = parts.iter().map(|(i, c, _)| (*i, c.clone())).collect();
        Ok(Self::from_labels(labels, &classes, taxonomy))
    }

    /// Reads `<id>.mask.png` and its class table from `dir`; a missing mask
    /// file yields an empty set of the given size.
    pub fn load(dir: &Path, id: &str, taxonomy: &ClassTaxonomy, width: usize, height: usize) -> Result<Self, DynFilterError> {
        let (png, table) = io::mask_paths(dir, id);
        if !png.exists() {
            return Ok(Self::empty(width, height));
        }
        let labels = io::read_label_png(&png)?;
        if labels.width() != width || labels.height() != height {
            return Err(DynFilterError::DimensionMismatch(labels.width(), labels.height(), width, height));
        }
        let classes = if table.exists() { io::read_class_table(&table)? } else { Vec::new() };
        Ok(Self::from_labels(labels, &classes, taxonomy))
    }

    pub fn width(&self) -> usize {
        self.labels.width()
    }

    pub fn height(&self) -> usize {
        self.labels.height()
    }

    pub fn labels(&self) -> &LabelImage {
        &self.labels
    }

    pub fn instances(&self) -> &[MaskInstance] {
        &self.instances
    }

    pub fn instance(&self, id: u16) -> Option<&MaskInstance> {
        let k = *self.lookup.get(id as usize)?;
        (k != NO_INSTANCE).then(|| &self.instances[k as usize])
    }

    pub fn class_table(&self) -> Vec<(u16, String)> {
        self.instances.iter().map(|i| (i.id, i.class_name.clone())).collect()
    }

    #[inline]
    fn layer_of_label(&self, label: u16) -> Layer {
        if label == 0 {
            return Layer::Static;
        }
        match self.lookup.get(label as usize) {
            Some(&k) if k != NO_INSTANCE => self.instances[k as usize].layer,
            _ => Layer::Static,
        }
    }

    #[inline]
    pub fn layer_at_pixel(&self, x: usize, y: usize) -> Layer {
        self.layer_of_label(*self.labels.get(x, y))
    }

    /// Layer at a continuous position; `None` outside the image.
    pub fn layer_at(&self, position: &Vector2<f64>) -> Option<Layer> {
        self.labels.value_at(position).map(|&l| self.layer_of_label(l))
    }

    /// Label raster of one layer (0 elsewhere; background is reported as 0).
    pub fn layer_labels(&self, layer: Layer) -> LabelImage {
        self.labels
            .map(|&l| if l != 0 && self.layer_of_label(l) == layer { l } else { 0 })
    }

    pub fn layer_mask(&self, layer: Layer) -> BinaryMask {
        self.labels.map(|&l| self.layer_of_label(l) == layer)
    }

    pub fn static_layer(&self) -> LabelImage {
        self.layer_labels(Layer::Static)
    }

    pub fn dynamic_layer(&self) -> LabelImage {
        self.layer_labels(Layer::Dynamic)
    }

    pub fn unknown_layer(&self) -> LabelImage {
        self.layer_labels(Layer::Unknown)
    }

    /// Union of dynamic and unknown instances.
    pub fn movable_mask(&self) -> BinaryMask {
        self.labels.map(|&l| self.layer_of_label(l) != Layer::Static)
    }

    /// Fraction of pixels covered by any instance.
    pub fn occupancy(&self) -> f64 {
        let n = self.labels.data().iter().filter(|&&l| l != 0).count();
        n as f64 / self.labels.len().max(1) as f64
    }

    /// Partition check: every nonzero label has exactly one instance whose
    /// pixel count matches the raster.
    pub fn is_consistent(&self) -> bool {
        let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
        for &l in self.labels.data() {
            if l != 0 {
                *counts.entry(l).or_default() += 1;
            }
        }
        let mut ids: Vec<u16> = self.instances.iter().map(|i| i.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.instances.len() {
            return false;
        }
        counts.len() <= self.instances.len()
            && counts.iter().all(|(id, n)| self.instance(*id).map(|i| i.pixel_count) == Some(*n))
            && self.instances.iter().all(|i| counts.get(&i.id).copied().unwrap_or(0) == i.pixel_count)
    }

    /// Same labels with each instance's layer replaced by `f(instance)`.
    pub fn with_layers(&self, f: impl Fn(&MaskInstance) -> Layer) -> Self {
        let instances = self
            .instances
            .iter()
            .map(|i| MaskInstance { layer: f(i), ..i.clone() })
            .collect();
        Self {
            labels: self.labels.clone(),
            instances,
            lookup: self.lookup.clone(),
        }
    }
}

/// Unknown instances smaller than `gamma · W · H` move to the static layer.
pub fn reassign_small_masks(masks: &MaskSet, gamma: f64) -> MaskSet {
    let limit = gamma * (masks.width() * masks.height()) as f64;
    masks.with_layers(|i| {
        if i.layer == Layer::Unknown && (i.pixel_count as f64) < limit {
            Layer::Static
        } else {
            i.layer
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Combiner {
    /// β = g − num_px
    PaperDifference,
    /// β = g / num_px
    #[default]
    DensityRatio,
}

impl Combiner {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "paper_difference" | "difference" => Some(Self::PaperDifference),
            "density_ratio" | "ratio" => Some(Self::DensityRatio),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::PaperDifference => "paper_difference",
            Self::DensityRatio => "density_ratio",
        }
    }

    pub fn combine(self, g: usize, num_px: usize) -> f64 {
        match self {
            Self::PaperDifference => g as f64 - num_px as f64,
            Self::DensityRatio => {
                if num_px == 0 {
                    0.0
                } else {
                    g as f64 / num_px as f64
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MovingObjectCriterion {
    pub combiner: Combiner,
    pub delta: f64,
    pub min_track_length: usize,
}

impl Default for MovingObjectCriterion {
    fn default() -> Self {
        Self {
            combiner: Combiner::DensityRatio,
            delta: 1e-9,
            min_track_length: 3,
        }
    }
}

impl MovingObjectCriterion {
    pub fn validate(&self) -> Result<(), DynFilterError> {
        if !(self.delta > 0.0) {
            return Err(DynFilterError::InvalidCriterion(format!("delta {} must be > 0", self.delta)));
        }
        if self.min_track_length < 2 {
            return Err(DynFilterError::InvalidCriterion("min_track_length must be >= 2".into()));
        }
        Ok(())
    }
}

/// One keypoint observation considered by the β criterion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub position: Vector2<f64>,
    /// Length of the map track through this keypoint (0 when untracked).
    pub track_length: usize,
    /// Whether the keypoint takes part in a correspondence with the query.
    pub matched_to_query: bool,
}

/// Number of qualifying observations inside instance `id`.
pub fn count_qualifying(masks: &MaskSet, id: u16, observations: &[Observation], min_track_length: usize) -> usize {
    observations
        .iter()
        .filter(|o| o.matched_to_query && o.track_length >= min_track_length)
        .filter(|o| masks.labels().value_at(&o.position) == Some(&id))
        .count()
}

/// β for one instance.
pub fn moving_object_score(
    instance: &MaskInstance,
    masks: &MaskSet,
    observations: &[Observation],
    crit: &MovingObjectCriterion,
) -> f64 {
    let g = count_qualifying(masks, instance.id, observations, crit.min_track_length);
    crit.combiner.combine(g, instance.pixel_count)
}

/// β for every unknown instance, in one pass over the observations.
pub fn unknown_betas(masks: &MaskSet, observations: &[Observation], crit: &MovingObjectCriterion) -> BTreeMap<u16, f64> {
    let mut g: BTreeMap<u16, usize> = masks
        .instances()
        .iter()
        .filter(|i| i.layer == Layer::Unknown)
        .map(|i| (i.id, 0))
        .collect();
    for o in observations {
        if !o.matched_to_query || o.track_length < crit.min_track_length {
            continue;
        }
        if let Some(&l) = masks.labels().value_at(&o.position) {
            if let Some(c) = g.get_mut(&l) {
                *c += 1;
            }
        }
    }
    g.into_iter()
        .map(|(id, count)| {
            let px = masks.instance(id).map(|i| i.pixel_count).unwrap_or(0);
            (id, crit.combiner.combine(count, px))
        })
        .collect()
}

/// Unknown instances with β > δ become static, all others dynamic. An
/// unknown instance without a β is treated as dynamic.
pub fn reassign_unknown_masks(masks: &MaskSet, betas: &BTreeMap<u16, f64>, delta: f64) -> MaskSet {
    masks.with_layers(|i| match i.layer {
        Layer::Unknown => match betas.get(&i.id) {
            Some(&b) if b > delta => Layer::Static,
            _ => Layer::Dynamic,
        },
        l => l,
    })
}

/// Keeps matches whose endpoints both lie on the static layer.
pub fn filter_matches(
    matches: &[Match],
    masks_a: &MaskSet,
    masks_b: &MaskSet,
    keypoints_a: &[Keypoint],
    keypoints_b: &[Keypoint],
) -> Vec<Match> {
    matches
        .iter()
        .filter(|m| {
            masks_a.layer_at(&keypoints_a[m.idx_a].position) == Some(Layer::Static)
                && masks_b.layer_at(&keypoints_b[m.idx_b].position) == Some(Layer::Static)
        })
        .copied()
        .collect()
}

/// Pixel agreement of the dynamic / non-dynamic binarization.
pub fn mask_accuracy(predicted: &MaskSet, ground_truth: &MaskSet) -> Result<f64, DynFilterError> {
    if !predicted.labels.same_size(&ground_truth.labels) {
        return Err(DynFilterError::DimensionMismatch(
            predicted.width(),
            predicted.height(),
            ground_truth.width(),
            ground_truth.height(),
        ));
    }
    let total = predicted.labels.len();
    if total == 0 {
        return Ok(1.0);
    }
    let mut agree = 0usize;
    for (&a, &b) in predicted.labels.data().iter().zip(ground_truth.labels.data()) {
        let pa = predicted.layer_of_label(a) == Layer::Dynamic;
        let pb = ground_truth.layer_of_label(b) == Layer::Dynamic;
        if pa == pb {
            agree += 1;
        }
    }
    Ok(agree as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> BinaryMask {
        Raster::from_fn(w, h, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
    }

    #[test]
    fn small_mask_threshold_is_strict() {
        let (w, h) = (1344, 756);
        let tax = ClassTaxonomy::default();
        let limit = 0.005 * (w * h) as f64;
        assert_eq!(limit, 5080.32);
        // 10 px instance.
        let m = MaskSet::compose(w, h, &[(1, "chair".into(), rect(w, h, 0, 0, 10, 1))], &tax).unwrap();
        let r = reassign_small_masks(&m, 0.005);
        assert_eq!(r.instance(1).unwrap().layer, Layer::Static);
        // Exactly at the threshold: 100x100 image with gamma 0.01 gives 100 px.
        let m = MaskSet::compose(100, 100, &[(1, "chair".into(), rect(100, 100, 0, 0, 100, 1))], &tax).unwrap();
        assert_eq!(reassign_small_masks(&m, 0.01).instance(1).unwrap().layer, Layer::Unknown);
        let empty = MaskSet::empty(10, 10);
        assert_eq!(reassign_small_masks(&empty, 0.005), empty);
    }

    #[test]
    fn overlap_priority() {
        let tax = ClassTaxonomy::default();
        let parts = vec![
            (3, "person".to_string(), rect(10, 10, 0, 0, 5, 5)),
            (2, "chair".to_string(), rect(10, 10, 3, 3, 8, 8)),
            (1, "tv".to_string(), rect(10, 10, 4, 4, 10, 10)),
        ];
        let m = MaskSet::compose(10, 10, &parts, &tax).unwrap();
        assert_eq!(*m.labels().get(4, 4), 3);
        assert_eq!(*m.labels().get(6, 6), 2);
        assert_eq!(*m.labels().get(9, 9), 1);
        assert!(m.is_consistent());
    }

    fn fixture_12_of_1000() -> (MaskSet, Vec<Observation>) {
        let tax = ClassTaxonomy::default();
        // 40x25 = 1000 px box.
        let m = MaskSet::compose(100, 100, &[(5, "box".into(), rect(100, 100, 10, 10, 50, 35))], &tax).unwrap();
        let mut obs = Vec::new();
        for k in 0..12 {
            obs.push(Observation {
                position: Vector2::new(12.0 + k as f64, 20.0),
                track_length: 3 + k % 2,
                matched_to_query: true,
            });
        }
        // Non-qualifying: short track, unmatched, outside.
        obs.push(Observation { position: Vector2::new(20.0, 20.0), track_length: 2, matched_to_query: true });
        obs.push(Observation { position: Vector2::new(21.0, 20.0), track_length: 5, matched_to_query: false });
        obs.push(Observation { position: Vector2::new(80.0, 80.0), track_length: 5, matched_to_query: true });
        (m, obs)
    }

    #[test]
    fn beta_fixture_both_combiners() {
        let (m, obs) = fixture_12_of_1000();
        let inst = m.instance(5).unwrap().clone();
        assert_eq!(inst.pixel_count, 1000);
        let ratio = MovingObjectCriterion::default();
        assert_eq!(moving_object_score(&inst, &m, &obs, &ratio), 0.012);
        let diff = MovingObjectCriterion { combiner: Combiner::PaperDifference, ..ratio };
        assert_eq!(moving_object_score(&inst, &m, &obs, &diff), -988.0);
        assert_eq!(moving_object_score(&inst, &m, &[], &ratio), 0.0);
        let betas = unknown_betas(&m, &obs, &ratio);
        assert_eq!(betas[&5], 0.012);
        let r = reassign_unknown_masks(&m, &betas, 1e-9);
        assert_eq!(r.instance(5).unwrap().layer, Layer::Static);
        let r = reassign_unknown_masks(&m, &unknown_betas(&m, &[], &ratio), 1e-9);
        assert_eq!(r.instance(5).unwrap().layer, Layer::Dynamic);
        assert!(r.unknown_layer().data().iter().all(|&l| l == 0));
    }

    #[test]
    fn filter_forty_of_hundred() {
        let tax = ClassTaxonomy::default();
        let m = MaskSet::compose(100, 10, &[(1, "person".into(), rect(100, 10, 0, 0, 40, 10))], &tax).unwrap();
        let kps: Vec<Keypoint> = (0..100)
            .map(|i| Keypoint { position: Vector2::new(i as f64, 5.0), response: 1.0 })
            .collect();
        let matches: Vec<Match> = (0..100).map(|i| Match { idx_a: i, idx_b: i, score: 1.0 }).collect();
        let empty = MaskSet::empty(100, 10);
        let out = filter_matches(&matches, &m, &empty, &kps, &kps);
        assert_eq!(out.len(), 60);
        assert_eq!(filter_matches(&matches, &empty, &empty, &kps, &kps), matches);
        assert_eq!(filter_matches(&out, &m, &empty, &kps, &kps), out);
    }

    #[test]
    fn accuracy_fixtures() {
        let tax = ClassTaxonomy::default();
        let a = MaskSet::compose(10, 10, &[(1, "person".into(), rect(10, 10, 0, 0, 5, 10))], &tax).unwrap();
        let b = MaskSet::compose(10, 10, &[(1, "person".into(), rect(10, 10, 5, 0, 10, 10))], &tax).unwrap();
        assert_eq!(mask_accuracy(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_accuracy(&a, &b).unwrap(), 0.0);
        let c = MaskSet::compose(10, 10, &[(1, "person".into(), rect(10, 10, 0, 0, 6, 10))], &tax).unwrap();
        assert_eq!(mask_accuracy(&c, &a).unwrap(), 0.9);
        assert!(mask_accuracy(&a, &MaskSet::empty(5, 5)).is_err());
    }

    #[test]
    fn taxonomy_defaults() {
        let t = ClassTaxonomy::default();
        assert_eq!(t.layer_of("TV"), Layer::Static);
        assert_eq!(t.layer_of("person"), Layer::Dynamic);
        assert_eq!(t.layer_of("chair"), Layer::Unknown);
    }
}
