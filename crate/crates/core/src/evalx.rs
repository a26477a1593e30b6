//! Pose-error evaluation: thresholded accuracy curves, mask occupancy and
//! variant comparison reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::geom::{pose_error, Pose};
use crate::io::{self, IoError};
use crate::render::median;

/// Distance thresholds in map units.
pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.25, 0.5, 1.0, 2.0];
pub const DEFAULT_ROT_GATE_DEG: f64 = 10.0;
/// Queries whose movable-object occupancy exceeds this form the subset breakdown.
pub const SUBSET_OCCUPANCY: f64 = 0.3;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no ground-truth pose for query {0}")]
    MissingGroundTruth(String),
    #[error("no occupancy value for query {0}")]
    MissingOccupancy(String),
    #[error("run {variant} covers a different query set than {reference}")]
    QuerySetMismatch { variant: String, reference: String },
    #[error("thresholds must be positive and strictly ascending: {0:?}")]
    InvalidThresholds(Vec<f64>),
    #[error("no runs to compare")]
    NoRuns,
    #[error("{path}:{line}: {msg}")]
    Format { path: String, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] IoError),
}

/// One query's outcome: a pose, or `None` when it was not localized.
pub type QueryResult = (String, Option<Pose>);

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyCurve {
    pub distance_thresholds: Vec<f64>,
    pub rotation_threshold_deg: f64,
    pub fraction_localized: Vec<f64>,
    /// Number of queries the fractions are taken over.
    pub queries: usize,
}

fn check_thresholds(thresholds: &[f64]) -> Result<(), EvalError> {
    let ok = thresholds.iter().all(|t| *t > 0.0 && t.is_finite()) && thresholds.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(EvalError::InvalidThresholds(thresholds.to_vec()))
    }
}

/// Fraction of `results` whose pose is within `t` units and `rot_gate_deg`
/// degrees of ground truth, for each threshold `t`. Unlocalized queries
/// count as failures; an empty result set yields zeros.
pub fn accuracy_curve(
    results: &[QueryResult],
    gt: &BTreeMap<String, Pose>,
    thresholds: &[f64],
    rot_gate_deg: f64,
) -> Result<AccuracyCurve, EvalError> {
    check_thresholds(thresholds)?;
    let mut hits = vec![0usize; thresholds.len()];
    for (id, pose) in results {
        let truth = gt.get(id).ok_or_else(|| EvalError::MissingGroundTruth(id.clone()))?;
        let Some(pose) = pose else {
            continue;
        };
        let err = pose_error(pose, truth);
        if err.angle_deg >= rot_gate_deg {
            continue;
        }
        for (h, t) in hits.iter_mut().zip(thresholds) {
            if err.distance < *t {
                *h += 1;
            }
        }
    }
    let n = results.len();
    Ok(AccuracyCurve {
        distance_thresholds: thresholds.to_vec(),
        rotation_threshold_deg: rot_gate_deg,
        fraction_localized: hits.iter().map(|&h| if n == 0 { 0.0 } else { h as f64 / n as f64 }).collect(),
        queries: n,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OccupancyStats {
    /// `(image id, fraction of labeled pixels)`, sorted by id.
    pub per_image: Vec<(String, f64)>,
    pub mean: f64,
    pub median: f64,
}

impl OccupancyStats {
    pub fn from_values(per_image: Vec<(String, f64)>) -> Self {
        let mut v: Vec<f64> = per_image.iter().map(|(_, o)| *o).collect();
        let mean = if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let median = median(&mut v).unwrap_or(0.0);
        Self { per_image, mean, median }
    }

    pub fn as_map(&self) -> BTreeMap<String, f64> {
        self.per_image.iter().cloned().collect()
    }
}

/// Occupancy of every `<id>.mask.png` in `mask_dir`.
pub fn occupancy_stats(mask_dir: &Path) -> Result<OccupancyStats, EvalError> {
    let mut per_image = Vec::new();
    for p in io::list_dir(mask_dir)? {
        let Some(id) = p.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".mask.png")) else {
            continue;
        };
        let labels = io::read_label_png(&p)?;
        let set = labels.data().iter().filter(|&&l| l != 0).count();
        let frac = if labels.is_empty() { 0.0 } else { set as f64 / labels.len() as f64 };
        per_image.push((id.to_string(), frac));
    }
    per_image.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(OccupancyStats::from_values(per_image))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantRow {
    pub name: String,
    pub curve: AccuracyCurve,
    /// Fraction minus the first run's fraction, per threshold.
    pub delta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<VariantRow>,
    /// Same rows restricted to queries with occupancy above [`SUBSET_OCCUPANCY`].
    pub subset: Option<Vec<VariantRow>>,
}

fn rows_for(runs: &[(String, Vec<QueryResult>)], gt: &BTreeMap<String, Pose>, thresholds: &[f64], rot_gate_deg: f64) -> Result<Vec<VariantRow>, EvalError> {
    let curves = runs
        .iter()
        .map(|(name, r)| Ok((name.clone(), accuracy_curve(r, gt, thresholds, rot_gate_deg)?)))
        .collect::<Result<Vec<_>, EvalError>>()?;
    let base = curves[0].1.fraction_localized.clone();
    Ok(curves
        .into_iter()
        .map(|(name, curve)| {
            let delta = curve.fraction_localized.iter().zip(&base).map(|(f, b)| f - b).collect();
            VariantRow { name, curve, delta }
        })
        .collect())
}

/// Curves per run with deltas against the first run, plus the high-occupancy
/// subset breakdown when `occupancy` is given. All runs must cover the same queries.
pub fn compare_variants(
    runs: &[(String, Vec<QueryResult>)],
    gt: &BTreeMap<String, Pose>,
    occupancy: Option<&BTreeMap<String, f64>>,
    thresholds: &[f64],
    rot_gate_deg: f64,
) -> Result<Comparison, EvalError> {
    let Some((ref_name, ref_results)) = runs.first() else {
        return Err(EvalError::NoRuns);
    };
    let ids = |r: &[QueryResult]| r.iter().map(|(id, _)| id.clone()).collect::<BTreeSet<_>>();
    let ref_ids = ids(ref_results);
    for (name, r) in runs {
        if ids(r) != ref_ids || r.len() != ref_results.len() {
            return Err(EvalError::QuerySetMismatch {
                variant: name.clone(),
                reference: ref_name.clone(),
            });
        }
    }
    let rows = rows_for(runs, gt, thresholds, rot_gate_deg)?;
    let subset = match occupancy {
        None => None,
        Some(occ) => {
            for id in &ref_ids {
                if !occ.contains_key(id) {
                    return Err(EvalError::MissingOccupancy(id.clone()));
                }
            }
            let keep = |id: &String| occ[id] > SUBSET_OCCUPANCY;
            let sub: Vec<(String, Vec<QueryResult>)> = runs
                .iter()
                .map(|(n, r)| (n.clone(), r.iter().filter(|(id, _)| keep(id)).cloned().collect()))
                .collect();
            Some(rows_for(&sub, gt, thresholds, rot_gate_deg)?)
        }
    };
    Ok(Comparison { rows, subset })
}

fn subset_name(name: &str) -> String {
    format!("{name}[occupancy>{SUBSET_OCCUPANCY}]")
}

/// `variant,threshold,rot_gate,fraction`; subset rows carry a suffixed name.
pub fn curves_csv(cmp: &Comparison) -> String {
    let mut s = String::from("variant,threshold,rot_gate,fraction\n");
    let mut emit = |name: &str, c: &AccuracyCurve| {
        for (t, f) in c.distance_thresholds.iter().zip(&c.fraction_localized) {
            let _ = writeln!(s, "{name},{t},{},{f}", c.rotation_threshold_deg);
        }
    };
    for r in &cmp.rows {
        emit(&r.name, &r.curve);
    }
    for r in cmp.subset.iter().flatten() {
        emit(&subset_name(&r.name), &r.curve);
    }
    s
}

fn table(title: &str, rows: &[VariantRow]) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let thresholds = &first.curve.distance_thresholds;
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(7);
    let mut s = format!(
        "{title} ({} queries, rotation gate {} deg)\n",
        first.curve.queries, first.curve.rotation_threshold_deg
    );
    let _ = write!(s, "{:<width$}", "variant");
    for t in thresholds {
        let _ = write!(s, " {:>8}", format!("<{t}"));
    }
    for t in thresholds {
        let _ = write!(s, " {:>9}", format!("d<{t}"));
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{:<width$}", r.name);
        for f in &r.curve.fraction_localized {
            let _ = write!(s, " {f:>8.3}");
        }
        for d in &r.delta {
            let _ = write!(s, " {d:>+9.3}");
        }
        s.push('\n');
    }
    s
}

/// Aligned plain-text table of fractions and deltas against the first run.
pub fn report_text(cmp: &Comparison) -> String {
    let mut s = table("all queries", &cmp.rows);
    if let Some(sub) = &cmp.subset {
        s.push('\n');
        s.push_str(&table(&format!("occupancy > {SUBSET_OCCUPANCY}"), sub));
    }
    s
}

/// Whitespace-separated columns for gnuplot: threshold, then one column per run.
pub fn gnuplot_dat(cmp: &Comparison) -> String {
    let mut rows: Vec<(String, &AccuracyCurve)> = cmp.rows.iter().map(|r| (r.name.clone(), &r.curve)).collect();
    rows.extend(cmp.subset.iter().flatten().map(|r| (subset_name(&r.name), &r.curve)));
    let mut s = String::from("# threshold");
    for (n, _) in &rows {
        let _ = write!(s, " {n}");
    }
    s.push('\n');
    if let Some((_, c)) = rows.first() {
        for (k, t) in c.distance_thresholds.iter().enumerate() {
            let _ = write!(s, "{t}");
            for (_, c) in &rows {
                let _ = write!(s, " {}", c.fraction_localized[k]);
            }
            s.push('\n');
        }
    }
    s
}

/// Writes `curves.csv`, `report.txt` and `curves.dat` into `dir`.
pub fn write_comparison(dir: &Path, cmp: &Comparison) -> Result<(), EvalError> {
    io::create_dir(dir)?;
    io::write_text(&dir.join("curves.csv"), &curves_csv(cmp))?;
    io::write_text(&dir.join("report.txt"), &report_text(cmp))?;
    io::write_text(&dir.join("curves.dat"), &gnuplot_dat(cmp))?;
    Ok(())
}

pub fn read_ground_truth(path: &Path) -> Result<BTreeMap<String, Pose>, EvalError> {
    Ok(io::read_poses(path)?.into_iter().collect())
}

/// Results of a localization run from its `report.txt` and `poses.txt`.
pub fn read_results(dir: &Path) -> Result<Vec<QueryResult>, EvalError> {
    let poses: BTreeMap<String, Pose> = io::read_poses(&dir.join("poses.txt"))?.into_iter().collect();
    let path = dir.join("report.txt");
    let bad = |line: usize, msg: String| EvalError::Format {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (ln, line) in io::read_text(&path)?.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 5 || !matches!(toks[1], "ok" | "failed") {
            return Err(bad(ln + 1, "expected `query_id status inlier_count score time_ms`".into()));
        }
        let pose = match toks[1] {
            "ok" => Some(
                *poses
                    .get(toks[0])
                    .ok_or_else(|| bad(ln + 1, format!("query {} has no entry in poses.txt", toks[0])))?,
            ),
            _ => None,
        };
        out.push((toks[0].to_string(), pose));
    }
    Ok(out)
}
