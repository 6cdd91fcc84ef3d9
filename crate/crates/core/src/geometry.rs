//! Point-set and curve distances, box overlap, and polyline resampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BBox, Point3, Polyline3};

/// Which coordinates participate in point distances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    #[default]
    Full3d,
    /// Project onto the BEV plane (ignore z).
    Planar,
}

impl DistanceMode {
    #[inline]
    pub fn distance(self, a: &Point3, b: &Point3) -> f64 {
        match self {
            DistanceMode::Full3d => a.distance(b),
            DistanceMode::Planar => a.planar_distance(b),
        }
    }
}

/// Mean nearest-neighbour distances between two point sets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChamferResult {
    /// a -> b
    pub forward: f64,
    /// b -> a
    pub backward: f64,
    /// (forward + backward) / 2
    pub symmetric: f64,
}

/// Discrete Fréchet distance: the minimum over monotone couplings (first
/// paired with first, last with last) of the largest paired distance.
pub fn discrete_frechet(a: &[Point3], b: &[Point3]) -> Result<f64> {
    discrete_frechet_with(a, b, DistanceMode::Full3d)
}

pub fn discrete_frechet_with(a: &[Point3], b: &[Point3], mode: DistanceMode) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::precondition("discrete Fréchet needs non-empty polylines"));
    }
    // Rolling row over b; row i holds the coupling values for a[..=i].
    let m = b.len();
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    for (i, pa) in a.iter().enumerate() {
        for (j, pb) in b.iter().enumerate() {
            let d = mode.distance(pa, pb);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

pub fn chamfer(a: &[Point3], b: &[Point3]) -> Result<ChamferResult> {
    chamfer_with(a, b, DistanceMode::Full3d)
}

pub fn chamfer_with(a: &[Point3], b: &[Point3], mode: DistanceMode) -> Result<ChamferResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::precondition("Chamfer distance needs non-empty point sets"));
    }
    let forward = mean_nearest(a, b, mode);
    let backward = mean_nearest(b, a, mode);
    Ok(ChamferResult {
        forward,
        backward,
        symmetric: (forward + backward) / 2.0,
    })
}

fn mean_nearest(from: &[Point3], to: &[Point3], mode: DistanceMode) -> f64 {
    let total: f64 = from
        .iter()
        .map(|p| to.iter().map(|q| mode.distance(p, q)).fold(f64::INFINITY, f64::min))
        .sum();
    total / from.len() as f64
}

/// Directed Hausdorff distance: the largest nearest-neighbour distance a -> b.
pub fn directed_hausdorff(a: &[Point3], b: &[Point3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::precondition("Hausdorff distance needs non-empty point sets"));
    }
    Ok(a.iter()
        .map(|p| b.iter().map(|q| p.distance(q)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max))
}

/// Output of [`resample_polyline`].
#[derive(Clone, Debug, PartialEq)]
pub struct Resampled {
    pub line: Polyline3,
    /// Set when the input had zero total arc length.
    pub degenerate: bool,
}

/// Places `n` points at equal arc-length spacing along `p`, keeping both
/// endpoints exactly.
pub fn resample_polyline(p: &Polyline3, n: usize) -> Result<Resampled> {
    if p.len() < 2 {
        return Err(Error::precondition("resampling needs at least 2 input points"));
    }
    if n < 2 {
        return Err(Error::precondition("resampling needs at least 2 output points"));
    }
    let pts = &p.points;
    let mut cumulative = Vec::with_capacity(pts.len());
    cumulative.push(0.0);
    for w in pts.windows(2) {
        let last = *cumulative.last().unwrap();
        cumulative.push(last + w[0].distance(&w[1]));
    }
    let total = *cumulative.last().unwrap();
    if !(total > 0.0) {
        return Ok(Resampled {
            line: Polyline3 {
                points: vec![pts[0]; n],
            },
            degenerate: true,
        });
    }

    let mut out = Vec::with_capacity(n);
    out.push(pts[0]);
    let mut seg = 0;
    for k in 1..n - 1 {
        let target = total * k as f64 / (n - 1) as f64;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < target {
            seg += 1;
        }
        let (s0, s1) = (cumulative[seg], cumulative[seg + 1]);
        let t = if s1 > s0 { (target - s0) / (s1 - s0) } else { 0.0 };
        out.push(pts[seg].lerp(&pts[seg + 1], t));
    }
    out.push(*pts.last().unwrap());
    Ok(Resampled {
        line: Polyline3 { points: out },
        degenerate: false,
    })
}

fn check_box(b: &BBox) -> Result<()> {
    if b.is_valid() {
        Ok(())
    } else {
        Err(Error::precondition(format!("degenerate box {b:?}")))
    }
}

fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    w * h
}

pub fn box_iou(a: &BBox, b: &BBox) -> Result<f64> {
    check_box(a)?;
    check_box(b)?;
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    Ok(inter / union)
}

/// Generalized IoU: IoU minus the empty fraction of the smallest enclosing box.
pub fn box_giou(a: &BBox, b: &BBox) -> Result<f64> {
    check_box(a)?;
    check_box(b)?;
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    let hull = (a.x2.max(b.x2) - a.x1.min(b.x1)) * (a.y2.max(b.y2) - a.y1.min(b.y1));
    Ok(inter / union - (hull - union) / hull)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionMismatch {
    /// Mean of (1 - cos) over edges, in [0, 2].
    pub value: f64,
    /// Edges skipped because one side had zero length.
    pub degenerate_edges: usize,
}

/// Mean `1 - cos θ` between corresponding edge directions of two polylines.
/// Zero-length edges contribute 0 and are counted.
pub fn direction_cosine_mismatch(pred: &[Point3], gt: &[Point3]) -> Result<DirectionMismatch> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!(
            "direction loss needs equal point counts, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::precondition("direction loss needs at least 2 points"));
    }
    let mut total = 0.0;
    let mut degenerate_edges = 0;
    for (p, g) in pred.windows(2).zip(gt.windows(2)) {
        let (dp, dg) = (p[1] - p[0], g[1] - g[0]);
        let (np, ng) = (dp.norm(), dg.norm());
        if np == 0.0 || ng == 0.0 {
            degenerate_edges += 1;
            continue;
        }
        if dp == dg {
            continue;
        }
        let cos = (dp.dot(&dg) / (np * ng)).clamp(-1.0, 1.0);
        total += 1.0 - cos;
    }
    Ok(DirectionMismatch {
        value: total / (pred.len() - 1) as f64,
        degenerate_edges,
    })
}

/// Axis-aligned bounds (min, max) of a point set.
pub(crate) fn bounds(points: &[Point3]) -> (Point3, Point3) {
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo = Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    (lo, hi)
}

/// Gap between two axis-aligned boxes; a lower bound on every point-pair
/// distance between their contents.
pub(crate) fn bounds_gap(a: &(Point3, Point3), b: &(Point3, Point3), mode: DistanceMode) -> f64 {
    let gap = |alo: f64, ahi: f64, blo: f64, bhi: f64| (blo - ahi).max(alo - bhi).max(0.0);
    let dx = gap(a.0.x, a.1.x, b.0.x, b.1.x);
    let dy = gap(a.0.y, a.1.y, b.0.y, b.1.y);
    match mode {
        DistanceMode::Full3d => {
            let dz = gap(a.0.z, a.1.z, b.0.z, b.1.z);
            (dx * dx + dy * dy + dz * dz).sqrt()
        }
        DistanceMode::Planar => dx.hypot(dy),
    }
}
