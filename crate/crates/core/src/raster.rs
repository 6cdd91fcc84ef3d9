//! BEV rasterization: SD-map masks and auxiliary segmentation targets.
//!
//! Grid convention: row `i` covers `x ∈ [x_min + i·cell_x, x_min + (i+1)·cell_x)`
//! and column `j` the same along y. Cells are half-open, except that points
//! exactly on the maximum edge of the window belong to the last row/column.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::{AreaInstance, BevGridSpec, LaneSegment, Point3, Polyline3};

/// One SD-map polyline with its road type tag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdPolyline {
    pub road_type: String,
    pub points: Polyline3,
}

/// Vectorized SD map already transformed into the ego frame.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SdMap {
    pub polylines: Vec<SdPolyline>,
}

/// Binary (0/1) raster over a [`BevGridSpec`], row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BevMask {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl BevMask {
    pub fn new(spec: &BevGridSpec) -> Self {
        BevMask {
            rows: spec.rows,
            cols: spec.cols,
            data: vec![0; spec.rows * spec.cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.cols + col] != 0
    }

    pub fn set(&mut self, row: usize, col: usize) {
        self.data[row * self.cols + col] = 1;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Marked cells in row-major order.
    pub fn marked_cells(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(k, _)| (k / self.cols, k % self.cols))
            .collect()
    }

    pub fn union_with(&mut self, other: &BevMask) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "mask shapes differ");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= *b;
        }
    }

    /// Cell values as 0.0 / 1.0.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    /// Plain-text PGM (P2), one grid row per line, maxval 1.
    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n1\n", self.cols, self.rows);
        for row in self.data.chunks(self.cols) {
            let line: Vec<&str> = row.iter().map(|&v| if v != 0 { "1" } else { "0" }).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    /// `row,col` header followed by one marked cell per line, row-major.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col\n");
        for (r, c) in self.marked_cells() {
            let _ = writeln!(out, "{r},{c}");
        }
        out
    }

    fn mark(&mut self, i: i64, j: i64) {
        let clamp = |k: i64, n: usize| if k == n as i64 { k - 1 } else { k };
        let (i, j) = (clamp(i, self.rows), clamp(j, self.cols));
        if i >= 0 && j >= 0 && (i as usize) < self.rows && (j as usize) < self.cols {
            self.set(i as usize, j as usize);
        }
    }
}

/// Cell containing `p`, or `None` outside the window.
pub fn world_to_cell(p: &Point3, spec: &BevGridSpec) -> Option<(usize, usize)> {
    let axis = |v: f64, (lo, hi): (f64, f64), cell: f64, n: usize| -> Option<usize> {
        if !(v >= lo && v <= hi) {
            return None;
        }
        if v == hi {
            return Some(n - 1);
        }
        Some((((v - lo) / cell).floor() as usize).min(n - 1))
    };
    let row = axis(p.x, spec.x_range, spec.cell_x(), spec.rows)?;
    let col = axis(p.y, spec.y_range, spec.cell_y(), spec.cols)?;
    Some((row, col))
}

/// Continuous grid coordinates (row axis, column axis).
fn grid_coords(p: &Point3, spec: &BevGridSpec) -> (f64, f64) {
    (
        (p.x - spec.x_range.0) / spec.cell_x(),
        (p.y - spec.y_range.0) / spec.cell_y(),
    )
}

/// Liang–Barsky clip of the parametric segment to `[0,rows] x [0,cols]`.
fn clip_parameter(u0: f64, v0: f64, du: f64, dv: f64, rows: f64, cols: f64) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-du, u0), (du, rows - u0), (-dv, v0), (dv, cols - v0)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Marks every cell the segment `a -> b` touches (supercover traversal).
fn mark_segment(mask: &mut BevMask, spec: &BevGridSpec, a: &Point3, b: &Point3) {
    let (u0, v0) = grid_coords(a, spec);
    let (u1, v1) = grid_coords(b, spec);
    let (du, dv) = (u1 - u0, v1 - v0);
    let Some((ta, tb)) = clip_parameter(u0, v0, du, dv, spec.rows as f64, spec.cols as f64) else {
        return;
    };

    let mut i = (u0 + ta * du).floor() as i64;
    let mut j = (v0 + ta * dv).floor() as i64;
    mask.mark(i, j);

    let (su, sv) = (du.signum() as i64, dv.signum() as i64);
    // Parameter at which the traversal crosses the next grid line on each axis.
    let next_u = |i: i64| -> f64 {
        if du > 0.0 {
            ((i + 1) as f64 - u0) / du
        } else if du < 0.0 {
            (i as f64 - u0) / du
        } else {
            f64::INFINITY
        }
    };
    let next_v = |j: i64| -> f64 {
        if dv > 0.0 {
            ((j + 1) as f64 - v0) / dv
        } else if dv < 0.0 {
            (j as f64 - v0) / dv
        } else {
            f64::INFINITY
        }
    };
    let (mut tu, mut tv) = (next_u(i), next_v(j));
    loop {
        let t = tu.min(tv);
        if !(t <= tb) {
            break;
        }
        let cross_u = tu <= tv;
        let cross_v = tv <= tu;
        // The crossing point itself lies on the grid line, which belongs to
        // the cell above it.
        let pi = if cross_u && du > 0.0 { i + 1 } else { i };
        let pj = if cross_v && dv > 0.0 { j + 1 } else { j };
        mask.mark(pi, pj);
        if cross_u {
            i += su;
            tu = next_u(i);
        }
        if cross_v {
            j += sv;
            tv = next_v(j);
        }
        if t < tb {
            mask.mark(i, j);
        }
    }
}

fn mark_polyline(mask: &mut BevMask, spec: &BevGridSpec, points: &[Point3]) {
    match points {
        [] => {}
        [only] => mark_segment(mask, spec, only, only),
        _ => {
            for w in points.windows(2) {
                mark_segment(mask, spec, &w[0], &w[1]);
            }
        }
    }
}

fn clamp_to_window(p: &Point3, spec: &BevGridSpec) -> Point3 {
    Point3::new(
        p.x.clamp(spec.x_range.0, spec.x_range.1),
        p.y.clamp(spec.y_range.0, spec.y_range.1),
        p.z,
    )
}

fn sd_points(line: &SdPolyline, spec: &BevGridSpec, clip: bool) -> Vec<Point3> {
    if clip {
        line.points.points.clone()
    } else {
        line.points.points.iter().map(|p| clamp_to_window(p, spec)).collect()
    }
}

/// Supercover mask of every SD-map polyline.
///
/// With `clip` set, geometry outside the window is discarded; otherwise it
/// is clamped onto the window border.
pub fn rasterize_sdmap(map: &SdMap, spec: &BevGridSpec, clip: bool) -> BevMask {
    let mut mask = BevMask::new(spec);
    for line in &map.polylines {
        mark_polyline(&mut mask, spec, &sd_points(line, spec, clip));
    }
    mask
}

/// One mask per road type.
pub fn rasterize_sdmap_by_type(map: &SdMap, spec: &BevGridSpec, clip: bool) -> BTreeMap<String, BevMask> {
    let mut out: BTreeMap<String, BevMask> = BTreeMap::new();
    for line in &map.polylines {
        let mask = out.entry(line.road_type.clone()).or_insert_with(|| BevMask::new(spec));
        mark_polyline(mask, spec, &sd_points(line, spec, clip));
    }
    out
}

/// Supercover of an open curve.
pub fn rasterize_polyline(points: &[Point3], spec: &BevGridSpec) -> BevMask {
    let mut mask = BevMask::new(spec);
    mark_polyline(&mut mask, spec, points);
    mask
}

/// Filled lane region and whether its polygon was degenerate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FilledMask {
    pub mask: BevMask,
    /// Zero-area or self-intersecting outline.
    pub degenerate: bool,
}

/// Fills the region between the left and right boundaries: the polygon
/// is the left boundary followed by the reversed right boundary. Cells are
/// filled when their center is inside under the even-odd rule.
pub fn lane_segment_mask(ls: &LaneSegment, spec: &BevGridSpec) -> FilledMask {
    let mut outline: Vec<(f64, f64)> = ls.left_boundary.points.iter().map(|p| (p.x, p.y)).collect();
    outline.extend(ls.right_boundary.points.iter().rev().map(|p| (p.x, p.y)));
    FilledMask {
        mask: fill_polygon(&outline, spec),
        degenerate: polygon_is_degenerate(&outline),
    }
}

/// Even-odd scanline fill over cell centers. A center on an outline edge
/// counts as inside on the low-y side and outside on the high-y side.
pub fn fill_polygon(outline: &[(f64, f64)], spec: &BevGridSpec) -> BevMask {
    let mut mask = BevMask::new(spec);
    if outline.len() < 3 {
        return mask;
    }
    let (cx, cy) = (spec.cell_x(), spec.cell_y());
    let center_y = |j: usize| spec.y_range.0 + (j as f64 + 0.5) * cy;
    let (xmin, xmax) = outline.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.0), hi.max(p.0))
    });
    let first_row = ((xmin - spec.x_range.0) / cx - 0.5).ceil().max(0.0);
    let last_row = ((xmax - spec.x_range.0) / cx - 0.5).floor().min(spec.rows as f64 - 1.0);
    if !(first_row <= last_row) {
        return mask;
    }

    let mut crossings = Vec::new();
    for i in first_row as usize..=last_row as usize {
        let x = spec.x_range.0 + (i as f64 + 0.5) * cx;
        crossings.clear();
        for k in 0..outline.len() {
            let (p, q) = (outline[k], outline[(k + 1) % outline.len()]);
            if (p.0 <= x && x < q.0) || (q.0 <= x && x < p.0) {
                crossings.push(p.1 + (x - p.0) * (q.1 - p.1) / (q.0 - p.0));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for pair in crossings.chunks_exact(2) {
            let (lo, hi) = (pair[0], pair[1]);
            // first column whose center is >= lo
            let mut j = (((lo - spec.y_range.0) / cy - 0.5).ceil().max(0.0)) as usize;
            while j > 0 && center_y(j - 1) >= lo {
                j -= 1;
            }
            while j < spec.cols && center_y(j) < lo {
                j += 1;
            }
            while j < spec.cols && center_y(j) < hi {
                mask.set(i, j);
                j += 1;
            }
        }
    }
    mask
}

fn polygon_is_degenerate(outline: &[(f64, f64)]) -> bool {
    let n = outline.len();
    if n < 3 {
        return true;
    }
    let twice_area: f64 = (0..n)
        .map(|k| {
            let (p, q) = (outline[k], outline[(k + 1) % n]);
            p.0 * q.1 - q.0 * p.1
        })
        .sum();
    let scale = outline.iter().fold(1.0f64, |m, p| m.max(p.0.abs()).max(p.1.abs()));
    if twice_area.abs() <= 1e-9 * scale * scale {
        return true;
    }
    for a in 0..n {
        for b in a + 2..n {
            if a == 0 && b == n - 1 {
                continue;
            }
            let (p1, p2) = (outline[a], outline[(a + 1) % n]);
            let (q1, q2) = (outline[b], outline[(b + 1) % n]);
            if segments_cross(p1, p2, q1, q2) {
                return true;
            }
        }
    }
    false
}

fn segments_cross(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> bool {
    let orient = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0) && d1 != 0.0 && d2 != 0.0 && d3 != 0.0 && d4 != 0.0
}

/// One-cell-thick supercover of the area curve; no interior fill.
pub fn area_boundary_mask(a: &AreaInstance, spec: &BevGridSpec) -> BevMask {
    rasterize_polyline(&a.curve.points, spec)
}

/// Union of the filled masks of all lanes.
pub fn lane_union_mask(lanes: &[LaneSegment], spec: &BevGridSpec) -> BevMask {
    let mut mask = BevMask::new(spec);
    for lane in lanes {
        mask.union_with(&lane_segment_mask(lane, spec).mask);
    }
    mask
}

/// Union of the boundary masks of all areas.
pub fn area_union_mask(areas: &[AreaInstance], spec: &BevGridSpec) -> BevMask {
    let mut mask = BevMask::new(spec);
    for a in areas {
        mark_polyline(&mut mask, spec, &a.curve.points);
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AreaClass;

    fn p(x: f64, y: f64) -> Point3 {
        Point3::new(x, y, 0.0)
    }

    fn line(points: &[(f64, f64)]) -> Polyline3 {
        Polyline3::new(points.iter().map(|&(x, y)| p(x, y)).collect()).unwrap()
    }

    fn sd(points: &[(f64, f64)]) -> SdMap {
        SdMap {
            polylines: vec![SdPolyline {
                road_type: "road".into(),
                points: line(points),
            }],
        }
    }

    #[test]
    fn world_to_cell_examples() {
        let s = BevGridSpec::default();
        assert_eq!(world_to_cell(&p(0.0, 0.0), &s), Some((100, 50)));
        assert_eq!(world_to_cell(&p(-50.0, -25.0), &s), Some((0, 0)));
        assert_eq!(world_to_cell(&p(50.0, 25.0), &s), Some((199, 99)));
        assert_eq!(world_to_cell(&p(50.1, 0.0), &s), None);
        assert_eq!(world_to_cell(&p(0.0, -25.01), &s), None);
    }

    #[test]
    fn axis_aligned_segment_marks_ten_cells() {
        let s = BevGridSpec::default();
        let m = rasterize_sdmap(&sd(&[(0.0, 0.0), (4.9, 0.0)]), &s, true);
        assert_eq!(m.count(), 10);
        assert!(m.marked_cells().iter().all(|&(_, c)| c == 50));
    }

    #[test]
    fn outside_segment_marks_nothing() {
        let s = BevGridSpec::default();
        assert_eq!(rasterize_sdmap(&sd(&[(60.0, 0.0), (70.0, 5.0)]), &s, true).count(), 0);
        // clamped onto the border instead of dropped
        assert!(rasterize_sdmap(&sd(&[(60.0, 0.0), (70.0, 5.0)]), &s, false).count() > 0);
    }

    #[test]
    fn diagonal_through_corners() {
        let s = BevGridSpec::default();
        let m = rasterize_sdmap(&sd(&[(0.0, 0.0), (1.0, 1.0)]), &s, true);
        assert!(m.count() >= 3);
        assert_eq!(m.marked_cells(), vec![(100, 50), (101, 51), (102, 52)]);
    }

    #[test]
    fn straight_lane_fills_twenty_by_seven() {
        let s = BevGridSpec::default();
        let pts = |y: f64| line(&(0..11).map(|i| (i as f64, y)).collect::<Vec<_>>());
        let lane = LaneSegment {
            id: 0,
            class_id: 0,
            left_type: 0,
            right_type: 0,
            confidence: 1.0,
            centerline: pts(0.0),
            left_boundary: pts(1.75),
            right_boundary: pts(-1.75),
        };
        let filled = lane_segment_mask(&lane, &s);
        assert!(!filled.degenerate);
        assert_eq!(filled.mask.count(), 140);

        let collapsed = LaneSegment {
            left_boundary: pts(0.0),
            right_boundary: pts(0.0),
            ..lane.clone()
        };
        let filled = lane_segment_mask(&collapsed, &s);
        assert!(filled.degenerate);
        assert!(filled.mask.count() <= 20);

        let far = lane.translated(p(200.0, 0.0));
        assert_eq!(lane_segment_mask(&far, &s).mask.count(), 0);
    }

    #[test]
    fn square_crossing_boundary_has_no_interior() {
        let s = BevGridSpec::default();
        let area = AreaInstance {
            id: 0,
            class: AreaClass::PedestrianCrossing,
            confidence: 1.0,
            curve: line(&[(0.1, 0.1), (5.1, 0.1), (5.1, 5.1), (0.1, 5.1), (0.1, 0.1)]),
        };
        let m = area_boundary_mask(&area, &s);
        // 11 x 11 block of touched cells minus its 9 x 9 interior
        assert_eq!(m.count(), 11 * 11 - 9 * 9);
        let (r, c) = world_to_cell(&p(2.6, 2.6), &s).unwrap();
        assert!(!m.get(r, c));
    }

    #[test]
    fn exports_are_stable() {
        let s = BevGridSpec::default().with_resolution(2, 3);
        let m = rasterize_sdmap(&sd(&[(-40.0, -20.0), (-30.0, -20.0)]), &s, true);
        assert_eq!(m.to_pgm(), "P2\n3 2\n1\n1 0 0\n0 0 0\n");
        assert_eq!(m.to_csv(), "row,col\n0,0\n");
    }

    #[test]
    fn self_intersecting_outline_is_flagged() {
        assert!(polygon_is_degenerate(&[(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)]));
        assert!(!polygon_is_degenerate(&[
            (0.0, 0.0),
            (1.0, 0.0),
            (1.0, 1.0),
            (0.0, 1.0)
        ]));
    }
}
