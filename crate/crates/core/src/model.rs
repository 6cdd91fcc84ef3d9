//! Domain types shared by the metric, loss, raster and IO layers.
//!
//! Everything here is a plain value type. Construction helpers check their
//! own invariants, but fields stay public so that externally produced data
//! (files, fuzzers) can be audited with [`validate_frame`] instead of being
//! rejected field by field.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points sampled along every lane line.
pub const DEFAULT_NUM_POINTS: usize = 11;
/// Traffic-element category count.
pub const DEFAULT_TE_CLASSES: u32 = 13;
/// Line types: 0 = none/invisible, 1 = solid, 2 = dashed.
pub const DEFAULT_LINE_TYPES: u8 = 3;
/// Front-view image size (width, height) in pixels.
pub const DEFAULT_IMAGE_SIZE: (f64, f64) = (1550.0, 2048.0);

/// A 3D point in the ego frame: x forward, y left, z up (meters).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        (*self - *other).norm()
    }

    /// Distance ignoring z.
    pub fn planar_distance(&self, other: &Point3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, other: &Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn lerp(&self, other: &Point3, t: f64) -> Point3 {
        Point3::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
            self.z + (other.z - self.z) * t,
        )
    }

    pub fn scale(&self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl std::ops::Add for Point3 {
    type Output = Point3;
    fn add(self, rhs: Point3) -> Point3 {
        Point3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl std::ops::Sub for Point3 {
    type Output = Point3;
    fn sub(self, rhs: Point3) -> Point3 {
        Point3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl From<[f64; 3]> for Point3 {
    fn from([x, y, z]: [f64; 3]) -> Self {
        Point3 { x, y, z }
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        [p.x, p.y, p.z]
    }
}

/// An ordered sequence of points.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polyline3 {
    pub points: Vec<Point3>,
}

impl Polyline3 {
    /// Builds a polyline, rejecting fewer than two points, non-finite
    /// coordinates and lines that collapse to a single repeated point.
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        let line = Polyline3 { points };
        match line.defect() {
            Some(msg) => Err(Error::precondition(msg)),
            None => Ok(line),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].distance(&w[1])).sum()
    }

    pub fn reversed(&self) -> Polyline3 {
        let mut points = self.points.clone();
        points.reverse();
        Polyline3 { points }
    }

    pub fn translated(&self, t: Point3) -> Polyline3 {
        Polyline3 {
            points: self.points.iter().map(|&p| p + t).collect(),
        }
    }

    fn defect(&self) -> Option<String> {
        if self.points.len() < 2 {
            return Some(format!("polyline needs at least 2 points, found {}", self.points.len()));
        }
        if let Some(i) = self.points.iter().position(|p| !p.is_finite()) {
            return Some(format!("non-finite coordinate at point {i}"));
        }
        let first = self.points[0];
        if self.points.iter().all(|p| *p == first) {
            return Some("all points coincide".to_string());
        }
        None
    }
}

impl From<Vec<Point3>> for Polyline3 {
    fn from(points: Vec<Point3>) -> Self {
        Polyline3 { points }
    }
}

/// One lane instance: centerline plus left and right boundaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneSegment {
    pub id: u64,
    #[serde(default)]
    pub class_id: u32,
    #[serde(default)]
    pub left_type: u8,
    #[serde(default)]
    pub right_type: u8,
    pub confidence: f64,
    pub centerline: Polyline3,
    pub left_boundary: Polyline3,
    pub right_boundary: Polyline3,
}

impl LaneSegment {
    pub fn translated(&self, t: Point3) -> LaneSegment {
        LaneSegment {
            centerline: self.centerline.translated(t),
            left_boundary: self.left_boundary.translated(t),
            right_boundary: self.right_boundary.translated(t),
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaClass {
    PedestrianCrossing,
    RoadBoundary,
}

impl AreaClass {
    pub const ALL: [AreaClass; 2] = [AreaClass::PedestrianCrossing, AreaClass::RoadBoundary];

    pub fn index(self) -> u32 {
        match self {
            AreaClass::PedestrianCrossing => 0,
            AreaClass::RoadBoundary => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AreaClass::PedestrianCrossing => "pedestrian_crossing",
            AreaClass::RoadBoundary => "road_boundary",
        }
    }
}

/// Undirected BEV curve (pedestrian crossing outline or road boundary).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaInstance {
    pub id: u64,
    #[serde(rename = "class")]
    pub class: AreaClass,
    pub confidence: f64,
    pub curve: Polyline3,
}

/// Axis-aligned box in front-view image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_valid(&self) -> bool {
        let finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        finite && self.x1 < self.x2 && self.y1 < self.y2
    }

    /// (cx, cy, w, h) divided by the image size.
    pub fn normalized_cxcywh(&self, image_size: (f64, f64)) -> [f64; 4] {
        let (w, h) = image_size;
        [
            (self.x1 + self.x2) * 0.5 / w,
            (self.y1 + self.y2) * 0.5 / h,
            self.width() / w,
            self.height() / h,
        ]
    }
}

impl From<[f64; 4]> for BBox {
    fn from([x1, y1, x2, y2]: [f64; 4]) -> Self {
        BBox { x1, y1, x2, y2 }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficElement {
    pub id: u64,
    pub class_id: u32,
    pub confidence: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// Sparse score matrix; absent entries score 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TopologyMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: BTreeMap<(usize, usize), f64>,
}

impl TopologyMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: BTreeMap::new(),
        }
    }

    /// Builds a matrix from `(row, col, score)` triples. Zero scores are dropped;
    /// later duplicates overwrite earlier ones.
    pub fn from_edges(rows: usize, cols: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut m = Self::new(rows, cols);
        for (i, j, s) in edges {
            m.set(i, j, s);
        }
        m
    }

    pub fn from_dense(dense: &[Vec<f64>], cols: usize) -> Self {
        let edges = dense
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &s)| (i, j, s)));
        Self::from_edges(dense.len(), cols, edges)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(&(i, j)).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, i: usize, j: usize, score: f64) {
        if score == 0.0 {
            self.entries.remove(&(i, j));
        } else {
            self.entries.insert((i, j), score);
        }
    }

    /// Non-zero entries in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(i, j), &s)| (i, j, s))
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.range((i, 0)..(i + 1, 0)).map(|(&(_, j), &s)| (j, s))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols]; self.rows];
        for (i, j, s) in self.edges() {
            if i < self.rows && j < self.cols {
                out[i][j] = s;
            }
        }
        out
    }
}

/// Lane–lane and lane–traffic-element score matrices, indexed by instance order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Topology {
    pub lane_lane: TopologyMatrix,
    pub lane_traffic: TopologyMatrix,
}

/// All instances of one frame. Ground truth and predictions share this shape;
/// ground-truth confidences are 1.0 and its topology is binary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Frame {
    pub id: u64,
    pub lane_segments: Vec<LaneSegment>,
    pub areas: Vec<AreaInstance>,
    pub traffic_elements: Vec<TrafficElement>,
    pub topology: Topology,
}

pub type FrameGroundTruth = Frame;
pub type FramePrediction = Frame;

impl Frame {
    pub fn empty(id: u64) -> Self {
        Frame {
            id,
            ..Default::default()
        }
    }

    /// An empty topology with dimensions matching the instance lists.
    pub fn sized_topology(&self) -> Topology {
        let n = self.lane_segments.len();
        Topology {
            lane_lane: TopologyMatrix::new(n, n),
            lane_traffic: TopologyMatrix::new(n, self.traffic_elements.len()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    GroundTruth,
    Prediction,
}

/// BEV window and raster resolution. Rows run along x, columns along y.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BevGridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub rows: usize,
    pub cols: usize,
}

impl Default for BevGridSpec {
    fn default() -> Self {
        BevGridSpec {
            x_range: (-50.0, 50.0),
            y_range: (-25.0, 25.0),
            rows: 200,
            cols: 100,
        }
    }
}

impl BevGridSpec {
    /// The 400 x 200 grid over the same window.
    pub fn high_res() -> Self {
        BevGridSpec {
            rows: 400,
            cols: 200,
            ..Default::default()
        }
    }

    pub fn with_resolution(self, rows: usize, cols: usize) -> Self {
        BevGridSpec { rows, cols, ..self }
    }

    pub fn cell_x(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) / self.rows as f64
    }

    pub fn cell_y(&self) -> f64 {
        (self.y_range.1 - self.y_range.0) / self.cols as f64
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.x_range.0.is_finite()
            && self.x_range.1.is_finite()
            && self.y_range.0.is_finite()
            && self.y_range.1.is_finite()
            && self.x_range.1 > self.x_range.0
            && self.y_range.1 > self.y_range.0
            && self.rows >= 1
            && self.cols >= 1
            && self.cell_x() > 0.0
            && self.cell_y() > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::precondition(format!("invalid BEV grid {self:?}")))
        }
    }

    /// Whether `p` lies within `margin` meters of the window (planar).
    pub fn contains_with_margin(&self, p: &Point3, margin: f64) -> bool {
        p.x >= self.x_range.0 - margin
            && p.x <= self.x_range.1 + margin
            && p.y >= self.y_range.0 - margin
            && p.y <= self.y_range.1 + margin
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneSegmentWeights {
    pub cls: f64,
    pub reg: f64,
    pub line_type: f64,
    pub mask: f64,
    pub dice: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaWeights {
    pub cls: f64,
    pub reg: f64,
    pub dir: f64,
    pub seg: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficWeights {
    pub cls: f64,
    pub reg: f64,
    pub iou: f64,
}

/// Weights of every supervised loss term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lanesegment: LaneSegmentWeights,
    pub area: AreaWeights,
    pub traffic: TrafficWeights,
    pub topology_ll: f64,
    pub topology_lt: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lanesegment: LaneSegmentWeights {
                cls: 1.5,
                reg: 0.0025,
                line_type: 0.1,
                mask: 3.0,
                dice: 3.0,
            },
            area: AreaWeights {
                cls: 1.5,
                reg: 0.0025,
                dir: 0.005,
                seg: 10.0,
            },
            traffic: TrafficWeights {
                cls: 1.0,
                reg: 2.5,
                iou: 1.0,
            },
            topology_ll: 5.0,
            topology_lt: 5.0,
        }
    }
}

impl LossWeights {
    pub fn all(&self) -> [f64; 14] {
        let (l, a, t) = (self.lanesegment, self.area, self.traffic);
        [
            l.cls,
            l.reg,
            l.line_type,
            l.mask,
            l.dice,
            a.cls,
            a.reg,
            a.dir,
            a.seg,
            t.cls,
            t.reg,
            t.iou,
            self.topology_ll,
            self.topology_lt,
        ]
    }

    /// Inverse of [`LossWeights::all`].
    pub fn from_all(w: [f64; 14]) -> Self {
        LossWeights {
            lanesegment: LaneSegmentWeights {
                cls: w[0],
                reg: w[1],
                line_type: w[2],
                mask: w[3],
                dice: w[4],
            },
            area: AreaWeights {
                cls: w[5],
                reg: w[6],
                dir: w[7],
                seg: w[8],
            },
            traffic: TrafficWeights {
                cls: w[9],
                reg: w[10],
                iou: w[11],
            },
            topology_ll: w[12],
            topology_lt: w[13],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.all().iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::Domain("loss weights must be finite and non-negative".into()))
        }
    }
}

/// Vocabulary sizes and tolerances used when auditing frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationOptions {
    pub num_points: usize,
    /// Meters beyond the BEV window that lane and area points may reach.
    pub margin: f64,
    pub lane_classes: u32,
    pub line_types: u8,
    pub te_classes: u32,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            num_points: DEFAULT_NUM_POINTS,
            margin: 10.0,
            lane_classes: 1,
            line_types: DEFAULT_LINE_TYPES,
            te_classes: DEFAULT_TE_CLASSES,
        }
    }
}

/// One broken invariant, located by instance and field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub frame: u64,
    pub instance: String,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "frame {} {}.{}: {}",
            self.frame, self.instance, self.field, self.message
        )
    }
}

struct Audit<'a> {
    frame: u64,
    spec: &'a BevGridSpec,
    opts: &'a ValidationOptions,
    out: Vec<Violation>,
}

impl Audit<'_> {
    fn push(&mut self, instance: &str, field: &str, message: impl Into<String>) {
        self.out.push(Violation {
            frame: self.frame,
            instance: instance.to_string(),
            field: field.to_string(),
            message: message.into(),
        });
    }

    fn confidence(&mut self, instance: &str, role: Role, c: f64) {
        if !(0.0..=1.0).contains(&c) {
            self.push(instance, "confidence", format!("{c} outside [0, 1]"));
        } else if role == Role::GroundTruth && c != 1.0 {
            self.push(
                instance,
                "confidence",
                format!("ground truth confidence must be 1.0, found {c}"),
            );
        }
    }

    fn polyline(&mut self, instance: &str, field: &str, line: &Polyline3, expected_len: Option<usize>) {
        if let Some(n) = expected_len {
            if line.len() != n {
                self.push(instance, field, format!("expected {n} points, found {}", line.len()));
            }
        }
        if let Some(msg) = line.defect() {
            self.push(instance, field, msg);
            return;
        }
        if let Some(i) = line
            .points
            .iter()
            .position(|p| !self.spec.contains_with_margin(p, self.opts.margin))
        {
            let p = line.points[i];
            self.push(
                instance,
                field,
                format!(
                    "point {i} ({}, {}) lies more than {} m outside the BEV range",
                    p.x, p.y, self.opts.margin
                ),
            );
        }
    }

    fn unique_ids(&mut self, list: &str, ids: impl Iterator<Item = u64>) {
        let mut seen = BTreeSet::new();
        for (i, id) in ids.enumerate() {
            if !seen.insert(id) {
                self.push(&format!("{list}[{i}]"), "id", format!("duplicate id {id}"));
            }
        }
    }

    fn matrix(&mut self, name: &str, m: &TopologyMatrix, rows: usize, cols: usize, role: Role) {
        if m.rows != rows || m.cols != cols {
            self.push(
                "topology",
                name,
                format!(
                    "dimensions {}x{} do not match instance lists {rows}x{cols}",
                    m.rows, m.cols
                ),
            );
        }
        for (i, j, s) in m.edges() {
            if i >= rows || j >= cols {
                self.push("topology", name, format!("entry ({i}, {j}) out of range {rows}x{cols}"));
            } else if !(0.0..=1.0).contains(&s) {
                self.push("topology", name, format!("entry ({i}, {j}) score {s} outside [0, 1]"));
            } else if role == Role::GroundTruth && s != 1.0 {
                self.push(
                    "topology",
                    name,
                    format!("ground truth entry ({i}, {j}) is {s}, not binary"),
                );
            }
        }
    }
}

/// Audits every invariant of a frame. Returns an empty list iff the frame is
/// well formed; never fails and never mutates its input.
pub fn validate_frame(frame: &Frame, role: Role, spec: &BevGridSpec, opts: &ValidationOptions) -> Vec<Violation> {
    let mut audit = Audit {
        frame: frame.id,
        spec,
        opts,
        out: Vec::new(),
    };

    for (i, lane) in frame.lane_segments.iter().enumerate() {
        let name = format!("lane_segments[{i}] (id {})", lane.id);
        audit.polyline(&name, "centerline", &lane.centerline, Some(opts.num_points));
        audit.polyline(&name, "left_boundary", &lane.left_boundary, Some(opts.num_points));
        audit.polyline(&name, "right_boundary", &lane.right_boundary, Some(opts.num_points));
        audit.confidence(&name, role, lane.confidence);
        if lane.class_id >= opts.lane_classes {
            audit.push(
                &name,
                "class_id",
                format!("{} outside vocabulary of {}", lane.class_id, opts.lane_classes),
            );
        }
        for (field, t) in [("left_type", lane.left_type), ("right_type", lane.right_type)] {
            if t >= opts.line_types {
                audit.push(&name, field, format!("{t} outside vocabulary of {}", opts.line_types));
            }
        }
    }
    audit.unique_ids("lane_segments", frame.lane_segments.iter().map(|l| l.id));

    for (i, area) in frame.areas.iter().enumerate() {
        let name = format!("areas[{i}] (id {})", area.id);
        audit.polyline(&name, "curve", &area.curve, None);
        audit.confidence(&name, role, area.confidence);
    }
    audit.unique_ids("areas", frame.areas.iter().map(|a| a.id));

    for (i, te) in frame.traffic_elements.iter().enumerate() {
        let name = format!("traffic_elements[{i}] (id {})", te.id);
        let b = te.bbox;
        let coords = [b.x1, b.y1, b.x2, b.y2];
        if coords.iter().any(|v| !v.is_finite() || *v < 0.0) {
            audit.push(&name, "box", "coordinates must be finite and >= 0");
        } else if !(b.x1 < b.x2 && b.y1 < b.y2) {
            audit.push(&name, "box", "degenerate box");
        }
        audit.confidence(&name, role, te.confidence);
        if te.class_id >= opts.te_classes {
            audit.push(
                &name,
                "class_id",
                format!("{} outside vocabulary of {}", te.class_id, opts.te_classes),
            );
        }
    }
    audit.unique_ids("traffic_elements", frame.traffic_elements.iter().map(|t| t.id));

    let n_lanes = frame.lane_segments.len();
    let n_tes = frame.traffic_elements.len();
    audit.matrix("lane_lane", &frame.topology.lane_lane, n_lanes, n_lanes, role);
    audit.matrix("lane_traffic", &frame.topology.lane_traffic, n_lanes, n_tes, role);

    audit.out
}
