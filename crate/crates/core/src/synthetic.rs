//! Seeded scene generator and perturbations with closed-form metric outcomes.
//!
//! Lanes run in 13 parallel corridors 3.5 m apart (centerlines at
//! y = -21 + 3.5 k), chained head to tail along x in [-45, 45]. A corridor
//! holds 9 lanes of 10 m; larger counts shorten the lanes so everything still
//! fits the default BEV window.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{ArchiveFrame, SceneArchive};
use crate::metrics::MetricConfig;
use crate::model::{
    AreaClass, AreaInstance, BBox, Frame, LaneSegment, Point3, Polyline3, TopologyMatrix, TrafficElement,
    DEFAULT_NUM_POINTS, DEFAULT_TE_CLASSES,
};
use crate::raster::{SdMap, SdPolyline};

pub const CORRIDORS: usize = 13;
pub const CORRIDOR_SPACING: f64 = 3.5;
pub const LANE_HALF_WIDTH: f64 = 1.75;
const X_START: f64 = -45.0;
const X_SPAN: f64 = 90.0;
const ARC_RADIUS: f64 = 300.0;
const FP_LANE_Y: f64 = 32.0;
const FP_AREA_Y: f64 = 33.0;
const FP_ID_BASE: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    #[default]
    Straight,
    /// Circular arcs of radius 300 m, sag centred on the corridor line.
    Arc,
    /// Each frame picks straight or arc at random.
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: String,
    pub frames: usize,
    pub lanes: usize,
    pub areas: usize,
    pub traffic_elements: usize,
    pub layout: Layout,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            scene_id: "synthetic".into(),
            frames: 1,
            lanes: 10,
            areas: 4,
            traffic_elements: 4,
            layout: Layout::Straight,
            seed: 0,
        }
    }
}

fn lanes_per_corridor(n: usize) -> usize {
    n.div_ceil(CORRIDORS).max(9)
}

/// Centerline point and left normal at arc-length parameter `s` (meters from
/// the corridor start) for a corridor shape.
fn corridor_pose(arc: bool, y0: f64, s: f64) -> (Point3, (f64, f64)) {
    if !arc {
        return (Point3::new(X_START + s, y0, 0.0), (0.0, 1.0));
    }
    let half = X_SPAN / 2.0;
    let theta_max = (half / ARC_RADIUS).asin();
    let sag = ARC_RADIUS * (1.0 - theta_max.cos());
    let arc_len = 2.0 * ARC_RADIUS * theta_max;
    let theta = -theta_max + (s / X_SPAN) * arc_len / ARC_RADIUS;
    let x = ARC_RADIUS * theta.sin();
    let y = y0 + ARC_RADIUS * (1.0 - theta.cos()) - sag / 2.0;
    (Point3::new(x, y, 0.0), (-theta.sin(), theta.cos()))
}

fn lane_lines(arc: bool, y0: f64, s0: f64, s1: f64) -> [Polyline3; 3] {
    let n = DEFAULT_NUM_POINTS;
    let mut out: [Vec<Point3>; 3] = Default::default();
    for k in 0..n {
        let s = s0 + (s1 - s0) * k as f64 / (n - 1) as f64;
        let (c, (nx, ny)) = corridor_pose(arc, y0, s);
        let off = Point3::new(nx * LANE_HALF_WIDTH, ny * LANE_HALF_WIDTH, 0.0);
        out[0].push(c);
        out[1].push(c + off);
        out[2].push(c - off);
    }
    out.map(|points| Polyline3 { points })
}

/// Lane chains, ll edges between consecutive lanes of a corridor, and the
/// index of each corridor's head lane.
fn build_lanes(n: usize, arc: bool) -> (Vec<LaneSegment>, Vec<(usize, usize)>, Vec<usize>) {
    let per = lanes_per_corridor(n);
    let len = X_SPAN / per as f64;
    let (mut lanes, mut edges, mut heads) = (Vec::with_capacity(n), Vec::new(), Vec::new());
    for i in 0..n {
        let (corridor, slot) = (i / per, i % per);
        let y0 = -21.0 + CORRIDOR_SPACING * corridor as f64;
        let s0 = len * slot as f64;
        let [centerline, left_boundary, right_boundary] = lane_lines(arc, y0, s0, s0 + len);
        if slot == 0 {
            heads.push(i);
        } else {
            edges.push((i - 1, i));
        }
        lanes.push(LaneSegment {
            id: i as u64,
            class_id: 0,
            left_type: if corridor == CORRIDORS - 1 { 1 } else { 2 },
            right_type: if corridor == 0 { 1 } else { 2 },
            confidence: 1.0,
            centerline,
            left_boundary,
            right_boundary,
        });
    }
    (lanes, edges, heads)
}

fn crossing(cx: f64, cy: f64, scale: f64) -> Polyline3 {
    let (hx, hy) = (2.0 * scale, 1.5 * scale);
    Polyline3 {
        points: vec![
            Point3::new(cx - hx, cy - hy, 0.0),
            Point3::new(cx + hx, cy - hy, 0.0),
            Point3::new(cx + hx, cy + hy, 0.0),
            Point3::new(cx - hx, cy + hy, 0.0),
            Point3::new(cx - hx, cy - hy, 0.0),
        ],
    }
}

fn road_boundary(cx: f64, cy: f64, scale: f64) -> Polyline3 {
    let n = DEFAULT_NUM_POINTS;
    Polyline3 {
        points: (0..n)
            .map(|k| {
                let t = k as f64 / (n - 1) as f64;
                let x = cx + (t - 0.5) * 6.0 * scale;
                let y = cy + 0.5 * scale * (std::f64::consts::PI * t).sin();
                Point3::new(x, y, 0.0)
            })
            .collect(),
    }
}

fn area_slots(n: usize) -> (Vec<(f64, f64)>, f64) {
    let cols = 9;
    let rows = n.div_ceil(cols).max(6);
    let dy = 48.0 / rows as f64;
    let scale = (dy / 8.0).min(1.0);
    let slots = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (-40.0 + 10.0 * c as f64, -24.0 + dy * (r as f64 + 0.5))))
        .collect();
    (slots, scale)
}

fn te_slots(n: usize) -> (Vec<(f64, f64)>, f64) {
    let cols = 15;
    let rows = n.div_ceil(cols).max(13);
    let dy = 1300.0 / rows as f64;
    let size = (dy * 0.6).min(60.0);
    let slots = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (40.0 + 100.0 * c as f64, 40.0 + dy * r as f64)))
        .collect();
    (slots, size)
}

/// Corridor centerlines as an SD map, alternating road types.
fn sd_map_for(lanes_present: bool, arc: bool, corridors: usize) -> Option<SdMap> {
    if !lanes_present {
        return None;
    }
    let polylines = (0..corridors)
        .map(|c| {
            let y0 = -21.0 + CORRIDOR_SPACING * c as f64;
            let points = (0..=18).map(|k| corridor_pose(arc, y0, 5.0 * k as f64).0).collect();
            SdPolyline {
                road_type: if c % 2 == 0 { "primary" } else { "secondary" }.into(),
                points: Polyline3 { points },
            }
        })
        .collect();
    Some(SdMap { polylines })
}

pub fn generate_frame(
    id: u64,
    lanes: usize,
    areas: usize,
    tes: usize,
    layout: Layout,
    rng: &mut ChaCha8Rng,
) -> ArchiveFrame {
    let arc = match layout {
        Layout::Straight => false,
        Layout::Arc => true,
        Layout::Mixed => rng.random_bool(0.5),
    };
    let (lane_segments, ll_edges, heads) = build_lanes(lanes, arc);

    let (mut slots, scale) = area_slots(areas);
    slots.shuffle(rng);
    let areas: Vec<AreaInstance> = slots
        .iter()
        .take(areas)
        .enumerate()
        .map(|(k, &(cx, cy))| {
            let class = if rng.random_bool(0.5) {
                AreaClass::PedestrianCrossing
            } else {
                AreaClass::RoadBoundary
            };
            let curve = match class {
                AreaClass::PedestrianCrossing => crossing(cx, cy, scale),
                AreaClass::RoadBoundary => road_boundary(cx, cy, scale),
            };
            AreaInstance {
                id: k as u64,
                class,
                confidence: 1.0,
                curve,
            }
        })
        .collect();

    let (mut slots, size) = te_slots(tes);
    slots.shuffle(rng);
    let traffic_elements: Vec<TrafficElement> = slots
        .iter()
        .take(tes)
        .enumerate()
        .map(|(k, &(x, y))| TrafficElement {
            id: k as u64,
            class_id: rng.random_range(0..DEFAULT_TE_CLASSES),
            confidence: 1.0,
            bbox: BBox::new(x, y, x + size, y + size),
        })
        .collect();

    let mut frame = Frame {
        id,
        lane_segments,
        areas,
        traffic_elements,
        ..Default::default()
    };
    frame.topology = frame.sized_topology();
    for (i, j) in ll_edges {
        frame.topology.lane_lane.set(i, j, 1.0);
    }
    if !heads.is_empty() {
        for t in 0..frame.traffic_elements.len() {
            frame.topology.lane_traffic.set(heads[t % heads.len()], t, 1.0);
        }
    }
    ArchiveFrame {
        sd_map: sd_map_for(lanes > 0, arc, heads.len()),
        frame,
    }
}

/// A scene of `spec.frames` frames with ids 0, 1, ...; byte-identical for a
/// given spec.
pub fn generate_scene(spec: &SceneSpec) -> SceneArchive {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    SceneArchive {
        scene_id: spec.scene_id.clone(),
        frames: (0..spec.frames)
            .map(|k| {
                generate_frame(
                    k as u64,
                    spec.lanes,
                    spec.areas,
                    spec.traffic_elements,
                    spec.layout,
                    &mut rng,
                )
            })
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JitterMode {
    /// One offset per instance, shared by all of its points and lines.
    #[default]
    Rigid,
    /// Independent offsets per point.
    Noisy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationSpec {
    /// Standard deviation (m) of planar jitter on lanes and areas.
    pub point_jitter_sigma: f64,
    pub jitter_mode: JitterMode,
    /// Fraction of each instance type removed per frame (rounded).
    pub drop_rate: f64,
    /// False positives added per type per frame.
    pub false_positive_count: usize,
    /// True-positive confidences are drawn from (1 - noise, 1].
    pub confidence_noise: f64,
    /// Fraction of true edges zeroed and of non-edges raised to 0.5.
    pub topology_flip_rate: f64,
    /// Translation applied to every predicted lane.
    pub rigid_offset: Option<[f64; 3]>,
    pub seed: u64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            point_jitter_sigma: 0.0,
            jitter_mode: JitterMode::Rigid,
            drop_rate: 0.0,
            false_positive_count: 0,
            confidence_noise: 0.0,
            topology_flip_rate: 0.0,
            rigid_offset: None,
            seed: 0,
        }
    }
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        let rate = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Domain(format!("{name} = {v} is outside [0, 1]")))
            }
        };
        rate("drop_rate", self.drop_rate)?;
        rate("confidence_noise", self.confidence_noise)?;
        rate("topology_flip_rate", self.topology_flip_rate)?;
        if !(self.point_jitter_sigma >= 0.0 && self.point_jitter_sigma.is_finite()) {
            return Err(Error::Domain("point_jitter_sigma must be finite and >= 0".into()));
        }
        if self.rigid_offset.is_some_and(|o| o.iter().any(|v| !v.is_finite())) {
            return Err(Error::Domain("rigid_offset must be finite".into()));
        }
        Ok(())
    }
}

/// Metric values forced by construction. `None` where the perturbation makes
/// the value depend on sampled geometry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpectedOutcome {
    pub det_l_frechet: Option<f64>,
    pub det_l_chamfer: Option<f64>,
    pub det_l: Option<f64>,
    pub det_a: Option<f64>,
    pub det_t: Option<f64>,
    pub top_ll: Option<f64>,
    pub top_lt: Option<f64>,
    pub olus: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Perturbed {
    pub archive: SceneArchive,
    pub expected: ExpectedOutcome,
}

/// Ground-truth and kept counts per class, pooled over frames.
#[derive(Default)]
struct ClassTally {
    gt: BTreeMap<u32, usize>,
    kept: BTreeMap<u32, usize>,
    fp_classes: BTreeSet<u32>,
}

impl ClassTally {
    /// Class-mean AP when every kept prediction is a true positive ranked
    /// above every false positive, or all are misses when `hit` is false.
    fn ap(&self, hit: bool) -> f64 {
        let classes: BTreeSet<u32> = self
            .gt
            .keys()
            .chain(self.kept.keys())
            .chain(&self.fp_classes)
            .copied()
            .collect();
        if classes.is_empty() {
            return 1.0;
        }
        let sum: f64 = classes
            .iter()
            .map(|c| {
                let n = self.gt.get(c).copied().unwrap_or(0);
                let k = self.kept.get(c).copied().unwrap_or(0);
                if n == 0 || !hit {
                    0.0
                } else {
                    k as f64 / n as f64
                }
            })
            .sum();
        sum / classes.len() as f64
    }
}

fn drop_mask(n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let k = ((rate * n as f64).round() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut keep = vec![true; n];
    for &i in &idx[..k] {
        keep[i] = false;
    }
    keep
}

fn jitter_line(line: &Polyline3, shift: Point3, per_point: Option<(&Normal<f64>, &mut ChaCha8Rng)>) -> Polyline3 {
    match per_point {
        None => line.translated(shift),
        Some((normal, rng)) => Polyline3 {
            points: line
                .points
                .iter()
                .map(|p| *p + Point3::new(normal.sample(rng), normal.sample(rng), 0.0))
                .collect(),
        },
    }
}

type IndexMaps<'a> = (&'a [Option<usize>], &'a [Option<usize>]);

/// Copies ground-truth edges into prediction index space. With a non-zero
/// `flip` rate every pair is visited: true edges are zeroed and non-edges set
/// to 0.5 with that probability. Returns the zeroed edges in ground-truth
/// indices.
fn flip_topology(
    gt: &TopologyMatrix,
    pred: &mut TopologyMatrix,
    rows: IndexMaps<'_>,
    cols: IndexMaps<'_>,
    skip_diagonal: bool,
    flip: f64,
    rng: &mut ChaCha8Rng,
) -> BTreeSet<(usize, usize)> {
    let mut zeroed = BTreeSet::new();
    if flip == 0.0 {
        for (a, b, s) in gt.edges() {
            if let (Some(Some(i)), Some(Some(j))) = (rows.0.get(a), cols.0.get(b)) {
                if s > 0.0 {
                    pred.set(*i, *j, 1.0);
                }
            }
        }
        return zeroed;
    }
    for (pi, gi) in rows.1.iter().enumerate() {
        for (pj, gj) in cols.1.iter().enumerate() {
            if skip_diagonal && pi == pj {
                continue;
            }
            let truth = match (gi, gj) {
                (Some(a), Some(b)) => gt.get(*a, *b) > 0.0,
                _ => false,
            };
            match (truth, rng.random_bool(flip)) {
                (true, false) => pred.set(pi, pj, 1.0),
                (true, true) => {
                    zeroed.insert((gi.unwrap(), gj.unwrap()));
                }
                (false, true) => pred.set(pi, pj, 0.5),
                (false, false) => {}
            }
        }
    }
    zeroed
}

/// Applies `spec` to a ground-truth archive, scoring the closed forms with
/// the default metric configuration.
pub fn perturb(archive: &SceneArchive, spec: &PerturbationSpec) -> Result<Perturbed> {
    perturb_with(archive, spec, &MetricConfig::default())
}

pub fn perturb_with(archive: &SceneArchive, spec: &PerturbationSpec, cfg: &MetricConfig) -> Result<Perturbed> {
    spec.validate()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sigma = spec.point_jitter_sigma;
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("sigma is finite");
    let offset = spec.rigid_offset.map(|[x, y, z]| Point3::new(x, y, z));
    let noise = spec.confidence_noise;
    let tp_conf = |rng: &mut ChaCha8Rng| 1.0 - noise * rng.random::<f64>();
    let fp_conf = |rng: &mut ChaCha8Rng| 0.5 * (1.0 - noise) * rng.random::<f64>();

    let (mut lane_t, mut area_t, mut te_t) = (ClassTally::default(), ClassTally::default(), ClassTally::default());
    let (mut ll_vertices, mut lt_vertices) = (Vec::new(), Vec::new());
    let mut frames = Vec::with_capacity(archive.frames.len());

    for af in &archive.frames {
        let gt = &af.frame;
        let keep_l = drop_mask(gt.lane_segments.len(), spec.drop_rate, &mut rng);
        let keep_a = drop_mask(gt.areas.len(), spec.drop_rate, &mut rng);
        let keep_t = drop_mask(gt.traffic_elements.len(), spec.drop_rate, &mut rng);

        let mut pred = Frame::empty(gt.id);
        let mut lane_map = vec![None; gt.lane_segments.len()];
        for (i, l) in gt.lane_segments.iter().enumerate() {
            *lane_t.gt.entry(l.class_id).or_default() += 1;
            if !keep_l[i] {
                continue;
            }
            *lane_t.kept.entry(l.class_id).or_default() += 1;
            let mut p = l.clone();
            if sigma > 0.0 {
                match spec.jitter_mode {
                    JitterMode::Rigid => {
                        let d = Point3::new(normal.sample(&mut rng), normal.sample(&mut rng), 0.0);
                        p = p.translated(d);
                    }
                    JitterMode::Noisy => {
                        p.centerline = jitter_line(&p.centerline, Point3::default(), Some((&normal, &mut rng)));
                        p.left_boundary = jitter_line(&p.left_boundary, Point3::default(), Some((&normal, &mut rng)));
                        p.right_boundary = jitter_line(&p.right_boundary, Point3::default(), Some((&normal, &mut rng)));
                    }
                }
            }
            if let Some(d) = offset {
                p = p.translated(d);
            }
            p.confidence = tp_conf(&mut rng);
            lane_map[i] = Some(pred.lane_segments.len());
            pred.lane_segments.push(p);
        }
        for (i, a) in gt.areas.iter().enumerate() {
            *area_t.gt.entry(a.class.index()).or_default() += 1;
            if !keep_a[i] {
                continue;
            }
            *area_t.kept.entry(a.class.index()).or_default() += 1;
            let mut p = a.clone();
            if sigma > 0.0 {
                p.curve = match spec.jitter_mode {
                    JitterMode::Rigid => {
                        let d = Point3::new(normal.sample(&mut rng), normal.sample(&mut rng), 0.0);
                        p.curve.translated(d)
                    }
                    JitterMode::Noisy => jitter_line(&p.curve, Point3::default(), Some((&normal, &mut rng))),
                };
            }
            p.confidence = tp_conf(&mut rng);
            pred.areas.push(p);
        }
        let mut te_map = vec![None; gt.traffic_elements.len()];
        for (i, t) in gt.traffic_elements.iter().enumerate() {
            *te_t.gt.entry(t.class_id).or_default() += 1;
            if !keep_t[i] {
                continue;
            }
            *te_t.kept.entry(t.class_id).or_default() += 1;
            let mut p = t.clone();
            p.confidence = tp_conf(&mut rng);
            te_map[i] = Some(pred.traffic_elements.len());
            pred.traffic_elements.push(p);
        }

        // False positives, far from every ground-truth instance.
        let area_classes: Vec<AreaClass> = gt.areas.iter().map(|a| a.class).collect();
        let te_classes: Vec<u32> = gt.traffic_elements.iter().map(|t| t.class_id).collect();
        for k in 0..spec.false_positive_count {
            let side = if k % 2 == 0 { -1.0 } else { 1.0 };
            let x0 = X_START + 10.0 * ((k / 2) % 9) as f64;
            let [centerline, left_boundary, right_boundary] = lane_lines(false, side * FP_LANE_Y, 0.0, 10.0)
                .map(|l| l.translated(Point3::new(x0 - X_START, 0.0, 0.0)));
            lane_t.fp_classes.insert(0);
            pred.lane_segments.push(LaneSegment {
                id: FP_ID_BASE + k as u64,
                class_id: 0,
                left_type: 2,
                right_type: 2,
                confidence: fp_conf(&mut rng),
                centerline,
                left_boundary,
                right_boundary,
            });

            let class = if area_classes.is_empty() {
                AreaClass::ALL[k % 2]
            } else {
                area_classes[rng.random_range(0..area_classes.len())]
            };
            area_t.fp_classes.insert(class.index());
            let (cx, cy) = (-40.0 + 10.0 * ((k / 2) % 9) as f64, side * FP_AREA_Y);
            pred.areas.push(AreaInstance {
                id: FP_ID_BASE + k as u64,
                class,
                confidence: fp_conf(&mut rng),
                curve: match class {
                    AreaClass::PedestrianCrossing => crossing(cx, cy, 1.0),
                    AreaClass::RoadBoundary => road_boundary(cx, cy, 1.0),
                },
            });

            let class_id = if te_classes.is_empty() {
                (k as u32) % DEFAULT_TE_CLASSES
            } else {
                te_classes[rng.random_range(0..te_classes.len())]
            };
            te_t.fp_classes.insert(class_id);
            let (x, y) = (40.0 + 100.0 * (k % 15) as f64, 1600.0 + 100.0 * ((k / 15) % 3) as f64);
            pred.traffic_elements.push(TrafficElement {
                id: FP_ID_BASE + k as u64,
                class_id,
                confidence: fp_conf(&mut rng),
                bbox: BBox::new(x, y, x + 60.0, y + 60.0),
            });
        }

        // Topology in prediction index space.
        pred.topology = pred.sized_topology();
        let flip = spec.topology_flip_rate;
        let mut inverse_lane = vec![None; pred.lane_segments.len()];
        for (g, p) in lane_map.iter().enumerate() {
            if let Some(p) = p {
                inverse_lane[*p] = Some(g);
            }
        }
        let mut inverse_te = vec![None; pred.traffic_elements.len()];
        for (g, p) in te_map.iter().enumerate() {
            if let Some(p) = p {
                inverse_te[*p] = Some(g);
            }
        }
        let zeroed_ll = flip_topology(
            &gt.topology.lane_lane,
            &mut pred.topology.lane_lane,
            (&lane_map, &inverse_lane),
            (&lane_map, &inverse_lane),
            true,
            flip,
            &mut rng,
        );
        let zeroed_lt = flip_topology(
            &gt.topology.lane_traffic,
            &mut pred.topology.lane_traffic,
            (&lane_map, &inverse_lane),
            (&te_map, &inverse_te),
            false,
            flip,
            &mut rng,
        );

        // Per-vertex recall of surviving edges.
        for v in 0..gt.lane_segments.len() {
            let edges: Vec<usize> = gt
                .topology
                .lane_lane
                .row(v)
                .filter(|&(_, s)| s > 0.0)
                .map(|(j, _)| j)
                .collect();
            if !edges.is_empty() {
                let hit = edges
                    .iter()
                    .filter(|&&j| keep_l[v] && keep_l[j] && !zeroed_ll.contains(&(v, j)))
                    .count();
                ll_vertices.push(hit as f64 / edges.len() as f64);
            }
            let edges: Vec<usize> = gt
                .topology
                .lane_traffic
                .row(v)
                .filter(|&(_, s)| s > 0.0)
                .map(|(j, _)| j)
                .collect();
            if !edges.is_empty() {
                let hit = edges
                    .iter()
                    .filter(|&&t| keep_l[v] && keep_t[t] && !zeroed_lt.contains(&(v, t)))
                    .count();
                lt_vertices.push(hit as f64 / edges.len() as f64);
            }
        }

        frames.push(ArchiveFrame {
            frame: pred,
            sd_map: af.sd_map.clone(),
        });
    }

    // Closed forms hold when kept predictions coincide with their ground
    // truth up to the rigid offset.
    let exact = sigma == 0.0;
    let d = offset.map_or(0.0, |o| o.norm());
    let lanes_exact = exact && d < cfg.topology_lane_threshold;
    let mean = |v: &[f64]| {
        if v.is_empty() {
            1.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let mut expected = ExpectedOutcome::default();
    if exact {
        let f = cfg.frechet_thresholds.iter().map(|&t| lane_t.ap(d <= t)).sum::<f64>()
            / cfg.frechet_thresholds.len() as f64;
        expected.det_l_frechet = Some(f);
        if d == 0.0 {
            let c = lane_t.ap(true);
            expected.det_l_chamfer = Some(c);
            expected.det_l = Some(match cfg.lane_combination {
                crate::metrics::LaneCombination::Mean => (f + c) / 2.0,
                crate::metrics::LaneCombination::Composite => c,
            });
        }
        expected.det_a = Some(area_t.ap(true));
    }
    expected.det_t = Some(te_t.ap(true));
    if lanes_exact {
        expected.top_ll = Some(mean(&ll_vertices));
        expected.top_lt = Some(mean(&lt_vertices));
    }
    if let (Some(l), Some(a), Some(t), Some(ll), Some(lt)) = (
        expected.det_l,
        expected.det_a,
        expected.det_t,
        expected.top_ll,
        expected.top_lt,
    ) {
        expected.olus = Some(crate::metrics::olus(l, a, t, ll, lt)?);
    }

    Ok(Perturbed {
        archive: SceneArchive {
            scene_id: archive.scene_id.clone(),
            frames,
        },
        expected,
    })
}
