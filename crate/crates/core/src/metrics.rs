//! Detection and topology metrics and their OLUS aggregate.
//!
//! * `DET_l`: lane segments. Centerline discrete Fréchet AP and boundary
//!   Chamfer AP, combined by arithmetic mean (configurable).
//! * `DET_a`: areas, symmetric Chamfer AP on resampled curves.
//! * `DET_t`: traffic elements, IoU AP.
//! * `TOP_ll` / `TOP_lt`: per-vertex AP of projected topology scores.
//! * `OLUS = (DET_l + DET_a + DET_t + √TOP_ll + √TOP_lt) / 5`.
//!
//! Detection APs pool detections over all frames, average over thresholds
//! first and then over classes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::assignment::{average_precision, match_sparse, ApInput, CostMatrix, Detection, Interpolation};
use crate::error::{Error, Result};
use crate::geometry::{self, bounds, bounds_gap, DistanceMode};
use crate::model::{AreaClass, Frame, Point3, DEFAULT_TE_CLASSES};

/// How the two lane AP families are merged into `DET_l`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneCombination {
    /// Arithmetic mean of the Fréchet-family and Chamfer-family APs.
    #[default]
    Mean,
    /// A single AP family whose k-th gate requires both the k-th Fréchet and
    /// the k-th Chamfer threshold.
    Composite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub frechet_thresholds: Vec<f64>,
    pub chamfer_thresholds: Vec<f64>,
    pub iou_thresholds: Vec<f64>,
    /// Centerline Fréchet gate used to match lanes before scoring topology.
    pub topology_lane_threshold: f64,
    /// IoU gate used to match traffic elements before scoring topology.
    pub topology_te_iou: f64,
    pub interpolation: Interpolation,
    /// Leave classes with neither ground truth nor predictions out of the
    /// class mean (otherwise they score 1.0 over the whole vocabulary).
    pub exclude_empty_classes: bool,
    pub lane_combination: LaneCombination,
    /// Area curves are resampled to this many points before Chamfer.
    pub area_resample_points: usize,
    pub distance_mode: DistanceMode,
    pub lane_classes: u32,
    pub te_classes: u32,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            frechet_thresholds: vec![1.0, 2.0, 3.0],
            chamfer_thresholds: vec![0.5, 1.0, 1.5],
            iou_thresholds: vec![0.75],
            topology_lane_threshold: 2.0,
            topology_te_iou: 0.75,
            interpolation: Interpolation::AllPoint,
            exclude_empty_classes: true,
            lane_combination: LaneCombination::Mean,
            area_resample_points: 100,
            distance_mode: DistanceMode::Full3d,
            lane_classes: 1,
            te_classes: DEFAULT_TE_CLASSES,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, list: &[f64], upper: f64| -> Result<()> {
            if list.is_empty() {
                return Err(Error::Domain(format!("{name} must not be empty")));
            }
            if list.iter().any(|&t| !(t > 0.0 && t <= upper)) {
                return Err(Error::Domain(format!("{name} must be positive (and at most {upper})")));
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Domain(format!("{name} must be strictly increasing")));
            }
            Ok(())
        };
        check("frechet_thresholds", &self.frechet_thresholds, f64::INFINITY)?;
        check("chamfer_thresholds", &self.chamfer_thresholds, f64::INFINITY)?;
        check("iou_thresholds", &self.iou_thresholds, 1.0)?;
        if !(self.topology_lane_threshold > 0.0) || !(self.topology_te_iou > 0.0 && self.topology_te_iou <= 1.0) {
            return Err(Error::Domain("topology gates must be positive (IoU at most 1)".into()));
        }
        if self.area_resample_points < 2 {
            return Err(Error::Domain("area_resample_points must be at least 2".into()));
        }
        if self.lane_combination == LaneCombination::Composite
            && self.frechet_thresholds.len() != self.chamfer_thresholds.len()
        {
            return Err(Error::Domain(
                "composite lane gating needs equally many Fréchet and Chamfer thresholds".into(),
            ));
        }
        Ok(())
    }
}

/// Ground-truth and predicted versions of the same frame.
#[derive(Clone, Copy, Debug)]
pub struct FramePair<'a> {
    pub gt: &'a Frame,
    pub pred: &'a Frame,
}

/// Pairs frames positionally and checks that their ids agree.
pub fn align<'a>(gt: &'a [Frame], pred: &'a [Frame]) -> Result<Vec<FramePair<'a>>> {
    for (k, (g, p)) in gt.iter().zip(pred).enumerate() {
        if g.id != p.id {
            return Err(Error::Alignment(format!(
                "frame #{k}: ground truth id {} vs prediction id {}",
                g.id, p.id
            )));
        }
    }
    if gt.len() != pred.len() {
        return Err(Error::Alignment(format!(
            "{} ground-truth frames vs {} prediction frames",
            gt.len(),
            pred.len()
        )));
    }
    Ok(gt.iter().zip(pred).map(|(gt, pred)| FramePair { gt, pred }).collect())
}

/// One AP-scored metric with its breakdowns.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetBreakdown {
    pub value: f64,
    /// Mean over thresholds, per class.
    pub per_class: BTreeMap<String, f64>,
    /// Mean over classes, per threshold.
    pub per_threshold: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LaneBreakdown {
    pub value: f64,
    pub frechet: Option<DetBreakdown>,
    pub chamfer: Option<DetBreakdown>,
    pub composite: Option<DetBreakdown>,
}

/// Dataset-level counts recorded alongside the metrics.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub frames: usize,
    pub gt_lanes: usize,
    pub pred_lanes: usize,
    pub gt_areas: usize,
    pub pred_areas: usize,
    pub gt_traffic_elements: usize,
    pub pred_traffic_elements: usize,
    pub topology_ll_vertices: usize,
    pub topology_lt_vertices: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub det_l: f64,
    pub det_a: f64,
    pub det_t: f64,
    pub top_ll: f64,
    pub top_lt: f64,
    pub olus: f64,
    /// `<metric>/<class>` -> AP averaged over thresholds.
    pub per_class: BTreeMap<String, f64>,
    /// `<metric>@<threshold>` -> AP averaged over classes.
    pub per_threshold: BTreeMap<String, f64>,
    pub counts: ReportCounts,
    pub config: MetricConfig,
}

impl MetricsReport {
    pub fn recomputed_olus(&self) -> Result<f64> {
        olus(self.det_l, self.det_a, self.det_t, self.top_ll, self.top_lt)
    }
}

/// `(det_l + det_a + det_t + √top_ll + √top_lt) / 5`.
pub fn olus(det_l: f64, det_a: f64, det_t: f64, top_ll: f64, top_lt: f64) -> Result<f64> {
    for (name, v) in [
        ("det_l", det_l),
        ("det_a", det_a),
        ("det_t", det_t),
        ("top_ll", top_ll),
        ("top_lt", top_lt),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("{name} = {v} is outside [0, 1]")));
        }
    }
    Ok((det_l + det_a + det_t + top_ll.sqrt() + top_lt.sqrt()) / 5.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Family {
    LaneFrechet,
    LaneChamfer,
    LaneComposite,
    Area,
    Traffic,
}

/// Per (family, class, threshold index) detection pools.
type Pools = BTreeMap<(Family, u32, usize), ApInput>;

#[derive(Default)]
struct FrameOutcome {
    pools: Pools,
    ll_vertex_ap: Vec<f64>,
    lt_vertex_ap: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Want {
    lanes: bool,
    areas: bool,
    traffic: bool,
    topology: bool,
}

impl Want {
    const ALL: Want = Want {
        lanes: true,
        areas: true,
        traffic: true,
        topology: true,
    };
}

fn push_detections(pools: &mut Pools, key: (Family, u32, usize), dets: Vec<Detection>, n_gt: usize) {
    let input = ApInput::new(dets, n_gt).expect("one-to-one matching cannot exceed ground truth");
    pools.entry(key).or_default().extend(input);
}

/// Scores one gated matching into per-class detection pools.
#[allow(clippy::too_many_arguments)]
fn pool_matching(
    pools: &mut Pools,
    family: Family,
    threshold_idx: usize,
    pred_classes: &[u32],
    pred_conf: &[f64],
    gt_classes: &[u32],
    cost: &CostMatrix,
) {
    let mut tp = vec![false; pred_classes.len()];
    for (i, _) in match_sparse(cost) {
        tp[i] = true;
    }
    let classes: BTreeSet<u32> = pred_classes.iter().chain(gt_classes).copied().collect();
    for c in classes {
        let dets = (0..pred_classes.len())
            .filter(|&i| pred_classes[i] == c)
            .map(|i| Detection::new(pred_conf[i], tp[i]))
            .collect();
        let n_gt = gt_classes.iter().filter(|&&g| g == c).count();
        push_detections(pools, (family, c, threshold_idx), dets, n_gt);
    }
}

fn gate(cost: &CostMatrix, threshold: f64) -> CostMatrix {
    CostMatrix::from_fn(cost.rows(), cost.cols(), |i, j| {
        let d = cost.get(i, j);
        if d <= threshold {
            d
        } else {
            f64::INFINITY
        }
    })
}

struct LaneDistances {
    frechet: CostMatrix,
    chamfer: CostMatrix,
}

fn endpoints_bound(a: &[Point3], b: &[Point3], mode: DistanceMode) -> f64 {
    match (a.first(), b.first(), a.last(), b.last()) {
        (Some(a0), Some(b0), Some(a1), Some(b1)) => mode.distance(a0, b0).max(mode.distance(a1, b1)),
        _ => f64::INFINITY,
    }
}

/// Pairwise lane distances among same-class pairs. Pairs whose cheap lower
/// bound already exceeds the cutoff are left infinite.
fn lane_distances(
    gt: &Frame,
    pred: &Frame,
    cfg: &MetricConfig,
    frechet_cutoff: f64,
    chamfer_cutoff: f64,
) -> LaneDistances {
    let mode = cfg.distance_mode;
    let (np, ng) = (pred.lane_segments.len(), gt.lane_segments.len());
    let mut frechet = CostMatrix::filled(np, ng, f64::INFINITY);
    let mut chamfer = CostMatrix::filled(np, ng, f64::INFINITY);
    let bounds_of = |f: &Frame| -> Vec<_> {
        f.lane_segments
            .iter()
            .map(|l| (bounds(&l.left_boundary.points), bounds(&l.right_boundary.points)))
            .collect()
    };
    let (gb, pb) = (bounds_of(gt), bounds_of(pred));
    for (i, p) in pred.lane_segments.iter().enumerate() {
        for (j, g) in gt.lane_segments.iter().enumerate() {
            if p.class_id != g.class_id {
                continue;
            }
            let (pc, gc) = (&p.centerline.points, &g.centerline.points);
            if endpoints_bound(pc, gc, mode) <= frechet_cutoff {
                if let Ok(d) = geometry::discrete_frechet_with(pc, gc, mode) {
                    frechet.set(i, j, d);
                }
            }
            let gap = (bounds_gap(&pb[i].0, &gb[j].0, mode) + bounds_gap(&pb[i].1, &gb[j].1, mode)) / 2.0;
            if gap <= chamfer_cutoff {
                let left = geometry::chamfer_with(&p.left_boundary.points, &g.left_boundary.points, mode);
                let right = geometry::chamfer_with(&p.right_boundary.points, &g.right_boundary.points, mode);
                if let (Ok(l), Ok(r)) = (left, right) {
                    chamfer.set(i, j, (l.symmetric + r.symmetric) / 2.0);
                }
            }
        }
    }
    LaneDistances { frechet, chamfer }
}

fn max_of(list: &[f64]) -> f64 {
    list.iter().copied().fold(0.0, f64::max)
}

fn frame_outcome(pair: &FramePair<'_>, cfg: &MetricConfig, want: Want) -> Result<FrameOutcome> {
    let (gt, pred) = (pair.gt, pair.pred);
    let mut out = FrameOutcome::default();

    let need_lane_dist = want.lanes || want.topology;
    let lane_dist = need_lane_dist.then(|| {
        let f_cut = if want.lanes {
            max_of(&cfg.frechet_thresholds).max(cfg.topology_lane_threshold)
        } else {
            cfg.topology_lane_threshold
        };
        let c_cut = if want.lanes {
            max_of(&cfg.chamfer_thresholds)
        } else {
            -1.0
        };
        lane_distances(gt, pred, cfg, f_cut, c_cut)
    });

    if want.lanes {
        let dist = lane_dist.as_ref().unwrap();
        let pc: Vec<u32> = pred.lane_segments.iter().map(|l| l.class_id).collect();
        let pconf: Vec<f64> = pred.lane_segments.iter().map(|l| l.confidence).collect();
        let gc: Vec<u32> = gt.lane_segments.iter().map(|l| l.class_id).collect();
        match cfg.lane_combination {
            LaneCombination::Mean => {
                for (k, &t) in cfg.frechet_thresholds.iter().enumerate() {
                    pool_matching(
                        &mut out.pools,
                        Family::LaneFrechet,
                        k,
                        &pc,
                        &pconf,
                        &gc,
                        &gate(&dist.frechet, t),
                    );
                }
                for (k, &t) in cfg.chamfer_thresholds.iter().enumerate() {
                    pool_matching(
                        &mut out.pools,
                        Family::LaneChamfer,
                        k,
                        &pc,
                        &pconf,
                        &gc,
                        &gate(&dist.chamfer, t),
                    );
                }
            }
            LaneCombination::Composite => {
                for (k, (&tf, &tc)) in cfg.frechet_thresholds.iter().zip(&cfg.chamfer_thresholds).enumerate() {
                    let cost = CostMatrix::from_fn(dist.frechet.rows(), dist.frechet.cols(), |i, j| {
                        let (f, c) = (dist.frechet.get(i, j), dist.chamfer.get(i, j));
                        if f <= tf && c <= tc {
                            f + c
                        } else {
                            f64::INFINITY
                        }
                    });
                    pool_matching(&mut out.pools, Family::LaneComposite, k, &pc, &pconf, &gc, &cost);
                }
            }
        }
    }

    if want.areas {
        let n = cfg.area_resample_points;
        let resample = |f: &Frame| -> Result<Vec<Vec<Point3>>> {
            f.areas
                .iter()
                .map(|a| Ok(geometry::resample_polyline(&a.curve, n)?.line.points))
                .collect()
        };
        let (pr, gr) = (resample(pred)?, resample(gt)?);
        let cut = max_of(&cfg.chamfer_thresholds);
        let pb: Vec<_> = pr.iter().map(|p| bounds(p)).collect();
        let gb: Vec<_> = gr.iter().map(|p| bounds(p)).collect();
        let cost = CostMatrix::from_fn(pr.len(), gr.len(), |i, j| {
            if pred.areas[i].class != gt.areas[j].class || bounds_gap(&pb[i], &gb[j], cfg.distance_mode) > cut {
                return f64::INFINITY;
            }
            geometry::chamfer_with(&pr[i], &gr[j], cfg.distance_mode).map_or(f64::INFINITY, |c| c.symmetric)
        });
        let pc: Vec<u32> = pred.areas.iter().map(|a| a.class.index()).collect();
        let pconf: Vec<f64> = pred.areas.iter().map(|a| a.confidence).collect();
        let gc: Vec<u32> = gt.areas.iter().map(|a| a.class.index()).collect();
        for (k, &t) in cfg.chamfer_thresholds.iter().enumerate() {
            pool_matching(&mut out.pools, Family::Area, k, &pc, &pconf, &gc, &gate(&cost, t));
        }
    }

    let te_iou = if want.traffic || want.topology {
        let (p, g) = (&pred.traffic_elements, &gt.traffic_elements);
        let mut iou = CostMatrix::filled(p.len(), g.len(), 0.0);
        for (i, a) in p.iter().enumerate() {
            for (j, b) in g.iter().enumerate() {
                if a.class_id == b.class_id {
                    iou.set(i, j, geometry::box_iou(&a.bbox, &b.bbox)?);
                }
            }
        }
        Some(iou)
    } else {
        None
    };
    let iou_gate = |iou: &CostMatrix, t: f64, classes_ok: &dyn Fn(usize, usize) -> bool| {
        CostMatrix::from_fn(iou.rows(), iou.cols(), |i, j| {
            let v = iou.get(i, j);
            if classes_ok(i, j) && v >= t {
                1.0 - v
            } else {
                f64::INFINITY
            }
        })
    };
    let same_te_class = |i: usize, j: usize| pred.traffic_elements[i].class_id == gt.traffic_elements[j].class_id;

    if want.traffic {
        let iou = te_iou.as_ref().unwrap();
        let pc: Vec<u32> = pred.traffic_elements.iter().map(|t| t.class_id).collect();
        let pconf: Vec<f64> = pred.traffic_elements.iter().map(|t| t.confidence).collect();
        let gc: Vec<u32> = gt.traffic_elements.iter().map(|t| t.class_id).collect();
        for (k, &t) in cfg.iou_thresholds.iter().enumerate() {
            pool_matching(
                &mut out.pools,
                Family::Traffic,
                k,
                &pc,
                &pconf,
                &gc,
                &iou_gate(iou, t, &same_te_class),
            );
        }
    }

    if want.topology {
        check_topology_dims(gt)?;
        check_topology_dims(pred)?;
        let dist = lane_dist.as_ref().unwrap();
        let lane_pairs = match_sparse(&gate(&dist.frechet, cfg.topology_lane_threshold));
        let te_pairs = match_sparse(&iou_gate(te_iou.as_ref().unwrap(), cfg.topology_te_iou, &same_te_class));

        let mut gt_to_pred = vec![None; gt.lane_segments.len()];
        let mut pred_to_gt = vec![None; pred.lane_segments.len()];
        for &(p, g) in &lane_pairs {
            gt_to_pred[g] = Some(p);
            pred_to_gt[p] = Some(g);
        }
        let mut pred_te_to_gt = vec![None; pred.traffic_elements.len()];
        for &(p, g) in &te_pairs {
            pred_te_to_gt[p] = Some(g);
        }

        out.ll_vertex_ap = vertex_aps(
            &gt.topology.lane_lane,
            &pred.topology.lane_lane,
            &gt_to_pred,
            &pred_to_gt,
            cfg.interpolation,
        );
        out.lt_vertex_ap = vertex_aps(
            &gt.topology.lane_traffic,
            &pred.topology.lane_traffic,
            &gt_to_pred,
            &pred_te_to_gt,
            cfg.interpolation,
        );
    }
    Ok(out)
}

fn check_topology_dims(f: &Frame) -> Result<()> {
    let (n, m) = (f.lane_segments.len(), f.traffic_elements.len());
    let (ll, lt) = (&f.topology.lane_lane, &f.topology.lane_traffic);
    if (ll.rows, ll.cols) != (n, n) || (lt.rows, lt.cols) != (n, m) {
        return Err(Error::shape(format!(
            "frame {}: topology {}x{} / {}x{} does not match {n} lanes and {m} traffic elements",
            f.id, ll.rows, ll.cols, lt.rows, lt.cols
        )));
    }
    Ok(())
}

/// AP of every ground-truth row that has at least one edge. Predicted scores
/// are projected into ground-truth index space through the matchings;
/// edges touching an unmatched instance score 0 and are not ranked.
fn vertex_aps(
    gt: &crate::model::TopologyMatrix,
    pred: &crate::model::TopologyMatrix,
    gt_row_to_pred: &[Option<usize>],
    pred_col_to_gt: &[Option<usize>],
    interpolation: Interpolation,
) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, pred_row) in gt_row_to_pred.iter().enumerate() {
        let n_edges = gt.row(i).filter(|&(_, s)| s > 0.0).count();
        if n_edges == 0 {
            continue;
        }
        let mut ranked: Vec<(usize, f64)> = match pred_row {
            Some(pr) => pred
                .row(*pr)
                .filter(|&(_, s)| s > 0.0)
                .filter_map(|(pc, s)| pred_col_to_gt.get(pc).copied().flatten().map(|j| (j, s)))
                .collect(),
            None => Vec::new(),
        };
        ranked.sort_by_key(|&(j, _)| j);
        let dets = ranked
            .into_iter()
            .map(|(j, s)| Detection::new(s, gt.get(i, j) > 0.0))
            .collect();
        let input = ApInput::new(dets, n_edges).expect("projected edges are unique per column");
        out.push(average_precision(&input, interpolation));
    }
    out
}

fn outcomes(pairs: &[FramePair<'_>], cfg: &MetricConfig, want: Want, workers: usize) -> Result<Vec<FrameOutcome>> {
    cfg.validate()?;
    let run = |p: &FramePair<'_>| frame_outcome(p, cfg, want);
    #[cfg(feature = "parallel")]
    if workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
        return pool.install(|| pairs.par_iter().map(run).collect());
    }
    let _ = workers;
    pairs.iter().map(run).collect()
}

/// Merges per-frame pools in frame order so the result does not depend on
/// scheduling.
fn merge_pools(outcomes: &[FrameOutcome]) -> Pools {
    let mut pools = Pools::new();
    for o in outcomes {
        for (k, v) in &o.pools {
            pools.entry(*k).or_default().extend(v.clone());
        }
    }
    pools
}

fn reduce_family(
    pools: &Pools,
    family: Family,
    thresholds: &[f64],
    vocabulary: &[u32],
    class_name: &dyn Fn(u32) -> String,
    cfg: &MetricConfig,
) -> DetBreakdown {
    let mut classes: BTreeSet<u32> = pools.keys().filter(|k| k.0 == family).map(|k| k.1).collect();
    if !cfg.exclude_empty_classes {
        classes.extend(vocabulary.iter().copied());
    }
    // A class with neither ground truth nor detections is vacuous.
    if cfg.exclude_empty_classes {
        classes.retain(|&c| {
            (0..thresholds.len()).any(|k| {
                pools
                    .get(&(family, c, k))
                    .is_some_and(|p| p.num_ground_truth() > 0 || !p.detections().is_empty())
            })
        });
    }
    if classes.is_empty() {
        return DetBreakdown {
            value: 1.0,
            per_class: BTreeMap::new(),
            per_threshold: thresholds.iter().map(|&t| (t, 1.0)).collect(),
        };
    }
    let empty = ApInput::default();
    let ap = |c: u32, k: usize| average_precision(pools.get(&(family, c, k)).unwrap_or(&empty), cfg.interpolation);
    let per_class: BTreeMap<String, f64> = classes
        .iter()
        .map(|&c| {
            let mean = (0..thresholds.len()).map(|k| ap(c, k)).sum::<f64>() / thresholds.len() as f64;
            (class_name(c), mean)
        })
        .collect();
    let per_threshold = thresholds
        .iter()
        .enumerate()
        .map(|(k, &t)| (t, classes.iter().map(|&c| ap(c, k)).sum::<f64>() / classes.len() as f64))
        .collect();
    let value = per_class.values().sum::<f64>() / per_class.len() as f64;
    DetBreakdown {
        value,
        per_class,
        per_threshold,
    }
}

fn lane_breakdown(pools: &Pools, cfg: &MetricConfig) -> LaneBreakdown {
    let vocab: Vec<u32> = (0..cfg.lane_classes).collect();
    let name = |c: u32| c.to_string();
    match cfg.lane_combination {
        LaneCombination::Mean => {
            let f = reduce_family(pools, Family::LaneFrechet, &cfg.frechet_thresholds, &vocab, &name, cfg);
            let c = reduce_family(pools, Family::LaneChamfer, &cfg.chamfer_thresholds, &vocab, &name, cfg);
            LaneBreakdown {
                value: (f.value + c.value) / 2.0,
                frechet: Some(f),
                chamfer: Some(c),
                composite: None,
            }
        }
        LaneCombination::Composite => {
            let c = reduce_family(
                pools,
                Family::LaneComposite,
                &cfg.frechet_thresholds,
                &vocab,
                &name,
                cfg,
            );
            LaneBreakdown {
                value: c.value,
                frechet: None,
                chamfer: None,
                composite: Some(c),
            }
        }
    }
}

fn area_breakdown(pools: &Pools, cfg: &MetricConfig) -> DetBreakdown {
    let vocab: Vec<u32> = AreaClass::ALL.iter().map(|c| c.index()).collect();
    let name = |c: u32| AreaClass::ALL[c as usize].name().to_string();
    reduce_family(pools, Family::Area, &cfg.chamfer_thresholds, &vocab, &name, cfg)
}

fn traffic_breakdown(pools: &Pools, cfg: &MetricConfig) -> DetBreakdown {
    let vocab: Vec<u32> = (0..cfg.te_classes).collect();
    reduce_family(
        pools,
        Family::Traffic,
        &cfg.iou_thresholds,
        &vocab,
        &|c| c.to_string(),
        cfg,
    )
}

fn mean_or_vacuous(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        (1.0, 0)
    } else {
        (sum / n as f64, n)
    }
}

pub fn det_l(pairs: &[FramePair<'_>], cfg: &MetricConfig) -> Result<LaneBreakdown> {
    let want = Want {
        lanes: true,
        areas: false,
        traffic: false,
        topology: false,
    };
    Ok(lane_breakdown(&merge_pools(&outcomes(pairs, cfg, want, 1)?), cfg))
}

pub fn det_a(pairs: &[FramePair<'_>], cfg: &MetricConfig) -> Result<DetBreakdown> {
    let want = Want {
        lanes: false,
        areas: true,
        traffic: false,
        topology: false,
    };
    Ok(area_breakdown(&merge_pools(&outcomes(pairs, cfg, want, 1)?), cfg))
}

pub fn det_t(pairs: &[FramePair<'_>], cfg: &MetricConfig) -> Result<DetBreakdown> {
    let want = Want {
        lanes: false,
        areas: false,
        traffic: true,
        topology: false,
    };
    Ok(traffic_breakdown(&merge_pools(&outcomes(pairs, cfg, want, 1)?), cfg))
}

fn topology_only(pairs: &[FramePair<'_>], cfg: &MetricConfig) -> Result<Vec<FrameOutcome>> {
    let want = Want {
        lanes: false,
        areas: false,
        traffic: false,
        topology: true,
    };
    outcomes(pairs, cfg, want, 1)
}

/// Lane–lane topology mAP over all ground-truth lanes with outgoing edges.
pub fn top_ll(pairs: &[FramePair<'_>], cfg: &MetricConfig) -> Result<f64> {
    let o = topology_only(pairs, cfg)?;
    Ok(mean_or_vacuous(o.iter().flat_map(|f| f.ll_vertex_ap.iter().copied())).0)
}

/// Lane–traffic-element topology mAP over ground-truth lanes with edges.
pub fn top_lt(pairs: &[FramePair<'_>], cfg: &MetricConfig) -> Result<f64> {
    let o = topology_only(pairs, cfg)?;
    Ok(mean_or_vacuous(o.iter().flat_map(|f| f.lt_vertex_ap.iter().copied())).0)
}

/// Runs every metric over aligned frames. `workers` > 1 evaluates frames in
/// parallel; the report is identical for any worker count.
pub fn evaluate(pairs: &[FramePair<'_>], cfg: &MetricConfig, workers: usize) -> Result<MetricsReport> {
    let outs = outcomes(pairs, cfg, Want::ALL, workers.max(1))?;
    let pools = merge_pools(&outs);
    let lanes = lane_breakdown(&pools, cfg);
    let areas = area_breakdown(&pools, cfg);
    let traffic = traffic_breakdown(&pools, cfg);
    let (top_ll, ll_n) = mean_or_vacuous(outs.iter().flat_map(|f| f.ll_vertex_ap.iter().copied()));
    let (top_lt, lt_n) = mean_or_vacuous(outs.iter().flat_map(|f| f.lt_vertex_ap.iter().copied()));

    let mut per_class = BTreeMap::new();
    let mut per_threshold = BTreeMap::new();
    let mut record = |prefix: &str, b: &DetBreakdown| {
        for (c, v) in &b.per_class {
            per_class.insert(format!("{prefix}/{c}"), *v);
        }
        for (t, v) in &b.per_threshold {
            per_threshold.insert(format!("{prefix}@{t}"), *v);
        }
    };
    for (name, b) in [
        ("det_l.frechet", &lanes.frechet),
        ("det_l.chamfer", &lanes.chamfer),
        ("det_l.composite", &lanes.composite),
    ] {
        if let Some(b) = b {
            record(name, b);
        }
    }
    record("det_a", &areas);
    record("det_t", &traffic);

    let counts = ReportCounts {
        frames: pairs.len(),
        gt_lanes: pairs.iter().map(|p| p.gt.lane_segments.len()).sum(),
        pred_lanes: pairs.iter().map(|p| p.pred.lane_segments.len()).sum(),
        gt_areas: pairs.iter().map(|p| p.gt.areas.len()).sum(),
        pred_areas: pairs.iter().map(|p| p.pred.areas.len()).sum(),
        gt_traffic_elements: pairs.iter().map(|p| p.gt.traffic_elements.len()).sum(),
        pred_traffic_elements: pairs.iter().map(|p| p.pred.traffic_elements.len()).sum(),
        topology_ll_vertices: ll_n,
        topology_lt_vertices: lt_n,
    };

    Ok(MetricsReport {
        det_l: lanes.value,
        det_a: areas.value,
        det_t: traffic.value,
        top_ll,
        top_lt,
        olus: olus(lanes.value, areas.value, traffic.value, top_ll, top_lt)?,
        per_class,
        per_threshold,
        counts,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AreaInstance, BBox, LaneSegment, Polyline3, TopologyMatrix, TrafficElement};

    fn lane(id: u64, x0: f64, y: f64) -> LaneSegment {
        let line = |dy: f64| Polyline3 {
            points: (0..11).map(|i| Point3::new(x0 + i as f64, y + dy, 0.0)).collect(),
        };
        LaneSegment {
            id,
            class_id: 0,
            left_type: 1,
            right_type: 1,
            confidence: 1.0,
            centerline: line(0.0),
            left_boundary: line(1.75),
            right_boundary: line(-1.75),
        }
    }

    fn chain_frame(n: usize) -> Frame {
        let mut f = Frame::empty(1);
        f.lane_segments = (0..n).map(|i| lane(i as u64, -40.0 + 10.0 * i as f64, 0.0)).collect();
        f.topology = f.sized_topology();
        for i in 1..n {
            f.topology.lane_lane.set(i - 1, i, 1.0);
        }
        f
    }

    fn te(id: u64, class_id: u32, x: f64) -> TrafficElement {
        TrafficElement {
            id,
            class_id,
            confidence: 1.0,
            bbox: BBox::new(x, 100.0, x + 40.0, 140.0),
        }
    }

    #[test]
    fn olus_examples() {
        assert_eq!(olus(1.0, 1.0, 1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(olus(0.0, 0.0, 0.0, 0.0, 0.0).unwrap(), 0.0);
        let v = olus(0.4295, 0.3472, 0.8215, 0.3648, 0.4191).unwrap();
        assert!((v - 0.56992).abs() < 1e-4, "{v}");
        assert!(olus(1.1, 0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn identity_scores_one() {
        let f = chain_frame(3);
        let pairs = [FramePair { gt: &f, pred: &f }];
        let r = evaluate(&pairs, &MetricConfig::default(), 1).unwrap();
        assert_eq!(
            (r.det_l, r.det_a, r.det_t, r.top_ll, r.top_lt, r.olus),
            (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn missing_predictions_score_zero() {
        let gt = chain_frame(2);
        let pred = Frame {
            topology: Frame::empty(1).sized_topology(),
            ..Frame::empty(1)
        };
        let pairs = [FramePair { gt: &gt, pred: &pred }];
        assert_eq!(det_l(&pairs, &MetricConfig::default()).unwrap().value, 0.0);
    }

    #[test]
    fn uniform_offset_passes_only_wide_thresholds() {
        let gt = chain_frame(3);
        let mut pred = gt.clone();
        pred.lane_segments = pred
            .lane_segments
            .iter()
            .map(|l| l.translated(Point3::new(0.0, 1.5, 0.0)))
            .collect();
        let pairs = [FramePair { gt: &gt, pred: &pred }];
        let b = det_l(&pairs, &MetricConfig::default()).unwrap();
        let f = b.frechet.unwrap();
        assert!((f.value - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f.per_threshold, vec![(1.0, 0.0), (2.0, 1.0), (3.0, 1.0)]);
    }

    #[test]
    fn chain_topology_with_ranked_scores() {
        let gt = chain_frame(3);
        let mut pred = gt.clone();
        let mut ll = TopologyMatrix::new(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    ll.set(i, j, if j == i + 1 { 0.9 } else { 0.1 });
                }
            }
        }
        pred.topology.lane_lane = ll;
        let pairs = [FramePair { gt: &gt, pred: &pred }];
        assert_eq!(top_ll(&pairs, &MetricConfig::default()).unwrap(), 1.0);

        pred.topology.lane_lane = TopologyMatrix::new(3, 3);
        let pairs = [FramePair { gt: &gt, pred: &pred }];
        assert_eq!(top_ll(&pairs, &MetricConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn lane_traffic_half_scored() {
        let mut gt = chain_frame(4);
        gt.traffic_elements = (0..4).map(|i| te(i, 0, 100.0 * i as f64)).collect();
        gt.topology.lane_traffic = TopologyMatrix::from_edges(4, 4, (0..4).map(|i| (i, i, 1.0)));
        let mut pred = gt.clone();
        pred.topology.lane_traffic = TopologyMatrix::from_edges(4, 4, (0..2).map(|i| (i, i, 0.9)));
        let pairs = [FramePair { gt: &gt, pred: &pred }];
        assert_eq!(top_lt(&pairs, &MetricConfig::default()).unwrap(), 0.5);

        pred.traffic_elements.clear();
        pred.topology.lane_traffic = TopologyMatrix::new(4, 0);
        let pairs = [FramePair { gt: &gt, pred: &pred }];
        assert_eq!(top_lt(&pairs, &MetricConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn traffic_class_mean_and_gate() {
        let mut gt = Frame::empty(0);
        gt.traffic_elements = vec![te(0, 1, 0.0), te(1, 2, 200.0)];
        gt.topology = gt.sized_topology();
        let mut pred = gt.clone();
        pred.traffic_elements.truncate(1);
        pred.topology = pred.sized_topology();
        let pairs = [FramePair { gt: &gt, pred: &pred }];
        assert_eq!(det_t(&pairs, &MetricConfig::default()).unwrap().value, 0.5);

        // shift by a third of the width: IoU = (2/3) / (4/3) = 0.5
        let mut pred = gt.clone();
        for t in &mut pred.traffic_elements {
            t.bbox.x1 += 40.0 / 3.0;
            t.bbox.x2 += 40.0 / 3.0;
            assert!(
                (geometry::box_iou(&t.bbox, &gt.traffic_elements[t.id as usize].bbox).unwrap() - 0.5).abs() < 1e-12
            );
        }
        let pairs = [FramePair { gt: &gt, pred: &pred }];
        assert_eq!(det_t(&pairs, &MetricConfig::default()).unwrap().value, 0.0);
    }

    #[test]
    fn area_class_mean() {
        let curve = |x: f64| Polyline3 {
            points: vec![
                Point3::new(x, 0.0, 0.0),
                Point3::new(x + 5.0, 0.0, 0.0),
                Point3::new(x + 5.0, 3.0, 0.0),
            ],
        };
        let mut gt = Frame::empty(0);
        gt.areas = vec![
            AreaInstance {
                id: 0,
                class: AreaClass::PedestrianCrossing,
                confidence: 1.0,
                curve: curve(0.0),
            },
            AreaInstance {
                id: 1,
                class: AreaClass::RoadBoundary,
                confidence: 1.0,
                curve: curve(20.0),
            },
        ];
        gt.topology = gt.sized_topology();
        let mut pred = gt.clone();
        pred.areas.truncate(1);
        let pairs = [FramePair { gt: &gt, pred: &pred }];
        let b = det_a(&pairs, &MetricConfig::default()).unwrap();
        assert_eq!(b.value, 0.5);
        assert_eq!(b.per_class["pedestrian_crossing"], 1.0);
        assert_eq!(b.per_class["road_boundary"], 0.0);

        // an undirected curve matches its reverse
        let mut rev = gt.clone();
        for a in &mut rev.areas {
            a.curve = a.curve.reversed();
        }
        let pairs = [FramePair { gt: &gt, pred: &rev }];
        assert!(det_a(&pairs, &MetricConfig::default()).unwrap().value == 1.0);
    }

    #[test]
    fn empty_everything_is_vacuous() {
        let f = Frame::empty(0);
        let pairs = [FramePair { gt: &f, pred: &f }];
        let r = evaluate(&pairs, &MetricConfig::default(), 1).unwrap();
        assert_eq!(r.olus, 1.0);
        let cfg = MetricConfig {
            exclude_empty_classes: false,
            ..Default::default()
        };
        assert_eq!(evaluate(&pairs, &cfg, 1).unwrap().det_t, 1.0);
    }

    #[test]
    fn misaligned_frames_are_rejected() {
        let a = [Frame::empty(1)];
        let b = [Frame::empty(2)];
        assert!(matches!(align(&a, &b), Err(Error::Alignment(_))));
        assert!(align(&a, &[]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = MetricConfig {
            frechet_thresholds: vec![2.0, 1.0],
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.frechet_thresholds = vec![];
        assert!(c.validate().is_err());
        let c = MetricConfig {
            iou_thresholds: vec![1.5],
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn composite_lane_gate() {
        let f = chain_frame(3);
        let pairs = [FramePair { gt: &f, pred: &f }];
        let cfg = MetricConfig {
            lane_combination: LaneCombination::Composite,
            ..Default::default()
        };
        let b = det_l(&pairs, &cfg).unwrap();
        assert_eq!(b.value, 1.0);
        assert!(b.composite.is_some());
    }
}
