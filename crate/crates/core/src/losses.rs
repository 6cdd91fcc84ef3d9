//! Forward values of the supervised training losses.
//!
//! Every function returns a mean so values are comparable across batch sizes.
//! Probabilities are clamped to `[1e-7, 1 - 1e-7]` before taking logs.

use serde::{Deserialize, Serialize};

use crate::assignment::{hungarian_min_cost, CostMatrix};
use crate::error::{Error, Result};
use crate::geometry::{self, direction_cosine_mismatch, resample_polyline};
use crate::model::{BevGridSpec, Frame, LossWeights, Point3, Polyline3, DEFAULT_IMAGE_SIZE, DEFAULT_LINE_TYPES};
use crate::raster::{area_union_mask, lane_union_mask, BevMask};

const EPS: f64 = 1e-7;
const DICE_SMOOTH: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.gamma >= 0.0) {
            return Err(Error::Domain(format!(
                "focal parameters need alpha in (0,1) and gamma >= 0, got {} / {}",
                self.alpha, self.gamma
            )));
        }
        Ok(())
    }
}

fn focal_term(p: f64, positive: bool, params: &FocalParams) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    let (pt, at) = if positive {
        (p, params.alpha)
    } else {
        (1.0 - p, 1.0 - params.alpha)
    };
    -at * (1.0 - pt).powf(params.gamma) * pt.ln()
}

/// Binary focal loss. An empty input has loss 0.
pub fn focal_loss_binary(probs: &[f64], targets: &[bool], params: &FocalParams) -> Result<f64> {
    params.validate()?;
    if probs.len() != targets.len() {
        return Err(Error::shape(format!(
            "{} probabilities vs {} targets",
            probs.len(),
            targets.len()
        )));
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = probs.iter().zip(targets).map(|(&p, &t)| focal_term(p, t, params)).sum();
    Ok(sum / probs.len() as f64)
}

/// One-vs-all focal loss over per-class probabilities, averaged over every
/// (sample, class) element.
pub fn focal_loss_multiclass(probs: &[Vec<f64>], targets: &[usize], params: &FocalParams) -> Result<f64> {
    params.validate()?;
    if probs.len() != targets.len() {
        return Err(Error::shape(format!(
            "{} rows vs {} targets",
            probs.len(),
            targets.len()
        )));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (row, &t) in probs.iter().zip(targets) {
        if t >= row.len() {
            return Err(Error::shape(format!("target class {t} outside {} classes", row.len())));
        }
        for (c, &p) in row.iter().enumerate() {
            sum += focal_term(p, c == t, params);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Mean absolute coordinate difference over all points and axes.
pub fn l1_reg_loss(pred: &[Point3], gt: &[Point3]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!("{} vs {} points", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p.x - g.x).abs() + (p.y - g.y).abs() + (p.z - g.z).abs())
        .sum();
    Ok(sum / (3 * pred.len()) as f64)
}

/// L1 over flat value vectors of equal length.
pub fn l1_loss(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!("{} vs {} values", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.iter().zip(gt).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64)
}

/// Mean negative log-probability of the true type.
pub fn type_ce_loss(probs: &[Vec<f64>], gt: &[usize]) -> Result<f64> {
    if probs.len() != gt.len() {
        return Err(Error::shape(format!("{} rows vs {} labels", probs.len(), gt.len())));
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (k, (row, &t)) in probs.iter().zip(gt).enumerate() {
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-6 || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Domain(format!(
                "row {k} is not a probability distribution (sum {total})"
            )));
        }
        let p = *row
            .get(t)
            .ok_or_else(|| Error::shape(format!("row {k}: label {t} outside {} types", row.len())))?;
        sum -= p.max(EPS).ln();
    }
    Ok(sum / probs.len() as f64)
}

/// Per-cell foreground probabilities on a BEV grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMask {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl SoftMask {
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        SoftMask {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }
}

impl From<&BevMask> for SoftMask {
    fn from(m: &BevMask) -> Self {
        SoftMask {
            rows: m.rows(),
            cols: m.cols(),
            data: m.to_f64(),
        }
    }
}

fn check_masks(pred: &SoftMask, gt: &BevMask) -> Result<()> {
    if (pred.rows, pred.cols) != (gt.rows(), gt.cols()) || pred.data.len() != gt.data().len() {
        return Err(Error::shape(format!(
            "mask {}x{} vs {}x{}",
            pred.rows,
            pred.cols,
            gt.rows(),
            gt.cols()
        )));
    }
    if pred.data.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Domain("mask probabilities must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy per cell.
pub fn mask_ce_loss(pred: &SoftMask, gt: &BevMask) -> Result<f64> {
    check_masks(pred, gt)?;
    if pred.data.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .data
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| -(if g != 0 { p } else { 1.0 - p }).max(EPS).ln())
        .sum();
    Ok(sum / pred.data.len() as f64)
}

/// `1 - (2 Σ p·g + 1) / (Σ p + Σ g + 1)`.
pub fn dice_loss(pred: &SoftMask, gt: &BevMask) -> Result<f64> {
    check_masks(pred, gt)?;
    let (mut inter, mut sp, mut sg) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.data.iter().zip(gt.data()) {
        let g = g as f64;
        inter += p * g;
        sp += p;
        sg += g;
    }
    Ok(1.0 - (2.0 * inter + DICE_SMOOTH) / (sp + sg + DICE_SMOOTH))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LaneSegmentTerms {
    pub cls: f64,
    pub reg: f64,
    pub line_type: f64,
    pub mask: f64,
    pub dice: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AreaTerms {
    pub cls: f64,
    pub reg: f64,
    pub dir: f64,
    pub seg: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrafficTerms {
    pub cls: f64,
    pub reg: f64,
    pub iou: f64,
}

/// Unweighted loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub lanesegment: LaneSegmentTerms,
    pub area: AreaTerms,
    pub traffic: TrafficTerms,
    pub topology_ll: f64,
    pub topology_lt: f64,
}

impl LossTerms {
    /// Every component set to `v`.
    pub fn splat(v: f64) -> Self {
        LossTerms {
            lanesegment: LaneSegmentTerms {
                cls: v,
                reg: v,
                line_type: v,
                mask: v,
                dice: v,
            },
            area: AreaTerms {
                cls: v,
                reg: v,
                dir: v,
                seg: v,
            },
            traffic: TrafficTerms { cls: v, reg: v, iou: v },
            topology_ll: v,
            topology_lt: v,
        }
    }

    pub fn weighted(&self, w: &LossWeights) -> LossBreakdown {
        let (l, lw) = (&self.lanesegment, &w.lanesegment);
        let l_ls = lw.cls * l.cls + lw.reg * l.reg + lw.line_type * l.line_type + lw.mask * l.mask + lw.dice * l.dice;
        let (a, aw) = (&self.area, &w.area);
        let l_a = aw.cls * a.cls + aw.reg * a.reg + aw.dir * a.dir + aw.seg * a.seg;
        let (t, tw) = (&self.traffic, &w.traffic);
        let l_te = tw.cls * t.cls + tw.reg * t.reg + tw.iou * t.iou;
        let l_ll = w.topology_ll * self.topology_ll;
        let l_lt = w.topology_lt * self.topology_lt;
        LossBreakdown {
            terms: *self,
            l_ls,
            l_a,
            l_te,
            l_ll,
            l_lt,
            total: l_ls + l_a + l_te + l_ll + l_lt,
        }
    }
}

/// Weighted sums together with the components they came from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub terms: LossTerms,
    pub l_ls: f64,
    pub l_a: f64,
    pub l_te: f64,
    pub l_ll: f64,
    pub l_lt: f64,
    pub total: f64,
}

/// Prediction → ground-truth pairs for each instance type.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameAssignment {
    pub lanes: Option<Vec<(usize, usize)>>,
    pub areas: Option<Vec<(usize, usize)>>,
    pub traffic: Option<Vec<(usize, usize)>>,
}

/// Optional network outputs that are not part of a [`Frame`].
#[derive(Clone, Debug, Default)]
pub struct AuxOutputs {
    /// Per predicted lane: left and right line-type distributions.
    pub lane_type_probs: Option<Vec<[Vec<f64>; 2]>>,
    pub lane_mask: Option<SoftMask>,
    pub area_mask: Option<SoftMask>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub focal: FocalParams,
    pub grid: BevGridSpec,
    /// (width, height) used to normalise traffic-element boxes.
    pub image_size: (f64, f64),
    /// Area curves are resampled to this many points for L1 and direction.
    pub area_points: usize,
    pub line_types: u8,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            focal: FocalParams::default(),
            grid: BevGridSpec::default(),
            image_size: DEFAULT_IMAGE_SIZE,
            area_points: 20,
            line_types: DEFAULT_LINE_TYPES,
        }
    }
}

fn hungarian_pairs(rows: usize, cols: usize, cost: impl FnMut(usize, usize) -> f64) -> Result<Vec<(usize, usize)>> {
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }
    Ok(hungarian_min_cost(&CostMatrix::from_fn(rows, cols, cost))?.pairs)
}

/// Class-agnostic minimum-cost assignment, as used for set-prediction
/// training: lanes by centerline Fréchet, areas by Chamfer, traffic elements
/// by `1 - GIoU` plus normalised L1.
pub fn assign_for_loss(pred: &Frame, gt: &Frame, cfg: &LossConfig) -> Result<FrameAssignment> {
    let lanes = hungarian_pairs(pred.lane_segments.len(), gt.lane_segments.len(), |i, j| {
        geometry::discrete_frechet(
            &pred.lane_segments[i].centerline.points,
            &gt.lane_segments[j].centerline.points,
        )
        .unwrap_or(f64::MAX / 4.0)
    })?;
    let areas = hungarian_pairs(pred.areas.len(), gt.areas.len(), |i, j| {
        geometry::chamfer(&pred.areas[i].curve.points, &gt.areas[j].curve.points)
            .map_or(f64::MAX / 4.0, |c| c.symmetric)
    })?;
    let te_cost = |i: usize, j: usize| -> f64 {
        let (p, g) = (&pred.traffic_elements[i].bbox, &gt.traffic_elements[j].bbox);
        let giou = geometry::box_giou(p, g).unwrap_or(-1.0);
        let l1 = l1_loss(
            &p.normalized_cxcywh(cfg.image_size),
            &g.normalized_cxcywh(cfg.image_size),
        )
        .unwrap_or(1.0);
        1.0 - giou + l1
    };
    let traffic = hungarian_pairs(pred.traffic_elements.len(), gt.traffic_elements.len(), te_cost)?;
    Ok(FrameAssignment {
        lanes: Some(lanes),
        areas: Some(areas),
        traffic: Some(traffic),
    })
}

fn require<'a>(
    pairs: &'a Option<Vec<(usize, usize)>>,
    name: &'static str,
    n_pred: usize,
    n_gt: usize,
) -> Result<&'a [(usize, usize)]> {
    match pairs {
        Some(p) => {
            if p.iter().any(|&(i, j)| i >= n_pred || j >= n_gt) {
                return Err(Error::precondition(format!(
                    "{name} assignment indexes past the instance lists"
                )));
            }
            Ok(p)
        }
        None if n_pred == 0 && n_gt == 0 => Ok(&[]),
        None => Err(Error::MissingAssignment(name)),
    }
}

fn positives(n_pred: usize, pairs: &[(usize, usize)], same_class: impl Fn(usize, usize) -> bool) -> Vec<bool> {
    let mut pos = vec![false; n_pred];
    for &(i, j) in pairs {
        pos[i] = same_class(i, j);
    }
    pos
}

fn resampled_to(line: &Polyline3, n: usize) -> Result<Vec<Point3>> {
    if line.points.len() == n {
        Ok(line.points.clone())
    } else {
        Ok(resample_polyline(line, n)?.line.points)
    }
}

fn one_hot(t: u8, n: u8) -> Vec<f64> {
    (0..n.max(t + 1)).map(|k| if k == t { 1.0 } else { 0.0 }).collect()
}

/// Focal loss over every predicted (row, col) pair; targets come from the
/// ground-truth edge between the matched instances.
fn topology_loss(
    pred: &crate::model::TopologyMatrix,
    gt: &crate::model::TopologyMatrix,
    row_map: &[Option<usize>],
    col_map: &[Option<usize>],
    skip_diagonal: bool,
    params: &FocalParams,
) -> Result<f64> {
    let (mut probs, mut targets) = (Vec::new(), Vec::new());
    for (i, ri) in row_map.iter().enumerate() {
        for (j, cj) in col_map.iter().enumerate() {
            if skip_diagonal && i == j {
                continue;
            }
            probs.push(pred.get(i, j));
            targets.push(matches!((ri, cj), (Some(a), Some(b)) if gt.get(*a, *b) > 0.0));
        }
    }
    focal_loss_binary(&probs, &targets, params)
}

/// Raw component values for one frame.
pub fn loss_terms(
    pred: &Frame,
    gt: &Frame,
    assignment: &FrameAssignment,
    aux: &AuxOutputs,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    let f = &cfg.focal;
    let mut terms = LossTerms::default();

    // lane segments
    let (pl, gl) = (&pred.lane_segments, &gt.lane_segments);
    let lane_pairs = require(&assignment.lanes, "lane_segments", pl.len(), gl.len())?;
    let pos = positives(pl.len(), lane_pairs, |i, j| pl[i].class_id == gl[j].class_id);
    let conf: Vec<f64> = pl.iter().map(|l| l.confidence).collect();
    terms.lanesegment.cls = focal_loss_binary(&conf, &pos, f)?;
    let (mut reg_pred, mut reg_gt) = (Vec::new(), Vec::new());
    let (mut type_probs, mut type_gt) = (Vec::new(), Vec::new());
    for &(i, j) in lane_pairs {
        for (p, g) in [
            (&pl[i].centerline, &gl[j].centerline),
            (&pl[i].left_boundary, &gl[j].left_boundary),
            (&pl[i].right_boundary, &gl[j].right_boundary),
        ] {
            reg_pred.extend(resampled_to(p, g.len())?);
            reg_gt.extend_from_slice(&g.points);
        }
        let probs = match &aux.lane_type_probs {
            Some(v) => v
                .get(i)
                .cloned()
                .ok_or_else(|| Error::shape(format!("no line-type probabilities for lane {i}")))?,
            None => [
                one_hot(pl[i].left_type, cfg.line_types),
                one_hot(pl[i].right_type, cfg.line_types),
            ],
        };
        let [left, right] = probs;
        type_probs.push(left);
        type_probs.push(right);
        type_gt.push(gl[j].left_type as usize);
        type_gt.push(gl[j].right_type as usize);
    }
    terms.lanesegment.reg = l1_reg_loss(&reg_pred, &reg_gt)?;
    terms.lanesegment.line_type = type_ce_loss(&type_probs, &type_gt)?;
    let gt_lane_mask = lane_union_mask(gl, &cfg.grid);
    let pred_lane_mask = match &aux.lane_mask {
        Some(m) => m.clone(),
        None => SoftMask::from(&lane_union_mask(pl, &cfg.grid)),
    };
    terms.lanesegment.mask = mask_ce_loss(&pred_lane_mask, &gt_lane_mask)?;
    terms.lanesegment.dice = dice_loss(&pred_lane_mask, &gt_lane_mask)?;

    // areas
    let (pa, ga) = (&pred.areas, &gt.areas);
    let area_pairs = require(&assignment.areas, "areas", pa.len(), ga.len())?;
    let pos = positives(pa.len(), area_pairs, |i, j| pa[i].class == ga[j].class);
    let conf: Vec<f64> = pa.iter().map(|a| a.confidence).collect();
    terms.area.cls = focal_loss_binary(&conf, &pos, f)?;
    let (mut reg, mut dir) = (0.0, 0.0);
    for &(i, j) in area_pairs {
        let g = resample_polyline(&ga[j].curve, cfg.area_points)?.line.points;
        let fwd = resample_polyline(&pa[i].curve, cfg.area_points)?.line.points;
        let mut rev = fwd.clone();
        rev.reverse();
        let (lf, lr) = (l1_reg_loss(&fwd, &g)?, l1_reg_loss(&rev, &g)?);
        let (l, oriented) = if lr < lf { (lr, &rev) } else { (lf, &fwd) };
        reg += l;
        dir += direction_cosine_mismatch(oriented, &g)?.value;
    }
    if !area_pairs.is_empty() {
        terms.area.reg = reg / area_pairs.len() as f64;
        terms.area.dir = dir / area_pairs.len() as f64;
    }
    let gt_area_mask = area_union_mask(ga, &cfg.grid);
    let pred_area_mask = match &aux.area_mask {
        Some(m) => m.clone(),
        None => SoftMask::from(&area_union_mask(pa, &cfg.grid)),
    };
    terms.area.seg = mask_ce_loss(&pred_area_mask, &gt_area_mask)?;

    // traffic elements
    let (pt, gtt) = (&pred.traffic_elements, &gt.traffic_elements);
    let te_pairs = require(&assignment.traffic, "traffic_elements", pt.len(), gtt.len())?;
    let pos = positives(pt.len(), te_pairs, |i, j| pt[i].class_id == gtt[j].class_id);
    let conf: Vec<f64> = pt.iter().map(|t| t.confidence).collect();
    terms.traffic.cls = focal_loss_binary(&conf, &pos, f)?;
    let (mut bp, mut bg, mut giou_loss) = (Vec::new(), Vec::new(), 0.0);
    for &(i, j) in te_pairs {
        bp.extend(pt[i].bbox.normalized_cxcywh(cfg.image_size));
        bg.extend(gtt[j].bbox.normalized_cxcywh(cfg.image_size));
        giou_loss += 1.0 - geometry::box_giou(&pt[i].bbox, &gtt[j].bbox)?;
    }
    terms.traffic.reg = l1_loss(&bp, &bg)?;
    if !te_pairs.is_empty() {
        terms.traffic.iou = giou_loss / te_pairs.len() as f64;
    }

    // topology
    let mut lane_map = vec![None; pl.len()];
    for &(i, j) in lane_pairs {
        lane_map[i] = Some(j);
    }
    let mut te_map = vec![None; pt.len()];
    for &(i, j) in te_pairs {
        te_map[i] = Some(j);
    }
    let (ptop, gtop) = (&pred.topology, &gt.topology);
    terms.topology_ll = topology_loss(&ptop.lane_lane, &gtop.lane_lane, &lane_map, &lane_map, true, f)?;
    terms.topology_lt = topology_loss(&ptop.lane_traffic, &gtop.lane_traffic, &lane_map, &te_map, false, f)?;
    Ok(terms)
}

/// Weighted per-head losses and their total for one frame.
pub fn composite_losses(
    pred: &Frame,
    gt: &Frame,
    weights: &LossWeights,
    assignment: &FrameAssignment,
    aux: &AuxOutputs,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    weights.validate()?;
    Ok(loss_terms(pred, gt, assignment, aux, cfg)?.weighted(weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BevGridSpec;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn focal_examples() {
        let p = FocalParams::default();
        assert!(focal_loss_binary(&[1.0], &[true], &p).unwrap() < 1e-12);
        close(
            focal_loss_binary(&[0.5], &[true], &p).unwrap(),
            0.25 * 0.25 * 2f64.ln(),
            1e-12,
        );
        close(focal_loss_binary(&[0.5], &[true], &p).unwrap(), 0.043322, 1e-6);
        let ce = FocalParams { alpha: 0.5, gamma: 0.0 };
        close(focal_loss_binary(&[0.5], &[true], &ce).unwrap(), 0.5 * 2f64.ln(), 1e-12);
        assert!(focal_loss_binary(&[0.5, 0.5], &[true], &p).is_err());
        assert!(focal_loss_binary(&[0.5], &[true], &FocalParams { alpha: 1.0, gamma: 2.0 }).is_err());
    }

    #[test]
    fn multiclass_focal_is_mean_of_binary() {
        let p = FocalParams::default();
        let rows = vec![vec![0.7, 0.2, 0.1]];
        let m = focal_loss_multiclass(&rows, &[0], &p).unwrap();
        let b = focal_loss_binary(&[0.7, 0.2, 0.1], &[true, false, false], &p).unwrap();
        close(m, b, 1e-15);
        assert!(focal_loss_multiclass(&rows, &[3], &p).is_err());
    }

    #[test]
    fn l1_examples() {
        let a = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 1.0, 1.0)];
        assert_eq!(l1_reg_loss(&a, &a).unwrap(), 0.0);
        let b: Vec<Point3> = a.iter().map(|p| *p + Point3::new(0.1, 0.1, 0.1)).collect();
        close(l1_reg_loss(&b, &a).unwrap(), 0.1, 1e-12);
        close(l1_loss(&[0.0, 0.3], &[0.0, 0.0]).unwrap(), 0.15, 1e-15);
        assert!(l1_reg_loss(&a[..1], &a).is_err());
    }

    #[test]
    fn type_ce_examples() {
        assert_eq!(type_ce_loss(&[vec![0.0, 1.0, 0.0]], &[1]).unwrap(), 0.0);
        let third = 1.0 / 3.0;
        close(type_ce_loss(&[vec![third; 3]], &[2]).unwrap(), 3f64.ln(), 1e-12);
        close(type_ce_loss(&[vec![0.25, 0.75, 0.0]], &[0]).unwrap(), 4f64.ln(), 1e-12);
        assert!(type_ce_loss(&[vec![0.5, 0.6]], &[0]).is_err());
    }

    #[test]
    fn mask_examples() {
        let spec = BevGridSpec::default();
        let mut gt = BevMask::new(&spec);
        for r in 0..40 {
            for c in 0..40 {
                gt.set(r, c);
            }
        }
        let exact = SoftMask::from(&gt);
        assert_eq!(mask_ce_loss(&exact, &gt).unwrap(), 0.0);
        assert!(dice_loss(&exact, &gt).unwrap() < 1e-3);
        let zero = SoftMask::filled(spec.rows, spec.cols, 0.0);
        close(dice_loss(&zero, &gt).unwrap(), 1.0 - 1.0 / (1600.0 + 1.0), 1e-12);
        let half = SoftMask::filled(spec.rows, spec.cols, 0.5);
        close(mask_ce_loss(&half, &gt).unwrap(), 2f64.ln(), 1e-12);
        let wrong = SoftMask::filled(3, 3, 0.5);
        assert!(mask_ce_loss(&wrong, &gt).is_err());
    }

    #[test]
    fn unit_components_give_weight_sums() {
        let b = LossTerms::splat(1.0).weighted(&LossWeights::default());
        close(b.l_ls, 7.6025, 1e-12);
        close(b.l_a, 11.5075, 1e-12);
        close(b.l_te, 4.5, 1e-12);
        close(b.l_ll, 5.0, 1e-12);
        close(b.l_lt, 5.0, 1e-12);

        let mut t = LossTerms::default();
        t.lanesegment.reg = 2.0;
        close(t.weighted(&LossWeights::default()).l_ls, 0.005, 1e-15);
    }

    #[test]
    fn weight_linearity() {
        let w = LossWeights::default();
        let mut t = LossTerms::splat(0.3);
        let base = t.weighted(&w).l_a;
        t.area.dir *= 2.0;
        close(t.weighted(&w).l_a - base, w.area.dir * 0.3, 1e-15);
    }

    #[test]
    fn missing_assignment_is_an_error() {
        let mut f = Frame::empty(0);
        f.traffic_elements.push(crate::model::TrafficElement {
            id: 0,
            class_id: 0,
            confidence: 1.0,
            bbox: crate::model::BBox::new(0.0, 0.0, 10.0, 10.0),
        });
        f.topology = f.sized_topology();
        let a = FrameAssignment {
            lanes: Some(vec![]),
            areas: Some(vec![]),
            traffic: None,
        };
        let r = composite_losses(
            &f,
            &f,
            &LossWeights::default(),
            &a,
            &AuxOutputs::default(),
            &LossConfig::default(),
        );
        assert!(matches!(r, Err(Error::MissingAssignment("traffic_elements"))));
    }
}
