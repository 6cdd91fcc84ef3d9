//! Browser bindings for the BEV raster, curve distances and the OLUS score.
//!
//! Every export is deterministic in its seed. Errors come back as strings.

use olus_core::geometry::{chamfer, discrete_frechet};
use olus_core::io::{pair_scene, SceneArchive};
use olus_core::metrics::{evaluate, MetricConfig};
use olus_core::model::{BevGridSpec, Point3};
use olus_core::raster::{area_union_mask, lane_union_mask, rasterize_sdmap};
use olus_core::synthetic::{generate_scene, perturb, JitterMode, Layout, PerturbationSpec, SceneSpec};
use serde_json::json;
use wasm_bindgen::prelude::*;

const MAX_CELLS_PER_AXIS: usize = 800;

fn layout(arc: bool) -> Layout {
    if arc {
        Layout::Arc
    } else {
        Layout::Straight
    }
}

fn scene(seed: u64, frames: usize, lanes: usize, arc: bool) -> SceneArchive {
    generate_scene(&SceneSpec {
        scene_id: "demo".into(),
        frames,
        lanes,
        areas: 4,
        traffic_elements: 5,
        layout: layout(arc),
        seed,
    })
}

fn xy(points: &[Point3]) -> Vec<[f64; 2]> {
    points.iter().map(|p| [p.x, p.y]).collect()
}

/// Row-major 0/1 mask of one synthetic frame. `source` is `sd-map`, `lanes`
/// or `areas`.
#[wasm_bindgen]
pub fn raster(seed: u64, rows: usize, cols: usize, source: &str, arc: bool) -> Result<Vec<u8>, String> {
    if !(1..=MAX_CELLS_PER_AXIS).contains(&rows) || !(1..=MAX_CELLS_PER_AXIS).contains(&cols) {
        return Err(format!(
            "grid must be between 1 and {MAX_CELLS_PER_AXIS} cells per side"
        ));
    }
    let spec = BevGridSpec::default().with_resolution(rows, cols);
    let s = scene(seed, 1, 24, arc);
    let f = &s.frames[0];
    let mask = match source {
        "sd-map" => rasterize_sdmap(f.sd_map.as_ref().ok_or("frame has no SD map")?, &spec, true),
        "lanes" => lane_union_mask(&f.frame.lane_segments, &spec),
        "areas" => area_union_mask(&f.frame.areas, &spec),
        other => return Err(format!("unknown source `{other}`")),
    };
    Ok(mask.data().to_vec())
}

/// One ground-truth centerline, a jittered copy and the distances between
/// them, as JSON.
#[wasm_bindgen]
pub fn curve_pair(seed: u64, sigma: f64, offset: f64, arc: bool) -> Result<String, String> {
    let gt = scene(seed, 1, 1, arc);
    let p = perturb(
        &gt,
        &PerturbationSpec {
            point_jitter_sigma: sigma,
            jitter_mode: JitterMode::Noisy,
            rigid_offset: (offset != 0.0).then_some([0.0, offset, 0.0]),
            seed: seed.wrapping_add(1),
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let a = &gt.frames[0].frame.lane_segments[0].centerline.points;
    let b = &p.archive.frames[0].frame.lane_segments[0].centerline.points;
    let frechet = discrete_frechet(a, b).map_err(|e| e.to_string())?;
    let ch = chamfer(a, b).map_err(|e| e.to_string())?;
    Ok(json!({
        "gt": xy(a),
        "pred": xy(b),
        "frechet": frechet,
        "chamfer": ch.symmetric,
    })
    .to_string())
}

/// Scores a perturbed synthetic scene and returns the report as JSON, with
/// the closed-form expectations where the perturbation admits them.
#[wasm_bindgen]
pub fn explore(
    seed: u64,
    jitter: f64,
    drop_rate: f64,
    flip_rate: f64,
    false_positives: usize,
    arc: bool,
) -> Result<String, String> {
    let gt = scene(seed, 4, 20, arc);
    let p = perturb(
        &gt,
        &PerturbationSpec {
            point_jitter_sigma: jitter,
            drop_rate,
            topology_flip_rate: flip_rate,
            false_positive_count: false_positives,
            seed: seed.wrapping_add(1),
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let pairs = pair_scene(&gt, &p.archive).map_err(|e| e.to_string())?;
    let r = evaluate(&pairs, &MetricConfig::default(), 1).map_err(|e| e.to_string())?;
    let e = &p.expected;
    Ok(json!({
        "det_l": r.det_l,
        "det_a": r.det_a,
        "det_t": r.det_t,
        "top_ll": r.top_ll,
        "top_lt": r.top_lt,
        "olus": r.olus,
        "per_threshold": r.per_threshold,
        "expected": {
            "det_l": e.det_l,
            "det_a": e.det_a,
            "det_t": e.det_t,
            "top_ll": e.top_ll,
            "top_lt": e.top_lt,
            "olus": e.olus,
        },
    })
    .to_string())
}
