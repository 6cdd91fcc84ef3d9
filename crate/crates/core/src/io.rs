//! JSON scene documents and metric reports.
//!
//! A scene document:
//!
//! ```json
//! {
//!   "schema_version": "1.0",
//!   "kind": "ground_truth",
//!   "scene_id": "scene-000",
//!   "frames": [{
//!     "frame_id": 0,
//!     "lane_segments": [{"id": 0, "class_id": 0, "left_type": 1, "right_type": 1,
//!                        "confidence": 1.0, "centerline": [[x, y, z], ...],
//!                        "left_boundary": [...], "right_boundary": [...]}],
//!     "areas": [{"id": 0, "class": "pedestrian_crossing", "confidence": 1.0, "curve": [...]}],
//!     "traffic_elements": [{"id": 0, "class_id": 3, "confidence": 1.0, "box": [x1, y1, x2, y2]}],
//!     "topology": {"lane_lane": [[0, 1]], "lane_traffic": [[0, 0, 0.8]]},
//!     "sd_map": {"polylines": [{"road_type": "primary", "points": [...]}]}
//!   }]
//! }
//! ```
//!
//! Topology edges are `[row, col]` (score 1) or `[row, col, score]`. `kind` is
//! informational; the role a document is loaded under decides which
//! invariants apply.
//! Numbers are written in shortest round-trip form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::IgnoredAny;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{FramePair, MetricsReport};
use crate::model::{
    validate_frame, AreaInstance, BevGridSpec, Frame, LaneSegment, Role, Topology, TopologyMatrix, TrafficElement,
    ValidationOptions, Violation,
};
use crate::raster::SdMap;

pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArchiveFrame {
    pub frame: Frame,
    pub sd_map: Option<SdMap>,
}

/// One scene: frames in ascending id order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneArchive {
    pub scene_id: String,
    pub frames: Vec<ArchiveFrame>,
}

impl SceneArchive {
    pub fn frames(&self) -> impl Iterator<Item = &Frame> {
        self.frames.iter().map(|f| &f.frame)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum DocKind {
    GroundTruth,
    Prediction,
}

impl From<Role> for DocKind {
    fn from(r: Role) -> Self {
        match r {
            Role::GroundTruth => DocKind::GroundTruth,
            Role::Prediction => DocKind::Prediction,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Edge {
    Scored(usize, usize, f64),
    Plain(usize, usize),
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyDoc {
    #[serde(default)]
    lane_lane: Vec<Edge>,
    #[serde(default)]
    lane_traffic: Vec<Edge>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameDoc {
    frame_id: u64,
    #[serde(default)]
    lane_segments: Vec<LaneSegment>,
    #[serde(default)]
    areas: Vec<AreaInstance>,
    #[serde(default)]
    traffic_elements: Vec<TrafficElement>,
    #[serde(default)]
    topology: TopologyDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sd_map: Option<SdMap>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    schema_version: String,
    kind: DocKind,
    scene_id: String,
    frames: Vec<FrameDoc>,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<String>,
    #[serde(flatten)]
    _rest: BTreeMap<String, IgnoredAny>,
}

fn edges_to_doc(m: &TopologyMatrix, role: Role) -> Vec<Edge> {
    m.edges()
        .map(|(i, j, s)| match role {
            Role::GroundTruth if s == 1.0 => Edge::Plain(i, j),
            _ => Edge::Scored(i, j, s),
        })
        .collect()
}

fn edges_from_doc(edges: &[Edge], rows: usize, cols: usize) -> TopologyMatrix {
    let mut m = TopologyMatrix::new(rows, cols);
    for e in edges {
        let (i, j, s) = match *e {
            Edge::Scored(i, j, s) => (i, j, s),
            Edge::Plain(i, j) => (i, j, 1.0),
        };
        // A zero score is an explicit non-edge; keep it out of the sparse map.
        m.set(i, j, s);
    }
    m
}

fn to_doc(archive: &SceneArchive, role: Role) -> SceneDoc {
    SceneDoc {
        schema_version: SCHEMA_VERSION.into(),
        kind: role.into(),
        scene_id: archive.scene_id.clone(),
        frames: archive
            .frames
            .iter()
            .map(|af| {
                let f = &af.frame;
                FrameDoc {
                    frame_id: f.id,
                    lane_segments: f.lane_segments.clone(),
                    areas: f.areas.clone(),
                    traffic_elements: f.traffic_elements.clone(),
                    topology: TopologyDoc {
                        lane_lane: edges_to_doc(&f.topology.lane_lane, role),
                        lane_traffic: edges_to_doc(&f.topology.lane_traffic, role),
                    },
                    sd_map: af.sd_map.clone(),
                }
            })
            .collect(),
    }
}

fn from_doc(doc: SceneDoc) -> SceneArchive {
    let frames = doc
        .frames
        .into_iter()
        .map(|fd| {
            let (n, m) = (fd.lane_segments.len(), fd.traffic_elements.len());
            let topology = Topology {
                lane_lane: edges_from_doc(&fd.topology.lane_lane, n, n),
                lane_traffic: edges_from_doc(&fd.topology.lane_traffic, n, m),
            };
            ArchiveFrame {
                frame: Frame {
                    id: fd.frame_id,
                    lane_segments: fd.lane_segments,
                    areas: fd.areas,
                    traffic_elements: fd.traffic_elements,
                    topology,
                },
                sd_map: fd.sd_map,
            }
        })
        .collect();
    SceneArchive {
        scene_id: doc.scene_id,
        frames,
    }
}

/// Serialises a scene as pretty-printed JSON.
pub fn scene_to_json(archive: &SceneArchive, role: Role) -> String {
    serde_json::to_string_pretty(&to_doc(archive, role)).expect("scene documents always serialise")
}

/// What a loader checks beyond syntax.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LoadOptions {
    pub grid: BevGridSpec,
    pub validation: ValidationOptions,
}

fn parse_error(path: &Path, e: &serde_json::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses and audits one scene document held in memory. `path` is only used
/// in diagnostics.
pub fn parse_scene(text: &str, path: &Path, role: Role, opts: &LoadOptions) -> Result<SceneArchive> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| parse_error(path, &e))?;
    match probe.schema_version.as_deref() {
        Some(SCHEMA_VERSION) => {}
        other => {
            return Err(Error::UnsupportedVersion {
                found: other.unwrap_or("<missing>").into(),
                expected: SCHEMA_VERSION.into(),
            })
        }
    }
    let doc: SceneDoc = serde_json::from_str(text).map_err(|e| parse_error(path, &e))?;
    let archive = from_doc(doc);
    let violations = audit_archive(&archive, role, opts);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(archive)
}

/// Every invariant breach in an archive, including frame-id ordering.
pub fn audit_archive(archive: &SceneArchive, role: Role, opts: &LoadOptions) -> Vec<Violation> {
    let mut out = Vec::new();
    for w in archive.frames.windows(2) {
        if w[0].frame.id >= w[1].frame.id {
            out.push(Violation {
                frame: w[1].frame.id,
                instance: "frame".into(),
                field: "frame_id".into(),
                message: format!(
                    "frame ids must be unique and ascending ({} then {})",
                    w[0].frame.id, w[1].frame.id
                ),
            });
        }
    }
    for af in &archive.frames {
        out.extend(validate_frame(&af.frame, role, &opts.grid, &opts.validation));
    }
    out
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Scene files under `path`: the file itself, or every `*.json` in a
/// directory sorted by name.
pub fn scene_files(path: &Path) -> Result<Vec<PathBuf>> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(path).map_err(io)? {
        let p = entry.map_err(io)?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "json") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads every scene under `path` (a file or a directory of files).
pub fn load_scenes(path: &Path, role: Role, opts: &LoadOptions) -> Result<Vec<SceneArchive>> {
    let scenes = scene_files(path)?
        .iter()
        .map(|p| parse_scene(&read(p)?, p, role, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut seen = std::collections::BTreeSet::new();
    for s in &scenes {
        if !seen.insert(s.scene_id.as_str()) {
            return Err(Error::Precondition(format!(
                "{}: scene id `{}` appears more than once",
                path.display(),
                s.scene_id
            )));
        }
    }
    Ok(scenes)
}

pub fn load_ground_truth(path: &Path) -> Result<SceneArchive> {
    parse_scene(&read(path)?, path, Role::GroundTruth, &LoadOptions::default())
}

pub fn load_predictions(path: &Path) -> Result<SceneArchive> {
    parse_scene(&read(path)?, path, Role::Prediction, &LoadOptions::default())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, text).map_err(io)
}

pub fn write_scene(archive: &SceneArchive, role: Role, path: &Path) -> Result<()> {
    write_text(path, &scene_to_json(archive, role))
}

/// Pairs prediction scenes with ground-truth scenes by id and then frames by
/// position, in ground-truth order.
pub fn pair_scenes<'a>(gt: &'a [SceneArchive], pred: &'a [SceneArchive]) -> Result<Vec<FramePair<'a>>> {
    let by_id: BTreeMap<&str, &SceneArchive> = pred.iter().map(|s| (s.scene_id.as_str(), s)).collect();
    if let Some(extra) = pred.iter().find(|p| !gt.iter().any(|g| g.scene_id == p.scene_id)) {
        return Err(Error::Alignment(format!(
            "prediction scene `{}` has no ground truth",
            extra.scene_id
        )));
    }
    let mut pairs = Vec::new();
    for g in gt {
        let p = by_id
            .get(g.scene_id.as_str())
            .ok_or_else(|| Error::Alignment(format!("no predictions for scene `{}`", g.scene_id)))?;
        let gts: Vec<&Frame> = g.frames().collect();
        let preds: Vec<&Frame> = p.frames().collect();
        for (k, (a, b)) in gts.iter().zip(&preds).enumerate() {
            if a.id != b.id {
                return Err(Error::Alignment(format!(
                    "scene `{}`, frame #{k}: ground truth id {} vs prediction id {}",
                    g.scene_id, a.id, b.id
                )));
            }
        }
        if gts.len() != preds.len() {
            return Err(Error::Alignment(format!(
                "scene `{}`: {} ground-truth frames vs {} prediction frames",
                g.scene_id,
                gts.len(),
                preds.len()
            )));
        }
        pairs.extend(gts.into_iter().zip(preds).map(|(gt, pred)| FramePair { gt, pred }));
    }
    Ok(pairs)
}

/// Frame pairs of a single ground-truth / prediction scene.
pub fn pair_scene<'a>(gt: &'a SceneArchive, pred: &'a SceneArchive) -> Result<Vec<FramePair<'a>>> {
    pair_scenes(std::slice::from_ref(gt), std::slice::from_ref(pred))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReportFormat {
    #[default]
    Json,
    Table,
}

/// Report as JSON with keys sorted at every level.
pub fn report_to_json(report: &MetricsReport) -> String {
    let value = serde_json::to_value(report).expect("reports always serialise");
    let mut s = serde_json::to_string_pretty(&value).expect("values always serialise");
    s.push('\n');
    s
}

pub fn report_from_json(text: &str) -> Result<MetricsReport> {
    serde_json::from_str(text).map_err(|e| parse_error(Path::new("<report>"), &e))
}

/// Fixed-width table of the headline metrics followed by the breakdowns.
pub fn report_table(report: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "DET_l", "DET_a", "DET_t", "TOP_ll", "TOP_lt", "OLUS"
    );
    let _ = writeln!(
        s,
        "{:<8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
        report.det_l, report.det_a, report.det_t, report.top_ll, report.top_lt, report.olus
    );
    if !report.per_threshold.is_empty() {
        let _ = writeln!(s, "\nper threshold");
        for (k, v) in &report.per_threshold {
            let _ = writeln!(s, "  {k:<28} {v:.4}");
        }
    }
    if !report.per_class.is_empty() {
        let _ = writeln!(s, "\nper class");
        for (k, v) in &report.per_class {
            let _ = writeln!(s, "  {k:<28} {v:.4}");
        }
    }
    s
}

pub fn write_report(report: &MetricsReport, path: &Path, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Json => report_to_json(report),
        ReportFormat::Table => report_table(report),
    };
    write_text(path, &text)
}
