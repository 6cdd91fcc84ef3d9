//! Subcommands behind the `olus` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use olus_core::io::{self, LoadOptions, ReportFormat, SceneArchive};
use olus_core::losses::{assign_for_loss, composite_losses, AuxOutputs, LossBreakdown, LossConfig};
use olus_core::metrics::{evaluate, LaneCombination, MetricConfig, MetricsReport};
use olus_core::model::{BevGridSpec, LossWeights, Role};
use olus_core::raster::{area_union_mask, lane_union_mask, rasterize_sdmap, rasterize_sdmap_by_type, BevMask};
use olus_core::synthetic::{generate_scene, perturb_with, JitterMode, Layout, PerturbationSpec, SceneSpec};
use olus_core::Error;
use serde::Serialize;

/// Failure of a subcommand, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad input: unreadable documents, invariant breaches, misaligned frames,
    /// invalid options. Exit code 2.
    Input(String),
    /// Environment or internal failure. Exit code 1.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let mut msg = e.to_string();
        if let Error::Validation(v) = &e {
            for violation in v {
                let _ = write!(msg, "\n  {violation}");
            }
        }
        if e.is_input_error() {
            CliError::Input(msg)
        } else {
            CliError::Internal(msg)
        }
    }
}

fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "olus",
    version,
    about = "Evaluate, rasterize and synthesize lane-graph perception scenes"
)]
pub struct Cli {
    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Score predictions against ground truth and write a metrics report.
    Eval(EvalArgs),
    /// Render SD maps, lane masks or area masks as PGM and CSV.
    Rasterize(RasterizeArgs),
    /// Generate synthetic ground truth and perturbed predictions.
    Synth(SynthArgs),
    /// Compute every loss component for ground-truth / prediction pairs.
    LossCheck(LossCheckArgs),
    /// Audit scene documents against the schema and all invariants.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Table,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Table => ReportFormat::Table,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct GridArgs {
    /// BEV raster rows (along x).
    #[arg(long)]
    pub bev_rows: Option<usize>,
    /// BEV raster columns (along y).
    #[arg(long)]
    pub bev_cols: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct EvalArgs {
    /// Ground-truth scene file or directory of scene files.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Prediction scene file or directory of scene files.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Flat TOML file whose keys mirror these flags (e.g. `workers = 4`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Centerline Fréchet thresholds in meters, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub thresholds_frechet: Option<Vec<f64>>,
    /// Chamfer thresholds in meters, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub thresholds_chamfer: Option<Vec<f64>>,
    /// Traffic-element IoU thresholds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub thresholds_iou: Option<Vec<f64>>,
    /// Worker threads for frame-parallel evaluation (>= 1).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Report destination. The table is always printed to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report format written to --out.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum RasterSource {
    #[default]
    SdMap,
    Lanes,
    Areas,
}

#[derive(Args, Debug, Clone)]
pub struct RasterizeArgs {
    /// Ground-truth scene file or directory.
    #[arg(long, conflicts_with = "pred")]
    pub gt: Option<PathBuf>,
    /// Prediction scene file or directory.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// What to draw.
    #[arg(long, value_enum, default_value_t = RasterSource::SdMap)]
    pub source: RasterSource,
    /// Only this frame id.
    #[arg(long)]
    pub frame: Option<u64>,
    /// Also write one mask per SD road type.
    #[arg(long)]
    pub by_type: bool,
    /// Clamp SD points outside the window onto its border instead of clipping.
    #[arg(long)]
    pub no_clip: bool,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Output directory for `<scene>_<frame>_<name>.pgm/.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    #[default]
    Straight,
    Arc,
    Mixed,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum JitterArg {
    #[default]
    Rigid,
    Noisy,
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    /// Output directory; receives gt/, pred/ and expected.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub scenes: usize,
    #[arg(long, default_value_t = 1)]
    pub frames: usize,
    #[arg(long, default_value_t = 10)]
    pub lanes: usize,
    #[arg(long, default_value_t = 4)]
    pub areas: usize,
    #[arg(long, default_value_t = 4)]
    pub traffic_elements: usize,
    #[arg(long, value_enum, default_value_t = LayoutArg::Straight)]
    pub layout: LayoutArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Planar jitter sigma in meters.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long, value_enum, default_value_t = JitterArg::Rigid)]
    pub jitter_mode: JitterArg,
    #[arg(long, default_value_t = 0.0)]
    pub drop_rate: f64,
    /// False positives per type per frame.
    #[arg(long, default_value_t = 0)]
    pub false_positives: usize,
    #[arg(long, default_value_t = 0.0)]
    pub confidence_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    pub flip_rate: f64,
    /// Rigid lane offset `x,y,z` in meters.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub offset: Option<Vec<f64>>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct LossCheckArgs {
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Flat TOML file; recognises `gt`, `pred`, `bev-rows`, `bev-cols`,
    /// `loss-weights`, `out` and `format`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Fourteen weights: lane cls,reg,type,mask,dice; area cls,reg,dir,seg;
    /// traffic cls,reg,iou; topology ll,lt.
    #[arg(long, value_delimiter = ',')]
    pub loss_weights: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ValidateArgs {
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
}

/// Keys accepted in `--config` files.
const CONFIG_KEYS: &[&str] = &[
    "gt",
    "pred",
    "bev-rows",
    "bev-cols",
    "thresholds-frechet",
    "thresholds-chamfer",
    "thresholds-iou",
    "workers",
    "out",
    "format",
    "topology-lane-threshold",
    "topology-te-iou",
    "interpolation",
    "exclude-empty-classes",
    "lane-combination",
    "area-resample-points",
    "distance-mode",
    "loss-weights",
];

/// Flat key/value configuration read from `--config`.
#[derive(Debug, Default)]
pub struct ConfigFile {
    table: toml::Table,
    path: PathBuf,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> CliResult<Self> {
        let table: toml::Table = text.parse().map_err(|e| input(format!("{}: {e}", path.display())))?;
        for (k, v) in &table {
            if !CONFIG_KEYS.contains(&k.as_str()) {
                return Err(input(format!("{}: unknown key `{k}`", path.display())));
            }
            if v.is_table() {
                return Err(input(format!("{}: `{k}` must be a plain value", path.display())));
            }
        }
        Ok(ConfigFile {
            table,
            path: path.to_path_buf(),
        })
    }

    fn bad(&self, key: &str, want: &str) -> CliError {
        input(format!("{}: `{key}` must be {want}", self.path.display()))
    }

    fn path_value(&self, key: &str) -> CliResult<Option<PathBuf>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(PathBuf::from(s))),
            Some(_) => Err(self.bad(key, "a string")),
        }
    }

    fn string(&self, key: &str) -> CliResult<Option<String>> {
        Ok(self.path_value(key)?.map(|p| p.to_string_lossy().into_owned()))
    }

    fn number(&self, key: &str) -> CliResult<Option<f64>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::Float(f)) => Ok(Some(*f)),
            Some(toml::Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(self.bad(key, "a number")),
        }
    }

    fn count(&self, key: &str) -> CliResult<Option<usize>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::Integer(i)) if *i >= 0 => Ok(Some(*i as usize)),
            Some(_) => Err(self.bad(key, "a non-negative integer")),
        }
    }

    fn boolean(&self, key: &str) -> CliResult<Option<bool>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => Err(self.bad(key, "true or false")),
        }
    }

    /// A list of numbers, written either as an array or a comma string.
    fn numbers(&self, key: &str) -> CliResult<Option<Vec<f64>>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    toml::Value::Float(f) => Ok(*f),
                    toml::Value::Integer(i) => Ok(*i as f64),
                    _ => Err(self.bad(key, "a list of numbers")),
                })
                .collect::<CliResult<Vec<_>>>()
                .map(Some),
            Some(toml::Value::String(s)) => parse_list(s).map(Some).map_err(|_| self.bad(key, "a list of numbers")),
            Some(_) => Err(self.bad(key, "a list of numbers")),
        }
    }

    fn format(&self) -> CliResult<Option<Format>> {
        match self.string("format")?.as_deref() {
            None => Ok(None),
            Some("json") => Ok(Some(Format::Json)),
            Some("table") => Ok(Some(Format::Table)),
            Some(_) => Err(self.bad("format", "`json` or `table`")),
        }
    }
}

pub fn parse_list(s: &str) -> Result<Vec<f64>, std::num::ParseFloatError> {
    s.split(',').map(|t| t.trim().parse()).collect()
}

fn load_config(path: &Option<PathBuf>) -> CliResult<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

fn resolve_grid(grid: &GridArgs, cfg: &ConfigFile) -> CliResult<BevGridSpec> {
    let base = BevGridSpec::default();
    let rows = grid.bev_rows.or(cfg.count("bev-rows")?).unwrap_or(base.rows);
    let cols = grid.bev_cols.or(cfg.count("bev-cols")?).unwrap_or(base.cols);
    let spec = BevGridSpec { rows, cols, ..base };
    spec.validate()?;
    Ok(spec)
}

fn required(flag: Option<PathBuf>, cfg: &ConfigFile, key: &str) -> CliResult<PathBuf> {
    flag.or(cfg.path_value(key)?)
        .ok_or_else(|| input(format!("--{key} is required (flag or config key)")))
}

/// Fully resolved options of `olus eval`.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub gt: PathBuf,
    pub pred: PathBuf,
    pub metrics: MetricConfig,
    pub grid: BevGridSpec,
    pub workers: usize,
    pub out: Option<PathBuf>,
    pub format: Format,
}

/// Merges defaults, the config file and flags (flags win).
pub fn resolve_eval(args: &EvalArgs) -> CliResult<RunConfig> {
    let cfg = load_config(&args.config)?;
    let mut m = MetricConfig::default();
    if let Some(v) = args.thresholds_frechet.clone().or(cfg.numbers("thresholds-frechet")?) {
        m.frechet_thresholds = v;
    }
    if let Some(v) = args.thresholds_chamfer.clone().or(cfg.numbers("thresholds-chamfer")?) {
        m.chamfer_thresholds = v;
    }
    if let Some(v) = args.thresholds_iou.clone().or(cfg.numbers("thresholds-iou")?) {
        m.iou_thresholds = v;
    }
    if let Some(v) = cfg.number("topology-lane-threshold")? {
        m.topology_lane_threshold = v;
    }
    if let Some(v) = cfg.number("topology-te-iou")? {
        m.topology_te_iou = v;
    }
    if let Some(v) = cfg.boolean("exclude-empty-classes")? {
        m.exclude_empty_classes = v;
    }
    if let Some(v) = cfg.count("area-resample-points")? {
        m.area_resample_points = v;
    }
    if let Some(v) = cfg.string("interpolation")? {
        m.interpolation = serde_json::from_value(serde_json::Value::String(v.replace('-', "_")))
            .map_err(|_| cfg.bad("interpolation", "`all-point`, `eleven-point` or `hundred-one-point`"))?;
    }
    if let Some(v) = cfg.string("lane-combination")? {
        m.lane_combination = match v.as_str() {
            "mean" => LaneCombination::Mean,
            "composite" => LaneCombination::Composite,
            _ => return Err(cfg.bad("lane-combination", "`mean` or `composite`")),
        };
    }
    if let Some(v) = cfg.string("distance-mode")? {
        m.distance_mode = serde_json::from_value(serde_json::Value::String(v.replace('-', "_")))
            .map_err(|_| cfg.bad("distance-mode", "`full3d` or `planar`"))?;
    }
    m.validate()?;
    let workers = args.workers.or(cfg.count("workers")?).unwrap_or(1);
    if workers == 0 {
        return Err(input("--workers must be at least 1"));
    }
    Ok(RunConfig {
        gt: required(args.gt.clone(), &cfg, "gt")?,
        pred: required(args.pred.clone(), &cfg, "pred")?,
        metrics: m,
        grid: resolve_grid(&args.grid, &cfg)?,
        workers,
        out: args.out.clone().or(cfg.path_value("out")?),
        format: args.format.or(cfg.format()?).unwrap_or_default(),
    })
}

fn load_opts(grid: BevGridSpec) -> LoadOptions {
    LoadOptions {
        grid,
        ..Default::default()
    }
}

fn log(verbose: bool, msg: impl AsRef<str>) {
    if verbose {
        eprintln!("{}", msg.as_ref());
    }
}

/// Loads both sides, evaluates and writes the report. Returns the report and
/// its rendering in the requested format.
pub fn cmd_eval(args: &EvalArgs, verbose: bool) -> CliResult<(MetricsReport, String)> {
    let rc = resolve_eval(args)?;
    let opts = load_opts(rc.grid);
    let gt = io::load_scenes(&rc.gt, Role::GroundTruth, &opts)?;
    log(verbose, format!("loaded {} ground-truth scene(s)", gt.len()));
    let pred = io::load_scenes(&rc.pred, Role::Prediction, &opts)?;
    log(verbose, format!("loaded {} prediction scene(s)", pred.len()));
    let pairs = io::pair_scenes(&gt, &pred)?;
    log(
        verbose,
        format!("evaluating {} frame(s) on {} worker(s)", pairs.len(), rc.workers),
    );
    let report = evaluate(&pairs, &rc.metrics, rc.workers)?;
    let rendered = match rc.format {
        Format::Json => io::report_to_json(&report),
        Format::Table => io::report_table(&report),
    };
    if let Some(out) = &rc.out {
        io::write_text(out, &rendered)?;
    }
    Ok((report, rendered))
}

fn write_mask(dir: &Path, stem: &str, mask: &BevMask) -> CliResult<()> {
    io::write_text(&dir.join(format!("{stem}.pgm")), &mask.to_pgm())?;
    io::write_text(&dir.join(format!("{stem}.csv")), &mask.to_csv())?;
    Ok(())
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes masks and returns the number of files produced.
pub fn cmd_rasterize(args: &RasterizeArgs, verbose: bool) -> CliResult<usize> {
    let grid = resolve_grid(&args.grid, &ConfigFile::default())?;
    let (path, role) = match (&args.gt, &args.pred) {
        (Some(p), None) => (p, Role::GroundTruth),
        (None, Some(p)) => (p, Role::Prediction),
        _ => return Err(input("exactly one of --gt or --pred is required")),
    };
    let scenes = io::load_scenes(path, role, &load_opts(grid))?;
    let mut written = 0;
    for scene in &scenes {
        for af in &scene.frames {
            if args.frame.is_some_and(|id| id != af.frame.id) {
                continue;
            }
            let stem = format!("{}_{}", sanitize(&scene.scene_id), af.frame.id);
            match args.source {
                RasterSource::SdMap => {
                    let Some(map) = &af.sd_map else { continue };
                    write_mask(
                        &args.out,
                        &format!("{stem}_sd"),
                        &rasterize_sdmap(map, &grid, !args.no_clip),
                    )?;
                    written += 2;
                    if args.by_type {
                        for (kind, mask) in rasterize_sdmap_by_type(map, &grid, !args.no_clip) {
                            write_mask(&args.out, &format!("{stem}_sd_{}", sanitize(&kind)), &mask)?;
                            written += 2;
                        }
                    }
                }
                RasterSource::Lanes => {
                    write_mask(
                        &args.out,
                        &format!("{stem}_lanes"),
                        &lane_union_mask(&af.frame.lane_segments, &grid),
                    )?;
                    written += 2;
                }
                RasterSource::Areas => {
                    write_mask(
                        &args.out,
                        &format!("{stem}_areas"),
                        &area_union_mask(&af.frame.areas, &grid),
                    )?;
                    written += 2;
                }
            }
            log(verbose, format!("{stem}: done"));
        }
    }
    if written == 0 {
        return Err(input("nothing to rasterize (no matching frame or no SD map)"));
    }
    Ok(written)
}

#[derive(Serialize)]
struct SynthSummary<'a> {
    scene_id: &'a str,
    expected: &'a olus_core::synthetic::ExpectedOutcome,
}

/// Writes `gt/`, `pred/` and `expected.json` under `args.out`; returns the
/// generated (ground truth, prediction) scenes.
pub fn cmd_synth(args: &SynthArgs, verbose: bool) -> CliResult<Vec<(SceneArchive, SceneArchive)>> {
    let offset = match &args.offset {
        None => None,
        Some(v) if v.len() == 3 => Some([v[0], v[1], v[2]]),
        Some(_) => return Err(input("--offset takes exactly three numbers")),
    };
    let spec = PerturbationSpec {
        point_jitter_sigma: args.jitter,
        jitter_mode: match args.jitter_mode {
            JitterArg::Rigid => JitterMode::Rigid,
            JitterArg::Noisy => JitterMode::Noisy,
        },
        drop_rate: args.drop_rate,
        false_positive_count: args.false_positives,
        confidence_noise: args.confidence_noise,
        topology_flip_rate: args.flip_rate,
        rigid_offset: offset,
        seed: 0,
    };
    spec.validate()?;
    let layout = match args.layout {
        LayoutArg::Straight => Layout::Straight,
        LayoutArg::Arc => Layout::Arc,
        LayoutArg::Mixed => Layout::Mixed,
    };
    let width = args.scenes.saturating_sub(1).to_string().len().max(3);
    let mut out = Vec::with_capacity(args.scenes);
    let mut summaries = Vec::with_capacity(args.scenes);
    for k in 0..args.scenes {
        let scene_id = format!("scene_{k:0width$}");
        let gt = generate_scene(&SceneSpec {
            scene_id: scene_id.clone(),
            frames: args.frames,
            lanes: args.lanes,
            areas: args.areas,
            traffic_elements: args.traffic_elements,
            layout,
            seed: args.seed.wrapping_mul(1_000_003).wrapping_add(k as u64),
        });
        let pspec = PerturbationSpec {
            seed: args.seed.wrapping_mul(1_000_003).wrapping_add(k as u64) ^ 0x5eed,
            ..spec.clone()
        };
        let p = perturb_with(&gt, &pspec, &MetricConfig::default())?;
        io::write_scene(
            &gt,
            Role::GroundTruth,
            &args.out.join("gt").join(format!("{scene_id}.json")),
        )?;
        io::write_scene(
            &p.archive,
            Role::Prediction,
            &args.out.join("pred").join(format!("{scene_id}.json")),
        )?;
        summaries.push((scene_id, p.expected));
        out.push((gt, p.archive));
        log(verbose, format!("scene {}/{}", k + 1, args.scenes));
    }
    let doc: Vec<SynthSummary<'_>> = summaries
        .iter()
        .map(|(id, e)| SynthSummary {
            scene_id: id,
            expected: e,
        })
        .collect();
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Internal(e.to_string()))?;
    io::write_text(&args.out.join("expected.json"), &(text + "\n"))?;
    Ok(out)
}

#[derive(Serialize)]
struct FrameLoss {
    scene_id: String,
    frame_id: u64,
    losses: LossBreakdown,
}

/// Per-frame loss breakdown with a mean row; returns the rendered output.
pub fn cmd_loss_check(args: &LossCheckArgs, verbose: bool) -> CliResult<String> {
    let cfg = load_config(&args.config)?;
    let grid = resolve_grid(&args.grid, &cfg)?;
    let weights = match args.loss_weights.clone().or(cfg.numbers("loss-weights")?) {
        None => LossWeights::default(),
        Some(v) => {
            let arr: [f64; 14] = v
                .try_into()
                .map_err(|v: Vec<f64>| input(format!("--loss-weights needs 14 values, got {}", v.len())))?;
            LossWeights::from_all(arr)
        }
    };
    weights.validate()?;
    let gt_path = required(args.gt.clone(), &cfg, "gt")?;
    let pred_path = required(args.pred.clone(), &cfg, "pred")?;
    let opts = load_opts(grid);
    let gt = io::load_scenes(&gt_path, Role::GroundTruth, &opts)?;
    let pred = io::load_scenes(&pred_path, Role::Prediction, &opts)?;
    io::pair_scenes(&gt, &pred)?;
    let lcfg = LossConfig {
        grid,
        ..Default::default()
    };
    let mut rows = Vec::new();
    for g in &gt {
        let p = pred.iter().find(|p| p.scene_id == g.scene_id).expect("paired above");
        for (gf, pf) in g.frames().zip(p.frames()) {
            let assignment = assign_for_loss(pf, gf, &lcfg)?;
            let losses = composite_losses(pf, gf, &weights, &assignment, &AuxOutputs::default(), &lcfg)?;
            rows.push(FrameLoss {
                scene_id: g.scene_id.clone(),
                frame_id: gf.id,
                losses,
            });
        }
        log(verbose, format!("{}: {} frame(s)", g.scene_id, g.frames.len()));
    }
    let format = args.format.or(cfg.format()?).unwrap_or(Format::Table);
    let rendered = match format {
        Format::Json => {
            serde_json::to_string_pretty(&serde_json::to_value(&rows).map_err(|e| CliError::Internal(e.to_string()))?)
                .map_err(|e| CliError::Internal(e.to_string()))?
                + "\n"
        }
        Format::Table => loss_table(&rows),
    };
    if let Some(out) = args.out.clone().or(cfg.path_value("out")?) {
        io::write_text(&out, &rendered)?;
    }
    Ok(rendered)
}

fn loss_table(rows: &[FrameLoss]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<20} {:>8} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "scene", "frame", "L_ls", "L_a", "L_te", "L_ll", "L_lt", "total"
    );
    let mut mean = [0.0; 6];
    for r in rows {
        let l = &r.losses;
        let v = [l.l_ls, l.l_a, l.l_te, l.l_ll, l.l_lt, l.total];
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / rows.len() as f64;
        }
        let _ = writeln!(
            s,
            "{:<20} {:>8} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
            r.scene_id, r.frame_id, v[0], v[1], v[2], v[3], v[4], v[5]
        );
    }
    let _ = writeln!(
        s,
        "{:<20} {:>8} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
        "mean", "", mean[0], mean[1], mean[2], mean[3], mean[4], mean[5]
    );
    s
}

/// Audits every given document; the summary line on success.
pub fn cmd_validate(args: &ValidateArgs, verbose: bool) -> CliResult<String> {
    if args.gt.is_none() && args.pred.is_none() {
        return Err(input("give --gt and/or --pred"));
    }
    let grid = resolve_grid(&args.grid, &ConfigFile::default())?;
    let opts = load_opts(grid);
    let mut summary = String::new();
    for (path, role, name) in [
        (&args.gt, Role::GroundTruth, "ground truth"),
        (&args.pred, Role::Prediction, "predictions"),
    ] {
        let Some(path) = path else { continue };
        let scenes = io::load_scenes(path, role, &opts)?;
        let frames: usize = scenes.iter().map(|s| s.frames.len()).sum();
        log(verbose, format!("{}: {} scene(s)", path.display(), scenes.len()));
        let _ = writeln!(summary, "{name}: {} scene(s), {frames} frame(s) ok", scenes.len());
    }
    Ok(summary)
}

/// Dispatches a parsed command line; stdout text on success.
pub fn run(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Eval(a) => {
            let (report, rendered) = cmd_eval(a, cli.verbose)?;
            if a.out.is_some() {
                Ok(io::report_table(&report))
            } else {
                Ok(rendered)
            }
        }
        Command::Rasterize(a) => {
            let n = cmd_rasterize(a, cli.verbose)?;
            Ok(format!("wrote {n} file(s) to {}\n", a.out.display()))
        }
        Command::Synth(a) => {
            let scenes = cmd_synth(a, cli.verbose)?;
            Ok(format!("wrote {} scene(s) to {}\n", scenes.len(), a.out.display()))
        }
        Command::LossCheck(a) => cmd_loss_check(a, cli.verbose),
        Command::Validate(a) => cmd_validate(a, cli.verbose),
    }
}
