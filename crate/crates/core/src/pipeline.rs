//! End-to-end pipeline, parameter sweeps, and report output.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aggregate::{concatenate, select_frame_indices, ConcatConfig};
use crate::contour::{detect_contours, ContourConfig, PlanarIndex};
use crate::error::{Error, Result};
use crate::gauge::{classify_vegetation_inliers, order_contour, ContourPolygon, GaugeConfig};
use crate::ingest::{self, LoadReport, Sequence};
use crate::preprocess::{
    filter_class, poisson_downsample, remove_statistical_outliers, OutlierConfig, SamplingConfig,
};
use crate::project::{project_points, render_overlays, PixelHit};
use crate::types::{LabeledPointCloud, SemanticClass};

pub const REPORT_FILE: &str = "report.json";
pub const INLIERS_FILE: &str = "inliers.xyzl";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Which frames' camera images get annotated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotatePolicy {
    /// The frames chosen by the concatenation step.
    #[default]
    Selected,
    All,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    pub concat: ConcatConfig,
    pub outlier: OutlierConfig,
    pub sampling: SamplingConfig,
    pub contour: ContourConfig,
    pub gauge: GaugeConfig,
    pub annotate: AnnotatePolicy,
    /// Worker threads; 0 uses one per logical CPU.
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::from("."),
            output: PathBuf::from("out"),
            concat: ConcatConfig::default(),
            outlier: OutlierConfig::default(),
            sampling: SamplingConfig::default(),
            contour: ContourConfig::default(),
            gauge: GaugeConfig::default(),
            annotate: AnnotatePolicy::default(),
            threads: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.concat.validate()?;
        self.outlier.validate()?;
        self.sampling.validate()?;
        self.contour.validate()?;
        self.gauge.validate()
    }

    /// Reads a `.json` or `.toml` config file; missing fields take defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display()))),
            _ => serde_json::from_str(&text).map_err(|e| Error::json(path, e)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub frames_concatenated: usize,
    pub total_points: usize,
    pub road_points: usize,
    pub road_points_after_outlier_removal: usize,
    pub samples: usize,
    pub contour_points: usize,
    pub polygon_rings: usize,
    pub discarded_contour_points: usize,
    pub vegetation_points: usize,
    pub vegetation_inliers: usize,
    pub pixel_hits: usize,
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub load: f64,
    pub concatenate: f64,
    pub filter: f64,
    pub outlier_removal: f64,
    pub sampling: f64,
    pub contour: f64,
    pub gauge: f64,
    pub projection: f64,
    pub output: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportParameters {
    pub step: usize,
    pub samples: usize,
    pub radius: f64,
    pub threshold: f64,
    pub clearance_height: f64,
    pub ground_slack: f64,
    pub ring_split_factor: f64,
    pub outlier_k: usize,
    pub outlier_std_ratio: f64,
    pub elimination_exponent: f64,
}

impl From<&PipelineConfig> for ReportParameters {
    fn from(c: &PipelineConfig) -> Self {
        Self {
            step: c.concat.step,
            samples: c.sampling.target_count,
            radius: c.contour.radius,
            threshold: c.contour.angle_threshold,
            clearance_height: c.gauge.clearance_height,
            ground_slack: c.gauge.ground_slack,
            ring_split_factor: c.gauge.ring_split_factor,
            outlier_k: c.outlier.k_neighbors,
            outlier_std_ratio: c.outlier.std_ratio,
            elimination_exponent: c.sampling.elimination_exponent,
        }
    }
}

/// Result of one pipeline run. Point sets are carried in memory; only the
/// counts, timings and parameters go into `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct ClearanceReport {
    pub sequence_id: String,
    pub parameters: ReportParameters,
    pub counts: Counts,
    pub timings: StageTimings,
    pub annotated_frames: Vec<u32>,
    pub self_intersecting_rings: usize,
    #[serde(skip)]
    pub inliers: LabeledPointCloud,
    #[serde(skip)]
    pub contour: LabeledPointCloud,
    #[serde(skip)]
    pub polygon: ContourPolygon,
    #[serde(skip)]
    pub hits: Vec<PixelHit>,
}

impl ClearanceReport {
    pub fn check_invariants(&self) -> bool {
        let c = &self.counts;
        c.vegetation_inliers <= c.vegetation_points && c.vegetation_points <= c.total_points
    }
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *slot = start.elapsed().as_secs_f64();
    out
}

/// Runs `f` on a rayon pool with `threads` workers (0 = one per logical
/// CPU).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn frames_to_annotate(sequence: &Sequence, cfg: &PipelineConfig) -> Vec<u32> {
    match cfg.annotate {
        AnnotatePolicy::None => Vec::new(),
        AnnotatePolicy::All => sequence.frames.iter().map(|f| f.frame_index()).collect(),
        AnnotatePolicy::Selected => select_frame_indices(sequence.frames.len(), cfg.concat.step)
            .into_iter()
            .map(|k| sequence.frames[k].frame_index())
            .collect(),
    }
}

/// Everything after loading: concatenate through projection. Writes
/// nothing.
pub fn analyze(sequence: &Sequence, cfg: &PipelineConfig) -> Result<ClearanceReport> {
    cfg.validate()?;
    let started = Instant::now();
    let mut t = StageTimings::default();
    let mut counts = Counts {
        frames_concatenated: select_frame_indices(sequence.frames.len(), cfg.concat.step).len(),
        ..Default::default()
    };

    let cloud = timed(&mut t.concatenate, || concatenate(sequence, &cfg.concat))
        .map_err(|e| e.at_stage("concatenate"))?;
    counts.total_points = cloud.len();

    let (road, vegetation) = timed(&mut t.filter, || {
        (
            filter_class(&cloud, SemanticClass::Road),
            filter_class(&cloud, SemanticClass::Vegetation),
        )
    });
    counts.road_points = road.len();
    counts.vegetation_points = vegetation.len();
    if road.is_empty() {
        return Err(Error::NoRoadPoints.at_stage("filter"));
    }

    let road = timed(&mut t.outlier_removal, || {
        remove_statistical_outliers(&road, &cfg.outlier)
    });
    counts.road_points_after_outlier_removal = road.len();

    let samples = timed(&mut t.sampling, || poisson_downsample(&road, &cfg.sampling));
    counts.samples = samples.len();

    let contour = timed(&mut t.contour, || detect_contours(&samples, &cfg.contour));
    counts.contour_points = contour.len();

    let (polygon, inliers, self_intersecting) = timed(&mut t.gauge, || -> Result<_> {
        let polygon = order_contour(&contour, &cfg.gauge);
        let bad = polygon.self_intersecting_rings();
        if !bad.is_empty() {
            log::warn!(
                "{} contour ring(s) self-intersect; membership uses even-odd ray casting",
                bad.len()
            );
        }
        let road_index = PlanarIndex::new(samples.points().to_vec());
        let (inliers, _) =
            classify_vegetation_inliers(&vegetation, &polygon, &road_index, &cfg.gauge)?;
        Ok((polygon, inliers, bad.len()))
    })
    .map_err(|e| e.at_stage("gauge"))?;
    counts.polygon_rings = polygon.rings.len();
    counts.discarded_contour_points = polygon.discarded.len();
    counts.vegetation_inliers = inliers.len();

    let annotated_frames = frames_to_annotate(sequence, cfg);
    let hits = timed(&mut t.projection, || {
        project_points(sequence, &inliers, &annotated_frames)
    })
    .map_err(|e| e.at_stage("projection"))?;
    counts.pixel_hits = hits.len();

    t.total = started.elapsed().as_secs_f64();
    Ok(ClearanceReport {
        sequence_id: sequence.sequence_id.clone(),
        parameters: cfg.into(),
        counts,
        timings: t,
        annotated_frames,
        self_intersecting_rings: self_intersecting,
        inliers,
        contour,
        polygon,
        hits,
    })
}

fn write_outputs(
    sequence: &Sequence,
    report: &ClearanceReport,
    out: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let inliers_path = out.join(INLIERS_FILE);
    written.push(inliers_path.clone());
    ingest::write_xyzl(&inliers_path, &report.inliers, &sequence.label_map)?;

    let files = render_overlays(sequence, &report.annotated_frames, &report.hits, out)?;
    written.extend(files);

    let report_path = out.join(REPORT_FILE);
    written.push(report_path.clone());
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::json(&report_path, e))?;
    fs::write(&report_path, json + "\n").map_err(|e| Error::io(&report_path, e))
}

/// Loads `cfg.input`, runs the full pipeline and writes `report.json`,
/// `inliers.xyzl`, annotation CSVs and overlays into `cfg.output`. On error
/// every file this run wrote is removed.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<ClearanceReport> {
    cfg.validate()?;
    with_threads(cfg.threads, || {
        let started = Instant::now();
        let mut load_time = 0.0;
        let (sequence, load_report) = timed(&mut load_time, || {
            ingest::load_sequence_with_own_labels(&cfg.input)
        })
        .map_err(|e| e.at_stage("load"))?;
        log::info!(
            "loaded {} frame(s), {} point(s) from {}",
            load_report.frames,
            load_report.rows_loaded,
            cfg.input.display()
        );
        let mut report = analyze(&sequence, cfg)?;
        report.timings.load = load_time;

        let mut written = Vec::new();
        let out_start = Instant::now();
        if let Err(e) = write_outputs(&sequence, &report, &cfg.output, &mut written) {
            for path in written.iter().rev() {
                let _ = fs::remove_file(path);
            }
            return Err(e.at_stage("output"));
        }
        report.timings.output = out_start.elapsed().as_secs_f64();
        report.timings.total = started.elapsed().as_secs_f64();
        // Rewrite with final timings.
        let report_path = cfg.output.join(REPORT_FILE);
        let json =
            serde_json::to_string_pretty(&report).map_err(|e| Error::json(&report_path, e))?;
        fs::write(&report_path, json + "\n")
            .map_err(|e| Error::io(&report_path, e).at_stage("output"))?;
        Ok(report)
    })?
}

/// Loads a sequence the way [`run_pipeline`] does.
pub fn load_input(cfg: &PipelineConfig) -> Result<(Sequence, LoadReport)> {
    ingest::load_sequence_with_own_labels(&cfg.input).map_err(|e| e.at_stage("load"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    Step,
    Samples,
    Radius,
    Threshold,
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParameter::Step => "step",
            SweepParameter::Samples => "samples",
            SweepParameter::Radius => "radius",
            SweepParameter::Threshold => "threshold",
        })
    }
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step" => Ok(SweepParameter::Step),
            "samples" => Ok(SweepParameter::Samples),
            "radius" => Ok(SweepParameter::Radius),
            "threshold" => Ok(SweepParameter::Threshold),
            other => Err(Error::InvalidConfig(format!(
                "unknown sweep parameter '{other}' (expected step, samples, radius or threshold)"
            ))),
        }
    }
}

impl SweepParameter {
    /// `cfg` with this parameter set to `value`.
    pub fn apply(self, cfg: &PipelineConfig, value: f64) -> Result<PipelineConfig> {
        let as_count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 && value <= usize::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(Error::InvalidConfig(format!(
                    "{self} must be a positive integer, got {value}"
                )))
            }
        };
        let mut c = cfg.clone();
        match self {
            SweepParameter::Step => c.concat.step = as_count()?,
            SweepParameter::Samples => c.sampling.target_count = as_count()?,
            SweepParameter::Radius => c.contour.radius = value,
            SweepParameter::Threshold => c.contour.angle_threshold = value,
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub frames: Option<usize>,
    pub total_points: Option<usize>,
    pub road_points: Option<usize>,
    pub samples: Option<usize>,
    pub contour_points: Option<usize>,
    pub vegetation_points: Option<usize>,
    pub vegetation_inliers: Option<usize>,
    pub concatenate_s: Option<f64>,
    pub outlier_removal_s: Option<f64>,
    pub sampling_s: Option<f64>,
    pub contour_s: Option<f64>,
    pub gauge_s: Option<f64>,
    pub total_s: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    fn from_result(param: SweepParameter, value: f64, result: Result<ClearanceReport>) -> Self {
        let mut row = SweepRow {
            parameter: param.to_string(),
            value,
            frames: None,
            total_points: None,
            road_points: None,
            samples: None,
            contour_points: None,
            vegetation_points: None,
            vegetation_inliers: None,
            concatenate_s: None,
            outlier_removal_s: None,
            sampling_s: None,
            contour_s: None,
            gauge_s: None,
            total_s: None,
            error: None,
        };
        match result {
            Ok(r) => {
                let (c, t) = (r.counts, r.timings);
                row.frames = Some(c.frames_concatenated);
                row.total_points = Some(c.total_points);
                row.road_points = Some(c.road_points);
                row.samples = Some(c.samples);
                row.contour_points = Some(c.contour_points);
                row.vegetation_points = Some(c.vegetation_points);
                row.vegetation_inliers = Some(c.vegetation_inliers);
                row.concatenate_s = Some(t.concatenate);
                row.outlier_removal_s = Some(t.outlier_removal);
                row.sampling_s = Some(t.sampling);
                row.contour_s = Some(t.contour);
                row.gauge_s = Some(t.gauge);
                row.total_s = Some(t.total);
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        row
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub parameter: SweepParameter,
    pub rows: Vec<SweepRow>,
}

const SWEEP_HEADER: [&str; 16] = [
    "parameter",
    "value",
    "frames",
    "total_points",
    "road_points",
    "samples",
    "contour_points",
    "vegetation_points",
    "vegetation_inliers",
    "concatenate_s",
    "outlier_removal_s",
    "sampling_s",
    "contour_s",
    "gauge_s",
    "total_s",
    "error",
];

impl SweepTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        w.write_record(SWEEP_HEADER)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidConfig(format!("csv buffer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// One analysis per value on an already-loaded sequence. Failing runs are
/// recorded in their row; the sweep continues.
pub fn sweep_sequence(
    sequence: &Sequence,
    cfg: &PipelineConfig,
    parameter: SweepParameter,
    values: &[f64],
) -> SweepTable {
    let rows = values
        .iter()
        .map(|&v| {
            let result = parameter.apply(cfg, v).and_then(|c| analyze(sequence, &c));
            SweepRow::from_result(parameter, v, result)
        })
        .collect();
    SweepTable { parameter, rows }
}

/// Loads the input once and sweeps `parameter` over `values`, writing
/// `sweep.csv` into the output directory.
pub fn run_sweep(
    cfg: &PipelineConfig,
    parameter: SweepParameter,
    values: &[f64],
) -> Result<SweepTable> {
    for &v in values {
        parameter.apply(cfg, v)?;
    }
    with_threads(cfg.threads, || {
        let (sequence, _) = load_input(cfg)?;
        let table = sweep_sequence(&sequence, cfg, parameter, values);
        fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
        let path = cfg.output.join(SWEEP_FILE);
        fs::write(&path, table.to_csv()?).map_err(|e| Error::io(&path, e))?;
        Ok(table)
    })?
}
