//! Error metrics against ground truth and batch experiments.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::geometry::{
    homography_from_pose, CameraIntrinsics, Dof, GeometryError, Homography, PlaneParams,
    RigidTransform,
};
use crate::imaging::{read_sequence, GrayImage, SequenceError, TemplateRegion, TruthRecord};
use crate::io::write_atomic;
use crate::optimizer::{optimize, OptimizerError, Preset, PsoConfig, PsoOverrides, SearchBounds};
use crate::similarity::{MeasureKind, SimilarityMeasure};
use crate::tracker::{FrameResult, Tracker, TrackerConfig, TrackerError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("sequence not found: {0}")]
    MissingSequence(PathBuf),
    #[error("sequence has no ground truth")]
    MissingTruth,
    #[error("surface dimension {0} is outside the searched pose")]
    SurfaceDimension(usize),
    #[error("surface grid needs at least one cell per axis and lo <= hi")]
    SurfaceGrid,
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Estimated pose compared with ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError {
    /// `‖t_est − t_true‖` in scene units.
    pub translation_error: f64,
    /// Geodesic angle of `R_est · R_trueᵀ` in radians.
    pub rotation_error: f64,
    /// RMS distance in pixels between the template corners mapped by the
    /// estimated and by the true homography.
    pub corner_rmse: f64,
}

/// RMS corner distance between two homographies over the region corners.
pub fn corner_rmse(estimate: &Homography, truth: &Homography, region: &TemplateRegion) -> Result<f64, GeometryError> {
    let mut sum = 0.0;
    let corners = region.rect().corners();
    for &(u, v) in &corners {
        let (ex, ey) = estimate.warp_point(u, v)?;
        let (tx, ty) = truth.warp_point(u, v)?;
        sum += (ex - tx).powi(2) + (ey - ty).powi(2);
    }
    Ok((sum / corners.len() as f64).sqrt())
}

pub fn rotation_error(estimate: &RigidTransform, truth: &RigidTransform) -> f64 {
    let relative = estimate.rotation * truth.rotation.transpose();
    ((relative.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
}

pub fn pose_error(
    estimate: &RigidTransform,
    truth: &RigidTransform,
    region: &TemplateRegion,
    intrinsics: &CameraIntrinsics,
    plane: &PlaneParams,
) -> Result<PoseError, GeometryError> {
    let h_est = homography_from_pose(estimate, plane, intrinsics)?;
    let h_true = homography_from_pose(truth, plane, intrinsics)?;
    Ok(PoseError {
        translation_error: (estimate.translation - truth.translation).norm(),
        rotation_error: rotation_error(estimate, truth),
        corner_rmse: corner_rmse(&h_est, &h_true, region)?,
    })
}

/// Regular grid over two pose components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceGrid {
    pub dims: (usize, usize),
    pub range1: (f64, f64),
    pub range2: (f64, f64),
    pub cells: (usize, usize),
}

impl SurfaceGrid {
    /// `cells × cells` grid of `[center - half, center + half]` on both axes.
    pub fn centered(dims: (usize, usize), center: (f64, f64), half: f64, cells: usize) -> Self {
        Self {
            dims,
            range1: (center.0 - half, center.0 + half),
            range2: (center.1 - half, center.1 + half),
            cells: (cells, cells),
        }
    }

    fn axis(range: (f64, f64), n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![0.5 * (range.0 + range.1)];
        }
        (0..n)
            .map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64)
            .collect()
    }
}

/// Fitness sampled over a [`SurfaceGrid`]; `values[row][col]` with rows
/// along the first dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub dims: (usize, usize),
    pub axis1: Vec<f64>,
    pub axis2: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl Surface {
    /// `(row, col)` of the largest value; the first one wins ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_value = f64::NEG_INFINITY;
        for (r, row) in self.values.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v > best_value {
                    best_value = v;
                    best = (r, c);
                }
            }
        }
        best
    }

    /// Cell closest to the pose components `(a, b)`.
    pub fn nearest_cell(&self, a: f64, b: f64) -> (usize, usize) {
        let nearest = |axis: &[f64], v: f64| {
            axis.iter()
                .enumerate()
                .min_by(|x, y| (x.1 - v).abs().total_cmp(&(y.1 - v).abs()))
                .map(|(i, _)| i)
                .unwrap_or(0)
        };
        (nearest(&self.axis1, a), nearest(&self.axis2, b))
    }

    /// Writes `row,col,dim1,dim2,fitness`.
    pub fn write_csv(&self, path: &Path) -> io::Result<()> {
        write_atomic(path, |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["row", "col", "dim1", "dim2", "fitness"])?;
            for (r, row) in self.values.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    out.write_record([
                        r.to_string(),
                        c.to_string(),
                        self.axis1[r].to_string(),
                        self.axis2[c].to_string(),
                        v.to_string(),
                    ])?;
                }
            }
            out.flush()
        })
    }
}

/// Tracker fitness of `frame` against the template of `reference` over two
/// pose components, holding the others at zero.
pub fn similarity_surface(
    reference: &GrayImage,
    frame: &GrayImage,
    region: &TemplateRegion,
    cfg: &TrackerConfig,
    grid: &SurfaceGrid,
) -> Result<Surface, HarnessError> {
    let k = cfg.dof.count();
    for d in [grid.dims.0, grid.dims.1] {
        if d >= k {
            return Err(HarnessError::SurfaceDimension(d));
        }
    }
    if grid.dims.0 == grid.dims.1
        || grid.cells.0 == 0
        || grid.cells.1 == 0
        || grid.range1.0 > grid.range1.1
        || grid.range2.0 > grid.range2.1
    {
        return Err(HarnessError::SurfaceGrid);
    }
    let tracker = Tracker::new(reference, region.clone(), cfg.clone())?;
    let axis1 = SurfaceGrid::axis(grid.range1, grid.cells.0);
    let axis2 = SurfaceGrid::axis(grid.range2, grid.cells.1);
    let base = RigidTransform::identity();
    let mut x = vec![0.0; k];
    let values = axis1
        .iter()
        .map(|&a| {
            axis2
                .iter()
                .map(|&b| {
                    x[grid.dims.0] = a;
                    x[grid.dims.1] = b;
                    tracker.fitness(&x, &base, frame)
                })
                .collect()
        })
        .collect();
    Ok(Surface {
        dims: grid.dims,
        axis1,
        axis2,
        values,
    })
}

/// Per-frame record of a tracking run against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRow {
    pub frame: usize,
    pub error: PoseError,
    pub fitness: f64,
    pub iterations: usize,
    pub lost: bool,
}

/// Identifies one cell of an experiment.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RunKey {
    pub measure: MeasureKind,
    pub dof: Dof,
    pub preset: Preset,
    pub seed: u64,
}

impl RunKey {
    pub fn name(&self) -> String {
        format!("{}_dof{}_{}_s{}", self.measure, self.dof, self.preset, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub run: RunKey,
    pub rows: Vec<FrameRow>,
    pub mean_corner_rmse: f64,
    pub median_corner_rmse: f64,
    pub max_corner_rmse: f64,
    pub mean_translation_error: f64,
    pub mean_rotation_error: f64,
    /// RMS of per-frame corner RMSE divided by the template diagonal.
    pub nrmse: f64,
    /// Frames processed without losing track.
    pub frames_tracked: usize,
    pub lost: bool,
    /// Hash of the frames this run consumed.
    pub input_checksum: u64,
}

impl ExperimentReport {
    /// Aggregates per-frame rows into a report.
    pub fn from_rows(run: RunKey, rows: Vec<FrameRow>, region: &TemplateRegion, input_checksum: u64) -> Self {
        let n = rows.len().max(1) as f64;
        let corner: Vec<f64> = rows.iter().map(|r| r.error.corner_rmse).collect();
        let mean = |v: &mut dyn Iterator<Item = f64>| v.sum::<f64>() / n;
        let mean_corner_rmse = mean(&mut corner.iter().copied());
        let rms = (corner.iter().map(|c| c * c).sum::<f64>() / n).sqrt();
        Self {
            mean_translation_error: mean(&mut rows.iter().map(|r| r.error.translation_error)),
            mean_rotation_error: mean(&mut rows.iter().map(|r| r.error.rotation_error)),
            median_corner_rmse: median(&corner),
            max_corner_rmse: corner.iter().copied().fold(0.0, f64::max),
            nrmse: rms / region.rect().diagonal(),
            frames_tracked: rows.iter().filter(|r| !r.lost).count(),
            lost: rows.iter().any(|r| r.lost),
            mean_corner_rmse,
            rows,
            run,
            input_checksum,
        }
    }

    /// Writes `frame,trans_err,rot_err,corner_rmse,fitness,iterations`.
    pub fn write_errors_csv(&self, path: &Path) -> io::Result<()> {
        write_atomic(path, |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["frame", "trans_err", "rot_err", "corner_rmse", "fitness", "iterations"])?;
            for r in &self.rows {
                out.write_record([
                    r.frame.to_string(),
                    r.error.translation_error.to_string(),
                    r.error.rotation_error.to_string(),
                    r.error.corner_rmse.to_string(),
                    r.fitness.to_string(),
                    r.iterations.to_string(),
                ])?;
            }
            out.flush()
        })
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Stable hash of the pixel data of `frames`.
pub fn frames_checksum(frames: &[GrayImage]) -> u64 {
    let mut h = DefaultHasher::new();
    for f in frames {
        f.width().hash(&mut h);
        f.height().hash(&mut h);
        for v in f.data() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

/// Compares tracking results with ground truth row by row.
pub fn score_run(
    results: &[FrameResult],
    truth: &[TruthRecord],
    region: &TemplateRegion,
    intrinsics: &CameraIntrinsics,
) -> Result<Vec<FrameRow>, HarnessError> {
    results
        .iter()
        .zip(truth)
        .map(|(r, t)| {
            Ok(FrameRow {
                frame: r.frame_index,
                error: pose_error(&r.cumulative_transform, &t.transform, region, intrinsics, region.plane())?,
                fitness: r.fitness,
                iterations: r.iterations,
                lost: r.lost,
            })
        })
        .collect()
}

/// Where an experiment takes its frames from.
#[derive(Debug, Clone)]
pub enum SequenceSource {
    Directory(PathBuf),
    /// Frames and truth already in memory.
    Loaded {
        frames: Arc<Vec<GrayImage>>,
        truth: Arc<Vec<TruthRecord>>,
    },
}

/// A cross product of tracking runs over one sequence.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub sequence: SequenceSource,
    pub region: TemplateRegion,
    pub intrinsics: CameraIntrinsics,
    pub measures: Vec<MeasureKind>,
    pub dofs: Vec<Dof>,
    pub presets: Vec<Preset>,
    pub seeds: Vec<u64>,
    pub bins: usize,
    pub translation_bound: f64,
    pub rotation_bound: f64,
    /// Applied on top of each preset.
    pub pso_overrides: PsoOverrides,
    pub warm_start: bool,
    /// Per-run errors CSVs and `summary.csv` go here when set.
    pub output_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    /// Tracker configuration for one cell.
    pub fn tracker_config(&self, key: &RunKey) -> Result<TrackerConfig, HarnessError> {
        let measure = SimilarityMeasure::with_bins(key.measure, self.bins)
            .map_err(|e| HarnessError::Optimizer(OptimizerError::InvalidConfig(e.to_string())))?;
        let pso = self.pso_overrides.apply(PsoConfig::preset(key.preset).with_seed(key.seed));
        let bounds: SearchBounds =
            crate::tracker::pose_bounds(key.dof, self.translation_bound, self.rotation_bound)?;
        Ok(TrackerConfig {
            dof: key.dof,
            measure,
            pso,
            bounds,
            intrinsics: self.intrinsics,
            warm_start: self.warm_start,
        })
    }

    pub fn runs(&self) -> Vec<RunKey> {
        let mut keys = Vec::new();
        for &measure in &self.measures {
            for &dof in &self.dofs {
                for &preset in &self.presets {
                    for &seed in &self.seeds {
                        keys.push(RunKey {
                            measure,
                            dof,
                            preset,
                            seed,
                        });
                    }
                }
            }
        }
        keys
    }
}

/// Runs every cell of `spec` and, with an output directory, writes
/// `errors_<run>.csv` per cell plus `summary.csv`.
///
/// The first frame is the tracking reference.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ExperimentReport>, HarnessError> {
    let (frames, truth) = match &spec.sequence {
        SequenceSource::Directory(dir) => {
            let loaded = read_sequence(dir).map_err(|e| match e {
                SequenceError::Missing(p) => HarnessError::MissingSequence(p),
                other => HarnessError::Sequence(other),
            })?;
            let truth = loaded.truth.ok_or(HarnessError::MissingTruth)?;
            (Arc::new(loaded.frames), Arc::new(truth))
        }
        SequenceSource::Loaded { frames, truth } => (frames.clone(), truth.clone()),
    };
    if frames.is_empty() {
        return Err(HarnessError::MissingSequence(PathBuf::new()));
    }
    let mut reports = Vec::new();
    for key in spec.runs() {
        let cfg = spec.tracker_config(&key)?;
        let checksum = frames_checksum(&frames);
        let tracker = Tracker::new(&frames[0], spec.region.clone(), cfg)?;
        let results = tracker.track_sequence(&frames)?;
        let rows = score_run(&results, &truth, &spec.region, &spec.intrinsics)?;
        let report = ExperimentReport::from_rows(key, rows, &spec.region, checksum);
        log::info!(
            "{}: mean corner rmse {:.3} px, nrmse {:.4}, {} frames tracked",
            report.run.name(),
            report.mean_corner_rmse,
            report.nrmse,
            report.frames_tracked
        );
        if let Some(dir) = &spec.output_dir {
            report.write_errors_csv(&dir.join(format!("errors_{}.csv", report.run.name())))?;
        }
        reports.push(report);
    }
    if let Some(dir) = &spec.output_dir {
        write_summary_csv(&dir.join("summary.csv"), &reports)?;
    }
    Ok(reports)
}

/// Writes `run,dof,measure,preset,seed,mean_corner_rmse,nrmse,frames_tracked`.
pub fn write_summary_csv(path: &Path, reports: &[ExperimentReport]) -> io::Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "run",
            "dof",
            "measure",
            "preset",
            "seed",
            "mean_corner_rmse",
            "nrmse",
            "frames_tracked",
        ])?;
        for r in reports {
            out.write_record([
                r.run.name(),
                r.run.dof.to_string(),
                r.run.measure.to_string(),
                r.run.preset.to_string(),
                r.run.seed.to_string(),
                r.mean_corner_rmse.to_string(),
                r.nrmse.to_string(),
                r.frames_tracked.to_string(),
            ])?;
        }
        out.flush()
    })
}

/// Relative distance to the final best fitness at which a run counts as
/// stalled.
pub const STALL_TOLERANCE: f64 = 1e-3;

/// First iteration (1-based) from which the best-fitness trace stays
/// within `rel_tol · |final|` of its final value.
pub fn iterations_to_stall(trace: &[f64], rel_tol: f64) -> usize {
    let Some(&last) = trace.last() else {
        return 0;
    };
    let tol = rel_tol * last.abs();
    trace.iter().position(|&v| last - v <= tol).map_or(trace.len(), |i| i + 1)
}

/// Convergence of single-frame alignment for one DOF setting.
#[derive(Debug, Clone, PartialEq)]
pub struct DofConvergence {
    pub dof: Dof,
    /// [`iterations_to_stall`] per seed.
    pub iterations: Vec<usize>,
    /// Final best fitness per seed.
    pub fitness: Vec<f64>,
}

/// Aligns the template of `reference` to `frame` from the identity once per
/// seed and DOF setting, always spending the full `budget` iterations.
pub fn dof_convergence(
    reference: &GrayImage,
    frame: &GrayImage,
    region: &TemplateRegion,
    base_cfg: &TrackerConfig,
    dofs: &[Dof],
    seeds: &[u64],
    budget: usize,
) -> Result<Vec<DofConvergence>, HarnessError> {
    let translation = base_cfg.bounds.upper()[0];
    let rotation = (0..base_cfg.dof.count())
        .find(|&i| base_cfg.dof.is_rotation(i))
        .map_or(crate::tracker::DEFAULT_ROTATION_BOUND, |i| base_cfg.bounds.upper()[i]);
    let identity = RigidTransform::identity();
    dofs.iter()
        .map(|&dof| {
            let mut cfg = base_cfg.clone();
            cfg.dof = dof;
            cfg.bounds = crate::tracker::pose_bounds(dof, translation, rotation)?;
            cfg.pso.max_iterations = budget;
            cfg.pso.stall_iterations = budget;
            cfg.pso.fitness_threshold = None;
            let tracker = Tracker::new(reference, region.clone(), cfg.clone())?;
            let mut out = DofConvergence {
                dof,
                iterations: Vec::new(),
                fitness: Vec::new(),
            };
            for &seed in seeds {
                let pso = cfg.pso.clone().with_seed(seed);
                let result = optimize(|x| tracker.fitness(x, &identity, frame), &pso, &cfg.bounds)?;
                out.iterations.push(iterations_to_stall(&result.trace, STALL_TOLERANCE));
                out.fitness.push(result.best_fitness);
            }
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PoseVector;
    use crate::imaging::{generate_sequence, textured_image, Rect};
    use nalgebra::{Matrix3, Vector3};
    use proptest::prelude::*;

    fn region() -> TemplateRegion {
        TemplateRegion::with_stride(Rect::new(50, 30, 60, 60), PlaneParams::fronto_parallel(), 160, 120, 2)
            .unwrap()
    }

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(200.0, 200.0, 80.0, 60.0).unwrap()
    }

    fn rot_z(angle: f64) -> RigidTransform {
        RigidTransform::from_pose(&PoseVector::new(Dof::Four, vec![0.0, 0.0, 0.0, angle]).unwrap())
    }

    #[test]
    fn pose_error_examples() {
        let (r, k, plane) = (region(), intrinsics(), PlaneParams::fronto_parallel());
        let t = RigidTransform::from_pose(
            &PoseVector::new(Dof::Six, vec![0.01, 0.02, -0.01, 0.03, 0.0, 0.1]).unwrap(),
        );
        let e = pose_error(&t, &t, &r, &k, &plane).unwrap();
        assert_eq!(e, PoseError { translation_error: 0.0, rotation_error: 0.0, corner_rmse: 0.0 });

        let e = pose_error(&rot_z(0.1), &RigidTransform::identity(), &r, &k, &plane).unwrap();
        assert!((e.rotation_error - 0.1).abs() < 1e-12);
        assert_eq!(e.translation_error, 0.0);

        // 0.005 units at f = 200 is one pixel in x at every corner
        let shifted = RigidTransform::new(Matrix3::identity(), Vector3::new(0.005, 0.0, 0.0));
        let e = pose_error(&shifted, &RigidTransform::identity(), &r, &k, &plane).unwrap();
        let corners = r.rect().corners();
        let sq: f64 = corners.iter().map(|&(u, _)| ((u + 1.0) - u).powi(2)).sum();
        let oracle = (sq / 4.0).sqrt();
        assert!((e.corner_rmse - oracle).abs() < 1e-9, "{}", e.corner_rmse);
    }

    #[test]
    fn surface_peaks_at_identity() {
        let img = textured_image(160, 120, 4);
        let r = region();
        let cfg = TrackerConfig::new(Dof::Two, SimilarityMeasure::new(MeasureKind::Mi), intrinsics());
        let grid = SurfaceGrid::centered((0, 1), (0.0, 0.0), 0.02, 9);
        let s = similarity_surface(&img, &img, &r, &cfg, &grid).unwrap();
        assert_eq!(s.argmax(), (4, 4));
        assert_eq!(s.nearest_cell(0.0, 0.0), (4, 4));

        let cfg = TrackerConfig::new(Dof::Two, SimilarityMeasure::new(MeasureKind::Ssd), intrinsics());
        let s = similarity_surface(&img, &img, &r, &cfg, &grid).unwrap();
        assert_eq!(s.values[4][4], 0.0);
        for (i, row) in s.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if (i, j) != (4, 4) {
                    assert!(*v < 0.0);
                }
            }
        }
        let dir = tempfile::tempdir().unwrap();
        s.write_csv(&dir.path().join("surface_ssd.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("surface_ssd.csv")).unwrap();
        assert_eq!(text.lines().count(), 82);

        let bad = SurfaceGrid::centered((0, 2), (0.0, 0.0), 0.02, 9);
        assert!(matches!(
            similarity_surface(&img, &img, &r, &cfg, &bad),
            Err(HarnessError::SurfaceDimension(2))
        ));
    }

    fn tiny_spec(seq: &crate::imaging::SyntheticSequence) -> ExperimentSpec {
        ExperimentSpec {
            sequence: SequenceSource::Loaded {
                frames: Arc::new(seq.frames.clone()),
                truth: Arc::new(seq.truth()),
            },
            region: region(),
            intrinsics: intrinsics(),
            measures: vec![MeasureKind::Mi],
            dofs: vec![Dof::Two],
            presets: vec![Preset::Common],
            seeds: vec![1],
            bins: 32,
            translation_bound: 0.03,
            rotation_bound: 0.05,
            pso_overrides: PsoOverrides {
                max_iterations: Some(30),
                stall_iterations: Some(10),
                ..PsoOverrides::default()
            },
            warm_start: false,
            output_dir: None,
        }
    }

    #[test]
    fn single_frame_experiment() {
        let img = textured_image(160, 120, 4);
        let seq = generate_sequence(&img, &region(), &intrinsics(), &[], &[]).unwrap();
        let reports = run_experiment(&tiny_spec(&seq)).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].rows.len(), 1);
    }

    #[test]
    fn measures_see_identical_frames() {
        let img = textured_image(160, 120, 4);
        let step = PoseVector::new(Dof::Two, vec![0.004, -0.002]).unwrap();
        let seq = generate_sequence(&img, &region(), &intrinsics(), &[step], &[1.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec {
            measures: MeasureKind::ALL.to_vec(),
            output_dir: Some(dir.path().to_path_buf()),
            ..tiny_spec(&seq)
        };
        let reports = run_experiment(&spec).unwrap();
        assert_eq!(reports.len(), 3);
        assert!(reports.iter().all(|r| r.input_checksum == reports[0].input_checksum));
        assert!(dir.path().join("summary.csv").exists());
        assert!(dir.path().join("errors_ncc_dof2_common_s1.csv").exists());
        for r in &reports {
            let recomputed = ExperimentReport::from_rows(r.run.clone(), r.rows.clone(), &spec.region, r.input_checksum);
            assert_eq!(&recomputed, r);
            let mean = r.rows.iter().map(|x| x.error.corner_rmse).sum::<f64>() / r.rows.len() as f64;
            assert_eq!(mean, r.mean_corner_rmse);
        }
    }

    #[test]
    fn missing_sequence_directory() {
        let img = textured_image(160, 120, 4);
        let seq = generate_sequence(&img, &region(), &intrinsics(), &[], &[]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec {
            sequence: SequenceSource::Directory(dir.path().join("absent")),
            ..tiny_spec(&seq)
        };
        assert!(matches!(run_experiment(&spec), Err(HarnessError::MissingSequence(_))));
    }

    #[test]
    fn stall_iteration_of_traces() {
        assert_eq!(iterations_to_stall(&[1.0, 2.0, 2.0, 2.0], 1e-3), 2);
        assert_eq!(iterations_to_stall(&[-5.0, -1.0, -0.9995], 1e-3), 2);
        assert_eq!(iterations_to_stall(&[3.0; 4], 1e-3), 1);
        assert_eq!(iterations_to_stall(&[], 1e-3), 0);
    }

    #[test]
    fn dof_sweep_spends_the_budget() {
        let img = textured_image(160, 120, 4);
        let cfg = TrackerConfig::new(Dof::Six, SimilarityMeasure::new(MeasureKind::Ncc), intrinsics());
        let runs = dof_convergence(&img, &img, &region(), &cfg, &[Dof::Two, Dof::Six], &[1, 2], 20).unwrap();
        assert_eq!(runs.len(), 2);
        for r in &runs {
            assert_eq!(r.fitness.len(), 2);
            assert!(r.iterations.iter().all(|&i| (1..=20).contains(&i)));
        }
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    proptest! {
        #[test]
        fn rotation_error_is_symmetric(a in proptest::collection::vec(-1.0..1.0f64, 3), b in proptest::collection::vec(-1.0..1.0f64, 3)) {
            let ta = RigidTransform::from_pose(&PoseVector::new(Dof::Six, vec![0.0, 0.0, 0.0, a[0], a[1], a[2]]).unwrap());
            let tb = RigidTransform::from_pose(&PoseVector::new(Dof::Six, vec![0.0, 0.0, 0.0, b[0], b[1], b[2]]).unwrap());
            let e = rotation_error(&ta, &tb);
            prop_assert!((e - rotation_error(&tb, &ta)).abs() < 1e-12);
            prop_assert!((0.0..=std::f64::consts::PI).contains(&e));
        }

        #[test]
        fn corner_rmse_ignores_scale(c in prop_oneof![-10.0..-0.1f64, 0.1..10.0f64], tx in -5.0..5.0f64) {
            let r = region();
            let a = Homography::new(Matrix3::new(1.0, 0.01, tx, 0.0, 1.02, 1.0, 1e-4, 0.0, 1.0)).unwrap();
            let b = Homography::identity();
            let scaled = Homography::new(a.matrix() * c).unwrap();
            prop_assert!((corner_rmse(&a, &b, &r).unwrap() - corner_rmse(&scaled, &b, &r).unwrap()).abs() < 1e-9);
        }
    }
}
