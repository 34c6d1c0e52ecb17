//! Frame-by-frame template tracking.
//!
//! For every new frame the swarm searches an incremental pose `x` so that
//! the template, warped by `H(T(x)·T̂)`, best matches the frame. The winning
//! increment is folded into the cumulative transform `T̂ ← T(x*)·T̂`.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::geometry::{
    homography_from_pose, CameraIntrinsics, Dof, GeometryError, Homography, PoseVector,
    RigidTransform,
};
use crate::imaging::{extract_patch, GrayImage, TemplateRegion};
use crate::optimizer::{optimize_with, OptimizerError, PsoConfig, SearchBounds};
use crate::similarity::{
    entropy, evaluate, MeasureKind, SimilarityMeasure, INVALID_FITNESS,
};

/// Default per-frame translation bound, in scene units.
pub const DEFAULT_TRANSLATION_BOUND: f64 = 0.05;
/// Default per-frame rotation bound, in radians.
pub const DEFAULT_ROTATION_BOUND: f64 = 0.1;

/// MI loss threshold as a fraction of the template entropy.
pub const MI_LOSS_FRACTION: f64 = 0.15;
/// NCC loss threshold.
pub const NCC_LOSS_THRESHOLD: f64 = 0.3;
/// Per-sample RMS intensity difference at which SSD tracking is lost.
pub const SSD_LOSS_RMS: f64 = 0.05;

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("template has constant intensity and cannot be tracked")]
    DegenerateTemplate,
    #[error("search bounds have {bounds} dimensions but dof is {dof}")]
    BoundsMismatch { bounds: usize, dof: usize },
    #[error("no frames to track")]
    NoFrames,
    #[error("region lies outside the reference image")]
    RegionOutsideReference,
    #[error("track already lost")]
    AlreadyLost,
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Per-frame search bounds: `±translation` on translation components and
/// `±rotation` on rotation components.
pub fn pose_bounds(dof: Dof, translation: f64, rotation: f64) -> Result<SearchBounds, OptimizerError> {
    let half: Vec<f64> = (0..dof.count())
        .map(|i| if dof.is_rotation(i) { rotation } else { translation })
        .collect();
    SearchBounds::symmetric(&half)
}

pub fn default_bounds(dof: Dof) -> SearchBounds {
    pose_bounds(dof, DEFAULT_TRANSLATION_BOUND, DEFAULT_ROTATION_BOUND)
        .expect("default bounds are valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub dof: Dof,
    pub measure: SimilarityMeasure,
    pub pso: PsoConfig,
    /// Bounds on the per-frame incremental motion.
    pub bounds: SearchBounds,
    pub intrinsics: CameraIntrinsics,
    /// Seed one particle with the previous frame's increment.
    pub warm_start: bool,
}

impl TrackerConfig {
    pub fn new(dof: Dof, measure: SimilarityMeasure, intrinsics: CameraIntrinsics) -> Self {
        Self {
            dof,
            measure,
            pso: PsoConfig::default(),
            bounds: default_bounds(dof),
            intrinsics,
            warm_start: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrackerError> {
        if self.bounds.dim() != self.dof.count() {
            return Err(TrackerError::BoundsMismatch {
                bounds: self.bounds.dim(),
                dof: self.dof.count(),
            });
        }
        self.pso.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub cumulative_transform: RigidTransform,
    pub frame_index: usize,
    pub last_fitness: f64,
    pub lost: bool,
    last_increment: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame_index: usize,
    pub incremental_pose: PoseVector,
    pub cumulative_transform: RigidTransform,
    pub fitness: f64,
    pub iterations: usize,
    pub wall_time: Duration,
    pub lost: bool,
}

/// A template ready to be tracked: the region, its cached intensities and
/// the configuration.
#[derive(Debug, Clone)]
pub struct Tracker {
    region: TemplateRegion,
    template_values: Vec<f64>,
    loss_threshold: f64,
    cfg: TrackerConfig,
}

impl Tracker {
    /// Caches the template intensities and derives the loss threshold.
    pub fn new(reference: &GrayImage, region: TemplateRegion, cfg: TrackerConfig) -> Result<Self, TrackerError> {
        cfg.validate()?;
        let rect = region.rect();
        if rect.x0 + rect.w > reference.width() || rect.y0 + rect.h > reference.height() {
            return Err(TrackerError::RegionOutsideReference);
        }
        let template_values = region.template_values(reference);
        let first = template_values[0];
        if template_values.iter().all(|&v| v == first) {
            return Err(TrackerError::DegenerateTemplate);
        }
        let all = vec![true; template_values.len()];
        let loss_threshold = match cfg.measure.kind {
            MeasureKind::Mi => {
                let e = entropy(&template_values, &all, &cfg.measure.hist)
                    .map_err(|_| TrackerError::DegenerateTemplate)?;
                if e <= 0.0 {
                    // every sample falls in one bin
                    return Err(TrackerError::DegenerateTemplate);
                }
                MI_LOSS_FRACTION * e
            }
            MeasureKind::Ncc => NCC_LOSS_THRESHOLD,
            MeasureKind::Ssd => -(template_values.len() as f64) * SSD_LOSS_RMS * SSD_LOSS_RMS,
        };
        Ok(Self {
            region,
            template_values,
            loss_threshold,
            cfg,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn region(&self) -> &TemplateRegion {
        &self.region
    }

    pub fn template_values(&self) -> &[f64] {
        &self.template_values
    }

    /// Fitness below this marks the track as lost.
    pub fn loss_threshold(&self) -> f64 {
        self.loss_threshold
    }

    pub fn initial_state(&self) -> TrackState {
        TrackState {
            cumulative_transform: RigidTransform::identity(),
            frame_index: 0,
            last_fitness: f64::NAN,
            lost: false,
            last_increment: None,
        }
    }

    /// Homography for increment `x` applied on top of `base`.
    pub fn homography(&self, x: &[f64], base: &RigidTransform) -> Result<Homography, GeometryError> {
        let pose = PoseVector::new(self.cfg.dof, x.to_vec())?;
        let t = RigidTransform::from_pose(&pose).compose(base);
        homography_from_pose(&t, self.region.plane(), &self.cfg.intrinsics)
    }

    /// Similarity of `frame` to the template under increment `x` on top of
    /// `base`; invalid poses score [`INVALID_FITNESS`].
    pub fn fitness(&self, x: &[f64], base: &RigidTransform, frame: &GrayImage) -> f64 {
        match self.homography(x, base) {
            Ok(h) => evaluate(
                &self.cfg.measure,
                &extract_patch(&self.region, &h, frame),
                &self.template_values,
            ),
            Err(_) => INVALID_FITNESS,
        }
    }

    /// Aligns the template to `frame` and advances the state.
    ///
    /// A lost frame leaves the cumulative transform untouched and marks the
    /// state lost; tracking a lost state is an error.
    pub fn track_frame(&self, state: &TrackState, frame: &GrayImage) -> Result<(TrackState, FrameResult), TrackerError> {
        if state.lost {
            return Err(TrackerError::AlreadyLost);
        }
        let start = Instant::now();
        let base = state.cumulative_transform;
        let pso = PsoConfig {
            seed: self.cfg.pso.seed.wrapping_add(state.frame_index as u64),
            ..self.cfg.pso.clone()
        };
        let guess = if self.cfg.warm_start {
            state.last_increment.as_deref()
        } else {
            None
        };
        let result = optimize_with(
            |x| self.fitness(x, &base, frame),
            &pso,
            &self.cfg.bounds,
            guess,
            |_| {},
        )?;
        let incremental_pose = PoseVector::new(self.cfg.dof, result.best_position.clone())?;
        let lost = result.best_fitness.is_nan() || result.best_fitness < self.loss_threshold;
        let cumulative_transform = if lost {
            base
        } else {
            RigidTransform::from_pose(&incremental_pose).compose(&base)
        };
        let next = TrackState {
            cumulative_transform,
            frame_index: state.frame_index + 1,
            last_fitness: result.best_fitness,
            lost,
            last_increment: Some(result.best_position),
        };
        let frame_result = FrameResult {
            frame_index: state.frame_index,
            incremental_pose,
            cumulative_transform,
            fitness: result.best_fitness,
            iterations: result.iterations_used,
            wall_time: start.elapsed(),
            lost,
        };
        Ok((next, frame_result))
    }

    /// Tracks `frames` in order, stopping after the first lost frame.
    pub fn track_sequence(&self, frames: &[GrayImage]) -> Result<Vec<FrameResult>, TrackerError> {
        if frames.is_empty() {
            return Err(TrackerError::NoFrames);
        }
        let mut state = self.initial_state();
        let mut results = Vec::with_capacity(frames.len());
        for frame in frames {
            let (next, result) = self.track_frame(&state, frame)?;
            log::debug!(
                "frame {} fitness {:.4} iterations {}{}",
                result.frame_index,
                result.fitness,
                result.iterations,
                if result.lost { " LOST" } else { "" }
            );
            results.push(result);
            state = next;
            if state.lost {
                break;
            }
        }
        Ok(results)
    }
}

/// Builds a tracker for `region` of `reference` and tracks `frames`.
pub fn track_sequence(
    reference: &GrayImage,
    region: &TemplateRegion,
    frames: &[GrayImage],
    cfg: &TrackerConfig,
) -> Result<Vec<FrameResult>, TrackerError> {
    Tracker::new(reference, region.clone(), cfg.clone())?.track_sequence(frames)
}
