//! Command implementations behind the `psotrack` binary.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{Command, ConfigError, RunConfig};
use crate::geometry::{homography_from_pose, CameraIntrinsics, PoseVector};
use crate::harness::{
    run_experiment, score_run, similarity_surface, ExperimentReport, ExperimentSpec, RunKey,
    SequenceSource, SurfaceGrid,
};
use crate::imaging::{
    generate_sequence, read_pgm, read_sequence, write_sequence, GrayImage, Rect, TemplateRegion,
};
use crate::io::write_atomic;
use crate::similarity::SimilarityMeasure;
use crate::tracker::{FrameResult, Tracker, TrackerConfig};

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(BoxError),
}

impl CliError {
    /// Process exit status: 1 for configuration problems, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn runtime(e: impl Into<BoxError>) -> CliError {
    CliError::Runtime(e.into())
}

/// Runs the configured command and returns a one-line summary.
pub fn run(cfg: &RunConfig) -> Result<String, CliError> {
    match cfg.command {
        Command::Generate => generate(cfg),
        Command::Track => track(cfg),
        Command::Surface => surface(cfg),
        Command::Experiment => experiment(cfg),
    }
}

fn intrinsics_for(cfg: &RunConfig, width: usize, height: usize) -> Result<CameraIntrinsics, CliError> {
    let f = cfg.focal.unwrap_or(width as f64);
    let cx = cfg.cx.unwrap_or(width as f64 / 2.0);
    let cy = cfg.cy.unwrap_or(height as f64 / 2.0);
    CameraIntrinsics::new(f, f, cx, cy).map_err(|e| invalid("focal", format!("{f},{cx},{cy}"), e))
}

fn invalid(key: &str, value: String, reason: impl ToString) -> CliError {
    CliError::Config(ConfigError::InvalidValue {
        key: key.to_string(),
        value,
        reason: reason.to_string(),
        line: None,
    })
}

fn region_for(cfg: &RunConfig, rect: Rect, img: &GrayImage) -> Result<TemplateRegion, CliError> {
    TemplateRegion::with_stride(rect, cfg.plane, img.width(), img.height(), cfg.stride).map_err(|e| {
        invalid("region", format!("{},{},{},{}", rect.x0, rect.y0, rect.w, rect.h), e)
    })
}

fn required_rect(cfg: &RunConfig) -> Result<Rect, CliError> {
    cfg.region.ok_or_else(|| ConfigError::Missing("region".into()).into())
}

fn load_image(path: &Path) -> Result<GrayImage, CliError> {
    read_pgm(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn tracker_config(cfg: &RunConfig, key: &RunKey, k: CameraIntrinsics) -> Result<TrackerConfig, CliError> {
    let measure = SimilarityMeasure::with_bins(key.measure, cfg.bins).map_err(|e| invalid("bins", cfg.bins.to_string(), e))?;
    Ok(TrackerConfig {
        dof: key.dof,
        measure,
        pso: cfg.pso(key.preset, key.seed),
        bounds: cfg.bounds(key.dof),
        intrinsics: k,
        warm_start: cfg.warm_start,
    })
}

fn generate(cfg: &RunConfig) -> Result<String, CliError> {
    let base_path = cfg.base.as_deref().ok_or_else(|| ConfigError::Missing("base".into()))?;
    let base = load_image(base_path)?;
    let (w, h) = (base.width(), base.height());
    let rect = cfg
        .region
        .unwrap_or_else(|| Rect::new(w / 4, h / 4, (w / 2).max(1), (h / 2).max(1)));
    let region = region_for(cfg, rect, &base)?;
    let k = intrinsics_for(cfg, w, h)?;
    let dof = cfg.dofs[0];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds[0]);
    let motions = (0..cfg.frames)
        .map(|_| {
            let values = (0..dof.count())
                .map(|i| {
                    let b = if dof.is_rotation(i) { cfg.max_rotation } else { cfg.max_step };
                    rng.random_range(-b..=b)
                })
                .collect();
            PoseVector::new(dof, values)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime)?;
    let n = cfg.frames.max(1) as f64;
    let gains: Vec<f64> = (1..=cfg.frames).map(|i| 1.0 + cfg.gain_drift * i as f64 / n).collect();
    let seq = generate_sequence(&base, &region, &k, &motions, &gains).map_err(runtime)?;
    write_sequence(&cfg.out, &seq.frames, &seq.truth()).map_err(runtime)?;
    Ok(format!("wrote {} frames and truth.csv to {}", seq.len(), cfg.out.display()))
}

fn track(cfg: &RunConfig) -> Result<String, CliError> {
    let ref_path = cfg.reference.as_deref().ok_or_else(|| ConfigError::Missing("ref".into()))?;
    let seq_dir = cfg.sequence.as_deref().ok_or_else(|| ConfigError::Missing("seq".into()))?;
    let reference = load_image(ref_path)?;
    let region = region_for(cfg, required_rect(cfg)?, &reference)?;
    let k = intrinsics_for(cfg, reference.width(), reference.height())?;
    let key = RunKey {
        measure: cfg.measures[0],
        dof: cfg.dofs[0],
        preset: cfg.presets[0],
        seed: cfg.seeds[0],
    };
    let tcfg = tracker_config(cfg, &key, k)?;
    let seq = read_sequence(seq_dir).map_err(runtime)?;
    let tracker = Tracker::new(&reference, region.clone(), tcfg).map_err(runtime)?;
    let results = tracker.track_sequence(&seq.frames).map_err(runtime)?;
    fs::create_dir_all(&cfg.out).map_err(runtime)?;
    write_poses_csv(&cfg.out.join(format!("poses_{}.csv", cfg.run_name)), &results, &region, &k)
        .map_err(runtime)?;
    let lost = results.iter().find(|r| r.lost).map(|r| r.frame_index);
    if let Some(i) = lost {
        log::warn!("track lost at frame {i}; {} of {} frames processed", results.len(), seq.frames.len());
    }
    let mut summary = format!("tracked {} frames", results.iter().filter(|r| !r.lost).count());
    match &seq.truth {
        Some(truth) => {
            let rows = score_run(&results, truth, &region, &k).map_err(runtime)?;
            let report = ExperimentReport::from_rows(key, rows, &region, 0);
            report
                .write_errors_csv(&cfg.out.join(format!("errors_{}.csv", cfg.run_name)))
                .map_err(runtime)?;
            summary += &format!(
                ", mean corner rmse {:.3} px, nrmse {:.5}",
                report.mean_corner_rmse, report.nrmse
            );
        }
        None => log::warn!("{} has no truth.csv; errors file not written", seq_dir.display()),
    }
    if lost.is_some() {
        summary += ", lost=true";
    }
    Ok(summary)
}

/// Writes `frame,lost,fitness,iterations,h11..h33,tx,ty,tz,rx,ry,rz`.
fn write_poses_csv(
    path: &Path,
    results: &[FrameResult],
    region: &TemplateRegion,
    k: &CameraIntrinsics,
) -> std::io::Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["frame", "lost", "fitness", "iterations"];
        header.extend(["h11", "h12", "h13", "h21", "h22", "h23", "h31", "h32", "h33"]);
        header.extend(["tx", "ty", "tz", "rx", "ry", "rz"]);
        out.write_record(&header)?;
        for r in results {
            let h = homography_from_pose(&r.cumulative_transform, region.plane(), k);
            let mut row = vec![
                r.frame_index.to_string(),
                r.lost.to_string(),
                r.fitness.to_string(),
                r.iterations.to_string(),
            ];
            match h {
                Ok(h) => row.extend(h.to_row_major().iter().map(f64::to_string)),
                Err(_) => row.extend(std::iter::repeat_n("nan".to_string(), 9)),
            }
            row.extend(r.cumulative_transform.to_full_pose().iter().map(f64::to_string));
            out.write_record(&row)?;
        }
        out.flush()
    })
}

fn surface(cfg: &RunConfig) -> Result<String, CliError> {
    let ref_path = cfg.reference.as_deref().ok_or_else(|| ConfigError::Missing("ref".into()))?;
    let seq_dir = cfg.sequence.as_deref().ok_or_else(|| ConfigError::Missing("seq".into()))?;
    let reference = load_image(ref_path)?;
    let region = region_for(cfg, required_rect(cfg)?, &reference)?;
    let k = intrinsics_for(cfg, reference.width(), reference.height())?;
    let seq = read_sequence(seq_dir).map_err(runtime)?;
    let frame = seq
        .frames
        .get(cfg.frame)
        .ok_or_else(|| invalid("frame", cfg.frame.to_string(), format!("sequence has {} frames", seq.frames.len())))?;
    let dof = cfg.dofs[0];
    let grid = SurfaceGrid::centered(cfg.dims, (0.0, 0.0), cfg.span, cfg.cells);
    let truth_pose = seq
        .truth
        .as_ref()
        .and_then(|t| t.get(cfg.frame))
        .map(|t| t.transform.to_full_pose());
    fs::create_dir_all(&cfg.out).map_err(runtime)?;
    let mut lines = Vec::new();
    for &measure in &cfg.measures {
        let key = RunKey {
            measure,
            dof,
            preset: cfg.presets[0],
            seed: cfg.seeds[0],
        };
        let tcfg = tracker_config(cfg, &key, k)?;
        let s = similarity_surface(&reference, frame, &region, &tcfg, &grid).map_err(runtime)?;
        s.write_csv(&cfg.out.join(format!("surface_{measure}.csv"))).map_err(runtime)?;
        let (r, c) = s.argmax();
        let mut line = format!("{measure}: argmax cell ({r},{c})");
        if let Some(p) = truth_pose {
            let layout = dof.layout();
            let (tr, tc) = s.nearest_cell(p[layout[cfg.dims.0]], p[layout[cfg.dims.1]]);
            line += &format!(", truth cell ({tr},{tc})");
        }
        lines.push(line);
    }
    Ok(lines.join("; "))
}

fn experiment(cfg: &RunConfig) -> Result<String, CliError> {
    let seq_dir = cfg.sequence.as_deref().ok_or_else(|| ConfigError::Missing("seq".into()))?;
    let loaded = read_sequence(seq_dir).map_err(runtime)?;
    let truth = loaded
        .truth
        .ok_or_else(|| runtime(format!("{} has no truth.csv", seq_dir.display())))?;
    let first = &loaded.frames[0];
    let region = region_for(cfg, required_rect(cfg)?, first)?;
    let k = intrinsics_for(cfg, first.width(), first.height())?;
    let spec = ExperimentSpec {
        sequence: SequenceSource::Loaded {
            frames: Arc::new(loaded.frames),
            truth: Arc::new(truth),
        },
        region,
        intrinsics: k,
        measures: cfg.measures.clone(),
        dofs: cfg.dofs.clone(),
        presets: cfg.presets.clone(),
        seeds: cfg.seeds.clone(),
        bins: cfg.bins,
        translation_bound: cfg.translation_bound,
        rotation_bound: cfg.rotation_bound,
        pso_overrides: cfg.pso_overrides(),
        warm_start: cfg.warm_start,
        output_dir: Some(cfg.out.clone()),
    };
    fs::create_dir_all(&cfg.out).map_err(runtime)?;
    let reports = run_experiment(&spec).map_err(runtime)?;
    for r in reports.iter().filter(|r| r.lost) {
        log::warn!("{}: track lost after {} frames", r.run.name(), r.frames_tracked);
    }
    Ok(format!("{} runs written to {}", reports.len(), cfg.out.display()))
}
