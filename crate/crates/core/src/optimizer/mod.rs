//! Particle swarm optimization over a box-bounded search space.
//!
//! Fitness is maximized. Each particle draws from its own ChaCha stream, so a
//! run is fully determined by the seed, the configuration and the fitness
//! function. Fitness values for one iteration are all computed before any
//! personal or neighbourhood best is updated; bests are then folded in
//! particle-index order.

mod topology;

pub use topology::{neighborhood_best, neighborhood_best_index, Topology};

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::io::write_atomic;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("bounds need lower < upper in every dimension (dimension {0})")]
    InvalidBounds(usize),
    #[error("bounds dimensions differ: {0} lower vs {1} upper")]
    BoundsLength(usize, usize),
    #[error("invalid swarm configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown topology {0:?}")]
    UnknownTopology(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("initial guess has {0} components, search space has {1}")]
    GuessLength(usize, usize),
}

/// Per-dimension box constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl SearchBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, OptimizerError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(OptimizerError::BoundsLength(lower.len(), upper.len()));
        }
        for (d, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(OptimizerError::InvalidBounds(d));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[-half_width[d], half_width[d]]` in every dimension.
    pub fn symmetric(half_width: &[f64]) -> Result<Self, OptimizerError> {
        Self::new(half_width.iter().map(|w| -w).collect(), half_width.to_vec())
    }

    /// The same interval repeated `dim` times.
    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self, OptimizerError> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| (*l..=*u).contains(v))
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }
}

/// Inertia weight schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inertia {
    Constant(f64),
    /// Linear ramp from `start` at the first update to `end` at the last.
    Linear { start: f64, end: f64 },
}

impl Inertia {
    /// Weight at `progress` in `[0, 1]` through the iteration budget.
    pub fn at(&self, progress: f64) -> f64 {
        match *self {
            Inertia::Constant(w) => w,
            Inertia::Linear { start, end } => start + (end - start) * progress.clamp(0.0, 1.0),
        }
    }
}

/// Named parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Swarm 40, inertia 0.9 → 0.4, both acceleration weights 2.0.
    Common,
    /// Swarm 40, inertia 0.6, both acceleration weights 1.7.
    Trelea,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Common => "common",
            Preset::Trelea => "trelea",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = OptimizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "common" => Ok(Preset::Common),
            "trelea" => Ok(Preset::Trelea),
            other => Err(OptimizerError::UnknownPreset(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub inertia: Inertia,
    pub cognitive_weight: f64,
    pub social_weight: f64,
    pub topology: Topology,
    pub max_iterations: usize,
    /// Consecutive iterations without improvement before stopping.
    pub stall_iterations: usize,
    /// Gains in best fitness at or below this count as no improvement.
    pub min_improvement: f64,
    /// Stop once the best fitness reaches this level.
    pub fitness_threshold: Option<f64>,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self::preset(Preset::Common)
    }
}

impl PsoConfig {
    pub fn preset(preset: Preset) -> Self {
        let (inertia, weight) = match preset {
            Preset::Common => (Inertia::Linear { start: 0.9, end: 0.4 }, 2.0),
            Preset::Trelea => (Inertia::Constant(0.6), 1.7),
        };
        Self {
            swarm_size: 40,
            inertia,
            cognitive_weight: weight,
            social_weight: weight,
            topology: Topology::Global,
            max_iterations: 100,
            stall_iterations: 15,
            min_improvement: 1e-9,
            fitness_threshold: None,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |msg: &str| Err(OptimizerError::InvalidConfig(msg.to_string()));
        if self.swarm_size < 2 {
            return bad("swarm_size must be at least 2");
        }
        if self.max_iterations < 1 {
            return bad("max_iterations must be at least 1");
        }
        if self.stall_iterations < 1 {
            return bad("stall_iterations must be at least 1");
        }
        if !self.topology.fits(self.swarm_size) {
            return bad("local topology needs 1 <= k < swarm_size");
        }
        let finite = [self.cognitive_weight, self.social_weight, self.min_improvement];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("weights must be finite");
        }
        match self.inertia {
            Inertia::Constant(w) if !w.is_finite() => return bad("inertia must be finite"),
            Inertia::Linear { start, end } if !(start.is_finite() && end.is_finite()) => {
                return bad("inertia must be finite")
            }
            _ => {}
        }
        if self.fitness_threshold.is_some_and(f64::is_nan) {
            return bad("fitness threshold is NaN");
        }
        Ok(())
    }
}

/// Optional replacements for preset values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PsoOverrides {
    pub swarm_size: Option<usize>,
    pub inertia: Option<Inertia>,
    pub cognitive_weight: Option<f64>,
    pub social_weight: Option<f64>,
    pub topology: Option<Topology>,
    pub max_iterations: Option<usize>,
    pub stall_iterations: Option<usize>,
    pub min_improvement: Option<f64>,
    pub fitness_threshold: Option<f64>,
}

impl PsoOverrides {
    pub fn apply(&self, mut cfg: PsoConfig) -> PsoConfig {
        cfg.swarm_size = self.swarm_size.unwrap_or(cfg.swarm_size);
        cfg.inertia = self.inertia.unwrap_or(cfg.inertia);
        cfg.cognitive_weight = self.cognitive_weight.unwrap_or(cfg.cognitive_weight);
        cfg.social_weight = self.social_weight.unwrap_or(cfg.social_weight);
        cfg.topology = self.topology.unwrap_or(cfg.topology);
        cfg.max_iterations = self.max_iterations.unwrap_or(cfg.max_iterations);
        cfg.stall_iterations = self.stall_iterations.unwrap_or(cfg.stall_iterations);
        cfg.min_improvement = self.min_improvement.unwrap_or(cfg.min_improvement);
        cfg.fitness_threshold = self.fitness_threshold.or(cfg.fitness_threshold);
        cfg
    }
}

/// One member of the swarm. `best_fitness` is `-∞` until the particle has
/// seen a scorable position.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
}

/// The population together with one random stream per particle.
#[derive(Debug, Clone)]
pub struct Swarm {
    pub particles: Vec<Particle>,
    rngs: Vec<ChaCha8Rng>,
}

/// Uniform draws in `[0, 1]` for the stochastic weights.
pub trait UnitSampler {
    fn unit(&mut self) -> f64;
}

impl<R: Rng + ?Sized> UnitSampler for R {
    fn unit(&mut self) -> f64 {
        self.random::<f64>()
    }
}

/// Sampler that always returns the same value.
#[derive(Debug, Clone, Copy)]
pub struct FixedSampler(pub f64);

impl UnitSampler for FixedSampler {
    fn unit(&mut self) -> f64 {
        self.0
    }
}

/// Random positions in the box and velocities within half its width.
pub fn init_swarm(cfg: &PsoConfig, bounds: &SearchBounds) -> Swarm {
    let mut particles = Vec::with_capacity(cfg.swarm_size);
    let mut rngs = Vec::with_capacity(cfg.swarm_size);
    for i in 0..cfg.swarm_size {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let mut position = Vec::with_capacity(bounds.dim());
        let mut velocity = Vec::with_capacity(bounds.dim());
        for (l, u) in bounds.lower.iter().zip(&bounds.upper) {
            let span = u - l;
            position.push((l + span * rng.random::<f64>()).min(*u));
            velocity.push(span * (rng.random::<f64>() - 0.5));
        }
        particles.push(Particle {
            best_position: position.clone(),
            position,
            velocity,
            best_fitness: f64::NEG_INFINITY,
        });
        rngs.push(rng);
    }
    Swarm { particles, rngs }
}

/// One velocity and position step.
///
/// `v ← ω v + α_c σ_c (pbest − x) + α_s σ_s (g − x)` with fresh `σ` per
/// dimension, then `x ← x + v`. A coordinate that leaves the box is clamped
/// onto it and its velocity zeroed.
#[allow(clippy::needless_range_loop)]
pub fn update_particle<S: UnitSampler + ?Sized>(
    p: &mut Particle,
    neighborhood_best: &[f64],
    inertia: f64,
    cfg: &PsoConfig,
    bounds: &SearchBounds,
    sampler: &mut S,
) {
    for d in 0..p.position.len() {
        let sigma_c = sampler.unit();
        let sigma_s = sampler.unit();
        let x = p.position[d];
        let v = inertia * p.velocity[d]
            + cfg.cognitive_weight * sigma_c * (p.best_position[d] - x)
            + cfg.social_weight * sigma_s * (neighborhood_best[d] - x);
        let moved = x + v;
        let clamped = moved.clamp(bounds.lower[d], bounds.upper[d]);
        p.position[d] = clamped;
        p.velocity[d] = if clamped == moved { v } else { 0.0 };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    MaxIterations,
    Stalled,
    ThresholdReached,
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TerminationReason::MaxIterations => "max_iterations",
            TerminationReason::Stalled => "stalled",
            TerminationReason::ThresholdReached => "threshold",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
    pub iterations_used: usize,
    pub termination_reason: TerminationReason,
    /// Best fitness so far after each iteration.
    pub trace: Vec<f64>,
    /// Mean of the finite fitness values evaluated in each iteration.
    pub mean_trace: Vec<f64>,
}

impl OptimizationResult {
    /// Writes `iteration,best_fitness,mean_fitness`.
    pub fn write_trace_csv(&self, path: &Path) -> io::Result<()> {
        write_atomic(path, |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["iteration", "best_fitness", "mean_fitness"])?;
            for (i, (best, mean)) in self.trace.iter().zip(&self.mean_trace).enumerate() {
                out.write_record([(i + 1).to_string(), best.to_string(), mean.to_string()])?;
            }
            out.flush()
        })
    }
}

/// Snapshot handed to observers after every iteration.
pub struct IterationView<'a> {
    pub iteration: usize,
    pub particles: &'a [Particle],
    pub best_fitness: f64,
}

/// Maximizes `fitness` over `bounds`.
pub fn optimize<F>(fitness: F, cfg: &PsoConfig, bounds: &SearchBounds) -> Result<OptimizationResult, OptimizerError>
where
    F: Fn(&[f64]) -> f64,
{
    optimize_with(fitness, cfg, bounds, None, |_| {})
}

/// [`optimize`] with an optional starting point injected as particle 0 and
/// a callback invoked after every iteration.
pub fn optimize_with<F, O>(
    fitness: F,
    cfg: &PsoConfig,
    bounds: &SearchBounds,
    initial_guess: Option<&[f64]>,
    mut observer: O,
) -> Result<OptimizationResult, OptimizerError>
where
    F: Fn(&[f64]) -> f64,
    O: FnMut(&IterationView<'_>),
{
    cfg.validate()?;
    let mut swarm = init_swarm(cfg, bounds);
    if let Some(guess) = initial_guess {
        if guess.len() != bounds.dim() {
            return Err(OptimizerError::GuessLength(guess.len(), bounds.dim()));
        }
        let p = &mut swarm.particles[0];
        p.position.copy_from_slice(guess);
        bounds.clamp(&mut p.position);
        p.best_position.clone_from(&p.position);
    }

    let score = |x: &[f64]| {
        let f = fitness(x);
        if f.is_nan() {
            f64::NEG_INFINITY
        } else {
            f
        }
    };

    let mut best_fitness = f64::NEG_INFINITY;
    let mut best_position = swarm.particles[0].position.clone();
    let mut trace = Vec::new();
    let mut mean_trace = Vec::new();
    let mut stall = 0usize;
    let mut iteration = 0usize;
    let mut targets: Vec<Vec<f64>> = Vec::with_capacity(cfg.swarm_size);

    let reason = loop {
        iteration += 1;
        if iteration > 1 {
            let progress = (iteration - 1) as f64 / (cfg.max_iterations - 1).max(1) as f64;
            let inertia = cfg.inertia.at(progress);
            targets.clear();
            targets.extend(
                (0..swarm.particles.len())
                    .map(|i| neighborhood_best(&swarm.particles, i, cfg.topology).to_vec()),
            );
            for ((p, rng), target) in swarm.particles.iter_mut().zip(&mut swarm.rngs).zip(&targets) {
                update_particle(p, target, inertia, cfg, bounds, rng);
            }
        }

        let values: Vec<f64> = swarm.particles.iter().map(|p| score(&p.position)).collect();

        let previous = best_fitness;
        for (p, &f) in swarm.particles.iter_mut().zip(&values) {
            if f > p.best_fitness {
                p.best_fitness = f;
                p.best_position.clone_from(&p.position);
            }
            if f > best_fitness {
                best_fitness = f;
                best_position.clone_from(&p.position);
            }
        }
        if best_fitness - previous > cfg.min_improvement {
            stall = 0;
        } else {
            stall += 1;
        }
        trace.push(best_fitness);
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        mean_trace.push(if finite.is_empty() {
            f64::NEG_INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        });

        observer(&IterationView {
            iteration,
            particles: &swarm.particles,
            best_fitness,
        });

        if cfg.fitness_threshold.is_some_and(|t| best_fitness >= t) {
            break TerminationReason::ThresholdReached;
        }
        if stall >= cfg.stall_iterations {
            break TerminationReason::Stalled;
        }
        if iteration >= cfg.max_iterations {
            break TerminationReason::MaxIterations;
        }
    };

    Ok(OptimizationResult {
        best_position,
        best_fitness,
        iterations_used: iteration,
        termination_reason: reason,
        trace,
        mean_trace,
    })
}
