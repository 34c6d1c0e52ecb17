//! Run configuration from `key=value` files and command-line overrides.
//!
//! File lines hold one `key=value` pair each; `#` starts a comment. Keys
//! may be spelled with `-` or `_`. Command-line values replace file values
//! of the same key.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::geometry::{Dof, PlaneParams};
use crate::imaging::Rect;
use crate::optimizer::{Inertia, Preset, PsoConfig, PsoOverrides, SearchBounds, Topology};
use crate::similarity::{HistogramConfig, MeasureKind, DEFAULT_BINS};
use crate::tracker::{pose_bounds, DEFAULT_ROTATION_BOUND, DEFAULT_TRANSLATION_BOUND};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("line {line}: expected key=value, found `{text}`")]
    Malformed { line: usize, text: String },
    #[error("{}unknown key `{key}`", at(*.line))]
    UnknownKey { key: String, line: Option<usize> },
    #[error("{}invalid value `{value}` for `{key}`: {reason}", at(*.line))]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
        line: Option<usize>,
    },
    #[error("missing required key `{0}`")]
    Missing(String),
}

fn at(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Generate,
    Track,
    Surface,
    Experiment,
}

impl Command {
    pub const ALL: [Command; 4] = [Command::Generate, Command::Track, Command::Surface, Command::Experiment];

    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Track => "track",
            Command::Surface => "surface",
            Command::Experiment => "experiment",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command `{s}`"))
    }
}

/// A recognised configuration key.
#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub name: &'static str,
    pub value_name: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, value_name: &'static str, help: &'static str) -> KeySpec {
    KeySpec { name, value_name, help }
}

/// Every key accepted in config files and as `--key value` flags.
pub const KEYS: &[KeySpec] = &[
    key("ref", "PGM", "reference image holding the template"),
    key("seq", "DIR", "sequence directory with frame_NNNN.pgm and optional truth.csv"),
    key("base", "PGM", "base image for generate"),
    key("out", "DIR", "output directory"),
    key("run", "NAME", "run name used in output file names (track)"),
    key("region", "X0,Y0,W,H", "template rectangle in reference pixels"),
    key("normal", "NX,NY,NZ,DEPTH", "template plane normal and depth"),
    key("stride", "N", "template sampling stride in pixels"),
    key("focal", "F", "focal length in pixels (default: image width)"),
    key("cx", "PX", "principal point x (default: image centre)"),
    key("cy", "PX", "principal point y (default: image centre)"),
    key("measure", "LIST", "similarity measure(s): ssd, ncc, mi"),
    key("bins", "N", "histogram bins for mutual information"),
    key("dof", "LIST", "degrees of freedom: 2, 4 or 6"),
    key("preset", "LIST", "PSO preset(s): common, trelea"),
    key("seed", "LIST", "random seed(s)"),
    key("swarm-size", "N", "particles per swarm"),
    key("inertia", "W|START:END", "constant inertia or linear schedule"),
    key("cognitive-weight", "A", "acceleration towards the personal best"),
    key("social-weight", "A", "acceleration towards the neighbourhood best"),
    key("topology", "NAME", "global, circle, wheel or localK"),
    key("max-iterations", "N", "iteration budget per frame"),
    key("stall-iterations", "N", "iterations without improvement before stopping"),
    key("min-improvement", "DELTA", "per-iteration gain counted as improvement"),
    key("fitness-threshold", "LEVEL", "stop once the best fitness reaches this level"),
    key("translation-bound", "T", "per-frame translation bound in scene units"),
    key("rotation-bound", "R", "per-frame rotation bound in radians"),
    key("warm-start", "BOOL", "seed one particle with the previous increment"),
    key("frames", "N", "number of generated frames after the base"),
    key("max-step", "T", "largest per-frame generated translation"),
    key("max-rotation", "R", "largest per-frame generated rotation (default: 2 x max-step)"),
    key("gain-drift", "G", "frame i of n gets intensity gain 1 + G*i/n"),
    key("frame", "INDEX", "sequence frame used by surface"),
    key("dims", "I,J", "pose components spanned by surface"),
    key("span", "HALF", "half-width of the surface grid (default: translation bound)"),
    key("cells", "N", "surface grid cells per axis"),
];

fn canonical_key(raw: &str) -> String {
    raw.trim().to_ascii_lowercase().replace('_', "-")
}

pub fn is_known_key(key: &str) -> bool {
    KEYS.iter().any(|k| k.name == key)
}

/// Raw entries of a config file with their line numbers.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String, usize)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| ConfigError::Malformed {
            line,
            text: raw.trim().to_string(),
        })?;
        let k = canonical_key(k);
        if k.is_empty() {
            return Err(ConfigError::Malformed {
                line,
                text: raw.trim().to_string(),
            });
        }
        if !is_known_key(&k) {
            return Err(ConfigError::UnknownKey { key: k, line: Some(line) });
        }
        out.push((k, v.trim().to_string(), line));
    }
    Ok(out)
}

/// Everything a command needs, validated.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub reference: Option<PathBuf>,
    pub sequence: Option<PathBuf>,
    pub base: Option<PathBuf>,
    pub out: PathBuf,
    pub run_name: String,
    pub region: Option<Rect>,
    pub plane: PlaneParams,
    pub stride: usize,
    pub focal: Option<f64>,
    pub cx: Option<f64>,
    pub cy: Option<f64>,
    pub measures: Vec<MeasureKind>,
    pub bins: usize,
    pub dofs: Vec<Dof>,
    pub presets: Vec<Preset>,
    pub seeds: Vec<u64>,
    pub swarm_size: Option<usize>,
    pub inertia: Option<Inertia>,
    pub cognitive_weight: Option<f64>,
    pub social_weight: Option<f64>,
    pub topology: Topology,
    pub max_iterations: usize,
    pub stall_iterations: usize,
    pub min_improvement: f64,
    pub fitness_threshold: Option<f64>,
    pub translation_bound: f64,
    pub rotation_bound: f64,
    pub warm_start: bool,
    pub frames: usize,
    pub max_step: f64,
    pub max_rotation: f64,
    pub gain_drift: f64,
    pub frame: usize,
    pub dims: (usize, usize),
    pub span: f64,
    pub cells: usize,
}

impl RunConfig {
    pub fn pso_overrides(&self) -> PsoOverrides {
        PsoOverrides {
            swarm_size: self.swarm_size,
            inertia: self.inertia,
            cognitive_weight: self.cognitive_weight,
            social_weight: self.social_weight,
            topology: Some(self.topology),
            max_iterations: Some(self.max_iterations),
            stall_iterations: Some(self.stall_iterations),
            min_improvement: Some(self.min_improvement),
            fitness_threshold: self.fitness_threshold,
        }
    }

    /// PSO settings for one preset and seed with every override applied.
    pub fn pso(&self, preset: Preset, seed: u64) -> PsoConfig {
        self.pso_overrides().apply(PsoConfig::preset(preset).with_seed(seed))
    }

    pub fn bounds(&self, dof: Dof) -> SearchBounds {
        pose_bounds(dof, self.translation_bound, self.rotation_bound).expect("bounds validated at parse time")
    }
}

/// Reads `path` (if any) and merges `overrides` on top.
pub fn load_config(
    command: Command,
    path: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<RunConfig, ConfigError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError::Read {
            path: p.to_path_buf(),
            reason: e.to_string(),
        })?,
        None => String::new(),
    };
    parse_config(command, &text, overrides)
}

/// Parses file text plus overrides into a validated [`RunConfig`].
pub fn parse_config(command: Command, text: &str, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let mut values: BTreeMap<String, (String, Option<usize>)> = BTreeMap::new();
    for (k, v, line) in parse_entries(text)? {
        values.insert(k, (v, Some(line)));
    }
    for (k, v) in overrides {
        let k = canonical_key(k);
        if !is_known_key(&k) {
            return Err(ConfigError::UnknownKey { key: k, line: None });
        }
        values.insert(k, (v.trim().to_string(), None));
    }
    Resolver { values }.resolve(command)
}

struct Resolver {
    values: BTreeMap<String, (String, Option<usize>)>,
}

impl Resolver {
    fn invalid(&self, key: &str, reason: impl fmt::Display) -> ConfigError {
        let (value, line) = self.values.get(key).cloned().unwrap_or_default();
        ConfigError::InvalidValue {
            key: key.to_string(),
            value,
            reason: reason.to_string(),
            line,
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| self.invalid(key, e)))
            .transpose()
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => {
                let items = v
                    .split(',')
                    .map(|s| s.trim().parse::<T>().map_err(|e| self.invalid(key, e)))
                    .collect::<Result<Vec<_>, _>>()?;
                if items.is_empty() {
                    return Err(self.invalid(key, "empty list"));
                }
                Ok(items)
            }
        }
    }

    fn numbers(&self, key: &str, count: usize) -> Result<Option<Vec<f64>>, ConfigError> {
        let Some(items) = self.raw(key).map(|_| self.list::<f64>(key, Vec::new())).transpose()? else {
            return Ok(None);
        };
        if items.len() != count {
            return Err(self.invalid(key, format!("expected {count} comma-separated numbers")));
        }
        Ok(Some(items))
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.get_or(key, default)?;
        if !(v.is_finite() && v > 0.0) {
            return Err(self.invalid(key, "must be a positive number"));
        }
        Ok(v)
    }

    fn at_least(&self, key: &str, default: usize, min: usize) -> Result<usize, ConfigError> {
        let v = self.get_or(key, default)?;
        if v < min {
            return Err(self.invalid(key, format!("must be at least {min}")));
        }
        Ok(v)
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    fn require(&self, key: &str) -> Result<(), ConfigError> {
        if self.raw(key).is_none() {
            return Err(ConfigError::Missing(key.to_string()));
        }
        Ok(())
    }

    fn boolean(&self, key: &str) -> Result<bool, ConfigError> {
        match self.raw(key).map(str::to_ascii_lowercase).as_deref() {
            None | Some("false" | "0" | "no" | "off") => Ok(false),
            Some("true" | "1" | "yes" | "on") => Ok(true),
            Some(_) => Err(self.invalid(key, "expected true or false")),
        }
    }

    fn region(&self) -> Result<Option<Rect>, ConfigError> {
        let Some(raw) = self.raw("region") else {
            return Ok(None);
        };
        let parts: Vec<usize> = raw
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| self.invalid("region", e))?;
        match parts[..] {
            [x0, y0, w, h] if w > 0 && h > 0 => Ok(Some(Rect::new(x0, y0, w, h))),
            [_, _, _, _] => Err(self.invalid("region", "width and height must be positive")),
            _ => Err(self.invalid("region", "expected x0,y0,w,h")),
        }
    }

    fn plane(&self) -> Result<PlaneParams, ConfigError> {
        match self.numbers("normal", 4)? {
            None => Ok(PlaneParams::fronto_parallel()),
            Some(v) => PlaneParams::from_normal_depth(nalgebra::Vector3::new(v[0], v[1], v[2]), v[3])
                .map_err(|e| self.invalid("normal", e)),
        }
    }

    fn inertia(&self) -> Result<Option<Inertia>, ConfigError> {
        let Some(raw) = self.raw("inertia") else {
            return Ok(None);
        };
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| self.invalid("inertia", e));
        let w = match raw.split_once(':') {
            Some((a, b)) => Inertia::Linear {
                start: num(a)?,
                end: num(b)?,
            },
            None => Inertia::Constant(num(raw)?),
        };
        Ok(Some(w))
    }

    fn resolve(&self, command: Command) -> Result<RunConfig, ConfigError> {
        let bins = self.get_or("bins", DEFAULT_BINS)?;
        HistogramConfig::new(bins).map_err(|e| self.invalid("bins", e))?;
        let dofs = self.list("dof", vec![Dof::Six])?;
        let translation_bound = self.positive("translation-bound", DEFAULT_TRANSLATION_BOUND)?;
        let rotation_bound = self.positive("rotation-bound", DEFAULT_ROTATION_BOUND)?;
        let max_step = self.positive("max-step", 0.01)?;
        let dims = match self.list::<usize>("dims", vec![0, 1])?[..] {
            [a, b] if a != b => (a, b),
            _ => return Err(self.invalid("dims", "expected two distinct pose components")),
        };
        let cfg = RunConfig {
            command,
            reference: self.path("ref"),
            sequence: self.path("seq"),
            base: self.path("base"),
            out: self.path("out").unwrap_or_else(|| PathBuf::from("out")),
            run_name: self.get_or("run", "run".to_string())?,
            region: self.region()?,
            plane: self.plane()?,
            stride: self.at_least("stride", 1, 1)?,
            focal: self.get::<f64>("focal")?,
            cx: self.get("cx")?,
            cy: self.get("cy")?,
            measures: self.list("measure", vec![MeasureKind::Mi])?,
            bins,
            dofs,
            presets: self.list("preset", vec![Preset::Common])?,
            seeds: self.list("seed", vec![0])?,
            swarm_size: self.get("swarm-size")?,
            inertia: self.inertia()?,
            cognitive_weight: self.get("cognitive-weight")?,
            social_weight: self.get("social-weight")?,
            topology: self.get_or("topology", Topology::Global)?,
            max_iterations: self.get_or("max-iterations", 100)?,
            stall_iterations: self.get_or("stall-iterations", 15)?,
            min_improvement: self.get_or("min-improvement", 1e-9)?,
            fitness_threshold: self.get("fitness-threshold")?,
            translation_bound,
            rotation_bound,
            warm_start: self.boolean("warm-start")?,
            frames: self.get_or("frames", 100)?,
            max_step,
            max_rotation: self.positive("max-rotation", 2.0 * max_step)?,
            gain_drift: self.get_or("gain-drift", 0.0)?,
            frame: self.get_or("frame", 1)?,
            dims,
            span: self.positive("span", translation_bound)?,
            cells: self.at_least("cells", 41, 1)?,
        };
        if cfg.focal.is_some_and(|f| !(f.is_finite() && f > 0.0)) {
            return Err(self.invalid("focal", "must be a positive number"));
        }
        if !(1.0 + cfg.gain_drift > 0.0 && cfg.gain_drift.is_finite()) {
            return Err(self.invalid("gain-drift", "final gain must stay positive"));
        }
        for &preset in &cfg.presets {
            cfg.pso(preset, 0).validate().map_err(|e| {
                let key = if self.raw("topology").is_some() { "topology" } else { "swarm-size" };
                self.invalid(key, e)
            })?;
        }
        for &dof in &cfg.dofs {
            if command == Command::Surface && (cfg.dims.0 >= dof.count() || cfg.dims.1 >= dof.count()) {
                return Err(self.invalid("dims", format!("dof {dof} has only {} components", dof.count())));
            }
        }
        match command {
            Command::Generate => self.require("base")?,
            Command::Track => {
                self.require("ref")?;
                self.require("seq")?;
                self.require("region")?;
                if cfg.measures.len() != 1 || cfg.dofs.len() != 1 || cfg.presets.len() != 1 || cfg.seeds.len() != 1 {
                    return Err(self.invalid(
                        "measure",
                        "track takes a single measure, dof, preset and seed; use experiment for sweeps",
                    ));
                }
            }
            Command::Surface => {
                self.require("ref")?;
                self.require("seq")?;
                self.require("region")?;
            }
            Command::Experiment => {
                self.require("seq")?;
                self.require("region")?;
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn track_flags() -> Vec<(String, String)> {
        flags(&[("ref", "ref.pgm"), ("seq", "frames"), ("region", "100,100,64,64")])
    }

    #[test]
    fn empty_file_takes_defaults() {
        let cfg = parse_config(Command::Track, "", &track_flags()).unwrap();
        assert_eq!(cfg.bins, 32);
        assert_eq!(cfg.measures, vec![MeasureKind::Mi]);
        assert_eq!(cfg.dofs, vec![Dof::Six]);
        assert_eq!(cfg.region, Some(Rect::new(100, 100, 64, 64)));
        assert_eq!(cfg.plane, PlaneParams::fronto_parallel());
        assert_eq!(cfg.pso(Preset::Common, 3), PsoConfig::preset(Preset::Common).with_seed(3));
        assert_eq!(cfg.translation_bound, DEFAULT_TRANSLATION_BOUND);
        assert_eq!(cfg.out, PathBuf::from("out"));
    }

    #[test]
    fn flags_override_file() {
        let file = "# tracker settings\nbins = 32\nmeasure=ncc  # trailing comment\n";
        let mut over = track_flags();
        over.push(("bins".into(), "64".into()));
        let cfg = parse_config(Command::Track, file, &over).unwrap();
        assert_eq!(cfg.bins, 64);
        assert_eq!(cfg.measures, vec![MeasureKind::Ncc]);
    }

    #[test]
    fn one_bin_is_rejected() {
        let err = parse_config(Command::Track, "\nbins=1\n", &track_flags()).unwrap_err();
        assert!(matches!(err, ConfigError::InvalidValue { ref key, line: Some(2), .. } if key == "bins"), "{err}");
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = parse_config(Command::Track, "bins=8\ncolour=red\n", &track_flags()).unwrap_err();
        assert_eq!(err, ConfigError::UnknownKey { key: "colour".into(), line: Some(2) });
        assert_eq!(err.to_string(), "line 2: unknown key `colour`");
        let err = parse_config(Command::Track, "", &flags(&[("nope", "1")])).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: None, .. }));
    }

    #[test]
    fn malformed_line() {
        let err = parse_config(Command::Track, "bins 8\n", &track_flags()).unwrap_err();
        assert!(matches!(err, ConfigError::Malformed { line: 1, .. }));
    }

    #[test]
    fn missing_region() {
        let err = parse_config(Command::Track, "", &flags(&[("ref", "a.pgm"), ("seq", "d")])).unwrap_err();
        assert_eq!(err, ConfigError::Missing("region".into()));
    }

    #[test]
    fn underscores_and_lists() {
        let file = "max_iterations=50\nseed=1,2,3\ndof=2,4,6\nmeasure=ssd,ncc,mi\npreset=common,trelea\n";
        let cfg = parse_config(Command::Experiment, file, &flags(&[("seq", "d"), ("region", "1,1,20,20")])).unwrap();
        assert_eq!(cfg.max_iterations, 50);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.dofs, vec![Dof::Two, Dof::Four, Dof::Six]);
        assert_eq!(cfg.measures.len(), 3);
        assert_eq!(cfg.presets, vec![Preset::Common, Preset::Trelea]);
        let err = parse_config(Command::Track, file, &track_flags()).unwrap_err();
        assert!(matches!(err, ConfigError::InvalidValue { .. }));
    }

    #[test]
    fn value_validation() {
        let bad = [
            ("region", "1,2,3"),
            ("region", "0,0,0,5"),
            ("normal", "0,0,1"),
            ("normal", "0,0,0,1"),
            ("translation-bound", "-1"),
            ("topology", "local40"),
            ("inertia", "fast"),
            ("warm-start", "maybe"),
            ("gain-drift", "-2"),
            ("stride", "0"),
            ("dof", "3"),
        ];
        for (k, v) in bad {
            let mut over = track_flags();
            over.push((k.into(), v.into()));
            assert!(parse_config(Command::Track, "", &over).is_err(), "{k}={v}");
            let file = format!("{k}={v}");
            let err = parse_config(Command::Experiment, &file, &flags(&[("seq", "d")])).unwrap_err();
            assert!(matches!(err, ConfigError::InvalidValue { line: Some(1), .. }), "{k}={v}: {err}");
        }
        let cfg = parse_config(
            Command::Track,
            "inertia=0.9:0.4\nnormal=0,0,2,2\nwarm_start=true\ntopology=local2",
            &track_flags(),
        )
        .unwrap();
        assert_eq!(cfg.inertia, Some(Inertia::Linear { start: 0.9, end: 0.4 }));
        assert!(cfg.warm_start);
        assert_eq!(cfg.topology, Topology::Local(2));
        assert_eq!(cfg.plane.scaled_normal(), &nalgebra::Vector3::new(0.0, 0.0, 0.5));
    }

    #[test]
    fn generate_needs_base() {
        assert_eq!(
            parse_config(Command::Generate, "", &[]).unwrap_err(),
            ConfigError::Missing("base".into())
        );
        let cfg = parse_config(Command::Generate, "base=b.pgm\nmax-step=0.02", &[]).unwrap();
        assert_eq!(cfg.frames, 100);
        assert_eq!(cfg.max_rotation, 0.04);
    }
}
