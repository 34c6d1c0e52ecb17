//! Similarity between a warped patch and the cached template.
//!
//! Every measure is oriented so that larger is better: SSD is negated, NCC
//! is the Pearson coefficient, MI is in bits over equal-width histograms on
//! `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::imaging::WarpedPatch;

/// Fitness reported for patches that cannot be scored.
pub const INVALID_FITNESS: f64 = f64::NEG_INFINITY;

/// Patches with fewer valid samples than this fraction are not scored.
pub const MIN_VALID_FRACTION: f64 = 0.5;

pub const DEFAULT_BINS: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("no valid samples to compare")]
    EmptyOverlap,
    #[error("stream has zero variance over the valid samples")]
    ZeroVariance,
    #[error("stream lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("histogram bins must be in [2, 256], got {0}")]
    InvalidBins(usize),
    #[error("unknown similarity measure {0:?}")]
    UnknownMeasure(String),
    #[error("valid fraction {0} is below {MIN_VALID_FRACTION}")]
    InsufficientOverlap(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistogramConfig {
    bins: usize,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self { bins: DEFAULT_BINS }
    }
}

impl HistogramConfig {
    pub fn new(bins: usize) -> Result<Self, SimilarityError> {
        if !(2..=256).contains(&bins) {
            return Err(SimilarityError::InvalidBins(bins));
        }
        Ok(Self { bins })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Equal-width bin of an intensity; values outside `[0, 1]` land in the
    /// end bins.
    #[inline]
    pub fn bin(&self, v: f64) -> usize {
        let scaled = v * self.bins as f64;
        if scaled >= 0.0 {
            (scaled as usize).min(self.bins - 1)
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeasureKind {
    Ssd,
    Ncc,
    Mi,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 3] = [MeasureKind::Ssd, MeasureKind::Ncc, MeasureKind::Mi];

    pub fn name(self) -> &'static str {
        match self {
            MeasureKind::Ssd => "ssd",
            MeasureKind::Ncc => "ncc",
            MeasureKind::Mi => "mi",
        }
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MeasureKind {
    type Err = SimilarityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ssd" => Ok(MeasureKind::Ssd),
            "ncc" => Ok(MeasureKind::Ncc),
            "mi" => Ok(MeasureKind::Mi),
            other => Err(SimilarityError::UnknownMeasure(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimilarityMeasure {
    pub kind: MeasureKind,
    pub hist: HistogramConfig,
}

impl SimilarityMeasure {
    pub fn new(kind: MeasureKind) -> Self {
        Self {
            kind,
            hist: HistogramConfig::default(),
        }
    }

    pub fn with_bins(kind: MeasureKind, bins: usize) -> Result<Self, SimilarityError> {
        Ok(Self {
            kind,
            hist: HistogramConfig::new(bins)?,
        })
    }
}

fn check_lengths(a: &[f64], b: &[f64], mask: &[bool]) -> Result<(), SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() != mask.len() {
        return Err(SimilarityError::LengthMismatch(a.len(), mask.len()));
    }
    Ok(())
}

/// `-Σ (a - b)²` over valid entries.
pub fn ssd(a: &[f64], b: &[f64], mask: &[bool]) -> Result<f64, SimilarityError> {
    check_lengths(a, b, mask)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((&x, &y), &m) in a.iter().zip(b).zip(mask) {
        if m {
            let d = x - y;
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(SimilarityError::EmptyOverlap);
    }
    Ok(-sum)
}

/// Pearson correlation over valid entries.
pub fn ncc(a: &[f64], b: &[f64], mask: &[bool]) -> Result<f64, SimilarityError> {
    check_lengths(a, b, mask)?;
    let (mut sa, mut sb, mut n) = (0.0, 0.0, 0usize);
    for ((&x, &y), &m) in a.iter().zip(b).zip(mask) {
        if m {
            sa += x;
            sb += y;
            n += 1;
        }
    }
    if n == 0 {
        return Err(SimilarityError::EmptyOverlap);
    }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for ((&x, &y), &m) in a.iter().zip(b).zip(mask) {
        if m {
            let (dx, dy) = (x - ma, y - mb);
            cov += dx * dy;
            va += dx * dx;
            vb += dy * dy;
        }
    }
    // relative floor: sums of squares of a constant stream are pure rounding
    let floor = 1e-24 * n as f64;
    if va <= floor || vb <= floor {
        return Err(SimilarityError::ZeroVariance);
    }
    Ok((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

/// Entropy in bits of a multiset of bin counts summing to `total`.
///
/// Counts are summed in ascending order so that the result depends only on
/// the multiset, not on the bin layout.
fn entropy_of_counts(counts: &[u32], total: usize) -> f64 {
    let mut nonzero: Vec<u32> = counts.iter().copied().filter(|&c| c > 0).collect();
    nonzero.sort_unstable();
    let n = total as f64;
    -nonzero
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>()
}

fn marginal_counts(a: &[f64], mask: &[bool], cfg: &HistogramConfig) -> (Vec<u32>, usize) {
    let mut counts = vec![0u32; cfg.bins];
    let mut total = 0;
    for (&v, &m) in a.iter().zip(mask) {
        if m {
            counts[cfg.bin(v)] += 1;
            total += 1;
        }
    }
    (counts, total)
}

/// Shannon entropy in bits of the valid intensities.
pub fn entropy(a: &[f64], mask: &[bool], cfg: &HistogramConfig) -> Result<f64, SimilarityError> {
    if a.len() != mask.len() {
        return Err(SimilarityError::LengthMismatch(a.len(), mask.len()));
    }
    let (counts, total) = marginal_counts(a, mask, cfg);
    if total == 0 {
        return Err(SimilarityError::EmptyOverlap);
    }
    Ok(entropy_of_counts(&counts, total))
}

/// Joint and marginal histograms of valid pairs, built in a single pass.
struct JointHistogram {
    joint: Vec<u32>,
    a: Vec<u32>,
    b: Vec<u32>,
    total: usize,
}

impl JointHistogram {
    fn build(a: &[f64], b: &[f64], mask: &[bool], cfg: &HistogramConfig) -> Self {
        let bins = cfg.bins;
        let mut h = Self {
            joint: vec![0; bins * bins],
            a: vec![0; bins],
            b: vec![0; bins],
            total: 0,
        };
        for ((&x, &y), &m) in a.iter().zip(b).zip(mask) {
            if m {
                let (i, j) = (cfg.bin(x), cfg.bin(y));
                h.joint[i * bins + j] += 1;
                h.a[i] += 1;
                h.b[j] += 1;
                h.total += 1;
            }
        }
        h
    }
}

/// Entropy in bits of the joint histogram of valid pairs.
pub fn joint_entropy(
    a: &[f64],
    b: &[f64],
    mask: &[bool],
    cfg: &HistogramConfig,
) -> Result<f64, SimilarityError> {
    check_lengths(a, b, mask)?;
    let h = JointHistogram::build(a, b, mask, cfg);
    if h.total == 0 {
        return Err(SimilarityError::EmptyOverlap);
    }
    Ok(entropy_of_counts(&h.joint, h.total))
}

/// `E(a) + E(b) - E(a, b)` in bits.
pub fn mutual_information(
    a: &[f64],
    b: &[f64],
    mask: &[bool],
    cfg: &HistogramConfig,
) -> Result<f64, SimilarityError> {
    check_lengths(a, b, mask)?;
    let h = JointHistogram::build(a, b, mask, cfg);
    if h.total == 0 {
        return Err(SimilarityError::EmptyOverlap);
    }
    let ea = entropy_of_counts(&h.a, h.total);
    let eb = entropy_of_counts(&h.b, h.total);
    let ej = entropy_of_counts(&h.joint, h.total);
    let mi = ea + eb - ej;
    Ok(if mi < 0.0 && mi > -1e-12 { 0.0 } else { mi })
}

/// Scores `patch` against the template, or explains why it cannot be scored.
pub fn score(
    measure: &SimilarityMeasure,
    patch: &WarpedPatch,
    template_values: &[f64],
) -> Result<f64, SimilarityError> {
    if patch.valid_fraction.is_nan() || patch.valid_fraction < MIN_VALID_FRACTION {
        return Err(SimilarityError::InsufficientOverlap(patch.valid_fraction));
    }
    let (a, b, mask) = (&patch.values, template_values, &patch.valid_mask);
    match measure.kind {
        MeasureKind::Ssd => ssd(a, b, mask),
        MeasureKind::Ncc => ncc(a, b, mask),
        MeasureKind::Mi => mutual_information(a, b, mask, &measure.hist),
    }
}

/// Like [`score`], collapsing every failure to [`INVALID_FITNESS`].
pub fn evaluate(measure: &SimilarityMeasure, patch: &WarpedPatch, template_values: &[f64]) -> f64 {
    score(measure, patch, template_values).unwrap_or(INVALID_FITNESS)
}
