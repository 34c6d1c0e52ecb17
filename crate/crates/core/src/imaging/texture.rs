//! Procedural textured images for synthetic sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GrayImage;

const LOW: f32 = 0.1;
const HIGH: f32 = 0.75;

/// Multi-octave value noise rescaled to `[0.1, 0.75]`.
///
/// The headroom above 0.75 leaves room for gain perturbations up to about
/// 1.3 before intensities saturate.
pub fn textured_image(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0f32; width * height];
    for &(cell, amplitude) in &[(48.0f32, 1.0f32), (24.0, 0.8), (12.0, 0.6), (6.0, 0.45), (3.0, 0.3)] {
        let gw = (width as f32 / cell).ceil() as usize + 2;
        let gh = (height as f32 / cell).ceil() as usize + 2;
        let lattice: Vec<f32> = (0..gw * gh).map(|_| rng.random::<f32>()).collect();
        for y in 0..height {
            let fy = y as f32 / cell;
            let y0 = fy.floor() as usize;
            let ty = smoothstep(fy - y0 as f32);
            for x in 0..width {
                let fx = x as f32 / cell;
                let x0 = fx.floor() as usize;
                let tx = smoothstep(fx - x0 as f32);
                let at = |ix: usize, iy: usize| lattice[iy * gw + ix];
                let top = at(x0, y0) + tx * (at(x0 + 1, y0) - at(x0, y0));
                let bottom = at(x0, y0 + 1) + tx * (at(x0 + 1, y0 + 1) - at(x0, y0 + 1));
                acc[y * width + x] += amplitude * (top + ty * (bottom - top));
            }
        }
    }
    let (lo, hi) = acc
        .iter()
        .fold((f32::MAX, f32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = (hi - lo).max(f32::EPSILON);
    let data = acc
        .into_iter()
        .map(|v| (LOW + (HIGH - LOW) * (v - lo) / span).clamp(0.0, 1.0))
        .collect();
    GrayImage::new(width, height, data).expect("values rescaled into range")
}

fn smoothstep(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = textured_image(64, 48, 3);
        let b = textured_image(64, 48, 3);
        assert_eq!(a, b);
        assert_ne!(a, textured_image(64, 48, 4));
        let (lo, hi) = a
            .data()
            .iter()
            .fold((1.0f32, 0.0f32), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        assert!((lo - LOW).abs() < 1e-6 && (hi - HIGH).abs() < 1e-6);
    }
}
