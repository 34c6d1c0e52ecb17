use std::fmt;
use std::str::FromStr;

use super::{OptimizerError, Particle};

/// Which particles a particle learns from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// Every particle sees the whole swarm.
    Global,
    /// Ring with one neighbour on each side.
    Circle,
    /// Ring with `k` neighbours on each side.
    Local(usize),
    /// Particle 0 is a hub connected to everyone; the others see only the hub.
    Wheel,
}

impl Topology {
    /// Whether the topology is usable with a swarm of `n` particles.
    pub fn fits(self, n: usize) -> bool {
        match self {
            Topology::Local(k) => k >= 1 && k < n,
            _ => true,
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Global => f.write_str("global"),
            Topology::Circle => f.write_str("circle"),
            Topology::Local(k) => write!(f, "local{k}"),
            Topology::Wheel => f.write_str("wheel"),
        }
    }
}

impl FromStr for Topology {
    type Err = OptimizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "global" => Ok(Topology::Global),
            "circle" | "ring" => Ok(Topology::Circle),
            "wheel" => Ok(Topology::Wheel),
            _ => s
                .strip_prefix("local")
                .map(|k| k.trim_start_matches([':', '(']).trim_end_matches(')'))
                .and_then(|k| k.parse().ok())
                .map(Topology::Local)
                .ok_or(OptimizerError::UnknownTopology(s)),
        }
    }
}

/// Index of the best personal best among `candidates`; ties keep the
/// earliest candidate.
fn best_of(particles: &[Particle], candidates: impl Iterator<Item = usize>) -> usize {
    let mut best: Option<usize> = None;
    for j in candidates {
        match best {
            Some(b) if particles[j].best_fitness <= particles[b].best_fitness => {}
            _ => best = Some(j),
        }
    }
    best.expect("neighbourhood is never empty")
}

/// Index of the particle whose personal best attracts particle `index`.
pub fn neighborhood_best_index(particles: &[Particle], index: usize, topology: Topology) -> usize {
    let n = particles.len();
    let ring = |k: usize| {
        let k = k.min(n - 1);
        // self first so ties favour the particle itself
        std::iter::once(index).chain((1..=k).flat_map(move |d| [(index + n - d) % n, (index + d) % n]))
    };
    match topology {
        Topology::Global => best_of(particles, 0..n),
        Topology::Circle => best_of(particles, ring(1)),
        Topology::Local(k) => best_of(particles, ring(k)),
        Topology::Wheel => {
            if index == 0 {
                best_of(particles, 0..n)
            } else {
                best_of(particles, [index, 0].into_iter())
            }
        }
    }
}

/// Personal-best position of the particle that attracts particle `index`.
pub fn neighborhood_best(particles: &[Particle], index: usize, topology: Topology) -> &[f64] {
    &particles[neighborhood_best_index(particles, index, topology)].best_position
}

#[cfg(test)]
mod tests {
    use super::*;

    fn swarm(fitness: &[f64]) -> Vec<Particle> {
        fitness
            .iter()
            .enumerate()
            .map(|(i, &f)| Particle {
                position: vec![i as f64],
                velocity: vec![0.0],
                best_position: vec![i as f64],
                best_fitness: f,
            })
            .collect()
    }

    #[test]
    fn global_is_argmax() {
        let p = swarm(&[1.0, 7.0, 3.0, 9.0, 2.0]);
        for i in 0..5 {
            assert_eq!(neighborhood_best_index(&p, i, Topology::Global), 3);
        }
    }

    #[test]
    fn circle_of_three_is_global() {
        let p = swarm(&[4.0, 1.0, 6.0]);
        for i in 0..3 {
            assert_eq!(
                neighborhood_best_index(&p, i, Topology::Circle),
                neighborhood_best_index(&p, i, Topology::Global)
            );
        }
    }

    #[test]
    fn circle_sees_ring_neighbours() {
        let p = swarm(&[0.0, 1.0, 2.0, 3.0, 10.0, 5.0]);
        assert_eq!(neighborhood_best_index(&p, 0, Topology::Circle), 5);
        assert_eq!(neighborhood_best_index(&p, 1, Topology::Circle), 2);
        assert_eq!(neighborhood_best_index(&p, 3, Topology::Circle), 4);
        assert_eq!(neighborhood_best(&p, 5, Topology::Circle), &[4.0]);
    }

    #[test]
    fn local_k_window() {
        let p = swarm(&[9.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 8.0]);
        assert_eq!(neighborhood_best_index(&p, 3, Topology::Local(2)), 3);
        assert_eq!(neighborhood_best_index(&p, 3, Topology::Local(3)), 0);
        assert_eq!(neighborhood_best_index(&p, 5, Topology::Local(2)), 7);
        assert_eq!(neighborhood_best_index(&p, 1, Topology::Local(7)), 0);
    }

    #[test]
    fn wheel_spokes_see_hub() {
        let p = swarm(&[5.0, 1.0, 3.0, 8.0]);
        assert_eq!(neighborhood_best(&p, 2, Topology::Wheel), &[0.0]);
        assert_eq!(neighborhood_best_index(&p, 3, Topology::Wheel), 3);
        assert_eq!(neighborhood_best_index(&p, 0, Topology::Wheel), 3);
    }

    #[test]
    fn parse_topologies() {
        assert_eq!("global".parse::<Topology>().unwrap(), Topology::Global);
        assert_eq!("local3".parse::<Topology>().unwrap(), Topology::Local(3));
        assert_eq!("local(2)".parse::<Topology>().unwrap(), Topology::Local(2));
        assert!("star".parse::<Topology>().is_err());
        assert!(!Topology::Local(5).fits(5));
        assert!(Topology::Local(4).fits(5));
    }
}
