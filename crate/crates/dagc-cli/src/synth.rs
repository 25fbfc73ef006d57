//! Synthetic benchmark generator: a stochastic block model with matching
//! Gaussian feature blobs, solvable by construction at desk scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dagc::autodiff::Tensor;
use dagc::graph::SparseAdjacency;
use dagc::{Error, Result};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n: usize,
    pub k: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Centroid separation in units of the per-coordinate noise sigma.
    pub sep: f64,
    pub dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 300,
            k: 3,
            p_in: 0.2,
            p_out: 0.01,
            sep: 4.0,
            dim: 16,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.n < self.k {
            return Err(Error::InvalidParameter(format!(
                "need n >= k >= 1, got n={}, k={}",
                self.n, self.k
            )));
        }
        if !(0.0..=1.0).contains(&self.p_in) || !(0.0..=1.0).contains(&self.p_out) {
            return Err(Error::InvalidParameter(
                "edge probabilities must lie in [0,1]".into(),
            ));
        }
        if self.p_out >= self.p_in {
            return Err(Error::InvalidParameter(format!(
                "need p_out < p_in, got p_out={} p_in={}",
                self.p_out, self.p_in
            )));
        }
        if self.sep <= 0.0 {
            return Err(Error::InvalidParameter("sep must be positive".into()));
        }
        if self.dim < self.k {
            return Err(Error::InvalidParameter(format!(
                "dim must be at least k for orthogonal centroids, got dim={} k={}",
                self.dim, self.k
            )));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on open-interval uniforms
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// k orthonormal directions in R^dim via Gram-Schmidt on Gaussian draws.
fn orthonormal_directions(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(k);
    while dirs.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        for d in &dirs {
            let dot: f64 = v.iter().zip(d).map(|(a, b)| a * b).sum();
            for (vi, di) in v.iter_mut().zip(d) {
                *vi -= dot * di;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue; // essentially-degenerate draw, retry
        }
        for vi in v.iter_mut() {
            *vi /= norm;
        }
        dirs.push(v);
    }
    dirs
}

/// Equal blocks (remainder spread over the first blocks), within-block
/// edges with probability p_in, cross-block with p_out, features sampled
/// as unit-variance blobs around sep-scaled orthonormal centroids.
pub fn generate(cfg: &SynthConfig) -> Result<(Tensor, SparseAdjacency, Vec<i64>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let base = cfg.n / cfg.k;
    let remainder = cfg.n % cfg.k;
    let mut labels = Vec::with_capacity(cfg.n);
    for block in 0..cfg.k {
        let size = base + usize::from(block < remainder);
        labels.extend(std::iter::repeat_n(block as i64, size));
    }

    let mut edges = Vec::new();
    for u in 0..cfg.n {
        for v in (u + 1)..cfg.n {
            let p = if labels[u] == labels[v] {
                cfg.p_in
            } else {
                cfg.p_out
            };
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let graph = SparseAdjacency::from_edges(cfg.n, &edges)?;

    let dirs = orthonormal_directions(&mut rng, cfg.k, cfg.dim);
    let mut values = vec![0.0; cfg.n * cfg.dim];
    for i in 0..cfg.n {
        let center = &dirs[labels[i] as usize];
        for j in 0..cfg.dim {
            values[i * cfg.dim + j] = cfg.sep * center[j] + gaussian(&mut rng);
        }
    }
    let features = Tensor::new(cfg.n, cfg.dim, values)?;

    Ok((features, graph, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig::default();
        let (f1, g1, l1) = generate(&cfg).unwrap();
        let (f2, g2, l2) = generate(&cfg).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
        assert!(f1
            .values()
            .iter()
            .zip(f2.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn disconnected_blocks_when_p_out_is_zero() {
        let cfg = SynthConfig {
            n: 60,
            p_out: 0.0,
            p_in: 0.5,
            seed: 3,
            ..SynthConfig::default()
        };
        let (_, graph, labels) = generate(&cfg).unwrap();
        for (u, v) in graph.undirected_edges() {
            assert_eq!(labels[u], labels[v]);
        }
    }

    #[test]
    fn blocks_are_balanced() {
        let cfg = SynthConfig {
            n: 301,
            ..SynthConfig::default()
        };
        let (_, _, labels) = generate(&cfg).unwrap();
        let mut counts = [0usize; 3];
        for &l in &labels {
            counts[l as usize] += 1;
        }
        assert_eq!(counts, [101, 100, 100]);
    }

    #[test]
    fn rejects_degenerate_parameters() {
        let bad = SynthConfig {
            p_out: 0.5,
            p_in: 0.2,
            ..SynthConfig::default()
        };
        assert!(generate(&bad).is_err());
        let bad = SynthConfig {
            dim: 2,
            k: 3,
            ..SynthConfig::default()
        };
        assert!(generate(&bad).is_err());
    }

    #[test]
    fn centroids_are_separated() {
        let cfg = SynthConfig::default();
        let (features, _, labels) = generate(&cfg).unwrap();
        // class means should sit roughly sep*sqrt(2) apart
        let mut means = vec![vec![0.0; cfg.dim]; cfg.k];
        let mut counts = vec![0usize; cfg.k];
        for i in 0..cfg.n {
            counts[labels[i] as usize] += 1;
            for (m, &v) in means[labels[i] as usize].iter_mut().zip(features.row(i)) {
                *m += v;
            }
        }
        for (m, &c) in means.iter_mut().zip(&counts) {
            for v in m.iter_mut() {
                *v /= c as f64;
            }
        }
        for a in 0..cfg.k {
            for b in (a + 1)..cfg.k {
                let d2: f64 = means[a]
                    .iter()
                    .zip(&means[b])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                let expect = cfg.sep * 2.0_f64.sqrt();
                assert!(
                    (d2.sqrt() - expect).abs() < 1.0,
                    "blocks {a},{b}: distance {}",
                    d2.sqrt()
                );
            }
        }
    }
}
