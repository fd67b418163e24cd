//! Synthetic low-rank rating data with a known noise floor.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{HdiDataset, RatingTriple};
use crate::error::{Error, Result};

/// `r_ui = <p*_u, q*_i> + N(0, σ²)` on a uniformly sampled set of cells, with
/// generator factors drawn from `U(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowRank {
    pub num_users: usize,
    pub num_items: usize,
    pub rank: usize,
    /// Fraction of cells observed; the count is rounded to the nearest integer.
    pub density: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl LowRank {
    pub fn generate(&self) -> Result<HdiDataset> {
        let cells = self.num_users * self.num_items;
        if cells == 0 || self.rank == 0 {
            return Err(Error::Config("generator needs users, items, and rank >= 1".into()));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Config(format!(
                "density must be in (0, 1], got {}",
                self.density
            )));
        }
        let noise = Normal::new(0.0, self.noise_sigma).map_err(|e| Error::Config(format!("noise sigma: {e}")))?;
        let count = ((cells as f64 * self.density).round() as usize).clamp(1, cells);

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let k = self.rank;
        let p: Vec<f64> = (0..self.num_users * k).map(|_| rng.random::<f64>()).collect();
        let q: Vec<f64> = (0..self.num_items * k).map(|_| rng.random::<f64>()).collect();
        let mut picked = index::sample(&mut rng, cells, count).into_vec();
        picked.sort_unstable();

        let triples = picked.into_iter().map(|cell| {
            let (u, i) = (cell / self.num_items, cell % self.num_items);
            let clean: f64 = (0..k).map(|d| p[u * k + d] * q[i * k + d]).sum();
            RatingTriple {
                user: u,
                item: i,
                rating: clean + noise.sample(&mut rng),
            }
        });
        HdiDataset::from_triples(self.num_users, self.num_items, triples.collect::<Vec<_>>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_density_and_determinism() {
        let g = LowRank {
            num_users: 50,
            num_items: 40,
            rank: 3,
            density: 0.3,
            noise_sigma: 0.01,
            seed: 5,
        };
        let a = g.generate().unwrap();
        assert_eq!(a.len(), 600);
        assert_eq!(a, g.generate().unwrap());
        let mean = a.entries().iter().map(|t| t.rating).sum::<f64>() / 600.0;
        // E[<p, q>] = 3 * 0.25
        assert!((mean - 0.75).abs() < 0.1, "{mean}");
    }

    #[test]
    fn rejects_bad_density() {
        let g = LowRank {
            num_users: 5,
            num_items: 4,
            rank: 1,
            density: 0.0,
            noise_sigma: 0.0,
            seed: 0,
        };
        assert!(g.generate().is_err());
    }
}
