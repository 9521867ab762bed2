//! Synthetic data: planted-factor rating datasets and random rating graphs
//! for timing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{split_dataset, Edge, InteractionDataset, RatingGraph, RatingScale};
use crate::error::{Error, Result};

/// Parameters of the planted-factor generator.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedConfig {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    /// Review vector dimension; must be divisible by `factors`.
    pub d: usize,
    /// Number of planted factors.
    pub factors: usize,
    /// Standard deviation of the rating noise before rounding.
    pub rating_noise: f64,
    /// Standard deviation of the review noise.
    pub review_noise: f64,
    pub seed: u64,
    pub split_seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            users: 50,
            items: 40,
            interactions: 600,
            d: 16,
            factors: 2,
            rating_noise: 0.1,
            review_noise: 0.1,
            seed: 0,
            split_seed: 0,
        }
    }
}

/// Ratings from planted user/item factor vectors.
///
/// Each user and item gets a vector in `[-1, 1]^factors`; the rating of a
/// pair is `round(3 + p.q + noise)` clamped to 1..=5. The review vector is
/// split into one block per factor: the block of the factor with the largest
/// `|p_k q_k|` holds `sign(p_k q_k)` plus noise, the rest pure noise. The
/// result is split 8:1:1 with `split_seed`.
pub fn planted_dataset(cfg: &PlantedConfig) -> Result<InteractionDataset> {
    if cfg.factors == 0 || !cfg.d.is_multiple_of(cfg.factors) {
        return Err(Error::Config(format!(
            "d={} must be a positive multiple of factors={}",
            cfg.d, cfg.factors
        )));
    }
    if cfg.interactions > cfg.users * cfg.items {
        return Err(Error::Config(format!(
            "{} interactions exceed {}x{} distinct pairs",
            cfg.interactions, cfg.users, cfg.items
        )));
    }
    let noise =
        |sd: f64| Normal::new(0.0, sd).map_err(|e| Error::Config(format!("noise level {sd}: {e}")));
    let rating_noise = noise(cfg.rating_noise)?;
    let review_noise = noise(cfg.review_noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut vectors = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..cfg.factors)
                    .map(|_| rng.random_range(-1.0..=1.0))
                    .collect()
            })
            .collect()
    };
    let p = vectors(cfg.users);
    let q = vectors(cfg.items);

    let mut pairs: Vec<(usize, usize)> = (0..cfg.users)
        .flat_map(|u| (0..cfg.items).map(move |i| (u, i)))
        .collect();
    pairs.shuffle(&mut rng);
    pairs.truncate(cfg.interactions);

    let block = cfg.d / cfg.factors;
    let mut ds = InteractionDataset::new(cfg.d, RatingScale::integer_range(1, 5));
    let mut review = vec![0.0; cfg.d];
    for (u, i) in pairs {
        let contrib: Vec<f64> = p[u].iter().zip(&q[i]).map(|(a, b)| a * b).collect();
        let raw = 3.0 + contrib.iter().sum::<f64>() + rating_noise.sample(&mut rng);
        let rating = raw.round().clamp(1.0, 5.0);
        let dominant = (0..cfg.factors)
            .max_by(|&a, &b| contrib[a].abs().total_cmp(&contrib[b].abs()))
            .unwrap_or(0);
        for (j, x) in review.iter_mut().enumerate() {
            let base = if j / block == dominant {
                contrib[dominant].signum()
            } else {
                0.0
            };
            *x = base + review_noise.sample(&mut rng);
        }
        ds.push(&format!("u{u}"), &format!("i{i}"), rating, &review)?;
    }
    split_dataset(&mut ds, cfg.split_seed)?;
    Ok(ds)
}

/// A random rating graph with `edges` edges and `max(2, edges / 10)` users
/// and items, for timing. Edges may repeat pairs.
pub fn random_graph(edges: usize, d: usize, num_ratings: usize, seed: u64) -> RatingGraph {
    let nodes = (edges / 10).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let es: Vec<Edge> = (0..edges)
        .map(|e| Edge {
            user: rng.random_range(0..nodes),
            item: rng.random_range(0..nodes),
            rating_idx: rng.random_range(0..num_ratings),
            interaction: e,
        })
        .collect();
    let reviews = (0..edges * d)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    RatingGraph::from_edges(nodes, nodes, num_ratings, d, es, reviews)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    #[test]
    fn planted_shape_and_split() {
        let ds = planted_dataset(&PlantedConfig::default()).unwrap();
        assert_eq!(ds.len(), 600);
        assert_eq!(ds.d(), 16);
        assert_eq!(ds.split_indices(Split::Train).len(), 480);
        assert_eq!(ds.split_indices(Split::Val).len(), 60);
        assert_eq!(ds.split_indices(Split::Test).len(), 60);
        assert!(ds
            .interactions
            .iter()
            .all(|x| (1.0..=5.0).contains(&x.rating)));
    }

    #[test]
    fn planted_is_deterministic() {
        let a = planted_dataset(&PlantedConfig::default()).unwrap();
        let b = planted_dataset(&PlantedConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = planted_dataset(&PlantedConfig {
            seed: 1,
            ..PlantedConfig::default()
        })
        .unwrap();
        assert_ne!(a.reviews(), c.reviews());
    }

    #[test]
    fn planted_reviews_carry_sentiment() {
        // with no noise the dominant block is exactly +-1 and agrees in sign
        // with the rating's deviation whenever one factor explains it
        let ds = planted_dataset(&PlantedConfig {
            rating_noise: 1e-9,
            review_noise: 1e-9,
            ..PlantedConfig::default()
        })
        .unwrap();
        for idx in 0..ds.len() {
            let r = ds.review(idx);
            let total: f64 = r.iter().sum::<f64>() / 8.0;
            assert!((total.abs() - 1.0).abs() < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn planted_rejects_bad_config() {
        assert!(planted_dataset(&PlantedConfig {
            d: 15,
            ..PlantedConfig::default()
        })
        .is_err());
        assert!(planted_dataset(&PlantedConfig {
            interactions: 5000,
            ..PlantedConfig::default()
        })
        .is_err());
    }

    #[test]
    fn random_graph_sizes() {
        let g = random_graph(1000, 4, 5, 3);
        assert_eq!(g.num_edges(), 1000);
        assert_eq!(g.num_users(), 100);
        assert_eq!(g.reviews().len(), 4000);
        let empty = random_graph(0, 4, 5, 3);
        assert_eq!(empty.num_edges(), 0);
    }
}
