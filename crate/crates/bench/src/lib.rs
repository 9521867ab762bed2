//! Fixtures shared by the criterion benches under `benches/`.

use dgclr::synth::random_graph;
use dgclr::{DgclrModel, RatingGraph, TrainConfig};

pub const NUM_RATINGS: usize = 5;

/// A freshly initialized model over a random graph of `edges` edges.
pub struct Fixture {
    pub cfg: TrainConfig,
    pub graph: RatingGraph,
    pub model: DgclrModel,
}

impl Fixture {
    pub fn new(edges: usize, d: usize, factors: usize, layers: usize) -> Self {
        let cfg = TrainConfig {
            d,
            factors,
            layers,
            ..TrainConfig::default()
        };
        let graph = random_graph(edges, d, NUM_RATINGS, 0);
        let values: Vec<f64> = (1..=NUM_RATINGS).map(|r| r as f64).collect();
        let model = DgclrModel::new(
            cfg.model(),
            graph.num_users(),
            graph.num_items(),
            &values,
            0,
        )
        .expect("valid bench configuration");
        Self { cfg, graph, model }
    }
}
