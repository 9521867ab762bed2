use std::rc::Rc;

use super::{InteractionDataset, Split};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub user: usize,
    pub item: usize,
    pub rating_idx: usize,
    /// Index of the source interaction in the dataset.
    pub interaction: usize,
}

/// Bipartite user-item graph over training interactions, grouped by rating.
#[derive(Clone, Debug)]
pub struct RatingGraph {
    num_users: usize,
    num_items: usize,
    num_ratings: usize,
    d: usize,
    edges: Vec<Edge>,
    reviews: Vec<f64>,
    // per rating: user -> items, item -> users
    user_items: Vec<Vec<Vec<usize>>>,
    item_users: Vec<Vec<Vec<usize>>>,
    edge_users: Rc<[usize]>,
    edge_items: Rc<[usize]>,
    by_rating: Vec<Rc<[usize]>>,
}

impl RatingGraph {
    /// Graph over the dataset's train-labelled interactions.
    pub fn from_dataset(dataset: &InteractionDataset) -> Result<Self> {
        if dataset.splits().is_none() {
            return Err(Error::Dataset(
                "dataset must be split before building the graph".into(),
            ));
        }
        let mut edges = Vec::new();
        let mut reviews = Vec::new();
        for i in dataset.split_indices(Split::Train) {
            let x = dataset.interactions[i];
            edges.push(Edge {
                user: x.user,
                item: x.item,
                rating_idx: x.rating_idx,
                interaction: i,
            });
            reviews.extend_from_slice(dataset.review(i));
        }
        Ok(Self::from_edges(
            dataset.num_users(),
            dataset.num_items(),
            dataset.ratings.len(),
            dataset.d(),
            edges,
            reviews,
        ))
    }

    /// Build directly from edge records and a row-major `|E| x d` review matrix.
    pub fn from_edges(
        num_users: usize,
        num_items: usize,
        num_ratings: usize,
        d: usize,
        edges: Vec<Edge>,
        reviews: Vec<f64>,
    ) -> Self {
        assert_eq!(reviews.len(), edges.len() * d, "review matrix size");
        let mut user_items = vec![vec![Vec::new(); num_users]; num_ratings];
        let mut item_users = vec![vec![Vec::new(); num_items]; num_ratings];
        let mut by_rating = vec![Vec::new(); num_ratings];
        for (e, edge) in edges.iter().enumerate() {
            user_items[edge.rating_idx][edge.user].push(edge.item);
            item_users[edge.rating_idx][edge.item].push(edge.user);
            by_rating[edge.rating_idx].push(e);
        }
        let edge_users: Rc<[usize]> = edges.iter().map(|e| e.user).collect();
        let edge_items: Rc<[usize]> = edges.iter().map(|e| e.item).collect();
        Self {
            num_users,
            num_items,
            num_ratings,
            d,
            edges,
            reviews,
            user_items,
            item_users,
            edge_users,
            edge_items,
            by_rating: by_rating.into_iter().map(Rc::from).collect(),
        }
    }

    /// Subgraph keeping edges where `keep[e]` is true. Node sets are unchanged.
    pub fn subgraph(&self, keep: &[bool]) -> Self {
        assert_eq!(keep.len(), self.edges.len());
        let mut edges = Vec::new();
        let mut reviews = Vec::new();
        for (e, edge) in self.edges.iter().enumerate() {
            if keep[e] {
                edges.push(*edge);
                reviews.extend_from_slice(self.review(e));
            }
        }
        Self::from_edges(
            self.num_users,
            self.num_items,
            self.num_ratings,
            self.d,
            edges,
            reviews,
        )
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_ratings(&self) -> usize {
        self.num_ratings
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn review(&self, e: usize) -> &[f64] {
        &self.reviews[e * self.d..(e + 1) * self.d]
    }

    /// Row-major `|E| x d` review matrix.
    pub fn reviews(&self) -> &[f64] {
        &self.reviews
    }

    /// Items user `u` rated with rating index `r`.
    pub fn user_neighbors(&self, r: usize, u: usize) -> &[usize] {
        &self.user_items[r][u]
    }

    /// Users who rated item `i` with rating index `r`.
    pub fn item_neighbors(&self, r: usize, i: usize) -> &[usize] {
        &self.item_users[r][i]
    }

    pub fn user_degree(&self, u: usize) -> usize {
        self.user_items.iter().map(|adj| adj[u].len()).sum()
    }

    pub fn item_degree(&self, i: usize) -> usize {
        self.item_users.iter().map(|adj| adj[i].len()).sum()
    }

    pub fn edge_users(&self) -> &Rc<[usize]> {
        &self.edge_users
    }

    pub fn edge_items(&self) -> &Rc<[usize]> {
        &self.edge_items
    }

    /// Edge indices carrying rating index `r`.
    pub fn edges_with_rating(&self, r: usize) -> &Rc<[usize]> {
        &self.by_rating[r]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split_dataset, RatingScale};

    #[test]
    fn groups_by_rating() {
        let mut ds = InteractionDataset::new(2, RatingScale::integer_range(1, 5));
        ds.push("u1", "i1", 5.0, &[1.0, 0.0]).unwrap();
        ds.push("u1", "i2", 3.0, &[0.0, 1.0]).unwrap();
        ds.push("u2", "i2", 4.0, &[0.5, 0.5]).unwrap();
        ds.set_splits(vec![Split::Train, Split::Train, Split::Test])
            .unwrap();
        let g = RatingGraph::from_dataset(&ds).unwrap();
        let r5 = ds.ratings.index_of(5.0).unwrap();
        let r3 = ds.ratings.index_of(3.0).unwrap();
        assert_eq!(g.user_neighbors(r5, 0), &[0]);
        assert_eq!(g.user_neighbors(r3, 0), &[1]);
        assert_eq!(g.item_neighbors(r3, 1), &[0]);
        // u2 only has a test edge
        assert_eq!(g.user_degree(1), 0);
        assert_eq!(g.num_users(), 2);
        assert_eq!(g.num_edges(), 2);
    }

    #[test]
    fn unsplit_rejected() {
        let mut ds = InteractionDataset::new(1, RatingScale::integer_range(1, 5));
        ds.push("u", "i", 1.0, &[0.0]).unwrap();
        assert!(RatingGraph::from_dataset(&ds).is_err());
    }

    #[test]
    fn train_only_and_symmetric() {
        let mut ds = InteractionDataset::new(1, RatingScale::integer_range(1, 5));
        for u in 0..8 {
            for i in 0..6 {
                if (u + i) % 3 != 0 {
                    ds.push(
                        &format!("u{u}"),
                        &format!("i{i}"),
                        ((u * i) % 5 + 1) as f64,
                        &[u as f64],
                    )
                    .unwrap();
                }
            }
        }
        split_dataset(&mut ds, 4).unwrap();
        let g = RatingGraph::from_dataset(&ds).unwrap();
        let labels = ds.splits().unwrap();
        assert_eq!(
            g.num_edges(),
            labels.iter().filter(|&&s| s == Split::Train).count()
        );
        for (e, edge) in g.edges().iter().enumerate() {
            assert_eq!(labels[edge.interaction], Split::Train);
            assert!(g
                .user_neighbors(edge.rating_idx, edge.user)
                .contains(&edge.item));
            assert!(g
                .item_neighbors(edge.rating_idx, edge.item)
                .contains(&edge.user));
            assert_eq!(g.review(e), ds.review(edge.interaction));
        }
        let fwd: usize = (0..g.num_users()).map(|u| g.user_degree(u)).sum();
        let back: usize = (0..g.num_items()).map(|i| g.item_degree(i)).sum();
        assert_eq!(fwd, g.num_edges());
        assert_eq!(back, g.num_edges());
    }
}
