//! Interaction records, vocabularies, splits and the training rating graph.

mod buckets;
mod graph;
mod io;
mod split;
mod whiten;

pub use buckets::{bucket_users_by_degree, DegreeBuckets};
pub use graph::{Edge, RatingGraph};
pub use io::{
    load_interactions, read_review_vectors, read_split_manifest, write_interactions,
    write_review_vectors, write_split_manifest, InteractionFormat, REVIEW_VECTOR_MAGIC,
};
pub use split::{split_dataset, Split};
pub use whiten::{whiten_vectors, Whitening};

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

/// The ordered set of admissible rating values.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingScale {
    values: Vec<f64>,
}

impl RatingScale {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Dataset("rating set is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dataset("rating set has non-finite values".into()));
        }
        values.sort_by(f64::total_cmp);
        values.dedup();
        Ok(Self { values })
    }

    /// Integers `lo..=hi`.
    pub fn integer_range(lo: i64, hi: i64) -> Self {
        Self {
            values: (lo..=hi).map(|v| v as f64).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, rating: f64) -> Option<usize> {
        self.values.iter().position(|&v| (v - rating).abs() < 1e-9)
    }

    pub fn value(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Insertion-ordered string interner.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocab {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, idx: usize) -> &str {
        &self.ids[idx]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }
}

/// One observed (user, item, rating) with its review vector stored in the dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
    pub rating_idx: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionDataset {
    pub users: Vocab,
    pub items: Vocab,
    pub ratings: RatingScale,
    pub interactions: Vec<Interaction>,
    /// Row-major `n x d` review vectors, row `i` belongs to interaction `i`.
    reviews: Vec<f64>,
    d: usize,
    splits: Option<Vec<Split>>,
    pairs: HashSet<(usize, usize)>,
}

impl InteractionDataset {
    pub fn new(d: usize, ratings: RatingScale) -> Self {
        Self {
            users: Vocab::new(),
            items: Vocab::new(),
            ratings,
            interactions: Vec::new(),
            reviews: Vec::new(),
            d,
            splits: None,
            pairs: HashSet::new(),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn review(&self, idx: usize) -> &[f64] {
        &self.reviews[idx * self.d..(idx + 1) * self.d]
    }

    pub fn reviews(&self) -> &[f64] {
        &self.reviews
    }

    /// Append a record. Rejects unknown ratings, wrong vector length and duplicate pairs.
    pub fn push(
        &mut self,
        user_id: &str,
        item_id: &str,
        rating: f64,
        review: &[f64],
    ) -> Result<()> {
        let rating_idx = self.ratings.index_of(rating).ok_or_else(|| {
            Error::Dataset(format!(
                "rating {rating} of ({user_id}, {item_id}) is not in {:?}",
                self.ratings.values()
            ))
        })?;
        if review.len() != self.d {
            return Err(Error::Dataset(format!(
                "review vector of ({user_id}, {item_id}) has length {}, expected {}",
                review.len(),
                self.d
            )));
        }
        if let (Some(u), Some(i)) = (self.users.get(user_id), self.items.get(item_id)) {
            if self.pairs.contains(&(u, i)) {
                return Err(Error::Dataset(format!(
                    "duplicate pair ({user_id}, {item_id})"
                )));
            }
        }
        let user = self.users.intern(user_id);
        let item = self.items.intern(item_id);
        self.pairs.insert((user, item));
        self.interactions.push(Interaction {
            user,
            item,
            rating,
            rating_idx,
        });
        self.reviews.extend_from_slice(review);
        self.splits = None;
        Ok(())
    }

    pub fn splits(&self) -> Option<&[Split]> {
        self.splits.as_deref()
    }

    pub fn set_splits(&mut self, labels: Vec<Split>) -> Result<()> {
        if labels.len() != self.len() {
            return Err(Error::Dataset(format!(
                "{} split labels for {} interactions",
                labels.len(),
                self.len()
            )));
        }
        self.splits = Some(labels);
        Ok(())
    }

    /// Indices of interactions labelled `split`. Empty if unsplit.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        match &self.splits {
            Some(labels) => labels
                .iter()
                .enumerate()
                .filter(|(_, &s)| s == split)
                .map(|(i, _)| i)
                .collect(),
            None => Vec::new(),
        }
    }

    /// Replace review vectors (e.g. after whitening), possibly changing `d`.
    pub fn replace_reviews(&mut self, d: usize, reviews: Vec<f64>) -> Result<()> {
        if reviews.len() != d * self.len() {
            return Err(Error::Dataset(format!(
                "{} review values for {} interactions of dimension {d}",
                reviews.len(),
                self.len()
            )));
        }
        self.d = d;
        self.reviews = reviews;
        Ok(())
    }

    /// Number of training interactions per user.
    pub fn train_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_users()];
        for i in self.split_indices(Split::Train) {
            deg[self.interactions[i].user] += 1;
        }
        deg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_validates() {
        let mut ds = InteractionDataset::new(2, RatingScale::integer_range(1, 5));
        ds.push("u1", "i1", 5.0, &[0.1, 0.2]).unwrap();
        assert!(ds.push("u1", "i2", 7.0, &[0.1, 0.2]).is_err());
        assert!(ds.push("u1", "i2", 3.0, &[0.1]).is_err());
        assert!(ds.push("u1", "i1", 3.0, &[0.1, 0.2]).is_err());
        ds.push("u2", "i1", 1.0, &[0.3, 0.4]).unwrap();
        assert_eq!(ds.num_users(), 2);
        assert_eq!(ds.num_items(), 1);
        assert_eq!(ds.review(1), &[0.3, 0.4]);
    }
}
