use std::collections::BTreeMap;

use crate::vocab::TokenId;

/// Normalization tolerance shared by every probability table.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Finite probability table, ordered by outcome.
///
/// Outcomes absent from the table have probability zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution<K: Ord> {
    weights: BTreeMap<K, f64>,
}

pub type JointDistribution = Distribution<Vec<TokenId>>;

impl<K: Ord> Default for Distribution<K> {
    fn default() -> Self {
        Self {
            weights: BTreeMap::new(),
        }
    }
}

impl<K: Ord + Clone> Distribution<K> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_map(weights: BTreeMap<K, f64>) -> Self {
        Self { weights }
    }

    /// Adds `p` to the entry for `outcome`, merging duplicates.
    pub fn accumulate(&mut self, outcome: K, p: f64) {
        *self.weights.entry(outcome).or_insert(0.0) += p;
    }

    pub fn get(&self, outcome: &K) -> f64 {
        self.weights.get(outcome).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, f64)> {
        self.weights.iter().map(|(k, &p)| (k, p))
    }

    pub fn outcomes(&self) -> impl Iterator<Item = &K> {
        self.weights.keys()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.values().sum()
    }

    pub fn is_normalized(&self) -> bool {
        self.weights.values().all(|&p| p >= 0.0) && (self.total() - 1.0).abs() <= NORMALIZATION_TOL
    }

    pub fn as_map(&self) -> &BTreeMap<K, f64> {
        &self.weights
    }

    pub fn into_map(self) -> BTreeMap<K, f64> {
        self.weights
    }
}

impl<K: Ord + Clone> FromIterator<(K, f64)> for Distribution<K> {
    fn from_iter<I: IntoIterator<Item = (K, f64)>>(iter: I) -> Self {
        let mut d = Self::new();
        for (k, p) in iter {
            d.accumulate(k, p);
        }
        d
    }
}

/// Total variation distance `½ Σ |p − q|` over the union of supports.
pub fn total_variation<K: Ord + Clone>(p: &Distribution<K>, q: &Distribution<K>) -> f64 {
    let mut keys: Vec<&K> = p.outcomes().chain(q.outcomes()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys.into_iter().map(|k| (p.get(k) - q.get(k)).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulate_merges_duplicates() {
        let d: Distribution<u8> = [(1, 0.25), (2, 0.5), (1, 0.25)].into_iter().collect();
        assert_eq!(d.len(), 2);
        assert_eq!(d.get(&1), 0.5);
        assert_eq!(d.get(&9), 0.0);
        assert!(d.is_normalized());
    }

    #[test]
    fn total_variation_of_disjoint_tables_is_one() {
        let a: Distribution<&str> = [("A", 1.0)].into_iter().collect();
        let b: Distribution<&str> = [("B", 1.0)].into_iter().collect();
        assert_eq!(total_variation(&a, &b), 1.0);
        assert_eq!(total_variation(&a, &a), 0.0);
    }
}
