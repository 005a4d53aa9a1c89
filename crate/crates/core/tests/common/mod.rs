#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use fock_transformer::config::{BlockSpec, ModelConfig, TokenSpec};
use fock_transformer::{Model, Scaling, Text, TokenId};
use itertools::Itertools;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub model: Model,
    pub text: Text,
    pub label: String,
}

/// Ranges for a random model.
#[derive(Debug, Clone)]
pub struct Shape {
    pub vocab: Vec<usize>,
    pub dim: Vec<usize>,
    pub d_prime: Vec<usize>,
    pub depth: Vec<usize>,
    pub text_len: Vec<usize>,
}

impl Default for Shape {
    fn default() -> Self {
        Self {
            vocab: vec![2, 3, 4],
            dim: vec![2, 3, 4],
            d_prime: vec![1, 2, 3],
            depth: vec![1, 2, 3],
            text_len: vec![1, 2, 3, 4],
        }
    }
}

/// Signed standard-basis vectors `e₀, …, e_{d−1}, −e₀, …`, scaled.
fn signed_basis(n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| {
            let mut v = vec![0.0; d];
            v[k % d] = if k < d { scale } else { -scale };
            v
        })
        .collect()
}

/// Random signed permutation matrix mapping the token vectors onto themselves.
fn closed_value_matrix(rng: &mut ChaCha8Rng, tokens: &[Vec<f64>], d: usize) -> Vec<Vec<f64>> {
    let set: BTreeSet<Vec<i64>> = tokens
        .iter()
        .map(|v| v.iter().map(|&x| (x > 0.0) as i64 - (x < 0.0) as i64).collect())
        .collect();
    let mut candidates = Vec::new();
    for perm in (0..d).permutations(d) {
        for signs in 0..(1u32 << d) {
            // column j of W is s_j e_{perm[j]}
            let mut w = vec![vec![0.0; d]; d];
            for j in 0..d {
                w[perm[j]][j] = if signs >> j & 1 == 1 { -1.0 } else { 1.0 };
            }
            let closed = set.iter().all(|v| {
                let image: Vec<i64> = (0..d)
                    .map(|r| (0..d).map(|c| w[r][c] as i64 * v[c]).sum())
                    .collect();
                set.contains(&image)
            });
            if closed {
                candidates.push(w);
            }
        }
    }
    candidates.choose(rng).expect("identity is always closed").clone()
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

pub fn random_instance(rng: &mut ChaCha8Rng, shape: &Shape, scaling: Scaling) -> Instance {
    let n = *shape.vocab.choose(rng).unwrap();
    let d = *shape
        .dim
        .iter()
        .copied()
        .filter(|&d| 2 * d >= n)
        .collect::<Vec<_>>()
        .choose(rng)
        .unwrap();
    let d_prime = *shape.d_prime.choose(rng).unwrap();
    let depth = *shape.depth.choose(rng).unwrap();
    let len = *shape.text_len.choose(rng).unwrap();

    let scale = rng.random_range(0.5..2.0);
    let vectors = signed_basis(n, d, scale);
    let symbols: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
    let blocks = (0..depth)
        .map(|_| {
            let ffn: BTreeMap<String, String> = symbols
                .iter()
                .map(|s| (s.clone(), symbols.choose(rng).unwrap().clone()))
                .collect();
            BlockSpec {
                w_q: gaussian_matrix(rng, d_prime, d),
                w_k: gaussian_matrix(rng, d_prime, d),
                w_v: closed_value_matrix(rng, &vectors, d),
                ffn,
            }
        })
        .collect();
    let config = ModelConfig {
        embedding_dim: d,
        tokens: symbols
            .iter()
            .zip(&vectors)
            .map(|(s, v)| TokenSpec {
                symbol: s.clone(),
                embedding: v.clone(),
            })
            .collect(),
        scaling,
        phi_vacuum_token: Some(symbols.choose(rng).unwrap().clone()),
        blocks,
    };
    let model = Model::from_config(&config).expect("generated config is valid");
    let tokens = (0..len).map(|_| TokenId(rng.random_range(0..n))).collect();
    let text = Text::new(tokens, &model.vocabulary).unwrap();
    Instance {
        label: format!(
            "N={n} d={d} d'={d_prime} L={depth} n={len} scaling={}",
            scaling.as_str()
        ),
        model,
        text,
    }
}

/// `count` instances alternating between the two scaling conventions.
pub fn random_instances(seed: u64, count: usize, shape: &Shape) -> Vec<Instance> {
    let mut rng = rng(seed);
    (0..count)
        .map(|i| {
            let scaling = if i % 2 == 0 { Scaling::InvSqrtD } else { Scaling::None };
            random_instance(&mut rng, shape, scaling)
        })
        .collect()
}
