//! JSON model configuration.
//!
//! ```json
//! {
//!   "embedding_dim": 2,
//!   "tokens": [{"symbol": "x0", "embedding": [1, 0]}, {"symbol": "x1", "embedding": [0, 1]}],
//!   "scaling": "none",
//!   "phi_vacuum_token": "x0",
//!   "blocks": [{"W_Q": [[1, 0], [0, 1]], "W_K": [[0, 1], [1, 0]], "W_V": [[1, 0], [0, 1]],
//!               "ffn": {"x0": "x0", "x1": "x1"}}]
//! }
//! ```
//!
//! Matrices are row-major. `scaling` defaults to `inv_sqrt_d` and
//! `phi_vacuum_token` to the first token.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transformer::{AttentionBlock, Scaling, TransformerStack};
use crate::vocab::{Embedding, TokenId, TokenMap, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub tokens: Vec<TokenSpec>,
    #[serde(default)]
    pub scaling: Scaling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_vacuum_token: Option<String>,
    pub blocks: Vec<BlockSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenSpec {
    pub symbol: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    #[serde(rename = "W_Q")]
    pub w_q: Vec<Vec<f64>>,
    #[serde(rename = "W_K")]
    pub w_k: Vec<Vec<f64>>,
    #[serde(rename = "W_V")]
    pub w_v: Vec<Vec<f64>>,
    pub ffn: BTreeMap<String, String>,
}

/// Fully validated model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub vocabulary: Vocabulary,
    pub embedding: Embedding,
    pub stack: TransformerStack,
    pub vacuum_token: TokenId,
}

pub fn load_model_config(document: &str) -> Result<Model> {
    let config: ModelConfig = serde_json::from_str(document)?;
    Model::from_config(&config)
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<Model> {
    load_model_config(&std::fs::read_to_string(path)?)
}

impl Model {
    pub fn from_config(config: &ModelConfig) -> Result<Self> {
        let vocabulary = Vocabulary::new(config.tokens.iter().map(|t| t.symbol.clone()))?;
        let embedding = Embedding::new(
            &vocabulary,
            config.embedding_dim,
            config
                .tokens
                .iter()
                .map(|t| DVector::from_vec(t.embedding.clone()))
                .collect(),
        )?;
        let d = config.embedding_dim;
        let blocks = config
            .blocks
            .iter()
            .enumerate()
            .map(|(l, spec)| {
                let w_q = matrix(&format!("block {l} W_Q"), &spec.w_q, None, d)?;
                let w_k = matrix(&format!("block {l} W_K"), &spec.w_k, None, d)?;
                let w_v = matrix(&format!("block {l} W_V"), &spec.w_v, Some(d), d)?;
                let ffn = ffn_table(&spec.ffn, &vocabulary)?;
                AttentionBlock::new(w_q, w_k, w_v, &ffn, &embedding, &vocabulary)
            })
            .collect::<Result<Vec<_>>>()?;
        let stack = TransformerStack::new(blocks, config.scaling)?;
        let vacuum_token = match &config.phi_vacuum_token {
            Some(s) => vocabulary.lookup(s)?,
            None => TokenId(0),
        };
        Ok(Self {
            vocabulary,
            embedding,
            stack,
            vacuum_token,
        })
    }

    pub fn to_config(&self) -> ModelConfig {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            m.row_iter().map(|r| r.iter().copied().collect()).collect()
        };
        let vocab = &self.vocabulary;
        ModelConfig {
            embedding_dim: self.embedding.dim(),
            tokens: vocab
                .tokens()
                .map(|t| TokenSpec {
                    symbol: vocab.symbol(t).to_string(),
                    embedding: self.embedding.vector(t).iter().copied().collect(),
                })
                .collect(),
            scaling: self.stack.scaling(),
            phi_vacuum_token: Some(vocab.symbol(self.vacuum_token).to_string()),
            blocks: self
                .stack
                .blocks()
                .iter()
                .map(|b| {
                    // FFN is recovered relative to the W_V token map
                    let closure = crate::vocab::validate_value_closure(b.w_v(), &self.embedding, vocab)
                        .expect("validated at construction");
                    let mut ffn = BTreeMap::new();
                    for t in vocab.tokens() {
                        ffn.insert(
                            vocab.symbol(closure.apply(t)).to_string(),
                            vocab.symbol(b.value_map().apply(t)).to_string(),
                        );
                    }
                    for t in vocab.tokens() {
                        ffn.entry(vocab.symbol(t).to_string())
                            .or_insert_with(|| vocab.symbol(t).to_string());
                    }
                    BlockSpec {
                        w_q: rows(b.w_q()),
                        w_k: rows(b.w_k()),
                        w_v: rows(b.w_v()),
                        ffn,
                    }
                })
                .collect(),
        }
    }
}

fn matrix(what: &str, rows: &[Vec<f64>], nrows: Option<usize>, ncols: usize) -> Result<DMatrix<f64>> {
    let shape_err = |found: String| Error::ShapeMismatch {
        what: what.to_string(),
        expected: match nrows {
            Some(r) => format!("{r}x{ncols}"),
            None => format!("d'x{ncols} with d' >= 1"),
        },
        found,
    };
    if rows.is_empty() || nrows.is_some_and(|r| r != rows.len()) {
        return Err(shape_err(format!("{} rows", rows.len())));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != ncols) {
        return Err(shape_err(format!("a row of length {}", r.len())));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flatten().copied(),
    ))
}

fn ffn_table(table: &BTreeMap<String, String>, vocab: &Vocabulary) -> Result<TokenMap> {
    for (from, to) in table {
        vocab.lookup(from)?;
        vocab.lookup(to)?;
    }
    let images = vocab
        .tokens()
        .map(|t| {
            let sym = vocab.symbol(t);
            table
                .get(sym)
                .ok_or_else(|| Error::IncompleteFfn(sym.to_string()))
                .and_then(|to| vocab.lookup(to))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TokenMap::from_images(images))
}
