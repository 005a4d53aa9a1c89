//! Classical decoder-only transformer with token-valued attention outputs.
//!
//! One block scores every position of the context against the last token,
//! turns the scores into attention probabilities, and emits the token
//! `FFN(W_V x_i)` of position `i` with that probability. Stacking `L` blocks
//! and extending the context after every step gives the joint distribution
//! over generated texts.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::distribution::{Distribution, JointDistribution};
use crate::error::{Error, Result};
use crate::rng;
use crate::vocab::{validate_value_closure, Embedding, TokenId, TokenMap, Vocabulary};

/// Prefactor applied to the query/key inner products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// `1/√d` with `d` the embedding dimension.
    #[default]
    InvSqrtD,
    None,
}

impl Scaling {
    pub fn factor(self, dim: usize) -> f64 {
        match self {
            Scaling::InvSqrtD => 1.0 / (dim as f64).sqrt(),
            Scaling::None => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scaling::InvSqrtD => "inv_sqrt_d",
            Scaling::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    w_q: DMatrix<f64>,
    w_k: DMatrix<f64>,
    w_v: DMatrix<f64>,
    value_map: TokenMap,
}

impl AttentionBlock {
    /// Validates shapes (`W_Q`, `W_K`: d′×d, `W_V`: d×d), finiteness, and value
    /// closure; `ffn` is the token lookup applied after `W_V`.
    pub fn new(
        w_q: DMatrix<f64>,
        w_k: DMatrix<f64>,
        w_v: DMatrix<f64>,
        ffn: &TokenMap,
        emb: &Embedding,
        vocab: &Vocabulary,
    ) -> Result<Self> {
        let d = emb.dim();
        for (name, m) in [("W_Q", &w_q), ("W_K", &w_k)] {
            if m.ncols() != d || m.nrows() == 0 {
                return Err(Error::ShapeMismatch {
                    what: name.into(),
                    expected: format!("d'x{d} with d' >= 1"),
                    found: format!("{}x{}", m.nrows(), m.ncols()),
                });
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(name.into()));
            }
        }
        if w_q.nrows() != w_k.nrows() {
            return Err(Error::ShapeMismatch {
                what: "W_K".into(),
                expected: format!("{}x{d} (same d' as W_Q)", w_q.nrows()),
                found: format!("{}x{}", w_k.nrows(), w_k.ncols()),
            });
        }
        if ffn.images().len() != vocab.len() {
            return Err(Error::ShapeMismatch {
                what: "FFN table".into(),
                expected: format!("{} entries", vocab.len()),
                found: format!("{} entries", ffn.images().len()),
            });
        }
        let value_map = validate_value_closure(&w_v, emb, vocab)?.then(ffn);
        Ok(Self {
            w_q,
            w_k,
            w_v,
            value_map,
        })
    }

    pub fn w_q(&self) -> &DMatrix<f64> {
        &self.w_q
    }

    pub fn w_k(&self) -> &DMatrix<f64> {
        &self.w_k
    }

    pub fn w_v(&self) -> &DMatrix<f64> {
        &self.w_v
    }

    pub fn d_prime(&self) -> usize {
        self.w_q.nrows()
    }

    /// `x ↦ FFN(W_V x)`.
    pub fn value_map(&self) -> &TokenMap {
        &self.value_map
    }
}

/// `L ≥ 1` blocks sharing one embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerStack {
    blocks: Vec<AttentionBlock>,
    scaling: Scaling,
}

impl TransformerStack {
    pub fn new(blocks: Vec<AttentionBlock>, scaling: Scaling) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Err(Error::EmptyStack);
        };
        let d = first.w_v.nrows();
        if let Some(b) = blocks.iter().find(|b| b.w_v.nrows() != d) {
            return Err(Error::ShapeMismatch {
                what: "stack embedding dimension".into(),
                expected: d.to_string(),
                found: b.w_v.nrows().to_string(),
            });
        }
        Ok(Self { blocks, scaling })
    }

    pub fn blocks(&self) -> &[AttentionBlock] {
        &self.blocks
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    pub fn with_scaling(mut self, scaling: Scaling) -> Self {
        self.scaling = scaling;
        self
    }

    /// The first `depth` blocks.
    pub fn truncated(&self, depth: usize) -> Result<Self> {
        Self::new(self.blocks[..depth.min(self.blocks.len())].to_vec(), self.scaling)
    }
}

/// Similarity of each context position (key) with the last token (query).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(pub Vec<f64>);

pub fn similarity_scores(
    block: &AttentionBlock,
    context: &[TokenId],
    emb: &Embedding,
    scaling: Scaling,
) -> Result<ScoreVector> {
    let query_token = *context.last().ok_or(Error::EmptyText)?;
    if block.w_q.ncols() != emb.dim() {
        return Err(Error::ShapeMismatch {
            what: "attention block vs embedding".into(),
            expected: format!("{} columns", emb.dim()),
            found: format!("{} columns", block.w_q.ncols()),
        });
    }
    let c = scaling.factor(emb.dim());
    let query = &block.w_q * emb.vector(query_token);
    Ok(ScoreVector(
        context
            .iter()
            .map(|&t| c * query.dot(&(&block.w_k * emb.vector(t))))
            .collect(),
    ))
}

/// Attention probabilities over key positions, computed with max subtraction.
pub fn softmax(scores: &ScoreVector) -> Vec<f64> {
    let max = scores.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.0.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Output-token probabilities for one block; positions sharing an output
/// token are aggregated.
pub fn next_token_distribution(
    block: &AttentionBlock,
    context: &[TokenId],
    emb: &Embedding,
    scaling: Scaling,
) -> Result<Distribution<TokenId>> {
    let weights = softmax(&similarity_scores(block, context, emb, scaling)?);
    Ok(context
        .iter()
        .zip(weights)
        .map(|(&x, p)| (block.value_map.apply(x), p))
        .collect())
}

/// Exact joint distribution of the `L` generated tokens by enumerating the
/// full outcome tree.
pub fn joint_distribution(
    stack: &TransformerStack,
    text: &[TokenId],
    emb: &Embedding,
) -> Result<JointDistribution> {
    if text.is_empty() {
        return Err(Error::EmptyText);
    }
    let mut joint = JointDistribution::new();
    let mut context = text.to_vec();
    expand(stack, emb, &mut context, text.len(), 1.0, &mut joint)?;
    Ok(joint)
}

fn expand(
    stack: &TransformerStack,
    emb: &Embedding,
    context: &mut Vec<TokenId>,
    prompt_len: usize,
    prob: f64,
    out: &mut JointDistribution,
) -> Result<()> {
    let step = context.len() - prompt_len;
    if step == stack.depth() {
        out.accumulate(context[prompt_len..].to_vec(), prob);
        return Ok(());
    }
    let next = next_token_distribution(&stack.blocks[step], context, emb, stack.scaling)?;
    for (&y, p) in next.iter() {
        if p <= 0.0 {
            continue;
        }
        context.push(y);
        expand(stack, emb, context, prompt_len, prob * p, out)?;
        context.pop();
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledText {
    pub tokens: Vec<TokenId>,
    pub probability: f64,
}

/// Draws one generated text from a ChaCha8 stream seeded by `seed`.
pub fn sample_text(
    stack: &TransformerStack,
    text: &[TokenId],
    emb: &Embedding,
    seed: u64,
) -> Result<SampledText> {
    if text.is_empty() {
        return Err(Error::EmptyText);
    }
    let mut rng = rng::seeded(seed);
    let mut context = text.to_vec();
    let mut probability = 1.0;
    for block in &stack.blocks {
        let next = next_token_distribution(block, &context, emb, stack.scaling)?;
        let y = rng::draw(&mut rng, next.iter().map(|(&t, p)| (t, p)))
            .expect("attention weights are never all zero");
        probability *= next.get(&y);
        context.push(y);
    }
    Ok(SampledText {
        tokens: context[text.len()..].to_vec(),
        probability,
    })
}
