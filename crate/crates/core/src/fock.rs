//! Truncated Fock space `C ⊕ h ⊕ h⊗² ⊕ … ⊕ h⊗ᴹ` over the token space `h`.
//!
//! Block `n` has the product basis `|x₁⟩⊗…⊗|xₙ⟩` indexed big-endian in
//! base `N`; blocks are laid out in order starting with the one-dimensional
//! vacuum block. States reachable by the protocol are diagonal in this basis
//! and supported on a single block, so they are stored sparsely as
//! sequence → weight maps. Dense operators are only built for verification.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::distribution::NORMALIZATION_TOL;
use crate::error::{Error, Result};
use crate::vocab::{Text, TokenId};

/// Largest total dimension for which dense matrices are materialized.
pub const DENSE_DIM_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FockSpace {
    vocab_size: usize,
    truncation: usize,
}

impl FockSpace {
    pub fn new(vocab_size: usize, truncation: usize) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::EmptyVocabulary);
        }
        if truncation == 0 {
            return Err(Error::ZeroTruncation);
        }
        Ok(Self {
            vocab_size,
            truncation,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    /// `N^n`, saturating.
    pub fn block_dim(&self, n: usize) -> usize {
        (0..n).fold(1usize, |acc, _| acc.saturating_mul(self.vocab_size))
    }

    /// Dimension of blocks `0..n` (exclusive), i.e. the offset of block `n`.
    pub fn offset(&self, n: usize) -> usize {
        (0..n).fold(0usize, |acc, k| acc.saturating_add(self.block_dim(k)))
    }

    /// `1 + N + … + N^M`, saturating.
    pub fn dimension(&self) -> usize {
        self.offset(self.truncation + 1)
    }

    /// Dimension of blocks `0..=max_block`.
    pub fn dimension_through(&self, max_block: usize) -> usize {
        self.offset(max_block + 1)
    }

    /// Position of the product basis vector of `seq` in the global layout.
    pub fn basis_index(&self, seq: &[TokenId]) -> usize {
        self.offset(seq.len()) + self.index_in_block(seq)
    }

    pub fn index_in_block(&self, seq: &[TokenId]) -> usize {
        seq.iter().fold(0, |acc, t| acc * self.vocab_size + t.0)
    }

    /// Inverse of [`index_in_block`](Self::index_in_block) for block `n`.
    pub fn sequence_at(&self, n: usize, mut index: usize) -> Vec<TokenId> {
        let mut seq = vec![TokenId(0); n];
        for slot in seq.iter_mut().rev() {
            *slot = TokenId(index % self.vocab_size);
            index /= self.vocab_size;
        }
        seq
    }

    /// All length-`n` sequences in basis order.
    pub fn sequences(&self, n: usize) -> impl Iterator<Item = Vec<TokenId>> + '_ {
        (0..self.block_dim(n)).map(move |i| self.sequence_at(n, i))
    }

    pub fn guard_dense(&self, dim: usize) -> Result<()> {
        if dim > DENSE_DIM_LIMIT {
            return Err(Error::DimensionGuard {
                dim,
                limit: DENSE_DIM_LIMIT,
            });
        }
        Ok(())
    }
}

/// `diag(α, A⁽¹⁾, …, A⁽ᴹ⁾)`; a missing block is the zero operator.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagOperator {
    space: FockSpace,
    scalar: Complex64,
    blocks: Vec<Option<DMatrix<Complex64>>>,
}

impl BlockDiagOperator {
    pub fn zero(space: FockSpace) -> Self {
        Self {
            space,
            scalar: Complex64::new(0.0, 0.0),
            blocks: vec![None; space.truncation],
        }
    }

    pub fn identity(space: FockSpace) -> Result<Self> {
        space.guard_dense(space.dimension())?;
        let mut op = Self::zero(space);
        op.scalar = Complex64::new(1.0, 0.0);
        for n in 1..=space.truncation {
            let d = space.block_dim(n);
            op.blocks[n - 1] = Some(DMatrix::identity(d, d));
        }
        Ok(op)
    }

    pub fn space(&self) -> FockSpace {
        self.space
    }

    pub fn scalar(&self) -> Complex64 {
        self.scalar
    }

    pub fn set_scalar(&mut self, alpha: Complex64) {
        self.scalar = alpha;
    }

    pub fn block(&self, n: usize) -> Option<&DMatrix<Complex64>> {
        self.blocks.get(n.wrapping_sub(1)).and_then(Option::as_ref)
    }

    pub fn set_block(&mut self, n: usize, matrix: DMatrix<Complex64>) -> Result<()> {
        if n == 0 || n > self.space.truncation {
            return Err(Error::TruncationExceeded {
                length: n,
                truncation: self.space.truncation,
            });
        }
        let d = self.space.block_dim(n);
        if matrix.shape() != (d, d) {
            return Err(Error::ShapeMismatch {
                what: format!("block {n}"),
                expected: format!("{d}x{d}"),
                found: format!("{}x{}", matrix.nrows(), matrix.ncols()),
            });
        }
        self.blocks[n - 1] = Some(matrix);
        Ok(())
    }

    /// `α + Σₙ Tr A⁽ⁿ⁾`.
    pub fn trace(&self) -> Complex64 {
        self.scalar + self.blocks.iter().flatten().map(|b| b.trace()).sum::<Complex64>()
    }

    /// Blockwise sum.
    pub fn add(&self, other: &Self) -> Self {
        let blocks = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => Some(a + b),
                (Some(a), None) | (None, Some(a)) => Some(a.clone()),
                (None, None) => None,
            })
            .collect();
        Self {
            space: self.space,
            scalar: self.scalar + other.scalar,
            blocks,
        }
    }

    /// Full dense matrix on `F⁽ᴹ⁾(h)`.
    pub fn to_matrix(&self) -> Result<DMatrix<Complex64>> {
        let dim = self.space.dimension();
        self.space.guard_dense(dim)?;
        let mut m = DMatrix::zeros(dim, dim);
        m[(0, 0)] = self.scalar;
        for (k, block) in self.blocks.iter().enumerate() {
            if let Some(b) = block {
                let off = self.space.offset(k + 1);
                m.view_mut((off, off), b.shape()).copy_from(b);
            }
        }
        Ok(m)
    }
}

/// Probability mixture of product projectors inside one Fock block.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEnsembleState {
    block_index: usize,
    weights: BTreeMap<Vec<TokenId>, f64>,
}

impl SequenceEnsembleState {
    pub fn new(block_index: usize, weights: BTreeMap<Vec<TokenId>, f64>) -> Result<Self> {
        let state = Self {
            block_index,
            weights,
        };
        state.validate()?;
        Ok(state)
    }

    /// Weight 1 on a single sequence.
    pub fn pure(seq: Vec<TokenId>) -> Result<Self> {
        Self::new(seq.len(), BTreeMap::from([(seq, 1.0)]))
    }

    /// Rescales nonnegative weights to unit total before validating.
    pub fn normalized(block_index: usize, mut weights: BTreeMap<Vec<TokenId>, f64>) -> Result<Self> {
        let total: f64 = weights.values().sum();
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::InvalidState("zero total weight".into()));
        }
        weights.values_mut().for_each(|w| *w /= total);
        Self::new(block_index, weights)
    }

    /// `Σ cᵢ ρᵢ` for convex coefficients over states in the same block.
    pub fn mixture(components: &[(f64, &SequenceEnsembleState)]) -> Result<Self> {
        let Some((_, first)) = components.first() else {
            return Err(Error::InvalidState("empty mixture".into()));
        };
        let block_index = first.block_index;
        let mut weights = BTreeMap::new();
        for (c, s) in components {
            if s.block_index != block_index {
                return Err(Error::InvalidState(format!(
                    "mixture of blocks {} and {}",
                    block_index, s.block_index
                )));
            }
            for (seq, w) in &s.weights {
                *weights.entry(seq.clone()).or_insert(0.0) += c * w;
            }
        }
        Self::new(block_index, weights)
    }

    fn validate(&self) -> Result<()> {
        if self.block_index == 0 {
            return Err(Error::InvalidState("block index must be at least 1".into()));
        }
        if self.weights.is_empty() {
            return Err(Error::InvalidState("no sequences".into()));
        }
        for (seq, &w) in &self.weights {
            if seq.len() != self.block_index {
                return Err(Error::InvalidState(format!(
                    "sequence of length {} in block {}",
                    seq.len(),
                    self.block_index
                )));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidState(format!("weight {w} is not a probability")));
            }
        }
        let total = self.total_weight();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidState(format!("weights sum to {total}")));
        }
        Ok(())
    }

    pub fn block_index(&self) -> usize {
        self.block_index
    }

    pub fn weights(&self) -> &BTreeMap<Vec<TokenId>, f64> {
        &self.weights
    }

    pub fn weight(&self, seq: &[TokenId]) -> f64 {
        self.weights.get(seq).copied().unwrap_or(0.0)
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.values().sum()
    }

    /// `Tr[O ρ]` for an observable diagonal in the product basis.
    pub fn expectation(&self, observable: impl Fn(&[TokenId]) -> f64) -> f64 {
        self.weights.iter().map(|(s, w)| w * observable(s)).sum()
    }
}

/// `ρ_T`: the product projector of the text placed in block `n`.
pub fn input_state(text: &Text, space: &FockSpace) -> Result<SequenceEnsembleState> {
    if text.len() > space.truncation {
        return Err(Error::TruncationExceeded {
            length: text.len(),
            truncation: space.truncation,
        });
    }
    if let Some(t) = text.tokens().iter().find(|t| t.0 >= space.vocab_size) {
        return Err(Error::TokenOutOfRange(t.0));
    }
    SequenceEnsembleState::pure(text.tokens().to_vec())
}

/// Dense block-diagonal form of a sparse state.
pub fn to_dense(state: &SequenceEnsembleState, space: &FockSpace) -> Result<BlockDiagOperator> {
    space.guard_dense(space.dimension())?;
    let n = state.block_index;
    if n > space.truncation {
        return Err(Error::TruncationExceeded {
            length: n,
            truncation: space.truncation,
        });
    }
    let d = space.block_dim(n);
    let mut block = DMatrix::zeros(d, d);
    for (seq, &w) in &state.weights {
        if let Some(t) = seq.iter().find(|t| t.0 >= space.vocab_size) {
            return Err(Error::TokenOutOfRange(t.0));
        }
        let i = space.index_in_block(seq);
        block[(i, i)] = Complex64::new(w, 0.0);
    }
    let mut op = BlockDiagOperator::zero(*space);
    op.set_block(n, block)?;
    Ok(op)
}

pub fn trace(op: &BlockDiagOperator) -> Complex64 {
    op.trace()
}
