//! The quantum operation generated by one attention block.
//!
//! On product projectors the map appends one token:
//!
//! ```text
//! Φ(1)                    = |x₀⟩⟨x₀|
//! Φ(|x₁…xₙ⟩⟨x₁…xₙ|)       = Σᵢ softmax(S⁽ⁿ⁾)ᵢ |x₁…xₙ yᵢ⟩⟨x₁…xₙ yᵢ|,   yᵢ = FFN(W_V xᵢ)
//! ```
//!
//! and it is extended linearly over the commutative span of such projectors.
//! The extension to arbitrary operators used here is measure-and-prepare:
//! measure the product basis, then prepare the appended sequence. Its Kraus
//! operators are `√p(s, y) |s·y⟩⟨s|` plus `|x₀⟩⟨vac|`, so complete positivity
//! holds by construction and is checked numerically through the Choi matrix.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::{FockSpace, SequenceEnsembleState};
use crate::transformer::{next_token_distribution, AttentionBlock, Scaling};
use crate::vocab::{Embedding, TokenId};

/// Tolerance for the dense CPTP witnesses.
pub const CPTP_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct QuantumOperation {
    block: AttentionBlock,
    embedding: Embedding,
    vacuum_token: TokenId,
    scaling: Scaling,
    space: FockSpace,
}

impl QuantumOperation {
    pub fn new(
        block: AttentionBlock,
        embedding: Embedding,
        vacuum_token: TokenId,
        scaling: Scaling,
        space: FockSpace,
    ) -> Result<Self> {
        if embedding.len() != space.vocab_size() {
            return Err(Error::ShapeMismatch {
                what: "channel vocabulary".into(),
                expected: format!("{} tokens", space.vocab_size()),
                found: format!("{} embeddings", embedding.len()),
            });
        }
        if vacuum_token.0 >= space.vocab_size() {
            return Err(Error::TokenOutOfRange(vacuum_token.0));
        }
        Ok(Self {
            block,
            embedding,
            vacuum_token,
            scaling,
            space,
        })
    }

    pub fn space(&self) -> FockSpace {
        self.space
    }

    pub fn vacuum_token(&self) -> TokenId {
        self.vacuum_token
    }

    pub fn block(&self) -> &AttentionBlock {
        &self.block
    }

    fn check_room(&self, n: usize) -> Result<()> {
        if n + 1 > self.space.truncation() {
            return Err(Error::TruncationExceeded {
                length: n + 1,
                truncation: self.space.truncation(),
            });
        }
        Ok(())
    }

    /// Appended-token probabilities `p(seq, y)`, aggregated over positions.
    fn append_weights(&self, seq: &[TokenId]) -> Result<Vec<(TokenId, f64)>> {
        let next = next_token_distribution(&self.block, seq, &self.embedding, self.scaling)?;
        Ok(next.iter().map(|(&y, p)| (y, p)).collect())
    }

    /// Image of one product projector: an ensemble in block `n + 1`.
    pub fn apply_phi(&self, seq: &[TokenId]) -> Result<SequenceEnsembleState> {
        if seq.is_empty() {
            return Err(Error::EmptyText);
        }
        self.check_room(seq.len())?;
        let weights = self
            .append_weights(seq)?
            .into_iter()
            .map(|(y, p)| {
                let mut out = seq.to_vec();
                out.push(y);
                (out, p)
            })
            .collect();
        SequenceEnsembleState::new(seq.len() + 1, weights)
    }

    /// Linear extension over the ensemble, merging equal output sequences.
    pub fn apply_channel(&self, state: &SequenceEnsembleState) -> Result<SequenceEnsembleState> {
        self.check_room(state.block_index())?;
        let mut weights: BTreeMap<Vec<TokenId>, f64> = BTreeMap::new();
        for (seq, &w) in state.weights() {
            for (y, p) in self.append_weights(seq)? {
                let mut out = seq.clone();
                out.push(y);
                *weights.entry(out).or_insert(0.0) += w * p;
            }
        }
        SequenceEnsembleState::new(state.block_index() + 1, weights)
    }

    /// `Φ(1)`: the vacuum is sent to the designated token in block 1.
    pub fn vacuum_action(&self) -> SequenceEnsembleState {
        SequenceEnsembleState::pure(vec![self.vacuum_token]).expect("single token is a valid state")
    }

    /// Measure-and-prepare Kraus family on blocks `0..=max_input_block`,
    /// landing in blocks `0..=max_input_block + 1`. Guarded on the Choi
    /// dimension `input_dim · output_dim`.
    pub fn kraus_operators(&self, max_input_block: usize) -> Result<KrausSet> {
        self.check_room(max_input_block)?;
        let space = self.space;
        let input_dim = space.dimension_through(max_input_block);
        let output_dim = space.dimension_through(max_input_block + 1);
        space.guard_dense(input_dim * output_dim)?;

        let basis = |out: usize, inp: usize, amp: f64| {
            let mut k = DMatrix::zeros(output_dim, input_dim);
            k[(out, inp)] = Complex64::new(amp, 0.0);
            k
        };
        let mut operators = vec![basis(space.basis_index(&[self.vacuum_token]), 0, 1.0)];
        for n in 1..=max_input_block {
            for seq in space.sequences(n) {
                let inp = space.basis_index(&seq);
                let mut out_seq = seq.clone();
                out_seq.push(TokenId(0));
                for (y, p) in self.append_weights(&seq)? {
                    if p <= 0.0 {
                        continue;
                    }
                    *out_seq.last_mut().unwrap() = y;
                    operators.push(basis(space.basis_index(&out_seq), inp, p.sqrt()));
                }
            }
        }
        KrausSet::new(operators)
    }
}

/// Kraus operators `K: C^input_dim → C^output_dim`.
#[derive(Debug, Clone)]
pub struct KrausSet {
    input_dim: usize,
    output_dim: usize,
    operators: Vec<DMatrix<Complex64>>,
}

impl KrausSet {
    pub fn new(operators: Vec<DMatrix<Complex64>>) -> Result<Self> {
        let Some(first) = operators.first() else {
            return Err(Error::InvalidState("empty Kraus family".into()));
        };
        let (output_dim, input_dim) = first.shape();
        if let Some(k) = operators.iter().find(|k| k.shape() != (output_dim, input_dim)) {
            return Err(Error::ShapeMismatch {
                what: "Kraus operator".into(),
                expected: format!("{output_dim}x{input_dim}"),
                found: format!("{}x{}", k.nrows(), k.ncols()),
            });
        }
        Ok(Self {
            input_dim,
            output_dim,
            operators,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn operators(&self) -> &[DMatrix<Complex64>] {
        &self.operators
    }

    /// `Σ K†K`.
    pub fn effect(&self) -> DMatrix<Complex64> {
        self.operators
            .iter()
            .fold(DMatrix::zeros(self.input_dim, self.input_dim), |acc, k| {
                acc + k.adjoint() * k
            })
    }

    /// Max-norm distance of `Σ K†K` from the identity.
    pub fn completeness_deviation(&self) -> f64 {
        max_abs(&(self.effect() - DMatrix::identity(self.input_dim, self.input_dim)))
    }

    /// `Σ K ρ K†`.
    pub fn apply(&self, rho: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        if rho.shape() != (self.input_dim, self.input_dim) {
            return Err(Error::ShapeMismatch {
                what: "density matrix".into(),
                expected: format!("{0}x{0}", self.input_dim),
                found: format!("{}x{}", rho.nrows(), rho.ncols()),
            });
        }
        Ok(self
            .operators
            .iter()
            .fold(DMatrix::zeros(self.output_dim, self.output_dim), |acc, k| {
                acc + k * rho * k.adjoint()
            }))
    }

    /// `Σ_K (K ⊗ I)|Ω⟩⟨Ω|(K ⊗ I)†` with unnormalized `|Ω⟩ = Σᵢ |i⟩|i⟩`;
    /// row index `a · input_dim + i` pairs output `a` with input `i`.
    pub fn choi_matrix(&self) -> Result<DMatrix<Complex64>> {
        let dim = self.output_dim * self.input_dim;
        if dim > crate::fock::DENSE_DIM_LIMIT {
            return Err(Error::DimensionGuard {
                dim,
                limit: crate::fock::DENSE_DIM_LIMIT,
            });
        }
        let mut choi = DMatrix::zeros(dim, dim);
        for k in &self.operators {
            // sparse outer product of vec(K)
            let support: Vec<(usize, Complex64)> = (0..self.output_dim)
                .flat_map(|a| (0..self.input_dim).map(move |i| (a, i)))
                .filter_map(|(a, i)| {
                    let z = k[(a, i)];
                    (z != Complex64::new(0.0, 0.0)).then_some((a * self.input_dim + i, z))
                })
                .collect();
            for &(r, zr) in &support {
                for &(c, zc) in &support {
                    choi[(r, c)] += zr * zc.conj();
                }
            }
        }
        Ok(choi)
    }

    /// Smallest Choi eigenvalue; fails if the Choi matrix is not Hermitian.
    pub fn verify_cp(&self) -> Result<f64> {
        let choi = self.choi_matrix()?;
        min_hermitian_eigenvalue(&choi)
    }

    /// Max-norm distance of `Tr_out(C)` from the identity on the input space.
    pub fn choi_trace_deviation(&self) -> Result<f64> {
        let choi = self.choi_matrix()?;
        let d = self.input_dim;
        let mut reduced = DMatrix::<Complex64>::zeros(d, d);
        for a in 0..self.output_dim {
            for i in 0..d {
                for j in 0..d {
                    reduced[(i, j)] += choi[(a * d + i, a * d + j)];
                }
            }
        }
        Ok(max_abs(&(reduced - DMatrix::identity(d, d))))
    }
}

pub fn choi_matrix(kraus: &KrausSet) -> Result<DMatrix<Complex64>> {
    kraus.choi_matrix()
}

pub fn verify_cp(kraus: &KrausSet) -> Result<f64> {
    kraus.verify_cp()
}

/// Largest entry modulus.
pub fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Minimum eigenvalue of a Hermitian matrix via a dense eigensolver.
pub fn min_hermitian_eigenvalue(m: &DMatrix<Complex64>) -> Result<f64> {
    let asym = max_abs(&(m - m.adjoint()));
    if asym > CPTP_TOL {
        return Err(Error::NonHermitianChoi(asym));
    }
    let eig = m.clone().symmetric_eigen();
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::to_dense;
    use crate::vocab::{TokenMap, Vocabulary};
    use nalgebra::DVector;
    use proptest::prelude::*;
    use std::f64::consts::E;

    const T0: TokenId = TokenId(0);
    const T1: TokenId = TokenId(1);

    fn setup() -> (Vocabulary, Embedding) {
        let vocab = Vocabulary::new(["x0", "x1"]).unwrap();
        let emb = Embedding::new(
            &vocab,
            2,
            vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])],
        )
        .unwrap();
        (vocab, emb)
    }

    fn sigma_x() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
    }

    fn worked_channels(m: usize) -> (QuantumOperation, QuantumOperation) {
        let (vocab, emb) = setup();
        let id = DMatrix::identity(2, 2);
        let ffn = TokenMap::identity(2);
        let b1 = AttentionBlock::new(id.clone(), sigma_x(), id.clone(), &ffn, &emb, &vocab).unwrap();
        let b2 = AttentionBlock::new(id.clone(), id, sigma_x(), &ffn, &emb, &vocab).unwrap();
        let space = FockSpace::new(2, m).unwrap();
        (
            QuantumOperation::new(b1, emb.clone(), T0, Scaling::None, space).unwrap(),
            QuantumOperation::new(b2, emb, T0, Scaling::None, space).unwrap(),
        )
    }

    #[test]
    fn phi_on_worked_sequences() {
        let (e1, e2) = worked_channels(6);
        let out = e1.apply_phi(&[T0, T1, T0]).unwrap();
        assert_eq!(out.block_index(), 4);
        assert!((out.weight(&[T0, T1, T0, T0]) - 2.0 / (E + 2.0)).abs() < 1e-15);
        assert!((out.weight(&[T0, T1, T0, T1]) - E / (E + 2.0)).abs() < 1e-15);

        let out = e2.apply_phi(&[T0, T1, T0, T1]).unwrap();
        assert!((out.weight(&[T0, T1, T0, T1, T0]) - E / (E + 1.0)).abs() < 1e-15);
        assert!((out.weight(&[T0, T1, T0, T1, T1]) - 1.0 / (E + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn phi_single_token_vocabulary() {
        let vocab = Vocabulary::new(["x0"]).unwrap();
        let emb = Embedding::new(&vocab, 1, vec![DVector::from_vec(vec![1.0])]).unwrap();
        let id = DMatrix::identity(1, 1);
        let b = AttentionBlock::new(id.clone(), id.clone(), id, &TokenMap::identity(1), &emb, &vocab)
            .unwrap();
        let chan =
            QuantumOperation::new(b, emb, T0, Scaling::InvSqrtD, FockSpace::new(1, 2).unwrap())
                .unwrap();
        let out = chan.apply_phi(&[T0]).unwrap();
        assert_eq!(out.weight(&[T0, T0]), 1.0);

        let k = chan.kraus_operators(1).unwrap();
        assert_eq!(k.operators().len(), 2);
        for op in k.operators() {
            assert_eq!(op.iter().filter(|z| z.norm() != 0.0).count(), 1);
            assert_eq!(op.iter().map(|z| z.norm()).sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn truncation_boundary() {
        let (e1, _) = worked_channels(3);
        assert!(matches!(
            e1.apply_phi(&[T0, T1, T0]),
            Err(Error::TruncationExceeded { length: 4, truncation: 3 })
        ));
        assert!(e1.apply_phi(&[T0, T1]).is_ok());
        assert!(e1.kraus_operators(3).is_err());
    }

    #[test]
    fn channel_on_pure_and_mixed_states() {
        let (e1, _) = worked_channels(6);
        let pure = SequenceEnsembleState::pure(vec![T0, T1, T0]).unwrap();
        assert_eq!(
            e1.apply_channel(&pure).unwrap(),
            e1.apply_phi(&[T0, T1, T0]).unwrap()
        );

        let other = SequenceEnsembleState::pure(vec![T1, T1, T0]).unwrap();
        let mix = SequenceEnsembleState::mixture(&[(0.5, &pure), (0.5, &other)]).unwrap();
        let out = e1.apply_channel(&mix).unwrap();
        let a = e1.apply_phi(&[T0, T1, T0]).unwrap();
        let b = e1.apply_phi(&[T1, T1, T0]).unwrap();
        for (seq, w) in out.weights() {
            let expected = 0.5 * a.weight(seq) + 0.5 * b.weight(seq);
            assert!((w - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn vacuum_goes_to_designated_token() {
        let (vocab, emb) = setup();
        let id = DMatrix::identity(2, 2);
        let b = AttentionBlock::new(id.clone(), id.clone(), id, &TokenMap::identity(2), &emb, &vocab)
            .unwrap();
        let space = FockSpace::new(2, 2).unwrap();
        for vac in [T0, T1] {
            let chan = QuantumOperation::new(b.clone(), emb.clone(), vac, Scaling::None, space).unwrap();
            let s = chan.vacuum_action();
            assert_eq!(s.block_index(), 1);
            assert_eq!(s.weight(&[vac]), 1.0);
            assert_eq!(s.total_weight(), 1.0);
        }
        assert!(QuantumOperation::new(b, emb, TokenId(2), Scaling::None, space).is_err());
    }

    #[test]
    fn kraus_norms_on_worked_sequence() {
        let (e1, _) = worked_channels(4);
        let space = e1.space();
        let k = e1.kraus_operators(3).unwrap();
        let inp = space.basis_index(&[T0, T1, T0]);
        let mut norms: Vec<f64> = k
            .operators()
            .iter()
            .map(|op| op.column(inp).iter().map(|z| z.norm_sqr()).sum::<f64>())
            .filter(|&n| n > 0.0)
            .collect();
        norms.sort_by(f64::total_cmp);
        assert_eq!(norms.len(), 2);
        assert!((norms[0] - 2.0 / (E + 2.0)).abs() < 1e-15);
        assert!((norms[1] - E / (E + 2.0)).abs() < 1e-15);
        assert!(k.completeness_deviation() <= CPTP_TOL);
    }

    #[test]
    fn identity_channel_choi() {
        let id = DMatrix::<Complex64>::identity(2, 2);
        let k = KrausSet::new(vec![id]).unwrap();
        let choi = choi_matrix(&k).unwrap();
        // |Ω⟩⟨Ω| with Ω = |00⟩ + |11⟩
        for r in 0..4 {
            for c in 0..4 {
                let v = if (r == 0 || r == 3) && (c == 0 || c == 3) { 1.0 } else { 0.0 };
                assert_eq!(choi[(r, c)], Complex64::new(v, 0.0));
            }
        }
        assert!(verify_cp(&k).unwrap().abs() < 1e-12);
        assert!(k.choi_trace_deviation().unwrap() < 1e-12);
    }

    #[test]
    fn worked_channel_is_cptp() {
        let (e1, e2) = worked_channels(4);
        for chan in [e1, e2] {
            let k = chan.kraus_operators(3).unwrap();
            assert_eq!(k.input_dim(), 15);
            assert_eq!(k.output_dim(), 31);
            assert!(verify_cp(&k).unwrap() >= -CPTP_TOL);
            assert!(k.completeness_deviation() <= CPTP_TOL);
            assert!(k.choi_trace_deviation().unwrap() <= CPTP_TOL);
        }
    }

    #[test]
    fn non_hermitian_matrix_is_flagged() {
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
        );
        assert!(matches!(min_hermitian_eigenvalue(&m), Err(Error::NonHermitianChoi(_))));
    }

    #[test]
    fn kraus_shapes_must_agree() {
        let a = DMatrix::<Complex64>::zeros(3, 2);
        let b = DMatrix::<Complex64>::zeros(2, 2);
        assert!(KrausSet::new(vec![a, b]).is_err());
        assert!(KrausSet::new(vec![]).is_err());
    }

    fn restrict(m: &DMatrix<Complex64>, dim: usize) -> DMatrix<Complex64> {
        m.view((0, 0), (dim, dim)).into_owned()
    }

    #[test]
    fn dense_kraus_matches_sparse_on_every_basis_sequence() {
        let (e1, e2) = worked_channels(4);
        for chan in [e1, e2] {
            let space = chan.space();
            let k = chan.kraus_operators(3).unwrap();
            for n in 1..=3 {
                for seq in space.sequences(n) {
                    let state = SequenceEnsembleState::pure(seq).unwrap();
                    let rho = to_dense(&state, &space).unwrap().to_matrix().unwrap();
                    let dense = k.apply(&restrict(&rho, k.input_dim())).unwrap();
                    let sparse = to_dense(&chan.apply_channel(&state).unwrap(), &space)
                        .unwrap()
                        .to_matrix()
                        .unwrap();
                    assert!(max_abs(&(dense - sparse)) <= CPTP_TOL);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn channel_is_linear_on_convex_pairs(
            alpha in 0.0f64..=1.0,
            a in prop::collection::vec(0.01f64..1.0, 8),
            b in prop::collection::vec(0.01f64..1.0, 8),
        ) {
            let (e1, e2) = worked_channels(5);
            let space = e1.space();
            let state = |raw: &[f64]| {
                let w = space.sequences(3).zip(raw.iter().copied()).collect();
                SequenceEnsembleState::normalized(3, w).unwrap()
            };
            let (r1, r2) = (state(&a), state(&b));
            let mix = SequenceEnsembleState::mixture(&[(alpha, &r1), (1.0 - alpha, &r2)]).unwrap();
            for chan in [&e1, &e2] {
                let lhs = chan.apply_channel(&mix).unwrap();
                let o1 = chan.apply_channel(&r1).unwrap();
                let o2 = chan.apply_channel(&r2).unwrap();
                prop_assert!((lhs.total_weight() - 1.0).abs() <= 1e-12);
                for (seq, w) in lhs.weights() {
                    let rhs = alpha * o1.weight(seq) + (1.0 - alpha) * o2.weight(seq);
                    prop_assert!((w - rhs).abs() <= 1e-12);
                }
            }
        }
    }
}
