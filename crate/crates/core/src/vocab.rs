//! Tokens, their embeddings, and texts.
//!
//! A token is identified by a dense index `0..N`. The index doubles as the
//! label of the orthonormal basis vector `|x⟩` used on the quantum side; the
//! real embedding vectors only ever enter similarity scores.

use std::collections::HashMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Componentwise tolerance when matching `W_V · emb(x)` against token embeddings.
pub const EMBEDDING_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenId(pub usize);

impl TokenId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// The finite token set, bijective between ids and display symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), TokenId(i)).is_some() {
                return Err(Error::DuplicateSymbol(s.clone()));
            }
        }
        Ok(Self { symbols, index })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = TokenId> + Clone {
        (0..self.symbols.len()).map(TokenId)
    }

    pub fn symbol(&self, token: TokenId) -> &str {
        &self.symbols[token.0]
    }

    pub fn lookup(&self, symbol: &str) -> Result<TokenId> {
        self.index
            .get(symbol)
            .copied()
            .ok_or_else(|| Error::UnknownToken(symbol.to_string()))
    }

    pub fn contains(&self, token: TokenId) -> bool {
        token.0 < self.symbols.len()
    }

    /// Space-joined symbols, the key format used in output documents.
    pub fn render(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|&t| self.symbol(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Per-token real vectors of a common length `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    dim: usize,
    vectors: Vec<DVector<f64>>,
}

impl Embedding {
    /// `vectors[i]` is the embedding of token `i`.
    pub fn new(vocab: &Vocabulary, dim: usize, vectors: Vec<DVector<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ShapeMismatch {
                what: "embedding dimension".into(),
                expected: "at least 1".into(),
                found: "0".into(),
            });
        }
        if vectors.len() != vocab.len() {
            return Err(Error::ShapeMismatch {
                what: "embedding table".into(),
                expected: format!("{} vectors", vocab.len()),
                found: format!("{} vectors", vectors.len()),
            });
        }
        for (i, v) in vectors.iter().enumerate() {
            let sym = vocab.symbol(TokenId(i));
            if v.len() != dim {
                return Err(Error::ShapeMismatch {
                    what: format!("embedding of `{sym}`"),
                    expected: format!("length {dim}"),
                    found: format!("length {}", v.len()),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("embedding of `{sym}`")));
            }
        }
        for i in 0..vectors.len() {
            for j in (i + 1)..vectors.len() {
                if vectors[i] == vectors[j] {
                    return Err(Error::DuplicateEmbedding(
                        vocab.symbol(TokenId(i)).to_string(),
                        vocab.symbol(TokenId(j)).to_string(),
                    ));
                }
            }
        }
        Ok(Self { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, token: TokenId) -> &DVector<f64> {
        &self.vectors[token.0]
    }

    /// The unique token whose embedding matches `v` componentwise within
    /// [`EMBEDDING_MATCH_TOL`]; `Ok(None)` when nothing matches.
    fn match_vector(&self, v: &DVector<f64>) -> std::result::Result<Option<TokenId>, (TokenId, TokenId)> {
        let mut found: Option<TokenId> = None;
        for (i, e) in self.vectors.iter().enumerate() {
            let close = e
                .iter()
                .zip(v.iter())
                .all(|(a, b)| (a - b).abs() <= EMBEDDING_MATCH_TOL);
            if close {
                if let Some(prev) = found {
                    return Err((prev, TokenId(i)));
                }
                found = Some(TokenId(i));
            }
        }
        Ok(found)
    }
}

/// A token sequence `x₁⋯xₙ` with `n ≥ 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Text(Vec<TokenId>);

impl Text {
    pub fn new(tokens: Vec<TokenId>, vocab: &Vocabulary) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        if let Some(t) = tokens.iter().find(|t| !vocab.contains(**t)) {
            return Err(Error::TokenOutOfRange(t.0));
        }
        Ok(Self(tokens))
    }

    /// Whitespace-separated symbols, e.g. `"x0 x1 x0"`.
    pub fn parse(input: &str, vocab: &Vocabulary) -> Result<Self> {
        let tokens = input
            .split_whitespace()
            .map(|s| vocab.lookup(s))
            .collect::<Result<Vec<_>>>()?;
        Self::new(tokens, vocab)
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> TokenId {
        *self.0.last().expect("text is nonempty")
    }
}

/// Total map on the vocabulary, stored by token id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMap(Vec<TokenId>);

impl TokenMap {
    pub fn identity(n: usize) -> Self {
        Self((0..n).map(TokenId).collect())
    }

    pub fn from_images(images: Vec<TokenId>) -> Self {
        Self(images)
    }

    pub fn apply(&self, token: TokenId) -> TokenId {
        self.0[token.0]
    }

    /// `then ∘ self`.
    pub fn then(&self, then: &TokenMap) -> TokenMap {
        Self(self.0.iter().map(|&t| then.apply(t)).collect())
    }

    pub fn images(&self) -> &[TokenId] {
        &self.0
    }
}

/// Checks that `W_V` sends every token embedding onto some token embedding
/// and returns the induced token map.
pub fn validate_value_closure(
    w_v: &DMatrix<f64>,
    emb: &Embedding,
    vocab: &Vocabulary,
) -> Result<TokenMap> {
    let d = emb.dim();
    if w_v.shape() != (d, d) {
        return Err(Error::ShapeMismatch {
            what: "W_V".into(),
            expected: format!("{d}x{d}"),
            found: format!("{}x{}", w_v.nrows(), w_v.ncols()),
        });
    }
    if w_v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("W_V".into()));
    }
    let images = vocab
        .tokens()
        .map(|t| {
            let image = w_v * emb.vector(t);
            match emb.match_vector(&image) {
                Ok(Some(y)) => Ok(y),
                Ok(None) => Err(Error::ClosureViolation(vocab.symbol(t).to_string())),
                Err((a, b)) => Err(Error::AmbiguousMatch {
                    token: vocab.symbol(t).to_string(),
                    first: vocab.symbol(a).to_string(),
                    second: vocab.symbol(b).to_string(),
                }),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TokenMap(images))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_tokens() -> (Vocabulary, Embedding) {
        let vocab = Vocabulary::new(["x0", "x1"]).unwrap();
        let emb = Embedding::new(
            &vocab,
            2,
            vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])],
        )
        .unwrap();
        (vocab, emb)
    }

    #[test]
    fn sigma_x_swaps_tokens() {
        let (vocab, emb) = two_tokens();
        let sigma_x = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let map = validate_value_closure(&sigma_x, &emb, &vocab).unwrap();
        assert_eq!(map.images(), &[TokenId(1), TokenId(0)]);
    }

    #[test]
    fn identity_gives_identity_map() {
        let (vocab, emb) = two_tokens();
        let map = validate_value_closure(&DMatrix::identity(2, 2), &emb, &vocab).unwrap();
        assert_eq!(map, TokenMap::identity(2));
    }

    #[test]
    fn permutation_matrix_matches_brute_force() {
        // every permutation of 4 standard-basis tokens
        let vocab = Vocabulary::new(["a", "b", "c", "d"]).unwrap();
        let basis: Vec<_> = (0..4)
            .map(|i| DVector::from_fn(4, |r, _| if r == i { 1.0 } else { 0.0 }))
            .collect();
        let emb = Embedding::new(&vocab, 4, basis.clone()).unwrap();
        let mut perm = [0usize, 1, 2, 3];
        let mut count = 0;
        permute(&mut perm, 0, &mut |p| {
            let w = DMatrix::from_fn(4, 4, |r, c| if p[c] == r { 1.0 } else { 0.0 });
            let map = validate_value_closure(&w, &emb, &vocab).unwrap();
            for t in 0..4 {
                let image = &w * &basis[t];
                let expected = (0..4).find(|&j| basis[j] == image).unwrap();
                assert_eq!(map.apply(TokenId(t)), TokenId(expected));
            }
            count += 1;
        });
        assert_eq!(count, 24);
    }

    fn permute(p: &mut [usize; 4], k: usize, f: &mut impl FnMut(&[usize; 4])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute(p, k + 1, f);
            p.swap(k, i);
        }
    }

    #[test]
    fn closure_violation_is_reported() {
        let (vocab, emb) = two_tokens();
        let w = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.5, 1.0]);
        let err = validate_value_closure(&w, &emb, &vocab).unwrap_err();
        assert!(matches!(err, Error::ClosureViolation(ref s) if s == "x0"), "{err}");
    }

    #[test]
    fn ambiguous_match_is_reported() {
        let vocab = Vocabulary::new(["a", "b"]).unwrap();
        let emb = Embedding::new(
            &vocab,
            1,
            vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![1.0 + 1e-10])],
        )
        .unwrap();
        let err = validate_value_closure(&DMatrix::identity(1, 1), &emb, &vocab).unwrap_err();
        assert!(matches!(err, Error::AmbiguousMatch { .. }));
    }

    #[test]
    fn vocabulary_rejects_duplicates_and_empty() {
        assert!(matches!(Vocabulary::new(["a", "a"]), Err(Error::DuplicateSymbol(_))));
        assert!(matches!(
            Vocabulary::new(Vec::<String>::new()),
            Err(Error::EmptyVocabulary)
        ));
    }

    #[test]
    fn embedding_rejects_bad_tables() {
        let vocab = Vocabulary::new(["a", "b"]).unwrap();
        let v = |x: &[f64]| DVector::from_vec(x.to_vec());
        assert!(matches!(
            Embedding::new(&vocab, 2, vec![v(&[1.0, 0.0]), v(&[1.0, 0.0])]),
            Err(Error::DuplicateEmbedding(..))
        ));
        assert!(matches!(
            Embedding::new(&vocab, 2, vec![v(&[1.0, 0.0]), v(&[1.0])]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            Embedding::new(&vocab, 2, vec![v(&[1.0, 0.0]), v(&[f64::NAN, 0.0])]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn text_parsing() {
        let (vocab, _) = two_tokens();
        let t = Text::parse("x0  x1 x0", &vocab).unwrap();
        assert_eq!(t.tokens(), &[TokenId(0), TokenId(1), TokenId(0)]);
        assert_eq!(vocab.render(t.tokens()), "x0 x1 x0");
        assert!(matches!(Text::parse("x0 zz", &vocab), Err(Error::UnknownToken(ref s)) if s == "zz"));
        assert!(matches!(Text::parse("   ", &vocab), Err(Error::EmptyText)));
    }
}
