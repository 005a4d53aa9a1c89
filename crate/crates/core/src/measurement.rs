//! Sequential token measurements and the generation protocol.
//!
//! After the `ℓ`-th channel the freshly written token lives in block
//! `n + ℓ`. The measurement `X_ℓ` has one projector per token, selecting
//! block `n + ℓ` sequences that end in that token, plus the blank outcome
//! `⋄` projecting onto every other block. The observed outcome's projector
//! reduces the state before the next channel is applied.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::channel::QuantumOperation;
use crate::distribution::{Distribution, JointDistribution};
use crate::error::{Error, Result};
use crate::fock::{input_state, BlockDiagOperator, FockSpace, SequenceEnsembleState};
use crate::rng;
use crate::transformer::TransformerStack;
use crate::vocab::{Embedding, Text, TokenId};

/// Element of `Ω = {⋄} ∪ T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Outcome {
    /// `⋄`: no token in the probed block.
    Blank,
    Token(TokenId),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Blank => f.write_str("⋄"),
            Outcome::Token(t) => t.fmt(f),
        }
    }
}

/// Projector-valued measurement probing block `base_block + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pvm {
    base_block: usize,
}

impl Pvm {
    pub fn new(base_block: usize) -> Self {
        Self { base_block }
    }

    pub fn base_block(&self) -> usize {
        self.base_block
    }

    pub fn probed_block(&self) -> usize {
        self.base_block + 1
    }

    /// Dense `X({outcome})` on the given space.
    pub fn projector(&self, outcome: Outcome, space: FockSpace) -> Result<BlockDiagOperator> {
        let probed = self.probed_block();
        if probed > space.truncation() {
            return Err(Error::TruncationExceeded {
                length: probed,
                truncation: space.truncation(),
            });
        }
        space.guard_dense(space.dimension())?;
        let one = Complex64::new(1.0, 0.0);
        let mut op = BlockDiagOperator::zero(space);
        match outcome {
            Outcome::Blank => {
                op.set_scalar(one);
                for n in (1..=space.truncation()).filter(|&n| n != probed) {
                    let d = space.block_dim(n);
                    op.set_block(n, DMatrix::identity(d, d))?;
                }
            }
            Outcome::Token(x) => {
                if x.0 >= space.vocab_size() {
                    return Err(Error::TokenOutOfRange(x.0));
                }
                // I^{⊗ base} ⊗ |x⟩⟨x|: last digit of the block index equals x
                let d = space.block_dim(probed);
                let diag = nalgebra::DVector::from_fn(d, |i, _| {
                    if i % space.vocab_size() == x.0 {
                        one
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                });
                op.set_block(probed, DMatrix::from_diagonal(&diag))?;
            }
        }
        Ok(op)
    }

    /// All outcomes in protocol order: `⋄`, then tokens by ascending id.
    pub fn outcomes(&self, vocab_size: usize) -> impl Iterator<Item = Outcome> {
        std::iter::once(Outcome::Blank).chain((0..vocab_size).map(|i| Outcome::Token(TokenId(i))))
    }
}

/// Born probabilities of the measurement on a single-block ensemble.
///
/// `⋄` is always present in the table; token outcomes appear when they carry
/// weight.
pub fn outcome_probabilities(pvm: &Pvm, state: &SequenceEnsembleState) -> Distribution<Outcome> {
    let mut dist = Distribution::new();
    if state.block_index() != pvm.probed_block() {
        dist.accumulate(Outcome::Blank, state.total_weight());
        return dist;
    }
    dist.accumulate(Outcome::Blank, 0.0);
    for (seq, &w) in state.weights() {
        let last = *seq.last().expect("sequences in a probed block are nonempty");
        dist.accumulate(Outcome::Token(last), w);
    }
    dist
}

/// Lüders update `EρE / Tr[Eρ]` for a token outcome.
pub fn luders_reduce(
    pvm: &Pvm,
    state: &SequenceEnsembleState,
    outcome: TokenId,
) -> Result<SequenceEnsembleState> {
    let zero = || Error::ZeroProbabilityOutcome(outcome.to_string());
    if state.block_index() != pvm.probed_block() {
        return Err(zero());
    }
    let kept: BTreeMap<Vec<TokenId>, f64> = state
        .weights()
        .iter()
        .filter(|(seq, &w)| seq.last() == Some(&outcome) && w > 0.0)
        .map(|(seq, &w)| (seq.clone(), w))
        .collect();
    if kept.is_empty() {
        return Err(zero());
    }
    SequenceEnsembleState::normalized(state.block_index(), kept)
}

/// One fully measured generation path.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub outcomes: Vec<TokenId>,
    pub probability: f64,
    pub per_step_probabilities: Vec<f64>,
}

/// What the protocol sees right after the `step`-th channel (1-based).
#[derive(Debug)]
pub struct StepObservation<'a> {
    pub step: usize,
    pub pvm: Pvm,
    pub state: &'a SequenceEnsembleState,
    pub probabilities: &'a Distribution<Outcome>,
}

/// Input state plus one channel per block on `F⁽ⁿ⁺ᴸ⁾(h)`.
#[derive(Debug, Clone)]
pub struct Protocol {
    text: Text,
    space: FockSpace,
    channels: Vec<QuantumOperation>,
}

impl Protocol {
    /// Truncation is `n + L`; the vacuum token only matters for `Φ(1)`.
    pub fn new(
        stack: &TransformerStack,
        text: &Text,
        emb: &Embedding,
        vacuum_token: TokenId,
    ) -> Result<Self> {
        let space = FockSpace::new(emb.len(), text.len() + stack.depth())?;
        Self::with_space(stack, text, emb, vacuum_token, space)
    }

    pub fn with_space(
        stack: &TransformerStack,
        text: &Text,
        emb: &Embedding,
        vacuum_token: TokenId,
        space: FockSpace,
    ) -> Result<Self> {
        let needed = text.len() + stack.depth();
        if needed > space.truncation() {
            return Err(Error::TruncationExceeded {
                length: needed,
                truncation: space.truncation(),
            });
        }
        let channels = stack
            .blocks()
            .iter()
            .map(|b| QuantumOperation::new(b.clone(), emb.clone(), vacuum_token, stack.scaling(), space))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            text: text.clone(),
            space,
            channels,
        })
    }

    pub fn space(&self) -> FockSpace {
        self.space
    }

    pub fn channels(&self) -> &[QuantumOperation] {
        &self.channels
    }

    pub fn initial_state(&self) -> Result<SequenceEnsembleState> {
        input_state(&self.text, &self.space)
    }

    fn pvm(&self, step: usize) -> Pvm {
        Pvm::new(self.text.len() + step - 1)
    }

    /// Enumerates every nonzero-probability branch, outcomes ascending.
    pub fn trajectories_observed(
        &self,
        mut observe: impl FnMut(&StepObservation<'_>),
    ) -> Result<Vec<TrajectoryRecord>> {
        let mut records = Vec::new();
        let start = self.initial_state()?;
        let mut path = Vec::with_capacity(self.channels.len());
        let mut probs = Vec::with_capacity(self.channels.len());
        self.branch(&start, 1, &mut path, &mut probs, &mut observe, &mut records)?;
        Ok(records)
    }

    pub fn trajectories(&self) -> Result<Vec<TrajectoryRecord>> {
        self.trajectories_observed(|_| {})
    }

    fn branch(
        &self,
        state: &SequenceEnsembleState,
        step: usize,
        path: &mut Vec<TokenId>,
        probs: &mut Vec<f64>,
        observe: &mut impl FnMut(&StepObservation<'_>),
        records: &mut Vec<TrajectoryRecord>,
    ) -> Result<()> {
        if step > self.channels.len() {
            records.push(TrajectoryRecord {
                outcomes: path.clone(),
                probability: probs.iter().product(),
                per_step_probabilities: probs.clone(),
            });
            return Ok(());
        }
        let evolved = self.channels[step - 1].apply_channel(state)?;
        let pvm = self.pvm(step);
        let dist = outcome_probabilities(&pvm, &evolved);
        observe(&StepObservation {
            step,
            pvm,
            state: &evolved,
            probabilities: &dist,
        });
        for (outcome, p) in dist.iter() {
            let Outcome::Token(y) = *outcome else { continue };
            if p <= 0.0 {
                continue;
            }
            let reduced = luders_reduce(&pvm, &evolved, y)?;
            path.push(y);
            probs.push(p);
            self.branch(&reduced, step + 1, path, probs, observe, records)?;
            path.pop();
            probs.pop();
        }
        Ok(())
    }

    pub fn joint_distribution(&self) -> Result<JointDistribution> {
        Ok(self
            .trajectories()?
            .into_iter()
            .map(|r| (r.outcomes, r.probability))
            .collect())
    }

    /// Measures one trajectory using stream `index` of `seed`.
    pub fn sample_trajectory(&self, seed: u64, index: u64) -> Result<Vec<TokenId>> {
        let mut rng = rng::trajectory(seed, index);
        let mut state = self.initial_state()?;
        let mut outcomes = Vec::with_capacity(self.channels.len());
        for (k, chan) in self.channels.iter().enumerate() {
            let evolved = chan.apply_channel(&state)?;
            let pvm = self.pvm(k + 1);
            let dist = outcome_probabilities(&pvm, &evolved);
            let outcome = rng::draw(&mut rng, dist.iter().map(|(&o, p)| (o, p)))
                .expect("post-channel state has unit weight");
            let Outcome::Token(y) = outcome else {
                return Err(Error::InvalidState(format!("blank outcome at step {}", k + 1)));
            };
            state = luders_reduce(&pvm, &evolved, y)?;
            outcomes.push(y);
        }
        Ok(outcomes)
    }

    /// Counts of measured texts over `trajectories` independent runs; runs in
    /// parallel, each trajectory on its own stream.
    pub fn sample(&self, seed: u64, trajectories: u64) -> Result<BTreeMap<Vec<TokenId>, u64>> {
        if trajectories == 0 {
            return Err(Error::NoTrajectories);
        }
        (0..trajectories)
            .into_par_iter()
            .try_fold(BTreeMap::new, |mut acc, i| {
                *acc.entry(self.sample_trajectory(seed, i)?).or_insert(0) += 1;
                Ok(acc)
            })
            .try_reduce(BTreeMap::new, |mut a, b| {
                for (k, v) in b {
                    *a.entry(k).or_insert(0) += v;
                }
                Ok(a)
            })
    }
}

/// Exact joint distribution from sequential measurement.
pub fn run_protocol(stack: &TransformerStack, text: &Text, emb: &Embedding) -> Result<JointDistribution> {
    Protocol::new(stack, text, emb, TokenId(0))?.joint_distribution()
}

pub fn sample_protocol(
    stack: &TransformerStack,
    text: &Text,
    emb: &Embedding,
    seed: u64,
    trajectories: u64,
) -> Result<BTreeMap<Vec<TokenId>, u64>> {
    Protocol::new(stack, text, emb, TokenId(0))?.sample(seed, trajectories)
}
