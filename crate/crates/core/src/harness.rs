//! Classical-vs-quantum comparison, the built-in worked example, sampling
//! statistics, and the output document format.

use std::collections::BTreeMap;
use std::f64::consts::E;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use crate::config::Model;
use crate::distribution::JointDistribution;
use crate::error::Result;
use crate::measurement::Protocol;
use crate::transformer::{joint_distribution, AttentionBlock, Scaling, TransformerStack};
use crate::vocab::{Embedding, Text, TokenId, TokenMap, Vocabulary};

pub const DEFAULT_THRESHOLD: f64 = 1e-10;
pub const GOLDEN_TOL: f64 = 1e-12;
/// Upper 0.1% point of the chi-square distribution with 3 degrees of freedom.
pub const CHI_SQUARE_DF3_ALPHA_0_001: f64 = 16.27;

/// Sample config equivalent to [`golden_model`].
pub const GOLDEN_CONFIG: &str = include_str!("../data/golden_example.json");
pub const GOLDEN_INPUT: &str = "x0 x1 x0";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeComparison {
    pub text: String,
    pub classical: f64,
    pub quantum: f64,
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub total_variation: f64,
    pub max_abs_diff: f64,
    pub per_outcome: Vec<OutcomeComparison>,
}

/// Elementwise comparison over the union of supports; `diff = quantum − classical`.
pub fn compare(
    classical: &JointDistribution,
    quantum: &JointDistribution,
    vocab: &Vocabulary,
) -> ComparisonReport {
    let mut keys: Vec<&Vec<TokenId>> = classical.outcomes().chain(quantum.outcomes()).collect();
    keys.sort();
    keys.dedup();
    let per_outcome: Vec<OutcomeComparison> = keys
        .into_iter()
        .map(|k| {
            let (c, q) = (classical.get(k), quantum.get(k));
            OutcomeComparison {
                text: vocab.render(k),
                classical: c,
                quantum: q,
                diff: q - c,
            }
        })
        .collect();
    ComparisonReport {
        total_variation: 0.5 * per_outcome.iter().map(|o| o.diff.abs()).sum::<f64>(),
        max_abs_diff: per_outcome.iter().map(|o| o.diff.abs()).fold(0.0, f64::max),
        per_outcome,
    }
}

/// The two-token, two-block model with σ_x mechanisms, unscaled scores.
pub fn golden_model() -> Model {
    let vocabulary = Vocabulary::new(["x0", "x1"]).expect("static vocabulary");
    let embedding = Embedding::new(
        &vocabulary,
        2,
        vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])],
    )
    .expect("static embedding");
    let id = DMatrix::identity(2, 2);
    let sigma_x = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let ffn = TokenMap::identity(2);
    let first = AttentionBlock::new(id.clone(), sigma_x.clone(), id.clone(), &ffn, &embedding, &vocabulary)
        .expect("static block");
    let second = AttentionBlock::new(id.clone(), id, sigma_x, &ffn, &embedding, &vocabulary)
        .expect("static block");
    Model {
        stack: TransformerStack::new(vec![first, second], Scaling::None).expect("static stack"),
        vocabulary,
        embedding,
        vacuum_token: TokenId(0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoldenCheck {
    pub name: &'static str,
    pub expected: f64,
    pub actual: f64,
}

impl GoldenCheck {
    pub fn passed(&self) -> bool {
        (self.expected - self.actual).abs() <= GOLDEN_TOL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoldenReport {
    pub checks: Vec<GoldenCheck>,
    pub joint_total: f64,
}

impl GoldenReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(GoldenCheck::passed) && (self.joint_total - 1.0).abs() <= GOLDEN_TOL
    }

    pub fn failures(&self) -> Vec<&GoldenCheck> {
        self.checks.iter().filter(|c| !c.passed()).collect()
    }
}

/// Runs the measurement protocol on the built-in model and checks the six
/// conditional and four joint probabilities against their closed forms.
pub fn golden_example() -> Result<GoldenReport> {
    let model = golden_model();
    let text = Text::parse(GOLDEN_INPUT, &model.vocabulary)?;
    let protocol = Protocol::new(&model.stack, &text, &model.embedding, model.vacuum_token)?;
    let records = protocol.trajectories()?;
    let step = |path: &[usize], k: usize| -> f64 {
        let want: Vec<TokenId> = path.iter().map(|&i| TokenId(i)).collect();
        records
            .iter()
            .find(|r| r.outcomes == want)
            .map(|r| r.per_step_probabilities[k])
            .unwrap_or(f64::NAN)
    };
    let joint = |a: usize, b: usize| step(&[a, b], 0) * step(&[a, b], 1);

    let checks = vec![
        GoldenCheck { name: "P(y1=x0)", expected: 2.0 / (E + 2.0), actual: step(&[0, 0], 0) },
        GoldenCheck { name: "P(y1=x1)", expected: E / (E + 2.0), actual: step(&[1, 0], 0) },
        GoldenCheck { name: "P(y2=x0 | y1=x0)", expected: 1.0 / (3.0 * E + 1.0), actual: step(&[0, 0], 1) },
        GoldenCheck { name: "P(y2=x1 | y1=x0)", expected: 3.0 * E / (3.0 * E + 1.0), actual: step(&[0, 1], 1) },
        GoldenCheck { name: "P(y2=x0 | y1=x1)", expected: E / (E + 1.0), actual: step(&[1, 0], 1) },
        GoldenCheck { name: "P(y2=x1 | y1=x1)", expected: 1.0 / (E + 1.0), actual: step(&[1, 1], 1) },
        GoldenCheck { name: "P(x0,x0)", expected: 2.0 / ((E + 2.0) * (3.0 * E + 1.0)), actual: joint(0, 0) },
        GoldenCheck { name: "P(x0,x1)", expected: 6.0 * E / ((E + 2.0) * (3.0 * E + 1.0)), actual: joint(0, 1) },
        GoldenCheck { name: "P(x1,x0)", expected: E * E / ((E + 2.0) * (E + 1.0)), actual: joint(1, 0) },
        GoldenCheck { name: "P(x1,x1)", expected: E / ((E + 2.0) * (E + 1.0)), actual: joint(1, 1) },
    ];
    Ok(GoldenReport {
        checks,
        joint_total: records.iter().map(|r| r.probability).sum(),
    })
}

/// Pearson statistic of observed counts against exact probabilities.
///
/// Cells are the outcomes with positive expected probability; the degrees of
/// freedom are the cell count minus one. Counts outside that support make the
/// statistic infinite.
pub fn chi_square(counts: &BTreeMap<Vec<TokenId>, u64>, exact: &JointDistribution) -> (f64, usize) {
    let total: u64 = counts.values().sum();
    let n = total as f64;
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (k, p) in exact.iter() {
        if p <= 0.0 {
            continue;
        }
        cells += 1;
        let expected = n * p;
        let observed = counts.get(k).copied().unwrap_or(0) as f64;
        stat += (observed - expected).powi(2) / expected;
    }
    if counts.keys().any(|k| exact.get(k) <= 0.0) {
        stat = f64::INFINITY;
    }
    (stat, cells.saturating_sub(1))
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub input: String,
    pub scaling: Scaling,
    pub truncation: usize,
    pub seed: Option<u64>,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, config_bytes: &[u8], input: &str, scaling: Scaling, truncation: usize) -> Self {
        Self {
            command: command.to_string(),
            config_digest: format!("sha256:{}", hex::encode(Sha256::digest(config_bytes))),
            input: input.to_string(),
            scaling,
            truncation,
            seed: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Decimal with 17 significant digits, exact for every `f64`.
pub fn format_probability(p: f64) -> String {
    if p.is_finite() {
        format!("{p:.16e}")
    } else {
        // JSON has no infinities
        "null".to_string()
    }
}

fn raw(p: f64) -> Box<RawValue> {
    RawValue::from_string(format_probability(p)).expect("formatted float is valid JSON")
}

/// `{"y1 … yL": p, …}` keyed by space-joined symbols in lexicographic order.
pub fn distribution_entries(dist: &JointDistribution, vocab: &Vocabulary) -> BTreeMap<String, Box<RawValue>> {
    dist.iter().map(|(k, p)| (vocab.render(k), raw(p))).collect()
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    total_variation: Box<RawValue>,
    max_abs_diff: Box<RawValue>,
    threshold: Box<RawValue>,
    passed: bool,
    per_outcome: Vec<OutcomeDoc<'a>>,
}

#[derive(Serialize)]
struct OutcomeDoc<'a> {
    text: &'a str,
    classical: Box<RawValue>,
    quantum: Box<RawValue>,
    diff: Box<RawValue>,
}

impl ComparisonReport {
    pub fn passed(&self, threshold: f64) -> bool {
        self.total_variation <= threshold
    }

    pub fn to_json(&self, threshold: f64) -> Box<RawValue> {
        let doc = ReportDoc {
            total_variation: raw(self.total_variation),
            max_abs_diff: raw(self.max_abs_diff),
            threshold: raw(threshold),
            passed: self.passed(threshold),
            per_outcome: self
                .per_outcome
                .iter()
                .map(|o| OutcomeDoc {
                    text: &o.text,
                    classical: raw(o.classical),
                    quantum: raw(o.quantum),
                    diff: raw(o.diff),
                })
                .collect(),
        };
        serde_json::value::to_raw_value(&doc).expect("report serializes")
    }
}

/// `{"manifest": …, "distribution": …, "report": …}`.
#[derive(Serialize)]
pub struct OutputDocument {
    pub manifest: RunManifest,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distribution: Option<BTreeMap<String, Box<RawValue>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<Box<RawValue>>,
}

impl OutputDocument {
    pub fn render(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("document serializes");
        s.push('\n');
        s
    }
}

/// Both computation paths for one model and input.
pub fn classical_and_quantum(model: &Model, text: &Text) -> Result<(JointDistribution, JointDistribution)> {
    let classical = joint_distribution(&model.stack, text.tokens(), &model.embedding)?;
    let quantum = Protocol::new(&model.stack, text, &model.embedding, model.vacuum_token)?.joint_distribution()?;
    Ok((classical, quantum))
}
