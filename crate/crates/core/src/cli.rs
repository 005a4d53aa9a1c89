//! The `sim` command line.
//!
//! Exit codes: 0 on success, 1 on invalid input (arguments, config, text,
//! truncation), 2 when a check or comparison fails its threshold.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::value::RawValue;

use crate::channel::{QuantumOperation, CPTP_TOL};
use crate::config::{load_model_config, Model};
use crate::distribution::{Distribution, JointDistribution};
use crate::error::Error;
use crate::fock::FockSpace;
use crate::harness::{
    chi_square, compare, distribution_entries, format_probability, golden_example, OutputDocument,
    RunManifest, DEFAULT_THRESHOLD,
};
use crate::measurement::Protocol;
use crate::transformer::joint_distribution;
use crate::vocab::Text;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sim", version, about = "Transformer vs. Fock-space measurement simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Classical,
    Quantum,
    Compare,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact joint distribution of the generated text.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: String,
        #[arg(long, value_enum, default_value = "compare")]
        mode: Mode,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Write the result document here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Monte-Carlo sequential measurement.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: String,
        #[arg(long)]
        trajectories: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Reproduce the built-in two-token worked example.
    Example,
    /// Choi and Kraus witnesses for every block's channel.
    Choi {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        max_block: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

enum Failure {
    Invalid(String),
    Failed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Invalid(e.to_string())
    }
}

pub fn cli_main<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            input,
            mode,
            threshold,
            output,
        } => run(&config, &input, mode, threshold, output.as_deref(), out),
        Command::Sample {
            config,
            input,
            trajectories,
            seed,
            output,
        } => sample(&config, &input, trajectories, seed, output.as_deref(), out),
        Command::Example => example(out),
        Command::Choi {
            config,
            max_block,
            output,
        } => choi(&config, max_block, output.as_deref(), out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Invalid(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_INVALID
        }
        Err(Failure::Failed) => EXIT_FAILED,
    }
}

fn load(path: &Path) -> Result<(Vec<u8>, Model), Failure> {
    let bytes = std::fs::read(path)
        .map_err(|e| Failure::Invalid(format!("cannot read config {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| Failure::Invalid(format!("config {} is not UTF-8", path.display())))?;
    let model = load_model_config(&text)?;
    Ok((bytes, model))
}

fn emit(doc: &OutputDocument, output: Option<&Path>, out: &mut dyn Write) -> Result<(), Failure> {
    let rendered = doc.render();
    match output {
        Some(path) => std::fs::write(path, rendered)
            .map_err(|e| Failure::Invalid(format!("cannot write {}: {e}", path.display()))),
        None => out
            .write_all(rendered.as_bytes())
            .map_err(|e| Failure::Invalid(e.to_string())),
    }
}

fn run(
    config: &Path,
    input: &str,
    mode: Mode,
    threshold: f64,
    output: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let (bytes, model) = load(config)?;
    let text = Text::parse(input, &model.vocabulary)?;
    let protocol = Protocol::new(&model.stack, &text, &model.embedding, model.vacuum_token)?;
    let manifest = RunManifest::new(
        &format!("run --mode {}", mode_name(mode)),
        &bytes,
        &model.vocabulary.render(text.tokens()),
        model.stack.scaling(),
        protocol.space().truncation(),
    );
    let classical = || joint_distribution(&model.stack, text.tokens(), &model.embedding);
    let (dist, report, passed) = match mode {
        Mode::Classical => (classical()?, None, true),
        Mode::Quantum => (protocol.joint_distribution()?, None, true),
        Mode::Compare => {
            let c = classical()?;
            let q = protocol.joint_distribution()?;
            let r = compare(&c, &q, &model.vocabulary);
            let passed = r.passed(threshold);
            (q, Some(r.to_json(threshold)), passed)
        }
    };
    let doc = OutputDocument {
        manifest,
        distribution: Some(distribution_entries(&dist, &model.vocabulary)),
        report,
    };
    emit(&doc, output, out)?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Failed)
    }
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Classical => "classical",
        Mode::Quantum => "quantum",
        Mode::Compare => "compare",
    }
}

#[derive(Serialize)]
struct SampleReport {
    trajectories: u64,
    counts: std::collections::BTreeMap<String, u64>,
    chi_square: Box<RawValue>,
    degrees_of_freedom: usize,
}

fn sample(
    config: &Path,
    input: &str,
    trajectories: u64,
    seed: u64,
    output: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let (bytes, model) = load(config)?;
    let text = Text::parse(input, &model.vocabulary)?;
    let protocol = Protocol::new(&model.stack, &text, &model.embedding, model.vacuum_token)?;
    let counts = protocol.sample(seed, trajectories)?;
    let exact = protocol.joint_distribution()?;
    let (stat, df) = chi_square(&counts, &exact);
    let frequencies: JointDistribution = counts
        .iter()
        .map(|(k, &c)| (k.clone(), c as f64 / trajectories as f64))
        .collect::<Distribution<_>>();

    let mut manifest = RunManifest::new(
        "sample",
        &bytes,
        &model.vocabulary.render(text.tokens()),
        model.stack.scaling(),
        protocol.space().truncation(),
    );
    manifest.seed = Some(seed);
    let report = SampleReport {
        trajectories,
        counts: counts
            .iter()
            .map(|(k, &c)| (model.vocabulary.render(k), c))
            .collect(),
        chi_square: RawValue::from_string(format_probability(stat)).expect("valid number"),
        degrees_of_freedom: df,
    };
    let doc = OutputDocument {
        manifest,
        distribution: Some(distribution_entries(&frequencies, &model.vocabulary)),
        report: Some(serde_json::value::to_raw_value(&report).expect("report serializes")),
    };
    emit(&doc, output, out)
}

fn example(out: &mut dyn Write) -> Result<(), Failure> {
    let report = golden_example()?;
    let io = |e: std::io::Error| Failure::Invalid(e.to_string());
    writeln!(out, "{:<20} {:>24} {:>24} {:>10}  status", "quantity", "closed form", "protocol", "|diff|")
        .map_err(io)?;
    for c in &report.checks {
        writeln!(
            out,
            "{:<20} {:>24} {:>24} {:>10.1e}  {}",
            c.name,
            format_probability(c.expected),
            format_probability(c.actual),
            (c.expected - c.actual).abs(),
            if c.passed() { "ok" } else { "FAIL" }
        )
        .map_err(io)?;
    }
    writeln!(out, "{:<20} {:>24}", "sum of joints", format_probability(report.joint_total)).map_err(io)?;
    if report.passed() {
        writeln!(out, "all checks passed").map_err(io)?;
        Ok(())
    } else {
        writeln!(out, "{} check(s) failed", report.failures().len()).map_err(io)?;
        Err(Failure::Failed)
    }
}

#[derive(Serialize)]
struct ChoiBlock {
    block: usize,
    kraus_operators: usize,
    input_dim: usize,
    output_dim: usize,
    min_eigenvalue: Box<RawValue>,
    completeness_deviation: Box<RawValue>,
    choi_trace_deviation: Box<RawValue>,
    passed: bool,
}

#[derive(Serialize)]
struct ChoiReport {
    max_block: usize,
    tolerance: Box<RawValue>,
    blocks: Vec<ChoiBlock>,
    passed: bool,
}

fn choi(config: &Path, max_block: usize, output: Option<&Path>, out: &mut dyn Write) -> Result<(), Failure> {
    let (bytes, model) = load(config)?;
    let space = FockSpace::new(model.vocabulary.len(), max_block + 1)?;
    let num = |x: f64| RawValue::from_string(format_probability(x)).expect("valid number");
    let mut blocks = Vec::new();
    for (l, block) in model.stack.blocks().iter().enumerate() {
        let chan = QuantumOperation::new(
            block.clone(),
            model.embedding.clone(),
            model.vacuum_token,
            model.stack.scaling(),
            space,
        )?;
        let kraus = chan.kraus_operators(max_block)?;
        let min_eig = kraus.verify_cp()?;
        let completeness = kraus.completeness_deviation();
        let trace_dev = kraus.choi_trace_deviation()?;
        blocks.push(ChoiBlock {
            block: l + 1,
            kraus_operators: kraus.operators().len(),
            input_dim: kraus.input_dim(),
            output_dim: kraus.output_dim(),
            min_eigenvalue: num(min_eig),
            completeness_deviation: num(completeness),
            choi_trace_deviation: num(trace_dev),
            passed: min_eig >= -CPTP_TOL && completeness <= CPTP_TOL && trace_dev <= CPTP_TOL,
        });
    }
    let passed = blocks.iter().all(|b| b.passed);
    let report = ChoiReport {
        max_block,
        tolerance: num(CPTP_TOL),
        blocks,
        passed,
    };
    let doc = OutputDocument {
        manifest: RunManifest::new("choi", &bytes, "", model.stack.scaling(), space.truncation()),
        distribution: None,
        report: Some(serde_json::value::to_raw_value(&report).expect("report serializes")),
    };
    emit(&doc, output, out)?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Failed)
    }
}
