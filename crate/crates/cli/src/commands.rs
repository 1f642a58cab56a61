//! The four subcommands.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use dagger_rnn::gradients::STANDARD_SEEDS;
use dagger_rnn::tasks::{format_dataset, parse_dataset};
use dagger_rnn::{
    compounding_curve, evaluate, generate_dataset, grad_check, init_params, solve_decay_factor,
    train_from, CompoundingCurve, DecaySchedule, EncoderMode, ErrorReport, EvalMode,
    GradCheckSetup, ModelConfig, Regime, SequencePair, TaskSpec, TrainConfig,
};
use serde::Serialize;

use crate::args::{Command, EvalArgs, GenArgs, GradcheckArgs, ModeArg, TrainArgs};
use crate::checkpoint::{Checkpoint, CheckpointError, TrainSummary};
use crate::{EXIT_CHECK_FAILED, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("{path}: {source}")]
    Dataset {
        path: PathBuf,
        #[source]
        source: dagger_rnn::Error,
    },
    #[error(transparent)]
    Model(dagger_rnn::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        }
    }
}

/// Configuration problems are the caller's fault; everything else is a
/// runtime failure.
impl From<dagger_rnn::Error> for CliError {
    fn from(e: dagger_rnn::Error) -> Self {
        use dagger_rnn::Error as E;
        match e {
            E::InvalidConfig(_)
            | E::InvalidSchedule(_)
            | E::InvalidTask(_)
            | E::InvalidTraining(_) => CliError::Usage(e.to_string()),
            e => CliError::Model(e),
        }
    }
}

/// One line of `eval` output.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputRecord {
    ErrorReport(ErrorReport),
    CompoundingCurve(CompoundingCurve),
}

pub(crate) fn execute(
    cmd: Command,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, CliError> {
    match cmd {
        Command::Gen(a) => gen(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Gradcheck(a) => gradcheck(a, out, err),
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn stdout_err(source: io::Error) -> CliError {
    CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    }
}

fn read_dataset(path: &Path) -> Result<Vec<SequencePair>, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_dataset(&text).map_err(|source| CliError::Dataset {
        path: path.to_path_buf(),
        source,
    })
}

fn json_line<T: Serialize>(out: &mut dyn Write, value: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")?;
    out.flush()
}

fn gen(a: GenArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let spec = TaskSpec {
        kind: a.task.into(),
        len: a.len,
        delay: a.delay,
        vocab: a.vocab,
        num_examples: a.n,
        seed: a.seed,
    };
    let data = generate_dataset(&spec)?;
    fs::write(&a.out, format_dataset(&data)).map_err(io_err(&a.out))?;
    writeln!(out, "wrote {} examples to {}", data.len(), a.out.display()).map_err(stdout_err)?;
    Ok(EXIT_OK)
}

/// Smallest vocabulary covering `tokens`, never below BOS + PAD + one token.
fn inferred_vocab<'a>(tokens: impl Iterator<Item = &'a usize>) -> usize {
    tokens.map(|t| t + 1).max().unwrap_or(0).max(3)
}

fn train_schedule(a: &TrainArgs) -> Result<DecaySchedule, CliError> {
    let p = match (a.p, a.alpha_end) {
        (Some(p), None) => p,
        (None, Some(end)) => solve_decay_factor(a.alpha, end, a.epochs)?,
        (None, None) => {
            return Err(CliError::Usage(
                "--regime dagger needs a decay: give --p or --alpha-end".into(),
            ))
        }
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "give either --p or --alpha-end, not both".into(),
            ))
        }
    };
    Ok(DecaySchedule::new(a.alpha, p, a.alpha_min)?)
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let regime: Regime = a.regime.into();
    let schedule = match regime {
        Regime::TeacherForcing => DecaySchedule::pinned(),
        Regime::Dagger => train_schedule(&a)?,
    };
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        clip_norm: a.clip.0,
        regime,
        schedule,
        seed: a.seed,
        record_wall_time: a.wall_time,
    };
    config.validate()?;

    let data = read_dataset(&a.data)?;
    if data.is_empty() {
        return Err(CliError::Dataset {
            path: a.data.clone(),
            source: dagger_rnn::Error::EmptyDataset,
        });
    }
    let input_vocab = a
        .vocab
        .unwrap_or_else(|| inferred_vocab(data.iter().flat_map(|p| &p.x)));
    let output_vocab = a
        .vocab
        .unwrap_or_else(|| inferred_vocab(data.iter().flat_map(|p| &p.y)));
    let model_config = ModelConfig {
        hidden_dim: a.hidden,
        input_vocab,
        output_vocab,
        encoder_mode: a.encoder.into(),
        feed_input_tokens: !a.no_feed_inputs,
    };
    let params = init_params(model_config, a.seed)?;

    let mut sink: Box<dyn Write + '_> = match &a.metrics {
        Some(path) => Box::new(BufWriter::new(
            fs::File::create(path).map_err(io_err(path))?,
        )),
        None => Box::new(&mut *out),
    };
    let mut write_failure: Option<io::Error> = None;
    let result = train_from(params, &data, &config, |m| {
        if write_failure.is_none() {
            if let Err(e) = json_line(&mut sink, m) {
                write_failure = Some(e);
            }
        }
    });
    drop(sink);
    if let Some(source) = write_failure {
        return Err(CliError::Io {
            path: a.metrics.clone().unwrap_or_else(|| "<stdout>".into()),
            source,
        });
    }
    let (params, metrics) = result?;

    let checkpoint = Checkpoint {
        params,
        train_config: TrainSummary::from_config(&config),
        rng_seed: a.seed,
        epoch_reached: metrics.len(),
    };
    fs::write(&a.out, checkpoint.to_json()).map_err(io_err(&a.out))?;
    Ok(EXIT_OK)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Checkpoint::from_json(&text).map_err(|source| CliError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    if a.data.is_none() && a.curve.is_none() {
        return Err(CliError::Usage(
            "eval needs --data, --curve, or both".into(),
        ));
    }
    let params = load_checkpoint(&a.checkpoint)?.params;

    if let Some(path) = &a.data {
        let data = read_dataset(path)?;
        let modes: &[EvalMode] = match a.mode {
            ModeArg::Teacher => &[EvalMode::TeacherForced],
            ModeArg::Free => &[EvalMode::FreeRunning],
            ModeArg::Both => &[EvalMode::TeacherForced, EvalMode::FreeRunning],
        };
        for &mode in modes {
            let report = evaluate(&data, &params, mode).map_err(|source| CliError::Dataset {
                path: path.clone(),
                source,
            })?;
            json_line(out, &OutputRecord::ErrorReport(report)).map_err(stdout_err)?;
        }
    }

    if let Some(lengths) = &a.curve {
        let task = a
            .task
            .ok_or_else(|| CliError::Usage("--curve needs --task".into()))?;
        if params.config().encoder_mode == EncoderMode::EncodingRnn {
            return Err(CliError::Usage(
                "--curve needs a static-start model; the encoding RNN is tied to its training length"
                    .into(),
            ));
        }
        let template = TaskSpec {
            kind: task.into(),
            len: lengths.first().copied().unwrap_or(0),
            delay: a.delay,
            vocab: a.vocab.unwrap_or(params.config().output_vocab),
            num_examples: a.n,
            seed: a.seed,
        };
        let curve = compounding_curve(&params, &template, lengths)?;
        json_line(out, &OutputRecord::CompoundingCurve(curve)).map_err(stdout_err)?;
    }
    Ok(EXIT_OK)
}

fn describe(setup: &GradCheckSetup) -> String {
    let c = &setup.config;
    format!(
        "H={} V_x={} V_y={} T={} {} {}",
        c.hidden_dim,
        c.input_vocab,
        c.output_vocab,
        setup.seq_len,
        match c.encoder_mode {
            EncoderMode::StaticStart => "static",
            EncoderMode::EncodingRnn => "rnn",
        },
        if c.feed_input_tokens { "fed" } else { "unfed" },
    )
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    if a.tolerance.is_nan() || a.tolerance <= 0.0 {
        return Err(CliError::Usage(format!(
            "--tolerance must be positive, got {}",
            a.tolerance
        )));
    }
    let seeds: Vec<u64> = match a.seed {
        Some(s) => vec![s],
        None => STANDARD_SEEDS.to_vec(),
    };
    let mut failures = 0;
    for seed in seeds {
        let setup = GradCheckSetup::standard(seed);
        let report = grad_check(&setup, seed, a.tolerance)?;
        let blocks: Vec<String> = report
            .per_block
            .iter()
            .map(|(name, e)| format!("{name}={e:.3e}"))
            .collect();
        writeln!(
            out,
            "seed {seed}: {} max_rel_err={:.3e} tol={:.1e} ({}) {}",
            if report.passed { "PASS" } else { "FAIL" },
            report.max_relative_error,
            report.tolerance,
            describe(&setup),
            blocks.join(" "),
        )
        .map_err(stdout_err)?;
        if !report.passed {
            failures += 1;
        }
    }
    if failures > 0 {
        let _ = writeln!(err, "gradient check failed on {failures} seed(s)");
        return Ok(EXIT_CHECK_FAILED);
    }
    Ok(EXIT_OK)
}
