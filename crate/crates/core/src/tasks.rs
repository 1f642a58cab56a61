//! Synthetic transduction tasks and their line-oriented file format.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Target emitted by delayed echo before the delay has elapsed.
pub const PAD: usize = 1;

/// One training example.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SequencePair {
    pub x: Vec<usize>,
    pub y: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Copy,
    Reverse,
    DelayedEcho,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub len: usize,
    /// Only used by delayed echo.
    pub delay: usize,
    /// Token count including BOS.
    pub vocab: usize,
    pub num_examples: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 3 {
            return Err(Error::InvalidTask(format!(
                "vocab must be >= 3 (BOS plus two content tokens), got {}",
                self.vocab
            )));
        }
        if self.kind == TaskKind::DelayedEcho && !(1 <= self.delay && self.delay < self.len) {
            return Err(Error::InvalidTask(format!(
                "delayed echo needs 1 <= delay < len, got delay {} with len {}",
                self.delay, self.len
            )));
        }
        Ok(())
    }

    /// Same task family at a different length.
    pub fn with_len(self, len: usize) -> Self {
        TaskSpec { len, ..self }
    }
}

fn transduce(kind: TaskKind, delay: usize, x: &[usize]) -> Vec<usize> {
    match kind {
        TaskKind::Copy => x.to_vec(),
        TaskKind::Reverse => x.iter().rev().copied().collect(),
        TaskKind::DelayedEcho => (0..x.len())
            .map(|t| if t < delay { PAD } else { x[t - delay] })
            .collect(),
    }
}

/// Inputs are uniform over the content tokens `[1, vocab)`.
pub fn generate_dataset(spec: &TaskSpec) -> Result<Vec<SequencePair>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.num_examples)
        .map(|_| {
            let x: Vec<usize> = (0..spec.len)
                .map(|_| rng.gen_range(1..spec.vocab))
                .collect();
            let y = transduce(spec.kind, spec.delay, &x);
            SequencePair { x, y }
        })
        .collect())
}

/// Deterministic shuffled split into `(train, eval)`.
pub fn split_dataset(
    data: &[SequencePair],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<SequencePair>, Vec<SequencePair>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidTask(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (data.len() as f64 * train_fraction).round() as usize;
    let (a, b) = idx.split_at(n_train);
    Ok((
        a.iter().map(|&i| data[i].clone()).collect(),
        b.iter().map(|&i| data[i].clone()).collect(),
    ))
}

fn join_tokens(out: &mut String, tokens: &[usize]) {
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{t}").expect("writing to a String");
    }
}

/// `x tokens<TAB>y tokens\n` per example.
pub fn format_dataset(data: &[SequencePair]) -> String {
    let mut out = String::new();
    for pair in data {
        join_tokens(&mut out, &pair.x);
        out.push('\t');
        join_tokens(&mut out, &pair.y);
        out.push('\n');
    }
    out
}

fn parse_tokens(field: &str, line: usize) -> Result<Vec<usize>> {
    field
        .split_ascii_whitespace()
        .map(|tok| {
            tok.parse::<usize>().map_err(|e| Error::Parse {
                line,
                msg: format!("bad token {tok:?}: {e}"),
            })
        })
        .collect()
}

pub fn parse_dataset(text: &str) -> Result<Vec<SequencePair>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.is_empty() {
            continue;
        }
        let (xs, ys) = raw.split_once('\t').ok_or_else(|| Error::Parse {
            line,
            msg: "expected `x tokens<TAB>y tokens`".into(),
        })?;
        out.push(SequencePair {
            x: parse_tokens(xs, line)?,
            y: parse_tokens(ys, line)?,
        });
    }
    Ok(out)
}
