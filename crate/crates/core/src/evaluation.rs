//! Test-time decoding and error measurement.
//!
//! Free-running decoding replaces the reference policy by the learned one:
//! every fed action is the model's own previous prediction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::forward_trace;
use crate::model::{cell_step, encode_start, greedy_action, HiddenState, ModelParams, BOS};
use crate::numeric::RealVector;
use crate::policy::ReferencePolicy;
use crate::tasks::{generate_dataset, SequencePair, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    TeacherForced,
    FreeRunning,
}

/// Per-position token error rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub mode: EvalMode,
    pub per_step_error: Vec<f64>,
    pub mean_error: f64,
    pub sequence_exact_match: f64,
}

impl ErrorReport {
    pub fn accuracy(&self) -> f64 {
        1.0 - self.mean_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompoundingCurve {
    pub lengths: Vec<usize>,
    pub mean_errors: Vec<f64>,
}

/// Tokens and states of a free-running decode.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeRun {
    pub tokens: Vec<usize>,
    /// `h_0..h_T`.
    pub states: Vec<HiddenState>,
}

pub fn free_run(params: &ModelParams, x: &[usize], steps: usize) -> Result<FreeRun> {
    let feed = params.config().feed_input_tokens;
    if feed && x.len() < steps {
        return Err(Error::LengthMismatch {
            x_len: x.len(),
            y_len: steps,
        });
    }
    let mut states = vec![encode_start(params, x)?];
    let mut tokens = Vec::with_capacity(steps);
    let mut prev = BOS;
    for t in 0..steps {
        let x_t = feed.then(|| x[t]);
        let next = cell_step(params, &states[t], prev, x_t)?;
        prev = greedy_action(&next, params)?;
        tokens.push(prev);
        states.push(next);
    }
    Ok(FreeRun { tokens, states })
}

/// Greedy decode of `steps` tokens, never consulting a true label.
pub fn free_run_decode(params: &ModelParams, x: &[usize], steps: usize) -> Result<Vec<usize>> {
    Ok(free_run(params, x, steps)?.tokens)
}

fn predictions(params: &ModelParams, pair: &SequencePair, mode: EvalMode) -> Result<Vec<usize>> {
    match mode {
        EvalMode::TeacherForced => {
            Ok(forward_trace(params, &pair.x, &pair.y, &mut ReferencePolicy)?.predictions())
        }
        EvalMode::FreeRunning => free_run_decode(params, &pair.x, pair.y.len()),
    }
}

/// Hamming error per position across `dataset`.
pub fn evaluate(
    dataset: &[SequencePair],
    params: &ModelParams,
    mode: EvalMode,
) -> Result<ErrorReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let max_len = dataset.iter().map(|p| p.y.len()).max().unwrap_or(0);
    let mut wrong = vec![0usize; max_len];
    let mut seen = vec![0usize; max_len];
    let mut exact = 0usize;
    for pair in dataset {
        let pred = predictions(params, pair, mode)?;
        let mut all_right = true;
        for (t, (p, y)) in pred.iter().zip(&pair.y).enumerate() {
            seen[t] += 1;
            if p != y {
                wrong[t] += 1;
                all_right = false;
            }
        }
        if all_right {
            exact += 1;
        }
    }
    let per_step_error: Vec<f64> = wrong
        .iter()
        .zip(&seen)
        .map(|(&w, &s)| w as f64 / s as f64)
        .collect();
    let mean_error = if per_step_error.is_empty() {
        0.0
    } else {
        per_step_error.iter().sum::<f64>() / per_step_error.len() as f64
    };
    Ok(ErrorReport {
        mode,
        per_step_error,
        mean_error,
        sequence_exact_match: exact as f64 / dataset.len() as f64,
    })
}

/// Free-running mean error on fresh data at each length of the task family.
pub fn compounding_curve(
    params: &ModelParams,
    template: &TaskSpec,
    lengths: &[usize],
) -> Result<CompoundingCurve> {
    if lengths.is_empty() {
        return Err(Error::InvalidTask("curve needs at least one length".into()));
    }
    if lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidTask(format!(
            "curve lengths must be strictly increasing, got {lengths:?}"
        )));
    }
    if let Some(&bad) = lengths.iter().find(|&&l| l < template.delay + 1) {
        return Err(Error::InvalidTask(format!(
            "curve length {bad} is shorter than delay {} + 1",
            template.delay
        )));
    }
    let mut mean_errors = Vec::with_capacity(lengths.len());
    for &len in lengths {
        let data = generate_dataset(&template.with_len(len))?;
        mean_errors.push(evaluate(&data, params, EvalMode::FreeRunning)?.mean_error);
    }
    Ok(CompoundingCurve {
        lengths: lengths.to_vec(),
        mean_errors,
    })
}

/// Cosine similarity of two states; 0 when either is the zero vector.
pub fn state_similarity(a: &HiddenState, b: &HiddenState) -> Result<f64> {
    cosine(&a.h, &b.h)
}

fn cosine(a: &RealVector, b: &RealVector) -> Result<f64> {
    let dot = a.dot(b).map_err(|_| Error::DimensionMismatch {
        op: "state_similarity",
        left: format!("state[{}]", a.len()),
        right: format!("state[{}]", b.len()),
    })?;
    let norms = a.norm() * b.norm();
    if norms == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / norms).clamp(-1.0, 1.0))
}
