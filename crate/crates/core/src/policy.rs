//! Reference, learned and stochastically mixed action selection, and the
//! multiplicative decay of the true-label probability.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lower bound for the true-label probability.
pub const DEFAULT_ALPHA_MIN: f64 = 0.02;

/// Probability `alpha` of feeding the true label, decayed by `p` per epoch
/// and never below `alpha_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySchedule {
    pub alpha: f64,
    pub p: f64,
    pub alpha_min: f64,
}

impl DecaySchedule {
    pub fn new(alpha: f64, p: f64, alpha_min: f64) -> Result<Self> {
        let s = DecaySchedule {
            alpha,
            p,
            alpha_min,
        };
        s.validate()?;
        Ok(s)
    }

    /// alpha = 1 forever. Teacher forcing.
    pub fn pinned() -> Self {
        DecaySchedule {
            alpha: 1.0,
            p: 1.0,
            alpha_min: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_min) || !(self.alpha_min..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidSchedule(format!(
                "need 0 <= alpha_min <= alpha <= 1, got alpha_min={} alpha={}",
                self.alpha_min, self.alpha
            )));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "decay factor p must lie in (0, 1], got {}",
                self.p
            )));
        }
        Ok(())
    }
}

/// `alpha' = max(alpha·p, alpha_min)`.
pub fn decay_step(schedule: DecaySchedule) -> DecaySchedule {
    DecaySchedule {
        alpha: (schedule.alpha * schedule.p).max(schedule.alpha_min),
        ..schedule
    }
}

/// Decay factor taking `alpha_start` to `alpha_end` in `epochs` steps.
pub fn solve_decay_factor(alpha_start: f64, alpha_end: f64, epochs: usize) -> Result<f64> {
    if !(alpha_end > 0.0 && alpha_end < alpha_start && alpha_start <= 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "need 0 < alpha_end < alpha_start <= 1, got {alpha_start} -> {alpha_end}"
        )));
    }
    if epochs < 1 {
        return Err(Error::InvalidSchedule("epochs must be >= 1".into()));
    }
    Ok((alpha_end / alpha_start).powf(1.0 / epochs as f64))
}

/// Audit record of one coin flip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyMixDraw {
    pub beta: f64,
    pub chose_true: bool,
}

/// The reference policy: the true label at step `t`.
pub fn reference_action(targets: &[usize], t: usize) -> Result<usize> {
    targets.get(t).copied().ok_or(Error::IndexOutOfRange {
        index: t,
        len: targets.len(),
    })
}

/// Draws `β ~ U[0, 1)` and feeds the true token iff `β < alpha`.
pub fn mixed_action<R: Rng + ?Sized>(
    schedule: &DecaySchedule,
    rng: &mut R,
    true_token: usize,
    predicted_token: usize,
) -> (usize, PolicyMixDraw) {
    let beta: f64 = rng.gen();
    let chose_true = beta < schedule.alpha;
    let token = if chose_true {
        true_token
    } else {
        predicted_token
    };
    (token, PolicyMixDraw { beta, chose_true })
}

/// Chooses the previous action fed into the cell at each step.
///
/// `step` is 1-based; at step 1 both candidates are BOS.
pub trait ActionSource {
    fn choose(&mut self, step: usize, true_prev: usize, predicted_prev: usize) -> usize;
}

/// Always feeds the true label.
#[derive(Debug, Default, Clone, Copy)]
pub struct ReferencePolicy;

impl ActionSource for ReferencePolicy {
    fn choose(&mut self, _step: usize, true_prev: usize, _predicted_prev: usize) -> usize {
        true_prev
    }
}

/// Always feeds the model's own greedy prediction.
#[derive(Debug, Default, Clone, Copy)]
pub struct LearnedPolicy;

impl ActionSource for LearnedPolicy {
    fn choose(&mut self, _step: usize, _true_prev: usize, predicted_prev: usize) -> usize {
        predicted_prev
    }
}

/// Scheduled-sampling mix of the two, one independent draw per step.
pub struct MixedPolicy<'a, R: Rng + ?Sized> {
    schedule: DecaySchedule,
    rng: &'a mut R,
    draws: Vec<PolicyMixDraw>,
}

impl<'a, R: Rng + ?Sized> MixedPolicy<'a, R> {
    pub fn new(schedule: DecaySchedule, rng: &'a mut R) -> Self {
        MixedPolicy {
            schedule,
            rng,
            draws: Vec::new(),
        }
    }

    pub fn draws(&self) -> &[PolicyMixDraw] {
        &self.draws
    }
}

impl<R: Rng + ?Sized> ActionSource for MixedPolicy<'_, R> {
    fn choose(&mut self, _step: usize, true_prev: usize, predicted_prev: usize) -> usize {
        let (token, draw) = mixed_action(&self.schedule, self.rng, true_prev, predicted_prev);
        self.draws.push(draw);
        token
    }
}

/// Replays a recorded action list, ignoring both candidates.
#[derive(Debug, Clone)]
pub struct FrozenActions<'a>(pub &'a [usize]);

impl ActionSource for FrozenActions<'_> {
    fn choose(&mut self, step: usize, _true_prev: usize, _predicted_prev: usize) -> usize {
        self.0[step - 1]
    }
}
