//! Mini-batch online DAgger (scheduled sampling) and the teacher-forcing
//! baseline, both driven by plain SGD.
//!
//! Each epoch: decay alpha (DAgger only), shuffle with an rng derived from
//! `(seed, epoch)`, and for every batch roll each example out under the mixed
//! policy, back-propagate against the true labels and take one SGD step.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalMode};
use crate::gradients::{bptt, forward_trace, total_loss, Gradients, TraceRecord};
use crate::model::{init_params, ModelConfig, ModelParams};
use crate::policy::{decay_step, DecaySchedule, MixedPolicy};
use crate::tasks::SequencePair;

/// Default global-norm clipping threshold.
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Always feed true labels (alpha pinned to 1).
    TeacherForcing,
    /// Feed true labels with probability alpha, decayed per epoch.
    Dagger,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
    pub regime: Regime,
    pub schedule: DecaySchedule,
    pub seed: u64,
    /// Fill `EpochMetrics::wall_time`; when off it is 0 so runs stay
    /// reproducible byte for byte.
    pub record_wall_time: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::InvalidTraining("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidTraining(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::InvalidTraining(format!(
                    "clip_norm must be positive, got {c}"
                )));
            }
        }
        self.schedule.validate()
    }

    /// The schedule actually followed: teacher forcing pins alpha at 1.
    pub fn effective_schedule(&self) -> DecaySchedule {
        match self.regime {
            Regime::TeacherForcing => DecaySchedule::pinned(),
            Regime::Dagger => self.schedule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub alpha: f64,
    /// Mean per-token training loss over the epoch.
    pub mean_loss: f64,
    #[serde(rename = "tf_acc")]
    pub teacher_forced_accuracy: f64,
    #[serde(rename = "fr_acc")]
    pub free_running_accuracy: f64,
    #[serde(rename = "wall_time_s")]
    pub wall_time: f64,
}

/// Where in training a batch sits, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BatchPosition {
    pub epoch: usize,
    pub batch: usize,
}

fn epoch_rng(seed: u64, epoch: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * epoch as u64 + stream);
    rng
}

/// Rolls one example out under the mixed policy; supervision stays on the
/// true labels.
pub fn traverse_collect<R: Rng + ?Sized>(
    params: &ModelParams,
    example: &SequencePair,
    schedule: &DecaySchedule,
    rng: &mut R,
) -> Result<TraceRecord> {
    let mut policy = MixedPolicy::new(*schedule, rng);
    forward_trace(params, &example.x, &example.y, &mut policy)
}

/// One SGD step on the averaged (and optionally clipped) batch gradient.
/// Returns the updated parameters and the mean per-example loss.
pub fn batch_update<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &[SequencePair],
    schedule: &DecaySchedule,
    learning_rate: f64,
    clip_norm: Option<f64>,
    rng: &mut R,
    at: BatchPosition,
) -> Result<(ModelParams, f64)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let diverged = |what: String| Error::Diverged {
        epoch: at.epoch,
        batch: at.batch,
        what,
    };

    let mut grad = Gradients::zeros(*params.config())?;
    let mut loss_sum = 0.0;
    for example in batch {
        let trace = traverse_collect(params, example, schedule, rng).map_err(|e| match e {
            Error::NonFinite { op } => diverged(format!("non-finite value in {op}")),
            e => e,
        })?;
        let loss = total_loss(&trace)?;
        if !loss.is_finite() {
            return Err(diverged(format!("loss is {loss}")));
        }
        loss_sum += loss;
        grad.add_assign(&bptt(params, &trace)?);
    }
    grad.scale(1.0 / batch.len() as f64);

    let norm = grad.l2_norm();
    if !norm.is_finite() {
        return Err(diverged(format!("gradient norm is {norm}")));
    }
    if let Some(limit) = clip_norm {
        if norm > limit {
            grad.scale(limit / norm);
        }
    }

    let mut next = params.clone();
    for ((_, w), (_, g)) in next.blocks_mut().into_iter().zip(grad.blocks()) {
        for (wi, gi) in w.iter_mut().zip(g) {
            *wi -= learning_rate * gi;
        }
    }
    if !next.is_finite() {
        return Err(diverged("parameters became non-finite".into()));
    }
    Ok((next, loss_sum / batch.len() as f64))
}

/// Trains from `init_params(model_config, config.seed)`.
pub fn train(
    dataset: &[SequencePair],
    config: &TrainConfig,
    model_config: ModelConfig,
) -> Result<(ModelParams, Vec<EpochMetrics>)> {
    let params = init_params(model_config, config.seed)?;
    train_from(params, dataset, config, |_| {})
}

/// Trains starting from `params`, handing each epoch's metrics to
/// `on_epoch` as soon as they are known.
pub fn train_from<F>(
    mut params: ModelParams,
    dataset: &[SequencePair],
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<(ModelParams, Vec<EpochMetrics>)>
where
    F: FnMut(&EpochMetrics),
{
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    // canonical order, so results depend only on the dataset's contents
    let mut canonical = dataset.to_vec();
    canonical.sort();

    let mut schedule = config.effective_schedule();
    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        schedule = decay_step(schedule);

        let mut order = canonical.clone();
        order.shuffle(&mut epoch_rng(config.seed, epoch, 0));
        let mut mix_rng = epoch_rng(config.seed, epoch, 1);

        let mut loss_sum = 0.0;
        let mut tokens = 0usize;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let at = BatchPosition {
                epoch,
                batch: batch_idx + 1,
            };
            let (next, batch_loss) = batch_update(
                &params,
                batch,
                &schedule,
                config.learning_rate,
                config.clip_norm,
                &mut mix_rng,
                at,
            )?;
            params = next;
            loss_sum += batch_loss * batch.len() as f64;
            tokens += batch.iter().map(|p| p.y.len()).sum::<usize>();
        }

        // finite weights can still overflow the logits
        let last_batch = order.len().div_ceil(config.batch_size);
        let eval = |mode| {
            evaluate(&canonical, &params, mode).map_err(|e| match e {
                Error::NonFinite { op } => Error::Diverged {
                    epoch,
                    batch: last_batch,
                    what: format!("non-finite value in {op} while evaluating"),
                },
                e => e,
            })
        };
        let tf = eval(EvalMode::TeacherForced)?;
        let fr = eval(EvalMode::FreeRunning)?;
        let m = EpochMetrics {
            epoch,
            alpha: schedule.alpha,
            mean_loss: if tokens == 0 {
                0.0
            } else {
                loss_sum / tokens as f64
            },
            teacher_forced_accuracy: tf.accuracy(),
            free_running_accuracy: fr.accuracy(),
            wall_time: if config.record_wall_time {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        on_epoch(&m);
        metrics.push(m);
    }
    Ok((params, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::free_run;
    use crate::policy::ReferencePolicy;
    use crate::tasks::{generate_dataset, TaskKind, TaskSpec};

    fn copy_data(n: usize, len: usize, seed: u64) -> Vec<SequencePair> {
        generate_dataset(&TaskSpec {
            kind: TaskKind::Copy,
            len,
            delay: 0,
            vocab: 8,
            num_examples: n,
            seed,
        })
        .unwrap()
    }

    fn config(regime: Regime, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            learning_rate: 0.5,
            clip_norm: Some(DEFAULT_CLIP_NORM),
            regime,
            schedule: DecaySchedule::new(1.0, 0.9, 0.02).unwrap(),
            seed: 3,
            record_wall_time: false,
        }
    }

    #[test]
    fn alpha_one_rollout_is_teacher_forcing() {
        let p = init_params(ModelConfig::transducer(8, 8, 8), 1).unwrap();
        let ex = &copy_data(1, 6, 2)[0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = traverse_collect(&p, ex, &DecaySchedule::pinned(), &mut rng).unwrap();
        let b = forward_trace(&p, &ex.x, &ex.y, &mut ReferencePolicy).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn alpha_zero_rollout_follows_greedy_prefix() {
        let p = init_params(ModelConfig::transducer(8, 8, 8), 1).unwrap();
        let ex = &copy_data(1, 6, 2)[0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = DecaySchedule::new(0.0, 1.0, 0.0).unwrap();
        let trace = traverse_collect(&p, ex, &s, &mut rng).unwrap();
        let run = free_run(&p, &ex.x, 6).unwrap();
        let mut expected = vec![crate::model::BOS];
        expected.extend_from_slice(&run.tokens[..5]);
        assert_eq!(trace.fed_actions, expected);
        assert_eq!(trace.states, run.states);
    }

    #[test]
    fn mixed_rollout_is_reproducible() {
        let p = init_params(ModelConfig::transducer(8, 8, 8), 1).unwrap();
        let ex = &copy_data(1, 9, 2)[0];
        let s = DecaySchedule::new(0.5, 1.0, 0.0).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            traverse_collect(&p, ex, &s, &mut rng).unwrap().fed_actions
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_length_batch_leaves_params_unchanged() {
        let p = init_params(ModelConfig::transducer(4, 5, 5), 0).unwrap();
        let batch = vec![
            SequencePair {
                x: vec![],
                y: vec![]
            };
            3
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (next, loss) = batch_update(
            &p,
            &batch,
            &DecaySchedule::pinned(),
            0.5,
            Some(5.0),
            &mut rng,
            BatchPosition::default(),
        )
        .unwrap();
        assert_eq!(next, p);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn single_example_update_is_scaled_gradient() {
        let p = init_params(ModelConfig::transducer(6, 8, 8), 4).unwrap();
        let ex = copy_data(1, 5, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (next, _) = batch_update(
            &p,
            &ex,
            &DecaySchedule::pinned(),
            0.1,
            Some(f64::INFINITY),
            &mut rng,
            BatchPosition::default(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (unclipped, _) = batch_update(
            &p,
            &ex,
            &DecaySchedule::pinned(),
            0.1,
            None,
            &mut rng,
            BatchPosition::default(),
        )
        .unwrap();
        assert_eq!(next, unclipped);

        let trace = forward_trace(&p, &ex[0].x, &ex[0].y, &mut ReferencePolicy).unwrap();
        let g = bptt(&p, &trace).unwrap();
        for (((_, w0), (_, w1)), (_, gi)) in
            p.blocks().into_iter().zip(next.blocks()).zip(g.blocks())
        {
            for ((a, b), d) in w0.iter().zip(w1).zip(gi) {
                assert!((a - 0.1 * d - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn clipping_bounds_the_step() {
        let p = init_params(ModelConfig::transducer(6, 8, 8), 4).unwrap();
        let ex = copy_data(4, 5, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (next, _) = batch_update(
            &p,
            &ex,
            &DecaySchedule::pinned(),
            1.0,
            Some(1e-3),
            &mut rng,
            BatchPosition::default(),
        )
        .unwrap();
        let step: f64 = p
            .blocks()
            .into_iter()
            .zip(next.blocks())
            .flat_map(|((_, a), (_, b))| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)))
            .sum::<f64>()
            .sqrt();
        assert!((step - 1e-3).abs() < 1e-12, "{step}");
    }

    #[test]
    fn non_finite_parameters_are_reported() {
        let mut p = init_params(ModelConfig::transducer(4, 8, 8), 0).unwrap();
        p.w_o[(0, 0)] = f64::NAN;
        let ex = copy_data(2, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = batch_update(
            &p,
            &ex,
            &DecaySchedule::pinned(),
            0.1,
            None,
            &mut rng,
            BatchPosition { epoch: 4, batch: 2 },
        )
        .unwrap_err();
        match err {
            Error::Diverged {
                epoch: 4, batch: 2, ..
            } => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn huge_learning_rate_diverges_with_position() {
        let data = copy_data(16, 5, 3);
        let cfg = TrainConfig {
            learning_rate: 1e308,
            clip_norm: None,
            ..config(Regime::TeacherForcing, 5)
        };
        match train(&data, &cfg, ModelConfig::transducer(8, 8, 8)) {
            Err(Error::Diverged {
                epoch: 1, batch, ..
            }) => assert!(batch >= 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let data = copy_data(4, 3, 1);
        let mc = ModelConfig::transducer(4, 8, 8);
        let (p, m) = train(&data, &config(Regime::Dagger, 0), mc).unwrap();
        assert_eq!(p, init_params(mc, 3).unwrap());
        assert!(m.is_empty());
        assert_eq!(
            train(&[], &config(Regime::Dagger, 1), mc).unwrap_err(),
            Error::EmptyDataset
        );
    }

    #[test]
    fn training_is_deterministic_and_order_independent() {
        let data = copy_data(24, 4, 5);
        let mc = ModelConfig::transducer(8, 8, 8);
        let cfg = config(Regime::Dagger, 4);
        let a = train(&data, &cfg, mc).unwrap();
        let b = train(&data, &cfg, mc).unwrap();
        assert_eq!(a, b);
        let mut reversed = data.clone();
        reversed.reverse();
        assert_eq!(train(&reversed, &cfg, mc).unwrap(), a);
    }

    #[test]
    fn alpha_follows_decay_recurrence() {
        let data = copy_data(8, 3, 5);
        let mc = ModelConfig::transducer(4, 8, 8);
        let cfg = config(Regime::Dagger, 6);
        let (_, m) = train(&data, &cfg, mc).unwrap();
        let mut s = cfg.schedule;
        for row in &m {
            s = decay_step(s);
            assert_eq!(row.alpha, s.alpha);
            assert_eq!(row.wall_time, 0.0);
        }
        let (_, tf) = train(&data, &config(Regime::TeacherForcing, 3), mc).unwrap();
        assert!(tf.iter().all(|r| r.alpha == 1.0));
    }

    #[test]
    fn pinned_dagger_equals_teacher_forcing() {
        let data = copy_data(16, 4, 5);
        let mc = ModelConfig::transducer(8, 8, 8);
        let tf = train(&data, &config(Regime::TeacherForcing, 3), mc).unwrap();
        let mut dg = config(Regime::Dagger, 3);
        dg.schedule = DecaySchedule::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(train(&data, &dg, mc).unwrap(), tf);
    }

    #[test]
    fn loss_descends_early_in_teacher_forcing() {
        let data = copy_data(8, 4, 12);
        let mc = ModelConfig::transducer(8, 8, 8);
        let mut params = init_params(mc, 0).unwrap();
        let loss = |p: &ModelParams| -> f64 {
            data.iter()
                .map(|ex| {
                    let t = forward_trace(p, &ex.x, &ex.y, &mut ReferencePolicy).unwrap();
                    total_loss(&t).unwrap()
                })
                .sum()
        };
        let start = loss(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut prev = start;
        for _ in 0..50 {
            params = batch_update(
                &params,
                &data,
                &DecaySchedule::pinned(),
                0.1,
                None,
                &mut rng,
                BatchPosition::default(),
            )
            .unwrap()
            .0;
            let now = loss(&params);
            assert!(now < prev, "{now} >= {prev}");
            prev = now;
        }
        assert!(prev < start);
    }

    #[test]
    fn invalid_train_config() {
        let data = copy_data(4, 3, 1);
        let mc = ModelConfig::transducer(4, 8, 8);
        let mut c = config(Regime::Dagger, 1);
        c.batch_size = 0;
        assert!(train(&data, &c, mc).is_err());
        let mut c = config(Regime::Dagger, 1);
        c.learning_rate = 0.0;
        assert!(train(&data, &c, mc).is_err());
        let mut c = config(Regime::Dagger, 1);
        c.clip_norm = Some(-1.0);
        assert!(train(&data, &c, mc).is_err());
    }
}
