//! Recurrent sequence prediction viewed as learning to search.
//!
//! Hidden vectors of a tanh RNN are the states of a continuous search space,
//! the cell is the transition function, and greedy decoding is the learned
//! policy. The same model can be trained under teacher forcing (states drawn
//! from the reference policy) or under online DAgger / scheduled sampling,
//! which feeds the model's own predictions with growing probability while
//! still supervising with the true labels.
//!
//! Modules, bottom up:
//! - [`numeric`]: vectors, matrices, stable softmax and log-loss
//! - [`model`]: cell, start-state encoder, output head, greedy action
//! - [`gradients`]: forward traces, BPTT, finite-difference oracle
//! - [`policy`]: reference / learned / mixed policies and alpha decay
//! - [`training`]: the mini-batch training loop
//! - [`tasks`]: copy, reverse and delayed-echo datasets
//! - [`evaluation`]: free-running decoding, error reports, compounding curves

pub mod error;
pub mod evaluation;
pub mod gradients;
pub mod model;
pub mod numeric;
pub mod policy;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
pub use evaluation::{
    compounding_curve, evaluate, free_run, free_run_decode, state_similarity, CompoundingCurve,
    ErrorReport, EvalMode, FreeRun,
};
pub use gradients::{
    bptt, finite_diff_grad, forward_trace, grad_check, total_loss, GradCheckReport, GradCheckSetup,
    Gradients, TraceRecord,
};
pub use model::{
    cell_step, encode_start, greedy_action, init_params, output_distribution, EncoderMode,
    HiddenState, ModelConfig, ModelParams, BOS,
};
pub use numeric::{RealMatrix, RealVector};
pub use policy::{decay_step, mixed_action, solve_decay_factor, DecaySchedule, PolicyMixDraw};
pub use tasks::{generate_dataset, split_dataset, SequencePair, TaskKind, TaskSpec};
pub use training::{train, train_from, EpochMetrics, Regime, TrainConfig};
