//! The recurrent cell, start-state encoder and output head.
//!
//! Hidden vectors are the states of a continuous search space; the cell is
//! the transition function and [`greedy_action`] is the learned policy.
//!
//! The cell is `h_t = tanh(W_h·h_{t−1} + E_y[:, y_{t−1}] + E_x[:, x_t] + b)`,
//! where the `E_x` term is present only when `feed_input_tokens` is set.
//! Output token 0 is reserved as BOS, the pseudo-action fed at the first step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{argmax_tiebreak, matvec, softmax_stable, RealMatrix, RealVector};

/// Reserved begin-of-sequence output token.
pub const BOS: usize = 0;

/// How the start state `h_0` is produced from the input sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    /// Trainable start vector; inputs are consumed per step.
    StaticStart,
    /// A separate tanh RNN reads the whole input; its final state is `h_0`.
    EncodingRnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub input_vocab: usize,
    pub output_vocab: usize,
    pub encoder_mode: EncoderMode,
    pub feed_input_tokens: bool,
}

impl ModelConfig {
    /// Transducer configuration: static start, inputs fed each step.
    pub fn transducer(hidden_dim: usize, input_vocab: usize, output_vocab: usize) -> Self {
        ModelConfig {
            hidden_dim,
            input_vocab,
            output_vocab,
            encoder_mode: EncoderMode::StaticStart,
            feed_input_tokens: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim < 1 {
            return Err(Error::InvalidConfig("hidden_dim must be >= 1".into()));
        }
        if self.input_vocab < 2 {
            return Err(Error::InvalidConfig("input_vocab must be >= 2".into()));
        }
        if self.output_vocab < 2 {
            return Err(Error::InvalidConfig("output_vocab must be >= 2".into()));
        }
        Ok(())
    }

    /// Whether inputs and targets must have equal length.
    pub fn is_transducer(&self) -> bool {
        self.feed_input_tokens
    }
}

/// Weights of the encoding RNN used in [`EncoderMode::EncodingRnn`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub w_h: RealMatrix,
    pub e_x: RealMatrix,
    pub b: RealVector,
}

/// All trainable parameters, together with the config that fixes their shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    /// Recurrent weights, H×H.
    pub w_h: RealMatrix,
    /// Output-token (action) embeddings, H×V_y, one column per token.
    pub e_y: RealMatrix,
    /// Input-token embeddings, H×V_x.
    pub e_x: RealMatrix,
    pub b: RealVector,
    /// Output head, V_y×H.
    pub w_o: RealMatrix,
    pub b_o: RealVector,
    /// Trainable start state (static-start mode).
    pub h_init: RealVector,
    pub enc: Option<EncoderParams>,
}

impl ModelParams {
    /// All-zero parameters of the right shapes.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let enc = match config.encoder_mode {
            EncoderMode::StaticStart => None,
            EncoderMode::EncodingRnn => Some(EncoderParams {
                w_h: RealMatrix::zeros(h, h),
                e_x: RealMatrix::zeros(h, config.input_vocab),
                b: RealVector::zeros(h),
            }),
        };
        Ok(ModelParams {
            config,
            w_h: RealMatrix::zeros(h, h),
            e_y: RealMatrix::zeros(h, config.output_vocab),
            e_x: RealMatrix::zeros(h, config.input_vocab),
            b: RealVector::zeros(h),
            w_o: RealMatrix::zeros(config.output_vocab, h),
            b_o: RealVector::zeros(config.output_vocab),
            h_init: RealVector::zeros(h),
            enc,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Parameter blocks in canonical order (encoder blocks only when present).
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        let mut out = vec![
            ("w_h", self.w_h.as_slice()),
            ("e_y", self.e_y.as_slice()),
            ("e_x", self.e_x.as_slice()),
            ("b", self.b.as_slice()),
            ("w_o", self.w_o.as_slice()),
            ("b_o", self.b_o.as_slice()),
            ("h_init", self.h_init.as_slice()),
        ];
        if let Some(enc) = &self.enc {
            out.push(("enc.w_h", enc.w_h.as_slice()));
            out.push(("enc.e_x", enc.e_x.as_slice()));
            out.push(("enc.b", enc.b.as_slice()));
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out = vec![
            ("w_h", self.w_h.as_mut_slice()),
            ("e_y", self.e_y.as_mut_slice()),
            ("e_x", self.e_x.as_mut_slice()),
            ("b", self.b.as_mut_slice()),
            ("w_o", self.w_o.as_mut_slice()),
            ("b_o", self.b_o.as_mut_slice()),
            ("h_init", self.h_init.as_mut_slice()),
        ];
        if let Some(enc) = &mut self.enc {
            out.push(("enc.w_h", enc.w_h.as_mut_slice()));
            out.push(("enc.e_x", enc.e_x.as_mut_slice()));
            out.push(("enc.b", enc.b.as_mut_slice()));
        }
        out
    }

    /// Number of scalar parameters.
    pub fn len(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.config == other.config
    }
}

/// Uniform `[−1/√H, 1/√H]` weights, zero biases, zero start state.
pub fn init_params(config: ModelConfig, seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(config)?;
    let r = 1.0 / (config.hidden_dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, block) in params.blocks_mut() {
        if matches!(name, "w_h" | "e_y" | "e_x" | "w_o" | "enc.w_h" | "enc.e_x") {
            for w in block.iter_mut() {
                *w = rng.gen_range(-r..=r);
            }
        }
    }
    Ok(params)
}

/// A point in the search space, tagged with its time index.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub h: RealVector,
    pub t: usize,
}

impl HiddenState {
    pub fn new(h: RealVector, t: usize) -> Self {
        HiddenState { h, t }
    }
}

pub(crate) fn check_tokens(kind: &'static str, tokens: &[usize], vocab: usize) -> Result<()> {
    match tokens.iter().position(|&t| t >= vocab) {
        Some(position) => Err(Error::TokenOutOfVocab {
            kind,
            position,
            token: tokens[position],
            vocab,
        }),
        None => Ok(()),
    }
}

/// Runs the encoder over `x`, returning every encoder state starting from
/// the zero state. The last entry is `h_0`.
pub(crate) fn encoder_states(enc: &EncoderParams, x: &[usize]) -> Result<Vec<RealVector>> {
    let h = enc.b.len();
    let mut states = Vec::with_capacity(x.len() + 1);
    states.push(RealVector::zeros(h));
    for &tok in x {
        let prev = states.last().expect("nonempty");
        let mut a = matvec(&enc.w_h, prev)?;
        enc.e_x.add_column_into(tok, a.as_mut_slice());
        for (ai, bi) in a.as_mut_slice().iter_mut().zip(enc.b.iter()) {
            *ai = (*ai + bi).tanh();
        }
        states.push(a);
    }
    Ok(states)
}

/// The start state `h_0`.
pub fn encode_start(params: &ModelParams, x: &[usize]) -> Result<HiddenState> {
    let config = params.config();
    check_tokens("input", x, config.input_vocab)?;
    let h = match &params.enc {
        None => params.h_init.clone(),
        Some(enc) => encoder_states(enc, x)?.pop().expect("nonempty"),
    };
    Ok(HiddenState::new(h, 0))
}

/// One transition `h_{t−1} → h_t` taking previous action `y_prev` and,
/// when the config feeds inputs, the current input token.
pub fn cell_step(
    params: &ModelParams,
    prev: &HiddenState,
    y_prev: usize,
    x_t: Option<usize>,
) -> Result<HiddenState> {
    let config = params.config();
    if y_prev >= config.output_vocab {
        return Err(Error::TokenOutOfVocab {
            kind: "output",
            position: prev.t,
            token: y_prev,
            vocab: config.output_vocab,
        });
    }
    let mut a = matvec(&params.w_h, &prev.h)?;
    params.e_y.add_column_into(y_prev, a.as_mut_slice());
    if config.feed_input_tokens {
        let x = x_t.ok_or_else(|| {
            Error::InvalidConfig(format!("step {}: input token required", prev.t + 1))
        })?;
        if x >= config.input_vocab {
            return Err(Error::TokenOutOfVocab {
                kind: "input",
                position: prev.t,
                token: x,
                vocab: config.input_vocab,
            });
        }
        params.e_x.add_column_into(x, a.as_mut_slice());
    }
    for (ai, bi) in a.as_mut_slice().iter_mut().zip(params.b.iter()) {
        *ai = (*ai + bi).tanh();
    }
    Ok(HiddenState::new(a, prev.t + 1))
}

/// Unnormalized head output `W_o·h + b_o`.
pub fn output_logits(state: &HiddenState, params: &ModelParams) -> Result<RealVector> {
    let mut z = matvec(&params.w_o, &state.h)?;
    for (zi, bi) in z.as_mut_slice().iter_mut().zip(params.b_o.iter()) {
        *zi += bi;
    }
    Ok(z)
}

/// `softmax(W_o·h + b_o)`.
pub fn output_distribution(state: &HiddenState, params: &ModelParams) -> Result<RealVector> {
    softmax_stable(&output_logits(state, params)?)
}

/// The learned policy: most probable output token.
pub fn greedy_action(state: &HiddenState, params: &ModelParams) -> Result<usize> {
    argmax_tiebreak(&output_distribution(state, params)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    fn tiny_config() -> ModelConfig {
        ModelConfig::transducer(2, 3, 3)
    }

    /// H=2, V_x=V_y=3 with hand-picked weights.
    fn hand_params(mode: EncoderMode) -> ModelParams {
        let mut config = tiny_config();
        config.encoder_mode = mode;
        let mut p = ModelParams::zeros(config).unwrap();
        p.w_h = RealMatrix::from_rows(&[vec![0.5, -0.3], vec![0.2, 0.8]]).unwrap();
        p.e_y = RealMatrix::from_rows(&[vec![0.0, 0.4, -0.1], vec![0.0, -0.6, 0.3]]).unwrap();
        p.e_x = RealMatrix::from_rows(&[vec![0.1, 0.7, 0.2], vec![-0.2, 0.05, 0.9]]).unwrap();
        p.b = RealVector::from_vec(vec![0.01, -0.02]);
        if let Some(enc) = &mut p.enc {
            enc.w_h = RealMatrix::from_rows(&[vec![0.3, 0.1], vec![-0.4, 0.2]]).unwrap();
            enc.e_x = RealMatrix::from_rows(&[vec![0.2, -0.5, 0.6], vec![0.3, 0.9, -0.7]]).unwrap();
            enc.b = RealVector::from_vec(vec![0.05, 0.15]);
        }
        p
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let config = ModelConfig::transducer(4, 5, 6);
        let a = init_params(config, 11).unwrap();
        let b = init_params(config, 11).unwrap();
        assert_eq!(a, b);
        for (name, block) in a.blocks() {
            for w in block {
                assert!(w.abs() <= 0.5, "{name}: {w}");
            }
        }
        assert!(a.b.iter().all(|v| *v == 0.0));
        assert!(a.b_o.iter().all(|v| *v == 0.0));
        assert!(a.h_init.iter().all(|v| *v == 0.0));
        let c = init_params(config, 12).unwrap();
        assert_ne!(format!("{a:?}"), format!("{c:?}"));
    }

    #[test]
    fn invalid_config_rejected() {
        let mut c = tiny_config();
        c.output_vocab = 1;
        assert!(init_params(c, 0).is_err());
        c = tiny_config();
        c.hidden_dim = 0;
        assert!(init_params(c, 0).is_err());
    }

    #[test]
    fn static_start_returns_h_init() {
        let p = ModelParams::zeros(tiny_config()).unwrap();
        let h0 = encode_start(&p, &[1, 2]).unwrap();
        assert_eq!(h0.h.as_slice(), &[0.0, 0.0]);
        assert_eq!(h0.t, 0);
    }

    #[test]
    fn zero_encoder_gives_zero_start() {
        let mut config = tiny_config();
        config.encoder_mode = EncoderMode::EncodingRnn;
        let p = ModelParams::zeros(config).unwrap();
        let h0 = encode_start(&p, &[1, 2, 0]).unwrap();
        assert_eq!(h0.h.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn encoder_single_step_matches_scalar() {
        let p = hand_params(EncoderMode::EncodingRnn);
        let h0 = encode_start(&p, &[1]).unwrap();
        // from the zero state only the embedding column and bias contribute
        let want = [(-0.5f64 + 0.05).tanh(), (0.9f64 + 0.15).tanh()];
        assert!((h0.h[0] - want[0]).abs() < 1e-15);
        assert!((h0.h[1] - want[1]).abs() < 1e-15);
    }

    #[test]
    fn encode_start_rejects_bad_token() {
        let p = ModelParams::zeros(tiny_config()).unwrap();
        let err = encode_start(&p, &[1, 3]).unwrap_err();
        assert_eq!(
            err,
            Error::TokenOutOfVocab {
                kind: "input",
                position: 1,
                token: 3,
                vocab: 3
            }
        );
    }

    #[test]
    fn cell_step_matches_scalar_recurrence() {
        let p = hand_params(EncoderMode::StaticStart);
        let prev = HiddenState::new(RealVector::from_vec(vec![0.1, -0.2]), 0);
        let next = cell_step(&p, &prev, 1, Some(2)).unwrap();
        let a0 = 0.5 * 0.1 + (-0.3) * (-0.2) + 0.4 + 0.2 + 0.01;
        let a1 = 0.2 * 0.1 + 0.8 * (-0.2) + (-0.6) + 0.9 + (-0.02);
        assert!((next.h[0] - f64::tanh(a0)).abs() < 1e-14);
        assert!((next.h[1] - f64::tanh(a1)).abs() < 1e-14);
        assert_eq!(next.t, 1);
    }

    #[test]
    fn cell_step_zero_params() {
        let p = ModelParams::zeros(tiny_config()).unwrap();
        let h0 = encode_start(&p, &[]).unwrap();
        let h1 = cell_step(&p, &h0, 2, Some(1)).unwrap();
        assert_eq!(h1.h.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn cell_step_range_errors() {
        let p = ModelParams::zeros(tiny_config()).unwrap();
        let h0 = encode_start(&p, &[]).unwrap();
        assert!(cell_step(&p, &h0, 3, Some(1)).is_err());
        assert!(cell_step(&p, &h0, 1, Some(3)).is_err());
    }

    #[test]
    fn head_examples() {
        let p = ModelParams::zeros(tiny_config()).unwrap();
        let s = HiddenState::new(RealVector::from_vec(vec![0.3, -0.9]), 1);
        let d = output_distribution(&s, &p).unwrap();
        for q in d.iter() {
            assert!((q - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(greedy_action(&s, &p).unwrap(), 0);

        let mut p = p;
        p.w_o = RealMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        p.b_o = RealVector::from_vec(vec![0.0, 0.0, 5.0]);
        assert_eq!(greedy_action(&s, &p).unwrap(), 2);
        let d = output_distribution(&s, &p).unwrap();
        let z = [0.3f64, -0.9, 5.0];
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        for (q, zi) in d.iter().zip(z) {
            assert!((q - zi.exp() / denom).abs() < 1e-15);
        }
    }

    #[test]
    fn greedy_agrees_with_logit_argmax() {
        let config = ModelConfig::transducer(6, 5, 7);
        let p = init_params(config, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let h: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s = HiddenState::new(RealVector::from_vec(h), 1);
            let logits = output_logits(&s, &p).unwrap();
            assert_eq!(
                greedy_action(&s, &p).unwrap(),
                argmax_tiebreak(&logits).unwrap()
            );
        }
    }

    proptest! {
        #[test]
        fn cell_output_strictly_inside_unit_interval(
            seed in 0u64..1000,
            h in prop::collection::vec(-1.0f64..1.0, 4),
            y in 0usize..5,
            x in 0usize..4,
        ) {
            let p = init_params(ModelConfig::transducer(4, 4, 5), seed).unwrap();
            let s = cell_step(&p, &HiddenState::new(RealVector::from_vec(h), 0), y, Some(x)).unwrap();
            prop_assert!(s.h.iter().all(|v| v.abs() < 1.0));
        }

        #[test]
        fn without_input_feeding_cell_ignores_x(
            seed in 0u64..1000,
            y in 0usize..5,
            x1 in 0usize..4,
            x2 in 0usize..4,
        ) {
            let mut config = ModelConfig::transducer(4, 4, 5);
            config.feed_input_tokens = false;
            let p = init_params(config, seed).unwrap();
            let h0 = HiddenState::new(RealVector::from_vec(vec![0.2, -0.1, 0.4, 0.0]), 0);
            let a = cell_step(&p, &h0, y, Some(x1)).unwrap();
            let b = cell_step(&p, &h0, y, Some(x2)).unwrap();
            let c = cell_step(&p, &h0, y, None).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(&a, &c);
        }
    }
}
