//! Versioned JSON checkpoints.
//!
//! Every float is written with 17 significant digits, so a save → load →
//! save cycle reproduces the file byte for byte.

use std::io;

use dagger_rnn::model::EncoderParams;
use dagger_rnn::{ModelConfig, ModelParams, RealMatrix, RealVector, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint format_version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("block {block}: expected {expected} entries, found {found}")]
    Length {
        block: String,
        expected: usize,
        found: usize,
    },
    #[error("block {block}: expected shape {expected:?}, found {found:?}")]
    Shape {
        block: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("checkpoint encoder block does not match encoder_mode")]
    Encoder,
    #[error("checkpoint contains non-finite parameters")]
    NonFinite,
    #[error(transparent)]
    Model(#[from] dagger_rnn::Error),
}

/// Summary of the training run that produced the parameters. The schedule
/// is the one actually followed, so a teacher-forcing run records
/// `alpha = p = alpha_min = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
    pub alpha: f64,
    pub p: f64,
    pub alpha_min: f64,
}

impl TrainSummary {
    pub fn from_config(c: &TrainConfig) -> Self {
        let s = c.effective_schedule();
        TrainSummary {
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            clip_norm: c.clip_norm,
            alpha: s.alpha,
            p: s.p,
            alpha_min: s.alpha_min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MatrixDoc {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EncoderDoc {
    w_h: MatrixDoc,
    e_x: MatrixDoc,
    b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamsDoc {
    w_h: MatrixDoc,
    e_y: MatrixDoc,
    e_x: MatrixDoc,
    b: Vec<f64>,
    w_o: MatrixDoc,
    b_o: Vec<f64>,
    h_init: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    enc: Option<EncoderDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointDoc {
    format_version: u32,
    model_config: ModelConfig,
    train_config: TrainSummary,
    params: ParamsDoc,
    rng_seed: u64,
    epoch_reached: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub train_config: TrainSummary,
    pub rng_seed: u64,
    pub epoch_reached: usize,
}

fn matrix_doc(m: &RealMatrix) -> MatrixDoc {
    MatrixDoc {
        rows: m.rows(),
        cols: m.cols(),
        data: m.as_slice().to_vec(),
    }
}

fn matrix_from(
    block: &str,
    doc: MatrixDoc,
    rows: usize,
    cols: usize,
) -> Result<RealMatrix, CheckpointError> {
    if (doc.rows, doc.cols) != (rows, cols) {
        return Err(CheckpointError::Shape {
            block: block.into(),
            expected: (rows, cols),
            found: (doc.rows, doc.cols),
        });
    }
    if doc.data.len() != rows * cols {
        return Err(CheckpointError::Length {
            block: block.into(),
            expected: rows * cols,
            found: doc.data.len(),
        });
    }
    Ok(RealMatrix::from_vec(rows, cols, doc.data)?)
}

fn vector_from(block: &str, data: Vec<f64>, len: usize) -> Result<RealVector, CheckpointError> {
    if data.len() != len {
        return Err(CheckpointError::Length {
            block: block.into(),
            expected: len,
            found: data.len(),
        });
    }
    Ok(RealVector::from_vec(data))
}

/// Pretty-printed JSON with floats at 17 significant digits.
struct Digits17(PrettyFormatter<'static>);

impl Formatter for Digits17 {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{v:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, v as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let p = &self.params;
        let doc = CheckpointDoc {
            format_version: FORMAT_VERSION,
            model_config: *p.config(),
            train_config: self.train_config.clone(),
            params: ParamsDoc {
                w_h: matrix_doc(&p.w_h),
                e_y: matrix_doc(&p.e_y),
                e_x: matrix_doc(&p.e_x),
                b: p.b.as_slice().to_vec(),
                w_o: matrix_doc(&p.w_o),
                b_o: p.b_o.as_slice().to_vec(),
                h_init: p.h_init.as_slice().to_vec(),
                enc: p.enc.as_ref().map(|e| EncoderDoc {
                    w_h: matrix_doc(&e.w_h),
                    e_x: matrix_doc(&e.e_x),
                    b: e.b.as_slice().to_vec(),
                }),
            },
            rng_seed: self.rng_seed,
            epoch_reached: self.epoch_reached,
        };
        let mut out = Vec::new();
        let mut ser =
            serde_json::Serializer::with_formatter(&mut out, Digits17(PrettyFormatter::new()));
        doc.serialize(&mut ser).expect("serializing to memory");
        out.push(b'\n');
        String::from_utf8(out).expect("JSON is UTF-8")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let doc: CheckpointDoc = serde_json::from_str(text)?;
        if doc.format_version != FORMAT_VERSION {
            return Err(CheckpointError::Version(doc.format_version));
        }
        let config = doc.model_config;
        config.validate()?;
        let (h, vx, vy) = (config.hidden_dim, config.input_vocab, config.output_vocab);
        let mut params = ModelParams::zeros(config)?;
        let d = doc.params;
        params.w_h = matrix_from("w_h", d.w_h, h, h)?;
        params.e_y = matrix_from("e_y", d.e_y, h, vy)?;
        params.e_x = matrix_from("e_x", d.e_x, h, vx)?;
        params.b = vector_from("b", d.b, h)?;
        params.w_o = matrix_from("w_o", d.w_o, vy, h)?;
        params.b_o = vector_from("b_o", d.b_o, vy)?;
        params.h_init = vector_from("h_init", d.h_init, h)?;
        params.enc = match (params.enc.is_some(), d.enc) {
            (false, None) => None,
            (true, Some(e)) => Some(EncoderParams {
                w_h: matrix_from("enc.w_h", e.w_h, h, h)?,
                e_x: matrix_from("enc.e_x", e.e_x, h, vx)?,
                b: vector_from("enc.b", e.b, h)?,
            }),
            _ => return Err(CheckpointError::Encoder),
        };
        if !params.is_finite() {
            return Err(CheckpointError::NonFinite);
        }
        Ok(Checkpoint {
            params,
            train_config: doc.train_config,
            rng_seed: doc.rng_seed,
            epoch_reached: doc.epoch_reached,
        })
    }
}
