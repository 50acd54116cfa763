//! Miniature autoregressive encoder / location-sensitive attention / decoder.
//!
//! Encoder: token embedding followed by one tanh projection, giving `N` keys
//! `H` (`N×encoder_dim`). Each decoder step `j`:
//!
//! 1. recurrent update `s_j = tanh([c_{j−1} ‖ y_{j−1}]·W_x + s_{j−1}·W_s + b)`
//!    where `y_{j−1}` is the previous frame (ground truth under teacher
//!    forcing, the model's own output when free-running);
//! 2. location features `f = conv1d(α_{j−1})` over the previous attention;
//! 3. additive scores `e_i = v · tanh(W s_j + V h_i + U f_i)`, softmax over
//!    input positions giving `α_j`;
//! 4. context `c_j = α_jᵀ H` and frame `ŷ_j = [s_j ‖ c_j]·W_o + b_o`.
//!
//! The previous attention for step 1 is one-hot at the first input position;
//! the initial state, context and "go" frame are zero.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{AlignConfig, AlignError, AlignmentMatrix};
use crate::autodiff::{AutodiffError, Axis, Tape, Tensor, Var};
use crate::numfmt::{from_f17, to_f17, F17};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("frame dimension {got} does not match model frame_dim {expected}")]
    FrameDim { expected: usize, got: usize },
    #[error("empty sequence: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error("{path}: {reason}")]
    Checkpoint { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub encoder_dim: usize,
    pub attention_dim: usize,
    pub decoder_dim: usize,
    pub location_kernel: usize,
    pub location_filters: usize,
    pub frame_dim: usize,
}

impl ModelConfig {
    /// Default sizes for a corpus with the given vocabulary and frame width.
    pub fn new(vocab_size: usize, frame_dim: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 8,
            encoder_dim: 8,
            attention_dim: 8,
            decoder_dim: 16,
            location_kernel: 5,
            location_filters: 2,
            frame_dim,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            self.vocab_size,
            self.embed_dim,
            self.encoder_dim,
            self.attention_dim,
            self.decoder_dim,
            self.location_kernel,
            self.location_filters,
            self.frame_dim,
        ];
        if dims.contains(&0) {
            return Err(ModelError::Config("all dimensions must be at least 1".into()));
        }
        if self.location_kernel % 2 == 0 {
            return Err(ModelError::Config(format!(
                "location_kernel must be odd, got {}",
                self.location_kernel
            )));
        }
        Ok(())
    }
}

/// Learnable tensors, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamId {
    Embedding,
    EncoderWeight,
    EncoderBias,
    KeyWeight,
    QueryWeight,
    LocationKernel,
    LocationWeight,
    ScoreVector,
    RnnInputWeight,
    RnnStateWeight,
    RnnBias,
    OutputWeight,
    OutputBias,
}

impl ParamId {
    pub const ALL: [ParamId; 13] = [
        ParamId::Embedding,
        ParamId::EncoderWeight,
        ParamId::EncoderBias,
        ParamId::KeyWeight,
        ParamId::QueryWeight,
        ParamId::LocationKernel,
        ParamId::LocationWeight,
        ParamId::ScoreVector,
        ParamId::RnnInputWeight,
        ParamId::RnnStateWeight,
        ParamId::RnnBias,
        ParamId::OutputWeight,
        ParamId::OutputBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::Embedding => "embedding",
            ParamId::EncoderWeight => "encoder_weight",
            ParamId::EncoderBias => "encoder_bias",
            ParamId::KeyWeight => "attention_key",
            ParamId::QueryWeight => "attention_query",
            ParamId::LocationKernel => "location_kernel",
            ParamId::LocationWeight => "attention_location",
            ParamId::ScoreVector => "attention_score",
            ParamId::RnnInputWeight => "rnn_input_weight",
            ParamId::RnnStateWeight => "rnn_state_weight",
            ParamId::RnnBias => "rnn_bias",
            ParamId::OutputWeight => "output_weight",
            ParamId::OutputBias => "output_bias",
        }
    }

    pub fn is_bias(self) -> bool {
        matches!(
            self,
            ParamId::EncoderBias | ParamId::RnnBias | ParamId::OutputBias
        )
    }

    pub fn shape(self, c: &ModelConfig) -> (usize, usize) {
        match self {
            ParamId::Embedding => (c.vocab_size, c.embed_dim),
            ParamId::EncoderWeight => (c.embed_dim, c.encoder_dim),
            ParamId::EncoderBias => (1, c.encoder_dim),
            ParamId::KeyWeight => (c.encoder_dim, c.attention_dim),
            ParamId::QueryWeight => (c.decoder_dim, c.attention_dim),
            ParamId::LocationKernel => (c.location_filters, c.location_kernel),
            ParamId::LocationWeight => (c.location_filters, c.attention_dim),
            ParamId::ScoreVector => (c.attention_dim, 1),
            ParamId::RnnInputWeight => (c.encoder_dim + c.frame_dim, c.decoder_dim),
            ParamId::RnnStateWeight => (c.decoder_dim, c.decoder_dim),
            ParamId::RnnBias => (1, c.decoder_dim),
            ParamId::OutputWeight => (c.decoder_dim + c.encoder_dim, c.frame_dim),
            ParamId::OutputBias => (1, c.frame_dim),
        }
    }

    /// Inputs feeding each output unit. An embedding row is selected by a
    /// one-hot input, so its fan-in is 1; a location filter sees `kernel`
    /// taps.
    fn fan_in(self, c: &ModelConfig) -> usize {
        match self {
            ParamId::Embedding => 1,
            ParamId::LocationKernel => c.location_kernel,
            other => other.shape(c).0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelParams {
    config: ModelConfig,
    tensors: Vec<Tensor>,
}

/// The three terms of the regularized objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub task: f64,
    pub align: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// `M×frame_dim`.
    pub predicted_frames: Tensor,
    pub alignment: AlignmentMatrix,
    pub task_loss: f64,
    pub align_loss: f64,
    pub total_loss: f64,
}

impl ForwardResult {
    pub fn losses(&self) -> Losses {
        Losses {
            task: self.task_loss,
            align: self.align_loss,
            total: self.total_loss,
        }
    }
}

/// What the total loss node is built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// `L_R = L_T + λ·L_A`, with the alignment term on the graph.
    Regularized(AlignConfig),
    /// `L_R = L_T`; the alignment loss (margin `delta`) is evaluated off the
    /// graph for reporting only.
    TaskOnly { delta: f64 },
}

impl Objective {
    fn delta(&self) -> f64 {
        match *self {
            Objective::Regularized(c) => c.delta,
            Objective::TaskOnly { delta } => delta,
        }
    }
}

/// Per-parameter gradient buffers, laid out like [`ToyModelParams`].
pub type ParamGrads = Vec<Vec<f64>>;

struct Encoded {
    keys: Var,
    key_proj: Var,
    n: usize,
}

struct Step {
    hidden: Var,
    alpha: Var,
    context: Var,
}

struct Graph {
    params: Vec<Var>,
    predictions: Var,
    alignment: Var,
    task: Var,
    align: Option<Var>,
    total: Var,
}

/// Step budget for free-running decoding: `ceil(1.5 · d_max · N)`.
pub fn free_running_budget(n_tokens: usize, max_duration: usize) -> usize {
    (3 * max_duration * n_tokens).div_ceil(2)
}

impl ToyModelParams {
    /// Weights `~ U(−s, s)` with `s = 1/sqrt(fan_in)`; biases zero.
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let tensors = ParamId::ALL
            .iter()
            .map(|&id| {
                let (r, c) = id.shape(&config);
                let data = if id.is_bias() {
                    vec![0.0; r * c]
                } else {
                    let s = 1.0 / (id.fan_in(&config) as f64).sqrt();
                    (0..r * c).map(|_| rng.random_range(-s..s)).collect()
                };
                Tensor::matrix(r, c, data).expect("shape from config")
            })
            .collect();
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id as usize]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&self) -> ParamGrads {
        self.tensors.iter().map(|t| vec![0.0; t.len()]).collect()
    }

    fn check_inputs(&self, tokens: &[usize], frames: Option<&Tensor>) -> Result<(), ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::Empty("token sequence"));
        }
        if let Some(frames) = frames {
            let (m, f) = frames.matrix_dims()?;
            if f != self.config.frame_dim {
                return Err(ModelError::FrameDim {
                    expected: self.config.frame_dim,
                    got: f,
                });
            }
            if m == 0 {
                return Err(ModelError::Empty("target frames"));
            }
        }
        Ok(())
    }

    fn record_params(&self, tape: &mut Tape) -> Result<Vec<Var>, AutodiffError> {
        self.tensors.iter().map(|t| tape.leaf(t)).collect()
    }

    fn encode(&self, tape: &mut Tape, p: &[Var], tokens: &[usize]) -> Result<Encoded, AutodiffError> {
        let emb = tape.embedding(p[ParamId::Embedding as usize], tokens)?;
        let proj = tape.matmul(emb, p[ParamId::EncoderWeight as usize])?;
        let proj = tape.add_row(proj, p[ParamId::EncoderBias as usize])?;
        let keys = tape.tanh(proj)?;
        let key_proj = tape.matmul(keys, p[ParamId::KeyWeight as usize])?;
        Ok(Encoded {
            keys,
            key_proj,
            n: tokens.len(),
        })
    }

    fn initial_step(&self, tape: &mut Tape, n: usize) -> Result<Step, AutodiffError> {
        let c = &self.config;
        let mut alpha = vec![0.0; n];
        alpha[0] = 1.0;
        Ok(Step {
            hidden: tape.leaf_slice(1, c.decoder_dim, &vec![0.0; c.decoder_dim])?,
            alpha: tape.leaf_slice(n, 1, &alpha)?,
            context: tape.leaf_slice(1, c.encoder_dim, &vec![0.0; c.encoder_dim])?,
        })
    }

    /// One decoder step; returns the new state and the predicted frame.
    fn step(
        &self,
        tape: &mut Tape,
        p: &[Var],
        enc: &Encoded,
        prev: &Step,
        prev_frame: Var,
    ) -> Result<(Step, Var), AutodiffError> {
        let x = tape.concat(&[prev.context, prev_frame], Axis::Cols)?;
        let from_input = tape.matmul(x, p[ParamId::RnnInputWeight as usize])?;
        let from_state = tape.matmul(prev.hidden, p[ParamId::RnnStateWeight as usize])?;
        let pre = tape.add(from_input, from_state)?;
        let pre = tape.add(pre, p[ParamId::RnnBias as usize])?;
        let hidden = tape.tanh(pre)?;

        let query = tape.matmul(hidden, p[ParamId::QueryWeight as usize])?;
        let loc = tape.conv1d(prev.alpha, p[ParamId::LocationKernel as usize])?;
        let loc = tape.matmul(loc, p[ParamId::LocationWeight as usize])?;
        let energy = tape.add(enc.key_proj, loc)?;
        let energy = tape.add_row(energy, query)?;
        let energy = tape.tanh(energy)?;
        let scores = tape.matmul(energy, p[ParamId::ScoreVector as usize])?;
        let alpha = tape.softmax_cols(scores)?;
        let context = tape.matmul_tn(alpha, enc.keys)?;

        let out_in = tape.concat(&[hidden, context], Axis::Cols)?;
        let frame = tape.matmul(out_in, p[ParamId::OutputWeight as usize])?;
        let frame = tape.add(frame, p[ParamId::OutputBias as usize])?;
        Ok((
            Step {
                hidden,
                alpha,
                context,
            },
            frame,
        ))
    }

    fn build_teacher_forced(
        &self,
        tape: &mut Tape,
        tokens: &[usize],
        targets: &Tensor,
        objective: Objective,
    ) -> Result<Graph, ModelError> {
        self.check_inputs(tokens, Some(targets))?;
        let (m, f) = targets.matrix_dims()?;
        let params = self.record_params(tape)?;
        let enc = self.encode(tape, &params, tokens)?;
        let mut state = self.initial_step(tape, enc.n)?;
        let mut prev_frame = tape.leaf_slice(1, f, &vec![0.0; f])?;
        let mut frames = Vec::with_capacity(m);
        let mut alphas = Vec::with_capacity(m);
        for j in 0..m {
            let (next, frame) = self.step(tape, &params, &enc, &state, prev_frame)?;
            frames.push(frame);
            alphas.push(next.alpha);
            state = next;
            if j + 1 < m {
                prev_frame = tape.leaf_slice(1, f, targets.row(j))?;
            }
        }
        let predictions = tape.concat(&frames, Axis::Rows)?;
        let alignment = tape.concat(&alphas, Axis::Cols)?;
        let target = tape.leaf(targets)?;
        let task = tape.mse(predictions, target)?;
        let (align, total) = match objective {
            Objective::Regularized(cfg) => {
                cfg.validate()?;
                let align = tape.align_loss(alignment, cfg.delta)?;
                let weighted = tape.scale(align, cfg.lambda)?;
                (Some(align), tape.add(task, weighted)?)
            }
            Objective::TaskOnly { .. } => (None, task),
        };
        Ok(Graph {
            params,
            predictions,
            alignment,
            task,
            align,
            total,
        })
    }

    fn result_from(&self, tape: &Tape, g: &Graph, objective: Objective) -> Result<ForwardResult, ModelError> {
        let (n, m) = tape.dims(g.alignment);
        let values = tape.value(g.alignment);
        let align_loss = match g.align {
            Some(v) => tape.scalar(v),
            None => crate::align::alignment_loss_raw(n, m, values, objective.delta())?,
        };
        Ok(ForwardResult {
            predicted_frames: tape.value_tensor(g.predictions),
            alignment: AlignmentMatrix::new(n, m, values.to_vec())?,
            task_loss: tape.scalar(g.task),
            align_loss,
            total_loss: tape.scalar(g.total),
        })
    }

    /// Teacher-forced pass producing predictions, the alignment matrix and
    /// the three losses.
    pub fn forward_teacher_forced(
        &self,
        tokens: &[usize],
        target_frames: &Tensor,
        align: &AlignConfig,
    ) -> Result<ForwardResult, ModelError> {
        let mut tape = Tape::new();
        self.forward_on(&mut tape, tokens, target_frames, Objective::Regularized(*align))
    }

    /// Like [`Self::forward_teacher_forced`], reusing `tape`'s buffers.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        tokens: &[usize],
        target_frames: &Tensor,
        objective: Objective,
    ) -> Result<ForwardResult, ModelError> {
        tape.clear();
        let g = self.build_teacher_forced(tape, tokens, target_frames, objective)?;
        self.result_from(tape, &g, objective)
    }

    /// Teacher-forced pass plus backward; writes `∂L_R/∂θ` into `grads`.
    pub fn loss_and_grad(
        &self,
        tape: &mut Tape,
        tokens: &[usize],
        target_frames: &Tensor,
        objective: Objective,
        grads: &mut ParamGrads,
    ) -> Result<Losses, ModelError> {
        tape.clear();
        let g = self.build_teacher_forced(tape, tokens, target_frames, objective)?;
        tape.backward(g.total)?;
        for (dst, &v) in grads.iter_mut().zip(&g.params) {
            dst.copy_from_slice(tape.grad(v));
        }
        let (n, m) = tape.dims(g.alignment);
        let align = match g.align {
            Some(v) => tape.scalar(v),
            None => {
                crate::align::alignment_loss_raw(n, m, tape.value(g.alignment), objective.delta())?
            }
        };
        Ok(Losses {
            task: tape.scalar(g.task),
            align,
            total: tape.scalar(g.total),
        })
    }

    /// Autoregressive decoding on the model's own predictions for exactly
    /// `max_steps` steps.
    pub fn decode_free_running(
        &self,
        tokens: &[usize],
        max_steps: usize,
    ) -> Result<(Tensor, AlignmentMatrix), ModelError> {
        self.check_inputs(tokens, None)?;
        if max_steps == 0 {
            return Err(ModelError::Empty("step budget"));
        }
        let f = self.config.frame_dim;
        let mut tape = Tape::new();
        let params = self.record_params(&mut tape)?;
        let enc = self.encode(&mut tape, &params, tokens)?;
        let mut state = self.initial_step(&mut tape, enc.n)?;
        let mut prev_frame = tape.leaf_slice(1, f, &vec![0.0; f])?;
        let mut frames = Vec::with_capacity(max_steps);
        let mut alphas = Vec::with_capacity(max_steps);
        for _ in 0..max_steps {
            let (next, frame) = self.step(&mut tape, &params, &enc, &state, prev_frame)?;
            frames.push(frame);
            alphas.push(next.alpha);
            state = next;
            prev_frame = frame;
        }
        let predictions = tape.concat(&frames, Axis::Rows)?;
        let alignment = tape.concat(&alphas, Axis::Cols)?;
        let (n, m) = tape.dims(alignment);
        Ok((
            tape.value_tensor(predictions),
            AlignmentMatrix::new(n, m, tape.value(alignment).to_vec())?,
        ))
    }

    pub fn to_json(&self) -> String {
        let file = CheckpointFile {
            config: self.config,
            params: ParamId::ALL
                .iter()
                .zip(&self.tensors)
                .map(|(id, t)| ParamFile {
                    name: id.name().to_string(),
                    shape: t.shape().to_vec(),
                    data: to_f17(t.data()),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("parameters are finite")
    }

    /// Parses a checkpoint and validates every shape against its config.
    pub fn from_json(text: &str, path: &str) -> Result<Self, ModelError> {
        let bad = |reason: String| ModelError::Checkpoint {
            path: path.to_string(),
            reason,
        };
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        file.config.validate()?;
        if file.params.len() != ParamId::ALL.len() {
            return Err(bad(format!(
                "expected {} parameter arrays, got {}",
                ParamId::ALL.len(),
                file.params.len()
            )));
        }
        let mut tensors = Vec::with_capacity(ParamId::ALL.len());
        for (id, p) in ParamId::ALL.iter().zip(file.params) {
            let (r, c) = id.shape(&file.config);
            if p.name != id.name() || p.shape != [r, c] || p.data.len() != r * c {
                return Err(bad(format!(
                    "parameter `{}` must be named `{}` with shape [{r}, {c}]",
                    p.name,
                    id.name()
                )));
            }
            tensors.push(Tensor::matrix(r, c, from_f17(&p.data)).map_err(|e| bad(e.to_string()))?);
        }
        Ok(Self {
            config: file.config,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()).map_err(|e| ModelError::Checkpoint {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Checkpoint {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text, &path.display().to_string())
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    config: ModelConfig,
    params: Vec<ParamFile>,
}

#[derive(Serialize, Deserialize)]
struct ParamFile {
    name: String,
    shape: Vec<usize>,
    data: Vec<F17>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(seed: u64) -> ToyModelParams {
        ToyModelParams::init(ModelConfig::new(6, 4), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn targets(m: usize, f: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(m, f, (0..m * f).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let a = params(1);
        assert_eq!(a, params(1));
        assert_ne!(a, params(2));
        for id in ParamId::ALL {
            let t = a.get(id);
            if id.is_bias() {
                assert!(t.data().iter().all(|&x| x == 0.0), "{}", id.name());
            } else {
                assert!(t.data().iter().all(|&x| x.abs() < 1.0), "{}", id.name());
            }
        }
    }

    #[test]
    fn zero_lambda_total_equals_task() {
        let p = params(3);
        let cfg = AlignConfig::new(0.01, 0.0).unwrap();
        let r = p.forward_teacher_forced(&[0, 1, 2], &targets(7, 4, 0), &cfg).unwrap();
        assert_eq!(r.total_loss, r.task_loss);
        assert!(r.align_loss >= 0.0);
    }

    #[test]
    fn decomposition_is_exact() {
        let p = params(4);
        let cfg = AlignConfig::new(0.01, 1e-3).unwrap();
        let r = p.forward_teacher_forced(&[5, 1, 2, 2], &targets(9, 4, 1), &cfg).unwrap();
        assert_eq!(r.total_loss - (r.task_loss + cfg.lambda * r.align_loss), 0.0);
        assert_eq!(r.alignment.n_inputs(), 4);
        assert_eq!(r.alignment.n_frames(), 9);
        for j in 0..9 {
            let s: f64 = r.alignment.column(j).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_dim_mismatch_is_an_error() {
        let p = params(5);
        let err = p
            .forward_teacher_forced(&[0, 1], &targets(3, 5, 0), &AlignConfig::default())
            .unwrap_err();
        assert!(matches!(err, ModelError::FrameDim { expected: 4, got: 5 }));
    }

    #[test]
    fn free_running_step_counts() {
        let p = params(6);
        let (frames, a) = p.decode_free_running(&[1, 2, 3], 1).unwrap();
        assert_eq!(a.n_frames(), 1);
        assert_eq!(frames.shape(), &[1, 4]);
        let (_, a) = p.decode_free_running(&[1, 2, 3], 13).unwrap();
        assert_eq!(a.n_frames(), 13);
        assert_eq!(free_running_budget(3, 4), 18);
        assert_eq!(free_running_budget(5, 3), 23);
    }

    #[test]
    fn teacher_forcing_on_own_predictions_matches_free_running() {
        let p = params(7);
        let tokens = [0, 4, 2, 1];
        let (frames, alignment) = p.decode_free_running(&tokens, 10).unwrap();
        let r = p.forward_teacher_forced(&tokens, &frames, &AlignConfig::default()).unwrap();
        assert_eq!(r.predicted_frames, frames);
        assert_eq!(r.alignment, alignment);
        assert_eq!(r.task_loss, 0.0);
    }

    #[test]
    fn checkpoint_round_trip_and_shape_validation() {
        let p = params(8);
        let json = p.to_json();
        assert_eq!(ToyModelParams::from_json(&json, "mem").unwrap(), p);
        let tampered = json.replacen("\"embedding\"", "\"embeddings\"", 1);
        assert!(matches!(
            ToyModelParams::from_json(&tampered, "ck.json"),
            Err(ModelError::Checkpoint { .. })
        ));
    }
}
