//! Deterministic training loop, λ sweep, and the training-dynamics metrics
//! (loss spikes, generalization gap, first monotonic epoch, free-running
//! repeat/skip robustness).

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::align::{centroids, monotonicity_report, AlignConfig, AlignError, AlignmentMatrix};
use crate::autodiff::{AutodiffError, Tape};
use crate::data::{Dataset, Example};
use crate::model::{
    free_running_budget, ModelConfig, ModelError, Objective, ParamGrads, ToyModelParams,
};
use crate::numfmt::fmt_f64;

pub const DEFAULT_EPOCHS: usize = 300;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const ANNEAL_FACTOR: f64 = 0.3;
/// λ = 0 baseline followed by 1e-6 … 1e-2 in decade steps.
pub const DEFAULT_LAMBDA_GRID: [f64; 6] = [0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];
/// Violation rate at or below which a model counts as monotonically aligned.
pub const MONOTONIC_THRESHOLD: f64 = 0.05;
pub const DEFAULT_TAIL_FRACTION: f64 = 0.2;
pub const SPIKE_WINDOW: usize = 11;
pub const SPIKE_FACTOR: f64 = 1.5;

/// Header of the per-epoch training log CSV.
pub const TRAIN_LOG_HEADER: &str =
    "epoch,train_lt,val_lt,train_la,val_la,val_violation_rate,centroid_corr,lr";
pub const SWEEP_REPORT_HEADER: &str = "lambda,runs,diverged_runs,final_val_lt,mean_val_violation_rate,final_val_violation_rate,mean_gap,spike_count,first_monotonic_epoch,affected_fraction,diverged";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        partial: Vec<EpochRecord>,
    },
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Multiplier applied after epochs `⌈E/3⌉` and `⌈2E/3⌉`.
    pub anneal_factor: f64,
    pub adam: AdamConfig,
    pub align: AlignConfig,
    pub seed: u64,
    /// Build the objective without the alignment node at all. Only useful to
    /// demonstrate that λ = 0 is inert.
    pub excise_alignment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            anneal_factor: ANNEAL_FACTOR,
            adam: AdamConfig::default(),
            align: AlignConfig::default(),
            seed: 0,
            excise_alignment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor <= 1.0) {
            return Err(TrainError::Config(format!(
                "anneal factor must be in (0, 1], got {}",
                self.anneal_factor
            )));
        }
        self.align
            .validate()
            .map_err(|e: AlignError| TrainError::Config(e.to_string()))
    }

    /// Learning rate in effect during 1-based `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let e = self.epochs;
        let first = e.div_ceil(3);
        let second = (2 * e).div_ceil(3);
        let drops = usize::from(epoch > first) + usize::from(epoch > second);
        self.learning_rate * self.anneal_factor.powi(drops as i32)
    }

    fn objective(&self) -> Objective {
        if self.excise_alignment {
            Objective::TaskOnly {
                delta: self.align.delta,
            }
        } else {
            Objective::Regularized(self.align)
        }
    }
}

struct Adam {
    config: AdamConfig,
    m: ParamGrads,
    v: ParamGrads,
    t: i32,
}

impl Adam {
    fn new(params: &ToyModelParams, config: AdamConfig) -> Self {
        Self {
            config,
            m: params.zero_grads(),
            v: params.zero_grads(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ToyModelParams, grads: &ParamGrads, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_lt: f64,
    pub val_lt: f64,
    pub train_la: f64,
    pub val_la: f64,
    pub val_violation_rate: f64,
    pub centroid_corr: f64,
    pub lr: f64,
    /// Mean per-example `L_R` over the optimizer pass.
    pub train_lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub align: AlignConfig,
    pub final_params: ToyModelParams,
}

impl TrainLog {
    pub fn epochs(&self) -> usize {
        self.records.len()
    }

    pub fn val_lt_curve(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.val_lt).collect()
    }

    pub fn train_lt_curve(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_lt).collect()
    }

    pub fn to_csv(&self) -> String {
        records_to_csv(&self.records)
    }
}

pub fn records_to_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from(TRAIN_LOG_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.epoch,
            fmt_f64(r.train_lt),
            fmt_f64(r.val_lt),
            fmt_f64(r.train_la),
            fmt_f64(r.val_la),
            fmt_f64(r.val_violation_rate),
            fmt_f64(r.centroid_corr),
            fmt_f64(r.lr)
        );
    }
    out
}

/// Validation-split metrics for one set of parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub task_loss: f64,
    pub align_loss: f64,
    pub violation_rate: f64,
    pub centroid_corr: f64,
}

/// Pearson correlation; 0 when either series is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let (a, b) = (&a[..n], &b[..n]);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Teacher-forced evaluation averaged over `examples`.
pub fn evaluate(
    params: &ToyModelParams,
    examples: &[Example],
    align: AlignConfig,
    tape: &mut Tape,
) -> Result<EvalSummary, ModelError> {
    let mut sum = EvalSummary {
        task_loss: 0.0,
        align_loss: 0.0,
        violation_rate: 0.0,
        centroid_corr: 0.0,
    };
    for ex in examples {
        let r = params.forward_on(tape, &ex.tokens, &ex.frames, Objective::Regularized(align))?;
        let report = monotonicity_report(&r.alignment, align.delta)?;
        sum.task_loss += r.task_loss;
        sum.align_loss += r.align_loss;
        sum.violation_rate += report.violation_rate;
        sum.centroid_corr += pearson(
            centroids(&r.alignment).as_slice(),
            centroids(&ex.gold_alignment).as_slice(),
        );
    }
    let n = examples.len().max(1) as f64;
    Ok(EvalSummary {
        task_loss: sum.task_loss / n,
        align_loss: sum.align_loss / n,
        violation_rate: sum.violation_rate / n,
        centroid_corr: sum.centroid_corr / n,
    })
}

fn is_divergence(e: &ModelError) -> bool {
    matches!(e, ModelError::Autodiff(AutodiffError::NonFinite { .. }))
}

pub fn train(
    dataset: &Dataset,
    model_config: ModelConfig,
    config: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    train_with_progress(dataset, model_config, config, |_| {})
}

/// [`train`], calling `on_epoch` after every completed epoch.
pub fn train_with_progress(
    dataset: &Dataset,
    model_config: ModelConfig,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainLog, TrainError> {
    config.validate()?;
    if dataset.train.is_empty() || dataset.val.is_empty() {
        return Err(TrainError::Config("train and val splits must be nonempty".into()));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(1);

    let mut params = ToyModelParams::init(model_config, &mut init_rng)?;
    let mut adam = Adam::new(&params, config.adam);
    let mut grads = params.zero_grads();
    let mut tape = Tape::new();
    let objective = config.objective();
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut records: Vec<EpochRecord> = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let lr = config.learning_rate_at(epoch);
        order.shuffle(&mut order_rng);
        let diverged = |records: &Vec<EpochRecord>| TrainError::Diverged {
            epoch,
            partial: records.clone(),
        };
        let (mut lt, mut la, mut lr_sum) = (0.0, 0.0, 0.0);
        for &idx in &order {
            let ex = &dataset.train[idx];
            let losses = match params.loss_and_grad(&mut tape, &ex.tokens, &ex.frames, objective, &mut grads) {
                Ok(l) => l,
                Err(e) if is_divergence(&e) => return Err(diverged(&records)),
                Err(e) => return Err(e.into()),
            };
            if !losses.total.is_finite() {
                return Err(diverged(&records));
            }
            lt += losses.task;
            la += losses.align;
            lr_sum += losses.total;
            adam.step(&mut params, &grads, lr);
        }
        let eval = match evaluate(&params, &dataset.val, config.align, &mut tape) {
            Ok(s) => s,
            Err(e) if is_divergence(&e) => return Err(diverged(&records)),
            Err(e) => return Err(e.into()),
        };
        let n = order.len() as f64;
        let record = EpochRecord {
            epoch,
            train_lt: lt / n,
            val_lt: eval.task_loss,
            train_la: la / n,
            val_la: eval.align_loss,
            val_violation_rate: eval.violation_rate,
            centroid_corr: eval.centroid_corr,
            lr,
            train_lr: lr_sum / n,
        };
        let finite = [record.train_lt, record.val_lt, record.train_la, record.val_la]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(diverged(&records));
        }
        on_epoch(&record);
        records.push(record);
    }
    Ok(TrainLog {
        records,
        align: config.align,
        final_params: params,
    })
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Counts points exceeding `factor` times the median of the centered
/// `window` around them (truncated at the ends of the curve).
pub fn spike_count(curve: &[f64], window: usize, factor: f64) -> usize {
    let half = window / 2;
    let mut scratch = Vec::with_capacity(window);
    (0..curve.len())
        .filter(|&t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(curve.len());
            scratch.clear();
            scratch.extend_from_slice(&curve[lo..hi]);
            curve[t] > factor * median(&mut scratch)
        })
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapSummary {
    pub mean_val_lt: f64,
    pub mean_gap: f64,
}

fn tail_len(epochs: usize, fraction: f64) -> usize {
    ((fraction * epochs as f64).round() as usize).clamp(1, epochs.max(1))
}

/// Mean validation loss and mean (validation − training) loss over the final
/// `tail_fraction` of epochs.
pub fn generalization_gap(log: &TrainLog, tail_fraction: f64) -> GapSummary {
    records_gap(&log.records, tail_fraction)
}

pub fn records_gap(records: &[EpochRecord], tail_fraction: f64) -> GapSummary {
    let tail = &records[records.len() - tail_len(records.len(), tail_fraction)..];
    let n = tail.len() as f64;
    GapSummary {
        mean_val_lt: tail.iter().map(|r| r.val_lt).sum::<f64>() / n,
        mean_gap: tail.iter().map(|r| r.val_lt - r.train_lt).sum::<f64>() / n,
    }
}

/// First epoch whose validation violation rate is at most `threshold`, or
/// `epochs + 1` if none is.
pub fn first_monotonic_epoch(log: &TrainLog, threshold: f64) -> usize {
    records_first_monotonic(&log.records, threshold)
}

pub fn records_first_monotonic(records: &[EpochRecord], threshold: f64) -> usize {
    records
        .iter()
        .find(|r| r.val_violation_rate <= threshold)
        .map_or(records.len() + 1, |r| r.epoch)
}

/// Alignment-path anomalies of one decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PathEvents {
    /// Some consecutive centroid decrease exceeds 1 position.
    pub repeat: bool,
    /// Some consecutive centroid increase exceeds `max_duration + 1`.
    pub skip: bool,
}

pub fn path_events(centroids: &[f64], max_duration: usize) -> PathEvents {
    let skip_jump = (max_duration + 1) as f64;
    let mut events = PathEvents::default();
    for w in centroids.windows(2) {
        let step = w[1] - w[0];
        events.repeat |= -step > 1.0;
        events.skip |= step > skip_jump;
    }
    events
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessScore {
    /// Examples with at least one repeat event.
    pub repeat_events: usize,
    /// Examples with at least one skip event.
    pub skip_events: usize,
    pub affected_example_fraction: f64,
}

/// Scores a set of alignments, counting each event kind once per alignment.
pub fn score_alignments<'a>(
    alignments: impl IntoIterator<Item = &'a AlignmentMatrix>,
    max_duration: usize,
) -> RobustnessScore {
    let (mut repeats, mut skips, mut affected, mut total) = (0, 0, 0, 0);
    for a in alignments {
        let e = path_events(centroids(a).as_slice(), max_duration);
        repeats += usize::from(e.repeat);
        skips += usize::from(e.skip);
        affected += usize::from(e.repeat || e.skip);
        total += 1;
    }
    RobustnessScore {
        repeat_events: repeats,
        skip_events: skips,
        affected_example_fraction: if total == 0 {
            0.0
        } else {
            affected as f64 / total as f64
        },
    }
}

/// Free-running decode of every example for `ceil(1.5 · d_max · N)` steps,
/// then repeat/skip scoring of the resulting attention paths.
pub fn robustness_score(
    params: &ToyModelParams,
    examples: &[Example],
    max_duration: usize,
) -> Result<RobustnessScore, ModelError> {
    let mut alignments = Vec::with_capacity(examples.len());
    for ex in examples {
        let budget = free_running_budget(ex.tokens.len(), max_duration);
        let (_, a) = params.decode_free_running(&ex.tokens, budget)?;
        alignments.push(a);
    }
    Ok(score_alignments(&alignments, max_duration))
}

/// Metrics for one completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub final_val_lt: f64,
    pub final_val_violation_rate: f64,
    pub tail_val_violation_rate: f64,
    pub tail_val_lt: f64,
    pub mean_gap: f64,
    pub spike_count: usize,
    pub first_monotonic_epoch: usize,
    pub robustness: RobustnessScore,
}

impl RunSummary {
    pub fn from_log(log: &TrainLog, dataset: &Dataset) -> Result<Self, ModelError> {
        let last = log.records.last().copied().expect("completed runs have records");
        let tail = &log.records[log.records.len() - tail_len(log.epochs(), DEFAULT_TAIL_FRACTION)..];
        let gap = generalization_gap(log, DEFAULT_TAIL_FRACTION);
        Ok(Self {
            final_val_lt: last.val_lt,
            final_val_violation_rate: last.val_violation_rate,
            tail_val_violation_rate: tail.iter().map(|r| r.val_violation_rate).sum::<f64>()
                / tail.len() as f64,
            tail_val_lt: gap.mean_val_lt,
            mean_gap: gap.mean_gap,
            spike_count: spike_count(&log.val_lt_curve(), SPIKE_WINDOW, SPIKE_FACTOR),
            first_monotonic_epoch: first_monotonic_epoch(log, MONOTONIC_THRESHOLD),
            robustness: robustness_score(&log.final_params, &dataset.test, dataset.table.max_duration())?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub lambda: f64,
    pub seed: u64,
    /// `None` when the run diverged.
    pub log: Option<TrainLog>,
    pub summary: Option<RunSummary>,
    pub diverged_epoch: Option<usize>,
}

/// Per-λ medians over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub runs: usize,
    pub diverged_runs: usize,
    pub final_val_lt: f64,
    pub mean_val_violation_rate: f64,
    pub final_val_violation_rate: f64,
    pub mean_gap: f64,
    pub spike_count: f64,
    pub first_monotonic_epoch: f64,
    pub affected_fraction: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub runs: Vec<SweepRun>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let cell = |x: f64| if x.is_finite() { fmt_f64(x) } else { String::new() };
        let mut out = String::from(SWEEP_REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                fmt_f64(r.lambda),
                r.runs,
                r.diverged_runs,
                cell(r.final_val_lt),
                cell(r.mean_val_violation_rate),
                cell(r.final_val_violation_rate),
                cell(r.mean_gap),
                cell(r.spike_count),
                cell(r.first_monotonic_epoch),
                cell(r.affected_fraction),
                r.diverged
            );
        }
        out
    }

    /// Row for `lambda`, if swept.
    pub fn row(&self, lambda: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.lambda == lambda)
    }

    pub fn runs_for(&self, lambda: f64) -> impl Iterator<Item = &SweepRun> {
        self.runs.iter().filter(move |r| r.lambda == lambda)
    }
}

/// Runs one independent training per `(λ, seed)` pair, in λ order. A
/// diverged run is recorded and the sweep continues.
pub fn sweep_lambda(
    dataset: &Dataset,
    model_config: ModelConfig,
    base: &TrainConfig,
    lambdas: &[f64],
    seeds: &[u64],
    mut on_run: impl FnMut(&SweepRun),
) -> Result<SweepReport, TrainError> {
    if lambdas.is_empty() || seeds.is_empty() {
        return Err(TrainError::Config("sweep needs at least one lambda and one seed".into()));
    }
    let mut runs = Vec::with_capacity(lambdas.len() * seeds.len());
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut per_lambda = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let config = TrainConfig {
                align: AlignConfig {
                    lambda,
                    ..base.align
                },
                seed,
                ..*base
            };
            let run = match train(dataset, model_config, &config) {
                Ok(log) => {
                    let summary = RunSummary::from_log(&log, dataset)?;
                    SweepRun {
                        lambda,
                        seed,
                        log: Some(log),
                        summary: Some(summary),
                        diverged_epoch: None,
                    }
                }
                Err(TrainError::Diverged { epoch, .. }) => SweepRun {
                    lambda,
                    seed,
                    log: None,
                    summary: None,
                    diverged_epoch: Some(epoch),
                },
                Err(e) => return Err(e),
            };
            on_run(&run);
            per_lambda.push(run);
        }
        rows.push(sweep_row(lambda, &per_lambda));
        runs.extend(per_lambda);
    }
    Ok(SweepReport { rows, runs })
}

fn sweep_row(lambda: f64, runs: &[SweepRun]) -> SweepRow {
    let done: Vec<&RunSummary> = runs.iter().filter_map(|r| r.summary.as_ref()).collect();
    let med = |f: &dyn Fn(&RunSummary) -> f64| {
        let mut v: Vec<f64> = done.iter().map(|s| f(s)).collect();
        median(&mut v)
    };
    let diverged_runs = runs.len() - done.len();
    SweepRow {
        lambda,
        runs: runs.len(),
        diverged_runs,
        final_val_lt: med(&|s| s.final_val_lt),
        mean_val_violation_rate: med(&|s| s.tail_val_violation_rate),
        final_val_violation_rate: med(&|s| s.final_val_violation_rate),
        mean_gap: med(&|s| s.mean_gap),
        spike_count: med(&|s| s.spike_count as f64),
        first_monotonic_epoch: med(&|s| s.first_monotonic_epoch as f64),
        affected_fraction: med(&|s| s.robustness.affected_example_fraction),
        diverged: diverged_runs > 0,
    }
}

/// Median of a list (mean of the middle pair for even lengths).
pub fn median_of(values: &[f64]) -> f64 {
    median(&mut values.to_vec())
}
