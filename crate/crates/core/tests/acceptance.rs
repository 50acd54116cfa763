//! Acceptance criteria, one PASS/FAIL line each.
//!
//! `cargo test --release --test acceptance` runs everything; passing
//! criterion numbers (`-- 1 4 8`) runs a subset. Criteria 5 to 7 share one
//! set of 300-epoch training runs on the default corpus and dominate the
//! runtime.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use monoalign::align::{alignment_loss_raw, hinge_arguments, DEFAULT_DELTA, DEFAULT_LAMBDA};
use monoalign::autodiff::relative_error;
use monoalign::cli::{Command as Cmd, CommandConfig, TRAIN_LOG_FILE};
use monoalign::data::{Dataset, DatasetConfig};
use monoalign::gradcheck::{
    align_softmax_check, check_model, check_ops, smooth_logits, KINK_MARGIN, MODEL_TOLERANCE,
    OP_TOLERANCE,
};
use monoalign::model::ModelConfig;
use monoalign::train::{
    median_of, score_alignments, sweep_lambda, train, SweepReport, TrainConfig, ANNEAL_FACTOR,
    DEFAULT_LAMBDA_GRID,
};
use monoalign::{alignment_loss, alignment_loss_grad, AlignConfig, AlignmentMatrix};

/// Nonzero weights swept against the λ = 0 baseline for criteria 5 to 7.
/// At this model size the task loss is about 1e-2 and L_A about 1e-3, so
/// weights near the default 1e-5 leave training unchanged.
const SWEPT_LAMBDAS: [f64; 1] = [0.1];
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const RUN_BUDGET: Duration = Duration::from_secs(60 * 60);

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn random_stochastic(rng: &mut impl Rng, n: usize, m: usize) -> AlignmentMatrix {
    let mut values = vec![0.0; n * m];
    for j in 0..m {
        let col: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let s: f64 = col.iter().sum();
        for i in 0..n {
            values[i * m + j] = col[i] / s;
        }
    }
    AlignmentMatrix::new(n, m, values).unwrap()
}

/// Term-by-term evaluation straight from the definition.
fn naive_loss(a: &AlignmentMatrix, delta: f64) -> f64 {
    let (n, m) = (a.n_inputs(), a.n_frames());
    let c: Vec<f64> = (0..m)
        .map(|j| (0..n).map(|i| a.get(i, j) * (i + 1) as f64).sum())
        .collect();
    let margin = delta * n as f64 / m as f64;
    (0..m.saturating_sub(1))
        .map(|j| ((c[j] - c[j + 1] + margin) / n as f64).max(0.0))
        .sum()
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let n = rng.random_range(1..=12);
        let m = rng.random_range(1..=12);
        let delta = [0.0, 0.01, 0.1][k % 3];
        let a = random_stochastic(&mut rng, n, m);
        worst = worst.max((alignment_loss(&a, delta).unwrap() - naive_loss(&a, delta)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-12 && secs < 5.0,
        format!("1000 matrices, max |difference| {worst:.2e} (limit 1e-12), {secs:.2} s (limit 5 s)"),
    )
}

fn criterion_2() -> Verdict {
    let diag = alignment_loss(&AlignmentMatrix::one_hot(4, &[0, 1, 2, 3]).unwrap(), 0.01).unwrap();
    let flat = alignment_loss(&AlignmentMatrix::from_columns(&vec![vec![0.25; 4]; 5]).unwrap(), 0.01).unwrap();
    let anti = alignment_loss(&AlignmentMatrix::one_hot(3, &[2, 1, 0]).unwrap(), 0.01).unwrap();
    let ok = diag == 0.0 && (flat - 0.008).abs() < 1e-12 && (anti - 0.6733333).abs() <= 1e-6;
    verdict(ok, format!("diagonal {diag}, constant 4x5 {flat:.12}, anti-diagonal {anti:.9}"))
}

fn fd_grad_error(a: &AlignmentMatrix, delta: f64, step: f64) -> f64 {
    let (n, m) = (a.n_inputs(), a.n_frames());
    let analytic = alignment_loss_grad(a, delta).unwrap();
    let mut x = a.values().to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..x.len() {
        let orig = x[k];
        x[k] = orig + step;
        let plus = alignment_loss_raw(n, m, &x, delta).unwrap();
        x[k] = orig - step;
        let minus = alignment_loss_raw(n, m, &x, delta).unwrap();
        x[k] = orig;
        worst = worst.max(relative_error(analytic[k], (plus - minus) / (2.0 * step)));
    }
    worst
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut grad_worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 100 {
        let (n, m) = (rng.random_range(2..=10), rng.random_range(2..=10));
        let a = random_stochastic(&mut rng, n, m);
        // a step of 1e-6 moves a centroid by at most n·1e-6, far inside the margin
        if hinge_arguments(&a, DEFAULT_DELTA).unwrap().iter().any(|h| h.abs() < KINK_MARGIN) {
            continue;
        }
        grad_worst = grad_worst.max(fd_grad_error(&a, DEFAULT_DELTA, 1e-6));
        checked += 1;
    }
    let ops = check_ops(3, None).unwrap();
    let op_worst = ops.iter().map(|l| l.max_rel_error).fold(0.0, f64::max);
    let mut softmax_worst: f64 = 0.0;
    for _ in 0..5 {
        let logits = smooth_logits(&mut rng, 4, 6, DEFAULT_DELTA);
        softmax_worst = softmax_worst.max(align_softmax_check(&logits, DEFAULT_DELTA, None).unwrap());
    }
    let model = check_model(3, None).unwrap();
    let model_worst = model.iter().map(|l| l.max_rel_error).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let failing: Vec<&str> = ops.iter().chain(&model).filter(|l| !l.passed()).map(|l| l.name.as_str()).collect();
    let ok = grad_worst < 1e-6
        && softmax_worst < 1e-6
        && op_worst < OP_TOLERANCE
        && model_worst < MODEL_TOLERANCE
        && failing.is_empty()
        && secs < 30.0;
    verdict(
        ok,
        format!(
            "loss gradient {grad_worst:.2e} over 100 matrices (limit 1e-6); loss over softmax {softmax_worst:.2e} (limit 1e-6); \
             worst op {op_worst:.2e} over {} ops (limit 1e-5); model {model_worst:.2e} over {} cases (limit 1e-4); {secs:.1} s (limit 30 s)",
            ops.len(),
            model.len()
        ),
    )
}

fn criterion_4() -> Verdict {
    let train = CommandConfig::try_parse_from(["monoalign", "train", "--data", "d.json", "--out", "o"]).unwrap();
    let sweep = CommandConfig::try_parse_from(["monoalign", "sweep", "--data", "d.json", "--out", "o"]).unwrap();
    let analyze = CommandConfig::try_parse_from(["monoalign", "analyze", "--alignment", "a.csv"]).unwrap();
    let (Cmd::Train(t), Cmd::Sweep(s), Cmd::Analyze(a)) = (train.command, sweep.command, analyze.command) else {
        return verdict(false, "subcommands did not parse");
    };
    let grid_ok = s.lambdas == vec![0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2] && s.lambdas == DEFAULT_LAMBDA_GRID.to_vec();
    let ok = t.optim.delta == 0.01
        && a.delta == 0.01
        && s.optim.delta == 0.01
        && t.lambda == 1e-5
        && t.lambda == DEFAULT_LAMBDA
        && t.optim.lr == 1e-3
        && s.optim.lr == 1e-3
        && t.optim.anneal_factor == 0.3
        && ANNEAL_FACTOR == 0.3
        && grid_ok
        && TrainConfig::default().learning_rate == 1e-3;
    verdict(
        ok,
        format!(
            "delta {}, lambda {:e}, lr {:e}, anneal {}, grid {:?}",
            t.optim.delta, t.lambda, t.optim.lr, t.optim.anneal_factor, s.lambdas
        ),
    )
}

struct Experiment {
    report: SweepReport,
    best: f64,
    elapsed: Duration,
    gold_events: (usize, usize),
}

fn run_experiment() -> Experiment {
    let dataset = Dataset::generate(&DatasetConfig::default()).unwrap();
    let model = ModelConfig::new(dataset.table.vocab_size(), dataset.table.frame_dim());
    let mut lambdas = vec![0.0];
    lambdas.extend(SWEPT_LAMBDAS);
    let start = Instant::now();
    let report = sweep_lambda(&dataset, model, &TrainConfig::default(), &lambdas, &SEEDS, |run| {
        eprintln!(
            "  run lambda {:e} seed {}: {} ({:.0} s elapsed)",
            run.lambda,
            run.seed,
            match run.diverged_epoch {
                Some(e) => format!("diverged at epoch {e}"),
                None => "done".into(),
            },
            start.elapsed().as_secs_f64()
        );
    })
    .unwrap();
    let elapsed = start.elapsed();
    let best = report
        .rows
        .iter()
        .filter(|r| r.lambda != 0.0 && !r.diverged)
        .min_by(|a, b| a.mean_val_violation_rate.total_cmp(&b.mean_val_violation_rate))
        .map(|r| r.lambda)
        .unwrap_or(f64::NAN);
    let gold: Vec<AlignmentMatrix> = dataset.test.iter().map(|e| e.gold_alignment.clone()).collect();
    let g = score_alignments(&gold, dataset.table.max_duration());
    Experiment {
        report,
        best,
        elapsed,
        gold_events: (g.repeat_events, g.skip_events),
    }
}

fn tail_val_lt(report: &SweepReport, lambda: f64) -> f64 {
    let v: Vec<f64> = report
        .runs_for(lambda)
        .filter_map(|r| r.summary.as_ref())
        .map(|s| s.tail_val_lt)
        .collect();
    median_of(&v)
}

fn criterion_5(x: &Experiment) -> Verdict {
    let (Some(base), Some(reg)) = (x.report.row(0.0), x.report.row(x.best)) else {
        return verdict(false, "no usable regularized run");
    };
    let minutes = x.elapsed.as_secs_f64() / 60.0;
    let ok = reg.first_monotonic_epoch <= 0.5 * base.first_monotonic_epoch && x.elapsed < RUN_BUDGET;
    verdict(
        ok,
        format!(
            "median first epoch with violation rate <= 0.05: lambda {:e} -> {}, baseline -> {} (needs <= {}); {} runs in {minutes:.1} min (limit 60)",
            x.best,
            reg.first_monotonic_epoch,
            base.first_monotonic_epoch,
            0.5 * base.first_monotonic_epoch,
            x.report.runs.len()
        ),
    )
}

fn criterion_6(x: &Experiment) -> Verdict {
    let (Some(base), Some(reg)) = (x.report.row(0.0), x.report.row(x.best)) else {
        return verdict(false, "no usable regularized run");
    };
    let (lt_base, lt_reg) = (tail_val_lt(&x.report, 0.0), tail_val_lt(&x.report, x.best));
    let ok = reg.final_val_violation_rate < 0.5 * base.final_val_violation_rate && lt_reg <= 1.1 * lt_base;
    verdict(
        ok,
        format!(
            "median final violation rate {:.4} vs baseline {:.4} (needs < {:.4}); median tail val L_T {lt_reg:.5} vs {lt_base:.5} (needs <= {:.5})",
            reg.final_val_violation_rate,
            base.final_val_violation_rate,
            0.5 * base.final_val_violation_rate,
            1.1 * lt_base
        ),
    )
}

fn criterion_7(x: &Experiment) -> Verdict {
    let (Some(base), Some(reg)) = (x.report.row(0.0), x.report.row(x.best)) else {
        return verdict(false, "no usable regularized run");
    };
    let ok = reg.affected_fraction <= base.affected_fraction && x.gold_events == (0, 0);
    verdict(
        ok,
        format!(
            "median affected fraction {:.4} vs baseline {:.4}; gold paths: {} repeats, {} skips",
            reg.affected_fraction, base.affected_fraction, x.gold_events.0, x.gold_events.1
        ),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_monoalign"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn same_files(a: &Path, b: &Path) -> bool {
    match (std::fs::read(a), std::fs::read(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn criterion_8() -> Verdict {
    let dir = tempfile::TempDir::new().unwrap();
    let d = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (d1, d2) = (d.join("d1.json"), d.join("d2.json"));
    let mut ok = true;
    for f in [&d1, &d2] {
        ok &= run_cli(&["gen-data", "--out", &s(f), "--seed", "7"]);
    }
    let gen_same = same_files(&d1, &d2);

    let small = d.join("small.json");
    ok &= run_cli(&["gen-data", "--out", &s(&small), "--seed", "7", "--train-size", "200", "--val-size", "40", "--test-size", "40"]);
    let (r1, r2) = (d.join("r1"), d.join("r2"));
    for r in [&r1, &r2] {
        ok &= run_cli(&["train", "--data", &s(&small), "--epochs", "5", "--seed", "2", "--lambda", "1e-3", "--out", &s(r)]);
    }
    let train_same = same_files(&r1.join(TRAIN_LOG_FILE), &r2.join(TRAIN_LOG_FILE))
        && same_files(&r1.join("checkpoint.json"), &r2.join("checkpoint.json"));

    let csv = d.join("a.csv");
    std::fs::write(&csv, "3,4\n0.7,0.2,0.1,0.0\n0.2,0.6,0.3,0.1\n0.1,0.2,0.6,0.9\n").unwrap();
    let analyze = || {
        Command::new(env!("CARGO_BIN_EXE_monoalign"))
            .args(["analyze", "--alignment", &s(&csv)])
            .output()
            .map(|o| o.stdout)
            .unwrap_or_default()
    };
    let (o1, o2) = (analyze(), analyze());
    let analyze_same = !o1.is_empty() && o1 == o2;
    verdict(
        ok && gen_same && train_same && analyze_same,
        format!("gen-data identical: {gen_same}; train (5 epochs) log and checkpoint identical: {train_same}; analyze identical: {analyze_same}"),
    )
}

fn criterion_9() -> Verdict {
    let dataset = Dataset::generate(&DatasetConfig::default()).unwrap();
    let model = ModelConfig::new(dataset.table.vocab_size(), dataset.table.frame_dim());
    let config = TrainConfig {
        epochs: 3,
        align: AlignConfig::new(DEFAULT_DELTA, 0.0).unwrap(),
        seed: 9,
        ..TrainConfig::default()
    };
    let with_term = train(&dataset, model, &config).unwrap();
    let without = train(&dataset, model, &TrainConfig { excise_alignment: true, ..config }).unwrap();
    let logs_same = with_term.records == without.records;
    let params_same = with_term.final_params == without.final_params;
    let total_is_task = with_term.records.iter().all(|r| r.train_lr == r.train_lt);
    verdict(
        logs_same && params_same && total_is_task,
        format!(
            "3 epochs on the default corpus: logs bit-identical {logs_same}, parameters bit-identical {params_same}, L_R == L_T every epoch {total_is_task}"
        ),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |k: usize| selected.is_empty() || selected.contains(&k);
    let names = [
        "",
        "alignment loss matches brute force",
        "exact values",
        "gradient correctness",
        "shipped defaults",
        "early monotonicity",
        "regularizer efficacy",
        "robustness",
        "determinism",
        "inert at lambda 0",
    ];
    let mut results = Vec::new();
    let mut report = |k: usize, v: Verdict| {
        println!("criterion {k} ({}): {} | {}", names[k], if v.passed { "PASS" } else { "FAIL" }, v.detail);
        results.push(v.passed);
    };

    let cheap: [(usize, fn() -> Verdict); 6] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (8, criterion_8),
        (9, criterion_9),
    ];
    for (k, f) in cheap.iter().filter(|(k, _)| *k < 5) {
        if want(*k) {
            report(*k, f());
        }
    }
    if want(5) || want(6) || want(7) {
        eprintln!("training lambda 0 and {SWEPT_LAMBDAS:?} over seeds {SEEDS:?}");
        let x = run_experiment();
        for line in x.report.to_csv().lines() {
            eprintln!("  {line}");
        }
        for (k, f) in [(5, criterion_5 as fn(&Experiment) -> Verdict), (6, criterion_6), (7, criterion_7)] {
            if want(k) {
                report(k, f(&x));
            }
        }
    }
    for (k, f) in cheap.iter().filter(|(k, _)| *k > 7) {
        if want(*k) {
            report(*k, f());
        }
    }

    let failed = results.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
