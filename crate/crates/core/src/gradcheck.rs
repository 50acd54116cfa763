//! Gradient checks for every tape op and for the full toy-model objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::{alignment_loss_raw, hinge_arguments, AlignConfig, AlignmentMatrix};
use crate::autodiff::{
    finite_diff_check, relative_error, AutodiffError, Axis, OpKind, Tape, Tensor, Var,
};
use crate::model::{ModelConfig, ModelError, Objective, ToyModelParams};

/// Per-op threshold on the max relative error.
pub const OP_TOLERANCE: f64 = 1e-5;
/// Threshold for the end-to-end model check.
pub const MODEL_TOLERANCE: f64 = 1e-4;
pub const OP_STEP: f64 = 1e-6;
pub const MODEL_STEP: f64 = 1e-5;
/// Hinge arguments closer than this to zero make a finite-difference point
/// kink-adjacent.
pub const KINK_MARGIN: f64 = 1e-4;
/// Half-width of the uniform offset between a check's output and its
/// target.
pub const RESIDUAL: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckLine {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn random(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("nonzero dims")
}

/// `mse(y, t)` against a fixed target near the unperturbed output: a small
/// residual keeps the loss (and so the differencing roundoff) small relative
/// to its gradient.
fn scalarize(tape: &mut Tape, y: Var, target: &Tensor) -> Result<Var, AutodiffError> {
    let t = tape.leaf(target)?;
    tape.mse(y, t)
}

fn near_target(base: &[f64], rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = base.iter().map(|y| y + rng.random_range(-RESIDUAL..RESIDUAL)).collect();
    Tensor::matrix(rows, cols, data).expect("nonzero dims")
}

/// Checks `build` with respect to each of its inputs in turn.
fn check_inputs<F>(
    inputs: &[Tensor],
    out_dims: (usize, usize),
    fault: Option<OpKind>,
    rng: &mut impl Rng,
    build: F,
) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut base = Tape::new();
    let vars = inputs.iter().map(|t| base.leaf(t)).collect::<Result<Vec<_>, _>>()?;
    let y = build(&mut base, &vars)?;
    let target = near_target(base.value(y), out_dims.0, out_dims.1, rng);
    let mut worst: f64 = 0.0;
    for k in 0..inputs.len() {
        let check = finite_diff_check(
            |tape, x| {
                if let Some(kind) = fault {
                    tape.inject_fault(kind);
                }
                let mut vars = Vec::with_capacity(inputs.len());
                for (i, t) in inputs.iter().enumerate() {
                    vars.push(if i == k { x } else { tape.leaf(t)? });
                }
                let y = build(tape, &vars)?;
                scalarize(tape, y, &target)
            },
            &inputs[k],
            OP_STEP,
        )?;
        worst = worst.max(check.max_rel_error);
    }
    Ok(worst)
}

/// Runs every op on three seeded shapes and reports the worst relative error
/// per op.
pub fn check_ops(seed: u64, fault: Option<OpKind>) -> Result<Vec<CheckLine>, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = [(1usize, 3usize), (3, 4), (5, 2)];
    let mut lines = Vec::new();
    let mut push = |name: &str, err: f64| {
        lines.push(CheckLine {
            name: name.to_string(),
            max_rel_error: err,
            tolerance: OP_TOLERANCE,
        })
    };

    type Binary = fn(&mut Tape, Var, Var) -> Result<Var, AutodiffError>;
    let binaries: [(&str, Binary); 3] = [("add", Tape::add), ("sub", Tape::sub), ("mul", Tape::mul)];
    for (name, op) in binaries {
        let mut worst: f64 = 0.0;
        for &(r, c) in &shapes {
            let ins = [random(&mut rng, r, c), random(&mut rng, r, c)];
            worst = worst.max(check_inputs(&ins, (r, c), fault, &mut rng, |t, v| op(t, v[0], v[1]))?);
        }
        push(name, worst);
    }

    let mut worst: f64 = 0.0;
    for &(r, c) in &shapes {
        let ins = [random(&mut rng, r, c), random(&mut rng, 1, c)];
        worst = worst.max(check_inputs(&ins, (r, c), fault, &mut rng, |t, v| t.add_row(v[0], v[1]))?);
    }
    push("add_row", worst);

    type Unary = fn(&mut Tape, Var) -> Result<Var, AutodiffError>;
    let unaries: [(&str, Unary); 4] = [
        ("scale", |t, x| t.scale(x, -1.7)),
        ("tanh", Tape::tanh),
        ("sigmoid", Tape::sigmoid),
        ("softmax_cols", Tape::softmax_cols),
    ];
    for (name, op) in unaries {
        let mut worst: f64 = 0.0;
        for &(r, c) in &shapes {
            let ins = [random(&mut rng, r, c)];
            worst = worst.max(check_inputs(&ins, (r, c), fault, &mut rng, |t, v| op(t, v[0]))?);
        }
        push(name, worst);
    }

    let mut worst: f64 = 0.0;
    for &(r, c) in &shapes {
        let k = c + 1;
        let ins = [random(&mut rng, r, k), random(&mut rng, k, c)];
        worst = worst.max(check_inputs(&ins, (r, c), fault, &mut rng, |t, v| t.matmul(v[0], v[1]))?);
    }
    push("matmul", worst);

    let mut worst: f64 = 0.0;
    for &(r, c) in &shapes {
        let k = r + 2;
        let ins = [random(&mut rng, k, r), random(&mut rng, k, c)];
        worst = worst.max(check_inputs(&ins, (r, c), fault, &mut rng, |t, v| t.matmul_tn(v[0], v[1]))?);
    }
    push("matmul_tn", worst);

    let mut worst: f64 = 0.0;
    for &(n, filters, k) in &[(4usize, 1usize, 3usize), (7, 3, 5), (2, 2, 5)] {
        let ins = [random(&mut rng, n, 1), random(&mut rng, filters, k)];
        worst = worst.max(check_inputs(&ins, (n, filters), fault, &mut rng, |t, v| t.conv1d(v[0], v[1]))?);
    }
    push("conv1d", worst);

    let mut worst: f64 = 0.0;
    for &(vocab, dim, ids) in &[(3usize, 2usize, &[0usize, 2, 2][..]), (5, 4, &[4, 1][..]), (2, 1, &[1, 0, 1, 1][..])] {
        let ins = [random(&mut rng, vocab, dim)];
        worst = worst.max(check_inputs(&ins, (ids.len(), dim), fault, &mut rng, |t, v| {
            t.embedding(v[0], ids)
        })?);
    }
    push("embedding", worst);

    let mut worst: f64 = 0.0;
    for &(r, c) in &shapes {
        let rows = [random(&mut rng, r, c), random(&mut rng, r + 1, c)];
        worst = worst.max(check_inputs(&rows, (2 * r + 1, c), fault, &mut rng, |t, v| {
            t.concat(v, Axis::Rows)
        })?);
        let cols = [random(&mut rng, r, c), random(&mut rng, r, 2)];
        worst = worst.max(check_inputs(&cols, (r, c + 2), fault, &mut rng, |t, v| {
            t.concat(v, Axis::Cols)
        })?);
    }
    push("concat", worst);

    // mse is the scalarizer itself, so check it bare
    let mut worst: f64 = 0.0;
    for &(r, c) in &shapes {
        let target = random(&mut rng, r, c);
        let x = random(&mut rng, r, c);
        let check = finite_diff_check(
            |tape, x| {
                if let Some(kind) = fault {
                    tape.inject_fault(kind);
                }
                let t = tape.leaf(&target)?;
                tape.mse(x, t)
            },
            &x,
            OP_STEP,
        )?;
        worst = worst.max(check.max_rel_error);
    }
    push("mse", worst);

    let mut worst: f64 = 0.0;
    for &(n, m) in &[(4usize, 6usize), (3, 5), (6, 8)] {
        let logits = smooth_logits(&mut rng, n, m, 0.01);
        worst = worst.max(align_softmax_check(&logits, 0.01, fault)?);
    }
    push("align_loss", worst);

    Ok(lines)
}

/// Random logits whose softmax columns keep every hinge argument at least
/// [`KINK_MARGIN`] from zero.
pub fn smooth_logits(rng: &mut impl Rng, n: usize, m: usize, delta: f64) -> Tensor {
    loop {
        let logits = random(rng, n, m);
        let mut tape = Tape::new();
        let x = tape.leaf(&logits).expect("finite");
        let a = tape.softmax_cols(x).expect("finite");
        let alignment = AlignmentMatrix::new(n, m, tape.value(a).to_vec()).expect("softmax");
        let h = hinge_arguments(&alignment, delta).expect("valid delta");
        if h.iter().all(|x| x.abs() >= KINK_MARGIN) {
            return logits;
        }
    }
}

/// `alignment_loss ∘ column-softmax` checked at `logits`.
pub fn align_softmax_check(logits: &Tensor, delta: f64, fault: Option<OpKind>) -> Result<f64, AutodiffError> {
    Ok(finite_diff_check(
        |tape, x| {
            if let Some(kind) = fault {
                tape.inject_fault(kind);
            }
            let a = tape.softmax_cols(x)?;
            tape.align_loss(a, delta)
        },
        logits,
        OP_STEP,
    )?
    .max_rel_error)
}

/// Sanity helper: the raw loss evaluated directly matches the tape op.
pub fn align_op_matches_raw(values: &[f64], n: usize, m: usize, delta: f64) -> Result<bool, AutodiffError> {
    let mut tape = Tape::new();
    let x = tape.leaf_slice(n, m, values)?;
    let l = tape.align_loss(x, delta)?;
    Ok(tape.scalar(l) == alignment_loss_raw(n, m, values, delta)?)
}

/// Max relative error between backprop and central differences of the
/// model objective, over every parameter entry.
pub fn model_gradient_check(
    params: &ToyModelParams,
    tokens: &[usize],
    targets: &Tensor,
    objective: Objective,
    step: f64,
    fault: Option<OpKind>,
) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    if let Some(kind) = fault {
        tape.inject_fault(kind);
    }
    let mut grads = params.zero_grads();
    params.loss_and_grad(&mut tape, tokens, targets, objective, &mut grads)?;

    let mut probe = params.clone();
    let mut eval_tape = Tape::new();
    let mut loss_at = |p: &ToyModelParams| -> Result<f64, ModelError> {
        Ok(p.forward_on(&mut eval_tape, tokens, targets, objective)?.total_loss)
    };
    let mut worst: f64 = 0.0;
    for (t, g) in grads.iter().enumerate() {
        for k in 0..g.len() {
            let original = probe.tensors()[t].data()[k];
            probe.tensors_mut()[t].data_mut()[k] = original + step;
            let plus = loss_at(&probe)?;
            probe.tensors_mut()[t].data_mut()[k] = original - step;
            let minus = loss_at(&probe)?;
            probe.tensors_mut()[t].data_mut()[k] = original;
            let num = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(g[k], num));
        }
    }
    Ok(worst)
}

/// A seeded `(params, tokens, targets)` triple whose alignment keeps every
/// hinge argument at least [`KINK_MARGIN`] from zero. Targets sit within
/// [`RESIDUAL`] of the model's own free-running output, which teacher forcing
/// on those frames would reproduce exactly.
pub fn smooth_model_case(
    seed: u64,
    n_tokens: usize,
    config: ModelConfig,
    delta: f64,
) -> Result<(ToyModelParams, Vec<usize>, Tensor), ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let params = ToyModelParams::init(config, &mut rng)?;
        let tokens: Vec<usize> = (0..n_tokens).map(|_| rng.random_range(0..config.vocab_size)).collect();
        let m = n_tokens * 2 + 1;
        let (own, _) = params.decode_free_running(&tokens, m)?;
        let targets = near_target(own.data(), m, config.frame_dim, &mut rng);
        let r = params.forward_teacher_forced(&tokens, &targets, &AlignConfig::new(delta, 0.0)?)?;
        let h = hinge_arguments(&r.alignment, delta)?;
        if h.iter().all(|x| x.abs() >= KINK_MARGIN) {
            return Ok((params, tokens, targets));
        }
    }
}

/// End-to-end checks on three seeded cases with `δ = 0.01`, `λ = 1e-3`.
pub fn check_model(seed: u64, fault: Option<OpKind>) -> Result<Vec<CheckLine>, ModelError> {
    let config = ModelConfig::new(6, 4);
    let align = AlignConfig::new(0.01, 1e-3)?;
    let mut lines = Vec::new();
    for (case, n_tokens) in [3usize, 4, 5].into_iter().enumerate() {
        let (params, tokens, targets) = smooth_model_case(seed.wrapping_add(case as u64), n_tokens, config, align.delta)?;
        let err = model_gradient_check(
            &params,
            &tokens,
            &targets,
            Objective::Regularized(align),
            MODEL_STEP,
            fault,
        )?;
        lines.push(CheckLine {
            name: format!("model[{n_tokens} tokens]"),
            max_rel_error: err,
            tolerance: MODEL_TOLERANCE,
        });
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ops_pass() {
        for line in check_ops(0, None).unwrap() {
            assert!(line.passed(), "{line:?}");
        }
    }

    #[test]
    fn corrupted_rule_is_caught_and_named() {
        let lines = check_ops(0, Some(OpKind::Conv1d)).unwrap();
        let failed: Vec<_> = lines.iter().filter(|l| !l.passed()).map(|l| l.name.as_str()).collect();
        assert_eq!(failed, vec!["conv1d"]);
    }

    #[test]
    fn align_op_agrees_with_raw_loss() {
        let values = [0.2, 0.7, 0.8, 0.3];
        assert!(align_op_matches_raw(&values, 2, 2, 0.05).unwrap());
    }
}
