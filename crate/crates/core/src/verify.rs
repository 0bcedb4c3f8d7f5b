//! Built-in numerical self-checks, run by `pogars verify`.
//!
//! Each check compares an optimized code path against a slow, direct
//! reference computed here.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    horizontal_flip, normalize_all, synth_generate, ClipWindow, LabelMaps, SynthConfig,
};
use crate::model::{
    forward_tape, multitask_loss, Batch, BoundParams, Fusion, ModelError, PogarsConfig,
    PogarsParams,
};
use crate::tensor::{grad_check, GradCheckReport, Tape, Tensor, TensorError, Var};
use crate::train::{AdamState, BETA1, BETA2, EPSILON};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// the measured error (or violation count)
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn below(name: impl Into<String>, measured: f64, tolerance: f64, detail: String) -> Self {
        CheckResult {
            name: name.into(),
            measured,
            tolerance,
            passed: measured < tolerance,
            detail,
        }
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_f64(shape.to_vec(), &v).expect("shape matches")
}

/// Cross-correlation by direct summation, `x: [B, C, T]`, `k: [O, C, K]`.
pub fn conv1d_direct(
    x: &Tensor<f64>,
    k: &Tensor<f64>,
    b: &Tensor<f64>,
    padding: usize,
) -> Tensor<f64> {
    let (bn, c, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, kw) = (k.shape()[0], k.shape()[2]);
    let out_len = t + 2 * padding + 1 - kw;
    let mut y = vec![0.0; bn * o * out_len];
    for n in 0..bn {
        for oc in 0..o {
            for s in 0..out_len {
                let mut acc = b.values()[oc];
                for ic in 0..c {
                    for j in 0..kw {
                        let pos = s + j;
                        if pos >= padding && pos - padding < t {
                            acc += k.at(&[oc, ic, j]) * x.at(&[n, ic, pos - padding]);
                        }
                    }
                }
                y[(n * o + oc) * out_len + s] = acc;
            }
        }
    }
    Tensor::new(vec![bn, o, out_len], y).expect("shape matches")
}

/// Largest elementwise gap between the tape conv and the direct sum over
/// `instances` random problems.
pub fn conv_oracle_check(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (bn, c, o) = (
            rng.gen_range(1..4),
            rng.gen_range(1..6),
            rng.gen_range(1..6),
        );
        let kw = rng.gen_range(1..5);
        let t = rng.gen_range(kw..kw + 8);
        let padding = rng.gen_range(0..3);
        let x = random_tensor(&mut rng, &[bn, c, t], -1.0, 1.0);
        let k = random_tensor(&mut rng, &[o, c, kw], -1.0, 1.0);
        let b = random_tensor(&mut rng, &[o], -1.0, 1.0);
        let mut tape = Tape::new();
        let (xv, kv, bv) = (tape.leaf(&x), tape.leaf(&k), tape.leaf(&b));
        let y = tape.conv1d(xv, kv, bv, padding).expect("valid instance");
        let want = conv1d_direct(&x, &k, &b, padding);
        assert_eq!(tape.value(y).shape(), want.shape());
        for (a, w) in tape.value(y).values().iter().zip(want.values()) {
            worst = worst.max((a - w).abs());
        }
    }
    worst
}

/// Scalar ADAM update written straight from the update equations.
pub fn adam_scalar_oracle(
    theta: f64,
    g: f64,
    m: f64,
    v: f64,
    step: i32,
    lr: f64,
) -> (f64, f64, f64) {
    let m = BETA1 * m + (1.0 - BETA1) * g;
    let v = BETA2 * v + (1.0 - BETA2) * g * g;
    let m_hat = m / (1.0 - BETA1.powi(step));
    let v_hat = v / (1.0 - BETA2.powi(step));
    (theta - lr * m_hat / (v_hat.sqrt() + EPSILON), m, v)
}

/// Largest gap between [`AdamState::step`] and the scalar oracle over
/// `updates` random scalar updates (several steps per parameter).
pub fn adam_oracle_check(updates: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < updates {
        let theta0 = rng.gen_range(-2.0..2.0);
        let t = Tensor::<f64>::from_f64([1], &[theta0]).expect("scalar");
        let mut params = PogarsParams::from_tensors([("w".to_string(), t)].into_iter().collect());
        let mut state = AdamState::new(&params);
        let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
        for step in 1..=10 {
            let g = rng.gen_range(-3.0..3.0);
            let lr = rng.gen_range(1e-4..1e-1);
            let w = params.get_mut("w").expect("present");
            w.zero_grad();
            w.accumulate_grad(&[g]).expect("scalar grad");
            state.step(&mut params, lr).expect("finite update");
            (theta, m, v) = adam_scalar_oracle(theta, g, m, v, step, lr);
            let got = params.get("w").expect("present").values()[0];
            worst = worst
                .max((got - theta).abs())
                .max((state.m["w"][0] - m).abs())
                .max((state.v["w"][0] - v).abs());
            done += 1;
        }
    }
    worst
}

/// Softmax rows over random logits spanning ±`spread`: returns the largest
/// deviation of a row sum from 1 and the count of negative entries.
pub fn softmax_sweep(rows: usize, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut negative) = (0.0f64, 0usize);
    for i in 0..rows {
        let spread = [1.0, 10.0, 100.0, 1000.0][i % 4];
        let len = rng.gen_range(1..40);
        let x = random_tensor(&mut rng, &[2, len], -spread, spread);
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let y = tape.softmax(xv, 1).expect("valid axis");
        for row in tape.value(y).values().chunks(len) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            negative += row.iter().filter(|v| **v < 0.0).count();
        }
    }
    (worst, negative)
}

/// Number of synthetic samples whose double flip is not bit-identical.
pub fn flip_involution_failures(samples: usize, seed: u64) -> usize {
    let records = synth_generate(&SynthConfig {
        classes: 8,
        per_class: samples.div_ceil(8),
        noise: 0.02,
        seed,
        ..SynthConfig::default()
    })
    .expect("valid synth config");
    let data = normalize_all(&records[..samples], ClipWindow::default())
        .expect("synthetic data normalizes");
    let maps = LabelMaps;
    data.iter()
        .filter(|s| horizontal_flip(&horizontal_flip(s, &maps), &maps) != **s)
        .count()
}

/// Random inputs for `cfg` in the stacked layout, independent of the
/// dataset pipeline so any `pose_dim` works.
pub fn random_batch(cfg: &PogarsConfig, samples: usize, seed: u64) -> Batch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB47C_4000);
    let (n, t) = (cfg.persons, cfg.frames);
    Batch {
        keypoints: random_tensor(&mut rng, &[samples * n, cfg.pose_dim, t], -0.2, 0.2),
        centers: random_tensor(&mut rng, &[samples * n, 2, t], 0.0, 1.0),
        ball: cfg
            .ball_enabled
            .then(|| random_tensor(&mut rng, &[samples, 2, t], 0.0, 1.0)),
        group_labels: (0..samples)
            .map(|_| rng.gen_range(0..cfg.group_classes))
            .collect(),
        action_labels: (0..samples * n)
            .map(|_| rng.gen_range(0..cfg.action_classes))
            .collect(),
    }
}

fn as_tensor_error(e: ModelError) -> TensorError {
    match e {
        ModelError::Tensor(t) => t,
        other => TensorError::Contract(other.to_string()),
    }
}

/// Central-difference step for whole-model checks. With smaller steps,
/// roundoff in the O(1) loss swamps gradients of order 1e-10, which the
/// attention stacks produce in numbers.
pub const MODEL_FD_STEP: f64 = 3e-3;

/// Finite-difference check of the multi-task loss through the whole
/// network with respect to every parameter, at double precision.
pub fn model_grad_check(
    cfg: &PogarsConfig,
    seed: u64,
    eps: f64,
) -> Result<GradCheckReport, ModelError> {
    let params = PogarsParams::<f64>::init(cfg, seed)?;
    let names: Vec<String> = params.iter().map(|(k, _)| k.clone()).collect();
    let inputs: Vec<Tensor<f64>> = params.iter().map(|(_, t)| t.clone()).collect();
    let batch = random_batch(cfg, 1, seed);
    let report = grad_check(
        |tape: &mut Tape<'_, f64>, vars: &[Var]| {
            let bound = BoundParams::from_vars(names.iter().cloned(), vars);
            let out = forward_tape(tape, &bound, cfg, &batch).map_err(as_tensor_error)?;
            let loss = multitask_loss(
                tape,
                out.group_logits,
                out.action_logits,
                &batch.group_labels,
                &batch.action_labels,
                cfg.alpha,
            )
            .map_err(as_tensor_error)?;
            Ok(loss.total)
        },
        &inputs,
        eps,
    )?;
    Ok(report)
}

/// Gradient checks of the individual tape ops on random inputs.
pub fn op_grad_checks(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    type OpFn = fn(&mut Tape<'_, f64>, &[Var]) -> crate::tensor::Result<Var>;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases: Vec<(&'static str, Vec<Vec<usize>>, OpFn)> = vec![
        ("linear", vec![vec![3, 4], vec![5, 4], vec![5]], |t, v| {
            let y = t.linear(v[0], v[1], v[2])?;
            let y2 = t.mul(y, y)?;
            t.sum(y2)
        }),
        (
            "conv1d",
            vec![vec![2, 3, 6], vec![4, 3, 3], vec![4]],
            |t, v| {
                let y = t.conv1d(v[0], v[1], v[2], 1)?;
                let y2 = t.mul(y, y)?;
                t.sum(y2)
            },
        ),
        ("relu", vec![vec![4, 5]], |t, v| {
            let y = t.relu(v[0])?;
            let y2 = t.mul(y, y)?;
            t.sum(y2)
        }),
        ("softmax", vec![vec![3, 5], vec![3, 5]], |t, v| {
            let y = t.softmax(v[0], 1)?;
            let w = t.mul(y, v[1])?;
            t.sum(w)
        }),
        (
            "mul_broadcast",
            vec![vec![2, 3, 4], vec![2, 1, 4]],
            |t, v| {
                let y = t.mul(v[0], v[1])?;
                let y2 = t.mul(y, y)?;
                t.sum(y2)
            },
        ),
        ("add_scale", vec![vec![3, 4], vec![3, 4]], |t, v| {
            let y = t.add(v[0], v[1])?;
            let y = t.scale(y, 1.7)?;
            let y2 = t.mul(y, y)?;
            t.sum(y2)
        }),
        ("mean_axis", vec![vec![2, 3, 4]], |t, v| {
            let y = t.mean_axis(v[0], 2)?;
            let y2 = t.mul(y, y)?;
            t.mean(y2)
        }),
        ("concat_reshape", vec![vec![2, 3], vec![2, 2]], |t, v| {
            let y = t.concat(&[v[0], v[1]], 1)?;
            let y = t.reshape(y, &[5, 2])?;
            let y2 = t.mul(y, y)?;
            let s = t.softmax(y2, 0)?;
            let w = t.mul(s, y)?;
            t.sum(w)
        }),
        ("cross_entropy", vec![vec![4, 6]], |t, v| {
            let l = t.cross_entropy(v[0], &[0, 5, 2, 2])?;
            t.mean(l)
        }),
    ];
    cases
        .into_iter()
        .map(|(name, shapes, f)| {
            let inputs: Vec<Tensor<f64>> = shapes
                .iter()
                .map(|s| random_tensor(&mut rng, s, -1.0, 1.0))
                .collect();
            let report = grad_check(f, &inputs, 1e-6).expect("op check runs");
            (name, report)
        })
        .collect()
}

/// The tiny full-model configurations exercised by the gradient check.
pub fn tiny_variants() -> Vec<(&'static str, PogarsConfig)> {
    let late_ball = PogarsConfig {
        ball_enabled: true,
        ..PogarsConfig::tiny()
    };
    let early = PogarsConfig {
        fusion: Fusion::Early,
        ..PogarsConfig::tiny()
    };
    vec![
        ("late", PogarsConfig::tiny()),
        ("late+ball", late_ball),
        ("early", early),
    ]
}

/// Every check in the suite.
pub fn run_all() -> Vec<CheckResult> {
    let mut out = Vec::new();
    for (name, r) in op_grad_checks(11) {
        out.push(CheckResult::below(
            format!("grad:{name}"),
            r.max_rel_error,
            1e-4,
            format!("{} coords, {} near kinks", r.checked, r.skipped_near_kink),
        ));
    }
    let conv = conv_oracle_check(100, 7);
    out.push(CheckResult::below(
        "conv1d vs direct sum",
        conv,
        1e-6,
        "100 random instances".into(),
    ));
    let (sum_err, negative) = softmax_sweep(400, 3);
    out.push(CheckResult::below(
        "softmax row sums",
        sum_err,
        1e-6,
        format!("{negative} negative entries"),
    ));
    out.push(CheckResult::below(
        "softmax nonnegative",
        negative as f64,
        0.5,
        "400 random rows".into(),
    ));
    let flips = flip_involution_failures(50, 5);
    out.push(CheckResult::below(
        "flip involution",
        flips as f64,
        0.5,
        "50 synthetic samples".into(),
    ));
    let adam = adam_oracle_check(1000, 9);
    out.push(CheckResult::below(
        "adam vs scalar oracle",
        adam,
        1e-12,
        "1000 scalar updates".into(),
    ));
    for (variant, cfg) in tiny_variants() {
        let (rel, detail) = match model_grad_check(&cfg, 1, MODEL_FD_STEP) {
            Ok(r) => (
                r.max_rel_error,
                format!("{} coords, {} near kinks", r.checked, r.skipped_near_kink),
            ),
            Err(e) => (f64::INFINITY, e.to_string()),
        };
        out.push(CheckResult::below(
            format!("grad:tiny model ({variant})"),
            rel,
            1e-4,
            detail,
        ));
    }
    out
}
