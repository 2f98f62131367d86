use rand::Rng as _;

use super::*;
use crate::batch::StateBatch;
use crate::gaussian_paths::{brownian_bridge, T_CLAMP};
use crate::rng::{rng_from_seed, Rng};

fn explicit_field(dim: usize, hidden: usize, seed: u64) -> DriftField {
    let cfg = NetConfig {
        input_dim: dim,
        output_dim: dim,
        hidden,
        blocks: 2,
        time_frequencies: 4,
    };
    DriftField::with_config(FieldKind::Explicit, Direction::Forward, cfg, &mut rng_from_seed(seed)).unwrap()
}

fn implicit_field(dim: usize, hidden: usize, seed: u64) -> DriftField {
    let cfg = NetConfig {
        input_dim: dim,
        output_dim: 1,
        hidden,
        blocks: 2,
        time_frequencies: 4,
    };
    DriftField::with_config(FieldKind::Implicit, Direction::Forward, cfg, &mut rng_from_seed(seed)).unwrap()
}

fn random_states(n: usize, d: usize, rng: &mut Rng) -> StateBatch {
    StateBatch::from_flat(d, (0..n * d).map(|_| rng.gen_range(-1.5..1.5)).collect())
}

fn random_times(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(T_CLAMP..1.0 - T_CLAMP)).collect()
}

fn batch_with_targets(field: &DriftField, n: usize, offset: &[f64], rng: &mut Rng) -> MatchBatch {
    let d = field.dim();
    let states = random_states(n, d, rng);
    let times = random_times(n, rng);
    let mut targets = field.drift(&times, &states);
    for r in 0..n {
        for (v, o) in targets.row_mut(r).iter_mut().zip(offset) {
            *v += o;
        }
    }
    MatchBatch::new(states.clone(), states.clone(), times, states, targets).unwrap()
}

fn implicit_batch(d: usize, n: usize, rng: &mut Rng) -> ImplicitBatch {
    let b0 = random_states(n, d, rng);
    let b1 = random_states(n + 3, d, rng);
    let states = random_states(n, d, rng);
    ImplicitBatch::new(b0, b1, random_times(n, rng), states).unwrap()
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn explicit_loss_vanishes_on_its_own_output() {
    let field = explicit_field(2, 8, 1);
    let mut rng = rng_from_seed(2);
    let b = batch_with_targets(&field, 16, &[0.0, 0.0], &mut rng);
    assert_eq!(explicit_loss(&field, &b).unwrap(), 0.0);
}

#[test]
fn explicit_loss_of_constant_offset() {
    let field = explicit_field(2, 8, 1);
    let mut rng = rng_from_seed(3);
    let delta = [0.3, -0.4];
    let b = batch_with_targets(&field, 16, &delta, &mut rng);
    let want = 0.5 * (0.09 + 0.16);
    assert!((explicit_loss(&field, &b).unwrap() - want).abs() < 1e-12);
}

#[test]
fn explicit_gradient_matches_finite_differences() {
    let mut field = explicit_field(2, 8, 7);
    let mut rng = rng_from_seed(8);
    let b = batch_with_targets(&field, 12, &[0.5, -0.2], &mut rng);
    // perturb so the residuals are not a constant offset
    for p in field.network_mut().params_mut() {
        *p += rng.gen_range(-0.2..0.2);
    }
    let (_, grad) = explicit_loss_and_grad(&field, &b).unwrap();
    let n = field.network().n_params();
    for _ in 0..20 {
        let i = rng.gen_range(0..n);
        let h = 1e-6;
        let orig = field.network().params()[i];
        field.network_mut().params_mut()[i] = orig + h;
        let lp = explicit_loss(&field, &b).unwrap();
        field.network_mut().params_mut()[i] = orig - h;
        let lm = explicit_loss(&field, &b).unwrap();
        field.network_mut().params_mut()[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        assert!(relative_gap(fd, grad[i]) < 1e-4, "param {i}: {fd} vs {}", grad[i]);
    }
}

#[test]
fn implicit_loss_of_constant_potential_is_zero() {
    let mut field = implicit_field(2, 8, 1);
    field.network_mut().params_mut().iter_mut().for_each(|p| *p = 0.0);
    field.network_mut().shift_output(3.7);
    let mut rng = rng_from_seed(4);
    let b = implicit_batch(2, 20, &mut rng);
    let l = implicit_loss(&field, &b, 1.0, Laplacian::Exact, &mut rng).unwrap();
    assert!(l.abs() < 1e-12, "{l}");
}

#[test]
fn implicit_loss_of_linear_potential() {
    let b_vec = [0.7, -1.3, 0.4];
    let mut rng = rng_from_seed(5);
    let batch = implicit_batch(3, 30, &mut rng);
    let mean_dot = |s: &StateBatch| s.rows().map(|r| r.iter().zip(&b_vec).map(|(x, b)| x * b).sum::<f64>()).sum::<f64>() / s.len() as f64;
    let half_norm = 0.5 * b_vec.iter().map(|b| b * b).sum::<f64>();
    let want = mean_dot(&batch.boundary0) - mean_dot(&batch.boundary1) + half_norm;
    for sigma in [0.0, 0.5, 2.0] {
        let mut field = implicit_field(3, 8, 2);
        field.network_mut().set_affine_potential(&b_vec, 0.0);
        let exact = implicit_loss(&field, &batch, sigma, Laplacian::Exact, &mut rng).unwrap();
        let hutch = implicit_loss(&field, &batch, sigma, Laplacian::Hutchinson { probes: 2 }, &mut rng).unwrap();
        assert!((exact - want).abs() < 1e-10, "sigma {sigma}: {exact} vs {want}");
        assert!((hutch - want).abs() < 1e-10);
    }
}

#[test]
fn implicit_loss_ignores_constant_shift() {
    let mut field = implicit_field(2, 8, 6);
    let mut rng = rng_from_seed(6);
    let b = implicit_batch(2, 25, &mut rng);
    let before = implicit_loss(&field, &b, 1.0, Laplacian::Exact, &mut rng).unwrap();
    field.network_mut().shift_output(-12.5);
    let after = implicit_loss(&field, &b, 1.0, Laplacian::Exact, &mut rng).unwrap();
    assert!((before - after).abs() < 1e-12);
}

#[test]
fn implicit_gradient_matches_finite_differences() {
    for (d, lap) in [(2, Laplacian::Exact), (5, Laplacian::Hutchinson { probes: 2 })] {
        let mut field = implicit_field(d, 8, 9);
        let mut rng = rng_from_seed(10);
        for p in field.network_mut().params_mut() {
            *p += rng.gen_range(-0.2..0.2);
        }
        let b = implicit_batch(d, 10, &mut rng);
        let probe_rng = rng_from_seed(11);
        let (_, grad) = implicit_loss_and_grad(&field, &b, 0.8, lap, &mut probe_rng.clone()).unwrap();
        let n = field.network().n_params();
        for _ in 0..20 {
            let i = rng.gen_range(0..n);
            let h = 1e-6;
            let orig = field.network().params()[i];
            field.network_mut().params_mut()[i] = orig + h;
            let lp = implicit_loss(&field, &b, 0.8, lap, &mut probe_rng.clone()).unwrap();
            field.network_mut().params_mut()[i] = orig - h;
            let lm = implicit_loss(&field, &b, 0.8, lap, &mut probe_rng.clone()).unwrap();
            field.network_mut().params_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!(relative_gap(fd, grad[i]) < 1e-4, "d={d} param {i}: {fd} vs {}", grad[i]);
        }
    }
}

#[test]
fn implicit_loss_is_bounded_below_over_random_parameters() {
    let mut rng = rng_from_seed(12);
    let b = implicit_batch(2, 64, &mut rng);
    let mut losses = Vec::new();
    for seed in 0..100 {
        let field = implicit_field(2, 16, 100 + seed);
        losses.push(implicit_loss(&field, &b, 1.0, Laplacian::Exact, &mut rng).unwrap());
    }
    assert!(losses.iter().all(|l| l.is_finite()));
    let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(min > -10.0, "min loss {min}");
}

#[test]
fn hutchinson_recovers_trace_of_quadratic() {
    let mut rng = rng_from_seed(13);
    // s(x) = ‖x‖² has Hessian 2I
    let (mean, se) = hutchinson_trace(|v| 2.0 * v.iter().map(|x| x * x).sum::<f64>(), 10, 10_000, &mut rng);
    assert!((mean - 20.0).abs() <= 3.0 * se.max(1e-12), "{mean} ± {se}");
}

#[test]
fn hutchinson_probe_channels_average_to_the_laplacian() {
    let field = implicit_field(4, 8, 14);
    let x = [0.3, -0.2, 0.8, 0.1];
    let t = [0.4];
    let exact_spec = JetSpec {
        tangents: (0..4).map(Tangent::Axis).collect(),
        second: (0..4).collect(),
    };
    let (out, _) = field.network().forward(&x, &t, &exact_spec);
    let lap: f64 = (0..4).map(|j| out.channel(5 + j)[0]).sum();
    let mut rng = rng_from_seed(15);
    let (mean, se) = hutchinson_trace(
        |v| {
            let spec = JetSpec {
                tangents: vec![Tangent::Probe(v.to_vec())],
                second: vec![0],
            };
            field.network().forward(&x, &t, &spec).0.channel(2)[0]
        },
        4,
        4000,
        &mut rng,
    );
    assert!((mean - lap).abs() <= 3.0 * se + 1e-12, "{mean} ± {se} vs {lap}");
}

#[test]
fn explicit_training_fits_a_single_pinned_pair() {
    let sigma = 0.5;
    let path = brownian_bridge(&[-1.0, 0.5], &[1.0, -0.5], sigma, 8).unwrap();
    let mut field = explicit_field(2, 32, 16);
    let mut rng = rng_from_seed(17);
    let opts = MatchOptions {
        steps: 400,
        batch_size: 64,
        learning_rate: 3e-3,
        ..MatchOptions::default()
    };
    let paths = [path];
    let report = train_with(&mut field, sigma, &opts, &mut rng, |_, rng| {
        let mut b = MatchBatch::from_paths(&paths, opts.batch_size, sigma, rng)?;
        b.times.iter_mut().for_each(|t| *t = 0.5);
        let targets = (0..b.len())
            .map(|i| crate::gaussian_paths::conditional_drift(&paths[0], b.states.row(i), 0.5, sigma))
            .collect::<crate::Result<Vec<_>>>()?;
        b.targets = StateBatch::from_rows(&targets);
        Ok(MatchData::Explicit(b))
    })
    .unwrap();
    assert!(report.tail_mean(20) < 1e-3, "final loss {}", report.tail_mean(20));
}

#[test]
fn non_finite_loss_aborts_training() {
    let mut field = explicit_field(2, 8, 18);
    field.network_mut().params_mut()[0] = f64::NAN;
    let path = brownian_bridge(&[0.0, 0.0], &[1.0, 1.0], 1.0, 8).unwrap();
    let opts = MatchOptions {
        steps: 5,
        batch_size: 8,
        ..MatchOptions::default()
    };
    let err = train_match(&mut field, &[path], 1.0, &opts, &mut rng_from_seed(19)).unwrap_err();
    assert!(matches!(err, crate::GsbmError::NonFiniteLoss { step: 0, .. }), "{err}");
}

#[test]
fn training_reduces_the_explicit_loss() {
    let sigma = 1.0;
    let mut rng = rng_from_seed(20);
    let paths: Vec<_> = (0..32)
        .map(|_| {
            let x0 = [rng.gen_range(-2.0..-1.0), rng.gen_range(-1.0..1.0)];
            let x1 = [rng.gen_range(1.0..2.0), rng.gen_range(-1.0..1.0)];
            brownian_bridge(&x0, &x1, sigma, 8).unwrap()
        })
        .collect();
    let mut field = explicit_field(2, 32, 21);
    let opts = MatchOptions {
        steps: 150,
        batch_size: 64,
        ..MatchOptions::default()
    };
    let report = train_match(&mut field, &paths, sigma, &opts, &mut rng).unwrap();
    let head: f64 = report.losses[..10].iter().sum::<f64>() / 10.0;
    assert!(report.tail_mean(10) < 0.7 * head, "{head} -> {}", report.tail_mean(10));
}

#[test]
fn moving_average_is_left_in_the_network() {
    let path = brownian_bridge(&[0.0, 0.0], &[1.0, 1.0], 1.0, 8).unwrap();
    let paths = [path];
    let base = MatchOptions {
        steps: 30,
        batch_size: 16,
        ..MatchOptions::default()
    };
    let init = explicit_field(2, 8, 22);
    let start = init.network().params().to_vec();

    // replaying the raw trajectory by hand gives the average
    let mut raw = init.clone();
    let opts = MatchOptions { ema_decay: 0.0, ..base.clone() };
    let mut avg = start.clone();
    let mut rng = rng_from_seed(23);
    for _ in 0..base.steps {
        let one = MatchOptions { steps: 1, final_lr_ratio: 1.0, ..opts.clone() };
        train_match(&mut raw, &paths, 1.0, &one, &mut rng).unwrap();
        for (a, p) in avg.iter_mut().zip(raw.network().params()) {
            *a = 0.9 * *a + 0.1 * p;
        }
    }

    let mut field = init.clone();
    let ema = MatchOptions { ema_decay: 0.9, final_lr_ratio: 1.0, ..base.clone() };
    train_match(&mut field, &paths, 1.0, &ema, &mut rng_from_seed(23)).unwrap();
    for (a, b) in field.network().params().iter().zip(&avg) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(field.raw_params.as_deref(), Some(raw.network().params()));

    // the next call resumes from the raw iterate
    let mut cont = raw.clone();
    let one = MatchOptions { steps: 1, ema_decay: 0.0, final_lr_ratio: 1.0, ..base.clone() };
    train_match(&mut cont, &paths, 1.0, &one, &mut rng_from_seed(24)).unwrap();
    let ema_one = MatchOptions { steps: 1, ema_decay: 0.9, final_lr_ratio: 1.0, ..base };
    train_match(&mut field, &paths, 1.0, &ema_one, &mut rng_from_seed(24)).unwrap();
    assert_eq!(field.raw_params.as_deref(), Some(cont.network().params()));
}
