//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dpkl::classify::{accuracy, fit_classifier, logits, SoftmaxHead};
use dpkl::data::{synth_blobs, synth_regression, SplitSpec, SynthKind};
use dpkl::experiment::{evaluate_regression, prepare};
use dpkl::gp::{posterior, posterior_variance_raw, projection_residual_oracle, GpState, KernelMode};
use dpkl::latentkernel::{
    cross_kernel, empirical_kernel_exact, rff_feature_matrix, sample_rff_basis, LatentKernelSpec,
};
use dpkl::linalg::{cholesky, Matrix, DEFAULT_BASE_JITTER};
use dpkl::metrics::spearman;
use dpkl::net::{init_ensemble, Activation, MlpArchitecture, MlpParams, ParticleEnsemble};
use dpkl::trainer::{
    fit, initial_ensemble, per_particle_loss_grads, smoothed_gradients, Coupling, ObjectiveData, Regressor,
    TrainConfig, TrainMode,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn random_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
}

// Gradient fidelity

fn tiny_config(mode: TrainMode, kernel_mode: KernelMode) -> TrainConfig {
    TrainConfig {
        mode,
        kernel_mode,
        m: if mode == TrainMode::Dkl { 1 } else { 3 },
        q: 50,
        ssdpkl_alpha: 1.0,
        hidden_dims: vec![4],
        latent_dim: 2,
        activation: Activation::Tanh,
        ..TrainConfig::default()
    }
}

/// Worst per-particle relative error `‖analytic − fd‖ / max(‖fd‖, 1e-8)`.
fn fd_worst_error(mode: TrainMode, kernel_mode: KernelMode, seed: u64) -> f64 {
    let config = tiny_config(mode, kernel_mode);
    let arch = MlpArchitecture::new(3, vec![4], 2, Activation::Tanh).unwrap();
    let ens = init_ensemble(&arch, config.m, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let x = random_matrix(6, 3, -1.0, 1.0, &mut rng);
    let y: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let u = random_matrix(4, 3, -1.0, 1.0, &mut rng);
    let basis = sample_rff_basis(&config.kernel, 2, config.q, seed + 200).unwrap();
    let data = ObjectiveData {
        labeled: &x,
        y: &y,
        unlabeled: (mode == TrainMode::Ssdpkl).then_some(&u),
    };
    let objective = |e: &ParticleEnsemble| per_particle_loss_grads(e, Some(&basis), &data, &config).unwrap().objective;
    let analytic = per_particle_loss_grads(&ens, Some(&basis), &data, &config).unwrap().grads;

    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for (l, g) in analytic.iter().enumerate() {
        let mut err2 = 0.0;
        let mut ref2 = 0.0;
        for k in 0..g.len() {
            let shifted = |delta: f64| {
                let mut values = ens.particles[l].as_flat().to_vec();
                values[k] += delta;
                let mut e = ens.clone();
                e.particles[l] = MlpParams::from_flat(&arch, values).unwrap();
                objective(&e)
            };
            let fd = (shifted(step) - shifted(-step)) / (2.0 * step);
            err2 += (g[k] - fd).powi(2);
            ref2 += fd * fd;
        }
        worst = worst.max(err2.sqrt() / ref2.sqrt().max(1e-8));
    }
    worst
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for mode in [TrainMode::Dpkl, TrainMode::Ssdpkl, TrainMode::Dkl] {
        for km in [KernelMode::Exact, KernelMode::Rff] {
            for seed in 0..3 {
                worst = worst.max(fd_worst_error(mode, km, seed));
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Outcome {
        pass: worst < 1e-4 && secs < 10.0,
        detail: format!("worst relative error {worst:.2e} over 3 modes x 2 kernels x 3 seeds; {secs:.1}s"),
    }
}

// Posterior variance equals the projection residual

fn criterion_2() -> Outcome {
    let spec = LatentKernelSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.gen_range(3..=8);
        let m = rng.gen_range(1..=4);
        let d = 2;
        let train: Vec<Matrix> = (0..m).map(|_| random_matrix(n, d, -3.0, 3.0, &mut rng)).collect();
        let query: Vec<Matrix> = (0..m).map(|_| random_matrix(1, d, -3.0, 3.0, &mut rng)).collect();
        let k = empirical_kernel_exact(&spec, &train).unwrap();
        let (k_star, k_ss) = cross_kernel(&spec, &train, &query).unwrap();
        let state = GpState::exact(k.clone(), vec![0.0; n], 0.0, 0.0).unwrap();
        let var = posterior_variance_raw(&state, &k_star, k_ss).unwrap();
        let oracle = projection_residual_oracle(&k, &k_star, k_ss).unwrap();
        worst = worst.max((var - oracle).abs());
    }
    Outcome {
        pass: worst < 1e-8,
        detail: format!("max |variance - projection residual| = {worst:.2e} over 50 instances"),
    }
}

// Random-feature convergence

fn criterion_3() -> Outcome {
    let started = Instant::now();
    let spec = LatentKernelSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let embeds: Vec<Matrix> = (0..5).map(|_| random_matrix(10, 2, -2.0, 2.0, &mut rng)).collect();
    let exact = empirical_kernel_exact(&spec, &embeds).unwrap();
    let mean_err = |q: usize| -> f64 {
        (0..20u64)
            .map(|seed| {
                let basis = sample_rff_basis(&spec, 2, q, seed).unwrap();
                let r = rff_feature_matrix(&basis, &embeds, &spec).unwrap();
                r.matmul_t(&r).max_abs_diff(exact.matrix())
            })
            .sum::<f64>()
            / 20.0
    };
    let e2000 = mean_err(2000);
    let curve: Vec<f64> = [100, 400, 1600].iter().map(|&q| mean_err(q)).collect();
    let monotone = curve.windows(2).all(|w| w[1] <= w[0]);
    let secs = started.elapsed().as_secs_f64();
    Outcome {
        pass: e2000 < 0.05 && monotone && secs < 30.0,
        detail: format!(
            "mean max error q=2000: {e2000:.4}; q=100/400/1600: {:.4}/{:.4}/{:.4}; {secs:.1}s",
            curve[0], curve[1], curve[2]
        ),
    }
}

// Single-particle reduction

fn sine_data(seed: u64, n_labeled: usize, n_unlabeled: usize, n_test: usize) -> dpkl::experiment::Prepared {
    let ds = synth_regression(SynthKind::Sine, n_labeled + n_unlabeled + n_test, 1, 0.0, seed).unwrap();
    let spec = SplitSpec {
        n_labeled,
        n_unlabeled,
        n_test,
        seed,
    };
    prepare(&ds, &spec, true, true).unwrap()
}

fn criterion_4() -> Outcome {
    let prepared = sine_data(4, 50, 0, 0);
    let mut identical = 0;
    let checkpoints = [1, 2, 5, 10, 25, 50];
    for &epochs in &checkpoints {
        let base = TrainConfig {
            m: 1,
            max_epochs: epochs,
            seed: 4,
            ..TrainConfig::default()
        };
        let dpkl = fit(&prepared.train, &TrainConfig { mode: TrainMode::Dpkl, ..base.clone() }).unwrap();
        let dkl = fit(&prepared.train, &TrainConfig { mode: TrainMode::Dkl, ..base }).unwrap();
        let bits = |e: &ParticleEnsemble| -> Vec<u64> {
            e.particles.iter().flat_map(|p| p.as_flat().iter().map(|v| v.to_bits())).collect()
        };
        let same_params = bits(&dpkl.last) == bits(&dkl.last);
        let same_objectives = dpkl
            .report
            .epochs
            .iter()
            .zip(&dkl.report.epochs)
            .all(|(a, b)| a.objective.to_bits() == b.objective.to_bits());
        if same_params && same_objectives {
            identical += 1;
        }
    }
    Outcome {
        pass: identical == checkpoints.len(),
        detail: format!(
            "bitwise-identical parameters and per-epoch objectives at {identical}/{} epoch counts up to 50",
            checkpoints.len()
        ),
    }
}

// Training progress and calibration on sine data

struct SineTrial {
    objective_ratio_ok: bool,
    trained_rmse: f64,
    untrained_rmse: f64,
    spearman: f64,
}

fn sine_trial(seed: u64) -> SineTrial {
    let prepared = sine_data(seed, 50, 0, 200);
    let config = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let out = fit(&prepared.train, &config).unwrap();
    let eval_with = |ens: ParticleEnsemble| {
        let reg = Regressor::new(
            ens,
            config.kernel,
            None,
            config.noise_var,
            config.base_jitter,
            &prepared.train.x,
            &prepared.train.y,
        )
        .unwrap();
        evaluate_regression(&reg, &prepared.stats, &prepared.test_x, &prepared.test_y).unwrap()
    };
    let trained = eval_with(out.ensemble.clone());
    let untrained = eval_with(initial_ensemble(&config, 1).unwrap());
    SineTrial {
        objective_ratio_ok: out.report.final_objective < 0.8 * out.report.initial_objective,
        trained_rmse: trained.metrics.rmse.unwrap(),
        untrained_rmse: untrained.metrics.rmse.unwrap(),
        spearman: spearman(&trained.variance, &trained.sq_error),
    }
}

fn criteria_5_and_6() -> (Outcome, Outcome) {
    let started = Instant::now();
    let trials: Vec<SineTrial> = (0..10).map(sine_trial).collect();
    let secs = started.elapsed().as_secs_f64();
    let progress = trials
        .iter()
        .filter(|t| t.objective_ratio_ok && t.trained_rmse < t.untrained_rmse)
        .count();
    let rmse: Vec<String> = trials
        .iter()
        .map(|t| format!("{:.3}<{:.3}", t.trained_rmse, t.untrained_rmse))
        .collect();
    let positive = trials.iter().filter(|t| t.spearman > 0.0).count();
    let rho: Vec<String> = trials.iter().map(|t| format!("{:.2}", t.spearman)).collect();
    (
        Outcome {
            pass: progress >= 8 && secs < 300.0,
            detail: format!("{progress}/10 seeds improved (rmse trained<untrained: {}); {secs:.1}s", rmse.join(" ")),
        },
        Outcome {
            pass: positive >= 8,
            detail: format!("{positive}/10 seeds with positive Spearman ({})", rho.join(" ")),
        },
    )
}

// Semi-supervised variance penalty

fn unlabeled_mean_variance(prepared: &dpkl::experiment::Prepared, mode: TrainMode, seed: u64) -> f64 {
    let config = TrainConfig {
        mode,
        seed,
        ..TrainConfig::default()
    };
    let out = fit(&prepared.train, &config).unwrap();
    let reg = Regressor::new(
        out.ensemble,
        config.kernel,
        None,
        config.noise_var,
        config.base_jitter,
        &prepared.train.x,
        &prepared.train.y,
    )
    .unwrap();
    let preds = reg.predict(prepared.train.unlabeled.as_ref().unwrap()).unwrap();
    preds.iter().map(|p| p.variance).sum::<f64>() / preds.len() as f64
}

fn criterion_7() -> Outcome {
    let started = Instant::now();
    let mut lower = 0;
    let mut pairs = Vec::new();
    for seed in 0..10 {
        let prepared = sine_data(seed, 20, 200, 0);
        let semi = unlabeled_mean_variance(&prepared, TrainMode::Ssdpkl, seed);
        let sup = unlabeled_mean_variance(&prepared, TrainMode::Dpkl, seed);
        if semi < sup {
            lower += 1;
        }
        pairs.push(format!("{semi:.4}/{sup:.4}"));
    }
    Outcome {
        pass: lower >= 7,
        detail: format!(
            "{lower}/10 seeds with lower pool variance (ssdpkl/dpkl: {}); {:.1}s",
            pairs.join(" "),
            started.elapsed().as_secs_f64()
        ),
    }
}

// Classification

fn double_sum_logits(head: &SoftmaxHead, embeds: &[Matrix]) -> Matrix {
    let m = embeds.len() as f64;
    Matrix::from_fn(embeds[0].rows(), head.classes, |i, c| {
        let mut s = 0.0;
        for z in embeds {
            for theta in &head.particles {
                s += z.row(i).iter().zip(theta.row(c)).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        s / (m * m)
    })
}

fn criterion_8() -> Outcome {
    let started = Instant::now();
    let mut good = 0;
    let mut accs = Vec::new();
    for seed in 0..10 {
        let ds = synth_blobs(2, 50, 2, 6.0, seed).unwrap();
        let spec = SplitSpec {
            n_labeled: 70,
            n_unlabeled: 0,
            n_test: 30,
            seed,
        };
        let prepared = prepare(&ds, &spec, true, false).unwrap();
        let config = TrainConfig {
            m: 5,
            seed,
            ..TrainConfig::classification_default()
        };
        let fit = fit_classifier(&prepared.classification(2).unwrap(), &config).unwrap();
        let labels: Vec<usize> = prepared.test_y.iter().map(|&v| v as usize).collect();
        let acc = accuracy(&fit.classifier.predict(&prepared.test_x).unwrap(), &labels);
        if acc >= 0.95 {
            good += 1;
        }
        accs.push(format!("{acc:.2}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (m, n, d, c) = (rng.gen_range(1..=6), rng.gen_range(1..=10), rng.gen_range(1..=5), rng.gen_range(2..=5));
        let embeds: Vec<Matrix> = (0..m).map(|_| random_matrix(n, d, -2.0, 2.0, &mut rng)).collect();
        let head = SoftmaxHead::new((0..m).map(|_| random_matrix(c, d, -2.0, 2.0, &mut rng)).collect()).unwrap();
        let fast = logits(&head, &embeds).unwrap();
        worst = worst.max(fast.max_abs_diff(&double_sum_logits(&head, &embeds)));
    }
    Outcome {
        pass: good >= 9 && worst < 1e-12,
        detail: format!(
            "{good}/10 seeds at >= 95% accuracy ({}); logit oracle max error {worst:.1e}; {:.1}s",
            accs.join(" "),
            started.elapsed().as_secs_f64()
        ),
    }
}

// Determinism across thread counts

fn run_cli(threads: usize, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_dpkl"))
        .args(args)
        .env("RAYON_NUM_THREADS", threads.to_string())
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> bool {
    names
        .iter()
        .all(|n| matches!((std::fs::read(a.join(n)), std::fs::read(b.join(n))), (Ok(x), Ok(y)) if x == y))
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut runs = Vec::new();
    for threads in [1, 4, 1] {
        let out = dir.path().join(format!("train-{}", runs.len()));
        ok &= run_cli(
            threads,
            &[
                "train", "--synthetic", "sine", "--synthetic-rows", "150", "--n-labeled", "50", "--m", "8",
                "--epochs", "40", "--seed", "3", "--out", out.to_str().unwrap(),
            ],
        );
        runs.push(out);
    }
    let train_same = runs.windows(2).all(|w| same_files(&w[0], &w[1], &["predictions.csv", "test.csv"]));

    let mut benches = Vec::new();
    for threads in [1, 3] {
        let out = dir.path().join(format!("bench-{threads}"));
        ok &= run_cli(
            1,
            &[
                "benchmark", "--synthetic", "sine", "--synthetic-rows", "200", "--sizes", "20,40", "--trials", "3",
                "--modes", "dpkl,dkl", "--m", "4", "--epochs", "20", "--threads", &threads.to_string(), "--out",
                out.to_str().unwrap(),
            ],
        );
        benches.push(out);
    }
    let bench_same = same_files(&benches[0], &benches[1], &["results.csv", "summary.csv"]);
    Outcome {
        pass: ok && train_same && bench_same,
        detail: format!("commands succeeded: {ok}; train CSVs identical: {train_same}; benchmark CSVs identical: {bench_same}"),
    }
}

// Kernel and particle properties

fn permuted<T: Clone>(v: &[T], perm: &[usize]) -> Vec<T> {
    perm.iter().map(|&i| v[i].clone()).collect()
}

fn criterion_10() -> Outcome {
    let started = Instant::now();
    let spec = LatentKernelSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut failures = Vec::new();
    for trial in 0..200u64 {
        let (m, n, d_in, d) = (rng.gen_range(1..=6), rng.gen_range(2..=8), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let activation = if trial % 2 == 0 { Activation::Relu } else { Activation::Tanh };
        let arch = MlpArchitecture::new(d_in, vec![rng.gen_range(2..=6)], d, activation).unwrap();
        let ens = init_ensemble(&arch, m, trial).unwrap();
        let x = random_matrix(n, d_in, -2.0, 2.0, &mut rng);
        let xq = random_matrix(1, d_in, -2.0, 2.0, &mut rng);
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let embeds = ens.embed(&x).unwrap();
        let k = empirical_kernel_exact(&spec, &embeds).unwrap();
        let km = k.matrix();

        let symmetric = (0..n).all(|i| (0..n).all(|j| km[(i, j)] == km[(j, i)]));
        let factorizable = cholesky(&k.add_diagonal(0.1), DEFAULT_BASE_JITTER).is_ok();

        let state = GpState::exact(k.clone(), y.clone(), 0.1, DEFAULT_BASE_JITTER).unwrap();
        let (k_star, k_ss) = cross_kernel(&spec, &embeds, &ens.embed(&xq).unwrap()).unwrap();
        let var = posterior(&state, &k_star, k_ss).unwrap().variance;
        let variance_bounded = (0.0..=k_ss).contains(&var);

        let mut perm: Vec<usize> = (0..m).collect();
        perm.rotate_left(1);
        perm.reverse();
        let k_perm = empirical_kernel_exact(&spec, &permuted(&embeds, &perm)).unwrap();
        let kernel_invariant = k_perm.matrix().max_abs_diff(km) < 1e-12;

        let config = TrainConfig {
            m,
            kernel_mode: KernelMode::Exact,
            hidden_dims: arch.hidden_dims.clone(),
            latent_dim: d,
            activation,
            ..TrainConfig::default()
        };
        let data = ObjectiveData { labeled: &x, y: &y, unlabeled: None };
        let ens_perm = ParticleEnsemble {
            particles: permuted(&ens.particles, &perm),
            ..ens.clone()
        };
        let grads = per_particle_loss_grads(&ens, None, &data, &config).unwrap().grads;
        let grads_perm = per_particle_loss_grads(&ens_perm, None, &data, &config).unwrap().grads;
        let flat: Vec<&[f64]> = ens.particles.iter().map(|p| p.as_flat()).collect();
        let flat_perm: Vec<&[f64]> = ens_perm.particles.iter().map(|p| p.as_flat()).collect();
        let (phi, _) = smoothed_gradients(&flat, &grads, Coupling::Kappa).unwrap();
        let (phi_perm, _) = smoothed_gradients(&flat_perm, &grads_perm, Coupling::Kappa).unwrap();
        let close = |a: &[f64], b: &[f64]| {
            let scale = a.iter().fold(1.0f64, |s, v| s.max(v.abs()));
            a.iter().zip(b).all(|(p, q)| (p - q).abs() <= 1e-10 * scale)
        };
        let equivariant = perm.iter().enumerate().all(|(i, &src)| close(&phi_perm[i], &phi[src]));

        let checks = [
            ("symmetric", symmetric),
            ("cholesky", factorizable),
            ("variance bounds", variance_bounded),
            ("permutation invariance", kernel_invariant),
            ("phi equivariance", equivariant),
        ];
        for (name, ok) in checks {
            if !ok {
                failures.push(format!("trial {trial}: {name}"));
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Outcome {
        pass: failures.is_empty() && secs < 60.0,
        detail: if failures.is_empty() {
            format!("200 ensembles, all properties hold; {secs:.1}s")
        } else {
            format!("{} failures, first: {}; {secs:.1}s", failures.len(), failures[0])
        },
    }
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; none apply here.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results: Vec<(usize, Outcome)> = vec![
        (1, criterion_1()),
        (2, criterion_2()),
        (3, criterion_3()),
        (4, criterion_4()),
    ];
    let (c5, c6) = criteria_5_and_6();
    results.push((5, c5));
    results.push((6, c6));
    results.push((7, criterion_7()));
    results.push((8, criterion_8()));
    results.push((9, criterion_9()));
    results.push((10, criterion_10()));

    let mut failed = 0;
    for (id, o) in &results {
        println!("criterion {id:>2}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {}/{} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
