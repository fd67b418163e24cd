//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test -p minihes-core --test acceptance`.
//!
//! MovieLens-100K is read from `data/ml-100k/u.data` at the workspace root,
//! or from the path in `MINIHES_ML100K`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use minihes_core::cg::{solve_block, CgSettings};
use minihes_core::curvature::{full_gnvp, gnvp_block, BlockOperatorContext};
use minihes_core::model::{dot, evaluate, gradient, init_factors, BlockVector, Entity, FactorState};
use minihes_core::oracle::{fd_gradient, fd_hessian, max_abs_error, max_relative_error, DenseMatrix, Oracle};
use minihes_core::parallel::Executor;
use minihes_core::scaling::bench_threads;
use minihes_core::synth::LowRank;
use minihes_core::train::{train, Metric, OptimizerConfig, OptimizerKind, StopReason};
use minihes_core::verify::{TinyInstance, GAMMAS, LAMBDAS};
use minihes_core::{parse_ratings, seed, split_dataset, Delimiter, HdiDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Tiny instances with at most 12 entities and f <= 4, cycling through the λ grid.
fn tiny_instances(count: usize, seed: u64) -> Vec<TinyInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let mut inst = TinyInstance::random(&mut rng, 6, 6, 4);
            inst.lambda = LAMBDAS[k % LAMBDAS.len()];
            inst
        })
        .collect()
}

fn gradient_correctness() -> Verdict {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let instances = tiny_instances(30, 1);
    for inst in &instances {
        let analytic = gradient(&inst.state, &inst.data, inst.lambda);
        worst = worst.max(max_relative_error(
            analytic.values(),
            &fd_gradient(&inst.state, &inst.data, inst.lambda, 1e-6),
        ));
    }
    let secs = started.elapsed().as_secs_f64();
    check(
        worst < 1e-6 && secs < 5.0,
        format!(
            "{} instances, max rel error {worst:.2e} (< 1e-6), {secs:.2}s (< 5s)",
            instances.len()
        ),
    )
}

fn hessian_correctness() -> Verdict {
    let oracle = Oracle::default();
    let mut worst: f64 = 0.0;
    let instances = tiny_instances(30, 1);
    for inst in &instances {
        let h = oracle
            .dense_hessian(&inst.state, &inst.data, inst.lambda)
            .map_err(|e| e.to_string())?;
        worst = worst.max(h.max_abs_diff(&fd_hessian(&inst.state, &inst.data, inst.lambda, 1e-5)));
    }
    check(
        worst < 1e-5,
        format!("{} instances, max entry error {worst:.2e} (< 1e-5)", instances.len()),
    )
}

fn gnvp_correctness() -> Verdict {
    let oracle = Oracle::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut block_err, mut probe_err): (f64, f64) = (0.0, 0.0);
    for (k, base) in tiny_instances(30, 2).into_iter().enumerate() {
        let gamma = GAMMAS[k % GAMMAS.len()];
        let (state, data, lambda) = (&base.state, &base.data, base.lambda);
        let layout = state.layout();
        let ctx = BlockOperatorContext::new(state, data, lambda, gamma).map_err(|e| e.to_string())?;
        let gn = oracle.dense_gauss_newton(state, data).map_err(|e| e.to_string())?;
        for b in 0..layout.num_entities() {
            let e = layout.entity(b);
            let v = random_vec(&mut rng, layout.f);
            let block = gn.block(b * layout.f, layout.f);
            let shift = gamma + lambda * ctx.degree(e) as f64;
            let expect: Vec<f64> = block.matvec(&v).iter().zip(&v).map(|(a, x)| a + shift * x).collect();
            block_err = block_err.max(max_abs_error(&gnvp_block(&ctx, e, &v), &expect));
        }
        let target = oracle
            .block_diagonal_gauss_newton(state, data, lambda, gamma)
            .map_err(|e| e.to_string())?;
        let exec = Executor::with_threads(layout, 2).map_err(|e| e.to_string())?;
        for c in 0..layout.len() {
            let mut unit = BlockVector::zeros(layout);
            unit.values_mut()[c] = 1.0;
            let col = full_gnvp(&ctx, &unit, &exec).map_err(|e| e.to_string())?;
            for (r, v) in col.values().iter().enumerate() {
                probe_err = probe_err.max((v - target.get(r, c)).abs());
            }
        }
    }
    check(
        block_err < 1e-10 && probe_err < 1e-10,
        format!("gamma in {GAMMAS:?}: block error {block_err:.2e}, basis probe error {probe_err:.2e} (< 1e-10)"),
    )
}

fn operator_properties() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut sym, mut lin, mut local, mut pd): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let probes = 100;
    for k in 0..probes {
        let mut inst = TinyInstance::random(&mut rng, 6, 6, 4);
        inst.gamma = GAMMAS[k % GAMMAS.len()];
        let ctx =
            BlockOperatorContext::new(&inst.state, &inst.data, inst.lambda, inst.gamma).map_err(|e| e.to_string())?;
        let layout = inst.state.layout();
        let e = layout.entity(rng.random_range(0..layout.num_entities()));
        let (v, w) = (random_vec(&mut rng, layout.f), random_vec(&mut rng, layout.f));
        let (av, aw) = (gnvp_block(&ctx, e, &v), gnvp_block(&ctx, e, &w));
        sym = sym.max((dot(&v, &aw) - dot(&w, &av)).abs());

        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let mix: Vec<f64> = v.iter().zip(&w).map(|(x, y)| a * x + b * y).collect();
        let expect: Vec<f64> = av.iter().zip(&aw).map(|(x, y)| a * x + b * y).collect();
        lin = lin.max(max_abs_error(&gnvp_block(&ctx, e, &mix), &expect));

        let mut full = BlockVector::zeros(layout);
        full.block_mut(e).copy_from_slice(&v);
        let out = full_gnvp(&ctx, &full, &Executor::sequential(layout)).map_err(|e| e.to_string())?;
        for j in 0..layout.num_entities() {
            if layout.entity(j) != e {
                local = local.max(out.block(layout.entity(j)).iter().fold(0.0, |m, x| m.max(x.abs())));
            }
        }
        pd = pd.max(inst.gamma * dot(&v, &v) - dot(&v, &av));
    }
    check(
        sym <= 1e-10 && lin <= 1e-10 && local <= 1e-10 && pd <= 1e-10,
        format!(
            "{probes} probes: symmetry {sym:.1e}, linearity {lin:.1e}, locality {local:.1e}, gamma-bound violation {:.1e}",
            pd.max(0.0)
        ),
    )
}

fn cg_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut parts = Vec::new();
    let mut ok = true;
    for f in [2, 3, 5, 20] {
        let data = LowRank {
            num_users: 8,
            num_items: 6,
            rank: 3,
            density: 0.6,
            noise_sigma: 0.1,
            seed: f as u64,
        }
        .generate()
        .map_err(|e| e.to_string())?;
        let state = init_factors(8, 6, f, 7).map_err(|e| e.to_string())?;
        let ctx = BlockOperatorContext::new(&state, &data, 0.02, 0.1).map_err(|e| e.to_string())?;
        let layout = state.layout();
        let mut worst: f64 = 0.0;
        for k in 0..layout.num_entities() {
            let e = layout.entity(k);
            let mut dense = DenseMatrix::zeros(f, f);
            for x in ctx.neighbors(e) {
                for r in 0..f {
                    for c in 0..f {
                        dense.add(r, c, x[r] * x[c]);
                    }
                }
            }
            for d in 0..f {
                dense.add(d, d, ctx.shift(e));
            }
            let rhs = random_vec(&mut rng, f);
            let settings = CgSettings::new(0.0, f).map_err(|e| e.to_string())?;
            let got = solve_block(&ctx, e, &rhs, &settings).map_err(|e| e.to_string())?;
            let expect = dense.solve(&rhs).ok_or("dense solve failed")?;
            worst = worst.max(max_abs_error(&got.delta, &expect));
        }
        ok &= worst < 1e-8;
        parts.push(format!("f={f}: {worst:.1e}"));
    }
    check(ok, format!("max error vs dense solve (< 1e-8) {}", parts.join(", ")))
}

/// Exact alternating least squares to the stationary point of the same
/// regularized loss; the best test RMSE any optimizer of that loss can reach
/// from a nearby start.
fn als_optimum(train: &HdiDataset, test: &HdiDataset, f: usize, lambda: f64, start: &FactorState) -> (f64, f64) {
    let layout = start.layout();
    let mut x = start.values().to_vec();
    for _ in 0..3000 {
        for k in 0..layout.num_entities() {
            let e = layout.entity(k);
            let (others, ratings) = match e {
                Entity::User(u) => train.by_user().row(u),
                Entity::Item(i) => train.by_item().row(i),
            };
            let mut a = DenseMatrix::zeros(f, f);
            let mut b = vec![0.0; f];
            for (&o, &r) in others.iter().zip(ratings) {
                let other = match e {
                    Entity::User(_) => Entity::Item(o),
                    Entity::Item(_) => Entity::User(o),
                };
                let xo = &x[layout.range(other)];
                for p in 0..f {
                    b[p] += r * xo[p];
                    for q in 0..f {
                        a.add(p, q, xo[p] * xo[q]);
                    }
                }
            }
            for d in 0..f {
                a.add(d, d, lambda * others.len() as f64 + 1e-12);
            }
            if let Some(sol) = a.solve(&b) {
                x[layout.range(e)].copy_from_slice(&sol);
            }
        }
    }
    let state = FactorState::from_values(layout, 0, x).expect("finite");
    let g = gradient(&state, train, lambda);
    let test_rmse = evaluate(&state, test).expect("same universe").rmse;
    (test_rmse, g.norm_sq().sqrt())
}

fn synthetic_recovery() -> Verdict {
    let sigma = 0.01;
    let data = LowRank {
        num_users: 50,
        num_items: 40,
        rank: 3,
        density: 0.3,
        noise_sigma: sigma,
        seed: 0,
    }
    .generate()
    .map_err(|e| e.to_string())?;
    let (tr, va, te) =
        split_dataset(&data, [0.6, 0.2, 0.2], seed::derive(0, seed::SPLIT)).map_err(|e| e.to_string())?;
    let config = OptimizerConfig {
        f: 3,
        lambda: 0.01,
        gamma: 1.0,
        tau: 0.1,
        max_epochs: 100,
        ..Default::default()
    };
    let started = Instant::now();
    let (_, report) = train(&tr, &va, Some(&te), &config).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    let rmse = report.test_rmse.unwrap_or(f64::NAN);

    let init =
        init_factors(tr.num_users(), tr.num_items(), 3, seed::derive(0, seed::INIT)).map_err(|e| e.to_string())?;
    let (als_rmse, als_grad) = als_optimum(&tr, &te, 3, 0.01, &init);
    check(
        rmse <= 3.0 * sigma && secs < 30.0,
        format!(
            "test RMSE {rmse:.4} (<= {:.2}) after {} epochs, {secs:.2}s; exact minimizer of the same loss reaches test RMSE {als_rmse:.4} (gradient norm {als_grad:.1e})",
            3.0 * sigma,
            report.epochs_run
        ),
    )
}

fn ml100k_path() -> PathBuf {
    std::env::var_os("MINIHES_ML100K")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k/u.data"))
}

struct Tuned {
    config: OptimizerConfig,
    validation: f64,
    test: f64,
}

fn tune(
    tr: &HdiDataset,
    va: &HdiDataset,
    te: &HdiDataset,
    grid: &[OptimizerConfig],
    metric: Metric,
) -> Result<Tuned, String> {
    let mut best: Option<Tuned> = None;
    for c in grid {
        let config = OptimizerConfig { metric, ..c.clone() };
        let (_, r) = train(tr, va, Some(te), &config).map_err(|e| e.to_string())?;
        let test = match metric {
            Metric::Rmse => r.test_rmse,
            Metric::Mae => r.test_mae,
        }
        .unwrap_or(f64::NAN);
        if best.as_ref().is_none_or(|b| r.best_validation < b.validation) {
            best = Some(Tuned {
                config,
                validation: r.best_validation,
                test,
            });
        }
    }
    best.ok_or_else(|| "empty grid".into())
}

fn movielens_comparison() -> Verdict {
    let path = ml100k_path();
    let file = std::fs::File::open(&path).map_err(|e| {
        format!(
            "cannot read {} ({e}); see README for obtaining MovieLens-100K",
            path.display()
        )
    })?;
    let data = parse_ratings(std::io::BufReader::new(file), Delimiter::Whitespace).map_err(|e| e.to_string())?;
    let (tr, va, te) =
        split_dataset(&data, [0.6, 0.2, 0.2], seed::derive(0, seed::SPLIT)).map_err(|e| e.to_string())?;
    let started = Instant::now();

    let lambdas: Vec<f64> = (0..=10).map(|k| k as f64 / 100.0).collect();
    let base = OptimizerConfig {
        f: 20,
        ..Default::default()
    };
    let mut mini = Vec::new();
    let mut adam = Vec::new();
    for &lambda in &lambdas {
        for tau in [0.1, 1.0] {
            mini.push(OptimizerConfig {
                optimizer: OptimizerKind::MiniHes,
                lambda,
                tau,
                ..base.clone()
            });
        }
        for lr in [1e-3, 3e-3, 1e-2] {
            adam.push(OptimizerConfig {
                optimizer: OptimizerKind::Adam,
                lambda,
                lr: Some(lr),
                ..base.clone()
            });
        }
    }
    let mh_rmse = tune(&tr, &va, &te, &mini, Metric::Rmse)?;
    let mh_mae = tune(&tr, &va, &te, &mini, Metric::Mae)?;
    let ad_rmse = tune(&tr, &va, &te, &adam, Metric::Rmse)?;
    let ad_mae = tune(&tr, &va, &te, &adam, Metric::Mae)?;
    let secs = started.elapsed().as_secs_f64();
    check(
        mh_rmse.test <= ad_rmse.test + 0.01 && mh_mae.test <= ad_mae.test,
        format!(
            "RMSE mini-hes {:.4} (lambda {}, tau {}) vs adam {:.4} (lambda {}, lr {}); MAE mini-hes {:.4} (lambda {}, tau {}) vs adam {:.4} (lambda {}, lr {}); {secs:.0}s",
            mh_rmse.test,
            mh_rmse.config.lambda,
            mh_rmse.config.tau,
            ad_rmse.test,
            ad_rmse.config.lambda,
            ad_rmse.config.lr.unwrap_or_default(),
            mh_mae.test,
            mh_mae.config.lambda,
            mh_mae.config.tau,
            ad_mae.test,
            ad_mae.config.lambda,
            ad_mae.config.lr.unwrap_or_default(),
        ),
    )
}

fn thread_scaling() -> Verdict {
    let data = LowRank {
        num_users: 20_000,
        num_items: 5_000,
        rank: 5,
        density: 0.01,
        noise_sigma: 0.1,
        seed: 8,
    }
    .generate()
    .map_err(|e| e.to_string())?;
    // all 10^6 entries train; a held-out tenth only drives the validation pass
    let (_, va, _) = split_dataset(&data, [0.8, 0.1, 0.1], seed::derive(0, seed::SPLIT)).map_err(|e| e.to_string())?;
    let config = OptimizerConfig {
        f: 20,
        max_epochs: 2,
        ..Default::default()
    };
    // bench_threads fails unless every run is bitwise identical
    let report = bench_threads("synthetic-1e6", &data, &va, &config, &[1, 2, 4, 8], 3).map_err(|e| e.to_string())?;
    let t = |n| report.row(n).map(|r| r.median_seconds).unwrap_or(f64::NAN);
    let times = format!("median seconds 1:{:.3} 2:{:.3} 4:{:.3} 8:{:.3}", t(1), t(2), t(4), t(8));
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    if cores < 8 {
        return Ok(format!(
            "{} entries, bitwise identical at 1/2/4/8 threads; {times}; scaling gate SKIPPED ({cores} cores available, needs 8)",
            data.len()
        ));
    }
    let speedup = t(2) / t(8);
    check(
        t(4) <= t(2) && t(8) <= t(4) && speedup >= 1.5,
        format!(
            "{} entries, bitwise identical; {times}; speedup 8 vs 2 = {speedup:.2} (>= 1.5)",
            data.len()
        ),
    )
}

fn early_stopping() -> Verdict {
    let data = LowRank {
        num_users: 40,
        num_items: 30,
        rank: 3,
        density: 0.3,
        noise_sigma: 0.01,
        seed: 2,
    }
    .generate()
    .map_err(|e| e.to_string())?;
    let (tr, va, te) = split_dataset(&data, [0.6, 0.2, 0.2], 1).map_err(|e| e.to_string())?;
    let patience = 10;
    // zero learning rate: validation never improves after the first epoch
    let config = OptimizerConfig {
        optimizer: OptimizerKind::Sgd,
        lr: Some(0.0),
        f: 4,
        patience,
        ..Default::default()
    };
    let (best, report) = train(&tr, &va, Some(&te), &config).map_err(|e| e.to_string())?;
    let expect = evaluate(&best, &te).map_err(|e| e.to_string())?;
    let init =
        init_factors(tr.num_users(), tr.num_items(), 4, seed::derive(0, seed::INIT)).map_err(|e| e.to_string())?;
    check(
        report.epochs_run == patience + 1
            && report.stop_reason == StopReason::EarlyStop
            && report.best_epoch == 1
            && best.values() == init.values()
            && report.test_rmse == Some(expect.rmse)
            && report.test_mae == Some(expect.mae),
        format!(
            "patience {patience}: ran {} epochs (best epoch {}), stop {:?}, test metrics from best snapshot",
            report.epochs_run, report.best_epoch, report.stop_reason
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("gradient vs finite differences", gradient_correctness),
        ("exact Hessian vs finite differences", hessian_correctness),
        ("block GNVP and basis probe", gnvp_correctness),
        ("operator properties", operator_properties),
        ("CG vs dense solve", cg_exactness),
        ("synthetic recovery", synthetic_recovery),
        ("MovieLens-100K mini-hes vs adam", movielens_comparison),
        ("thread invariance and scaling", thread_scaling),
        ("early stopping", early_stopping),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        let (tag, detail) = match verdict {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] {}. {name}: {detail} [{secs:.1}s]", k + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
