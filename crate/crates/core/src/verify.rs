//! Randomized oracle suite comparing the blockwise kernels with dense
//! brute-force references on tiny instances.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cg::{solve_block, CgSettings};
use crate::curvature::{full_gnvp, gnvp_block, jvp_block, BlockOperatorContext};
use crate::data::{HdiDataset, RatingTriple};
use crate::error::{Error, Result};
use crate::model::{dot, gradient, BlockVector, Entity, FactorState, Layout};
use crate::oracle::{fd_gradient, fd_hessian, max_abs_error, max_relative_error, Oracle};
use crate::parallel::Executor;

pub const LAMBDAS: [f64; 3] = [0.0, 0.02, 0.1];
pub const GAMMAS: [f64; 3] = [0.0, 0.1, 1.0];

/// A random problem small enough for the dense oracles.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub state: FactorState,
    pub data: HdiDataset,
    pub lambda: f64,
    pub gamma: f64,
}

impl TinyInstance {
    /// Up to `max_users` users and `max_items` items (at least one each),
    /// `1..=max_f` latent dimensions, each cell observed with probability
    /// one half (at least one observation), ratings from `U(1, 5)`, factors
    /// from `U(-1, 1)`.
    pub fn random(rng: &mut impl Rng, max_users: usize, max_items: usize, max_f: usize) -> Self {
        let nu = rng.random_range(1..=max_users.max(1));
        let ni = rng.random_range(1..=max_items.max(1));
        let f = rng.random_range(1..=max_f.max(1));
        let mut triples = Vec::new();
        for u in 0..nu {
            for i in 0..ni {
                if rng.random_bool(0.5) {
                    triples.push(RatingTriple {
                        user: u,
                        item: i,
                        rating: rng.random_range(1.0..5.0),
                    });
                }
            }
        }
        if triples.is_empty() {
            triples.push(RatingTriple {
                user: rng.random_range(0..nu),
                item: rng.random_range(0..ni),
                rating: rng.random_range(1.0..5.0),
            });
        }
        let data = HdiDataset::from_triples(nu, ni, triples).expect("indices in range");
        let layout = Layout::for_data(&data, f);
        let values = (0..layout.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let state = FactorState::from_values(layout, 0, values).expect("finite");
        TinyInstance {
            state,
            data,
            lambda: LAMBDAS[rng.random_range(0..LAMBDAS.len())],
            gamma: GAMMAS[rng.random_range(0..GAMMAS.len())],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub instances: usize,
    pub max_users: usize,
    pub max_items: usize,
    pub max_f: usize,
    /// Test hook: perturbs the curvature operator so the suite must fail.
    pub corrupt_operator: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            instances: 20,
            max_users: 6,
            max_items: 6,
            max_f: 4,
            corrupt_operator: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub options: VerifyOptions,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Tracker {
    name: &'static str,
    tolerance: f64,
    max_error: f64,
}

impl Tracker {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Tracker {
            name,
            tolerance,
            max_error: 0.0,
        }
    }

    fn record(&mut self, err: f64) {
        // NaN must fail the check
        if err.is_nan() || err > self.max_error {
            self.max_error = if err.is_nan() { f64::INFINITY } else { err };
        }
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name.to_owned(),
            max_error: self.max_error,
            tolerance: self.tolerance,
            passed: self.max_error < self.tolerance,
        }
    }
}

/// Row index of every observation, keyed by `(user, item)`.
pub fn observation_rows(data: &HdiDataset) -> HashMap<(usize, usize), usize> {
    data.entries()
        .iter()
        .enumerate()
        .map(|(k, t)| ((t.user, t.item), k))
        .collect()
}

pub fn run_suite(options: &VerifyOptions) -> Result<VerifyReport> {
    if options.instances == 0 {
        return Err(Error::Config("need at least one instance".into()));
    }
    let oracle = Oracle::default();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let corrupt = options.corrupt_operator;
    let op = |ctx: &BlockOperatorContext<'_>, e: Entity, v: &[f64]| -> Vec<f64> {
        let mut out = gnvp_block(ctx, e, v);
        if corrupt {
            out[0] += 1e-3 * (1.0 + v[0].abs());
        }
        out
    };

    let mut grad_fd = Tracker::new("gradient vs finite differences (rel)", 1e-6);
    let mut hess_fd = Tracker::new("exact Hessian vs finite differences", 1e-5);
    let mut hess_sym = Tracker::new("exact Hessian symmetry", 1e-300);
    let mut jvp = Tracker::new("block Jv vs dense Jacobian", 1e-12);
    let mut gnvp = Tracker::new("block GNVP vs dense Gauss-Newton", 1e-10);
    let mut basis = Tracker::new("full GNVP basis probe vs block-diagonal GN", 1e-10);
    let mut psd = Tracker::new("Gauss-Newton PSD (negative eigenvalue mass)", 1e-10);
    let mut jt_res = Tracker::new("J^T residual vs gradient at lambda=0", 1e-10);
    let mut cg = Tracker::new("CG (tau=0) vs dense solve", 1e-8);

    for _ in 0..options.instances {
        let inst = TinyInstance::random(&mut rng, options.max_users, options.max_items, options.max_f);
        let (state, data) = (&inst.state, &inst.data);
        let layout = state.layout();
        let f = layout.f;

        let analytic = gradient(state, data, inst.lambda);
        grad_fd.record(max_relative_error(
            analytic.values(),
            &fd_gradient(state, data, inst.lambda, 1e-6),
        ));

        let h = oracle.dense_hessian(state, data, inst.lambda)?;
        hess_fd.record(h.max_abs_diff(&fd_hessian(state, data, inst.lambda, 1e-5)));
        hess_sym.record(if h.is_symmetric() { 0.0 } else { 1.0 });

        let j = oracle.dense_jacobian(state, data)?;
        let gn = j.gram();
        psd.record((-gn.min_eigenvalue()).max(0.0));

        let residuals: Vec<f64> = data
            .entries()
            .iter()
            .map(|t| dot(state.user(t.user), state.item(t.item)) - t.rating)
            .collect();
        jt_res.record(max_abs_error(
            &j.transpose_matvec(&residuals),
            gradient(state, data, 0.0).values(),
        ));

        let ctx = BlockOperatorContext::new(state, data, inst.lambda, inst.gamma)?;
        let rows = observation_rows(data);
        for k in 0..layout.num_entities() {
            let e = layout.entity(k);
            let v: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();

            // dense J applied to v embedded in e's block
            let mut full = vec![0.0; layout.len()];
            full[layout.range(e)].copy_from_slice(&v);
            let jv = j.matvec(&full);
            let expect: Vec<f64> = match e {
                Entity::User(u) => data.by_user().row(u).0.iter().map(|&i| jv[rows[&(u, i)]]).collect(),
                Entity::Item(i) => data.by_item().row(i).0.iter().map(|&u| jv[rows[&(u, i)]]).collect(),
            };
            jvp.record(max_abs_error(&jvp_block(&ctx, e, &v), &expect));

            let block = gn.block(k * f, f);
            let shift = ctx.shift(e);
            let dense: Vec<f64> = block.matvec(&v).iter().zip(&v).map(|(a, b)| a + shift * b).collect();
            gnvp.record(max_abs_error(&op(&ctx, e, &v), &dense));

            if inst.gamma > 0.0 {
                let mut system = block.clone();
                for d in 0..f {
                    system.add(d, d, shift);
                }
                let rhs: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
                let settings = CgSettings::new(0.0, f)?;
                let got = solve_block(&ctx, e, &rhs, &settings)?;
                match system.solve(&rhs) {
                    Some(x) => cg.record(max_abs_error(&got.delta, &x)),
                    None => cg.record(f64::INFINITY),
                }
            }
        }

        let exec = Executor::sequential(layout);
        let target = oracle.block_diagonal_gauss_newton(state, data, inst.lambda, inst.gamma)?;
        let mut worst: f64 = 0.0;
        for c in 0..layout.len() {
            let mut unit = BlockVector::zeros(layout);
            unit.values_mut()[c] = 1.0;
            let mut col = full_gnvp(&ctx, &unit, &exec)?.into_values();
            if corrupt {
                let e = layout.entity(c / f);
                let probe = op(&ctx, e, unit.block(e));
                col[layout.range(e)].copy_from_slice(&probe);
            }
            for (r, v) in col.iter().enumerate() {
                worst = worst.max((v - target.get(r, c)).abs());
            }
        }
        basis.record(worst);
    }

    Ok(VerifyReport {
        options: options.clone(),
        checks: [grad_fd, hess_fd, hess_sym, jvp, gnvp, basis, psd, jt_res, cg]
            .into_iter()
            .map(Tracker::finish)
            .collect(),
    })
}
