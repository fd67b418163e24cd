//! Per-block conjugate gradient on the damped Gauss-Newton systems.

use serde::{Deserialize, Serialize};

use crate::curvature::{gnvp_block_into, BlockOperatorContext};
use crate::error::{Error, Result};
use crate::model::{dot, BlockVector, Entity};
use crate::parallel::{Executor, RunStats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgSettings {
    /// Stop once `||r|| <= tol * ||rhs||`.
    pub tol: f64,
    pub max_iters: usize,
}

impl CgSettings {
    pub fn new(tol: f64, max_iters: usize) -> Result<Self> {
        if !(tol >= 0.0 && tol.is_finite()) {
            return Err(Error::Config(format!(
                "CG tolerance must be finite and >= 0, got {tol}"
            )));
        }
        if max_iters == 0 {
            return Err(Error::Config("CG iteration cap must be at least 1".into()));
        }
        Ok(CgSettings { tol, max_iters })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub delta: Vec<f64>,
    pub iters: usize,
    pub final_residual: f64,
}

/// Solves `A_e Δx = rhs` from `Δx = 0`.
pub fn solve_block(ctx: &BlockOperatorContext<'_>, e: Entity, rhs: &[f64], settings: &CgSettings) -> Result<CgOutcome> {
    let mut delta = vec![0.0; rhs.len()];
    let (iters, final_residual) = solve_block_into(ctx, e, rhs, None, settings, &mut delta, None)?;
    Ok(CgOutcome {
        delta,
        iters,
        final_residual,
    })
}

/// Like [`solve_block`] and also returns the residual norm before every iteration
/// and after the last one.
pub fn solve_block_traced(
    ctx: &BlockOperatorContext<'_>,
    e: Entity,
    rhs: &[f64],
    settings: &CgSettings,
) -> Result<(CgOutcome, Vec<f64>)> {
    let mut delta = vec![0.0; rhs.len()];
    let mut trace = Vec::new();
    let (iters, final_residual) = solve_block_into(ctx, e, rhs, None, settings, &mut delta, Some(&mut trace))?;
    Ok((
        CgOutcome {
            delta,
            iters,
            final_residual,
        },
        trace,
    ))
}

/// Core CG recurrence writing the solution into `x`. `start` seeds the
/// iterate (warm start); otherwise it begins at zero.
fn solve_block_into(
    ctx: &BlockOperatorContext<'_>,
    e: Entity,
    rhs: &[f64],
    start: Option<&[f64]>,
    settings: &CgSettings,
    x: &mut [f64],
    mut trace: Option<&mut Vec<f64>>,
) -> Result<(usize, f64)> {
    let f = rhs.len();
    let rhs_norm = dot(rhs, rhs).sqrt();
    if !rhs_norm.is_finite() {
        return Err(Error::NonFiniteCg { entity: e });
    }
    if rhs_norm == 0.0 {
        x.fill(0.0);
        return Ok((0, 0.0));
    }

    let mut r = rhs.to_vec();
    let mut ap = vec![0.0; f];
    match start {
        Some(x0) => {
            x.copy_from_slice(x0);
            gnvp_block_into(ctx, e, x, &mut ap);
            for (ri, a) in r.iter_mut().zip(&ap) {
                *ri -= a;
            }
        }
        None => x.fill(0.0),
    }
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let threshold = settings.tol * rhs_norm;
    let mut iters = 0;

    while iters < settings.max_iters {
        if let Some(t) = trace.as_deref_mut() {
            t.push(rs.sqrt());
        }
        if rs.sqrt() <= threshold || rs == 0.0 {
            break;
        }
        gnvp_block_into(ctx, e, &p, &mut ap);
        let curvature = dot(&p, &ap);
        let alpha = rs / curvature;
        if !alpha.is_finite() {
            return Err(Error::NonFiniteCg { entity: e });
        }
        for k in 0..f {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rs_next = dot(&r, &r);
        if !rs_next.is_finite() {
            return Err(Error::NonFiniteCg { entity: e });
        }
        let beta = rs_next / rs;
        for k in 0..f {
            p[k] = r[k] + beta * p[k];
        }
        rs = rs_next;
        iters += 1;
    }
    if iters == settings.max_iters {
        if let Some(t) = trace {
            t.push(rs.sqrt());
        }
    }
    Ok((iters, rs.sqrt()))
}

/// Solves every block with right-hand side `-grad_e` and assembles `ΔX`.
/// `warm` optionally seeds each block's iterate (off by default in training).
/// The returned stats counter is the total number of CG iterations.
pub fn solve_all(
    ctx: &BlockOperatorContext<'_>,
    grad: &BlockVector,
    settings: &CgSettings,
    exec: &Executor,
    warm: Option<&BlockVector>,
) -> Result<(BlockVector, RunStats)> {
    let layout = ctx.state().layout();
    for v in std::iter::once(grad).chain(warm) {
        if v.layout() != layout {
            return Err(Error::LengthMismatch {
                expected: layout.len(),
                actual: v.values().len(),
            });
        }
    }
    exec.run_blocks(layout, |e, out| {
        let rhs: Vec<f64> = grad.block(e).iter().map(|g| -g).collect();
        let start = warm.map(|w| w.block(e));
        let (iters, _) = solve_block_into(ctx, e, &rhs, start, settings, out, None)?;
        Ok(iters as u64)
    })
}
