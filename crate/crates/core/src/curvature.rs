//! Per-block damped Gauss-Newton vector products.
//!
//! Keeping only the per-entity `f x f` diagonal blocks of the Gauss-Newton
//! matrix decouples every user and item. For entity `e` with neighbors `R_e`,
//! the damped block operator is
//!
//! ```text
//! A_e v = J_e^T (J_e v) + (γ + λ |R_e|) v,    (J_e v)_n = <v, x_n>  for n in R_e
//! ```
//!
//! and it is applied matrix-free from the adjacency list.

use crate::data::HdiDataset;
use crate::error::{Error, Result};
use crate::model::{dot, BlockVector, Entity, FactorState};
use crate::parallel::Executor;

#[derive(Debug, Clone, Copy)]
pub struct BlockOperatorContext<'a> {
    state: &'a FactorState,
    data: &'a HdiDataset,
    lambda: f64,
    gamma: f64,
}

impl<'a> BlockOperatorContext<'a> {
    pub fn new(state: &'a FactorState, data: &'a HdiDataset, lambda: f64, gamma: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be finite and >= 0, got {gamma}")));
        }
        let layout = state.layout();
        if layout.num_users != data.num_users() || layout.num_items != data.num_items() {
            return Err(Error::LengthMismatch {
                expected: data.num_entities(),
                actual: layout.num_entities(),
            });
        }
        Ok(BlockOperatorContext {
            state,
            data,
            lambda,
            gamma,
        })
    }

    pub fn state(&self) -> &'a FactorState {
        self.state
    }

    pub fn data(&self) -> &'a HdiDataset {
        self.data
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Factor vectors of `e`'s observed counterparts, in adjacency order.
    #[inline]
    pub fn neighbors(&self, e: Entity) -> impl ExactSizeIterator<Item = &'a [f64]> + 'a {
        let state = self.state;
        let (ids, is_user) = match e {
            Entity::User(u) => (self.data.by_user().row(u).0, true),
            Entity::Item(i) => (self.data.by_item().row(i).0, false),
        };
        ids.iter()
            .map(move |&n| if is_user { state.item(n) } else { state.user(n) })
    }

    pub fn degree(&self, e: Entity) -> usize {
        match e {
            Entity::User(u) => self.data.by_user().degree(u),
            Entity::Item(i) => self.data.by_item().degree(i),
        }
    }

    /// Diagonal shift `γ + λ |R_e|` of `e`'s block.
    #[inline]
    pub fn shift(&self, e: Entity) -> f64 {
        self.gamma + self.lambda * self.degree(e) as f64
    }
}

/// `J_e v`: one directional derivative of the prediction per observation of `e`.
pub fn jvp_block(ctx: &BlockOperatorContext<'_>, e: Entity, v: &[f64]) -> Vec<f64> {
    ctx.neighbors(e).map(|x| dot(v, x)).collect()
}

/// Writes `(J_e^T J_e + (γ + λ|R_e|) I) v` into `out`.
#[inline]
pub fn gnvp_block_into(ctx: &BlockOperatorContext<'_>, e: Entity, v: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for x in ctx.neighbors(e) {
        let s = dot(v, x);
        for (o, &xd) in out.iter_mut().zip(x) {
            *o += xd * s;
        }
    }
    let shift = ctx.shift(e);
    for (o, &vd) in out.iter_mut().zip(v) {
        *o += shift * vd;
    }
}

pub fn gnvp_block(ctx: &BlockOperatorContext<'_>, e: Entity, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    gnvp_block_into(ctx, e, v, &mut out);
    out
}

/// The block-diagonal operator applied to a whole block vector.
pub fn full_gnvp(ctx: &BlockOperatorContext<'_>, v: &BlockVector, exec: &Executor) -> Result<BlockVector> {
    let layout = ctx.state.layout();
    if v.layout() != layout {
        return Err(Error::LengthMismatch {
            expected: layout.len(),
            actual: v.values().len(),
        });
    }
    let (out, _) = exec.run_blocks(layout, |e, out| {
        gnvp_block_into(ctx, e, v.block(e), out);
        Ok(0)
    })?;
    Ok(out)
}
