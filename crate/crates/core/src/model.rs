//! The bilinear latent factor model over a unified decision vector.
//!
//! All user and item latent vectors live in one flat array: users first, then
//! items, each entity owning a contiguous length-`f` block.

use std::fmt;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::HdiDataset;
use crate::error::{Error, Result};

/// Upper bound of the uniform initialization range.
pub const INIT_UPPER: f64 = 0.04;

const SNAPSHOT_MAGIC: &[u8; 4] = b"MHFS";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Entity {
    User(usize),
    Item(usize),
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::User(u) => write!(f, "user {u}"),
            Entity::Item(i) => write!(f, "item {i}"),
        }
    }
}

/// Shape of a block-partitioned vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub f: usize,
    pub num_users: usize,
    pub num_items: usize,
}

impl Layout {
    pub fn for_data(data: &HdiDataset, f: usize) -> Self {
        Layout {
            f,
            num_users: data.num_users(),
            num_items: data.num_items(),
        }
    }

    pub fn num_entities(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn len(&self) -> usize {
        self.num_entities() * self.f
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entity at flat position `k` in the users-then-items sequence.
    #[inline]
    pub fn entity(&self, k: usize) -> Entity {
        if k < self.num_users {
            Entity::User(k)
        } else {
            Entity::Item(k - self.num_users)
        }
    }

    #[inline]
    pub fn position(&self, e: Entity) -> usize {
        match e {
            Entity::User(u) => u,
            Entity::Item(i) => self.num_users + i,
        }
    }

    #[inline]
    pub fn range(&self, e: Entity) -> std::ops::Range<usize> {
        let k = self.position(e);
        k * self.f..(k + 1) * self.f
    }

    pub fn check_entity(&self, e: Entity) -> Result<()> {
        match e {
            Entity::User(u) if u >= self.num_users => Err(Error::IndexOutOfRange {
                what: "user",
                index: u,
                limit: self.num_users,
            }),
            Entity::Item(i) if i >= self.num_items => Err(Error::IndexOutOfRange {
                what: "item",
                index: i,
                limit: self.num_items,
            }),
            _ => Ok(()),
        }
    }
}

/// A vector partitioned into per-entity length-`f` blocks (gradients,
/// conjugate directions, increments, operator outputs).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    layout: Layout,
    values: Vec<f64>,
}

impl BlockVector {
    pub fn zeros(layout: Layout) -> Self {
        BlockVector {
            layout,
            values: vec![0.0; layout.len()],
        }
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::LengthMismatch {
                expected: layout.len(),
                actual: values.len(),
            });
        }
        Ok(BlockVector { layout, values })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn block(&self, e: Entity) -> &[f64] {
        &self.values[self.layout.range(e)]
    }

    pub fn block_mut(&mut self, e: Entity) -> &mut [f64] {
        let r = self.layout.range(e);
        &mut self.values[r]
    }

    pub fn dot(&self, other: &BlockVector) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.values, &self.values)
    }
}

/// The unified factor vector `X` (user block `P` stacked over item block `Q`).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorState {
    layout: Layout,
    seed: u64,
    values: Vec<f64>,
}

impl FactorState {
    pub fn from_values(layout: Layout, seed: u64, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::LengthMismatch {
                expected: layout.len(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("factor values must be finite".into()));
        }
        Ok(FactorState { layout, seed, values })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn f(&self) -> usize {
        self.layout.f
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn user(&self, u: usize) -> &[f64] {
        let f = self.layout.f;
        &self.values[u * f..(u + 1) * f]
    }

    #[inline]
    pub fn item(&self, i: usize) -> &[f64] {
        let f = self.layout.f;
        let k = self.layout.num_users + i;
        &self.values[k * f..(k + 1) * f]
    }

    #[inline]
    pub fn block(&self, e: Entity) -> &[f64] {
        &self.values[self.layout.range(e)]
    }

    /// `X <- X + delta`.
    pub fn apply(&mut self, delta: &BlockVector) -> Result<()> {
        if delta.layout != self.layout {
            return Err(Error::LengthMismatch {
                expected: self.layout.len(),
                actual: delta.values.len(),
            });
        }
        for (x, d) in self.values.iter_mut().zip(&delta.values) {
            *x += d;
        }
        Ok(())
    }

    /// Writes the binary snapshot: magic `MHFS`, `u32` version, then `u64`
    /// num_users, num_items, f, seed, then the values as `f64`; all little-endian.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(SNAPSHOT_MAGIC)?;
        out.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        for n in [
            self.layout.num_users as u64,
            self.layout.num_items as u64,
            self.layout.f as u64,
            self.seed,
        ] {
            out.write_all(&n.to_le_bytes())?;
        }
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("bad magic".into()));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}")));
        }
        let mut header = [0u64; 4];
        let mut buf = [0u8; 8];
        for h in &mut header {
            input.read_exact(&mut buf)?;
            *h = u64::from_le_bytes(buf);
        }
        let layout = Layout {
            num_users: header[0] as usize,
            num_items: header[1] as usize,
            f: header[2] as usize,
        };
        let mut values = Vec::with_capacity(layout.len());
        for _ in 0..layout.len() {
            input.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Snapshot(format!("{} trailing bytes", rest.len())));
        }
        FactorState::from_values(layout, header[3], values)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws every factor i.i.d. from `U(0, 0.04)` using a ChaCha8 stream.
pub fn init_factors(num_users: usize, num_items: usize, f: usize, seed: u64) -> Result<FactorState> {
    if f == 0 {
        return Err(Error::Config("latent dimension f must be at least 1".into()));
    }
    if num_users == 0 || num_items == 0 {
        return Err(Error::Config(format!(
            "need at least one user and one item, got {num_users} users and {num_items} items"
        )));
    }
    let layout = Layout {
        f,
        num_users,
        num_items,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..layout.len()).map(|_| rng.random_range(0.0..INIT_UPPER)).collect();
    Ok(FactorState { layout, seed, values })
}

/// `M_(u,i)(X) = <x_u, x_i>`.
pub fn predict(state: &FactorState, u: usize, i: usize) -> Result<f64> {
    let layout = state.layout();
    layout.check_entity(Entity::User(u))?;
    layout.check_entity(Entity::Item(i))?;
    Ok(dot(state.user(u), state.item(i)))
}

/// Regularized squared loss. The `λ` penalty is charged once per observed
/// entry, so entity `e` carries `λ |R_e| ||x_e||²` in total.
pub fn loss(state: &FactorState, data: &HdiDataset, lambda: f64) -> f64 {
    let mut total = 0.0;
    for t in data.entries() {
        let (xu, xi) = (state.user(t.user), state.item(t.item));
        let err = t.rating - dot(xu, xi);
        total += err * err + lambda * (dot(xu, xu) + dot(xi, xi));
    }
    0.5 * total
}

/// Writes the loss gradient with respect to entity `e`'s block into `out`.
/// Neighbors are visited in adjacency order.
pub fn gradient_block(state: &FactorState, data: &HdiDataset, lambda: f64, e: Entity, out: &mut [f64]) {
    out.fill(0.0);
    let (own, neighbors, ratings) = match e {
        Entity::User(u) => {
            let (n, r) = data.by_user().row(u);
            (state.user(u), n, r)
        }
        Entity::Item(i) => {
            let (n, r) = data.by_item().row(i);
            (state.item(i), n, r)
        }
    };
    for (&n, &r) in neighbors.iter().zip(ratings) {
        let other = match e {
            Entity::User(_) => state.item(n),
            Entity::Item(_) => state.user(n),
        };
        let residual = r - dot(own, other);
        for ((g, &o), &x) in out.iter_mut().zip(other).zip(own) {
            *g += -residual * o + lambda * x;
        }
    }
}

/// Full gradient, computed block by block on the calling thread.
pub fn gradient(state: &FactorState, data: &HdiDataset, lambda: f64) -> BlockVector {
    let layout = state.layout();
    let mut grad = BlockVector::zeros(layout);
    for k in 0..layout.num_entities() {
        let e = layout.entity(k);
        gradient_block(state, data, lambda, e, grad.block_mut(e));
    }
    grad
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
}

/// RMSE and MAE of the model's predictions over every entry of `data`.
pub fn evaluate(state: &FactorState, data: &HdiDataset) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut sq, mut abs) = (0.0, 0.0);
    for t in data.entries() {
        let err = t.rating - dot(state.user(t.user), state.item(t.item));
        sq += err * err;
        abs += err.abs();
    }
    let n = data.len() as f64;
    Ok(Metrics {
        rmse: (sq / n).sqrt(),
        mae: abs / n,
    })
}
