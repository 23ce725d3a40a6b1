//! Uniformly offset grid tilings over a bounded box.
//!
//! Tiling `k` is displaced by `k / num_tilings` of one tile width along every
//! dimension. Inputs are clamped into the box first, and indices are clamped
//! into each tiling's grid, so every observation activates exactly one tile
//! per tiling.

use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::env::EnvId;

pub const DEFAULT_TILINGS: usize = 8;
pub const DEFAULT_TILES_PER_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileCoder {
    num_tilings: usize,
    tiles_per_dim: Vec<usize>,
    bounds: Vec<(f64, f64)>,
}

impl TileCoder {
    pub fn new(
        num_tilings: usize,
        tiles_per_dim: Vec<usize>,
        bounds: Vec<(f64, f64)>,
    ) -> Result<Self, AgentError> {
        if num_tilings == 0 {
            return Err(AgentError::InvalidCoder("numTilings must be positive".into()));
        }
        if tiles_per_dim.len() != bounds.len() || bounds.is_empty() {
            return Err(AgentError::InvalidCoder(
                "tilesPerDim and bounds must have the same non-zero length".into(),
            ));
        }
        if tiles_per_dim.contains(&0) {
            return Err(AgentError::InvalidCoder("tilesPerDim entries must be positive".into()));
        }
        if bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
            return Err(AgentError::InvalidCoder("bounds must be finite with low < high".into()));
        }
        Ok(TileCoder {
            num_tilings,
            tiles_per_dim,
            bounds,
        })
    }

    /// Default coder for a built-in environment. Mountain Car gets 8 tilings of
    /// 8x8 tiles; GridWorld gets a single tiling with one tile per cell, which
    /// makes every linear learner tabular there.
    pub fn for_env(env: EnvId) -> Self {
        match env {
            EnvId::MountainCar => TileCoder::new(
                DEFAULT_TILINGS,
                vec![DEFAULT_TILES_PER_DIM; 2],
                env.observation_bounds(),
            ),
            EnvId::GridWorld => {
                let n = crate::env::grid_world::SIZE as usize;
                let hi = n as f64 - 0.5;
                TileCoder::new(1, vec![n, n], vec![(-0.5, hi), (-0.5, hi)])
            }
        }
        .expect("built-in coder parameters are valid")
    }

    pub fn num_tilings(&self) -> usize {
        self.num_tilings
    }

    pub fn tiles_per_dim(&self) -> &[usize] {
        &self.tiles_per_dim
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn dims(&self) -> usize {
        self.bounds.len()
    }

    pub fn tiles_per_tiling(&self) -> usize {
        self.tiles_per_dim.iter().product()
    }

    pub fn feature_count(&self) -> usize {
        self.num_tilings * self.tiles_per_tiling()
    }

    /// Active feature indices, one per tiling, in tiling order.
    pub fn tile_features(&self, obs: &[f64]) -> Result<Vec<usize>, AgentError> {
        if obs.len() != self.dims() {
            return Err(AgentError::DimensionMismatch {
                got: obs.len(),
                expected: self.dims(),
            });
        }
        let scaled: Vec<f64> = obs
            .iter()
            .zip(&self.bounds)
            .zip(&self.tiles_per_dim)
            .map(|((&x, &(lo, hi)), &n)| {
                let x = if x.is_nan() { lo } else { x.clamp(lo, hi) };
                (x - lo) / (hi - lo) * n as f64
            })
            .collect();
        let per_tiling = self.tiles_per_tiling();
        let features = (0..self.num_tilings)
            .map(|k| {
                let shift = k as f64 / self.num_tilings as f64;
                let mut flat = 0usize;
                for (s, &n) in scaled.iter().zip(&self.tiles_per_dim) {
                    let idx = ((s + shift).floor() as usize).min(n - 1);
                    flat = flat * n + idx;
                }
                k * per_tiling + flat
            })
            .collect();
        Ok(features)
    }
}
