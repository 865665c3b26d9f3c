//! Post-hoc whitening of a stored set of embeddings, fit on the whole set.

use std::path::Path;

use super::embfile::{read_embeddings, write_embeddings};
use crate::error::{Error, Result};
use crate::metrics::uniformity_loss;
use crate::tensor::{l2_normalize_rows, Matrix};
use crate::whitening::{
    apply_whitening, derive_whitening, relative_ridge, view_plan, GroupPlan, GroupWhitening, WhiteningKind,
    WhiteningStats,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PostWhitening {
    Pca,
    Zca,
    /// ZCA within contiguous channel groups.
    Group,
    /// ZCA within groups of a seeded channel shuffle.
    Sgw,
}

impl std::str::FromStr for PostWhitening {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(Self::Pca),
            "zca" => Ok(Self::Zca),
            "group" => Ok(Self::Group),
            "sgw" => Ok(Self::Sgw),
            _ => Err(Error::Config(format!("unknown whitening kind '{s}' (pca | zca | group | sgw)"))),
        }
    }
}

/// Whitens `input` with statistics of `input` itself. `ridge_eps` is relative
/// to the mean variance of each whitened block.
pub fn whiten_embeddings(input: &Matrix, kind: PostWhitening, group_size: usize, ridge_eps: f64, seed: u64) -> Result<Matrix> {
    match kind {
        PostWhitening::Pca | PostWhitening::Zca => {
            let stats = WhiteningStats::from_batch(input, 0.0)?;
            let wk = if kind == PostWhitening::Pca { WhiteningKind::Pca } else { WhiteningKind::Zca };
            let w = derive_whitening(&stats, wk, relative_ridge(stats.cov(), ridge_eps))?;
            apply_whitening(input, &stats, &w)
        }
        PostWhitening::Group => {
            let plan = GroupPlan::identity(input.cols(), group_size)?;
            GroupWhitening::fit(input, plan, WhiteningKind::Zca, ridge_eps)?.apply(input)
        }
        PostWhitening::Sgw => {
            let plan = view_plan(input.cols(), group_size, seed, 0)?;
            GroupWhitening::fit(input, plan, WhiteningKind::Zca, ridge_eps)?.apply(input)
        }
    }
}

/// Uniformity of the rows after L2 normalization; zero rows are an error.
pub fn normalized_uniformity(m: &Matrix) -> Result<f64> {
    let (unit, degenerate) = l2_normalize_rows(m);
    if let Some(&row) = degenerate.first() {
        return Err(Error::DegenerateInput(format!("row {row} has zero norm")));
    }
    uniformity_loss(&unit)
}

#[derive(Clone, Debug)]
pub struct WhitenOutcome {
    pub output: Matrix,
    pub uniformity_before: f64,
    pub uniformity_after: f64,
}

impl WhitenOutcome {
    pub fn to_line(&self) -> String {
        format!(
            "rows={},dim={},uniformity_before={},uniformity_after={}",
            self.output.rows(),
            self.output.cols(),
            self.uniformity_before,
            self.uniformity_after
        )
    }
}

pub fn whiten_file(
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    kind: PostWhitening,
    group_size: usize,
    ridge_eps: f64,
    seed: u64,
) -> Result<WhitenOutcome> {
    let data = read_embeddings(input)?;
    let whitened = whiten_embeddings(&data, kind, group_size, ridge_eps, seed)?;
    let outcome = WhitenOutcome {
        uniformity_before: normalized_uniformity(&data)?,
        uniformity_after: normalized_uniformity(&whitened)?,
        output: whitened,
    };
    write_embeddings(output, &outcome.output)?;
    Ok(outcome)
}
