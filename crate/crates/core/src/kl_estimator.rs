//! KL divergence between a sample and a known distribution, estimated on a
//! data-dependent partition.
//!
//! The real line is cut at every `l`-th order statistic of the sample, giving
//! `T` cells that each hold exactly `l` sample points except the last, which
//! holds the remaining `eps = n - l (T - 1)`. The estimate compares these
//! empirical masses with the masses the reference distribution `q` assigns to
//! the same cells:
//!
//! ```text
//! D(Y || q) ~ sum_{t<T} (l/n) ln((l/n) / q(I_t)) + (eps/n) ln((eps/n) / q(I_T))
//! ```
//!
//! Cells are right-closed: `(-inf, b_1], (b_1, b_2], ..., (b_{T-1}, +inf)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{DistributionSpec, ExtReal};
use crate::error::{Error, Result};

/// How many points go into each cell as a function of the sample size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionSchedule {
    /// `l = ceil(sqrt(n))`, `T = floor(n / l)`.
    #[default]
    SqrtN,
    /// Exactly `T` cells with `l = floor(n / T)`; the last cell takes the remainder.
    FixedCells(usize),
    /// `l` points per cell, `T = floor(n / l)`.
    FixedPoints(usize),
}

impl PartitionSchedule {
    /// `(points_per_cell, cell_count)` for a sample of size `n`.
    pub fn shape(&self, n: usize) -> Result<(usize, usize)> {
        let (points, cells) = match *self {
            PartitionSchedule::SqrtN => {
                let points = ceil_sqrt(n).max(1);
                (points, n / points)
            }
            PartitionSchedule::FixedCells(0) => {
                return Err(Error::param("fixed_cells", "must be >= 1"));
            }
            PartitionSchedule::FixedCells(cells) => (n / cells, cells),
            PartitionSchedule::FixedPoints(0) => {
                return Err(Error::param("fixed_points", "must be >= 1"));
            }
            PartitionSchedule::FixedPoints(points) => (points, n / points),
        };
        if n < 2 || points == 0 || cells < 2 {
            return Err(Error::SampleTooSmall(format!(
                "n = {n} with schedule {} yields {cells} cell(s) of {points} point(s); need at least 2 cells",
                self.label()
            )));
        }
        Ok((points, cells))
    }

    /// Short name used in detector labels: `sqrt_n`, `cells=8`, `points=5`.
    pub fn label(&self) -> String {
        match *self {
            PartitionSchedule::SqrtN => "sqrt_n".to_string(),
            PartitionSchedule::FixedCells(t) => format!("cells={t}"),
            PartitionSchedule::FixedPoints(l) => format!("points={l}"),
        }
    }

    /// Inverse of [`PartitionSchedule::label`].
    pub fn from_label(label: &str) -> Option<Self> {
        if label == "sqrt_n" {
            return Some(PartitionSchedule::SqrtN);
        }
        let (key, value) = label.split_once('=')?;
        let value: usize = value.parse().ok()?;
        match key {
            "cells" => Some(PartitionSchedule::FixedCells(value)),
            "points" => Some(PartitionSchedule::FixedPoints(value)),
            _ => None,
        }
    }
}

fn ceil_sqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r > n {
        r -= 1;
    }
    while r * r < n {
        r += 1;
    }
    r
}

/// Empirically equiprobable cells built from a sample's order statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    /// Right endpoints of all cells but the last, ascending.
    pub boundaries: Vec<f64>,
    pub cell_count: usize,
    pub points_per_cell: usize,
    pub last_cell_points: usize,
    pub sample_size: usize,
}

impl Partition {
    /// Fraction of the sample in each cell.
    pub fn empirical_masses(&self) -> Vec<f64> {
        let n = self.sample_size as f64;
        let mut masses = vec![self.points_per_cell as f64 / n; self.cell_count - 1];
        masses.push(self.last_cell_points as f64 / n);
        masses
    }

    /// Mass `q` assigns to each cell.
    pub fn reference_masses(&self, q: &DistributionSpec) -> Vec<f64> {
        // cdf and sf at every edge; each cell takes the difference from the
        // tail that avoids cancellation.
        let edges: Vec<ExtReal> = std::iter::once(ExtReal::NegInf)
            .chain(self.boundaries.iter().map(|&b| ExtReal::Finite(b)))
            .chain(std::iter::once(ExtReal::PosInf))
            .collect();
        let tails: Vec<(f64, f64)> = edges
            .iter()
            .map(|e| match *e {
                ExtReal::NegInf => (0.0, 1.0),
                ExtReal::PosInf => (1.0, 0.0),
                ExtReal::Finite(x) => (q.cdf(x), q.sf(x)),
            })
            .collect();
        tails
            .windows(2)
            .map(|w| {
                let ((cdf_lo, sf_lo), (cdf_hi, sf_hi)) = (w[0], w[1]);
                let mass = if cdf_lo > 0.5 { sf_lo - sf_hi } else { cdf_hi - cdf_lo };
                mass.clamp(0.0, 1.0)
            })
            .collect()
    }
}

fn sorted_finite(sample: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = sample.iter().position(|x| !x.is_finite()) {
        return Err(Error::param(
            "sample",
            format!("observation {i} is not finite ({})", sample[i]),
        ));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

/// Cut the real line at the order statistics `Y(l), Y(2l), ..., Y(l(T-1))`.
pub fn build_partition(sample: &[f64], schedule: PartitionSchedule) -> Result<Partition> {
    let n = sample.len();
    let (points, cells) = schedule.shape(n)?;
    let sorted = sorted_finite(sample)?;
    Ok(partition_of_sorted(&sorted, points, cells))
}

fn partition_of_sorted(sorted: &[f64], points: usize, cells: usize) -> Partition {
    let n = sorted.len();
    let boundaries = (1..cells).map(|k| sorted[k * points - 1]).collect();
    Partition {
        boundaries,
        cell_count: cells,
        points_per_cell: points,
        last_cell_points: n - points * (cells - 1),
        sample_size: n,
    }
}

fn divergence_sum(partition: &Partition, q: &DistributionSpec, floor: Option<f64>) -> Result<f64> {
    let empirical = partition.empirical_masses();
    let reference = partition.reference_masses(q);
    let mut total = 0.0;
    for (cell, (&p, &m)) in empirical.iter().zip(&reference).enumerate() {
        let m = match floor {
            Some(delta) => m.max(delta),
            None if m <= 0.0 => {
                return Err(Error::ZeroMassCell {
                    cell,
                    cells: partition.cell_count,
                })
            }
            None => m,
        };
        total += p * (p.ln() - m.ln());
    }
    Ok(total)
}

/// Partition estimate of `D(p || q)` from a sample of `p`.
///
/// The value can be negative for finite samples. Fails with
/// [`Error::ZeroMassCell`] when `q` gives some cell no mass, i.e. the sample
/// left the support of `q`.
pub fn estimate_kl(sample: &[f64], q: &DistributionSpec, schedule: PartitionSchedule) -> Result<f64> {
    let partition = build_partition(sample, schedule)?;
    divergence_sum(&partition, q, None)
}

/// [`estimate_kl`] with every reference cell mass floored at `delta`.
/// Results are exploratory only: the floor biases the estimate.
pub fn estimate_kl_clamped(
    sample: &[f64],
    q: &DistributionSpec,
    schedule: PartitionSchedule,
    delta: f64,
) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param("clamp_cell_mass", "must lie in (0, 1)"));
    }
    let partition = build_partition(sample, schedule)?;
    divergence_sum(&partition, q, Some(delta))
}

/// [`estimate_kl`] on each sample, in order. The first failing element (by
/// position) is reported with its index.
pub fn estimate_kl_batch(samples: &[Vec<f64>], q: &DistributionSpec, schedule: PartitionSchedule) -> Result<Vec<f64>> {
    let results: Vec<Result<f64>> = samples.par_iter().map(|s| estimate_kl(s, q, schedule)).collect();
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| e.at_index(i)))
        .collect()
}
