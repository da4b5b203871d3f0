//! Distances between sample sets and Gaussians, convergence diagnostics and
//! predictive scores.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::models::{QuadraticNode, TargetModel};
use crate::parallel::{self, Execution};
use crate::vector::{self, CompensatedSum};

/// Row-major `n × d` matrix of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SampleMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Contract(format!(
                "empty sample matrix ({rows} x {cols})"
            )));
        }
        check_dim(rows * cols, data.len())?;
        if !vector::all_finite(&data) {
            return Err(Error::Contract("samples must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim(cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.data[i * self.cols + j])
            .collect()
    }

    /// `n` rows taken at evenly spaced positions (first row always kept).
    pub fn strided_subsample(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.rows {
            return Err(Error::Contract(format!(
                "cannot take {n} of {} rows",
                self.rows
            )));
        }
        let mut data = Vec::with_capacity(n * self.cols);
        for k in 0..n {
            data.extend_from_slice(self.row(k * self.rows / n));
        }
        Self::new(n, self.cols, data)
    }

    /// Rows `start..`, e.g. to drop burn-in.
    pub fn tail(&self, start: usize) -> Result<Self> {
        if start >= self.rows {
            return Err(Error::Contract(format!(
                "burn-in {start} leaves no rows of {}",
                self.rows
            )));
        }
        Self::new(
            self.rows - start,
            self.cols,
            self.data[start * self.cols..].to_vec(),
        )
    }

    /// Every coordinate as a separate draw of one scalar (`nd × 1`).
    pub fn pooled(&self) -> Self {
        Self {
            rows: self.rows * self.cols,
            cols: 1,
            data: self.data.clone(),
        }
    }
}

/// Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        check_dim(mean.len(), var.len())?;
        if var.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || !vector::all_finite(&mean) {
            return Err(Error::Contract(
                "gaussian needs finite mean and non-negative variance".into(),
            ));
        }
        Ok(Self { mean, var })
    }

    pub fn isotropic(dim: usize, mean: f64, var: f64) -> Result<Self> {
        Self::new(vec![mean; dim], vec![var; dim])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `W2` between diagonal Gaussians: `(‖m1 − m2‖² + Σ (√v1 − √v2)²)^{1/2}`.
pub fn w2_gaussian(a: &DiagGaussian, b: &DiagGaussian) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    let mut sum = CompensatedSum::default();
    for i in 0..a.dim() {
        let dm = a.mean[i] - b.mean[i];
        let ds = a.var[i].sqrt() - b.var[i].sqrt();
        sum.add(dm * dm + ds * ds);
    }
    Ok(sum.value().sqrt())
}

/// Posterior `∝ exp(−Σ w_c f^(c))` for a fleet of isotropic quadratic nodes:
/// precision `Λ = Σ w_c λ_c` and mean `Λ⁻¹ Σ w_c λ_c m_c`, per coordinate.
pub fn gaussian_product_posterior(
    nodes: &[QuadraticNode],
    weights: &[f64],
) -> Result<DiagGaussian> {
    if nodes.is_empty() {
        return Err(Error::Contract("no nodes".into()));
    }
    check_dim(nodes.len(), weights.len())?;
    let d = nodes[0].dim();
    let mut mean = Vec::with_capacity(d);
    let mut var = Vec::with_capacity(d);
    for n in nodes {
        check_dim(d, n.dim())?;
    }
    for j in 0..d {
        let mut prec = CompensatedSum::default();
        let mut lin = CompensatedSum::default();
        for (n, w) in nodes.iter().zip(weights) {
            prec.add(w * n.precision());
            lin.add(w * n.precision() * n.mean()[j]);
        }
        let p = prec.value();
        if p <= 0.0 {
            return Err(Error::Contract(format!("coordinate {j} has no curvature")));
        }
        mean.push(lin.value() / p);
        var.push(1.0 / p);
    }
    DiagGaussian::new(mean, var)
}

/// Product posterior of a fleet of [`TargetModel::Quadratic`] nodes.
pub fn quadratic_fleet_posterior(models: &[TargetModel], weights: &[f64]) -> Result<DiagGaussian> {
    let nodes = models
        .iter()
        .map(|m| match m {
            TargetModel::Quadratic(q) => Ok(q.clone()),
            _ => Err(Error::Contract(
                "closed-form posterior needs quadratic nodes".into(),
            )),
        })
        .collect::<Result<Vec<_>>>()?;
    gaussian_product_posterior(&nodes, weights)
}

/// Per-coordinate sample mean and unbiased variance.
pub fn empirical_moments(samples: &SampleMatrix) -> Result<DiagGaussian> {
    if samples.rows() < 2 {
        return Err(Error::Contract("moments need at least two samples".into()));
    }
    let (mean, var) = (0..samples.cols())
        .map(|j| {
            let col = samples.column(j);
            (vector::mean(&col), vector::variance(&col))
        })
        .unzip();
    DiagGaussian::new(mean, var)
}

/// 1-D `W1` between equal-size empirical measures via the sorted coupling.
/// Sorts both inputs in place.
pub fn w1_sorted(a: &mut [f64], b: &mut [f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::Contract("empty sample".into()));
    }
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let mut sum = CompensatedSum::default();
    for (x, y) in a.iter().zip(b.iter()) {
        sum.add((x - y).abs());
    }
    Ok(sum.value() / a.len() as f64)
}

/// Mean over coordinates of the 1-D `W1` between marginals. Both sets must
/// hold the same number of rows; use [`SampleMatrix::strided_subsample`] first.
pub fn marginal_error(a: &SampleMatrix, b: &SampleMatrix) -> Result<f64> {
    marginal_error_with(Execution::default(), a, b)
}

pub fn marginal_error_with(exec: Execution, a: &SampleMatrix, b: &SampleMatrix) -> Result<f64> {
    check_dim(a.cols(), b.cols())?;
    if a.rows() != b.rows() {
        return Err(Error::Contract(format!(
            "marginal error needs equal sample counts, got {} and {}",
            a.rows(),
            b.rows()
        )));
    }
    let per_col = parallel::map_indexed(exec, a.cols(), |j| {
        w1_sorted(&mut a.column(j), &mut b.column(j)).expect("equal, non-empty columns")
    });
    let mut sum = CompensatedSum::default();
    per_col.iter().for_each(|v| sum.add(*v));
    Ok(sum.value() / a.cols() as f64)
}

/// Split-`R̂` per coordinate over `m ≥ 1` chains of equal length `n ≥ 4`
/// (each chain is halved, giving `2m` chains of `⌊n/2⌋`).
pub fn split_r_hat(chains: &[SampleMatrix]) -> Result<Vec<f64>> {
    if chains.is_empty() {
        return Err(Error::Contract(
            "split R-hat needs at least one chain".into(),
        ));
    }
    let (n, d) = (chains[0].rows(), chains[0].cols());
    if n < 4 {
        return Err(Error::Contract(
            "split R-hat needs at least four draws per chain".into(),
        ));
    }
    for c in chains {
        check_dim(d, c.cols())?;
        if c.rows() != n {
            return Err(Error::Contract("chains must have equal length".into()));
        }
    }
    let half = n / 2;
    let out = (0..d)
        .map(|j| {
            let halves: Vec<Vec<f64>> = chains
                .iter()
                .flat_map(|c| {
                    let col = c.column(j);
                    [col[..half].to_vec(), col[n - half..].to_vec()]
                })
                .collect();
            let means: Vec<f64> = halves.iter().map(|h| vector::mean(h)).collect();
            let w = vector::mean(
                &halves
                    .iter()
                    .map(|h| vector::variance(h))
                    .collect::<Vec<_>>(),
            );
            let b = half as f64 * vector::variance(&means);
            if w == 0.0 {
                return f64::INFINITY;
            }
            let nf = half as f64;
            (((nf - 1.0) / nf * w + b / nf) / w).sqrt()
        })
        .collect();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveMetrics {
    pub accuracy: f64,
    pub nll: f64,
    pub brier: f64,
    pub ece: f64,
}

const ECE_BINS: usize = 10;
const PROB_CLIP: f64 = 1e-12;

/// Scores for binary predictive probabilities `p_i = P(y_i = 1)` with labels
/// in `{0, 1}`. Probabilities are clipped to `[1e-12, 1 − 1e-12]` for the NLL.
pub fn predictive_metrics(probs: &[f64], labels: &[u8]) -> Result<PredictiveMetrics> {
    check_dim(probs.len(), labels.len())?;
    if probs.is_empty() {
        return Err(Error::Contract("no predictions".into()));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Contract("probabilities must lie in [0, 1]".into()));
    }
    if labels.iter().any(|y| *y > 1) {
        return Err(Error::Contract("labels must be 0 or 1".into()));
    }
    let n = probs.len() as f64;
    let mut correct = 0usize;
    let (mut nll, mut brier) = (CompensatedSum::default(), CompensatedSum::default());
    let mut bins = [(0usize, 0.0f64, 0.0f64); ECE_BINS];
    for (&p, &y) in probs.iter().zip(labels) {
        let y1 = y == 1;
        let hit = (p > 0.5) == y1;
        correct += hit as usize;
        let q = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
        nll.add(-if y1 { q.ln() } else { (1.0 - q).ln() });
        let r = p - y as f64;
        brier.add(r * r);
        let conf = p.max(1.0 - p);
        let b = ((conf * ECE_BINS as f64) as usize).min(ECE_BINS - 1);
        bins[b].0 += 1;
        bins[b].1 += conf;
        bins[b].2 += hit as u8 as f64;
    }
    let ece = bins
        .iter()
        .filter(|b| b.0 > 0)
        .map(|&(_, conf, hits)| (hits - conf).abs() / n)
        .sum();
    Ok(PredictiveMetrics {
        accuracy: correct as f64 / n,
        nll: nll.value() / n,
        brier: brier.value() / n,
        ece,
    })
}
