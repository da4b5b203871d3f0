//! Node targets `f^(c)`, their exact and stochastic gradient oracles, and
//! probes for the convexity/smoothness constants.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{self, StreamRole};
use crate::vector;

/// Isotropic quadratic `f(θ) = (λ/2)‖θ − m‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticNode {
    mean: Vec<f64>,
    precision: f64,
}

impl QuadraticNode {
    pub fn new(mean: Vec<f64>, precision: f64) -> Result<Self> {
        if !(precision > 0.0 && precision.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "quadratic precision must be positive, got {precision}"
            )));
        }
        if mean.is_empty() {
            return Err(Error::InvalidConfig(
                "quadratic mean must be non-empty".into(),
            ));
        }
        Ok(Self { mean, precision })
    }

    /// Mean `center · 1_d`.
    pub fn isotropic(dim: usize, center: f64, precision: f64) -> Result<Self> {
        Self::new(vec![center; dim], precision)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn precision(&self) -> f64 {
        self.precision
    }
}

/// Bayesian logistic regression node:
/// `f(θ) = scale · Σ_i log(1 + exp(−y_i x_iᵀθ)) + (prior/2)‖θ‖²`, `y_i ∈ {−1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticNode {
    /// Row-major `n × dim`.
    features: Vec<f64>,
    labels: Vec<f64>,
    dim: usize,
    prior_precision: f64,
    scale: f64,
    gram_norm: f64,
}

impl LogisticNode {
    /// `labels` may be given as {0, 1} or {−1, +1}.
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        labels: &[f64],
        prior_precision: f64,
        scale: f64,
    ) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::InvalidConfig(format!(
                "feature matrix has {} entries, expected {} rows x {dim} columns",
                features.len(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::InvalidConfig(
                "logistic node needs at least one datum".into(),
            ));
        }
        if !(prior_precision >= 0.0 && scale > 0.0) {
            return Err(Error::InvalidConfig(
                "logistic prior precision must be >= 0 and scale > 0".into(),
            ));
        }
        let labels = labels
            .iter()
            .map(|&y| match y {
                1.0 => Ok(1.0),
                y if y == 0.0 || y == -1.0 => Ok(-1.0),
                other => Err(Error::InvalidConfig(format!("label {other} is not binary"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let gram_norm = gram_operator_norm(&features, dim);
        Ok(Self {
            features,
            labels,
            dim,
            prior_precision,
            scale,
            gram_norm,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn prior_precision(&self) -> f64 {
        self.prior_precision
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Labels in {−1, +1}.
    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// `scale · ¼ · ‖XᵀX‖_op + prior`.
    pub fn lipschitz_bound(&self) -> f64 {
        self.scale * 0.25 * self.gram_norm + self.prior_precision
    }

    fn data_grad_into<I: Iterator<Item = usize>>(
        &self,
        theta: &[f64],
        rows: I,
        weight: f64,
        out: &mut [f64],
    ) {
        for (o, t) in out.iter_mut().zip(theta) {
            *o = self.prior_precision * t;
        }
        let mut acc = vec![0.0; self.dim];
        for i in rows {
            let x = self.row(i);
            let y = self.labels[i];
            let coef = -y * sigmoid(-y * vector::dot(x, theta));
            for (a, xj) in acc.iter_mut().zip(x) {
                *a += coef * xj;
            }
        }
        let w = self.scale * weight;
        for (o, a) in out.iter_mut().zip(&acc) {
            *o += w * a;
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z), stable for large |z|.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Largest eigenvalue of `XᵀX` by power iteration.
fn gram_operator_norm(features: &[f64], dim: usize) -> f64 {
    let rows = features.len() / dim;
    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut lambda = 0.0;
    for _ in 0..1000 {
        let mut w = vec![0.0; dim];
        for i in 0..rows {
            let x = &features[i * dim..(i + 1) * dim];
            let s = vector::dot(x, &v);
            for (wj, xj) in w.iter_mut().zip(x) {
                *wj += s * xj;
            }
        }
        let nw = vector::norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        let next = nw;
        for (vj, wj) in v.iter_mut().zip(&w) {
            *vj = wj / nw;
        }
        if (next - lambda).abs() <= 1e-13 * next {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// A node loss function. Immutable after construction and shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetModel {
    Quadratic(QuadraticNode),
    Logistic(LogisticNode),
    /// `Σ w_c f^(c)`; used for the global target of a fleet.
    WeightedSum(Vec<(f64, TargetModel)>),
}

impl From<QuadraticNode> for TargetModel {
    fn from(q: QuadraticNode) -> Self {
        TargetModel::Quadratic(q)
    }
}

impl From<LogisticNode> for TargetModel {
    fn from(l: LogisticNode) -> Self {
        TargetModel::Logistic(l)
    }
}

impl TargetModel {
    pub fn dim(&self) -> usize {
        match self {
            TargetModel::Quadratic(q) => q.mean.len(),
            TargetModel::Logistic(l) => l.dim,
            TargetModel::WeightedSum(parts) => parts.first().map_or(0, |(_, m)| m.dim()),
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            TargetModel::Quadratic(_) => "quadratic",
            TargetModel::Logistic(_) => "logistic",
            TargetModel::WeightedSum(_) => "weighted-sum",
        }
    }

    /// The global target `Σ w_c f^(c)` of a fleet.
    pub fn weighted_sum(weights: &[f64], models: &[TargetModel]) -> Result<Self> {
        check_dim(models.len(), weights.len())?;
        if let Some(first) = models.first() {
            for m in models {
                check_dim(first.dim(), m.dim())?;
            }
        } else {
            return Err(Error::InvalidConfig("empty fleet".into()));
        }
        Ok(TargetModel::WeightedSum(
            weights
                .iter()
                .copied()
                .zip(models.iter().cloned())
                .collect(),
        ))
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim(), theta.len())?;
        Ok(match self {
            TargetModel::Quadratic(q) => 0.5 * q.precision * vector::dist_sq(theta, &q.mean),
            TargetModel::Logistic(l) => {
                let data: f64 = (0..l.len())
                    .map(|i| softplus(-l.labels[i] * vector::dot(l.row(i), theta)))
                    .sum();
                l.scale * data + 0.5 * l.prior_precision * vector::norm_sq(theta)
            }
            TargetModel::WeightedSum(parts) => {
                let mut total = 0.0;
                for (w, m) in parts {
                    total += w * m.value(theta)?;
                }
                total
            }
        })
    }

    /// Exact gradient written into `out`.
    pub fn grad_into(&self, theta: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), theta.len())?;
        check_dim(self.dim(), out.len())?;
        match self {
            TargetModel::Quadratic(q) => {
                for ((o, t), m) in out.iter_mut().zip(theta).zip(&q.mean) {
                    *o = q.precision * (t - m);
                }
            }
            TargetModel::Logistic(l) => l.data_grad_into(theta, 0..l.len(), 1.0, out),
            TargetModel::WeightedSum(parts) => {
                let grads = parts
                    .iter()
                    .map(|(_, m)| m.grad(theta))
                    .collect::<Result<Vec<_>>>()?;
                let weights: Vec<f64> = parts.iter().map(|(w, _)| *w).collect();
                let avg = vector::weighted_average(
                    &weights,
                    grads.iter().map(|g| g.as_slice()),
                    theta.len(),
                );
                out.copy_from_slice(&avg);
            }
        }
        Ok(())
    }

    pub fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.grad_into(theta, &mut out)?;
        Ok(out)
    }

    /// Declared `(μ, L)`.
    pub fn declared_constants(&self) -> (f64, f64) {
        match self {
            TargetModel::Quadratic(q) => (q.precision, q.precision),
            TargetModel::Logistic(l) => (l.prior_precision, l.lipschitz_bound()),
            TargetModel::WeightedSum(parts) => {
                parts.iter().fold((0.0, 0.0), |(mu, lip), (w, m)| {
                    let (mu_c, l_c) = m.declared_constants();
                    (mu + w * mu_c, lip + w * l_c)
                })
            }
        }
    }

    /// Number of data points for data-backed models.
    pub fn data_len(&self) -> Option<usize> {
        match self {
            TargetModel::Logistic(l) => Some(l.len()),
            _ => None,
        }
    }

    /// A point where the probes are centred.
    fn reference_point(&self) -> Vec<f64> {
        match self {
            TargetModel::Quadratic(q) => q.mean.clone(),
            _ => vec![0.0; self.dim()],
        }
    }
}

/// Exact gradient of `model` at `theta`.
pub fn grad(model: &TargetModel, theta: &[f64]) -> Result<Vec<f64>> {
    model.grad(theta)
}

/// Gradient oracle noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GradientNoise {
    #[default]
    Exact,
    /// Adds i.i.d. `N(0, variance)` to every coordinate.
    AdditiveGaussian { variance: f64 },
    /// Sums a uniformly drawn subset (without replacement), rescaled by `n_c / batch_size`.
    Minibatch { batch_size: usize },
}

impl GradientNoise {
    pub fn is_exact(&self) -> bool {
        matches!(self, GradientNoise::Exact)
    }

    fn name(&self) -> &'static str {
        match self {
            GradientNoise::Exact => "exact",
            GradientNoise::AdditiveGaussian { .. } => "additive-gaussian",
            GradientNoise::Minibatch { .. } => "minibatch",
        }
    }

    /// Checks that the noise can be used with `model`.
    pub fn validate_for(&self, model: &TargetModel) -> Result<()> {
        match *self {
            GradientNoise::Exact => Ok(()),
            GradientNoise::AdditiveGaussian { variance } => {
                if variance >= 0.0 && variance.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(format!(
                        "noise variance must be >= 0, got {variance}"
                    )))
                }
            }
            GradientNoise::Minibatch { batch_size } => match model.data_len() {
                None => Err(Error::UnsupportedNoise {
                    noise: self.name(),
                    model: model.kind_name(),
                }),
                Some(_) if batch_size == 0 => Err(Error::InvalidConfig(
                    "minibatch size must be positive".into(),
                )),
                Some(_) => Ok(()),
            },
        }
    }
}

/// Stochastic gradient `∇f̃(θ, ξ)` written into `out`; draws come from `rng`.
pub fn stochastic_grad_into<R: Rng + ?Sized>(
    model: &TargetModel,
    theta: &[f64],
    noise: &GradientNoise,
    rng: &mut R,
    out: &mut [f64],
) -> Result<()> {
    match *noise {
        GradientNoise::Exact => model.grad_into(theta, out),
        GradientNoise::AdditiveGaussian { variance } => {
            model.grad_into(theta, out)?;
            let sd = variance.sqrt();
            for o in out.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *o += sd * z;
            }
            Ok(())
        }
        GradientNoise::Minibatch { batch_size } => {
            noise.validate_for(model)?;
            let TargetModel::Logistic(l) = model else {
                unreachable!("validated data-backed model")
            };
            if batch_size >= l.len() {
                return model.grad_into(theta, out);
            }
            check_dim(l.dim, theta.len())?;
            check_dim(l.dim, out.len())?;
            let mut idx = rand::seq::index::sample(rng, l.len(), batch_size).into_vec();
            idx.sort_unstable();
            let weight = l.len() as f64 / batch_size as f64;
            l.data_grad_into(theta, idx.into_iter(), weight, out);
            Ok(())
        }
    }
}

pub fn stochastic_grad<R: Rng + ?Sized>(
    model: &TargetModel,
    theta: &[f64],
    noise: &GradientNoise,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; model.dim()];
    stochastic_grad_into(model, theta, noise, rng, &mut out)?;
    Ok(out)
}

/// Result of probing a model's convexity and smoothness constants.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    /// Smallest observed `⟨∇f(x)−∇f(y), x−y⟩ / ‖x−y‖²`.
    pub mu_est: f64,
    /// Largest observed `‖∇f(x)−∇f(y)‖ / ‖x−y‖`.
    pub l_est: f64,
    pub declared_mu: f64,
    pub declared_l: f64,
    pub pairs_used: usize,
    pub violations: Vec<String>,
}

/// Samples `probe_count` random pairs around the model's reference point and
/// checks the declared `(μ, L)` against the monotonicity and Lipschitz ratios.
pub fn check_assumptions<R: Rng + ?Sized>(
    model: &TargetModel,
    probe_count: usize,
    rng: &mut R,
) -> Result<AssumptionReport> {
    if probe_count < 2 {
        return Err(Error::Contract(
            "check_assumptions needs probe_count >= 2".into(),
        ));
    }
    let center = model.reference_point();
    let draw = |rng: &mut R| -> Vec<f64> {
        center
            .iter()
            .map(|c| {
                let z: f64 = StandardNormal.sample(rng);
                c + 2.0 * z
            })
            .collect()
    };
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..probe_count)
        .map(|i| {
            let x = draw(rng);
            // Every tenth pair is degenerate so the x = y guard is exercised.
            let y = if i % 10 == 9 { x.clone() } else { draw(rng) };
            (x, y)
        })
        .collect();
    check_pairs(model, &pairs)
}

/// Same as [`check_assumptions`] on caller-supplied probe pairs.
pub fn check_pairs(
    model: &TargetModel,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<AssumptionReport> {
    let (declared_mu, declared_l) = model.declared_constants();
    let mut mu_est = f64::INFINITY;
    let mut l_est: f64 = 0.0;
    let mut used = 0;
    for (x, y) in pairs {
        let dx: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let dx2 = vector::norm_sq(&dx);
        if dx2 == 0.0 {
            continue;
        }
        let gx = model.grad(x)?;
        let gy = model.grad(y)?;
        let dg: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a - b).collect();
        mu_est = mu_est.min(vector::dot(&dg, &dx) / dx2);
        l_est = l_est.max((vector::norm_sq(&dg) / dx2).sqrt());
        used += 1;
    }
    let mut violations = Vec::new();
    if used == 0 {
        mu_est = declared_mu;
        l_est = declared_l;
    } else {
        let tol = 1e-9;
        if mu_est < declared_mu * (1.0 - tol) - tol {
            violations.push(format!(
                "strong convexity: observed {mu_est} below declared mu {declared_mu}"
            ));
        }
        if l_est > declared_l * (1.0 + tol) + tol {
            violations.push(format!(
                "smoothness: observed {l_est} above declared L {declared_l}"
            ));
        }
    }
    Ok(AssumptionReport {
        mu_est,
        l_est,
        declared_mu,
        declared_l,
        pairs_used: used,
        violations,
    })
}

/// Simulated logistic-regression data.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticDataset {
    pub dim: usize,
    /// Row-major `n × dim`.
    pub features: Vec<f64>,
    /// Labels in {0, 1}.
    pub labels: Vec<f64>,
    pub true_theta: Vec<f64>,
}

impl LogisticDataset {
    /// Features `x_ij ~ N(0, feature_scale²)`, coefficients `θ* ~ N(0, I/d)`,
    /// labels `y_i ~ Bernoulli(sigmoid(x_iᵀθ*))`.
    pub fn generate(n: usize, dim: usize, seed: u64, feature_scale: f64) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::InvalidConfig(
                "dataset needs n >= 1 and dim >= 1".into(),
            ));
        }
        let mut rng = rng::stream(seed, StreamRole::Auxiliary, 0, 0);
        let coef_sd = 1.0 / (dim as f64).sqrt();
        let true_theta: Vec<f64> = rng::standard_normal_vec(&mut rng, dim)
            .into_iter()
            .map(|z| coef_sd * z)
            .collect();
        let mut features = rng::standard_normal_vec(&mut rng, n * dim);
        features.iter_mut().for_each(|x| *x *= feature_scale);
        let labels = (0..n)
            .map(|i| {
                let p = sigmoid(vector::dot(&features[i * dim..(i + 1) * dim], &true_theta));
                let b = Bernoulli::new(p).expect("sigmoid is a probability");
                if b.sample(&mut rng) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self {
            dim,
            features,
            labels,
            true_theta,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Splits the rows into `nodes` contiguous shards. Node `c` gets
    /// `scale = n / n_c` and weight `w_c = n_c / n`, so `Σ w_c f^(c)` is the
    /// full-data loss plus the prior.
    pub fn split_nodes(
        &self,
        nodes: usize,
        prior_precision: f64,
    ) -> Result<(Vec<TargetModel>, Vec<f64>)> {
        let n = self.len();
        if nodes == 0 || nodes > n {
            return Err(Error::InvalidConfig(format!(
                "cannot split {n} rows across {nodes} nodes"
            )));
        }
        let base = n / nodes;
        let extra = n % nodes;
        let mut start = 0;
        let mut models = Vec::with_capacity(nodes);
        let mut weights = Vec::with_capacity(nodes);
        for c in 0..nodes {
            let len = base + usize::from(c < extra);
            let end = start + len;
            let node = LogisticNode::new(
                self.features[start * self.dim..end * self.dim].to_vec(),
                self.dim,
                &self.labels[start..end],
                prior_precision,
                n as f64 / len as f64,
            )?;
            models.push(node.into());
            weights.push(len as f64 / n as f64);
            start = end;
        }
        Ok((models, weights))
    }
}
