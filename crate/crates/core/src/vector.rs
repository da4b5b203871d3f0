//! Small dense-vector helpers shared by the samplers.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
    started: bool,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        if !self.started {
            // Seeding with the first term keeps single-term sums bit-exact (including -0.0).
            self.sum = x;
            self.started = true;
            return;
        }
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        if self.carry == 0.0 {
            self.sum
        } else {
            self.sum + self.carry
        }
    }
}

/// Weighted average `Σ w_i v_i` with a fixed-order compensated sum per coordinate.
pub fn weighted_average<'a, I>(weights: &[f64], vectors: I, dim: usize) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f64]> + Clone,
{
    (0..dim)
        .map(|j| {
            let mut acc = CompensatedSum::default();
            for (w, v) in weights.iter().zip(vectors.clone()) {
                acc.add(w * v[j]);
            }
            acc.value()
        })
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}
