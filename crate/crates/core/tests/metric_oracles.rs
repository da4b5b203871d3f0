use fahmc_core::metrics::{gaussian_product_posterior, w1_sorted};
use fahmc_core::rng::{self, StreamRole};
use fahmc_core::{
    empirical_moments, marginal_error, predictive_metrics, split_r_hat, w2_gaussian, DiagGaussian,
    QuadraticNode, SampleMatrix, TargetModel,
};
use rand::Rng;

fn normals(seed: u64, n: usize, mean: f64, sd: f64) -> Vec<f64> {
    let mut r = rng::stream(seed, StreamRole::Auxiliary, 0, 0);
    rng::standard_normal_vec(&mut r, n)
        .into_iter()
        .map(|z| mean + sd * z)
        .collect()
}

fn column(xs: Vec<f64>) -> SampleMatrix {
    SampleMatrix::new(xs.len(), 1, xs).unwrap()
}

#[test]
fn w2_closed_form_agrees_with_sorted_coupling() {
    let a = DiagGaussian::isotropic(1, 0.0, 1.0).unwrap();
    let b = DiagGaussian::isotropic(1, 0.0, 4.0).unwrap();
    assert!((w2_gaussian(&a, &b).unwrap() - 1.0).abs() < 1e-12);

    let mut x = normals(1, 1_000_000, 0.0, 1.0);
    let mut y = normals(2, 1_000_000, 0.0, 2.0);
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let w2 = (x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    assert!((w2 - 1.0).abs() < 1e-2, "empirical W2 {w2}");
}

#[test]
fn w1_sorted_matches_quantile_shift() {
    let mut x = normals(3, 200_000, 0.0, 1.0);
    let mut y: Vec<f64> = normals(4, 200_000, 0.0, 1.0)
        .into_iter()
        .map(|v| v + 0.5)
        .collect();
    let w1 = w1_sorted(&mut x, &mut y).unwrap();
    assert!((w1 - 0.5).abs() < 0.02, "{w1}");
}

#[test]
fn marginal_error_decays_like_inverse_root_n() {
    let sizes = [100usize, 1000, 10_000];
    let reps = 20;
    let mut log_me = Vec::new();
    for &n in &sizes {
        let mean: f64 = (0..reps)
            .map(|r| {
                let a = column(normals(10 + r, n, 0.0, 1.0));
                let b = column(normals(1000 + r, n, 0.0, 1.0));
                marginal_error(&a, &b).unwrap()
            })
            .sum::<f64>()
            / reps as f64;
        log_me.push(mean.ln());
    }
    let xs: Vec<f64> = sizes.iter().map(|n| (*n as f64).ln()).collect();
    let xm = xs.iter().sum::<f64>() / 3.0;
    let ym = log_me.iter().sum::<f64>() / 3.0;
    let slope = xs
        .iter()
        .zip(&log_me)
        .map(|(x, y)| (x - xm) * (y - ym))
        .sum::<f64>()
        / xs.iter().map(|x| (x - xm).powi(2)).sum::<f64>();
    assert!((-0.65..=-0.35).contains(&slope), "slope {slope}");
}

#[test]
fn marginal_error_is_invariant_to_joint_row_shuffles_and_tracks_shifts() {
    let n = 500;
    let a_rows: Vec<Vec<f64>> = (0..n)
        .map(|i| normals(20 + i as u64, 3, 0.0, 1.0))
        .collect();
    let b_rows: Vec<Vec<f64>> = (0..n)
        .map(|i| normals(900 + i as u64, 3, 0.0, 1.0))
        .collect();
    let a = SampleMatrix::from_rows(&a_rows).unwrap();
    let b = SampleMatrix::from_rows(&b_rows).unwrap();
    let base = marginal_error(&a, &b).unwrap();
    let mut rev = a_rows.clone();
    rev.reverse();
    let shuffled = SampleMatrix::from_rows(&rev).unwrap();
    assert!((marginal_error(&shuffled, &b).unwrap() - base).abs() < 1e-12);

    let far: Vec<Vec<f64>> = a_rows
        .iter()
        .map(|r| r.iter().map(|x| x + 100.0).collect())
        .collect();
    let far = SampleMatrix::from_rows(&far).unwrap();
    assert!((marginal_error(&far, &a).unwrap() - 100.0).abs() < 1e-9);
}

#[test]
fn split_r_hat_separates_mixed_from_stuck_chains() {
    let same: Vec<SampleMatrix> = (0..4)
        .map(|c| column(normals(40 + c, 10_000, 0.0, 1.0)))
        .collect();
    for r in split_r_hat(&same).unwrap() {
        assert!((0.99..=1.01).contains(&r), "{r}");
    }
    let apart = [
        column(normals(50, 10_000, 0.0, 1.0)),
        column(normals(51, 10_000, 10.0, 1.0)),
    ];
    assert!(split_r_hat(&apart).unwrap()[0] > 3.0);
}

fn reference_scores(probs: &[f64], labels: &[u8]) -> (f64, f64, f64, f64) {
    let n = probs.len() as f64;
    let mut acc = 0.0;
    let mut nll = 0.0;
    let mut brier = 0.0;
    for (p, y) in probs.iter().zip(labels) {
        let y = *y as f64;
        let pred = if *p > 0.5 { 1.0 } else { 0.0 };
        if pred == y {
            acc += 1.0;
        }
        let q = p.clamp(1e-12, 1.0 - 1e-12);
        nll -= y * q.ln() + (1.0 - y) * (1.0 - q).ln();
        brier += (p - y).powi(2);
    }
    let mut ece = 0.0;
    for b in 0..10 {
        let (lo, hi) = (b as f64 / 10.0, (b + 1) as f64 / 10.0);
        let members: Vec<(f64, bool)> = probs
            .iter()
            .zip(labels)
            .map(|(p, y)| (p.max(1.0 - p), (*p > 0.5) == (*y == 1)))
            .filter(|(c, _)| *c >= lo && (*c < hi || (b == 9 && *c <= hi)))
            .collect();
        if members.is_empty() {
            continue;
        }
        let m = members.len() as f64;
        let conf = members.iter().map(|(c, _)| c).sum::<f64>() / m;
        let hit = members.iter().filter(|(_, h)| *h).count() as f64 / m;
        ece += m / n * (conf - hit).abs();
    }
    (acc / n, nll / n, brier / n, ece)
}

#[test]
fn predictive_metrics_match_reference_implementation() {
    let mut r = rng::stream(60, StreamRole::Auxiliary, 0, 0);
    let probs: Vec<f64> = (0..5000).map(|_| r.random::<f64>()).collect();
    let labels: Vec<u8> = probs
        .iter()
        .map(|p| u8::from(r.random::<f64>() < *p))
        .collect();
    let got = predictive_metrics(&probs, &labels).unwrap();
    let (acc, nll, brier, ece) = reference_scores(&probs, &labels);
    assert!((got.accuracy - acc).abs() < 1e-12);
    assert!((got.nll - nll).abs() < 1e-9);
    assert!((got.brier - brier).abs() < 1e-12);
    assert!((got.ece - ece).abs() < 1e-9, "{} vs {ece}", got.ece);

    let half = predictive_metrics(&[0.5; 8], &[0, 1, 1, 0, 1, 0, 0, 1]).unwrap();
    assert!((half.brier - 0.25).abs() < 1e-15);
    assert!((half.nll - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn empirical_moments_are_consistent() {
    let constant = SampleMatrix::new(5, 1, vec![2.0; 5]).unwrap();
    let m = empirical_moments(&constant).unwrap();
    assert_eq!((m.mean[0], m.var[0]), (2.0, 0.0));

    let pm = empirical_moments(&column(vec![-1.0, 1.0])).unwrap();
    assert_eq!((pm.mean[0], pm.var[0]), (0.0, 2.0));

    let n = 1_000_000;
    let big = empirical_moments(&column(normals(70, n, 3.0, 5f64.sqrt()))).unwrap();
    assert!((big.mean[0] - 3.0).abs() < 3.0 * (5.0 / n as f64).sqrt());
    assert!((big.var[0] - 5.0).abs() < 3.0 * 5.0 * (2.0 / n as f64).sqrt());
}

#[test]
fn product_posterior_is_the_stationary_point_of_the_global_loss() {
    let nodes = vec![
        QuadraticNode::new(vec![0.0, 1.0], 1.0).unwrap(),
        QuadraticNode::new(vec![2.0, -3.0], 3.0).unwrap(),
        QuadraticNode::new(vec![-1.0, 4.0], 0.5).unwrap(),
    ];
    let weights = [0.2, 0.5, 0.3];
    let post = gaussian_product_posterior(&nodes, &weights).unwrap();
    let models: Vec<TargetModel> = nodes.iter().cloned().map(Into::into).collect();
    let global = TargetModel::weighted_sum(&weights, &models).unwrap();
    for g in global.grad(&post.mean).unwrap() {
        assert!(g.abs() < 1e-12, "{g}");
    }
    let lambda: f64 = nodes
        .iter()
        .zip(&weights)
        .map(|(n, w)| w * n.precision())
        .sum();
    for v in &post.var {
        assert!((v - 1.0 / lambda).abs() < 1e-15);
    }

    let pair = [
        QuadraticNode::isotropic(1, 0.0, 1.0).unwrap(),
        QuadraticNode::isotropic(1, 2.0, 1.0).unwrap(),
    ];
    let p = gaussian_product_posterior(&pair, &[0.5, 0.5]).unwrap();
    assert_eq!((p.mean[0], p.var[0]), (1.0, 1.0));
}
