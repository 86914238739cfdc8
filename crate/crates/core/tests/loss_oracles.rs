//! Losses against scalar-loop references and gradients against central
//! finite differences.

use kptk_core::losses::{
    center_loss, center_loss_grad, depth_loss, depth_loss_grad, heatmap_loss, heatmap_loss_grad, total_loss, LossWeights, StageLosses, BCE_EPS,
};
use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAPE: (usize, usize, usize) = (3, 6, 5);
const H: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn random3(rng: &mut impl Rng, lo: f64, hi: f64) -> Array3<f64> {
    Array3::from_shape_simple_fn(SHAPE, || rng.random_range(lo..hi))
}

fn random_mask(rng: &mut impl Rng) -> Array3<bool> {
    Array3::from_shape_simple_fn(SHAPE, || rng.random_bool(0.6))
}

fn bce_oracle(p: &[f64], y: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..p.len() {
        let q = p[i].clamp(BCE_EPS, 1.0 - BCE_EPS);
        total += -(y[i] * q.ln()) - (1.0 - y[i]) * (1.0 - q).ln();
    }
    total
}

fn huber_oracle(d: f64) -> f64 {
    if d > -1.0 && d < 1.0 {
        d * d / 2.0
    } else if d >= 1.0 {
        d - 0.5
    } else {
        -d - 0.5
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn losses_match_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for _ in 0..50 {
        let mut p = random3(&mut rng, 0.0, 1.0);
        // Exercise the clamp at both ends.
        p[[0, 0, 0]] = 0.0;
        p[[0, 0, 1]] = 1.0;
        let y = random3(&mut rng, 0.0, 1.0);
        let flat = |a: &Array3<f64>| a.iter().copied().collect::<Vec<_>>();
        assert!(close(heatmap_loss(&p, &y).unwrap(), bce_oracle(&flat(&p), &flat(&y)), 1e-9));

        let mask = random_mask(&mut rng);
        let c = Array4::from_shape_simple_fn((SHAPE.0, SHAPE.1, SHAPE.2, 2), || rng.random_range(-4.0..4.0));
        let c_hat = Array4::from_shape_simple_fn((SHAPE.0, SHAPE.1, SHAPE.2, 2), || rng.random_range(-4.0..4.0));
        let z = random3(&mut rng, 0.4, 1.0);
        let z_hat = random3(&mut rng, 0.4, 1.0);
        let (mut lc, mut ld) = (0.0, 0.0);
        for ch in 0..SHAPE.0 {
            for i in 0..SHAPE.1 {
                for j in 0..SHAPE.2 {
                    if mask[[ch, i, j]] {
                        lc += huber_oracle(c_hat[[ch, i, j, 0]] - c[[ch, i, j, 0]]) + huber_oracle(c_hat[[ch, i, j, 1]] - c[[ch, i, j, 1]]);
                        ld += (z[[ch, i, j]] - z_hat[[ch, i, j]]).abs();
                    }
                }
            }
        }
        assert!(close(center_loss(&c_hat, &c, &mask).unwrap(), lc, 1e-9));
        assert!(close(depth_loss(&z_hat, &z, &mask).unwrap(), ld, 1e-9));

        let s1 = StageLosses { heatmap: rng.random(), center: rng.random(), depth: rng.random() };
        let s2 = StageLosses { heatmap: rng.random(), center: rng.random(), depth: rng.random() };
        let w = LossWeights::new(rng.random(), rng.random(), rng.random()).unwrap();
        let expected = w.lambda_h * s1.heatmap + w.lambda_c * s1.center + w.lambda_d * s1.depth + w.lambda_h * s2.heatmap + w.lambda_c * s2.center + w.lambda_d * s2.depth;
        assert!(close(total_loss(&s1, &s2, &w), expected, 1e-9));
    }
}

#[test]
fn heatmap_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let p = random3(&mut rng, 0.05, 0.95);
    let y = random3(&mut rng, 0.0, 1.0);
    let g = heatmap_loss_grad(&p, &y).unwrap();
    for (idx, &analytic) in g.indexed_iter() {
        let (mut plus, mut minus) = (p.clone(), p.clone());
        plus[idx] += H;
        minus[idx] -= H;
        let fd = (heatmap_loss(&plus, &y).unwrap() - heatmap_loss(&minus, &y).unwrap()) / (2.0 * H);
        assert!((fd - analytic).abs() < FD_TOL, "{idx:?}: fd {fd} vs {analytic}");
    }
}

#[test]
fn center_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mask = random_mask(&mut rng);
    let c = Array4::from_shape_simple_fn((SHAPE.0, SHAPE.1, SHAPE.2, 2), || rng.random_range(-3.0..3.0));
    // Differences kept away from the kink at |d| = 1.
    let c_hat = c.mapv(|v| {
        let d: f64 = rng.random_range(0.05..2.5);
        let d = if (d - 1.0).abs() < 0.05 { d + 0.1 } else { d };
        if rng.random_bool(0.5) { v + d } else { v - d }
    });
    let g = center_loss_grad(&c_hat, &c, &mask).unwrap();
    for (idx, &analytic) in g.indexed_iter() {
        let (mut plus, mut minus) = (c_hat.clone(), c_hat.clone());
        plus[idx] += H;
        minus[idx] -= H;
        let fd = (center_loss(&plus, &c, &mask).unwrap() - center_loss(&minus, &c, &mask).unwrap()) / (2.0 * H);
        assert!((fd - analytic).abs() < FD_TOL, "{idx:?}: fd {fd} vs {analytic}");
    }
}

#[test]
fn depth_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mask = random_mask(&mut rng);
    let z = random3(&mut rng, 0.4, 1.0);
    let z_hat = z.mapv(|v| if rng.random_bool(0.5) { v + rng.random_range(0.01..0.2) } else { v - rng.random_range(0.01..0.2) });
    let g = depth_loss_grad(&z_hat, &z, &mask).unwrap();
    for (idx, &analytic) in g.indexed_iter() {
        let (mut plus, mut minus) = (z_hat.clone(), z_hat.clone());
        plus[idx] += H;
        minus[idx] -= H;
        let fd = (depth_loss(&plus, &z, &mask).unwrap() - depth_loss(&minus, &z, &mask).unwrap()) / (2.0 * H);
        assert!((fd - analytic).abs() < FD_TOL, "{idx:?}: fd {fd} vs {analytic}");
    }
}

#[test]
fn weighted_total_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let w = LossWeights::new(0.7, 0.1, 1.3).unwrap();
    let p1 = random3(&mut rng, 0.05, 0.95);
    let p2 = random3(&mut rng, 0.05, 0.95);
    let y = random3(&mut rng, 0.0, 1.0);
    let total = |p1: &Array3<f64>| {
        let s1 = StageLosses { heatmap: heatmap_loss(p1, &y).unwrap(), ..Default::default() };
        let s2 = StageLosses { heatmap: heatmap_loss(&p2, &y).unwrap(), ..Default::default() };
        total_loss(&s1, &s2, &w)
    };
    let g = heatmap_loss_grad(&p1, &y).unwrap();
    for (idx, &analytic) in g.indexed_iter() {
        let (mut plus, mut minus) = (p1.clone(), p1.clone());
        plus[idx] += H;
        minus[idx] -= H;
        let fd = (total(&plus) - total(&minus)) / (2.0 * H);
        assert!((fd - w.lambda_h * analytic).abs() < FD_TOL);
    }
}
