//! Library losses against straightforward loop implementations.

use lleda_core::losses::{
    covariance, invariance, median_bandwidths, mmd_value, variance, VICREG_EPS,
};
use lleda_core::{mmd_median, vicreg, Rng, Tape, Tensor, VicRegWeights};

const INSTANCES: u64 = 50;

fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect()
}

fn naive_kernel(a: &[f64], b: &[f64], bandwidths: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    bandwidths
        .iter()
        .map(|s| (-d2 / (2.0 * s * s)).exp())
        .sum::<f64>()
        / bandwidths.len() as f64
}

/// Biased estimator with self-pairs, written term by term.
fn naive_mmd(x: &[Vec<f64>], y: &[Vec<f64>], bw: &[f64]) -> f64 {
    let (n, m) = (x.len() as f64, y.len() as f64);
    let mut xx = 0.0;
    for a in x {
        for b in x {
            xx += naive_kernel(a, b, bw);
        }
    }
    let mut xy = 0.0;
    for a in x {
        for b in y {
            xy += naive_kernel(a, b, bw);
        }
    }
    let mut yy = 0.0;
    for a in y {
        for b in y {
            yy += naive_kernel(a, b, bw);
        }
    }
    xx / (n * n) - 2.0 * xy / (n * m) + yy / (m * m)
}

fn random_pair(rng: &mut Rng) -> (Tensor<f64>, Tensor<f64>) {
    let d = 1 + rng.below(16);
    let (n, m) = (1 + rng.below(64), 1 + rng.below(64));
    let x = rng.normal_tensor(&[n, d], 1.0);
    let shift = rng.normal();
    let spread = 1.0 + rng.uniform();
    let y = rng.normal_tensor::<f64>(&[m, d], spread).map(|v| v + shift);
    (x, y)
}

#[test]
fn mmd_matches_double_loop() {
    let mut rng = Rng::new(11);
    for i in 0..INSTANCES {
        let (x, y) = random_pair(&mut rng);
        let bw = median_bandwidths(&x, &y);
        let lib = mmd_value(&x, &y, &bw).unwrap();
        let oracle = naive_mmd(&rows(&x), &rows(&y), &bw);
        assert!(
            (lib - oracle).abs() <= 1e-10,
            "instance {i}: {lib} vs {oracle}"
        );
    }
}

#[test]
fn mmd_of_a_batch_with_itself_vanishes() {
    let mut rng = Rng::new(12);
    for _ in 0..INSTANCES {
        let (x, _) = random_pair(&mut rng);
        let bw = median_bandwidths(&x, &x);
        assert!(mmd_value(&x, &x, &bw).unwrap().abs() <= 1e-12);
    }
}

#[test]
fn mmd_is_symmetric() {
    let mut rng = Rng::new(13);
    for i in 0..INSTANCES {
        let (x, y) = random_pair(&mut rng);
        let bw = median_bandwidths(&x, &y);
        assert_eq!(bw, median_bandwidths(&y, &x));
        let xy = mmd_value(&x, &y, &bw).unwrap();
        let yx = mmd_value(&y, &x, &bw).unwrap();
        assert_eq!(xy.to_bits(), yx.to_bits(), "instance {i}: {xy} vs {yx}");
    }
}

#[test]
fn mmd_ignores_row_order() {
    let mut rng = Rng::new(14);
    for i in 0..INSTANCES {
        let (x, y) = random_pair(&mut rng);
        let bw = median_bandwidths(&x, &y);
        let px = x.select_rows(&rng.permutation(x.shape()[0])).unwrap();
        let py = y.select_rows(&rng.permutation(y.shape()[0])).unwrap();
        assert_eq!(median_bandwidths(&px, &py), bw);
        let a = mmd_value(&x, &y, &bw).unwrap();
        let b = mmd_value(&px, &py, &bw).unwrap();
        assert_eq!(a.to_bits(), b.to_bits(), "instance {i}: {a} vs {b}");
    }
}

#[test]
fn median_heuristic_matches_mmd_median() {
    let mut rng = Rng::new(15);
    let (x, y) = random_pair(&mut rng);
    let tape = Tape::new();
    let v = mmd_median(tape.constant(x.clone()), tape.constant(y.clone()))
        .unwrap()
        .item()
        .unwrap();
    let oracle = naive_mmd(&rows(&x), &rows(&y), &median_bandwidths(&x, &y));
    assert!((v - oracle).abs() <= 1e-10);
}

fn naive_invariance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            s += (x - y) * (x - y);
        }
    }
    s / a.len() as f64
}

fn column_means(z: &[Vec<f64>]) -> Vec<f64> {
    let d = z[0].len();
    (0..d)
        .map(|j| z.iter().map(|r| r[j]).sum::<f64>() / z.len() as f64)
        .collect()
}

fn naive_variance(z: &[Vec<f64>], gamma: f64) -> f64 {
    let (n, d) = (z.len(), z[0].len());
    let mean = column_means(z);
    let mut total = 0.0;
    for j in 0..d {
        let var = z.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1) as f64;
        total += (gamma - (var + VICREG_EPS).sqrt()).max(0.0);
    }
    total / d as f64
}

fn naive_covariance(z: &[Vec<f64>]) -> f64 {
    let (n, d) = (z.len(), z[0].len());
    let mean = column_means(z);
    let mut total = 0.0;
    for j in 0..d {
        for k in 0..d {
            if j == k {
                continue;
            }
            let c = z
                .iter()
                .map(|r| (r[j] - mean[j]) * (r[k] - mean[k]))
                .sum::<f64>()
                / (n - 1) as f64;
            total += c * c;
        }
    }
    total / d as f64
}

fn random_embeddings(rng: &mut Rng) -> (Tensor<f64>, Tensor<f64>) {
    let (n, d) = (2 + rng.below(63), 1 + rng.below(16));
    let scale = 0.2 + 2.0 * rng.uniform();
    let a = rng.normal_tensor::<f64>(&[n, d], scale);
    let noise = rng.normal_tensor::<f64>(&[n, d], 0.3);
    let b = a.zip_map(&noise, "add", |x, e| x + e).unwrap();
    (a, b)
}

#[test]
fn vicreg_terms_match_loops() {
    let mut rng = Rng::new(21);
    let gamma = 1.0;
    for i in 0..INSTANCES {
        let (a, b) = random_embeddings(&mut rng);
        let tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let (ra, rb) = (rows(&a), rows(&b));
        let pairs = [
            (
                "invariance",
                invariance(va, vb).unwrap(),
                naive_invariance(&ra, &rb),
            ),
            (
                "variance",
                variance(va, gamma).unwrap(),
                naive_variance(&ra, gamma),
            ),
            ("covariance", covariance(va).unwrap(), naive_covariance(&ra)),
        ];
        for (name, lib, oracle) in pairs {
            let lib = lib.item().unwrap();
            assert!(
                (lib - oracle).abs() <= 1e-10,
                "{name} instance {i}: {lib} vs {oracle}"
            );
        }
        let w = VicRegWeights::default();
        let full = vicreg(va, vb, &w).unwrap().item().unwrap();
        let oracle = w.lambda * naive_invariance(&ra, &rb)
            + w.mu * (naive_variance(&ra, gamma) + naive_variance(&rb, gamma))
            + w.nu * (naive_covariance(&ra) + naive_covariance(&rb));
        assert!(
            (full - oracle).abs() <= 1e-10 * oracle.abs().max(1.0),
            "vicreg instance {i}"
        );
    }
}

#[test]
fn vicreg_is_symmetric_in_its_views() {
    let mut rng = Rng::new(22);
    let w = VicRegWeights::default();
    for _ in 0..INSTANCES {
        let (a, b) = random_embeddings(&mut rng);
        let tape = Tape::new();
        let (va, vb) = (tape.constant(a), tape.constant(b));
        let ab = vicreg(va, vb, &w).unwrap().item().unwrap();
        let ba = vicreg(vb, va, &w).unwrap().item().unwrap();
        assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0));
    }
}

#[test]
fn zero_loss_construction() {
    // centered, mutually orthogonal columns with std well above gamma
    let a = 2.0;
    let z = Tensor::<f64>::from_rows(&[&[a, a], &[a, -a], &[-a, a], &[-a, -a]]).unwrap();
    let tape = Tape::new();
    let v = tape.constant(z);
    let loss = vicreg(v, v, &VicRegWeights::default())
        .unwrap()
        .item()
        .unwrap();
    assert!(loss.abs() < 1e-9, "{loss}");
}

#[test]
fn constant_rows_hit_the_variance_hinge() {
    let row: &[f64] = &[0.5, -1.0, 3.0];
    let z = Tensor::<f64>::from_rows(&[row; 5]).unwrap();
    let tape = Tape::new();
    for gamma in [0.5, 1.0, 2.0] {
        let v = variance(tape.constant(z.clone()), gamma)
            .unwrap()
            .item()
            .unwrap();
        assert!((v - (gamma - VICREG_EPS.sqrt())).abs() < 1e-15);
    }
}
