//! Cross-checks the cyclic Jacobi eigensolver against an independently
//! written classical Jacobi (largest off-diagonal pivot) oracle.

use latentmorph_core::embed::jacobi_eigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Classical Jacobi: repeatedly zero the largest |a_pq|. Deliberately a
/// different pivot strategy and rotation bookkeeping than the library.
fn oracle_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    for _ in 0..50_000 {
        let (mut p, mut q, mut best) = (0, 1, 0.0f64);
        for i in 0..n {
            for j in (i + 1)..n {
                if m[i * n + j].abs() > best {
                    best = m[i * n + j].abs();
                    p = i;
                    q = j;
                }
            }
        }
        if best < 1e-13 {
            break;
        }
        let phi = 0.5 * (2.0 * m[p * n + q]).atan2(m[p * n + p] - m[q * n + q]);
        let (s, c) = phi.sin_cos();
        let mut next = m.clone();
        for i in 0..n {
            next[i * n + p] = c * m[i * n + p] + s * m[i * n + q];
            next[i * n + q] = -s * m[i * n + p] + c * m[i * n + q];
        }
        let row = next.clone();
        for j in 0..n {
            next[p * n + j] = c * row[p * n + j] + s * row[q * n + j];
            next[q * n + j] = -s * row[p * n + j] + c * row[q * n + j];
        }
        m = next;
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eig
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // A = B^T B is symmetric positive semidefinite.
    let b: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (0..n).map(|k| b[k * n + i] * b[k * n + j]).sum();
        }
    }
    a
}

#[test]
fn eigenvalues_match_oracle_on_random_psd() {
    let n = 50;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let a = random_psd(&mut rng, n);
        let (mut vals, _) = jacobi_eigen(&a, n).unwrap();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let oracle = oracle_eigenvalues(&a, n);
        let scale: f64 = oracle.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
        for (i, (&got, &want)) in vals.iter().zip(&oracle).enumerate() {
            assert!(
                (got - want).abs() <= 1e-8 * scale,
                "seed {seed} eigenvalue {i}: {got} vs oracle {want}"
            );
        }
    }
}

#[test]
fn eigenpairs_satisfy_the_definition() {
    let n = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let a = random_psd(&mut rng, n);
    let (vals, vecs) = jacobi_eigen(&a, n).unwrap();
    let scale: f64 = vals.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    for j in 0..n {
        // residual ||A v - lambda v||_inf per eigenpair (vectors are columns).
        let mut worst = 0.0f64;
        for i in 0..n {
            let av: f64 = (0..n).map(|k| a[i * n + k] * vecs[k * n + j]).sum();
            worst = worst.max((av - vals[j] * vecs[i * n + j]).abs());
        }
        assert!(worst <= 1e-9 * scale, "eigenpair {j}: residual {worst}");
        // columns are unit length
        let norm: f64 = (0..n).map(|i| vecs[i * n + j] * vecs[i * n + j]).sum();
        assert!((norm - 1.0).abs() <= 1e-10, "eigenvector {j} norm {norm}");
    }
}
