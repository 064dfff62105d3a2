use proptest::prelude::*;
use taugru::numerics::{inf_norm, operator_norm, Matrix};
use taugru::rng::SplitMix64;

/// Largest singular value by one-sided Jacobi rotations on the columns.
fn jacobi_sigma_max(m: &Matrix) -> f64 {
    let (rows, cols) = m.shape();
    let mut a: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| m.get(r, c)).collect()).collect();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                let beta: f64 = a[q].iter().map(|x| x * x).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..rows {
                    let (x, y) = (a[p][k], a[q][k]);
                    a[p][k] = c * x - s * y;
                    a[q][k] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    a.iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut SplitMix64) -> Matrix {
    Matrix::from_row_major(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

#[test]
fn operator_norm_matches_jacobi_svd() {
    let mut rng = SplitMix64::new(2024);
    for _ in 0..100 {
        let rows = 1 + rng.below(16) as usize;
        let cols = 1 + rng.below(16) as usize;
        let m = random_matrix(rows, cols, &mut rng);
        let oracle = jacobi_sigma_max(&m);
        let power = operator_norm(&m).unwrap();
        assert!(
            (power - oracle).abs() <= 1e-8 * oracle.max(1.0),
            "{rows}x{cols}: power {power} vs jacobi {oracle}"
        );
    }
}

#[test]
fn jacobi_oracle_on_known_matrices() {
    let diag = Matrix::diag(&[3.0, -7.0, 2.0]);
    assert!((jacobi_sigma_max(&diag) - 7.0).abs() < 1e-14);
    // [[1, 1], [0, 1]] has σ_max = golden ratio.
    let shear = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
    assert!((jacobi_sigma_max(&shear) - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-14);
}

fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Matrix::from_row_major(rows, cols, v).unwrap())
}

fn square_pair() -> impl Strategy<Value = (Matrix, Matrix)> {
    (1usize..7).prop_flat_map(|n| (matrix_strategy(n, n), matrix_strategy(n, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn operator_norm_is_submultiplicative((a, b) in square_pair()) {
        let ab = a.matmul(&b).unwrap();
        let lhs = operator_norm(&ab).unwrap();
        let rhs = operator_norm(&a).unwrap() * operator_norm(&b).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn inf_norm_is_submultiplicative((a, b) in square_pair()) {
        let ab = a.matmul(&b).unwrap();
        prop_assert!(inf_norm(&ab) <= inf_norm(&a) * inf_norm(&b) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn operator_norm_bounds((a, _) in square_pair()) {
        // max |a_ij| <= ||A||_2 <= sqrt(n) ||A||_inf.
        let n = a.rows() as f64;
        let s = operator_norm(&a).unwrap();
        let max_entry = a.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(max_entry <= s * (1.0 + 1e-9) + 1e-12);
        prop_assert!(s <= n.sqrt() * inf_norm(&a) * (1.0 + 1e-9) + 1e-12);
    }
}
