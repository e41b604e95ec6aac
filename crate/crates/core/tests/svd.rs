use lre_core::svd::{frobenius_error, svd_to_model, truncated_svd, DenseAssocMatrix, SigmaSplit};

#[test]
fn symmetric_matrix_matches_its_eigendecomposition() {
    // eigenvalues 4, 2, 1 for eigenvectors (1,1,0)/√2, (1,-1,0)/√2, (0,0,1)
    let a = vec![3.0, 1.0, 0.0, 1.0, 3.0, 0.0, 0.0, 0.0, 1.0];
    let svd = truncated_svd(&DenseAssocMatrix::from_rows(3, 3, a.clone()).unwrap(), 3, 0).unwrap();
    for (s, e) in svd.s.iter().zip([4.0f64, 2.0, 1.0]) {
        assert!((s - e).abs() < 1e-12, "{:?}", svd.s);
    }
    let h = 0.5f64.sqrt();
    let u0 = [svd.u[0], svd.u[3], svd.u[6]];
    assert!((u0[0] - h).abs() < 1e-12 && (u0[1] - h).abs() < 1e-12 && u0[2].abs() < 1e-12);
    assert!(frobenius_error(&svd.reconstruct(), &a) < 1e-12);
}

#[test]
fn rank_one_matrix_is_recovered_at_rank_one() {
    let x = [1.0, -2.0, 0.5, 3.0, 1.5];
    let y = [2.0, 0.0, -1.0, 4.0];
    let a: Vec<f64> = x.iter().flat_map(|xi| y.iter().map(move |yj| xi * yj)).collect();
    let m = DenseAssocMatrix::from_rows(5, 4, a.clone()).unwrap();
    let svd = truncated_svd(&m, 1, 0).unwrap();
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((svd.s[0] - nx * ny).abs() < 1e-10);
    assert!(frobenius_error(&svd.reconstruct(), &a) < 1e-10);

    let model = svd_to_model(&svd, SigmaSplit::Vectors).unwrap();
    for i in 0..5 {
        for j in 0..4 {
            assert!((model.bilinear(i, j).unwrap() - x[i] * y[j]).abs() < 1e-10);
        }
    }
}

#[test]
fn randomized_path_matches_exact_on_low_rank_input() {
    // 120 × 100 of exact rank 5 takes the randomized path at rank 5
    let (m, n, r) = (120, 100, 5);
    let f = |i: usize, k: usize| ((i * 7 + k * 13) % 17) as f64 / 17.0 - 0.5;
    let g = |j: usize, k: usize| ((j * 5 + k * 11) % 19) as f64 / 19.0 - 0.5;
    let a: Vec<f64> = (0..m * n)
        .map(|idx| (0..r).map(|k| f(idx / n, k) * g(idx % n, k)).sum())
        .collect();
    let svd = truncated_svd(&DenseAssocMatrix::from_rows(m, n, a.clone()).unwrap(), r, 3).unwrap();
    let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(frobenius_error(&svd.reconstruct(), &a) < 1e-9 * norm);
}
