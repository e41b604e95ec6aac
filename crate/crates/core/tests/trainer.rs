use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lre_core::association::pmi;
use lre_core::eval::pearson;
use lre_core::model::{init_model, psi, KernelSpec};
use lre_core::objective::Objective;
use lre_core::svd::jacobi_svd;
use lre_core::synthetic::{planted_stats, PlantedConfig};
use lre_core::trainer::{apply_pair_update, total_loss, train, PairPolicy};
use lre_core::{CoocStats, Family, ObjectiveSpec, TrainConfig};

fn dense_stats(size: usize, seed: u64) -> CoocStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts: Vec<f64> = (0..size * size).map(|_| rng.gen_range(1.0..200.0f64).round()).collect();
    CoocStats::from_dense(size, &counts).unwrap()
}

#[test]
fn realizable_planted_stats_are_fit_almost_exactly() {
    let planted = planted_stats(&PlantedConfig {
        size: 60,
        rank: 3,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let mut cfg = TrainConfig::for_family(Family::SvdMse);
    cfg.dim = 8;
    cfg.epochs = 300;
    cfg.convergence_tol = 0.0;
    let (_, report) = train::<f64>(&planted.stats, &cfg, None).unwrap();
    assert!(
        report.final_loss() < 1e-4 * report.initial_loss,
        "{} vs {}",
        report.final_loss(),
        report.initial_loss
    );
}

#[test]
fn zero_epochs_returns_the_initial_model() {
    let stats = dense_stats(6, 1);
    for family in Family::ALL {
        let mut cfg = TrainConfig::for_family(family);
        cfg.epochs = 0;
        cfg.dim = 4;
        let words: Vec<String> = ["alpha", "beta", "gamma", "delta", "eps", "zeta"].map(String::from).to_vec();
        let words = matches!(cfg.kernel, KernelSpec::SubwordDot { .. }).then_some(words);
        let (model, report) = train::<f64>(&stats, &cfg, words.as_deref()).unwrap();
        let init = init_model::<f64>(6, 4, cfg.kernel, cfg.seed, words.as_deref()).unwrap();
        assert_eq!(model, init, "{}", family);
        assert!(report.losses.is_empty());
    }
}

#[test]
fn training_is_deterministic() {
    let stats = dense_stats(12, 2);
    for family in Family::ALL {
        let mut cfg = TrainConfig::for_family(family);
        cfg.epochs = 4;
        cfg.dim = 5;
        cfg.seed = 17;
        if family == Family::FastTextSgns {
            cfg.kernel = KernelSpec::Dot;
        }
        let (a, ra) = train::<f64>(&stats, &cfg, None).unwrap();
        let (b, rb) = train::<f64>(&stats, &cfg, None).unwrap();
        assert_eq!(a, b, "{}", family);
        assert_eq!(ra.losses, rb.losses);
    }
}

#[test]
fn strict_descent_never_increases_the_loss() {
    let stats = dense_stats(10, 3);
    for family in Family::ALL.into_iter().filter(|f| f.is_two_sided()) {
        let mut cfg = TrainConfig::for_family(family);
        cfg.epochs = 40;
        cfg.dim = 4;
        cfg.strict_descent = true;
        cfg.max_restarts = 30;
        cfg.convergence_tol = 0.0;
        if family == Family::FastTextSgns {
            cfg.kernel = KernelSpec::Dot;
        }
        let (_, report) = train::<f64>(&stats, &cfg, None).unwrap();
        let mut prev = report.initial_loss;
        for &l in &report.losses {
            assert!(l <= prev, "{}: {} after {}", family, l, prev);
            prev = l;
        }
    }
}

#[test]
fn svd_mse_approaches_the_truncated_svd_optimum() {
    let size = 12;
    let rank = 3;
    let stats = dense_stats(size, 5);
    let m: Vec<f64> = (0..size * size).map(|k| pmi(&stats, k / size, k % size).unwrap()).collect();
    let (_, s, _) = jacobi_svd(&m, size, size);
    let optimum: f64 = s[rank..].iter().map(|x| x * x).sum();

    let mut cfg = TrainConfig::for_family(Family::SvdMse);
    cfg.dim = rank;
    cfg.epochs = 2000;
    cfg.eta = 0.05;
    cfg.eta_final = 0.001;
    cfg.convergence_tol = 0.0;
    let (model, _) = train::<f64>(&stats, &cfg, None).unwrap();
    let objective = Objective::new(cfg.objective, &stats).unwrap();
    let loss = total_loss(&model, &objective, PairPolicy::NonzeroOnly);
    assert!(loss >= optimum * (1.0 - 1e-9), "{} below optimum {}", loss, optimum);
    assert!(loss <= 1.05 * optimum, "{} vs optimum {}", loss, optimum);
}

#[test]
fn vector_and_covector_updates_share_one_scalar() {
    let stats = dense_stats(5, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for family in Family::ALL {
        let objective = Objective::new(ObjectiveSpec::new(family), &stats).unwrap();
        let mut model = init_model::<f64>(5, 4, KernelSpec::Dot, 1, None).unwrap();
        for _ in 0..50 {
            let (i, j) = (rng.gen_range(0..5), rng.gen_range(0..5));
            let w = model.covector(i).to_vec();
            let v = model.term_vector(j);
            let eta = 0.01;
            let cg = apply_pair_update(&mut model, &objective, eta, i, j).unwrap();
            let w_new = model.covector(i).to_vec();
            let v_new = model.term_vector(j);
            // recover g from each side: Δw = -η g v, Δv = -η g w
            let k = (0..4).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap();
            let g_cov = if i == j { continue } else { (w[k] - w_new[k]) / (eta * v[k]) };
            let k = (0..4).max_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs())).unwrap();
            let g_vec = (v[k] - v_new[k]) / (eta * w[k]);
            let tol = 1e-8 * cg.value.abs().max(1.0);
            assert!((g_cov - cg.value).abs() < tol, "{}: {} vs {}", family, g_cov, cg.value);
            assert!((g_vec - cg.value).abs() < tol, "{}: {} vs {}", family, g_vec, cg.value);
        }
    }
}

#[test]
fn untrained_models_do_not_correlate_with_pmi() {
    // each word appears in one pair only, so the 200 ψ values are independent
    let size = 200;
    let stats = dense_stats(size, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut terms: Vec<usize> = (0..size).collect();
    for k in (1..size).rev() {
        terms.swap(k, rng.gen_range(0..=k));
    }
    let pairs: Vec<(usize, usize)> = (0..size).map(|i| (i, terms[i])).collect();
    let target: Vec<f64> = pairs.iter().map(|&(i, j)| pmi(&stats, i, j).unwrap()).collect();
    for seed in 0..100 {
        let model = init_model::<f64>(size, 8, KernelSpec::Dot, seed, None).unwrap();
        let predicted: Vec<f64> = pairs.iter().map(|&(i, j)| psi(&model, i, j).unwrap()).collect();
        let r = pearson(&predicted, &target).unwrap();
        assert!(r.abs() < 0.3, "seed {}: r = {}", seed, r);
    }
}

#[test]
fn f32_training_tracks_f64() {
    let stats = dense_stats(8, 10);
    let mut cfg = TrainConfig::for_family(Family::Glove);
    cfg.epochs = 20;
    cfg.dim = 4;
    let (_, r64) = train::<f64>(&stats, &cfg, None).unwrap();
    let (_, r32) = train::<f32>(&stats, &cfg, None).unwrap();
    let rel = (r64.final_loss() - r32.final_loss()).abs() / r64.final_loss();
    assert!(rel < 1e-3, "{} vs {}", r64.final_loss(), r32.final_loss());
}
