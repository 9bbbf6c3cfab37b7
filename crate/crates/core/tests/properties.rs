mod common;

use common::{binary_dataset, exact_svt, fro, random_dataset, random_params};
use latent_logit::analysis::{average_dpe, direct_pseudo_elasticity, fold_assignment};
use latent_logit::linalg::{
    gaussian_matrix, numerical_rank, randomized_svd, randomized_svt, svd_exact, RngSeed,
};
use latent_logit::model::{
    class_probabilities, group_l1_norm, nll_gradient, objective, Heterogeneity, HeterogeneitySource,
    ModelParams, PenaltyPair,
};
use latent_logit::predict::{knn_heterogeneity, FittedModel};
use latent_logit::prox::{prox_group_l1, prox_nuclear};
use latent_logit::tuning::f1_score;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 40,
        ..ProptestConfig::default()
    }
}

fn blend(a: &ModelParams, b: &ModelParams, t: f64) -> ModelParams {
    ModelParams {
        alpha: &a.alpha * t + &b.alpha * (1.0 - t),
        u: &a.u * t + &b.u * (1.0 - t),
        upsilon: Heterogeneity::Dense(a.upsilon.to_dense() * t + b.upsilon.to_dense() * (1.0 - t)),
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn svt_is_non_expansive(m in 2usize..12, n in 2usize..14, seed in 0u64..10_000, rho in 0.0f64..3.0) {
        let a = gaussian_matrix(m, n, RngSeed(seed));
        let b = gaussian_matrix(m, n, RngSeed(seed).child(5));
        let (sa, _) = randomized_svt(&a, rho, 1, RngSeed(1)).unwrap();
        let (sb, _) = randomized_svt(&b, rho, 1, RngSeed(1)).unwrap();
        prop_assert!(fro(&(&sa - &sb)) <= fro(&(&a - &b)) + 1e-8);
        let (ea, eb) = (exact_svt(&a, rho), exact_svt(&b, rho));
        prop_assert!(fro(&(&ea - &eb)) <= fro(&(&a - &b)) + 1e-10);
    }

    #[test]
    fn svt_rank_counts_singular_values_above_threshold(
        m in 2usize..12, n in 2usize..14, seed in 0u64..10_000, q in 0.0f64..1.0,
    ) {
        let a = gaussian_matrix(m, n, RngSeed(seed));
        let s = svd_exact(&a).unwrap().s;
        let rho = q * s[0];
        let (out, kept) = randomized_svt(&a, rho, 1, RngSeed(2)).unwrap();
        let expected = s.iter().filter(|&&v| v > rho).count();
        prop_assert_eq!(kept.rank(), expected);
        let out_rank = numerical_rank(&svd_exact(&out).unwrap().s);
        prop_assert!(out_rank <= expected);
        prop_assert!(out_rank <= numerical_rank(&s));
    }

    #[test]
    fn randomized_singular_values_are_dominated(seed in 0u64..10_000, k in 1usize..8) {
        let a = gaussian_matrix(40, 60, RngSeed(seed));
        let exact = svd_exact(&a).unwrap().s;
        let approx = randomized_svd(&a, k, RngSeed(seed).child(9)).unwrap().s;
        for (r, e) in approx.iter().zip(exact.iter()) {
            prop_assert!(*r <= *e + 1e-8);
        }
    }

    #[test]
    fn group_l1_prox_is_non_expansive_and_certified(
        p in 1usize..8, classes in 2usize..5, seed in 0u64..10_000, t in 0.0f64..2.0,
    ) {
        let a = gaussian_matrix(p, classes, RngSeed(seed));
        let b = gaussian_matrix(p, classes, RngSeed(seed).child(1));
        let (pa, pb) = (prox_group_l1(&a, t), prox_group_l1(&b, t));
        prop_assert!(fro(&(&pa - &pb)) <= fro(&(&a - &b)) + 1e-12);
        for (out, inp) in pa.rows().into_iter().zip(a.rows()) {
            let on = out.dot(&out).sqrt();
            let inn = inp.dot(&inp).sqrt();
            prop_assert!(on <= inn + 1e-15);
            // the output row is a non-negative multiple of the input row
            let scale = if inn > 0.0 { on / inn } else { 0.0 };
            for (o, i) in out.iter().zip(inp) {
                prop_assert!((o - scale * i).abs() <= 1e-12);
            }
            // u − û + t g = 0 with g = u/‖u‖ when u ≠ 0 and ‖g‖ ≤ 1 otherwise
            let residual: Array1<f64> = if on > 0.0 {
                &out - &inp + &(&out * (t / on))
            } else {
                let g = if t > 0.0 { &inp / t } else { inp.to_owned() };
                prop_assert!(t == 0.0 || g.dot(&g).sqrt() <= 1.0 + 1e-12);
                Array1::zeros(classes)
            };
            prop_assert!(residual.dot(&residual).sqrt() <= 1e-8);
        }
    }

    #[test]
    fn nuclear_prox_is_non_expansive_and_shrinks(seed in 0u64..10_000, t in 0.0f64..3.0) {
        let a = gaussian_matrix(9, 15, RngSeed(seed));
        let b = gaussian_matrix(9, 15, RngSeed(seed).child(1));
        let (pa, fa) = prox_nuclear(&a, t, 2, RngSeed(3)).unwrap();
        let (pb, _) = prox_nuclear(&b, t, 2, RngSeed(3)).unwrap();
        prop_assert!(fro(&(&pa - &pb)) <= fro(&(&a - &b)) + 1e-8);
        let before: f64 = svd_exact(&a).unwrap().s.sum();
        prop_assert!(fa.s.sum() <= before + 1e-10);
    }

    #[test]
    fn probabilities_ignore_a_common_intercept_shift(seed in 0u64..10_000, c in -50.0f64..50.0) {
        let params = random_params(4, 3, 5, 1.0, seed);
        let mut shifted = params.clone();
        shifted.alpha += c;
        let x = gaussian_matrix(1, 4, RngSeed(seed).child(7));
        for n in 0..5 {
            let a = class_probabilities(&params, x.row(0), HeterogeneitySource::Sample(n)).unwrap();
            let b = class_probabilities(&shifted, x.row(0), HeterogeneitySource::Sample(n)).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gradient_residuals_sum_to_zero(seed in 0u64..10_000, classes in 2usize..5) {
        let data = random_dataset(15, 3, classes, seed);
        let g = nll_gradient(&data, &random_params(3, classes, 15, 0.7, seed)).unwrap();
        prop_assert!(g.d_alpha.sum().abs() <= 1e-12);
        for row in g.d_u.rows() {
            prop_assert!(row.sum().abs() <= 1e-12);
        }
    }

    #[test]
    fn objective_is_convex(seed in 0u64..10_000, t in 0.01f64..0.99, l1 in 0.0f64..1.0, l2 in 0.0f64..1.0) {
        let data = random_dataset(12, 3, 3, seed);
        let a = random_params(3, 3, 12, 1.0, seed.wrapping_add(1));
        let b = random_params(3, 3, 12, 1.0, seed.wrapping_add(2));
        let pen = PenaltyPair::new(l1, l2).unwrap();
        let mid = objective(&data, &blend(&a, &b, t), pen).unwrap();
        let chord = t * objective(&data, &a, pen).unwrap() + (1.0 - t) * objective(&data, &b, pen).unwrap();
        prop_assert!(mid <= chord + 1e-10);
    }

    #[test]
    fn group_norm_vanishes_only_at_zero(p in 1usize..6, seed in 0u64..10_000) {
        let u = gaussian_matrix(p, 3, RngSeed(seed));
        prop_assert!(group_l1_norm(&u) > 0.0);
        prop_assert_eq!(group_l1_norm(&Array2::zeros((p, 3))), 0.0);
    }

    #[test]
    fn f1_is_permutation_invariant(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..40),
        seed in any::<u64>(),
    ) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut RngSeed(seed).rng());
        let pp: Vec<usize> = order.iter().map(|&i| pred[i]).collect();
        let tp: Vec<usize> = order.iter().map(|&i| truth[i]).collect();
        let f = f1_score(&pred, &truth);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(f, f1_score(&pp, &tp));
    }

    #[test]
    fn knn_is_scale_invariant_and_matches_a_full_scan(
        seed in 0u64..10_000, k in 1usize..12, c in 0.01f64..100.0,
    ) {
        let n = 25;
        let data = random_dataset(n, 4, 3, seed);
        let model = FittedModel::from_fit(&data, random_params(4, 3, n, 1.0, seed), k).unwrap();
        let q = gaussian_matrix(1, 4, RngSeed(seed).child(99)).row(0).to_owned();
        let est = knn_heterogeneity(q.view(), &model).unwrap();
        let scaled = knn_heterogeneity((&q * c).view(), &model).unwrap();
        prop_assert_eq!(&est.neighbors, &scaled.neighbors);
        for (a, b) in est.heterogeneity.iter().zip(&scaled.heterogeneity) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        let qn = q.dot(&q).sqrt();
        let mut scan: Vec<(f64, usize)> = data
            .features()
            .rows()
            .into_iter()
            .enumerate()
            .map(|(j, r)| (1.0 - q.dot(&r) / (qn * r.dot(&r).sqrt()), j))
            .collect();
        scan.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let expected: Vec<usize> = scan.iter().take(k).map(|&(_, j)| j).collect();
        prop_assert_eq!(&est.neighbors, &expected);

        // weighted average of columns lies in the column space of Υ
        let ups = model.params().upsilon.to_dense();
        let f = svd_exact(&ups).unwrap();
        let r = numerical_rank(&f.s);
        let basis = f.u.slice(ndarray::s![.., ..r]).to_owned();
        let projected = basis.dot(&basis.t().dot(&est.heterogeneity));
        let resid = &est.heterogeneity - &projected;
        prop_assert!(resid.dot(&resid).sqrt() <= 1e-10 * (1.0 + est.heterogeneity.dot(&est.heterogeneity).sqrt()));
    }

    #[test]
    fn elasticity_is_the_probability_ratio_minus_one(
        seed in 0u64..10_000, feature in 0usize..4, class in 0usize..3,
    ) {
        let data = binary_dataset(6, 4, 3, seed);
        let params = random_params(4, 3, 6, 1.0, seed);
        for n in 0..6 {
            let x = data.features().row(n);
            let src = HeterogeneitySource::Sample(n);
            let e = direct_pseudo_elasticity(&params, x, src, feature, class).unwrap();
            let mut z = x.to_owned();
            z[feature] = 0.0;
            let p0 = class_probabilities(&params, z.view(), src).unwrap()[class];
            z[feature] = 1.0;
            let p1 = class_probabilities(&params, z.view(), src).unwrap()[class];
            prop_assert!((e - (p1 / p0 - 1.0)).abs() <= 1e-14 * (1.0 + e.abs()));
        }
    }

    #[test]
    fn average_elasticity_ignores_row_order(seed in 0u64..10_000, feature in 0usize..3) {
        let n = 10;
        let data = binary_dataset(n, 3, 3, seed);
        let params = random_params(3, 3, n, 1.0, seed);
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut RngSeed(seed).rng());
        let permuted = data.subset(&order).unwrap();
        let ups = params.upsilon.to_dense();
        let mut cols = Array2::zeros(ups.dim());
        for (to, &from) in order.iter().enumerate() {
            cols.column_mut(to).assign(&ups.column(from));
        }
        let permuted_params = ModelParams { upsilon: Heterogeneity::Dense(cols), ..params.clone() };
        for class in 0..3 {
            let a = average_dpe(&data, &params, feature, class).unwrap();
            let b = average_dpe(&permuted, &permuted_params, feature, class).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn folds_partition_every_index(n in 2usize..200, folds in 2usize..10, seed in any::<u64>()) {
        prop_assume!(folds <= n);
        let parts = fold_assignment(n, folds, seed);
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(parts, fold_assignment(n, folds, seed));
    }
}
