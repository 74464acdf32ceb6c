use ndarray::{Array1, Array2};
use proptest::prelude::*;
use svb_core::control::{solve_control, ControlProblem};
use svb_core::info::{entropy_decomposition, relative_entropy, semantic_mi, shannon_mi};
use svb_core::mixture::{mixture_predict, run_enm, GaussianParams, MixtureState, StopRule};
use svb_core::prob::{
    channel_validity_check, distortion_from_truth, relatedness, relatedness_from_posterior, semantic_bayes,
    truth_from_distortion, truth_from_likelihood,
};
use svb_core::rate::{mmi_iterate, r_theta_iterate, rd_iterate, rg_curve, MmiOptions};
use svb_core::{Channel, Distribution, Grid, SemanticChannel};

fn dist(n: usize) -> impl Strategy<Value = Distribution<f64>> {
    prop::collection::vec(0.02f64..1.0, n).prop_map(|w| Distribution::from_weights(Array1::from(w)).unwrap())
}

/// Truth rows in (0, 1] with each row's maximum at 1.
fn semantic(n: usize, m: usize) -> impl Strategy<Value = SemanticChannel<f64>> {
    prop::collection::vec(1e-3f64..1.0, n * m).prop_map(move |v| {
        let mut t = Array2::from_shape_vec((n, m), v).unwrap();
        for mut row in t.outer_iter_mut() {
            let mx = row.iter().cloned().fold(0.0, f64::max);
            row.mapv_inplace(|x| x / mx);
        }
        SemanticChannel::unlabeled(t).unwrap()
    })
}

fn channel(m: usize, n: usize) -> impl Strategy<Value = Channel<f64>> {
    prop::collection::vec(0.01f64..1.0, m * n).prop_map(move |v| {
        let mut c = Array2::from_shape_vec((m, n), v).unwrap();
        for mut row in c.outer_iter_mut() {
            let s: f64 = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        Channel::given_x(c).unwrap()
    })
}

fn instance() -> impl Strategy<Value = (Distribution<f64>, SemanticChannel<f64>)> {
    (2usize..7, 1usize..4).prop_flat_map(|(m, n)| (dist(m), semantic(n, m)))
}

fn tight() -> MmiOptions<f64> {
    MmiOptions::default().with_eps(1e-13).with_max_iter(200_000)
}

fn assert_valid(ch: &Channel<f64>, px: &Distribution<f64>, py: &Distribution<f64>, tol: f64) {
    let c = relatedness_from_posterior(ch, py).unwrap();
    let rep = channel_validity_check(c.view(), px, py, tol).unwrap();
    assert!(rep.passed, "residuals {:?} py {:?}", rep.residuals, py.probs());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn semantic_information_never_exceeds_shannon(
        (px, sem, ch) in (2usize..7, 1usize..4).prop_flat_map(|(m, n)| (dist(m), semantic(n, m), channel(m, n)))
    ) {
        let g = semantic_mi(&px, &ch, &sem).unwrap();
        let r = shannon_mi(&px, &ch).unwrap();
        prop_assert!(g <= r + 1e-9, "G={g} R={r}");
    }

    #[test]
    fn matched_semantics_attain_shannon_bound(
        (px, ch) in (2usize..7, 1usize..4).prop_flat_map(|(m, n)| (dist(m), channel(m, n)))
    ) {
        let sem = svb_core::prob::truth_from_posterior(&ch).unwrap();
        let g = semantic_mi(&px, &ch, &sem).unwrap();
        let r = shannon_mi(&px, &ch).unwrap();
        prop_assert!((g - r).abs() <= 1e-9);
    }

    #[test]
    fn bayes_round_trip((px, pxy) in (2usize..30).prop_flat_map(|m| (dist(m), dist(m)))) {
        let t = truth_from_likelihood(&pxy, &px).unwrap();
        let back = semantic_bayes(t.row.view(), &px).unwrap();
        prop_assert!(back.max_abs_diff(&pxy) <= 1e-12);
        prop_assert!((back.probs().sum() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn distortion_round_trip(t in prop::collection::vec(1e-300f64..=1.0, 1..40)) {
        let t = Array1::from(t);
        let back = truth_from_distortion(distortion_from_truth(t.view()).view()).unwrap();
        for (a, b) in t.iter().zip(back.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300).max(1.0));
        }
    }

    #[test]
    fn consistent_triples_are_valid(
        (px, ch) in (2usize..7, 1usize..4).prop_flat_map(|(m, n)| (dist(m), channel(m, n)))
    ) {
        let (pxgy, py) = ch.invert(&px).unwrap();
        let c = relatedness(&pxgy, &px, &py).unwrap();
        prop_assert!(channel_validity_check(c.view(), &px, &py, 1e-9).unwrap().passed);
    }

    #[test]
    fn relative_entropy_nonnegative((p, q) in (1usize..10).prop_flat_map(|m| (dist(m), dist(m)))) {
        prop_assert!(relative_entropy(&p, &q).unwrap() >= 0.0);
        prop_assert!(relative_entropy(&p, &p).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn decomposition_identity(
        (px, sem, ch) in (2usize..7, 1usize..4).prop_flat_map(|(m, n)| (dist(m), semantic(n, m), channel(m, n)))
    ) {
        let g = semantic_mi(&px, &ch, &sem).unwrap();
        let (h, dbar) = entropy_decomposition(&px, &ch, &sem).unwrap();
        prop_assert!((g - (h - dbar)).abs() <= 1e-9);
    }

    #[test]
    fn mmi_post_convergence_validity((px, sem) in instance(), s in 0.2f64..8.0) {
        let p = mmi_iterate(&px, &sem, s, &Distribution::uniform(sem.n_labels()), &tight()).unwrap();
        prop_assume!(p.converged);
        assert_valid(&p.channel, &px, &p.py, 1e-6);
        let rep = channel_validity_check(p.bayes_core().view(), &px, &p.py, 1e-6).unwrap();
        prop_assert!(rep.passed);
    }

    #[test]
    fn r_theta_and_rd_post_convergence_validity((px, sem) in instance(), s in 0.2f64..8.0) {
        let p = r_theta_iterate(&px, &sem, s, &Distribution::uniform(sem.n_labels()), &tight()).unwrap();
        prop_assume!(p.converged);
        assert_valid(&p.channel, &px, &p.py, 1e-6);
        let d = distortion_from_truth(sem.truth().view().into_shape_with_order(sem.n_labels() * sem.n_points()).unwrap())
            .into_shape_with_order((sem.n_labels(), sem.n_points()))
            .unwrap();
        let q = rd_iterate(&px, d.view(), s, &Distribution::uniform(sem.n_labels()), &tight()).unwrap();
        prop_assume!(q.converged);
        assert_valid(&q.channel, &px, &q.py, 1e-6);
    }

    #[test]
    fn label_permutation_equivariance((px, sem) in instance(), s in 0.2f64..6.0, rot in 0usize..3) {
        let n = sem.n_labels();
        let perm: Vec<usize> = (0..n).map(|k| (k + rot) % n).collect();
        let a = mmi_iterate(&px, &sem, s, &Distribution::uniform(n), &tight()).unwrap();
        let b = mmi_iterate(&px, &sem.permuted(&perm), s, &Distribution::uniform(n), &tight()).unwrap();
        prop_assert!((a.g - b.g).abs() <= 1e-9);
        prop_assert!((a.r - b.r).abs() <= 1e-9);
        for (k, &p) in perm.iter().enumerate() {
            prop_assert!((b.py.get(k) - a.py.get(p)).abs() <= 1e-9);
        }
        let pch = Channel::given_x(Array2::from_shape_fn(a.channel.matrix().dim(), |(i, k)| a.channel.matrix()[[i, perm[k]]])).unwrap();
        prop_assert!((shannon_mi(&px, &pch).unwrap() - a.r_shannon).abs() <= 1e-12);
        prop_assert!((semantic_mi(&px, &pch, &sem.permuted(&perm)).unwrap() - semantic_mi(&px, &a.channel, &sem).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn circulant_similarity_symmetry(half in prop::collection::vec(0.0f64..1.0, 1..4), s in 0.3f64..5.0) {
        // Symmetric ring similarity S(x_i, x_j) = f(circular distance), f(0) = 1.
        let n = 2 * half.len() + 1;
        let f = |d: usize| if d == 0 { 1.0 } else { half[d.min(n - d) - 1] };
        let t = Array2::from_shape_fn((n, n), |(j, i)| f((i + n - j) % n));
        let sem = SemanticChannel::unlabeled(t).unwrap();
        let px = Distribution::uniform(n);
        let p = mmi_iterate(&px, &sem, s, &Distribution::uniform(n), &tight()).unwrap();
        let c = p.bayes_core();
        for i in 0..n {
            for j in 0..n {
                let lhs = c[[i, j]] / c[[j, j]];
                let rhs = c[[j, i]] / c[[i, i]];
                prop_assert!((lhs - rhs).abs() <= 1e-9, "{i} {j} {lhs} {rhs}");
            }
        }
    }

    #[test]
    fn rg_curve_convex_with_slope_s((px, sem) in (3usize..7, 2usize..4).prop_flat_map(|(m, n)| (dist(m), semantic(n, m)))) {
        let s_grid: Vec<f64> = (0..=250).map(|k| 0.5 + 0.01 * k as f64).collect();
        let curve = rg_curve(&px, &sem, &s_grid, &tight()).unwrap();
        prop_assume!(curve.all_converged());
        prop_assert!(curve.convexity_violation() <= 1e-9, "{}", curve.convexity_violation());
        for (s, err) in curve.slope_errors() {
            prop_assert!(err <= 0.05, "s={s} err={err}");
        }
    }
}

#[test]
fn enm_and_control_post_convergence_validity() {
    let g = Grid::integers(0, 100).unwrap();
    let comps = |c: &[(f64, f64, f64)]| c.iter().map(|&(m, s, w)| GaussianParams::new(m, s, w)).collect::<Vec<_>>();
    let truth = MixtureState::new(g.clone(), comps(&[(35.0, 8.0, 0.1), (65.0, 12.0, 0.9)])).unwrap();
    let px = mixture_predict(&truth);
    let init = MixtureState::new(g.clone(), comps(&[(30.0, 8.0, 0.5), (70.0, 8.0, 0.5)])).unwrap();
    let run = run_enm(&px, &init, 1000, &StopRule { kl_bits: 1e-9, max_outer: 2000 }).unwrap();
    assert!(run.converged);
    let ch = svb_core::mixture::e_step(&px, &run.state).unwrap();
    assert_valid(&ch, &px, &run.state.weights(), 1e-6);

    let px = Distribution::discretized_gaussian(&g, 50.0, 15.0).unwrap();
    let t0 = svb_core::prob::gaussian_truth(&g, 20.0, 10.0);
    let t1 = svb_core::prob::gaussian_truth(&g, 75.0, 6.0);
    let problem = ControlProblem::new(px.clone(), SemanticChannel::from_rows(&[t0, t1]).unwrap(), 5.0).unwrap();
    let sol = solve_control(&problem, &Distribution::uniform(2), &Default::default()).unwrap();
    assert!(sol.converged);
    assert_valid(&sol.pa_given_x, &px, &sol.pa, 1e-6);
}
