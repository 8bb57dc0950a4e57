use kernel_pool::distributions::{linear_pool, mean_and_variance};
use kernel_pool::scoring::{
    crps_cdf_form, cross_expectation, divergence, entropy, entropy_with, score, score_with, Method,
};
use kernel_pool::{CategoricalDist, EmpiricalDist, ForecastDistribution, KernelSpec, Outcome, OutcomeSpace, PoolSpec};
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

fn normalized(raw: Vec<f64>) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn reals() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, 1..30)
}

fn probs(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01..1.0f64, k).prop_map(normalized)
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05..1.0f64, n).prop_map(normalized)
}

fn empirical(xs: &[f64]) -> ForecastDistribution {
    EmpiricalDist::uniform_real(xs).unwrap().into()
}

fn vectors(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0..10.0f64, dim), 1..20)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn nested_pool_matches_flat_pool(
        a in reals(), b in reals(), c in reals(), w in weights(3)
    ) {
        let spec = KernelSpec::crps();
        let (fa, fb, fc) = (empirical(&a), empirical(&b), empirical(&c));
        let flat = linear_pool(&PoolSpec::new(vec![fa.clone(), fb.clone(), fc.clone()], w.clone()).unwrap());
        let inner_w = normalized(vec![w[0], w[1]]);
        let inner = linear_pool(&PoolSpec::new(vec![fa, fb], inner_w).unwrap());
        let nested = linear_pool(&PoolSpec::new(vec![inner, fc], vec![w[0] + w[1], w[2]]).unwrap());
        let e_flat = entropy(&spec, &flat).unwrap().value;
        let e_nested = entropy(&spec, &nested).unwrap().value;
        prop_assert!(rel(e_flat, e_nested) < 1e-12, "{e_flat} vs {e_nested}");
    }

    #[test]
    fn pool_variance_is_within_plus_between(
        comps in prop::collection::vec(reals(), 1..6), seed_w in prop::collection::vec(0.05..1.0f64, 6)
    ) {
        let n = comps.len();
        let w = normalized(seed_w[..n].to_vec());
        let dists: Vec<_> = comps.iter().map(|c| empirical(c)).collect();
        let pooled = linear_pool(&PoolSpec::new(dists.clone(), w.clone()).unwrap());
        let moments: Vec<_> = dists.iter().map(|d| mean_and_variance(d, None).unwrap()).collect();
        let mu: f64 = w.iter().zip(&moments).map(|(wi, m)| wi * m.mean[0]).sum();
        let within: f64 = w.iter().zip(&moments).map(|(wi, m)| wi * m.variance()).sum();
        let between: f64 = w.iter().zip(&moments).map(|(wi, m)| wi * (m.mean[0] - mu).powi(2)).sum();
        let v = mean_and_variance(&pooled, None).unwrap().variance();
        prop_assert!((v - within - between).abs() <= 1e-10 * v.max(1.0));
    }

    #[test]
    fn closed_forms_match_pairwise_real_line(xs in reals(), y in -60.0..60.0f64) {
        let f = empirical(&xs);
        for spec in [KernelSpec::squared_error(), KernelSpec::crps()] {
            let exact = entropy_with(&spec, &f, Method::ExactPairwise).unwrap().value;
            let closed = entropy_with(&spec, &f, Method::ClosedForm).unwrap().value;
            prop_assert!(rel(exact, closed) < 1e-10, "{} entropy {exact} vs {closed}", spec.rule());
            let y = Outcome::Real(y);
            let exact = score_with(&spec, &f, &y, Method::ExactPairwise).unwrap().value;
            let closed = score_with(&spec, &f, &y, Method::ClosedForm).unwrap().value;
            prop_assert!(rel(exact, closed) < 1e-10, "{} score {exact} vs {closed}", spec.rule());
        }
    }

    #[test]
    fn closed_forms_match_pairwise_quad_form(pts in vectors(2), a in 0.5..3.0f64, b in -0.4..0.4f64, y in prop::collection::vec(-10.0..10.0f64, 2)) {
        let spec = KernelSpec::quad_form(vec![vec![a, b], vec![b, 1.0]]).unwrap();
        let f: ForecastDistribution = EmpiricalDist::uniform(spec.space(), pts).unwrap().into();
        let exact = entropy_with(&spec, &f, Method::ExactPairwise).unwrap().value;
        let closed = entropy_with(&spec, &f, Method::ClosedForm).unwrap().value;
        prop_assert!(rel(exact, closed) < 1e-10);
        let y = Outcome::Vector(y);
        let exact = score_with(&spec, &f, &y, Method::ExactPairwise).unwrap().value;
        let closed = score_with(&spec, &f, &y, Method::ClosedForm).unwrap().value;
        prop_assert!(rel(exact, closed) < 1e-10);
    }

    #[test]
    fn closed_forms_match_pairwise_categorical(p in probs(7), y in 0usize..7) {
        for spec in [KernelSpec::brier(7).unwrap(), KernelSpec::rps(7).unwrap()] {
            let f: ForecastDistribution = CategoricalDist::new(spec.space(), p.clone()).unwrap().into();
            let exact = entropy_with(&spec, &f, Method::ExactPairwise).unwrap().value;
            let closed = entropy_with(&spec, &f, Method::ClosedForm).unwrap().value;
            prop_assert!(rel(exact, closed) < 1e-10);
            let y = Outcome::Category(y);
            let exact = score_with(&spec, &f, &y, Method::ExactPairwise).unwrap().value;
            let closed = score_with(&spec, &f, &y, Method::ClosedForm).unwrap().value;
            prop_assert!(rel(exact, closed) < 1e-10);
        }
    }

    #[test]
    fn crps_kernel_form_equals_cdf_form(xs in reals(), y in -60.0..60.0f64) {
        let e = EmpiricalDist::uniform_real(&xs).unwrap();
        let kernel = score(&KernelSpec::crps(), &e.clone().into(), &Outcome::Real(y)).unwrap().value;
        prop_assert!(rel(kernel, crps_cdf_form(&e, y)) < 1e-10);
    }

    #[test]
    fn truthful_forecast_minimizes_expected_score(p in probs(5), g in probs(5)) {
        for spec in [KernelSpec::brier(5).unwrap(), KernelSpec::rps(5).unwrap()] {
            let fp: ForecastDistribution = CategoricalDist::new(spec.space(), p.clone()).unwrap().into();
            let fg: ForecastDistribution = CategoricalDist::new(spec.space(), g.clone()).unwrap().into();
            let expected = |f: &ForecastDistribution| -> f64 {
                (0..5).map(|y| p[y] * score(&spec, f, &Outcome::Category(y)).unwrap().value).sum()
            };
            prop_assert!(expected(&fp) <= expected(&fg) + 1e-12);
        }
    }

    #[test]
    fn entropy_is_concave_under_pooling(a in vectors(3), b in vectors(3), w in weights(2)) {
        let spec = KernelSpec::energy(3).unwrap();
        let space = spec.space();
        let fa: ForecastDistribution = EmpiricalDist::uniform(space, a).unwrap().into();
        let fb: ForecastDistribution = EmpiricalDist::uniform(space, b).unwrap().into();
        let pooled = linear_pool(&PoolSpec::new(vec![fa.clone(), fb.clone()], w.clone()).unwrap());
        let lhs = entropy(&spec, &pooled).unwrap().value;
        let rhs = w[0] * entropy(&spec, &fa).unwrap().value + w[1] * entropy(&spec, &fb).unwrap().value;
        prop_assert!(lhs >= rhs - 1e-12 * lhs.max(1.0));
    }

    #[test]
    fn divergence_and_cross_expectation_are_bitwise_symmetric(a in reals(), b in reals()) {
        let (fa, fb) = (empirical(&a), empirical(&b));
        for spec in [KernelSpec::squared_error(), KernelSpec::crps()] {
            let ab = divergence(&spec, &fa, &fb).unwrap().value;
            let ba = divergence(&spec, &fb, &fa).unwrap().value;
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            let cab = cross_expectation(&spec, &fa, &fb).unwrap();
            let cba = cross_expectation(&spec, &fb, &fa).unwrap();
            prop_assert_eq!(cab.to_bits(), cba.to_bits());
        }
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let outcomes: Vec<Outcome> = (0..300)
        .map(|i| Outcome::Vector(vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]))
        .collect();
    let spec = KernelSpec::energy(2).unwrap();
    let big: ForecastDistribution = EmpiricalDist::uniform(
        OutcomeSpace::real_vector(2).unwrap(),
        (0..400).map(|i| vec![(i as f64).sqrt(), (i as f64 * 0.5).sin()]).collect(),
    )
    .unwrap()
    .into();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let m = spec.kernel_matrix(&outcomes).unwrap();
            let e = cross_expectation(&spec, &big, &big).unwrap();
            (m, e)
        })
    };
    let (m1, e1) = run(1);
    for threads in [2, 4, 7] {
        let (m, e) = run(threads);
        assert_eq!(m, m1);
        assert_eq!(e.to_bits(), e1.to_bits());
    }
}
