use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wasp::benchmark::{make_benchmark, make_random_walk, BenchmarkFunction, BenchmarkSpec};
use wasp::wasp::kkt_oracle;
use wasp::{close_enough, fd_jvp, make_orthonormal_tangents, make_random_tangents, DifferentiableFunction, WaspCache};

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    sv.max() / sv.min()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fast_path_matches_kkt(n in 1usize..=8, m in 1usize..=6, orthonormal in any::<bool>(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dx = if orthonormal { make_orthonormal_tangents(n, seed) } else { make_random_tangents(n, seed) };
        let cond = condition_number(dx.matrix());
        let cache = WaspCache::new(dx.clone(), m, 0.1, 0.1).unwrap();
        let web = random_matrix(&mut rng, m, n);
        let df = random_vector(&mut rng, m);
        let i = rng.random_range(0..n);
        let fast = cache.solve(i, &web, &df);
        let (oracle, _) = kkt_oracle(&dx, &web, i, &df).unwrap();
        let scale = fast.amax().max(1.0) * cond;
        prop_assert!((&fast - &oracle).amax() <= 1e-12 * scale, "diff {:e}", (&fast - &oracle).amax());
        // the constraint column is reproduced
        let column = &fast * dx.matrix().column(i);
        prop_assert!((column - &df).amax() <= 1e-12 * scale);
    }

    #[test]
    fn consistent_data_is_a_fixed_point(n in 1usize..=8, m in 1usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dx = make_random_tangents(n, seed);
        let cond = condition_number(dx.matrix());
        let truth = random_matrix(&mut rng, m, n);
        let web = &truth * dx.matrix();
        let i = rng.random_range(0..n);
        let df = web.column(i).into_owned();
        let cache = WaspCache::new(dx, m, 0.1, 0.1).unwrap();
        prop_assert!((cache.solve(i, &web, &df) - truth).amax() <= 1e-12 * cond);
    }

    #[test]
    fn calls_never_exceed_n_plus_one(
        n in 1usize..=12,
        m in 1usize..=4,
        lambda in 0.001f64..2.0,
        d in 0.0f64..0.5,
        orthonormal in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut f = make_benchmark(&BenchmarkSpec::new(n, m, 20, seed)).unwrap();
        let walk = make_random_walk(n, 10, lambda, seed).unwrap();
        let dx = if orthonormal { make_orthonormal_tangents(n, seed) } else { make_random_tangents(n, seed) };
        let mut cache = WaspCache::new(dx, m, d, d).unwrap();
        for x in &walk.waypoints {
            let before = f.calls();
            let est = cache.derivative(&mut f, x, 1e-6).unwrap();
            prop_assert_eq!(est.calls, f.calls() - before);
            prop_assert!(est.calls <= n as u64 + 1);
            prop_assert!(est.iterations >= 1 && est.iterations <= n);
            prop_assert_eq!(est.calls, est.iterations as u64 + 1);
        }
    }

    #[test]
    fn close_enough_is_reflexive_and_monotone(
        a in prop::collection::vec(-10.0f64..10.0, 1..8),
        noise in prop::collection::vec(-1.0f64..1.0, 8),
        t in 0.0f64..1.0,
        l in 0.0f64..1.0,
    ) {
        let a = DVector::from_vec(a);
        let b = DVector::from_fn(a.len(), |k, _| a[k] + noise[k]);
        prop_assert!(close_enough(&a, &a, 0.0, 0.0));
        if close_enough(&a, &b, t, l) {
            prop_assert!(close_enough(&a, &b, t + 0.1, l + 0.1));
        }
        prop_assert!(close_enough(&a, &b, f64::INFINITY, f64::INFINITY));
    }

    #[test]
    fn fd_jvp_is_linear_in_the_function(
        n in 1usize..=6,
        m in 1usize..=4,
        alpha in -3.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bf = BenchmarkFunction::from_spec(&BenchmarkSpec::new(n, m, 10, seed)).unwrap();
        let bg = BenchmarkFunction::from_spec(&BenchmarkSpec::new(n, m, 10, seed.wrapping_add(1))).unwrap();
        let (mut f, mut g) = (bf.to_function(), bg.to_function());
        let mut h = DifferentiableFunction::new(n, m, move |x| bf.eval(x) * alpha + bg.eval(x));
        let x = random_vector(&mut rng, n);
        let dx = random_vector(&mut rng, n);
        let eps = 1e-6;
        let jvp = |f: &mut DifferentiableFunction| {
            let fx = f.eval(&x).unwrap();
            fd_jvp(f, &x, &dx, &fx, eps).unwrap().value
        };
        let (jf, jg, jh) = (jvp(&mut f), jvp(&mut g), jvp(&mut h));
        prop_assert!((jh - (jf * alpha + jg)).amax() <= 1e-8);
    }

    #[test]
    fn fd_truncation_error_is_first_order(x0 in -3.0f64..3.0, k in 3i32..=5) {
        let eps = 10f64.powi(-k);
        let mut f = DifferentiableFunction::new(1, 1, |x| DVector::from_element(1, x[0].sin()));
        let x = DVector::from_element(1, x0);
        let fx = f.eval(&x).unwrap();
        let jvp = fd_jvp(&mut f, &x, &DVector::from_element(1, 1.0), &fx, eps).unwrap();
        // |f''| <= 1 bounds the forward-difference truncation by eps / 2
        prop_assert!((jvp.value[0] - x0.cos()).abs() <= 0.5 * eps + 1e-10);
    }
}
