use nsv_core::{ExpTerm, Kernel, Table};
use proptest::prelude::*;

/// Composite Simpson on `[a, b]` with `n` (even) panels.
fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

fn exp_sum() -> impl Strategy<Value = Kernel> {
    prop::collection::vec((0.05f64..3.0, 0.2f64..5.0), 1..4).prop_map(|terms| {
        Kernel::exponential_sum(terms.into_iter().map(|(c, d)| ExpTerm::new(c, d)).collect()).unwrap()
    })
}

fn test_lags(k: &Kernel) -> Vec<f64> {
    let top = 50.0 / k.dafermos_rate();
    (0..400)
        .map(|i| 1e-4 * (top / 1e-4_f64).powf(i as f64 / 399.0))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dafermos_inequality_holds(k in exp_sum()) {
        let delta = k.dafermos_rate();
        for s in test_lags(&k) {
            let v = k.evaluate(s).unwrap();
            prop_assert!(v.mu_prime + delta * v.mu <= 1e-9, "s {s}: {}", v.mu_prime + delta * v.mu);
            prop_assert!(v.mu >= 0.0);
        }
    }

    #[test]
    fn rescaled_mass_scales_inversely(k in exp_sum()) {
        for eps in [1.0, 0.5, 0.25, 0.1] {
            let r = k.rescale(eps).unwrap();
            let rel = (r.total_mass() * eps - k.total_mass()).abs() / k.total_mass();
            prop_assert!(rel < 1e-8, "eps {eps}: {rel:e}");
        }
    }

    #[test]
    fn split_point_halves_the_mass(k in exp_sum()) {
        let split = k.tail_split();
        let half = simpson(|s| k.mu(s), 0.0, split.s_star, 4000);
        prop_assert!((half - 0.5 * k.total_mass()).abs() < 1e-9, "{half} vs {}", 0.5 * k.total_mass());
        prop_assert!((k.mu_star(0.0) - k.mu(split.s_star)).abs() < 1e-15);
        prop_assert_eq!(k.mu_star(2.0 * split.s_star), k.mu(2.0 * split.s_star));
    }

    #[test]
    fn g_is_tail_integral_of_mu(k in exp_sum(), s in 0.0f64..5.0) {
        let top = s + 60.0 / k.dafermos_rate();
        let tail = simpson(|x| k.mu(x), s, top, 20000);
        prop_assert!((tail - k.g(s)).abs() < 1e-8 * k.g(0.0).max(1.0), "{tail} vs {}", k.g(s));
    }
}

#[test]
fn sampled_exponential_rate_and_extrapolation() {
    let s: Vec<f64> = (0..=2000).map(|i| i as f64 * 0.01).collect();
    let mu: Vec<f64> = s.iter().map(|x| (-x).exp()).collect();
    let k = Kernel::tabulated(Table::new(s, mu).unwrap()).unwrap();
    assert!((k.dafermos_rate() - 1.0).abs() < 1e-3);
    let delta = k.dafermos_rate();
    for x in [25.0, 40.0, 80.0] {
        let v = k.evaluate(x).unwrap();
        assert!(v.mu_prime + delta * v.mu <= 1e-9);
        assert!(v.mu > 0.0 && v.mu < (-x + 1.0_f64).exp());
    }
}

#[test]
fn normalized_kernel_has_unit_g_mass() {
    let k = Kernel::exponential_sum(vec![ExpTerm::new(0.5, 1.0), ExpTerm::new(2.0, 3.0)]).unwrap();
    let n = k.normalized().unwrap();
    assert!((n.g_mass() - 1.0).abs() < 1e-10);
    let r = Kernel::single_exponential(1.0).unwrap().rescale(0.25).unwrap();
    assert!((r.g_mass() - 1.0).abs() < 1e-9);
}
