use std::sync::Arc;

use nsv_core::energy::{self, h_norm_sq, report, EnergyReport};
use nsv_core::{Error, Grid, HistoryField, HistoryMode, InitialHistory, Kernel, ModelConfig, SpectralField, State};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid() -> Arc<Grid> {
    Grid::new(2, 16).unwrap()
}

fn config(g: &Arc<Grid>, alpha: f64, beta: f64) -> ModelConfig {
    let mut cfg = ModelConfig::new(g, Kernel::single_exponential(1.0).unwrap());
    cfg.alpha = alpha;
    cfg.beta = beta;
    cfg.theta = 0.0;
    cfg.history.intervals = 128;
    cfg
}

fn unit_mode(g: &Arc<Grid>) -> SpectralField {
    let one = Complex64::new(1.0, 0.0);
    let mut u = SpectralField::single_mode(g, [1, 0, 0], [Complex64::default(), one, Complex64::default()]).unwrap();
    let n = u.norm(0.0);
    u.scale(1.0 / n);
    u
}

/// Random velocity and a random past of comparable size.
fn random_state(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> State {
    let g = cfg.grid();
    let level = 10f64.powf(rng.gen_range(-2.0..1.0));
    let u = SpectralField::random(g, 4.0, rng).scaled(level);
    let (a, b) = (SpectralField::random(g, 4.0, rng), SpectralField::random(g, 4.0, rng));
    let omega = rng.gen_range(0.1..5.0);
    let weight = rng.gen_range(0.0..2.0) * level;
    let past = |s: f64| {
        let mut v = a.scaled(weight);
        v.axpy(weight * (omega * s).sin(), &b);
        v
    };
    let lags = cfg.lag_grid().unwrap();
    let eta = HistoryField::init(g, &lags, InitialHistory::FromPast(&past));
    State::new(u, eta).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-14 * b.abs().max(1.0)
}

#[test]
fn unit_mode_hand_values() {
    let g = grid();
    let cfg = config(&g, 0.1, 0.2);
    let st = State::new(unit_mode(&g), cfg.zero_history().unwrap()).unwrap();
    let r = report(&st, &cfg, 1e-2).unwrap();
    assert!(close(r.e, 0.55), "{}", r.e);
    assert!(close(r.psi, 0.4), "{}", r.psi);
    assert_eq!(r.phi, 0.0);
    assert_eq!(r.pi, 0.0);
    assert!(close(r.lambda_eps, 0.55 + 1e-4 * 0.4));
}

#[test]
fn zero_state_reports_zero() {
    let g = grid();
    let cfg = config(&g, 0.1, 0.5);
    let r = report(&State::rest(&cfg).unwrap(), &cfg, 1e-2).unwrap();
    let z = EnergyReport::zero(0.0);
    assert_eq!(r, z);
}

#[test]
fn energy_is_the_sum_of_its_parts() {
    let g = grid();
    let cfg = config(&g, 0.3, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let st = random_state(&cfg, &mut rng);
        let r = report(&st, &cfg, 1e-2).unwrap();
        let (n0, n1, n2) = (st.u.norm(0.0), st.u.norm(1.0), st.u.norm(2.0));
        assert!(close(r.e, 0.5 * (n0 * n0 + cfg.alpha * n1 * n1 + r.history_sq)));
        assert!(close(r.e1, 0.5 * (cfg.alpha * n2 * n2 + n1 * n1 + r.history1_sq)));
        assert!(close(2.0 * r.e, h_norm_sq(&r, cfg.alpha)));
        assert!(r.pi >= 0.0 && r.pi1 >= 0.0 && r.psi >= 0.0 && r.psi1 >= 0.0);
        assert!(r.history_sq > 0.0);
    }
}

#[test]
fn norm_equivalence_sweep() {
    let g = grid();
    let cfg = config(&g, 0.1, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let states: Vec<State> = (0..50).map(|_| random_state(&cfg, &mut rng)).collect();
    for eps in [1e-3, 1e-2] {
        for st in &states {
            let r = report(st, &cfg, eps).unwrap();
            assert!(r.lambda_brackets_energy(), "eps {eps}: E {} Λ {}", r.e, r.lambda_eps);
            assert!(r.lambda1_brackets_energy(), "eps {eps}: E1 {} Λ1 {}", r.e1, r.lambda1);
        }
    }
    let best = energy::eps_max(&states, &cfg, &[1e-3, 1e-2, 1e-1]).unwrap();
    assert!(best.is_some_and(|e| e >= 1e-2), "{best:?}");
}

#[test]
fn eps_max_needs_grid_history() {
    let g = grid();
    let mut cfg = config(&g, 0.1, 0.5);
    cfg.history.mode = HistoryMode::Prony;
    let st = State::new(unit_mode(&g), cfg.zero_history().unwrap()).unwrap();
    let r = report(&st, &cfg, 1e-2).unwrap();
    assert!(r.lambda_eps.is_nan() && r.phi.is_nan());
    assert!(r.e.is_finite());
    assert!(matches!(
        energy::eps_max(&[st], &cfg, &[1e-2]),
        Err(Error::UnsupportedMode(_))
    ));
}
