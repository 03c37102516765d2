use std::sync::Arc;

use nsv_core::integrator::{solve, solve_with, SolveOptions};
use nsv_core::io::{
    read_field, read_history, write_diagnostics, write_field, write_field_csv, write_history, DIAGNOSTICS_HEADER,
};
use nsv_core::{Error, ExpTerm, Grid, HistoryField, HistoryMode, InitialHistory, Kernel, ModelConfig, SpectralField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn field(g: &Arc<Grid>, seed: u64) -> SpectralField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SpectralField::random(g, 4.0, &mut rng)
}

fn bits(u: &SpectralField) -> Vec<u64> {
    u.coeffs()
        .iter()
        .flat_map(|z| [z.re.to_bits(), z.im.to_bits()])
        .collect()
}

fn kernel() -> Kernel {
    Kernel::exponential_sum(vec![ExpTerm::new(0.5, 1.0), ExpTerm::new(1.5, 3.0)])
        .unwrap()
        .rescale(0.5)
        .unwrap()
}

fn history_round_trip(eta: &HistoryField, k: &Kernel) {
    let mut buf = Vec::new();
    write_history(&mut buf, eta, k.shape(), k.epsilon()).unwrap();
    let (back, shape, eps) = read_history(&mut buf.as_slice()).unwrap();
    assert_eq!(&back, eta);
    assert_eq!(&shape, k.shape());
    assert_eq!(eps.to_bits(), k.epsilon().to_bits());
    let mut again = Vec::new();
    write_history(&mut again, &back, &shape, eps).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn field_round_trip_is_bit_exact() {
    for (dim, n) in [(2, 16), (3, 8)] {
        let g = Grid::new(dim, n).unwrap();
        let u = field(&g, 9);
        let mut buf = Vec::new();
        write_field(&mut buf, &u).unwrap();
        let back = read_field(&mut buf.as_slice()).unwrap();
        assert_eq!(bits(&back), bits(&u));
        assert_eq!(back.grid().n(), n);
    }
}

#[test]
fn grid_history_round_trip_is_bit_exact() {
    let g = Grid::new(2, 16).unwrap();
    let k = kernel();
    let mut cfg = ModelConfig::new(&g, k.clone());
    cfg.history.intervals = 64;
    let (a, b) = (field(&g, 1), field(&g, 2));
    let past = |s: f64| {
        let mut v = a.clone();
        v.axpy(s.cos(), &b);
        v
    };
    let eta = HistoryField::init(&g, &cfg.lag_grid().unwrap(), InitialHistory::FromPast(&past));
    history_round_trip(&eta, &k);
}

#[test]
fn moment_history_round_trip_is_bit_exact() {
    let g = Grid::new(2, 16).unwrap();
    let k = kernel();
    let mut cfg = ModelConfig::new(&g, k.clone());
    cfg.history.mode = HistoryMode::Prony;
    cfg.t_end = 0.05;
    let traj = solve(&cfg, &field(&g, 4), &cfg.zero_history().unwrap()).unwrap();
    let eta = traj.final_eta.unwrap();
    assert_eq!(eta.mode(), HistoryMode::Prony);
    history_round_trip(&eta, &k);
}

#[test]
fn corrupt_headers_are_rejected() {
    let g = Grid::new(2, 16).unwrap();
    let mut buf = Vec::new();
    write_field(&mut buf, &field(&g, 3)).unwrap();

    let mut bad_magic = buf.clone();
    bad_magic[0] = b'X';
    assert!(matches!(read_field(&mut bad_magic.as_slice()), Err(Error::Format(_))));

    let mut bad_version = buf.clone();
    bad_version[4..8].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(read_field(&mut bad_version.as_slice()), Err(Error::Format(_))));

    // a field file is not a history file
    assert!(matches!(read_history(&mut buf.as_slice()), Err(Error::Format(_))));
    assert!(read_field(&mut &buf[..buf.len() - 3]).is_err());
}

#[test]
fn diagnostics_table_matches_reports() {
    let g = Grid::new(2, 16).unwrap();
    let mut cfg = ModelConfig::new(&g, Kernel::single_exponential(1.0).unwrap());
    cfg.history.intervals = 64;
    cfg.dt = 1e-2;
    cfg.t_end = 0.2;
    cfg.stride = 5;
    let traj = solve_with(
        &cfg,
        &field(&g, 5),
        &cfg.zero_history().unwrap(),
        SolveOptions::default(),
    )
    .unwrap();
    let mut buf = Vec::new();
    write_diagnostics(&mut buf, &traj).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), DIAGNOSTICS_HEADER.join(","));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), traj.reports.len());
    assert_eq!(rows.len(), 5);
    for (row, r) in rows.iter().zip(&traj.reports) {
        assert_eq!(row.len(), DIAGNOSTICS_HEADER.len());
        assert_eq!(row[0].to_bits(), r.t.to_bits());
        assert_eq!(row[1].to_bits(), r.e.to_bits());
        assert_eq!(row[9].to_bits(), r.lambda_eps.to_bits());
    }
    // no residual before the first step or with a stride above one
    assert!(rows[0][15].is_nan());
}

#[test]
fn field_csv_lists_every_component() {
    let g = Grid::new(2, 8).unwrap();
    let u = field(&g, 6);
    let mut buf = Vec::new();
    write_field_csv(&mut buf, &u).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "kx,ky,kz,component,re,im");
    assert_eq!(text.lines().count(), 1 + g.coeff_len());
}
