//! Independent oracles for the variance-scale fit and the simulated design.
//!
//! The Gauss-Newton fit of the log-linear family is checked against a brute
//! lattice search over the parameter space: the fitted objective must be no
//! worse than any lattice point. The simulated design is checked against
//! closed-form moments of the half-normal instrument.

use cfiv_core::skedastic::nls_objective;
use cfiv_core::{fit_skedastic, simulate_dgp, Dataset, McConfig, SkedasticSpec};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

/// E|N(0,1)| and Var|N(0,1)|.
const HALF_NORMAL_MEAN: f64 = 0.797_884_560_802_865_4;
const HALF_NORMAL_VAR: f64 = 0.363_380_227_632_418_6;

#[test]
fn log_linear_fit_beats_a_lattice_search() {
    let n = 20_000;
    let mut rng = cfiv_core::rng::substream(808, 88, 0);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let (g0, g1) = (0.3, 0.5);
    let mut z = DMatrix::zeros(n, 1);
    let mut x = DMatrix::zeros(n, 1);
    let mut d = DVector::zeros(n);
    let y = DVector::zeros(n);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        let zi: f64 = normal.sample(&mut rng);
        z[(i, 0)] = zi;
        let w1 = (zi.abs() + 1e-12).ln();
        let h2 = (g0 + g1 * w1).exp();
        let v: f64 = normal.sample(&mut rng);
        d[i] = h2.sqrt() * v;
    }
    let data = Dataset::new(y, d.clone(), x, vec!["const".into()], z, vec!["z0".into()]).unwrap();
    let spec = SkedasticSpec::log_linear();
    let v2 = d.map(|v| v * v);
    let fit = fit_skedastic(&spec, &v2, &data).unwrap();
    assert!(fit.converged);

    let features = spec.features(&data);
    let fitted_obj = nls_objective(spec.family, &features, &fit.gamma, &v2);

    let mut best = f64::INFINITY;
    let mut best_gamma = (f64::NAN, f64::NAN);
    let steps = 40;
    for i in 0..=steps {
        for j in 0..=steps {
            let cand = DVector::from_vec(vec![
                g0 - 0.5 + i as f64 / steps as f64,
                g1 - 0.5 + j as f64 / steps as f64,
            ]);
            let obj = nls_objective(spec.family, &features, &cand, &v2);
            if obj < best {
                best = obj;
                best_gamma = (cand[0], cand[1]);
            }
        }
    }
    assert!(
        fitted_obj <= best * (1.0 + 1e-9),
        "fit {fitted_obj} worse than lattice best {best} at {best_gamma:?}"
    );
    assert!((fit.gamma[0] - g0).abs() < 0.15, "gamma0 {}", fit.gamma[0]);
    assert!((fit.gamma[1] - g1).abs() < 0.15, "gamma1 {}", fit.gamma[1]);
}

#[test]
fn simulated_instrument_matches_half_normal_moments() {
    let config = McConfig::new(1_000_000, 1.0, 1.0, 1.0, 0.2, 606);
    let data = simulate_dgp(&config, 0).unwrap();
    let n = data.n() as f64;
    let mean = data.z().column(0).sum() / n;
    let var = data.z().column(0).map(|z| (z - mean) * (z - mean)).sum() / n;
    assert!((mean - HALF_NORMAL_MEAN).abs() < 0.003, "mean {mean}");
    assert!((var - HALF_NORMAL_VAR).abs() < 0.003, "var {var}");
    assert!(data.z().column(0).min() >= 0.0);

    // D = pi1 Z + pi2 + h V with E[V] = 0.
    let d_mean = data.d().sum() / n;
    let expected = config.pi1 * HALF_NORMAL_MEAN + config.pi2;
    assert!((d_mean - expected).abs() < 0.01, "d mean {d_mean}");
}

#[test]
fn switching_off_heteroskedasticity_makes_first_stage_scales_flat() {
    let config = McConfig::new(4000, 1.0, 0.0, 1.0, 0.0, 123);
    let data = simulate_dgp(&config, 0).unwrap();
    let fs = cfiv_core::fit_first_stage(&data, &SkedasticSpec::linear_power()).unwrap();
    // True h^2 is constant (= gamma2 = 1); the fitted slope coefficients
    // should be near zero and fitted scales near 1.
    let mean_h: f64 = fs.skedastic.h_values.iter().sum::<f64>() / data.n() as f64;
    assert!((mean_h - 1.0).abs() < 0.05, "mean h {mean_h}");
    let spread = fs
        .skedastic
        .h_values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &h| {
            (lo.min(h), hi.max(h))
        });
    assert!(spread.1 - spread.0 < 0.5, "h range {spread:?}");
}
