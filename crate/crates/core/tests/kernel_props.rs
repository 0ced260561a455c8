use noisefield::kernel::{phase_fn, propagator, riccati_exact, riccati_rhs, InitialKernel, ModeLaw};
use noisefield::noise::StreamNoise;
use noisefield::observables::ensemble_mu_correlators;
use noisefield::{build_mode_table, KernelEngine, KernelInit, LatticeSpec, ModeClass, Scheme, StreamSpec};
use num_complex::Complex64;
use proptest::prelude::*;
use statrs::function::erf::erfc;

fn v0_strategy() -> impl Strategy<Value = Complex64> {
    (0.05f64..5.0, -3.0f64..3.0).prop_map(|(re, im)| Complex64::new(re, im))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn closed_form_solves_the_riccati_equation(v0 in v0_strategy(), e in 0.2f64..6.0, t in 0.0f64..20.0) {
        let h = 1e-5;
        let lo = riccati_exact(v0, e, t).unwrap();
        let hi = riccati_exact(v0, e, t + 2.0 * h).unwrap();
        let mid = riccati_exact(v0, e, t + h).unwrap();
        let derivative = (hi - lo) / (2.0 * h);
        let rhs = riccati_rhs(mid, e);
        let scale = 1.0 + rhs.norm() + mid.norm_sqr();
        prop_assert!((derivative - rhs).norm() < 1e-5 * scale, "residual {}", (derivative - rhs).norm());
    }

    #[test]
    fn wronskian_is_conserved(v0 in v0_strategy(), e in 0.2f64..6.0, t in 0.0f64..50.0) {
        // Re V(t) |f(t)|^2 = Re V0
        let v = riccati_exact(v0, e, t).unwrap();
        let f = phase_fn(v0, e, t);
        prop_assert!((v.re * f.norm_sqr() - v0.re).abs() < 1e-10 * v0.re.max(1.0) * (1.0 + f.norm_sqr()));
    }

    #[test]
    fn propagators_compose(v0 in v0_strategy(), e in 0.2f64..6.0, a in 0.0f64..5.0, b in 0.0f64..5.0, c in 0.0f64..5.0) {
        let mut ts = [a, b, c];
        ts.sort_by(f64::total_cmp);
        let p12 = propagator(v0, e, ts[0], ts[1]).unwrap();
        let p23 = propagator(v0, e, ts[1], ts[2]).unwrap();
        let p13 = propagator(v0, e, ts[0], ts[2]).unwrap();
        prop_assert!((p12 * p23 - p13).norm() < 1e-12 * (1.0 + p13.norm()));
        prop_assert!(propagator(v0, e, ts[2], ts[0]).is_err() || ts[0] == ts[2]);
    }

    #[test]
    fn mode_law_matches_closed_form(v0 in v0_strategy(), e in 0.2f64..6.0, t in 0.0f64..10.0) {
        let law = ModeLaw { v0: InitialKernel::Finite(v0), energy: e };
        let direct = riccati_exact(v0, e, t).unwrap();
        prop_assert!((law.kernel_at(t) - direct).norm() <= 1e-14 * (1.0 + direct.norm()));
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Anderson-Darling statistic with mean and variance estimated from the
/// sample, including the small-sample correction.
fn anderson_darling(mut x: Vec<f64>) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    x.sort_by(f64::total_cmp);
    let len = x.len();
    let s: f64 = (0..len)
        .map(|i| {
            let lo = normal_cdf((x[i] - mean) / sd);
            let hi = normal_cdf((x[len - 1 - i] - mean) / sd);
            (2.0 * i as f64 + 1.0) * (lo.ln() + (1.0 - hi).ln())
        })
        .sum();
    let a2 = -n - s / n;
    a2 * (1.0 + 0.75 / n + 2.25 / (n * n))
}

#[test]
fn linear_kernel_is_gaussian_with_predicted_variance() {
    const M: u64 = 4000;
    let (lambda, dt, steps) = (0.5, 0.01, 100);
    let table = build_mode_table(LatticeSpec::new(1, 4, 4.0, 1.0).unwrap()).unwrap();
    let init = KernelInit::scaled(Complex64::new(1.5, 0.5));
    let engine = KernelEngine::new(&table, &init, lambda, Scheme::Exact, dt).unwrap();
    let slot = table.half_space().iter().position(|&id| table.mode(id).class == ModeClass::Independent).unwrap();
    let samples: Vec<Complex64> = (0..M)
        .map(|id| {
            let noise = StreamNoise { table: &table, dt, stream: StreamSpec::new(11, id) };
            engine.run_with(&noise, steps, steps, |_| Ok(())).unwrap().mu_plus[slot]
        })
        .collect();

    // p = 5.7e-7 (5 sigma) for the estimated-parameter statistic
    const THRESHOLD: f64 = 2.77;
    let a_re = anderson_darling(samples.iter().map(|z| z.re).collect());
    let a_im = anderson_darling(samples.iter().map(|z| z.im).collect());
    eprintln!("A*^2 re {a_re:.3} im {a_im:.3}");
    assert!(a_re < THRESHOLD && a_im < THRESHOLD, "A*^2 = {a_re}, {a_im}");

    let (_, abs2) = ensemble_mu_correlators(&table, &engine.laws()[slot], lambda, steps as f64 * dt).unwrap();
    let n = M as f64;
    let mean_abs2 = samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / n;
    let sd_abs2 = (samples.iter().map(|z| (z.norm_sqr() - mean_abs2).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let z = (mean_abs2 - abs2) / (sd_abs2 / n.sqrt());
    eprintln!("mean |mu|^2 {mean_abs2:.5e} predicted {abs2:.5e} z {z:.2}");
    assert!(z.abs() < 5.0, "mean |mu|^2 = {mean_abs2}, predicted {abs2}, z = {z}");
    // independent modes have no pseudo-variance
    let pseudo: Complex64 = samples.iter().map(|z| z * z).sum::<Complex64>() / n;
    assert!(pseudo.norm() < 5.0 * abs2 / n.sqrt(), "E[mu^2] = {pseudo}");
}
