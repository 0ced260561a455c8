use noisefield::noise::{component_variance, sample_slice, to_position_noise, CoarsenedNoise, RecordedNoise};
use noisefield::{build_mode_table, LatticeSpec, ModeClass, ModeTable, NoiseSource, StreamNoise, StreamSpec};

const SAMPLES: u64 = 40_000;

fn table() -> ModeTable {
    build_mode_table(LatticeSpec::new(2, 4, 6.0, 1.0).unwrap()).unwrap()
}

/// Real components of one slice: (Re, Im) for independent modes, Re for self-conjugate ones.
fn components(table: &ModeTable, stream: StreamSpec, k: u64) -> Vec<f64> {
    let slice = sample_slice(table, 0.02, stream, k);
    let mut out = Vec::new();
    for (slot, z) in slice.increments.iter().enumerate() {
        out.push(z.re);
        if table.mode(table.half_space()[slot]).class != ModeClass::SelfConjugate {
            out.push(z.im);
        }
    }
    out
}

fn worst_correlation_z(a: &[Vec<f64>], b: &[Vec<f64>], skip_diagonal: bool) -> f64 {
    let n = a.len() as f64;
    let dims = a[0].len();
    let sd = |x: &[Vec<f64>], i: usize| (x.iter().map(|r| r[i] * r[i]).sum::<f64>() / n).sqrt();
    let mut worst = 0.0f64;
    for i in 0..dims {
        for j in 0..dims {
            if skip_diagonal && i == j {
                continue;
            }
            let cov = a.iter().zip(b).map(|(ra, rb)| ra[i] * rb[j]).sum::<f64>() / n;
            let r = cov / (sd(a, i) * sd(b, j));
            worst = worst.max(r.abs() * n.sqrt());
        }
    }
    worst
}

#[test]
fn components_are_uncorrelated() {
    let t = table();
    let rows: Vec<Vec<f64>> = (0..SAMPLES).map(|k| components(&t, StreamSpec::new(3, 0), k)).collect();
    let z = worst_correlation_z(&rows, &rows, true);
    assert!(z < 5.0, "cross-component correlation z = {z}");
}

#[test]
fn consecutive_slices_are_uncorrelated() {
    let t = table();
    let rows: Vec<Vec<f64>> = (0..=SAMPLES).map(|k| components(&t, StreamSpec::new(3, 1), k)).collect();
    let z = worst_correlation_z(&rows[..rows.len() - 1], &rows[1..], false);
    assert!(z < 5.0, "lag-1 correlation z = {z}");
}

#[test]
fn trajectories_are_uncorrelated() {
    let t = table();
    let a: Vec<Vec<f64>> = (0..SAMPLES).map(|k| components(&t, StreamSpec::new(9, 0), k)).collect();
    let b: Vec<Vec<f64>> = (0..SAMPLES).map(|k| components(&t, StreamSpec::new(9, 1), k)).collect();
    let z = worst_correlation_z(&a, &b, false);
    assert!(z < 5.0, "cross-trajectory correlation z = {z}");
    let c: Vec<Vec<f64>> = (0..SAMPLES).map(|k| components(&t, StreamSpec::new(10, 0), k)).collect();
    let z = worst_correlation_z(&a, &c, false);
    assert!(z < 5.0, "cross-seed correlation z = {z}");
}

#[test]
fn position_noise_is_white_with_cell_variance() {
    let t = table();
    let dt = 0.02;
    let cells = t.len();
    let fields: Vec<Vec<f64>> =
        (0..SAMPLES).map(|k| to_position_noise(&sample_slice(&t, dt, StreamSpec::new(5, 0), k), &t)).collect();
    let n = SAMPLES as f64;
    let target = dt * t.spec().cell_volume();
    for c in 0..cells {
        let var = fields.iter().map(|f| f[c] * f[c]).sum::<f64>() / n;
        let z = (var / target - 1.0) / (2.0 / n).sqrt();
        assert!(z.abs() < 5.0, "cell {c}: variance {var} vs {target} (z = {z})");
    }
    let z = worst_correlation_z(&fields, &fields, true);
    assert!(z < 5.0, "spatial correlation z = {z}");
}

#[test]
fn variance_scales_with_dt() {
    let t = table();
    let d1 = component_variance(&t, 0.01);
    let d2 = component_variance(&t, 0.04);
    assert!((d2 / d1 - 4.0).abs() < 1e-12);
    let omega = t.spec().volume();
    let expected = omega * 0.01 / (2.0 * (2.0 * std::f64::consts::PI).powi(4));
    assert!((d1 - expected).abs() < 1e-15 * expected);
}

#[test]
fn coarsened_and_recorded_sources_agree_with_the_stream() {
    let t = table();
    let fine = StreamNoise { table: &t, dt: 0.01, stream: StreamSpec::new(1, 2) };
    let coarse = CoarsenedNoise { fine: fine.clone(), factor: 4 };
    assert!((coarse.dt() - 0.04).abs() < 1e-15);
    let s = coarse.slice(3);
    let mut sum = fine.slice(12).increments;
    for k in 13..16 {
        for (a, b) in sum.iter_mut().zip(fine.slice(k).increments) {
            *a += b;
        }
    }
    assert_eq!(s.increments, sum);

    let slices: Vec<_> = (0..5).map(|k| fine.slice(k)).collect();
    let recorded = RecordedNoise { dt: 0.01, slices: &slices };
    assert_eq!(recorded.slice(4), fine.slice(4));
    assert!(recorded.slice(5).increments.iter().all(|z| z.norm() == 0.0));
}
