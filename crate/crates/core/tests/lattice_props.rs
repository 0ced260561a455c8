use noisefield::{build_mode_table, Error, LatticeSpec, ModeClass, ModeTable};
use num_complex::Complex64;
use proptest::prelude::*;

fn table(dim: usize, sites: usize, length: f64) -> ModeTable {
    build_mode_table(LatticeSpec::new(dim, sites, length, 1.0).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn modes_partition_the_lattice(dim in 1usize..=3, sites in 2usize..=16) {
        let t = table(dim, sites, 8.0);
        prop_assert_eq!(t.len(), sites.pow(dim as u32));
        let self_conj = t.count(ModeClass::SelfConjugate);
        let expected_self = if sites % 2 == 0 { 1 << dim } else { 1 };
        prop_assert_eq!(self_conj, expected_self);
        prop_assert_eq!(t.count(ModeClass::Independent), t.count(ModeClass::Dependent));
        prop_assert_eq!(t.half_space().len(), t.count(ModeClass::Independent) + self_conj);
        let covered: usize = t.half_space().iter().map(|&id| t.mode(id).class.multiplicity()).sum();
        prop_assert_eq!(covered, t.len());
    }

    #[test]
    fn conjugation_is_an_involution(dim in 1usize..=3, sites in 2usize..=12) {
        let t = table(dim, sites, 5.0);
        let n = sites as i64;
        for m in t.modes() {
            let p = t.mode(m.partner);
            prop_assert_eq!(p.partner, m.id);
            prop_assert_eq!(t.conjugate(m.id), m.partner);
            prop_assert_eq!(p.energy, m.energy);
            for k in 0..dim {
                prop_assert_eq!((m.index[k] + p.index[k]).rem_euclid(n), 0);
            }
            match m.class {
                ModeClass::SelfConjugate => prop_assert_eq!(m.partner, m.id),
                ModeClass::Independent => prop_assert_eq!(p.class, ModeClass::Dependent),
                ModeClass::Dependent => prop_assert_eq!(p.class, ModeClass::Independent),
            }
        }
        // lexicographic order of the index vectors
        for w in t.modes().windows(2) {
            prop_assert!(w[0].index[..dim] < w[1].index[..dim]);
        }
    }

    #[test]
    fn position_round_trip(
        dim in 1usize..=3,
        sites in 2usize..=8,
        length in 1.0f64..20.0,
        seed in any::<u64>(),
    ) {
        let t = table(dim, sites, length);
        let mut state = seed | 1;
        let field: Vec<f64> = (0..t.len())
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        let amps = t.from_position_field(&field).unwrap();
        let (_, violation) = t.symmetry_violation(&amps).unwrap();
        prop_assert!(violation < 1e-13);
        let back = t.to_position_field(&amps).unwrap();
        for (a, b) in field.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        // Parseval: sum_x phi^2 a^d = (2pi)^{2d} / Omega * sum_p |phi(p)|^2
        let spec = t.spec();
        let direct: f64 = field.iter().map(|x| x * x).sum::<f64>() * spec.cell_volume();
        let spectral: f64 = spec.two_pi_dim().powi(2) / spec.volume() * amps.iter().map(|a| a.norm_sqr()).sum::<f64>();
        prop_assert!((direct - spectral).abs() <= 1e-12 * direct.max(1e-300));
    }

    #[test]
    fn half_space_expansion_is_hermitian(dim in 1usize..=3, sites in 2usize..=8, re in -2.0f64..2.0, im in -2.0f64..2.0) {
        let t = table(dim, sites, 4.0);
        let values: Vec<Complex64> = t
            .half_space()
            .iter()
            .enumerate()
            .map(|(k, &id)| {
                let z = Complex64::new(re + k as f64, im - 0.5 * k as f64);
                if t.mode(id).class == ModeClass::SelfConjugate { Complex64::new(z.re, 0.0) } else { z }
            })
            .collect();
        let full = t.expand_half_space(&values);
        prop_assert_eq!(t.symmetry_violation(&full).unwrap().1, 0.0);
        prop_assert!(t.to_position_field(&full).is_ok());
    }
}

#[test]
fn asymmetric_amplitudes_are_rejected() {
    let t = table(2, 4, 4.0);
    let mut amps = vec![Complex64::new(0.0, 0.0); t.len()];
    let id = t.half_space().iter().copied().find(|&id| t.mode(id).class == ModeClass::Independent).unwrap();
    amps[id] = Complex64::new(1.0, 0.0);
    match t.to_position_field(&amps) {
        Err(Error::AsymmetricAmplitudes { deviation, .. }) => assert!(deviation > 0.5),
        other => panic!("expected asymmetry error, got {other:?}"),
    }
}

#[test]
fn invalid_lattices_are_rejected() {
    for (dim, sites, length, mass) in [
        (0, 4, 1.0, 1.0),
        (4, 4, 1.0, 1.0),
        (1, 1, 1.0, 1.0),
        (1, 4, 0.0, 1.0),
        (1, 4, 1.0, -1.0),
        (1, 4, f64::NAN, 1.0),
    ] {
        assert!(
            matches!(LatticeSpec::new(dim, sites, length, mass), Err(Error::InvalidLattice(_))),
            "accepted dim={dim} sites={sites} length={length} mass={mass}"
        );
    }
}
