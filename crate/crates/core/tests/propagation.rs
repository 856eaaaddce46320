use proptest::prelude::*;
use qreset::propagation::{
    jstar_support, occupation_probability, peak_offset, transition_amplitude, PEAK_TIE_TOLERANCE,
};
use qreset::specfun::bessel_j;

#[test]
fn amplitude_examples() {
    let a = transition_amplitude(0, 0, 0.0).unwrap();
    assert_eq!((a.re, a.im), (1.0, 0.0));
    let a = transition_amplitude(1, 0, 0.5).unwrap();
    assert!(a.re.abs() < 1e-300 && (a.im - 0.440_050_585_744_933_5).abs() < 1e-14);
    let a = transition_amplitude(5, 3, 1.2).unwrap();
    assert!((a.re + bessel_j(2, 2.4).unwrap()).abs() < 1e-15 && a.im == 0.0);
    assert!(transition_amplitude(0, 0, f64::INFINITY).is_err());
}

#[test]
fn unitarity() {
    for t in [1.0, 3.0, 10.0] {
        let k = (2.0 * t + 60.0) as i64;
        let total: f64 = (-k..=k).map(|j| occupation_probability(j, 0, t).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-10, "t={t}: {total}");
    }
}

#[test]
fn peak_examples() {
    assert_eq!(peak_offset(3.0).unwrap().delta_offset, 5);
    assert_eq!(peak_offset(0.25).unwrap().delta_offset, 0);
    assert_eq!(peak_offset(1.75).unwrap().delta_offset, 2);
    assert!(peak_offset(0.0).is_err());
}

#[test]
fn support_examples() {
    assert_eq!(jstar_support(2, 5, 0), vec![10, 0, -10]);
    assert_eq!(jstar_support(0, 5, 3), vec![3]);
}

proptest! {
    #[test]
    fn peak_is_a_global_maximum(t in 0.01f64..40.0) {
        let d = peak_offset(t).unwrap().delta_offset as i32;
        let best = bessel_j(d, 2.0 * t).unwrap().powi(2);
        let scan = (2.0 * t + 60.0) as i32;
        for n in 0..=scan {
            prop_assert!(bessel_j(n, 2.0 * t).unwrap().powi(2) <= best + PEAK_TIE_TOLERANCE);
        }
    }

    #[test]
    fn occupation_is_reflection_symmetric(j in -50i64..50, t in 0.0f64..20.0) {
        prop_assert_eq!(occupation_probability(j, 0, t).unwrap(), occupation_probability(-j, 0, t).unwrap());
        let p = occupation_probability(j, 0, t).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }
}
