use microlocal::nets::{classify_scale, fit_growth_exponent, sample_net, EpsilonGrid, NetSample, NetThresholds, ScaleTag};
use proptest::prelude::*;

fn grid() -> EpsilonGrid {
    EpsilonGrid::standard()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // log₂(c ε^-a) = log₂ c + a j, so the fitted slope is exactly a.
    #[test]
    fn power_law_slope_is_exact(a in -6.0..6.0f64, c in 0.1..10.0f64) {
        let s = sample_net(|e| c * e.powf(-a), grid()).unwrap();
        let fit = fit_growth_exponent(&s, 0.5).unwrap();
        prop_assert!((fit.slope - a).abs() < 1e-9);
        prop_assert!(fit.r_squared > 1.0 - 1e-9 || a.abs() < 1e-9);
    }

    #[test]
    fn tag_is_invariant_under_positive_scaling(a in 0.5..6.0f64, c in 0.01..100.0f64) {
        let th = NetThresholds::default();
        let s = sample_net(|e| e.powf(-a), grid()).unwrap();
        let t0 = classify_scale(&s, &th).unwrap().tag;
        let t1 = classify_scale(&s.scaled(c).unwrap(), &th).unwrap().tag;
        prop_assert_eq!(t0, ScaleTag::Moderate);
        prop_assert_eq!(t0, t1);
    }

    #[test]
    fn csv_round_trip(vals in proptest::collection::vec(1e-200..1e200f64, 12)) {
        let s = NetSample::from_values(grid(), &vals).unwrap();
        let back = NetSample::from_csv(&s.to_csv()).unwrap();
        prop_assert_eq!(s, back);
    }
}

#[test]
fn reference_nets() {
    let th = NetThresholds::default();
    let tag = |f: fn(f64) -> f64| classify_scale(&sample_net(f, grid()).unwrap(), &th).unwrap().tag;
    assert_eq!(tag(|_| 2.0), ScaleTag::SlowScale);
    assert_eq!(tag(|e| 1.0 + e.ln().abs()), ScaleTag::SlowScale);
    assert_eq!(tag(|e| 1.0 / e), ScaleTag::Moderate);
    assert_eq!(tag(|e| (-1.0 / e).exp()), ScaleTag::Negligible);
    assert_eq!(tag(|e| e.powf(-0.75).exp()), ScaleTag::Unbounded);
}

#[test]
fn non_finite_values_are_rejected() {
    let mut v = vec![1.0; 12];
    v[3] = f64::NAN;
    assert!(NetSample::from_values(grid(), &v).is_err());
    assert!(EpsilonGrid::new(1, 3).is_err());
}
