use std::f64::consts::PI;

use microlocal::expr::Expr;
use microlocal::nets::EpsilonGrid;
use microlocal::symbols::{build_cone_cutoff, default_radii, estimate_order, microellipticity_report, ConeGrid, SamplingBox, SymbolFamily};
use proptest::prelude::*;

fn grid() -> EpsilonGrid {
    EpsilonGrid::standard()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // ⟨ξ⟩^m has order exactly m; the estimate bisects to within 0.05.
    #[test]
    fn bracket_powers_have_their_order(m in -3.0..3.0f64, n in 1usize..3) {
        let a = SymbolFamily::new("b", Expr::pow(&Expr::japanese_xi(n), m), m, n);
        let est = estimate_order(&a, &SamplingBox::symmetric(n, 1.0), grid()).unwrap();
        prop_assert!((est - m).abs() <= 0.06, "m = {}, estimate {}", m, est);
    }

    // Multiplying by a bounded non-vanishing x-factor leaves the order unchanged.
    #[test]
    fn order_ignores_bounded_x_factors(m in 0.0..3.0f64, c in 0.1..0.9f64) {
        let base = Expr::pow(&Expr::japanese_xi(1), m);
        let a = SymbolFamily::new("a", (Expr::one() + Expr::real(c) * Expr::sin(&Expr::x(0))) * base, m, 1);
        let est = estimate_order(&a, &SamplingBox::symmetric(1, 1.0), grid()).unwrap();
        prop_assert!((est - m).abs() <= 0.06);
    }
}

#[test]
fn elliptic_and_characteristic_examples() {
    let cones = ConeGrid::new(2, 16, 2.0);
    let boxes = [SamplingBox::symmetric(2, 0.5)];
    let elliptic = SymbolFamily::new("l", Expr::japanese_xi(2), 1.0, 2);
    let r = microellipticity_report(&elliptic, &boxes, &cones, grid(), &default_radii()).unwrap();
    assert!(r.all_slow_scale_elliptic());
    let xi1 = SymbolFamily::new("xi1", Expr::xi(0), 1.0, 2);
    let r = microellipticity_report(&xi1, &boxes, &cones, grid(), &default_radii()).unwrap();
    assert!(!r.all_slow_scale_elliptic());
}

#[test]
fn cone_cutoff_is_one_inside_and_zero_outside() {
    let p = build_cone_cutoff(&[0.0, 1.0], PI / 8.0, PI / 4.0, 2).unwrap();
    for r in [2.0, 10.0, 1000.0] {
        let inside = p.eval(&[0.0, 0.0], &[0.1 * r, r], 0.5).unwrap();
        let outside = p.eval(&[0.0, 0.0], &[r, 0.2 * r], 0.5).unwrap();
        assert!((inside.re - 1.0).abs() < 1e-12, "r = {r}");
        assert!(outside.norm() < 1e-12, "r = {r}");
    }
    assert!(build_cone_cutoff(&[1.0, 0.0], 0.5, 0.4, 2).is_err());
}
