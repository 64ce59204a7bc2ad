use microlocal::calculus::{expand_adjoint, expand_compose, expand_transpose};
use microlocal::expr::{Expr, Point};
use microlocal::symbols::SymbolFamily;
use num_complex::Complex64;
use proptest::prelude::*;

fn sym(label: &str, e: Expr, m: f64) -> SymbolFamily {
    SymbolFamily::new(label, e, m, 1)
}

fn eval_sum(e: &microlocal::calculus::Expansion, x: f64, xi: f64) -> Complex64 {
    e.partial_sum(e.len(), 1).expr.eval(&Point::new(&[x], &[xi], 0.5))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    // (ξ)#(x) = xξ - i, (ξ²)#(x²) = x²ξ² - 4ixξ - 2 for the left quantization.
    #[test]
    fn polynomial_compositions_are_exact(x in -3.0..3.0f64, xi in -5.0..5.0f64) {
        let e = expand_compose(&sym("a", Expr::xi(0), 1.0), &sym("b", Expr::x(0), 0.0), 3).unwrap();
        let want = Complex64::new(x * xi, -1.0);
        prop_assert!((eval_sum(&e, x, xi) - want).norm() < 1e-12);
        let sq = |v: Expr| Expr::pow(&v, 2.0);
        let e = expand_compose(&sym("a", sq(Expr::xi(0)), 2.0), &sym("b", sq(Expr::x(0)), 0.0), 4).unwrap();
        let want = Complex64::new(x * x * xi * xi - 2.0, -4.0 * x * xi);
        prop_assert!((eval_sum(&e, x, xi) - want).norm() < 1e-10 * (1.0 + want.norm()));
    }

    // (x·D)* = D·x has symbol xξ - i; ᵗ(x·D) = -D·x has symbol -xξ + i.
    #[test]
    fn adjoint_and_transpose_of_x_xi(x in -3.0..3.0f64, xi in -5.0..5.0f64) {
        let a = sym("a", Expr::x(0) * Expr::xi(0), 1.0);
        let adj = expand_adjoint(&a, 3).unwrap();
        prop_assert!((eval_sum(&adj, x, xi) - Complex64::new(x * xi, -1.0)).norm() < 1e-12);
        let tr = expand_transpose(&a, 3).unwrap();
        prop_assert!((eval_sum(&tr, x, xi) - Complex64::new(-x * xi, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn expansion_orders_decrease(k in 1usize..5) {
        let a = sym("a", Expr::japanese_xi(1), 1.0);
        let b = sym("b", Expr::sin(&Expr::x(0)) * Expr::japanese_xi(1), 1.0);
        let e = expand_compose(&a, &b, k).unwrap();
        prop_assert!(e.len() <= k);
        prop_assert!(e.orders().windows(2).all(|w| w[1] < w[0]));
        prop_assert_eq!(e.orders()[0], 2.0);
    }
}

#[test]
fn adjoint_of_real_multiplier_is_itself() {
    let a = sym("s", Expr::sin(&Expr::x(0)), 0.0);
    let e = expand_adjoint(&a, 3).unwrap();
    for x in [0.1, 1.0, 2.5] {
        assert!((eval_sum(&e, x, 7.0) - Complex64::new(f64::sin(x), 0.0)).norm() < 1e-14);
    }
}
