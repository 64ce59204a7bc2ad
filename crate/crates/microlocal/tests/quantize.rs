use microlocal::expr::Expr;
use microlocal::grid::{GridFunctionFamily, GridSpec};
use microlocal::nets::EpsilonGrid;
use microlocal::quantize::{kernel_matrix, quantize_kn};
use microlocal::symbols::SymbolFamily;
use num_complex::Complex64;
use proptest::prelude::*;

fn grid() -> EpsilonGrid {
    EpsilonGrid::new(1, 6).unwrap()
}

fn wave(spec: GridSpec, k: i64) -> GridFunctionFamily {
    GridFunctionFamily::from_fn(spec, grid(), "w", |p, _| Complex64::from_polar(1.0, k as f64 * p[0])).unwrap()
}

fn max_diff(a: &GridFunctionFamily, b: &GridFunctionFamily) -> f64 {
    a.data.iter().flatten().zip(b.data.iter().flatten()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    // Op(a) e^{ikx} = a(x, k) e^{ikx} for any symbol.
    #[test]
    fn plane_waves_are_eigenfunctions_of_x_free_symbols(k in -20i64..20) {
        let spec = GridSpec::new(1, 64).unwrap();
        let a = SymbolFamily::new("a", Expr::japanese_xi(1) * (Expr::one() + Expr::eps()), 1.0, 1);
        let out = quantize_kn(&a, &wave(spec, k)).unwrap();
        let want = GridFunctionFamily::from_fn(spec, grid(), "w", |p, e| {
            Complex64::from_polar((1.0 + (k * k) as f64).sqrt() * (1.0 + e), k as f64 * p[0])
        })
        .unwrap();
        prop_assert!(max_diff(&out, &want) < 1e-10 * (1.0 + k.abs() as f64));
    }

    #[test]
    fn quantization_is_linear_in_the_input(k1 in -10i64..10, k2 in -10i64..10, c in -2.0..2.0f64) {
        let spec = GridSpec::new(1, 64).unwrap();
        let a = SymbolFamily::new("a", Expr::sin(&Expr::x(0)) * Expr::xi(0) + Expr::one(), 1.0, 1);
        let (u, v) = (wave(spec, k1), wave(spec, k2));
        let w = u.linear_combination(Complex64::new(c, 0.0), &v, Complex64::new(1.0, 0.0)).unwrap();
        let lhs = quantize_kn(&a, &w).unwrap();
        let rhs = quantize_kn(&a, &u).unwrap().linear_combination(Complex64::new(c, 0.0), &quantize_kn(&a, &v).unwrap(), Complex64::new(1.0, 0.0)).unwrap();
        prop_assert!(max_diff(&lhs, &rhs) < 1e-10);
    }
}

#[test]
fn multiplication_symbols_act_pointwise() {
    let spec = GridSpec::new(1, 64).unwrap();
    let a = SymbolFamily::new("s", Expr::sin(&Expr::x(0)), 0.0, 1);
    let u = wave(spec, 3);
    let out = quantize_kn(&a, &u).unwrap();
    for (row_o, row_u) in out.data.iter().zip(&u.data) {
        for (i, (o, v)) in row_o.iter().zip(row_u).enumerate() {
            assert!((o - spec.coord(i).sin() * v).norm() < 1e-12);
        }
    }
}

#[test]
fn kernel_matrix_agrees_with_the_fast_path() {
    let spec = GridSpec::new(1, 64).unwrap();
    let a = SymbolFamily::new("a", (Expr::one() + Expr::real(0.5) * Expr::cos(&Expr::x(0))) * Expr::japanese_xi(1), 1.0, 1);
    let u = GridFunctionFamily::from_fn(spec, grid(), "u", |p, e| Complex64::new((-(p[0] - 3.0).powi(2) / e.max(0.1)).exp(), 0.0)).unwrap();
    let fast = quantize_kn(&a, &u).unwrap();
    let k = kernel_matrix(&a, spec, grid()).unwrap();
    for (e, row) in fast.data.iter().enumerate() {
        let slow = k.apply_slice(e, &u.data[e]);
        let err = row.iter().zip(&slow).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "eps index {e}: {err}");
    }
}
