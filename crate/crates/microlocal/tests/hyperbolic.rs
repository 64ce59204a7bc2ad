use std::f64::consts::TAU;

use microlocal::expr::Expr;
use microlocal::grid::{GridFunctionFamily, GridSpec};
use microlocal::hyperbolic::{hamilton_flow, solve_cauchy, CauchyProblem, FlowState, HamiltonianField, Stepping};
use microlocal::nets::EpsilonGrid;
use microlocal::symbols::SymbolFamily;
use num_complex::Complex64;
use proptest::prelude::*;

fn variable_speed() -> HamiltonianField {
    let a = Expr::one() + Expr::real(0.5) * Expr::sin(&Expr::x(0));
    HamiltonianField::new(SymbolFamily::new("c", a * Expr::xi(0), 1.0, 1), false).unwrap()
}

fn anisotropic_2d() -> HamiltonianField {
    let norm = Expr::pow(&(Expr::pow(&Expr::xi(0), 2.0) + Expr::pow(&Expr::xi(1), 2.0)), 0.5);
    let speed = Expr::one() + Expr::real(0.3) * Expr::sin(&Expr::x(0)) * Expr::cos(&Expr::x(1));
    HamiltonianField::new(SymbolFamily::new("w", speed * norm, 1.0, 2), false).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(p, q)| (p - q).abs() <= tol * (1.0 + q.abs()))
}

fn flow(field: &HamiltonianField, s: &FlowState, t: f64) -> FlowState {
    hamilton_flow(field, s, t, 1e-3).unwrap().state
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn group_law_1d(x in 0.0..TAU, xi in 0.5..4.0f64, s in 0.05..0.8f64, t in 0.05..0.8f64) {
        let f = variable_speed();
        let s0 = FlowState::new(&[x], &[xi], 0.0);
        let two = flow(&f, &flow(&f, &s0, s), t);
        let one = flow(&f, &s0, s + t);
        prop_assert!(close(&two.x, &one.x, 1e-7) && close(&two.xi, &one.xi, 1e-7));
    }

    #[test]
    fn group_law_2d(x in 0.0..TAU, y in 0.0..TAU, th in 0.0..TAU, s in 0.05..0.6f64, t in 0.05..0.6f64) {
        let f = anisotropic_2d();
        let s0 = FlowState::new(&[x, y], &[2.0 * th.cos(), 2.0 * th.sin()], 0.0);
        let two = flow(&f, &flow(&f, &s0, s), t);
        let one = flow(&f, &s0, s + t);
        prop_assert!(close(&two.x, &one.x, 1e-7) && close(&two.xi, &one.xi, 1e-7));
    }

    #[test]
    fn homogeneity(x in 0.0..TAU, y in 0.0..TAU, th in 0.0..TAU, t in 0.1..1.0f64, k in 1u32..3) {
        let f = anisotropic_2d();
        let lambda = f64::from(1u32 << k);
        let xi = [1.5 * th.cos(), 1.5 * th.sin()];
        let base = flow(&f, &FlowState::new(&[x, y], &xi, 0.0), t);
        let scaled = flow(&f, &FlowState::new(&[x, y], &[lambda * xi[0], lambda * xi[1]], 0.0), t);
        let expect: Vec<f64> = base.xi.iter().map(|v| lambda * v).collect();
        prop_assert!(close(&scaled.x, &base.x, 1e-8) && close(&scaled.xi, &expect, 1e-8));
    }

    #[test]
    fn hamiltonian_is_conserved(x in 0.0..TAU, y in 0.0..TAU, th in 0.0..TAU, t in 0.1..1.5f64) {
        let f = anisotropic_2d();
        let xi = [th.cos(), th.sin()];
        let end = flow(&f, &FlowState::new(&[x, y], &xi, 0.0), t);
        let h0 = f.eval(0.0, &[x, y], &xi);
        prop_assert!((f.eval(0.0, &end.x, &end.xi) - h0).abs() <= 1e-9 * h0.abs().max(1.0));
    }

    #[test]
    fn time_reversal(x in 0.0..TAU, xi in -4.0..4.0f64, t in 0.1..1.5f64) {
        prop_assume!(xi.abs() > 0.25);
        let f = variable_speed();
        let s0 = FlowState::new(&[x], &[xi], 0.0);
        let back = flow(&f, &flow(&f, &s0, t), -t);
        prop_assert!(close(&back.x, &[x], 1e-8) && close(&back.xi, &[xi], 1e-8));
    }
}

#[test]
fn constant_speed_flow_is_a_translation() {
    let f = HamiltonianField::new(SymbolFamily::new("d", Expr::real(1.5) * Expr::xi(0), 1.0, 1), false).unwrap();
    let end = flow(&f, &FlowState::new(&[0.4], &[3.0], 0.0), 0.7);
    assert!((end.x[0] - (0.4 + 1.5 * 0.7)).abs() < 1e-12);
    assert!((end.xi[0] - 3.0).abs() < 1e-12);
}

/// Band-limited data transported by `ξ` is an exact shift `g(x - t)`.
fn trig_data(spec: GridSpec, grid: EpsilonGrid, shift: f64) -> GridFunctionFamily {
    GridFunctionFamily::from_fn(spec, grid, "g", |p, e| {
        let x = p[0] - shift;
        Complex64::new((x).sin() + 0.5 * (3.0 * x).cos() + e * (2.0 * x).sin(), 0.0)
    })
    .unwrap()
}

fn max_diff(a: &GridFunctionFamily, b: &GridFunctionFamily) -> f64 {
    a.data.iter().flatten().zip(b.data.iter().flatten()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
}

#[test]
fn transport_matches_exact_shift() {
    let spec = GridSpec::new(1, 64).unwrap();
    let grid = EpsilonGrid::new(1, 6).unwrap();
    let symbol = SymbolFamily::new("xi", Expr::xi(0), 1.0, 1);
    let times = vec![0.3, 1.0];
    let mut solutions = Vec::new();
    for stepping in [Stepping::Multiplier, Stepping::MethodOfLines] {
        let problem = CauchyProblem { symbol: symbol.clone(), g: trig_data(spec, grid, 0.0), dt: None, record_times: times.clone(), stepping };
        solutions.push(solve_cauchy(&problem).unwrap());
    }
    for (k, &t) in times.iter().enumerate() {
        let exact = trig_data(spec, grid, t);
        assert!(max_diff(&solutions[0].states[k], &exact) < 1e-12, "multiplier at t={t}");
        assert!(max_diff(&solutions[1].states[k], &exact) < 1e-6, "method of lines at t={t}");
    }
}
