use std::collections::BTreeSet;
use std::f64::consts::PI;

use microlocal::fixtures::{build_fixture, delta, delta_plus_smooth, heaviside, DEFAULT_WIDTH};
use microlocal::grid::GridSpec;
use microlocal::nets::EpsilonGrid;
use microlocal::symbols::ConeGrid;
use microlocal::wavefront::{singsupp_estimate, wavefront_estimate, CellDecomposition, WavefrontConfig};
use proptest::prelude::*;

fn grid() -> EpsilonGrid {
    EpsilonGrid::new(1, 8).unwrap()
}

fn setup(n: usize, g: usize) -> (GridSpec, CellDecomposition, ConeGrid) {
    let spec = GridSpec::new(n, g).unwrap();
    (spec, CellDecomposition::new(spec, 8).unwrap(), ConeGrid::new(n, 16, 2.0))
}

#[test]
fn smooth_fixtures_have_empty_wave_front() {
    for n in [1, 2] {
        let (spec, cells, cones) = setup(n, if n == 1 { 256 } else { 64 });
        for label in ["smooth", "constant", "plane_wave"] {
            let u = build_fixture(label, spec, grid()).unwrap();
            let wf = wavefront_estimate(&u, &cells, &cones, &WavefrontConfig::default()).unwrap();
            assert!(wf.singular_set().is_empty(), "{label} in {n}D");
        }
    }
}

#[test]
fn square_wave_is_singular_only_at_its_jumps() {
    let (spec, cells, cones) = setup(1, 256);
    let u = heaviside(spec, grid(), DEFAULT_WIDTH).unwrap();
    let sing: BTreeSet<usize> = singsupp_estimate(&u, &cells, &cones, &WavefrontConfig::default()).unwrap().into_iter().collect();
    let near: BTreeSet<usize> = [0.0, PI].iter().flat_map(|&x| cells.cells_meeting(&[x])).collect();
    let mut dilated = near.clone();
    for &c in &near {
        dilated.insert((c + 1) % 8);
        dilated.insert((c + 7) % 8);
    }
    assert!(!sing.is_empty());
    assert!(sing.is_subset(&dilated), "{sing:?} vs {dilated:?}");
}

#[test]
fn smooth_perturbation_leaves_wave_front_unchanged() {
    let (spec, cells, cones) = setup(1, 256);
    let x0 = [3.5 * PI / 4.0];
    let cfg = WavefrontConfig::default();
    let a = wavefront_estimate(&delta(spec, grid(), &x0, DEFAULT_WIDTH).unwrap(), &cells, &cones, &cfg).unwrap();
    let b = wavefront_estimate(&delta_plus_smooth(spec, grid(), &x0, DEFAULT_WIDTH).unwrap(), &cells, &cones, &cfg).unwrap();
    assert_eq!(a.singular_set(), b.singular_set());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    // Shifting a delta by whole cells shifts its singular support by the same number of cells.
    #[test]
    fn translation_equivariance(shift in 1usize..8) {
        let (spec, cells, cones) = setup(1, 256);
        let cfg = WavefrontConfig::default();
        let w = 2.0 * PI / 8.0;
        let x0 = 0.45 * w;
        let base = singsupp_estimate(&delta(spec, grid(), &[x0], DEFAULT_WIDTH).unwrap(), &cells, &cones, &cfg).unwrap();
        let moved = singsupp_estimate(&delta(spec, grid(), &[x0 + shift as f64 * w], DEFAULT_WIDTH).unwrap(), &cells, &cones, &cfg).unwrap();
        let expect: BTreeSet<usize> = base.iter().map(|c| (c + shift) % 8).collect();
        prop_assert_eq!(moved.into_iter().collect::<BTreeSet<_>>(), expect);
    }
}
