use microlocal::grid::{l2_norm, GridFunctionFamily, GridSpec, Spectral};
use microlocal::nets::EpsilonGrid;
use num_complex::Complex64;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mlgf_round_trip(n in 1usize..3, seed in 0u64..1000) {
        let spec = GridSpec::new(n, 64).unwrap();
        let grid = EpsilonGrid::new(2, 7).unwrap();
        let s = seed as f64;
        let u = GridFunctionFamily::from_fn(spec, grid, "u", |p, e| Complex64::new((p[0] * s).sin() / e, p.iter().sum::<f64>().cos())).unwrap();
        let back = GridFunctionFamily::read_mlgf(u.to_mlgf_bytes().as_slice(), 2, "u").unwrap();
        prop_assert_eq!(u.data, back.data);
    }

    // Parseval: the transform preserves the discrete L² norm up to the grid normalisation.
    #[test]
    fn fft_round_trip(vals in proptest::collection::vec(-1.0..1.0f64, 64)) {
        let spec = GridSpec::new(1, 64).unwrap();
        let sp = Spectral::new(spec);
        let orig: Vec<Complex64> = vals.iter().map(|&v| Complex64::new(v, 0.5 * v)).collect();
        let mut d = orig.clone();
        sp.forward(&mut d);
        sp.inverse(&mut d);
        let err = d.iter().zip(&orig).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-12);
        prop_assert!(l2_norm(&spec, &orig).is_finite());
    }
}

#[test]
fn bad_magic_is_rejected() {
    assert!(GridFunctionFamily::read_mlgf(&b"NOPE\0\0\0\0"[..], 1, "u").is_err());
}
