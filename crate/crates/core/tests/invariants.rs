use std::sync::{Arc, LazyLock};

use fallsphere::bifurcation::{find_critical, CriticalOutcome, ManufacturedFamily, ScanOptions};
use fallsphere::forms::{assemble_D1, assemble_S};
use fallsphere::run::{ResultStore, RunConfig};
use fallsphere::{build_basis, DiscreteField, ModalBasis, QuadratureSpec, VectorField};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

struct Mode {
    basis: Arc<ModalBasis>,
    s: DMatrix<f64>,
    d1: DMatrix<f64>,
}

static MODES: LazyLock<Vec<Mode>> = LazyLock::new(|| {
    let quad = QuadratureSpec::default();
    (0..3)
        .map(|m| {
            let basis = build_basis(m, 3, 5, &quad).unwrap();
            Mode {
                s: assemble_S(&basis, &quad).unwrap().matrix,
                d1: assemble_D1(&basis, &quad).unwrap().matrix,
                basis: Arc::new(basis),
            }
        })
        .collect()
});

fn coeffs(m: usize) -> impl Strategy<Value = (usize, Vec<f64>)> {
    let n = MODES[m].basis.len();
    prop::collection::vec(-1.0..1.0f64, n).prop_map(move |c| (m, c))
}

fn any_field() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (0usize..3).prop_flat_map(coeffs)
}

fn direction() -> impl Strategy<Value = [f64; 3]> {
    (-1.0..1.0f64, 0.0..std::f64::consts::TAU).prop_map(|(c, p)| {
        let s = (1.0 - c * c).sqrt();
        [c, s * p.cos(), s * p.sin()]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fields_are_solenoidal((m, c) in any_field(), d in direction(), r in 1.0..6.0f64) {
        let u = DiscreteField::new(MODES[m].basis.clone(), DVector::from_vec(c)).unwrap();
        let x = [r * d[0], r * d[1], r * d[2]];
        let s = u.sample(&x);
        let scale = s.grad.iter().flatten().fold(1.0f64, |a, g| a.max(g.abs()));
        prop_assert!(s.divergence().abs() <= 1e-10 * scale);
    }

    #[test]
    fn traces_are_rigid((m, c) in any_field(), x in direction()) {
        let u = DiscreteField::new(MODES[m].basis.clone(), DVector::from_vec(c)).unwrap();
        let got = u.sample(&x).value;
        let want = u.rigid().trace(&x);
        for k in 0..3 {
            prop_assert!((got[k] - want[k]).abs() <= 1e-10);
        }
    }

    #[test]
    fn translation_drift_is_skew((m, c) in any_field()) {
        let u = DVector::from_vec(c);
        let q = u.dot(&(&MODES[m].d1 * &u));
        prop_assert!(q.abs() <= 1e-12 * u.norm_squared());
    }

    #[test]
    fn strain_form_is_coercive((m, c) in any_field()) {
        let u = DVector::from_vec(c);
        prop_assume!(u.norm() > 1e-3);
        prop_assert!(u.dot(&(&MODES[m].s * &u)) > 0.0);
    }

    #[test]
    fn manufactured_root_is_square_root(lambda_star in 1.5..30.0f64) {
        let a = &MODES[1].s * 2.0;
        let family = ManufacturedFamily::crossing(a, lambda_star).with_spread(0.3);
        let exact = lambda_star.sqrt();
        let (_, out) = find_critical(&family, (0.5 * exact, 1.7 * exact), 4, &ScanOptions::default()).unwrap();
        match out {
            CriticalOutcome::Crossing(p) => prop_assert!((p.lambda0 - exact).abs() <= 1e-8 * exact),
            CriticalOutcome::NoCrossing { .. } => prop_assert!(false, "missed the crossing"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn store_round_trip_is_bit_identical(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..40)) {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultStore::open(dir.path()).unwrap();
        store.put("x", "values", "fp", &values).unwrap();
        let back = store.get::<Vec<f64>>("x").unwrap().unwrap().payload;
        prop_assert_eq!(back.len(), values.len());
        for (a, b) in back.iter().zip(&values) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn config_toml_round_trip(degree in 1u32..8, radial in 2u32..16, max in 1.0..500.0f64, seed in any::<u64>()) {
        let mut cfg = RunConfig::default();
        cfg.resolution.max_degree = degree;
        cfg.resolution.radial = radial;
        cfg.lambda.max = max;
        cfg.seed = seed;
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back.fingerprint(), cfg.fingerprint());
    }
}
