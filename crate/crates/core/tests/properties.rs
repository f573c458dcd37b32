use std::path::Path;

use proptest::prelude::*;

use gausson::ansatz::{kernel_basis, PeakSet};
use gausson::grid::{inner_eps, norm_star, norm_star_core, Field, Grid};
use gausson::io::{decode_field, encode_field};
use gausson::linop::{orthogonality_defect, project_e};
use gausson::math::logsumexp;
use gausson::potential::PotentialModel;

const N: usize = 15;

fn grid() -> Grid {
    Grid::new(2, N, 1.0).unwrap()
}

fn field() -> impl Strategy<Value = Field> {
    prop::collection::vec(-1.0f64..1.0, N * N).prop_map(|v| Field::from_values(&grid(), v).unwrap())
}

fn peaks() -> PeakSet {
    PeakSet::at_critical_points(0.3, vec![vec![0.0, 0.0]], 0.5).unwrap()
}

fn well() -> PotentialModel {
    PotentialModel::quadratic_well(1.0, &[0.0, 0.0]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn star_norm_is_homogeneous(f in field(), c in -5.0f64..5.0) {
        let p = peaks();
        let a = norm_star(&f.map(|v| c * v), &p).unwrap();
        let b = c.abs() * norm_star(&f, &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0));
        let a = norm_star_core(&f.map(|v| c * v), &p, 3.0);
        let b = c.abs() * norm_star_core(&f, &p, 3.0);
        prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0));
    }

    #[test]
    fn star_norm_triangle(f in field(), g in field()) {
        let p = peaks();
        let s = f.combine(1.0, &g, 1.0).unwrap();
        prop_assert!(norm_star(&s, &p).unwrap() <= (1.0 + 1e-12) * (norm_star(&f, &p).unwrap() + norm_star(&g, &p).unwrap()));
        prop_assert!(norm_star_core(&s, &p, 3.0) <= (1.0 + 1e-12) * (norm_star_core(&f, &p, 3.0) + norm_star_core(&g, &p, 3.0)));
    }

    #[test]
    fn eps_pairing_is_symmetric_and_positive(f in field(), g in field(), eps in 0.05f64..1.0) {
        let m = well();
        let fg = inner_eps(&f, &g, eps, &m).unwrap();
        let gf = inner_eps(&g, &f, eps, &m).unwrap();
        prop_assert!((fg - gf).abs() <= 1e-12 * fg.abs().max(1.0));
        let ff = inner_eps(&f, &f, eps, &m).unwrap();
        let gg = inner_eps(&g, &g, eps, &m).unwrap();
        prop_assert!(ff > 0.0);
        prop_assert!(fg * fg <= (1.0 + 1e-10) * ff * gg);
    }

    #[test]
    fn projection_is_idempotent(f in field()) {
        let m = well();
        let kb = kernel_basis(&peaks(), &m, &grid()).unwrap();
        let p1 = project_e(&f, &kb).unwrap();
        let p2 = project_e(&p1, &kb).unwrap();
        let scale = p1.values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        for (a, b) in p1.values.iter().zip(&p2.values) {
            prop_assert!((a - b).abs() <= 1e-10 * scale);
        }
        prop_assert!(orthogonality_defect(&p1.values, &kb) <= 1e-10);
    }

    #[test]
    fn logsumexp_brackets_the_maximum(v in prop::collection::vec(-800.0f64..800.0, 1..20)) {
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let l = logsumexp(&v);
        prop_assert!(l >= m && l <= m + (v.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn field_files_round_trip(f in field()) {
        let back = decode_field(&encode_field(&f), Path::new("mem")).unwrap();
        prop_assert_eq!(back, f);
    }
}
