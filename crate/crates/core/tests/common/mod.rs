#![allow(dead_code)]

use msp_core::linalg::{spectral_radius, Mat};
use msp_core::LtiSystem;
use proptest::prelude::*;

/// Square matrix with entries in [-1, 1], scaled down to spectral radius at
/// most 0.95.
pub fn stable_matrix(n: usize, entries: &[f64]) -> Mat {
    let a = Mat::from_column_slice(n, n, &entries[..n * n]);
    let rho = spectral_radius(&a).unwrap();
    if rho > 0.95 {
        a * (0.95 / rho)
    } else {
        a
    }
}

/// Random stable partially observed system with positive definite sensor
/// noise covariance.
pub fn partial_system() -> impl Strategy<Value = LtiSystem> {
    (1usize..=4, 1usize..=2)
        .prop_flat_map(|(dx, dy)| {
            (
                Just(dx),
                Just(dy),
                prop::collection::vec(-1.0f64..1.0, dx * dx),
                prop::collection::vec(-1.0f64..1.0, dx * dx),
                prop::collection::vec(-1.0f64..1.0, dy * dx),
                prop::collection::vec(-0.5f64..0.5, dy * dy),
            )
        })
        .prop_map(|(dx, dy, a, bw, c, dv)| {
            let a = stable_matrix(dx, &a);
            let bw = Mat::from_column_slice(dx, dx, &bw) + Mat::identity(dx, dx) * 0.2;
            let c = Mat::from_column_slice(dy, dx, &c) + Mat::identity(dy, dx);
            let mut dv = Mat::from_column_slice(dy, dy, &dv);
            for i in 0..dy {
                dv[(i, i)] = dv[(i, i)].abs() + 0.3;
                for j in i + 1..dy {
                    dv[(i, j)] = 0.0;
                }
            }
            LtiSystem::new(a, Mat::zeros(dx, 0), bw, c, dv).unwrap()
        })
}

/// Random stable fully observed system with inputs.
pub fn full_system() -> impl Strategy<Value = LtiSystem> {
    (1usize..=3, 0usize..=2)
        .prop_flat_map(|(dx, du)| {
            (
                Just(dx),
                Just(du),
                prop::collection::vec(-1.0f64..1.0, dx * dx),
                prop::collection::vec(-1.0f64..1.0, dx * du),
                prop::collection::vec(-1.0f64..1.0, dx * dx),
            )
        })
        .prop_map(|(dx, du, a, b, bw)| {
            let a = stable_matrix(dx, &a);
            let b = Mat::from_column_slice(dx, du, &b);
            let bw = Mat::from_column_slice(dx, dx, &bw) + Mat::identity(dx, dx) * 0.5;
            LtiSystem::fully_observed(a, b, bw).unwrap()
        })
}
