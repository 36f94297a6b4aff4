mod common;

use approx::assert_relative_eq;
use gasket_forms::functions::{GridFunction, TestFunction};
use gasket_forms::gasket::Gasket;

#[test]
fn harmonic_extension_minimizes_graph_energy() {
    let g = Gasket::new(3).unwrap();
    for boundary in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.3, -1.2, 2.5]] {
        for m in 1..=3 {
            let u = GridFunction::energy_minimizing_interpolation(&g, boundary, m).unwrap();
            let oracle = common::quadratic_minimizer(&g, m, &boundary);
            for (a, b) in u.values().iter().zip(&oracle) {
                assert_relative_eq!(*a, *b, epsilon = 1e-9);
            }
        }
    }
}

#[test]
fn extension_from_level_one_data() {
    let g = Gasket::new(3).unwrap();
    let fixed = [0.5, -1.0, 2.0, 0.25, 1.5, -0.75];
    let u = TestFunction::Custom {
        level: 1,
        values: fixed.to_vec(),
    }
    .materialize::<f64>(&g, 3)
    .unwrap();
    let oracle = common::quadratic_minimizer(&g, 3, &fixed);
    for (a, b) in u.values().iter().zip(&oracle) {
        assert_relative_eq!(*a, *b, epsilon = 1e-9);
    }
}
