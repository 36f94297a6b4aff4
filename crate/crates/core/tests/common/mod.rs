#![allow(dead_code)]

use std::path::{Path, PathBuf};

use gasket_forms::experiments::ExperimentConfig;
use gasket_forms::gasket::Gasket;
use nalgebra::{DMatrix, DVector};

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

pub fn update_golden() -> bool {
    std::env::var_os("UPDATE_GOLDEN").is_some_and(|v| v != "0")
}

/// The reduced configuration the golden files are recorded with.
pub fn small_config() -> ExperimentConfig {
    ExperimentConfig::load(&golden_dir().join("config.json")).expect("golden config")
}

/// Minimizer of the level-`m` graph energy `sum_{edges} (u(x)-u(y))^2`
/// with the values on `V_fixed` held, by solving the normal equations of
/// the quadratic form directly.
pub fn quadratic_minimizer(gasket: &Gasket, m: u32, fixed: &[f64]) -> Vec<f64> {
    let n = gasket.num_vertices(m);
    let k = fixed.len();
    let mut lap = DMatrix::<f64>::zeros(n, n);
    for cell in gasket.cells(m) {
        for (j, l) in [(0, 1), (0, 2), (1, 2)] {
            let (a, b) = (cell[j].index(), cell[l].index());
            lap[(a, a)] += 1.0;
            lap[(b, b)] += 1.0;
            lap[(a, b)] -= 1.0;
            lap[(b, a)] -= 1.0;
        }
    }
    let free = n - k;
    if free == 0 {
        return fixed.to_vec();
    }
    let a = lap.view((k, k), (free, free)).clone_owned();
    let coupling = lap.view((k, 0), (free, k)).clone_owned();
    let rhs = -(coupling * DVector::from_column_slice(fixed));
    let x = a.lu().solve(&rhs).expect("interior Laplacian is nonsingular");
    fixed.iter().copied().chain(x.iter().copied()).collect()
}
