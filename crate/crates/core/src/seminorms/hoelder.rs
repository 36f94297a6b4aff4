//! Hölder-type ratio `max_{p != q} (u(p)-u(q))^2 / (E |p-q|^{beta-alpha})`
//! over grid points, the quantity the embedding bound controls.

use rayon::prelude::*;

use super::SemiNormError;
use crate::functions::GridFunction;
use crate::gasket::{Gasket, VertexId, HAUSDORFF_DIM};
use crate::scalar::Scalar;

/// Maximum over unordered pairs of distinct points of `V_k`, normalized by
/// the supplied energy `E`. A constant function has ratio `0`.
pub fn hoelder_ratio<T: Scalar>(
    gasket: &Gasket,
    u: &GridFunction<T>,
    beta: f64,
    energy: f64,
    pair_level: u32,
) -> Result<f64, SemiNormError> {
    if pair_level > u.level() {
        return Err(SemiNormError::LevelTooHigh {
            n: pair_level,
            level: u.level(),
        });
    }
    let count = gasket.num_vertices(pair_level);
    let values: Vec<f64> = u.values()[..count].iter().map(|v| v.to_f64_lossy()).collect();
    let half_exp = 0.5 * (beta - HAUSDORFF_DIM);
    let best = (0..count)
        .into_par_iter()
        .map(|i| {
            let p = gasket.point(VertexId(i as u32));
            let mut best = 0.0f64;
            for j in i + 1..count {
                let diff = values[i] - values[j];
                if diff == 0.0 {
                    continue;
                }
                let d2 = p.squared_distance(&gasket.point(VertexId(j as u32))).to_f64();
                best = best.max(diff * diff / d2.powf(half_exp));
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    if best == 0.0 {
        return Ok(0.0);
    }
    if !(energy > 0.0 && energy.is_finite()) {
        return Err(SemiNormError::ZeroEnergy(energy));
    }
    Ok(best / energy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::TestFunction;

    #[test]
    fn boundary_pair_of_harmonic() {
        let g = Gasket::new(3).unwrap();
        let h = TestFunction::Harmonic {
            boundary: [1.0, 0.0, 0.0],
        }
        .materialize::<f64>(&g, 3)
        .unwrap();
        // on V_0 the extremal pair is p0 against p1 or p2 at distance 1
        assert_eq!(hoelder_ratio(&g, &h, 2.0, 2.0, 0).unwrap(), 0.5);
        let r3 = hoelder_ratio(&g, &h, 2.0, 2.0, 3).unwrap();
        assert!(r3 >= 0.5);
    }

    #[test]
    fn constant_and_zero_energy() {
        let g = Gasket::new(2).unwrap();
        let c = GridFunction::constant(&g, 2, 1.0f64).unwrap();
        assert_eq!(hoelder_ratio(&g, &c, 2.0, 0.0, 2).unwrap(), 0.0);
        let x = TestFunction::CoordinateX {}.materialize::<f64>(&g, 2).unwrap();
        assert!(matches!(
            hoelder_ratio(&g, &x, 2.0, 0.0, 2),
            Err(SemiNormError::ZeroEnergy(_))
        ));
        assert!(hoelder_ratio(&g, &x, 2.0, 1.0, 3).is_err());
    }
}
