//! Real-valued functions on the gasket: grid functions on `V_m`, the
//! harmonic extension rule, and the analytic test corpus.
//!
//! A grid function at level `m` also defines a continuous function on the
//! whole gasket, its harmonic spline: inside every level-`m` cell the values
//! are refined with the same 1/5-2/5 rule as [`GridFunction::harmonic_extend`].
//! [`GridFunction::cell_values`] evaluates that spline on cells of any depth.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gasket::{DyadicPoint, Gasket, GeometryError, VertexId, Word};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum FunctionError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("expected {expected} values for level {level}, got {got}")]
    WrongLength { level: u32, expected: usize, got: usize },
    #[error("gasket enumerated to level {have}, level {needed} required")]
    GasketTooShallow { needed: u32, have: u32 },
    #[error("word of length {word_len} is deeper than the function level {level}")]
    WordTooDeep { word_len: usize, level: u32 },
    #[error("{0} requires level at least {1}")]
    LevelTooLow(String, u32),
    #[error("non-finite value {0} in function table")]
    NonFinite(f64),
    #[error("vertex {0} in table does not match the gasket enumeration")]
    VertexMismatch(usize),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Values on every vertex of `V_m`, indexed by [`VertexId`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction<T> {
    level: u32,
    values: Vec<T>,
}

impl<T: Scalar> GridFunction<T> {
    pub fn new(gasket: &Gasket, level: u32, values: Vec<T>) -> Result<Self, FunctionError> {
        if level > gasket.level() {
            return Err(FunctionError::GasketTooShallow {
                needed: level,
                have: gasket.level(),
            });
        }
        let expected = gasket.num_vertices(level);
        if values.len() != expected {
            return Err(FunctionError::WrongLength {
                level,
                expected,
                got: values.len(),
            });
        }
        Ok(GridFunction { level, values })
    }

    pub fn constant(gasket: &Gasket, level: u32, c: T) -> Result<Self, FunctionError> {
        let n = gasket.num_vertices(level.min(gasket.level()));
        Self::new(gasket, level, vec![c; n])
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn value(&self, id: VertexId) -> &T {
        &self.values[id.index()]
    }

    /// Exact evaluation at an on-grid point.
    pub fn at(&self, gasket: &Gasket, p: &DyadicPoint) -> Option<&T> {
        gasket
            .vertex_id(p)
            .filter(|id| id.index() < self.values.len())
            .map(|id| &self.values[id.index()])
    }

    /// Restriction to `V_n`, `n <= level`.
    pub fn restrict(&self, gasket: &Gasket, n: u32) -> Self {
        assert!(n <= self.level);
        GridFunction {
            level: n,
            values: self.values[..gasket.num_vertices(n)].to_vec(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.values.iter().all(|v| *v == self.values[0])
    }

    /// Mean of `g` over the three corners of `K_w`.
    pub fn sample_at(&self, gasket: &Gasket, w: &Word) -> Result<T, FunctionError> {
        if w.len() > self.level as usize {
            return Err(FunctionError::WordTooDeep {
                word_len: w.len(),
                level: self.level,
            });
        }
        let [a, b, c] = gasket.cell_corners(w);
        let three = T::from_i64(3).unwrap();
        Ok((self.value(a).clone() + self.value(b).clone() + self.value(c).clone()) / three)
    }

    /// Unique minimizer of the level-`(m+1)` graph energy with the level-`m`
    /// values held fixed.
    pub fn harmonic_extend(&self, gasket: &Gasket) -> Result<Self, FunctionError> {
        let next = self.level + 1;
        if next > gasket.level() {
            return Err(FunctionError::GasketTooShallow {
                needed: next,
                have: gasket.level(),
            });
        }
        let mut values: Vec<Option<T>> = vec![None; gasket.num_vertices(next)];
        for (slot, v) in values.iter_mut().zip(&self.values) {
            *slot = Some(v.clone());
        }
        let parents = gasket.cells(self.level);
        let children = gasket.cells(next);
        let stride = parents.len();
        for (idx, corners) in parents.iter().enumerate() {
            let c = corners.map(|id| self.value(id).clone());
            // the midpoint of corners j and k is corner j of child k
            for (j, k) in [(0usize, 1usize), (0, 2), (1, 2)] {
                let id = children[idx + k * stride][j];
                if values[id.index()].is_none() {
                    values[id.index()] = Some(midpoint_value(&c, j, k));
                }
            }
        }
        Ok(GridFunction {
            level: next,
            values: values
                .into_iter()
                .map(|v| v.expect("every vertex of V_{m+1} is a corner or a midpoint"))
                .collect(),
        })
    }

    /// `m`-fold harmonic extension of boundary values on `V_0`.
    pub fn energy_minimizing_interpolation(gasket: &Gasket, boundary: [T; 3], m: u32) -> Result<Self, FunctionError> {
        let mut g = GridFunction::new(gasket, 0, boundary.to_vec())?;
        while g.level < m {
            g = g.harmonic_extend(gasket)?;
        }
        Ok(g)
    }

    /// Extend harmonically up to level `m`.
    pub fn extend_to(self, gasket: &Gasket, m: u32) -> Result<Self, FunctionError> {
        let mut g = self;
        while g.level < m {
            g = g.harmonic_extend(gasket)?;
        }
        Ok(g)
    }

    /// Corner values of the cell addressed by `digits`, at any depth. Beyond
    /// the grid level the harmonic spline is refined along the path.
    pub fn cell_values(&self, gasket: &Gasket, digits: &[u8]) -> [T; 3] {
        let on_grid = digits.len().min(self.level as usize);
        let w = Word::from_digits(&digits[..on_grid]).expect("digits validated");
        let mut c = gasket.cell_corners(&w).map(|id| self.value(id).clone());
        for &d in &digits[on_grid..] {
            c = harmonic_child(&c, d);
        }
        c
    }

    /// `alpha * self + other`
    pub fn scale_add(&self, alpha: T, other: &Self) -> Self {
        assert_eq!(self.level, other.level);
        GridFunction {
            level: self.level,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| alpha.clone() * a.clone() + b.clone())
                .collect(),
        }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(&T) -> U) -> GridFunction<U> {
        GridFunction {
            level: self.level,
            values: self.values.iter().map(f).collect(),
        }
    }

    pub fn to_f64(&self) -> GridFunction<f64> {
        self.map(|v| v.to_f64_lossy())
    }

    /// CSV with columns `vertex_id,s,a,b,value`.
    pub fn write_csv<W: std::io::Write>(&self, gasket: &Gasket, out: W) -> Result<(), FunctionError> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["vertex_id", "s", "a", "b", "value"])?;
        for (i, v) in self.values.iter().enumerate() {
            let p = gasket.point(VertexId(i as u32));
            wtr.write_record(&[
                i.to_string(),
                p.scale().to_string(),
                p.a().to_string(),
                p.b().to_string(),
                format!("{:?}", v.to_f64_lossy()),
            ])?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(gasket: &Gasket, level: u32, input: R) -> Result<Self, FunctionError> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut values = Vec::new();
        for (i, rec) in rdr.deserialize::<(usize, u32, i64, i64, f64)>().enumerate() {
            let (id, s, a, b, v) = rec?;
            let expected = gasket.points().get(id).copied();
            if id != i || expected != Some(DyadicPoint::new(s, a, b)) {
                return Err(FunctionError::VertexMismatch(i));
            }
            if !v.is_finite() {
                return Err(FunctionError::NonFinite(v));
            }
            values.push(T::from_f64_exact(v));
        }
        Self::new(gasket, level, values)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "level": self.level,
            "values": self.values.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(gasket: &Gasket, value: &serde_json::Value) -> Result<Self, FunctionError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Table {
            level: u32,
            values: Vec<f64>,
        }
        let t: Table = serde_json::from_value(value.clone())?;
        if let Some(bad) = t.values.iter().find(|v| !v.is_finite()) {
            return Err(FunctionError::NonFinite(*bad));
        }
        Self::new(gasket, t.level, t.values.into_iter().map(T::from_f64_exact).collect())
    }
}

/// Value at the midpoint of corners `j`, `k`: `(2 c_j + 2 c_k + c_l) / 5`.
pub fn midpoint_value<T: Scalar>(c: &[T; 3], j: usize, k: usize) -> T {
    let l = 3 - j - k;
    let two = T::from_i64(2).unwrap();
    let five = T::from_i64(5).unwrap();
    (two.clone() * c[j].clone() + two * c[k].clone() + c[l].clone()) / five
}

/// Corner values of child `d` of a cell carrying a harmonic function.
pub fn harmonic_child<T: Scalar>(c: &[T; 3], d: u8) -> [T; 3] {
    let d = d as usize;
    let mut out = c.clone();
    for (j, slot) in out.iter_mut().enumerate() {
        if j != d {
            *slot = midpoint_value(c, j, d);
        }
    }
    out
}

/// The analytic test corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    /// Harmonic function with the given values at `p_0, p_1, p_2`.
    Harmonic {
        boundary: [f64; 3],
    },
    CoordinateX {},
    CoordinateY {},
    /// Indicator of `V_w` on `V_{|w|}`, extended harmonically.
    HoelderProbe {
        word: Word,
    },
    /// Table of values on `V_level`, extended harmonically.
    Custom {
        level: u32,
        values: Vec<f64>,
    },
}

impl TestFunction {
    pub fn name(&self) -> String {
        match self {
            TestFunction::Harmonic { boundary: [a, b, c] } => format!("harmonic({a},{b},{c})"),
            TestFunction::CoordinateX {} => "coordinate_x".into(),
            TestFunction::CoordinateY {} => "coordinate_y".into(),
            TestFunction::HoelderProbe { word } => format!("hoelder_probe({word})"),
            TestFunction::Custom { level, .. } => format!("custom(level={level})"),
        }
    }

    /// Level below which the function is not representable.
    pub fn min_level(&self) -> u32 {
        match self {
            TestFunction::HoelderProbe { word } => word.len() as u32,
            TestFunction::Custom { level, .. } => *level,
            _ => 0,
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            TestFunction::Harmonic { boundary: [a, b, c] } => a == b && b == c,
            TestFunction::Custom { values, .. } => values.iter().all(|v| *v == values[0]),
            _ => false,
        }
    }

    pub fn materialize<T: Scalar>(&self, gasket: &Gasket, m: u32) -> Result<GridFunction<T>, FunctionError> {
        if m < self.min_level() {
            return Err(FunctionError::LevelTooLow(self.name(), self.min_level()));
        }
        if m > gasket.level() {
            return Err(FunctionError::GasketTooShallow {
                needed: m,
                have: gasket.level(),
            });
        }
        let n = gasket.num_vertices(m);
        match self {
            TestFunction::Harmonic { boundary } => {
                GridFunction::energy_minimizing_interpolation(gasket, boundary.map(T::from_f64_exact), m)
            }
            TestFunction::CoordinateX {} => GridFunction::new(
                gasket,
                m,
                gasket.points()[..n].iter().map(|p| T::from_f64_exact(p.x())).collect(),
            ),
            TestFunction::CoordinateY {} => GridFunction::new(
                gasket,
                m,
                gasket.points()[..n].iter().map(|p| T::from_f64_exact(p.y())).collect(),
            ),
            TestFunction::HoelderProbe { word } => {
                let k = word.len() as u32;
                let mut values = vec![T::zero(); gasket.num_vertices(k)];
                for id in gasket.cell_corners(word) {
                    values[id.index()] = T::one();
                }
                GridFunction::new(gasket, k, values)?.extend_to(gasket, m)
            }
            TestFunction::Custom { level, values } => {
                if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                    return Err(FunctionError::NonFinite(*bad));
                }
                GridFunction::new(gasket, *level, values.iter().map(|v| T::from_f64_exact(*v)).collect())?
                    .extend_to(gasket, m)
            }
        }
    }
}
