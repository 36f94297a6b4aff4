//! Exact geometry, addressing and measure on the Sierpinski gasket.
//!
//! Points are stored as dyadic rationals `(a / 2^s, b * sqrt(3) / 2^s)`, so
//! the gluing of neighbouring cells is decided by integer equality. Cell
//! addresses are base-3 words packed little-end-first into a `u128`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::pow3_recip;

/// Hausdorff dimension `log 3 / log 2`. Reporting only; weights use `3^n`.
pub const HAUSDORFF_DIM: f64 = 1.584_962_500_721_156_2;
/// Walk dimension `log 5 / log 2`.
pub const WALK_DIM: f64 = 2.321_928_094_887_362;

/// Longest word a packed `u128` can hold (`3^80 < 2^128`).
pub const MAX_WORD_LEN: usize = 80;
/// Deepest level with exact `i64` dyadic coordinates.
pub const ABSOLUTE_MAX_DEPTH: u32 = 60;
/// Default depth budget for exact geometry.
pub const DEFAULT_MAX_DEPTH: u32 = 40;
/// Default cap on full vertex enumeration (`3^m` cells are materialized).
pub const DEFAULT_MAX_ENUMERATION_LEVEL: u32 = 13;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeometryError {
    #[error("invalid digit {0}; digits must be 0, 1 or 2")]
    InvalidDigit(u8),
    #[error("word of length {len} exceeds the limit of {max}")]
    WordTooLong { len: usize, max: usize },
    #[error("the empty word has no cell point")]
    EmptyWord,
    #[error("depth {requested} exceeds the geometry budget of {max}")]
    DepthExceeded { requested: u32, max: u32 },
    #[error("point {0} does not lie on the gasket")]
    NotOnGasket(DyadicPoint),
    #[error("vertex enumeration at level {requested} exceeds the configured maximum {max}")]
    LevelTooDeep { requested: u32, max: u32 },
}

/// Depth limits for exact geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometryLimits {
    pub max_depth: u32,
    pub max_enumeration_level: u32,
}

impl Default for GeometryLimits {
    fn default() -> Self {
        GeometryLimits {
            max_depth: DEFAULT_MAX_DEPTH,
            max_enumeration_level: DEFAULT_MAX_ENUMERATION_LEVEL,
        }
    }
}

impl GeometryLimits {
    pub fn check_depth(&self, requested: u32) -> Result<(), GeometryError> {
        let max = self.max_depth.min(ABSOLUTE_MAX_DEPTH);
        if requested > max {
            Err(GeometryError::DepthExceeded { requested, max })
        } else {
            Ok(())
        }
    }
}

const fn pow3_table() -> [u128; MAX_WORD_LEN + 1] {
    let mut t = [1u128; MAX_WORD_LEN + 1];
    let mut i = 1;
    while i <= MAX_WORD_LEN {
        t[i] = t[i - 1] * 3;
        i += 1;
    }
    t
}

pub(crate) const POW3: [u128; MAX_WORD_LEN + 1] = pow3_table();

/// A cell address `w_1 ... w_n` over `{0, 1, 2}`. Digit `k` (0-based) is
/// stored at weight `3^k`, so the packed value of a level-`n` word is also
/// its index in `0..3^n` and prefix tests are a single remainder.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Word {
    len: u8,
    packed: u128,
}

impl Word {
    pub const fn empty() -> Self {
        Word { len: 0, packed: 0 }
    }

    pub fn from_digits(digits: &[u8]) -> Result<Self, GeometryError> {
        if digits.len() > MAX_WORD_LEN {
            return Err(GeometryError::WordTooLong {
                len: digits.len(),
                max: MAX_WORD_LEN,
            });
        }
        let mut w = Word::empty();
        for &d in digits {
            w = w.push(d)?;
        }
        Ok(w)
    }

    /// Word of length `len` whose packed value is `index`.
    pub fn from_index(len: usize, index: u128) -> Self {
        debug_assert!(len <= MAX_WORD_LEN && index < POW3[len]);
        Word {
            len: len as u8,
            packed: index,
        }
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn index(&self) -> u128 {
        self.packed
    }

    pub fn digit(&self, k: usize) -> u8 {
        assert!(k < self.len(), "digit {k} out of range for word of length {}", self.len);
        ((self.packed / POW3[k]) % 3) as u8
    }

    pub fn digits(&self) -> impl Iterator<Item = u8> + '_ {
        (0..self.len()).map(move |k| self.digit(k))
    }

    pub fn last(&self) -> Option<u8> {
        self.len().checked_sub(1).map(|k| self.digit(k))
    }

    /// `w . d`
    pub fn push(&self, d: u8) -> Result<Self, GeometryError> {
        if d > 2 {
            return Err(GeometryError::InvalidDigit(d));
        }
        if self.len() == MAX_WORD_LEN {
            return Err(GeometryError::WordTooLong {
                len: MAX_WORD_LEN + 1,
                max: MAX_WORD_LEN,
            });
        }
        Ok(Word {
            len: self.len + 1,
            packed: self.packed + d as u128 * POW3[self.len()],
        })
    }

    /// `w . d^count`
    pub fn push_repeated(&self, d: u8, count: usize) -> Result<Self, GeometryError> {
        let mut w = *self;
        for _ in 0..count {
            w = w.push(d)?;
        }
        Ok(w)
    }

    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Word {
            len: n as u8,
            packed: self.packed % POW3[n],
        }
    }

    pub fn is_prefix_of(&self, other: &Word) -> bool {
        self.len <= other.len && other.packed % POW3[self.len()] == self.packed
    }

    /// All `3^n` words of length `n` in index order.
    pub fn all(n: usize) -> impl Iterator<Item = Word> {
        (0..POW3[n]).map(move |i| Word::from_index(n, i))
    }
}

impl Ord for Word {
    /// Lexicographic on digits.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.digits().cmp(other.digits())
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.digits() {
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Word(\"{self}\")")
    }
}

impl FromStr for Word {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits: Vec<u8> = s
            .bytes()
            .map(|c| match c {
                b'0'..=b'2' => Ok(c - b'0'),
                other => Err(GeometryError::InvalidDigit(other.wrapping_sub(b'0'))),
            })
            .collect::<Result<_, _>>()?;
        Word::from_digits(&digits)
    }
}

impl Serialize for Word {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Word {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The planar point `(a / 2^s, b * sqrt(3) / 2^s)` in canonical form:
/// `s == 0` or at least one of `a`, `b` odd.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicPoint {
    s: u32,
    a: i64,
    b: i64,
}

impl DyadicPoint {
    pub fn new(s: u32, a: i64, b: i64) -> Self {
        let (mut s, mut a, mut b) = (s, a, b);
        while s > 0 && a % 2 == 0 && b % 2 == 0 {
            s -= 1;
            a /= 2;
            b /= 2;
        }
        DyadicPoint { s, a, b }
    }

    /// Corner `p_i` of the unit triangle.
    pub fn corner(i: u8) -> Self {
        match i {
            0 => DyadicPoint { s: 0, a: 0, b: 0 },
            1 => DyadicPoint { s: 0, a: 1, b: 0 },
            2 => DyadicPoint { s: 1, a: 1, b: 1 },
            _ => panic!("corner index {i} out of range"),
        }
    }

    pub fn scale(&self) -> u32 {
        self.s
    }

    pub fn a(&self) -> i64 {
        self.a
    }

    pub fn b(&self) -> i64 {
        self.b
    }

    /// Integer coordinates rescaled to `2^s` with `s >= self.s`.
    pub fn at_scale(&self, s: u32) -> (i64, i64) {
        debug_assert!(s >= self.s);
        let k = s - self.s;
        (self.a << k, self.b << k)
    }

    pub fn x(&self) -> f64 {
        self.a as f64 / (self.s as f64).exp2()
    }

    pub fn y(&self) -> f64 {
        self.b as f64 * 3f64.sqrt() / (self.s as f64).exp2()
    }

    pub fn to_f64(&self) -> [f64; 2] {
        [self.x(), self.y()]
    }

    /// `(self + other) / 2`
    pub fn midpoint(&self, other: &DyadicPoint) -> Self {
        let s = self.s.max(other.s);
        let (a0, b0) = self.at_scale(s);
        let (a1, b1) = other.at_scale(s);
        DyadicPoint::new(s + 1, a0 + a1, b0 + b1)
    }

    /// `f_digit(self) = (self + p_digit) / 2`
    pub fn contract(&self, digit: u8) -> Self {
        self.midpoint(&DyadicPoint::corner(digit))
    }

    /// `f_digit^{-1}(self) = 2 * self - p_digit`
    fn expand(&self, digit: u8) -> Self {
        let p = DyadicPoint::corner(digit);
        let s = self.s.max(p.s);
        let (a0, b0) = self.at_scale(s);
        let (a1, b1) = p.at_scale(s);
        let (a, b) = (2 * a0 - a1, 2 * b0 - b1);
        DyadicPoint::new(s, a, b)
    }

    /// Closed unit triangle membership: `0 <= b`, `b <= a`, `b <= 2^s - a`.
    fn in_triangle(&self) -> bool {
        let full = 1i128 << self.s;
        let (a, b) = (self.a as i128, self.b as i128);
        b >= 0 && b <= a && b <= full - a
    }

    /// Exact squared distance as `numerator / 4^scale`.
    pub fn squared_distance(&self, other: &DyadicPoint) -> SquaredDistance {
        let s = self.s.max(other.s);
        let (a0, b0) = self.at_scale(s);
        let (a1, b1) = other.at_scale(s);
        let da = (a0 - a1) as i128;
        let db = (b0 - b1) as i128;
        SquaredDistance {
            numerator: (da * da + 3 * db * db) as u128,
            scale: s,
        }
    }
}

impl fmt::Display for DyadicPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}/2^{}, {}*sqrt3/2^{})", self.a, self.s, self.b, self.s)
    }
}

impl fmt::Debug for DyadicPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DyadicPoint{self}")
    }
}

/// `numerator / 4^scale`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SquaredDistance {
    pub numerator: u128,
    pub scale: u32,
}

impl SquaredDistance {
    pub fn to_f64(&self) -> f64 {
        self.numerator as f64 / (2.0 * self.scale as f64).exp2()
    }

    pub fn to_rational(&self) -> BigRational {
        BigRational::new(
            num_bigint::BigInt::from(self.numerator),
            num_bigint::BigInt::from(1u8) << (2 * self.scale as usize),
        )
    }

    /// Exact comparison with `4^-n`, i.e. distance versus `2^-n`.
    pub fn cmp_pow2(&self, n: u32) -> std::cmp::Ordering {
        // numerator / 4^scale  vs  1 / 4^n
        if n >= self.scale {
            (self.numerator << (2 * (n - self.scale))).cmp(&1)
        } else {
            self.numerator.cmp(&(1u128 << (2 * (self.scale - n))))
        }
    }
}

/// `V_w = f_w(V_0)`, ordered so that entry `j` is `f_w(p_j)`.
pub fn cell_vertices(w: &Word) -> Result<[DyadicPoint; 3], GeometryError> {
    GeometryLimits {
        max_depth: ABSOLUTE_MAX_DEPTH,
        ..Default::default()
    }
    .check_depth(w.len() as u32)?;
    Ok(cell_vertices_unchecked(w))
}

fn cell_vertices_unchecked(w: &Word) -> [DyadicPoint; 3] {
    let mut c = [0u8, 1, 2].map(DyadicPoint::corner);
    for d in w.digits() {
        let anchor = c[d as usize];
        c = c.map(|p| p.midpoint(&anchor));
    }
    c
}

/// `P_w = f_{w_1} o ... o f_{w_{n-1}}(p_{w_n})`
pub fn cell_point(w: &Word) -> Result<DyadicPoint, GeometryError> {
    let last = w.last().ok_or(GeometryError::EmptyWord)?;
    let corners = cell_vertices(&w.prefix(w.len() - 1))?;
    Ok(corners[last as usize])
}

/// Normalized Hausdorff measure of a cell: exactly `3^-level`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellMeasure {
    pub level: u32,
}

impl CellMeasure {
    pub fn of(w: &Word) -> Self {
        CellMeasure { level: w.len() as u32 }
    }

    pub fn exact(&self) -> BigRational {
        pow3_recip(self.level)
    }

    pub fn to_f64(&self) -> f64 {
        3f64.powi(-(self.level as i32))
    }
}

/// Whether a dyadic point belongs to the gasket.
pub fn on_gasket(p: &DyadicPoint) -> bool {
    if !p.in_triangle() {
        return false;
    }
    if p.s <= 1 {
        // scale <= 1 points inside the closed triangle are in V_1
        return true;
    }
    (0..3u8).any(|d| on_gasket(&p.expand(d)))
}

/// All words of length `depth` whose cell contains `point`.
pub fn locate(point: &DyadicPoint, depth: usize) -> Result<Vec<Word>, GeometryError> {
    if depth > MAX_WORD_LEN {
        return Err(GeometryError::WordTooLong {
            len: depth,
            max: MAX_WORD_LEN,
        });
    }
    if !on_gasket(point) {
        return Err(GeometryError::NotOnGasket(*point));
    }
    let mut found = Vec::new();
    locate_rec(*point, Word::empty(), depth, &mut found);
    found.sort();
    Ok(found)
}

fn locate_rec(local: DyadicPoint, w: Word, depth: usize, out: &mut Vec<Word>) {
    if w.len() == depth {
        out.push(w);
        return;
    }
    for d in 0..3u8 {
        let child = local.expand(d);
        if on_gasket(&child) {
            locate_rec(child, w.push(d).expect("depth bounded"), depth, out);
        }
    }
}

/// Dense vertex id into `V_m`. Ids of `V_n` are `0..#V_n` for every `n <= m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexId(pub u32);

impl VertexId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// `#V_m = (3^{m+1} + 3) / 2`
pub fn vertex_count(m: u32) -> u128 {
    (POW3[m as usize + 1] + 3) / 2
}

/// Deduplicated vertex sets `V_0 ⊂ ... ⊂ V_m` with the corner ids of every
/// cell up to level `m`.
#[derive(Debug, Clone)]
pub struct Gasket {
    level: u32,
    points: Vec<DyadicPoint>,
    index: HashMap<DyadicPoint, VertexId>,
    cells: Vec<Vec<[VertexId; 3]>>,
    level_sizes: Vec<usize>,
}

impl Gasket {
    pub fn new(level: u32) -> Result<Self, GeometryError> {
        Self::with_limits(level, &GeometryLimits::default())
    }

    pub fn with_limits(level: u32, limits: &GeometryLimits) -> Result<Self, GeometryError> {
        if level > limits.max_enumeration_level {
            return Err(GeometryError::LevelTooDeep {
                requested: level,
                max: limits.max_enumeration_level,
            });
        }
        limits.check_depth(level)?;

        let mut points: Vec<DyadicPoint> = (0..3u8).map(DyadicPoint::corner).collect();
        let mut index: HashMap<DyadicPoint, VertexId> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (*p, VertexId(i as u32)))
            .collect();
        let mut cells = vec![vec![[VertexId(0), VertexId(1), VertexId(2)]]];
        let mut level_sizes = vec![3usize];

        for n in 0..level as usize {
            let parent = &cells[n];
            let stride = parent.len();
            let mut next = vec![[VertexId(0); 3]; stride * 3];
            for (idx, corners) in parent.iter().enumerate() {
                for d in 0..3usize {
                    let anchor = points[corners[d].index()];
                    let mut child = [VertexId(0); 3];
                    for j in 0..3usize {
                        child[j] = if j == d {
                            corners[d]
                        } else {
                            let m = points[corners[j].index()].midpoint(&anchor);
                            *index.entry(m).or_insert_with(|| {
                                points.push(m);
                                VertexId((points.len() - 1) as u32)
                            })
                        };
                    }
                    next[idx + d * stride] = child;
                }
            }
            cells.push(next);
            level_sizes.push(points.len());
        }

        Ok(Gasket {
            level,
            points,
            index,
            cells,
            level_sizes,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// `#V_n` for `n <= level`.
    pub fn num_vertices(&self, n: u32) -> usize {
        self.level_sizes[n as usize]
    }

    pub fn point(&self, id: VertexId) -> DyadicPoint {
        self.points[id.index()]
    }

    pub fn points(&self) -> &[DyadicPoint] {
        &self.points
    }

    pub fn vertex_id(&self, p: &DyadicPoint) -> Option<VertexId> {
        self.index.get(p).copied()
    }

    /// Corner ids of all level-`n` cells, indexed by word index.
    pub fn cells(&self, n: u32) -> &[[VertexId; 3]] {
        &self.cells[n as usize]
    }

    pub fn cell_corners(&self, w: &Word) -> [VertexId; 3] {
        self.cells[w.len()][w.index() as usize]
    }

    /// Debug dump of `V_m`: `id,s,a,b,x_float,y_float`.
    pub fn write_vertex_csv<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["id", "s", "a", "b", "x_float", "y_float"])?;
        for (i, p) in self.points.iter().enumerate() {
            wtr.write_record(&[
                i.to_string(),
                p.s.to_string(),
                p.a.to_string(),
                p.b.to_string(),
                format!("{:.17e}", p.x()),
                format!("{:.17e}", p.y()),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Word {
        s.parse().unwrap()
    }

    #[test]
    fn contract_examples() {
        let p0 = DyadicPoint::corner(0);
        assert_eq!(p0.contract(0), p0);
        assert_eq!(DyadicPoint::corner(1).contract(2), DyadicPoint::new(2, 3, 1));
        let p2 = DyadicPoint::corner(2);
        assert_eq!(p2.contract(2), p2);
    }

    #[test]
    fn canonical_form_removes_common_factors() {
        let p = DyadicPoint::new(3, 4, 0);
        assert_eq!((p.scale(), p.a(), p.b()), (1, 1, 0));
        assert_eq!(DyadicPoint::new(5, 0, 0), DyadicPoint::corner(0));
    }

    #[test]
    fn cell_vertices_examples() {
        let v = cell_vertices(&Word::empty()).unwrap();
        assert_eq!(v, [0, 1, 2].map(DyadicPoint::corner));
        let v0 = cell_vertices(&w("0")).unwrap();
        assert_eq!(
            v0,
            [
                DyadicPoint::corner(0),
                DyadicPoint::new(1, 1, 0),
                DyadicPoint::new(2, 1, 1)
            ]
        );
        for word in Word::all(3) {
            let v = cell_vertices(&word).unwrap();
            for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                let d = v[i].squared_distance(&v[j]);
                assert_eq!(d.to_rational(), BigRational::new(1.into(), 64.into()));
            }
        }
    }

    #[test]
    fn cell_point_examples() {
        assert_eq!(cell_point(&w("1")).unwrap(), DyadicPoint::corner(1));
        assert_eq!(cell_point(&w("01")).unwrap(), DyadicPoint::new(1, 1, 0));
        assert_eq!(cell_point(&w("220")).unwrap(), DyadicPoint::new(3, 3, 3));
        assert_eq!(cell_point(&Word::empty()), Err(GeometryError::EmptyWord));
    }

    #[test]
    fn enumerate_counts() {
        let g = Gasket::new(5).unwrap();
        assert_eq!(g.num_vertices(0), 3);
        assert_eq!(g.num_vertices(1), 6);
        assert_eq!(g.num_vertices(4), 123);
        assert_eq!(g.num_vertices(5), 366);
        assert!(matches!(
            Gasket::with_limits(
                9,
                &GeometryLimits {
                    max_depth: 40,
                    max_enumeration_level: 8
                }
            ),
            Err(GeometryError::LevelTooDeep { .. })
        ));
    }

    #[test]
    fn locate_examples() {
        assert_eq!(locate(&DyadicPoint::corner(0), 1).unwrap(), vec![w("0")]);
        let mid = DyadicPoint::new(1, 1, 0);
        assert_eq!(locate(&mid, 1).unwrap(), vec![w("0"), w("1")]);
        assert_eq!(locate(&mid, 2).unwrap(), vec![w("01"), w("10")]);
        // inside the central hole
        let hole = DyadicPoint::new(3, 4, 1);
        assert!(matches!(locate(&hole, 2), Err(GeometryError::NotOnGasket(_))));
    }

    #[test]
    fn word_prefix_and_digits() {
        let x = w("0121");
        assert_eq!(x.len(), 4);
        assert_eq!(x.digits().collect::<Vec<_>>(), vec![0, 1, 2, 1]);
        assert!(w("01").is_prefix_of(&x));
        assert!(!w("02").is_prefix_of(&x));
        assert!(Word::empty().is_prefix_of(&x));
        assert_eq!(x.prefix(2), w("01"));
        assert_eq!(x.to_string(), "0121");
        assert!("013".parse::<Word>().is_err());
    }

    #[test]
    fn squared_distance_compare() {
        let d = DyadicPoint::corner(0).squared_distance(&DyadicPoint::new(1, 1, 0));
        assert_eq!(d.cmp_pow2(1), std::cmp::Ordering::Equal);
        assert_eq!(d.cmp_pow2(0), std::cmp::Ordering::Less);
        assert_eq!(d.cmp_pow2(2), std::cmp::Ordering::Greater);
    }

    #[test]
    fn depth_limit_is_reported() {
        let deep = Word::from_digits(&[1u8; 61]).unwrap();
        assert!(matches!(
            cell_vertices(&deep),
            Err(GeometryError::DepthExceeded { requested: 61, .. })
        ));
        assert!(GeometryLimits::default().check_depth(41).is_err());
    }
}
