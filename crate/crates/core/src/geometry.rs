//! Geometry of the flat torus `R² / Z²`.
//!
//! The torus is identified with the fundamental domain `[-1/2, 1/2)²`. A
//! conditioning point `a` on the torus has the lattice of lifts
//! `{a + k : k ∈ Z²}` in the plane. The plane splits into the open unit
//! squares `V_k = (a + k) + (-1/2, 1/2)²`, on each of which the nearest lift
//! is unique, and the grid of boundary lines between them (the cut locus),
//! on which it is not.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point (or vector) in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EuclideanPoint {
    pub x1: f64,
    pub x2: f64,
}

impl EuclideanPoint {
    pub const ZERO: EuclideanPoint = EuclideanPoint { x1: 0.0, x2: 0.0 };

    pub const fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2 }
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite()
    }

    /// Returns `self` if both coordinates are finite.
    pub fn checked(self) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::InvalidInput(format!(
                "non-finite point ({}, {})",
                self.x1, self.x2
            )))
        }
    }

    pub fn dot(&self, other: &EuclideanPoint) -> f64 {
        self.x1 * other.x1 + self.x2 * other.x2
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.x1.hypot(self.x2)
    }
}

impl Add for EuclideanPoint {
    type Output = EuclideanPoint;
    fn add(self, rhs: Self) -> Self {
        EuclideanPoint::new(self.x1 + rhs.x1, self.x2 + rhs.x2)
    }
}

impl AddAssign for EuclideanPoint {
    fn add_assign(&mut self, rhs: Self) {
        self.x1 += rhs.x1;
        self.x2 += rhs.x2;
    }
}

impl Sub for EuclideanPoint {
    type Output = EuclideanPoint;
    fn sub(self, rhs: Self) -> Self {
        EuclideanPoint::new(self.x1 - rhs.x1, self.x2 - rhs.x2)
    }
}

impl Neg for EuclideanPoint {
    type Output = EuclideanPoint;
    fn neg(self) -> Self {
        EuclideanPoint::new(-self.x1, -self.x2)
    }
}

impl Mul<f64> for EuclideanPoint {
    type Output = EuclideanPoint;
    fn mul(self, rhs: f64) -> Self {
        EuclideanPoint::new(self.x1 * rhs, self.x2 * rhs)
    }
}

impl From<(f64, f64)> for EuclideanPoint {
    fn from((x1, x2): (f64, f64)) -> Self {
        EuclideanPoint::new(x1, x2)
    }
}

/// A point of the torus, stored as its representative in `[-1/2, 1/2)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "(f64, f64)", into = "(f64, f64)")]
pub struct TorusPoint {
    u1: f64,
    u2: f64,
}

impl TorusPoint {
    pub const ORIGIN: TorusPoint = TorusPoint { u1: 0.0, u2: 0.0 };

    /// Builds a torus point from coordinates already in the fundamental domain.
    pub fn new(u1: f64, u2: f64) -> Result<Self> {
        if in_half_open_unit(u1) && in_half_open_unit(u2) {
            Ok(Self { u1, u2 })
        } else {
            Err(Error::InvalidInput(format!(
                "torus coordinates ({u1}, {u2}) outside [-1/2, 1/2)"
            )))
        }
    }

    pub fn u1(&self) -> f64 {
        self.u1
    }

    pub fn u2(&self) -> f64 {
        self.u2
    }

    /// The representative as a plane point.
    pub fn embed(&self) -> EuclideanPoint {
        EuclideanPoint::new(self.u1, self.u2)
    }
}

impl TryFrom<(f64, f64)> for TorusPoint {
    type Error = Error;
    fn try_from((u1, u2): (f64, f64)) -> Result<Self> {
        TorusPoint::new(u1, u2)
    }
}

impl From<TorusPoint> for (f64, f64) {
    fn from(p: TorusPoint) -> Self {
        (p.u1, p.u2)
    }
}

fn in_half_open_unit(u: f64) -> bool {
    (-0.5..0.5).contains(&u)
}

/// Conditioning point `a` on the torus; its lifts are `a + k`, `k ∈ Z²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeTarget {
    pub a: TorusPoint,
}

impl LatticeTarget {
    pub fn new(a: TorusPoint) -> Self {
        Self { a }
    }

    /// The lift `a + k`.
    pub fn lift(&self, k: LatticeOffset) -> EuclideanPoint {
        EuclideanPoint::new(self.a.u1 + k.0 as f64, self.a.u2 + k.1 as f64)
    }

    /// Lifts `a + k` for `‖k‖∞ ≤ radius`, row-major in `(k1, k2)`.
    pub fn lifts_within(&self, radius: u32) -> impl Iterator<Item = EuclideanPoint> + '_ {
        let r = radius as i64;
        (-r..=r).flat_map(move |k1| (-r..=r).map(move |k2| self.lift((k1, k2))))
    }

    /// The open square `V_k` around the lift `a + k`.
    pub fn fundamental_square(&self, k: LatticeOffset) -> OpenSquare {
        OpenSquare {
            center: self.lift(k),
            half_width: 0.5,
        }
    }
}

impl Default for LatticeTarget {
    fn default() -> Self {
        Self::new(TorusPoint::ORIGIN)
    }
}

/// Integer translate `k ∈ Z²` of a lattice target.
pub type LatticeOffset = (i64, i64);

/// Axis-aligned open square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpenSquare {
    pub center: EuclideanPoint,
    pub half_width: f64,
}

impl OpenSquare {
    pub fn contains(&self, p: &EuclideanPoint) -> bool {
        (p.x1 - self.center.x1).abs() < self.half_width
            && (p.x2 - self.center.x2).abs() < self.half_width
    }
}

/// Canonical projection onto the fundamental domain.
pub fn project(p: EuclideanPoint) -> Result<TorusPoint> {
    let p = p.checked()?;
    Ok(TorusPoint {
        u1: wrap_unit(p.x1),
        u2: wrap_unit(p.x2),
    })
}

fn wrap_unit(v: f64) -> f64 {
    if in_half_open_unit(v) {
        return v;
    }
    let mut u = v - v.floor();
    // tiny negative inputs round up to exactly 1.0
    if u >= 1.0 {
        u = 0.0;
    }
    if u >= 0.5 {
        u -= 1.0;
    }
    u
}

/// Fractional offset `x - a - floor(x - a)` per coordinate, exact in floating point.
fn fractional_offset(x: &EuclideanPoint, target: &LatticeTarget) -> (f64, f64) {
    let d1 = x.x1 - target.a.u1;
    let d2 = x.x2 - target.a.u2;
    (d1 - d1.floor(), d2 - d2.floor())
}

/// True iff `x` lies on a boundary line between two squares `V_k`.
pub fn is_on_cut_locus(x: EuclideanPoint, target: &LatticeTarget) -> Result<bool> {
    is_within_cut_band(x, target, 0.0)
}

/// Cut-locus test widened to the band `|frac(x - a) - 1/2| ≤ band`.
/// With `band = 0` this is exact membership.
pub fn is_within_cut_band(x: EuclideanPoint, target: &LatticeTarget, band: f64) -> Result<bool> {
    let x = x.checked()?;
    let (f1, f2) = fractional_offset(&x, target);
    Ok((f1 - 0.5).abs() <= band || (f2 - 0.5).abs() <= band)
}

/// Offset `k` of the nearest lift `a + k`, or `None` on the cut locus.
pub fn nearest_offset(x: EuclideanPoint, target: &LatticeTarget) -> Result<Option<LatticeOffset>> {
    let x = x.checked()?;
    if is_on_cut_locus(x, target)? {
        return Ok(None);
    }
    let d1 = x.x1 - target.a.u1;
    let d2 = x.x2 - target.a.u2;
    Ok(Some((d1.round() as i64, d2.round() as i64)))
}

/// Nearest lift `α(x) = a + round(x - a)`.
///
/// Fails with [`Error::AmbiguousArgmin`] on the cut locus, where two or more
/// lifts are equally close.
pub fn lift_nearest(x: EuclideanPoint, target: &LatticeTarget) -> Result<EuclideanPoint> {
    match nearest_offset(x, target)? {
        Some(k) => Ok(target.lift(k)),
        None => Err(Error::AmbiguousArgmin { x1: x.x1, x2: x.x2 }),
    }
}

/// Geodesic distance on the torus between two fundamental-domain points.
pub fn torus_distance(p: &TorusPoint, q: &TorusPoint) -> f64 {
    let d = p.embed() - q.embed();
    let mut best = f64::INFINITY;
    for k1 in -1..=1 {
        for k2 in -1..=1 {
            let shifted = d + EuclideanPoint::new(k1 as f64, k2 as f64);
            best = best.min(shifted.norm());
        }
    }
    best
}
