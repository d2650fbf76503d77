//! 2-D points and the landmark/displacement collections built from them.

use std::ops::{Add, Deref, Index, Mul, Sub};

use crate::error::{Error, Result};

/// A point or vector in pixel coordinates. Pixel centers sit at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ZERO: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_squared(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn lerp(self, other: Point2, t: f64) -> Point2 {
        Point2::new((1.0 - t) * self.x + t * other.x, (1.0 - t) * self.y + t * other.y)
    }
}

impl From<(f64, f64)> for Point2 {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

macro_rules! point_list {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Default)]
        pub struct $name(Vec<Point2>);

        impl $name {
            /// Fails if any coordinate is NaN or infinite.
            pub fn new(points: Vec<Point2>) -> Result<Self> {
                if points.iter().any(|p| !p.is_finite()) {
                    return Err(Error::NonFinite($what));
                }
                Ok(Self(points))
            }

            pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
                Self::new(pairs.iter().copied().map(Point2::from).collect())
            }

            pub fn points(&self) -> &[Point2] {
                &self.0
            }

            pub fn into_inner(self) -> Vec<Point2> {
                self.0
            }
        }

        impl Deref for $name {
            type Target = [Point2];
            fn deref(&self) -> &[Point2] {
                &self.0
            }
        }

        impl Index<usize> for $name {
            type Output = Point2;
            fn index(&self, i: usize) -> &Point2 {
                &self.0[i]
            }
        }
    };
}

point_list!(
    /// Ordered landmark positions. Index `i` names the same facial feature on every face.
    LandmarkSet,
    "landmarks"
);

point_list!(
    /// Per-landmark displacement vectors, paired by index with a [`LandmarkSet`].
    Displacements,
    "displacements"
);

impl LandmarkSet {
    /// `self - base`, index by index.
    pub fn displacement_from(&self, base: &LandmarkSet) -> Result<Displacements> {
        check_len("landmark sets", base.len(), self.len())?;
        Ok(Displacements(
            self.iter().zip(base.iter()).map(|(&a, &b)| a - b).collect(),
        ))
    }

    /// Per-index arithmetic mean of several equally sized sets.
    pub fn mean_of<'a>(sets: impl IntoIterator<Item = &'a LandmarkSet>) -> Result<LandmarkSet> {
        let mut iter = sets.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InvalidArgument("mean of zero landmark sets".into()))?;
        let mut acc: Vec<Point2> = first.0.clone();
        let mut count = 1usize;
        for set in iter {
            check_len("landmark sets", acc.len(), set.len())?;
            for (a, p) in acc.iter_mut().zip(set.iter()) {
                *a = *a + *p;
            }
            count += 1;
        }
        let n = count as f64;
        Ok(LandmarkSet(
            acc.into_iter().map(|p| Point2::new(p.x / n, p.y / n)).collect(),
        ))
    }

    /// `(1 - t) * self + t * other`.
    pub fn lerp(&self, other: &LandmarkSet, t: f64) -> Result<LandmarkSet> {
        check_len("landmark sets", self.len(), other.len())?;
        Ok(LandmarkSet(
            self.iter().zip(other.iter()).map(|(&a, &b)| a.lerp(b, t)).collect(),
        ))
    }

    /// Frobenius norm of the difference of two landmark matrices.
    pub fn frobenius_distance(&self, other: &LandmarkSet) -> Result<f64> {
        check_len("landmark sets", self.len(), other.len())?;
        Ok(self
            .iter()
            .zip(other.iter())
            .map(|(&a, &b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt())
    }
}

impl Displacements {
    pub fn zeros(n: usize) -> Self {
        Self(vec![Point2::ZERO; n])
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::shape(what, expected, found))
    }
}

/// Convex hull by Andrew's monotone chain. Vertices come out with positive
/// signed area in (x, y); collinear boundary points are dropped.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: Point2, a: Point2, b: Point2| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    let mut hull: Vec<Point2> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}
