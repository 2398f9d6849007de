//! Time knots, the truncated spatial grid, and the triangular product grid
//! shared by the field solvers.

use crate::error::{Error, Result};

/// Strictly increasing time knots `r_0 < … < r_J`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidInput("empty time grid".into()));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "time knots must be strictly increasing".into(),
            ));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidInput("non-finite time knot".into()));
        }
        Ok(Self { knots })
    }

    /// `steps + 1` uniform knots on `[t0, t1]`; the last knot is exactly `t1`.
    pub fn uniform(t0: f64, t1: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Self::new(vec![t0]);
        }
        if t1 <= t0 {
            return Err(Error::InvalidInput("uniform grid needs t1 > t0".into()));
        }
        let dt = (t1 - t0) / steps as f64;
        let mut knots: Vec<f64> = (0..=steps).map(|j| t0 + j as f64 * dt).collect();
        knots[steps] = t1;
        Self::new(knots)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn first(&self) -> f64 {
        self.knots[0]
    }

    pub fn last(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    /// Index of a knot equal to `t` within floating tolerance.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * (1.0 + self.last().abs());
        let i = self.knots.partition_point(|&k| k < t - tol);
        if i < self.knots.len() && (self.knots[i] - t).abs() <= tol {
            Some(i)
        } else {
            None
        }
    }

    /// True when every knot of `other` is a knot of `self`.
    pub fn contains_grid(&self, other: &TimeGrid) -> bool {
        other.knots.iter().all(|&t| self.index_of(t).is_some())
    }
}

/// Uniform spatial grid `lo, lo+h, …, lo+(n-1)h`, used for both the frozen
/// argument ξ and the running argument x.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceGrid {
    pub lo: f64,
    pub h: f64,
    pub n: usize,
}

impl SpaceGrid {
    /// Symmetric grid on [-radius, radius] with `n` points (n odd keeps 0 on
    /// the grid).
    pub fn symmetric(radius: f64, n: usize) -> Result<Self> {
        if n < 5 {
            return Err(Error::InvalidInput("spatial grid needs >= 5 points".into()));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidInput("radius must be positive".into()));
        }
        Ok(Self {
            lo: -radius,
            h: 2.0 * radius / (n - 1) as f64,
            n,
        })
    }

    #[inline]
    pub fn point(&self, i: usize) -> f64 {
        self.lo + self.h * i as f64
    }

    pub fn hi(&self) -> f64 {
        self.point(self.n - 1)
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    /// Left index and weight for linear interpolation at `x` (clamped).
    #[inline]
    pub fn locate(&self, x: f64) -> (usize, f64) {
        crate::math::locate_uniform(self.lo, self.h, self.n, x)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi()
    }
}

/// Which (t, s) knots a solved field keeps. The diagonal is always kept at
/// full s-resolution; this only controls the stored 4-d blocks.
#[derive(Debug, Clone, PartialEq)]
pub enum StoreSelect {
    /// Keep every knot.
    All,
    /// Keep knots whose index is a multiple of the stride (plus the last).
    Stride(usize),
    /// Keep exactly these knot indices (sorted, deduplicated at use).
    Indices(Vec<usize>),
    /// Keep nothing.
    None,
}

impl StoreSelect {
    pub fn indices(&self, len: usize) -> Vec<usize> {
        match self {
            StoreSelect::All => (0..len).collect(),
            StoreSelect::Stride(k) => {
                let k = (*k).max(1);
                let mut v: Vec<usize> = (0..len).step_by(k).collect();
                if *v.last().unwrap_or(&0) != len - 1 {
                    v.push(len - 1);
                }
                v
            }
            StoreSelect::Indices(ix) => {
                let mut v: Vec<usize> = ix.iter().copied().filter(|&i| i < len).collect();
                v.sort_unstable();
                v.dedup();
                v
            }
            StoreSelect::None => Vec::new(),
        }
    }
}

/// Product grid for fields on the triangle `t <= s`: a shared knot vector for
/// t and s, and one spatial grid serving both ξ and x.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleGrid {
    pub time: TimeGrid,
    pub space: SpaceGrid,
    /// Hölder exponent used by the diagnostics built on this grid.
    pub alpha: f64,
}

impl TriangleGrid {
    pub fn new(time: TimeGrid, space: SpaceGrid) -> Self {
        Self {
            time,
            space,
            alpha: 0.5,
        }
    }

    pub fn uniform(t_max: f64, n_steps: usize, radius: f64, n_space: usize) -> Result<Self> {
        Ok(Self::new(
            TimeGrid::uniform(0.0, t_max, n_steps)?,
            SpaceGrid::symmetric(radius, n_space)?,
        ))
    }

    pub fn n_knots(&self) -> usize {
        self.time.len()
    }

    pub fn n_space(&self) -> usize {
        self.space.n
    }
}

/// Values on a (time × space) product grid, point-major with m components.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn2 {
    pub time: TimeGrid,
    pub space: SpaceGrid,
    pub m: usize,
    /// `[time][space][m]`
    pub values: Vec<f64>,
}

impl GridFn2 {
    pub fn zeros(time: TimeGrid, space: SpaceGrid, m: usize) -> Self {
        let values = vec![0.0; time.len() * space.n * m];
        Self {
            time,
            space,
            m,
            values,
        }
    }

    pub fn from_fn(time: TimeGrid, space: SpaceGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut g = Self::zeros(time, space, 1);
        for j in 0..g.time.len() {
            let t = g.time.knots()[j];
            for l in 0..g.space.n {
                let x = g.space.point(l);
                g.values[j * g.space.n + l] = f(t, x);
            }
        }
        g
    }

    #[inline]
    pub fn at(&self, time_idx: usize, space_idx: usize, comp: usize) -> f64 {
        self.values[(time_idx * self.space.n + space_idx) * self.m + comp]
    }

    #[inline]
    pub fn row(&self, time_idx: usize) -> &[f64] {
        let w = self.space.n * self.m;
        &self.values[time_idx * w..(time_idx + 1) * w]
    }

    #[inline]
    pub fn row_mut(&mut self, time_idx: usize) -> &mut [f64] {
        let w = self.space.n * self.m;
        &mut self.values[time_idx * w..(time_idx + 1) * w]
    }

    /// Linear interpolation in space at a fixed time knot (component 0).
    pub fn interp_space(&self, time_idx: usize, x: f64, comp: usize) -> f64 {
        let (i, w) = self.space.locate(x);
        (1.0 - w) * self.at(time_idx, i, comp) + w * self.at(time_idx, i + 1, comp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_hits_endpoint_exactly() {
        let g = TimeGrid::uniform(0.0, 1.0, 7).unwrap();
        assert_eq!(g.last(), 1.0);
        assert_eq!(g.len(), 8);
        assert_eq!(g.index_of(1.0), Some(7));
    }

    #[test]
    fn rejects_non_increasing() {
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, -0.1]).is_err());
    }

    #[test]
    fn grid_containment() {
        let fine = TimeGrid::uniform(0.0, 1.0, 200).unwrap();
        let coarse = TimeGrid::uniform(0.0, 1.0, 50).unwrap();
        assert!(fine.contains_grid(&coarse));
        assert!(!coarse.contains_grid(&fine));
    }

    #[test]
    fn store_select_always_keeps_last() {
        let ix = StoreSelect::Stride(8).indices(21);
        assert_eq!(ix.first(), Some(&0));
        assert_eq!(ix.last(), Some(&20));
    }

    #[test]
    fn space_grid_symmetric() {
        let g = SpaceGrid::symmetric(8.0, 401).unwrap();
        assert_eq!(g.point(200), 0.0);
        assert_eq!(g.hi(), 8.0);
        let (i, w) = g.locate(0.02);
        assert_eq!(i, 200);
        assert!((w - 0.5).abs() < 1e-12);
    }
}
