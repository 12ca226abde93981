//! Radial finite-volume grid in `d` dimensions and density snapshots on it.

use std::f64::consts::PI;
use std::sync::Arc;

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Area `2 π^{d/2} / Γ(d/2)` of the unit sphere in ℝᵈ.
pub fn sphere_area(d: usize) -> f64 {
    let half = 0.5 * d as f64;
    2.0 * PI.powf(half) / gamma(half)
}

pub const MIN_CELLS: usize = 4;

/// Cells `[r_{i-1/2}, r_{i+1/2}]` of a ball of radius `R_max`, with the
/// `d`-dimensional shell volumes and face areas the flux form needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    pub d: usize,
    /// `N + 1` increasing edges from 0 to `R_max`.
    pub edges: Vec<f64>,
    /// Cell midpoints.
    pub centers: Vec<f64>,
    /// Shell volumes `ω_d (r_{i+1/2}^d - r_{i-1/2}^d) / d`.
    pub volumes: Vec<f64>,
    /// Face areas `ω_d r^{d-1}` at every edge; the first one is zero.
    pub areas: Vec<f64>,
    /// Volume of the shell between consecutive centers (`N - 1` entries).
    pub dual_volumes: Vec<f64>,
}

/// Geometric grid: each cell is `stretch` times wider than the previous one.
pub fn build_grid(d: usize, r_max: f64, n: usize, stretch: f64) -> Result<RadialGrid> {
    if d < 1 {
        return Err(Error::Grid("dimension must be >= 1".into()));
    }
    if !(r_max > 0.0) || !r_max.is_finite() {
        return Err(Error::Grid(format!("R_max must be positive, got {r_max}")));
    }
    if n < MIN_CELLS {
        return Err(Error::Grid(format!("need at least {MIN_CELLS} cells, got {n}")));
    }
    if !(stretch >= 1.0) || !stretch.is_finite() {
        return Err(Error::Grid(format!("stretch must be >= 1, got {stretch}")));
    }
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(0.0);
    if stretch == 1.0 {
        edges.extend((1..=n).map(|i| r_max * i as f64 / n as f64));
    } else {
        let first = r_max * (stretch - 1.0) / (stretch.powi(n as i32) - 1.0);
        let mut width = first;
        let mut r = 0.0;
        for _ in 1..n {
            r += width;
            edges.push(r);
            width *= stretch;
        }
        edges.push(r_max);
    }
    if edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Grid("edges are not strictly increasing (stretch too large for N)".into()));
    }
    Ok(RadialGrid::from_edges(d, edges))
}

impl RadialGrid {
    fn from_edges(d: usize, edges: Vec<f64>) -> Self {
        let omega = sphere_area(d);
        let df = d as f64;
        let shell = |a: f64, b: f64| omega * (b.powi(d as i32) - a.powi(d as i32)) / df;
        let centers: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let volumes = edges.windows(2).map(|w| shell(w[0], w[1])).collect();
        let areas = edges
            .iter()
            .map(|&r| if r == 0.0 { 0.0 } else { omega * r.powi(d as i32 - 1) })
            .collect();
        let dual_volumes = centers.windows(2).map(|w| shell(w[0], w[1])).collect();
        Self { d, edges, centers, volumes, areas, dual_volumes }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn r_max(&self) -> f64 {
        *self.edges.last().expect("grid has edges")
    }

    pub fn width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    /// Volume of the whole ball, `ω_d R_max^d / d`.
    pub fn ball_volume(&self) -> f64 {
        sphere_area(self.d) * self.r_max().powi(self.d as i32) / self.d as f64
    }

    /// `∫ f dx ≈ Σ f_i V_i`.
    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.len() {
            return Err(Error::LengthMismatch { expected: self.len(), got: f.len() });
        }
        Ok(self.weighted_sum(f.iter().copied()))
    }

    pub(crate) fn weighted_sum(&self, f: impl Iterator<Item = f64>) -> f64 {
        f.zip(&self.volumes).map(|(v, w)| v * w).sum()
    }

    /// Samples `f` at cell centers.
    pub fn sample<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.centers.iter().map(|&r| f(r)).collect()
    }
}

/// Cell-averaged radial density at time `t`.
#[derive(Debug, Clone)]
pub struct DensityState {
    pub u: Vec<f64>,
    pub t: f64,
    pub grid: Arc<RadialGrid>,
}

impl DensityState {
    pub fn new(u: Vec<f64>, t: f64, grid: Arc<RadialGrid>) -> Result<Self> {
        if u.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: u.len() });
        }
        if let Some((i, &value)) = u.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::NegativeDensity { r: grid.centers[i], value });
        }
        Ok(Self { u, t, grid })
    }

    pub fn mass(&self) -> f64 {
        self.grid.weighted_sum(self.u.iter().copied())
    }

    pub fn max_density(&self) -> f64 {
        self.u.iter().copied().fold(0.0, f64::max)
    }

    /// `∫ |u - g| dx` against a reference sampled at cell centers.
    pub fn l1_distance<F: Fn(f64) -> f64>(&self, reference: F) -> f64 {
        self.grid.weighted_sum(self.u.iter().zip(&self.grid.centers).map(|(u, &r)| (u - reference(r)).abs()))
    }
}

/// Midpoint-samples `f` into a density state at `t = 0`, optionally rescaled
/// to unit mass.
pub fn project_initial<F: Fn(f64) -> f64>(f: F, grid: Arc<RadialGrid>, renormalize: bool) -> Result<DensityState> {
    let mut u = Vec::with_capacity(grid.len());
    for &r in &grid.centers {
        let value = f(r);
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::NegativeDensity { r, value });
        }
        u.push(value);
    }
    let mass = grid.weighted_sum(u.iter().copied());
    if !(mass > 0.0) {
        return Err(Error::ZeroMass);
    }
    if renormalize {
        u.iter_mut().for_each(|v| *v /= mass);
    }
    DensityState::new(u, 0.0, grid)
}

/// Stretch factor giving a first cell of width `first_width` on `n` cells of `[0, r_max]`.
pub fn stretch_for_first_width(r_max: f64, n: usize, first_width: f64) -> Result<f64> {
    if !(first_width > 0.0) || n < MIN_CELLS {
        return Err(Error::Grid(format!("invalid first width {first_width} for {n} cells")));
    }
    if first_width * n as f64 >= r_max {
        return Ok(1.0);
    }
    let first = |s: f64| r_max * (s - 1.0) / (s.powi(n as i32) - 1.0);
    let (mut lo, mut hi) = (1.0 + 1e-15, 2.0);
    while first(hi) > first_width {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if first(mid) > first_width {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
