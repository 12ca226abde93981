//! Explicit, mass-conservative finite-volume evolution of `u_t = Δ(u^p)` in
//! radial flux form.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DensityState, RadialGrid};
use crate::params::ModelParams;

/// Clipped mass above this budget is reported on the trajectory.
pub const CLIPPED_MASS_BUDGET: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Safety factor on the diffusive step limit, in `(0, 1]`.
    pub cfl: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    /// Density floor used only inside the step-size bound. `None` picks
    /// `1e-10 * max u₀` for `p < 1` and `0` for `p > 1`.
    pub u_floor: Option<f64>,
    /// Diagnostic cadence in simulated time.
    pub record_every: f64,
    /// If set, records start at this time and grow geometrically until their
    /// spacing reaches `record_every`, resolving the initial layer.
    pub record_log_start: Option<f64>,
    /// Geometric records per decade of time.
    pub record_per_decade: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            cfl: 0.4,
            dt_max: 1e-2,
            dt_min: 1e-14,
            u_floor: None,
            record_every: 0.05,
            record_log_start: None,
            record_per_decade: 20,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::Config(format!("cfl must lie in (0, 1], got {}", self.cfl)));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_max) {
            return Err(Error::Config(format!(
                "need 0 < dt_min <= dt_max, got dt_min = {}, dt_max = {}",
                self.dt_min, self.dt_max
            )));
        }
        if let Some(floor) = self.u_floor {
            if !(floor >= 0.0) {
                return Err(Error::Config(format!("u_floor must be nonnegative, got {floor}")));
            }
        }
        if !(self.record_every > 0.0) {
            return Err(Error::Config(format!("record_every must be positive, got {}", self.record_every)));
        }
        if let Some(start) = self.record_log_start {
            if !(start > 0.0 && start < self.record_every) {
                return Err(Error::Config(format!(
                    "record_log_start must lie in (0, record_every), got {start}"
                )));
            }
            if self.record_per_decade == 0 {
                return Err(Error::Config("record_per_decade must be positive".into()));
            }
        }
        Ok(())
    }

    /// Record times after `t0` up to and including `t_end`, as offsets from `t0`.
    pub fn record_offsets(&self, span: f64) -> Vec<f64> {
        let every = self.record_every;
        let mut out = Vec::new();
        let mut k = 1u64;
        if let Some(start) = self.record_log_start {
            // Geometric spacing until its step would exceed the cadence.
            let ratio = 10f64.powf(1.0 / self.record_per_decade as f64);
            let mut t = start;
            while t * (ratio - 1.0) < every && t < span {
                out.push(t);
                t *= ratio;
            }
            let last = out.last().copied().unwrap_or(0.0);
            k = (last / every).floor() as u64 + 1;
            if k as f64 * every - last < 0.5 * every {
                k += 1;
            }
        }
        loop {
            let t = k as f64 * every;
            // A final sliver shorter than 1e-9 of the cadence merges into the last interval.
            if t >= span || span - t < 1e-9 * every {
                break;
            }
            out.push(t);
            k += 1;
        }
        if span > 0.0 {
            out.push(span);
        }
        out
    }
}

/// Recorded output of an evolution plus solver counters.
#[derive(Debug, Clone)]
pub struct Trajectory<R> {
    pub records: Vec<R>,
    pub steps: usize,
    /// Total mass added by clipping negative undershoots to zero.
    pub clipped_mass: f64,
    pub warnings: Vec<String>,
}

/// Owns the precomputed stencil coefficients and counters for one evolution.
#[derive(Debug, Clone)]
pub struct Solver {
    params: ModelParams,
    config: SolverConfig,
    grid: Arc<RadialGrid>,
    /// `A_{i+1/2} / (r_{i+1} - r_i)` on interior faces.
    face_coeff: Vec<f64>,
    inv_volume: Vec<f64>,
    /// `Δr_i² / (2d)`.
    step_geometry: Vec<f64>,
    u_floor: f64,
    floor_diffusivity: f64,
    blowup_limit: f64,
    powers: Vec<f64>,
    flux: Vec<f64>,
    pub steps: usize,
    pub clipped_mass: f64,
    pub last_dt: f64,
}

impl Solver {
    pub fn new(params: ModelParams, config: SolverConfig, initial: &DensityState) -> Result<Self> {
        params.validate()?;
        config.validate()?;
        let grid = initial.grid.clone();
        let n = grid.len();
        let face_coeff = (0..n - 1)
            .map(|i| grid.areas[i + 1] / (grid.centers[i + 1] - grid.centers[i]))
            .collect();
        let inv_volume = grid.volumes.iter().map(|v| 1.0 / v).collect();
        let two_d = 2.0 * params.dim();
        let step_geometry = (0..n).map(|i| grid.width(i).powi(2) / two_d).collect();
        let max0 = initial.max_density();
        let u_floor = config.u_floor.unwrap_or(if params.p < 1.0 { 1e-10 * max0 } else { 0.0 });
        let floor_diffusivity =
            if params.p < 1.0 { params.p * u_floor.powf(params.p - 1.0) } else { 0.0 };
        Ok(Self {
            params,
            config,
            grid,
            face_coeff,
            inv_volume,
            step_geometry,
            u_floor,
            floor_diffusivity,
            blowup_limit: 10.0 * max0,
            powers: vec![0.0; n],
            flux: vec![0.0; n + 1],
            steps: 0,
            clipped_mass: 0.0,
            last_dt: 0.0,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn u_floor(&self) -> f64 {
        self.u_floor
    }

    fn power(&self, u: f64) -> f64 {
        if u <= 0.0 {
            0.0
        } else if self.params.p == 2.0 {
            u * u
        } else {
            u.powf(self.params.p)
        }
    }

    /// Local diffusivity `p max(u, floor)^{p-1}` given `u` and `u^p`.
    fn diffusivity(&self, u: f64, w: f64) -> f64 {
        let p = self.params.p;
        if p < 1.0 {
            if u > self.u_floor && u > 0.0 {
                p * w / u
            } else {
                self.floor_diffusivity
            }
        } else if u > 0.0 {
            p * w / u
        } else {
            0.0
        }
    }

    fn bounded_dt(&self, raw: f64) -> Result<f64> {
        if !(raw >= self.config.dt_min) {
            return Err(Error::Stiffness { dt: raw, dt_min: self.config.dt_min });
        }
        Ok(raw.min(self.config.dt_max))
    }

    /// `cfl · min_i Δr_i² / (2d D_i)` clamped to `[dt_min, dt_max]`.
    pub fn stable_dt(&self, state: &DensityState) -> Result<f64> {
        let mut bound = f64::INFINITY;
        for (i, &u) in state.u.iter().enumerate() {
            let diffusivity = self.diffusivity(u, self.power(u));
            if diffusivity > 0.0 {
                bound = bound.min(self.step_geometry[i] / diffusivity);
            }
        }
        self.bounded_dt(self.config.cfl * bound)
    }

    /// Advances by one stable step.
    pub fn step(&mut self, state: &mut DensityState) -> Result<f64> {
        self.advance(state, f64::INFINITY)
    }

    /// Advances by one stable step, shortened so `t` does not pass `state.t + max_dt`.
    fn advance(&mut self, state: &mut DensityState, max_dt: f64) -> Result<f64> {
        let n = state.u.len();
        let mut bound = f64::INFINITY;
        for i in 0..n {
            let u = state.u[i];
            let w = self.power(u);
            self.powers[i] = w;
            let diffusivity = self.diffusivity(u, w);
            if diffusivity > 0.0 {
                bound = bound.min(self.step_geometry[i] / diffusivity);
            }
        }
        let stable = self.bounded_dt(self.config.cfl * bound)?;
        let (dt, reaches_target) = if max_dt <= stable { (max_dt, true) } else { (stable, false) };

        // Zero flux through r = 0 (vanishing area) and r = R_max.
        self.flux[0] = 0.0;
        self.flux[n] = 0.0;
        for f in 0..n - 1 {
            self.flux[f + 1] = self.face_coeff[f] * (self.powers[f + 1] - self.powers[f]);
        }
        for i in 0..n {
            let mut u = state.u[i] + dt * self.inv_volume[i] * (self.flux[i + 1] - self.flux[i]);
            if u < 0.0 {
                self.clipped_mass -= u * self.grid.volumes[i];
                u = 0.0;
            }
            if !(u <= self.blowup_limit) {
                return Err(Error::Instability { t: state.t + dt, value: u, limit: self.blowup_limit });
            }
            state.u[i] = u;
        }
        state.t = if reaches_target { state.t + max_dt } else { state.t + dt };
        self.steps += 1;
        self.last_dt = dt;
        Ok(dt)
    }

    /// Steps to `t_end`, calling `observe` at the start, at the times from
    /// [`SolverConfig::record_offsets`], and at `t_end`. The observer also gets the last step size.
    pub fn evolve<R>(
        &mut self,
        state: &mut DensityState,
        t_end: f64,
        mut observe: impl FnMut(&DensityState, f64) -> Result<R>,
    ) -> Result<Trajectory<R>> {
        if !(t_end >= state.t) {
            return Err(Error::InvalidTime(format!("t_end = {t_end} precedes the state time {}", state.t)));
        }
        let t0 = state.t;
        let mut records = vec![observe(state, 0.0)?];
        for offset in self.config.record_offsets(t_end - t0) {
            let target = if offset == t_end - t0 { t_end } else { t0 + offset };
            while state.t < target {
                let remaining = target - state.t;
                self.advance(state, remaining)?;
                if target - state.t <= 1e-13 * target.abs().max(1.0) {
                    state.t = target;
                }
            }
            records.push(observe(state, self.last_dt)?);
        }
        let mut warnings = Vec::new();
        if self.clipped_mass > CLIPPED_MASS_BUDGET {
            warnings.push(format!(
                "clipped mass {:e} exceeds the {CLIPPED_MASS_BUDGET:e} budget",
                self.clipped_mass
            ));
        }
        Ok(Trajectory { records, steps: self.steps, clipped_mass: self.clipped_mass, warnings })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barenblatt::Barenblatt;
    use crate::grid::{build_grid, project_initial};

    fn state_on(d: usize, r_max: f64, n: usize, f: impl Fn(f64) -> f64) -> DensityState {
        let grid = Arc::new(build_grid(d, r_max, n, 1.0).unwrap());
        project_initial(f, grid, false).unwrap()
    }

    #[test]
    fn constant_state_dt_and_invariance() {
        let params = ModelParams::new(2, 1.5).unwrap();
        let config = SolverConfig { cfl: 0.5, ..Default::default() };
        let mut state = state_on(2, 1.0, 64, |_| 1.0);
        let mut solver = Solver::new(params, config, &state).unwrap();
        let dt = solver.stable_dt(&state).unwrap();
        let h = 1.0 / 64.0;
        assert!((dt - 0.5 * h * h / (2.0 * 2.0 * 1.5)).abs() < 1e-18);
        let before = state.u.clone();
        solver.step(&mut state).unwrap();
        assert_eq!(state.u, before);
    }

    #[test]
    fn refinement_quarters_dt() {
        let params = ModelParams::new(1, 3.0).unwrap();
        let config = SolverConfig { dt_max: 1.0, ..Default::default() };
        let coarse = state_on(1, 1.0, 50, |_| 1.0);
        let fine = state_on(1, 1.0, 100, |_| 1.0);
        let a = Solver::new(params, config, &coarse).unwrap().stable_dt(&coarse).unwrap();
        let b = Solver::new(params, config, &fine).unwrap().stable_dt(&fine).unwrap();
        assert!((b / a - 0.25).abs() < 1e-12);
    }

    #[test]
    fn barenblatt_dt_at_origin() {
        let params = ModelParams::new(1, 2.0).unwrap();
        let family = Barenblatt::new(params).unwrap();
        let state = state_on(1, 1.0, 400, |r| family.profile(r));
        let config = SolverConfig { dt_max: 1.0, ..Default::default() };
        let dt = Solver::new(params, config, &state).unwrap().stable_dt(&state).unwrap();
        let h = 1.0 / 400.0;
        let d_max = 2.0 * family.profile(0.5 * h);
        assert!((dt - config.cfl * h * h / (2.0 * d_max)).abs() / dt < 1e-12);
        assert!((d_max - 2.0 * family.c_star).abs() < 1e-4);
    }

    #[test]
    fn mass_is_conserved_per_step() {
        let params = ModelParams::new(3, 2.0).unwrap();
        let mut state = state_on(3, 4.0, 200, |r| (-r * r).exp());
        let mut solver = Solver::new(params, SolverConfig::default(), &state).unwrap();
        let m0 = state.mass();
        for _ in 0..200 {
            solver.step(&mut state).unwrap();
        }
        assert!((state.mass() - m0).abs() < 1e-14, "{}", state.mass() - m0);
        assert!(state.u.iter().all(|&u| u >= 0.0));
    }

    #[test]
    fn stiffness_without_floor() {
        let params = ModelParams::new(1, 0.5).unwrap();
        let state = state_on(1, 1.0, 32, |r| if r < 0.5 { 1.0 } else { 0.0 });
        let config = SolverConfig { u_floor: Some(0.0), ..Default::default() };
        let solver = Solver::new(params, config, &state).unwrap();
        assert!(matches!(solver.stable_dt(&state), Err(Error::Stiffness { .. })));
    }

    #[test]
    fn evolve_to_current_time_records_once() {
        let params = ModelParams::new(1, 2.0).unwrap();
        let mut state = state_on(1, 2.0, 64, |r| (-r * r).exp());
        let before = state.u.clone();
        let mut solver = Solver::new(params, SolverConfig::default(), &state).unwrap();
        let traj = solver.evolve(&mut state, 0.0, |s, _| Ok(s.t)).unwrap();
        assert_eq!(traj.records, vec![0.0]);
        assert_eq!(state.u, before);
        assert!(solver.evolve(&mut state, -1.0, |s, _| Ok(s.t)).is_err());
    }

    #[test]
    fn records_land_on_cadence() {
        let params = ModelParams::new(1, 2.0).unwrap();
        let mut state = state_on(1, 3.0, 64, |r| (-r * r).exp());
        let config = SolverConfig { record_every: 0.1, ..Default::default() };
        let mut solver = Solver::new(params, config, &state).unwrap();
        let traj = solver.evolve(&mut state, 0.35, |s, _| Ok(s.t)).unwrap();
        assert_eq!(traj.records.len(), 5);
        for (k, t) in traj.records.iter().take(4).enumerate() {
            assert!((t - 0.1 * k as f64).abs() < 1e-12);
        }
        assert_eq!(*traj.records.last().unwrap(), 0.35);
    }

    #[test]
    fn geometric_records_precede_the_cadence() {
        let config = SolverConfig { record_every: 0.1, record_log_start: Some(1e-3), record_per_decade: 2, ..Default::default() };
        let offsets = config.record_offsets(0.45);
        // the step after 10^{-1.5} would exceed the cadence
        let expected = [1e-3, 10f64.powf(-2.5), 1e-2, 10f64.powf(-1.5), 0.1, 0.2, 0.3, 0.4, 0.45];
        assert_eq!(offsets.len(), expected.len());
        for (a, b) in offsets.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12 * b, "{a} vs {b}");
        }
        assert!(SolverConfig { record_log_start: Some(0.2), record_every: 0.1, ..Default::default() }.validate().is_err());
        assert_eq!(SolverConfig::default().record_offsets(0.0), Vec::<f64>::new());
    }
}
