//! Direct numerical simulation of 2D Rayleigh-Bénard convection in
//! vorticity-streamfunction form.
//!
//! Discretization: Fourier pseudo-spectral in the periodic x direction,
//! second-order finite differences on the uniform wall-normal grid.
//! Time stepping: Adams-Bashforth 2 for advection and buoyancy,
//! Crank-Nicolson for diffusion (forward Euler on the first step). The wall
//! vorticity follows Thom's formula, lagged one step.
//!
//! ```text
//! ∂ω/∂t + u·∇ω = √(Pr/Ra) ∇²ω + ∂T/∂x
//! ∂T/∂t + u·∇T = 1/√(Ra Pr) ∇²T
//! ∇²ψ = -ω,  u_x = ∂ψ/∂y,  u_y = -∂ψ/∂x
//! ```

use ndarray::{Array2, Zip};
use num_complex::Complex;
use num_traits::{Float, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{convective_field, Episode};
use crate::field::{FieldError, Grid, ScalarField};
use crate::linalg::{LinalgError, Tridiagonal};
use crate::scalar::Real;
use crate::spectral::{ddy_values, FourierX};

/// Magnitude above which any field is treated as numerically unstable.
pub const BLOWUP_THRESHOLD: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DnsError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("solver blew up at t = {time}: max |field| = {max_abs:e} (reduce dt)")]
    Blowup { time: f64, max_abs: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Physical and numerical parameters of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub ra: f64,
    pub pr: f64,
    pub grid: Grid,
    pub t_bottom: f64,
    pub t_top: f64,
    pub dt: f64,
    pub record_interval: f64,
    pub cook_time: f64,
    pub episode_length: f64,
    pub noise_amplitude: f64,
    pub seed: u64,
    /// Switches the `∂T/∂x` source in the vorticity equation; only turned
    /// off to study viscous decay.
    #[serde(default = "default_true")]
    pub buoyancy: bool,
}

fn default_true() -> bool {
    true
}

impl SimulationConfig {
    /// Reference protocol at the given Rayleigh number on `grid`.
    pub fn new(ra: f64, grid: Grid) -> Self {
        Self {
            ra,
            pr: 0.7,
            grid,
            t_bottom: 2.0,
            t_top: 1.0,
            dt: 0.025,
            record_interval: 1.0,
            cook_time: 100.0,
            episode_length: 500.0,
            noise_amplitude: 1e-3,
            seed: 0,
            buoyancy: true,
        }
    }

    /// Desk-scale grid (48 × 32).
    pub fn desk(ra: f64) -> Self {
        Self::new(ra, Grid::desk())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Momentum diffusivity `√(Pr/Ra)`.
    pub fn viscosity(&self) -> f64 {
        (self.pr / self.ra).sqrt()
    }

    /// Thermal diffusivity `1/√(Ra Pr)`.
    pub fn diffusivity(&self) -> f64 {
        1.0 / (self.ra * self.pr).sqrt()
    }

    fn whole_steps(&self, span: f64, what: &str) -> Result<usize, DnsError> {
        let n = span / self.dt;
        let rounded = n.round();
        if (n - rounded).abs() > 1e-6 * n.max(1.0) {
            return Err(DnsError::InvalidConfig(format!(
                "{what} = {span} is not an integer multiple of dt = {}",
                self.dt
            )));
        }
        Ok(rounded as usize)
    }

    pub fn steps_per_record(&self) -> Result<usize, DnsError> {
        self.whole_steps(self.record_interval, "record_interval")
    }

    pub fn cook_steps(&self) -> Result<usize, DnsError> {
        self.whole_steps(self.cook_time, "cook_time")
    }

    /// Number of recorded snapshots per episode.
    pub fn snapshot_count(&self) -> usize {
        (self.episode_length / self.record_interval + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<(), DnsError> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(DnsError::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive(self.ra, "ra")?;
        positive(self.pr, "pr")?;
        positive(self.dt, "dt")?;
        positive(self.record_interval, "record_interval")?;
        if !(self.cook_time >= 0.0 && self.episode_length >= 0.0) {
            return Err(DnsError::InvalidConfig("negative time span".into()));
        }
        if !(self.noise_amplitude >= 0.0) {
            return Err(DnsError::InvalidConfig("noise_amplitude must be >= 0".into()));
        }
        if !(self.t_bottom.is_finite() && self.t_top.is_finite()) {
            return Err(DnsError::InvalidConfig("non-finite wall temperature".into()));
        }
        if self.grid.ny < 4 {
            return Err(FieldError::GridTooSmall {
                ny: self.grid.ny,
                min: 4,
            }
            .into());
        }
        self.steps_per_record()?;
        self.cook_steps()?;
        Ok(())
    }
}

/// Nonlinear right-hand sides of the previous step, for Adams-Bashforth.
#[derive(Clone, Debug, PartialEq)]
struct History<T: Real> {
    vorticity: Array2<Complex<T>>,
    temperature: Array2<Complex<T>>,
}

/// Full flow state on the collocation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState<T: Real> {
    pub temperature: ScalarField<T>,
    pub vorticity: ScalarField<T>,
    pub streamfunction: ScalarField<T>,
    pub u_x: ScalarField<T>,
    pub u_y: ScalarField<T>,
    pub time: f64,
    steps: u64,
    history: Option<History<T>>,
}

impl<T: Real> FlowState<T> {
    pub fn grid(&self) -> &Grid {
        self.temperature.grid()
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    /// `½ ⟨u_x² + u_y²⟩` over the grid.
    pub fn kinetic_energy(&self) -> T {
        let e: T = self
            .u_x
            .values()
            .iter()
            .zip(self.u_y.values().iter())
            .map(|(&a, &b)| a * a + b * b)
            .sum();
        e * T::lit(0.5) / T::lit(self.grid().len() as f64)
    }

    /// `½ ⟨|u|² + (T - T_conduction)²⟩`: energy of the departure from the
    /// diffusive equilibrium.
    pub fn perturbation_energy(&self, config: &SimulationConfig) -> T {
        let grid = *self.grid();
        let mut thermal = T::zero();
        for j in 0..grid.ny {
            let base = T::lit(conduction_profile(config, grid.y(j)));
            for i in 0..grid.nx {
                let d = self.temperature.get(j, i) - base;
                thermal = thermal + d * d;
            }
        }
        self.kinetic_energy() + thermal * T::lit(0.5) / T::lit(grid.len() as f64)
    }

    /// Largest magnitude over ω, ψ and T.
    pub fn max_abs(&self) -> T {
        self.vorticity
            .max_abs()
            .max(self.streamfunction.max_abs())
            .max(self.temperature.max_abs())
    }
}

fn conduction_profile(config: &SimulationConfig, y: f64) -> f64 {
    let g = &config.grid;
    config.t_bottom + (config.t_top - config.t_bottom) * (y - g.y_min) / g.height()
}

/// Diffusive equilibrium plus seeded uniform noise on the interior
/// temperature; the fluid starts at rest.
pub fn initial_condition<T: Real>(config: &SimulationConfig) -> Result<FlowState<T>, DnsError> {
    config.validate()?;
    let grid = config.grid;
    let mut temperature = ScalarField::from_fn(grid, |_, y| conduction_profile(config, y));
    let a = config.noise_amplitude;
    if a > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let values = temperature.values_mut();
        for j in 1..grid.ny - 1 {
            for i in 0..grid.nx {
                values[[j, i]] = values[[j, i]] + T::lit(rng.gen_range(-a..=a));
            }
        }
    }
    Ok(FlowState {
        temperature,
        vorticity: ScalarField::zeros(grid),
        streamfunction: ScalarField::zeros(grid),
        u_x: ScalarField::zeros(grid),
        u_y: ScalarField::zeros(grid),
        time: 0.0,
        steps: 0,
        history: None,
    })
}

/// Per-mode tridiagonal operators on the interior rows `1..ny-1`.
#[derive(Clone, Debug)]
struct ModeOperators<T: Real> {
    vorticity_cn: Tridiagonal<T>,
    temperature_cn: Tridiagonal<T>,
}

/// Poisson solver `∇²ψ = -ω` with `ψ = 0` on both walls, one tridiagonal
/// system per Fourier mode.
pub struct PoissonSolver<T: Real> {
    fourier: FourierX<T>,
    modes: Vec<Tridiagonal<T>>,
}

impl<T: Real> PoissonSolver<T> {
    pub fn new(grid: Grid) -> Result<Self, DnsError> {
        if grid.ny < 3 {
            return Err(FieldError::GridTooSmall { ny: grid.ny, min: 3 }.into());
        }
        let fourier = FourierX::new(grid);
        let modes = (0..grid.nx)
            .map(|m| poisson_operator(&grid, fourier.wavenumber(m)))
            .collect::<Result<_, _>>()?;
        Ok(Self { fourier, modes })
    }

    pub fn solve(&self, vorticity: &ScalarField<T>) -> ScalarField<T> {
        let spec = self.fourier.forward(vorticity.values());
        let psi = solve_poisson_spectral(&self.modes, &spec);
        ScalarField::from_raw(*vorticity.grid(), self.fourier.inverse(&psi))
    }
}

fn poisson_operator<T: Real>(grid: &Grid, k: T) -> Result<Tridiagonal<T>, LinalgError> {
    let n = grid.ny - 2;
    let inv = T::lit(1.0 / (grid.dy() * grid.dy()));
    let diag = -(inv + inv) - k * k;
    Tridiagonal::new(vec![inv; n], vec![diag; n], vec![inv; n])
}

fn solve_poisson_spectral<T: Real>(
    modes: &[Tridiagonal<T>],
    omega: &Array2<Complex<T>>,
) -> Array2<Complex<T>> {
    let (ny, nx) = omega.dim();
    let mut psi = Array2::zeros((ny, nx));
    let mut rhs = vec![Complex::zero(); ny - 2];
    for (m, op) in modes.iter().enumerate() {
        for j in 1..ny - 1 {
            rhs[j - 1] = -omega[[j, m]];
        }
        op.solve_in_place(&mut rhs);
        for j in 1..ny - 1 {
            psi[[j, m]] = rhs[j - 1];
        }
    }
    psi
}

/// Streamfunction for a vorticity field (`∇²ψ = -ω`, `ψ = 0` at walls).
pub fn poisson_solve<T: Real>(vorticity: &ScalarField<T>) -> Result<ScalarField<T>, DnsError> {
    Ok(PoissonSolver::new(*vorticity.grid())?.solve(vorticity))
}

/// Time stepper with cached transforms and factorizations.
pub struct RbcSolver<T: Real> {
    config: SimulationConfig,
    fourier: FourierX<T>,
    modes: Vec<ModeOperators<T>>,
    poisson: Vec<Tridiagonal<T>>,
}

impl<T: Real> RbcSolver<T> {
    pub fn new(config: &SimulationConfig) -> Result<Self, DnsError> {
        config.validate()?;
        let grid = config.grid;
        let fourier = FourierX::new(grid);
        let half_dt = 0.5 * config.dt;
        let inv = 1.0 / (grid.dy() * grid.dy());
        let n = grid.ny - 2;
        let cn = |diffusivity: f64, k: f64| {
            let off = T::lit(-half_dt * diffusivity * inv);
            let diag = T::lit(1.0 + half_dt * diffusivity * (2.0 * inv + k * k));
            Tridiagonal::new(vec![off; n], vec![diag; n], vec![off; n])
        };
        let modes = (0..grid.nx)
            .map(|m| {
                let k = grid.wavenumber(m);
                Ok(ModeOperators {
                    vorticity_cn: cn(config.viscosity(), k)?,
                    temperature_cn: cn(config.diffusivity(), k)?,
                })
            })
            .collect::<Result<_, LinalgError>>()?;
        let poisson = (0..grid.nx)
            .map(|m| poisson_operator(&grid, fourier.wavenumber(m)))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            config: config.clone(),
            fourier,
            modes,
            poisson,
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    /// Dealiased `-(u·∇)f` in spectral space, from a filtered spectrum.
    fn advection(
        &self,
        u_x: &Array2<T>,
        u_y: &Array2<T>,
        filtered: &Array2<Complex<T>>,
    ) -> Array2<Complex<T>> {
        let grid = &self.config.grid;
        let f_x = self.fourier.inverse(&self.fourier.differentiate(filtered));
        let f_y = ddy_values(&self.fourier.inverse(filtered), grid.dy());
        let mut prod = Array2::zeros(u_x.dim());
        Zip::from(&mut prod)
            .and(u_x)
            .and(&f_x)
            .and(u_y)
            .and(&f_y)
            .for_each(|p, &ux, &fx, &uy, &fy| *p = -(ux * fx + uy * fy));
        let mut spec = self.fourier.forward(&prod);
        self.fourier.dealias(&mut spec);
        spec
    }

    /// Advances the state by one `dt`.
    pub fn step(&self, state: &FlowState<T>) -> Result<FlowState<T>, DnsError> {
        let cfg = &self.config;
        let grid = cfg.grid;
        let (ny, nx) = grid.shape();
        let dt = T::lit(cfg.dt);
        let dy2 = grid.dy() * grid.dy();
        let thom = T::lit(-2.0 / dy2);

        let psi_hat = self.fourier.forward(state.streamfunction.values());
        let omega_hat = self.fourier.forward(state.vorticity.values());
        let temp_hat = self.fourier.forward(state.temperature.values());

        // Filtered velocity for the advection products.
        let mut psi_f = psi_hat.clone();
        self.fourier.dealias(&mut psi_f);
        let u_x = ddy_values(&self.fourier.inverse(&psi_f), grid.dy());
        let u_y = self.fourier.inverse(&self.fourier.differentiate(&psi_f)).mapv(|v| -v);

        let mut omega_f = omega_hat.clone();
        self.fourier.dealias(&mut omega_f);
        let mut temp_f = temp_hat.clone();
        self.fourier.dealias(&mut temp_f);

        let mut n_omega = self.advection(&u_x, &u_y, &omega_f);
        if cfg.buoyancy {
            n_omega = n_omega + self.fourier.differentiate(&temp_hat);
        }
        let n_temp = self.advection(&u_x, &u_y, &temp_f);

        let (ab_omega, ab_temp) = match &state.history {
            Some(prev) => {
                let (c1, c0) = (T::lit(1.5), T::lit(-0.5));
                (
                    n_omega.mapv(|v| v * c1) + prev.vorticity.mapv(|v| v * c0),
                    n_temp.mapv(|v| v * c1) + prev.temperature.mapv(|v| v * c0),
                )
            }
            None => (n_omega.clone(), n_temp.clone()),
        };

        // Dirichlet data for the new level.
        let mut omega_new = Array2::<Complex<T>>::zeros((ny, nx));
        let mut temp_new = Array2::<Complex<T>>::zeros((ny, nx));
        for m in 0..nx {
            omega_new[[0, m]] = psi_hat[[1, m]] * thom;
            omega_new[[ny - 1, m]] = psi_hat[[ny - 2, m]] * thom;
        }
        temp_new[[0, 0]] = Complex::new(T::lit(cfg.t_bottom), T::zero());
        temp_new[[ny - 1, 0]] = Complex::new(T::lit(cfg.t_top), T::zero());

        let nu = T::lit(0.5 * cfg.dt * cfg.viscosity());
        let kappa = T::lit(0.5 * cfg.dt * cfg.diffusivity());
        let inv_dy2 = T::lit(1.0 / dy2);
        let two = T::lit(2.0);
        let mut rhs = vec![Complex::<T>::zero(); ny - 2];
        for (m, ops) in self.modes.iter().enumerate() {
            let k2 = self.fourier.wavenumber(m) * self.fourier.wavenumber(m);
            for (old, forcing, new, half_diff, op) in [
                (&omega_hat, &ab_omega, &mut omega_new, nu, &ops.vorticity_cn),
                (&temp_hat, &ab_temp, &mut temp_new, kappa, &ops.temperature_cn),
            ] {
                for j in 1..ny - 1 {
                    let lap = (old[[j + 1, m]] - old[[j, m]] * two + old[[j - 1, m]]) * inv_dy2
                        - old[[j, m]] * k2;
                    rhs[j - 1] = old[[j, m]] + lap * half_diff + forcing[[j, m]] * dt;
                }
                let coupling = half_diff * inv_dy2;
                rhs[0] = rhs[0] + new[[0, m]] * coupling;
                rhs[ny - 3] = rhs[ny - 3] + new[[ny - 1, m]] * coupling;
                op.solve_in_place(&mut rhs);
                for j in 1..ny - 1 {
                    new[[j, m]] = rhs[j - 1];
                }
            }
        }

        let psi_new = solve_poisson_spectral(&self.poisson, &omega_new);
        for m in 0..nx {
            omega_new[[0, m]] = psi_new[[1, m]] * thom;
            omega_new[[ny - 1, m]] = psi_new[[ny - 2, m]] * thom;
        }

        let next = self.assemble(
            &psi_new,
            &omega_new,
            &temp_new,
            state.steps + 1,
            Some(History {
                vorticity: n_omega,
                temperature: n_temp,
            }),
        );
        let max_abs = next.max_abs();
        if !Float::is_finite(max_abs) || max_abs > T::lit(BLOWUP_THRESHOLD) {
            return Err(DnsError::Blowup {
                time: next.time,
                max_abs: max_abs.to_f64_lossy(),
            });
        }
        Ok(next)
    }

    fn assemble(
        &self,
        psi_hat: &Array2<Complex<T>>,
        omega_hat: &Array2<Complex<T>>,
        temp_hat: &Array2<Complex<T>>,
        steps: u64,
        history: Option<History<T>>,
    ) -> FlowState<T> {
        let grid = self.config.grid;
        let mut psi = self.fourier.inverse(psi_hat);
        psi.row_mut(0).fill(T::zero());
        psi.row_mut(grid.ny - 1).fill(T::zero());
        let u_x = ddy_values(&psi, grid.dy());
        let u_y = self
            .fourier
            .inverse(&self.fourier.differentiate(psi_hat))
            .mapv(|v| -v);
        let mut temperature = self.fourier.inverse(temp_hat);
        temperature.row_mut(0).fill(T::lit(self.config.t_bottom));
        temperature.row_mut(grid.ny - 1).fill(T::lit(self.config.t_top));
        FlowState {
            temperature: ScalarField::from_raw(grid, temperature),
            vorticity: ScalarField::from_raw(grid, self.fourier.inverse(omega_hat)),
            streamfunction: ScalarField::from_raw(grid, psi),
            u_x: ScalarField::from_raw(grid, u_x),
            u_y: ScalarField::from_raw(grid, u_y),
            time: steps as f64 * self.config.dt,
            steps,
            history,
        }
    }

    /// State at time 0 with the given temperature and vorticity; the
    /// streamfunction and velocities are derived, wall values reset.
    pub fn state_from(
        &self,
        temperature: &ScalarField<T>,
        vorticity: &ScalarField<T>,
    ) -> Result<FlowState<T>, DnsError> {
        let grid = self.config.grid;
        for f in [temperature, vorticity] {
            if *f.grid() != grid {
                return Err(FieldError::ShapeMismatch {
                    expected: grid.shape(),
                    got: f.grid().shape(),
                }
                .into());
            }
        }
        let omega_hat = self.fourier.forward(vorticity.values());
        let psi_hat = solve_poisson_spectral(&self.poisson, &omega_hat);
        let temp_hat = self.fourier.forward(temperature.values());
        Ok(self.assemble(&psi_hat, &omega_hat, &temp_hat, 0, None))
    }

    /// Advances `n` steps.
    pub fn advance(&self, mut state: FlowState<T>, n: usize) -> Result<FlowState<T>, DnsError> {
        for _ in 0..n {
            state = self.step(&state)?;
        }
        Ok(state)
    }
}

/// One time step; builds a fresh solver. Prefer [`RbcSolver`] in loops.
pub fn step<T: Real>(state: &FlowState<T>, config: &SimulationConfig) -> Result<FlowState<T>, DnsError> {
    RbcSolver::new(config)?.step(state)
}

/// Runs the cook phase, then records the convective field every
/// `record_interval` for `episode_length` time units. Snapshots are
/// rounded to binary32, the storage precision.
pub fn simulate_episode<T: Real>(config: &SimulationConfig) -> Result<Episode<T>, DnsError> {
    let solver = RbcSolver::<T>::new(config)?;
    let per_record = config.steps_per_record()?;
    let mut state = initial_condition::<T>(config)?;
    state = solver.advance(state, config.cook_steps()?)?;
    let n = config.snapshot_count();
    let mut times = Vec::with_capacity(n);
    let mut snapshots = Vec::with_capacity(n);
    for k in 1..=n {
        state = solver.advance(state, per_record)?;
        times.push(config.cook_time + k as f64 * config.record_interval);
        snapshots.push(convective_field(&state).map(Real::round_to_f32));
    }
    Ok(Episode::new(config.ra, config.pr, config.seed, times, snapshots)
        .expect("solver output satisfies episode invariants"))
}
