//! Transient 2D heat conduction in a box-girder cross-section.
//!
//! The temperature obeys `dT/dt = alpha * laplace(T)` with Robin conditions
//! on three boundary parts: the hole surface exchanges heat with the interior
//! air (`c_c * h_int`), the outer surface with the exterior air
//! (`c_c * h_ext`), and the top outer edge additionally absorbs shortwave
//! irradiation `c_r * a * I_in` (plus an optional humidity term
//! `c_RH * RH`). All boundary terms are divided by `rho * c_p`.
//!
//! Space is discretized with P1 triangles on a structured mesh with lumped
//! mass, time with implicit Euler at the 4-hour input cadence. With lumped
//! masses and right triangles the system matrix is an M-matrix, so source-free
//! runs obey a discrete maximum principle.

pub mod fem;
pub mod mesh;
pub mod weather;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ForwardModel, InputPoint, ParamSpec, ParameterSpace, Prior};

pub use fem::{assemble, BandCholesky, BandMatrix, Operators};
pub use mesh::{build_mesh, BoundaryTag, CrossSectionSpec, Mesh, ProbeDepths, SensorProbe, SENSOR_NAMES};
pub use weather::{
    clear_sky_irradiance, synth_weather, WeatherSeries, COVARIATES, WeatherStep, STEPS_PER_DAY, STEP_SECONDS,
    WARMUP_STEPS,
};

/// Reynolds-number correlation for the exterior heat transfer coefficient:
/// `Re = U L / nu`, `Nu = 0.037 Re^0.8 Pr^(1/3)`, `h = Nu k / L`.
pub fn h_ext_from_wind(u: f64, l: f64, nu: f64, pr: f64, k_air: f64) -> Result<f64> {
    if !(u > 0.0 && l > 0.0 && nu > 0.0 && pr > 0.0 && k_air > 0.0) {
        return Err(Error::invalid("wind speed, length and air properties must be positive"));
    }
    let re = u * l / nu;
    let nu_number = 0.037 * re.powf(0.8) * pr.cbrt();
    Ok(nu_number * k_air / l)
}

/// [`h_ext_from_wind`] with `L = 4 m`, `nu = 1.81e-5`, `Pr = 0.71`, `k = 0.025 W/(m K)`.
pub fn h_ext_default(u: f64) -> Result<f64> {
    h_ext_from_wind(u, 4.0, 1.81e-5, 0.71, 0.025)
}

/// Material and boundary constants that are not calibrated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThermalConstants {
    /// kg/m^3
    pub rho: f64,
    /// J/(kg K)
    pub c_p: f64,
    /// W/(m^2 K)
    pub h_int: f64,
    /// W/(m^2 K)
    pub h_ext: f64,
    pub absorptivity: f64,
    /// Humidity coefficient used by the humidity variant.
    pub c_rh: f64,
    /// Initial temperature, degC.
    pub t0: f64,
    pub warmup_steps: usize,
}

impl Default for ThermalConstants {
    fn default() -> Self {
        Self {
            rho: 2400.0,
            c_p: 870.0,
            h_int: 10.0,
            h_ext: 14.10,
            absorptivity: 0.275,
            c_rh: 1e-4,
            t0: 20.0,
            warmup_steps: WARMUP_STEPS,
        }
    }
}

impl ThermalConstants {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.rho, self.c_p, self.h_int, self.h_ext];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("rho, c_p, h_int and h_ext must be positive"));
        }
        if !(self.absorptivity >= 0.0 && self.c_rh.is_finite() && self.t0.is_finite()) {
            return Err(Error::invalid("absorptivity, c_rh and t0 must be finite (absorptivity >= 0)"));
        }
        Ok(())
    }
}

/// Parameters of one simulation. `alpha` is in mm^2/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalParams {
    pub alpha: f64,
    pub c_c: f64,
    pub c_r: f64,
    /// Humidity flux coefficient; 0 switches the term off.
    #[serde(default)]
    pub c_rh: f64,
}

impl ThermalParams {
    /// Parameters used to generate synthetic measurements.
    pub fn truth() -> Self {
        Self {
            alpha: 1.0,
            c_c: 5.0,
            c_r: 0.1,
            c_rh: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be positive"));
        }
        if !(self.c_c >= 0.0 && self.c_c.is_finite() && self.c_r.is_finite() && self.c_rh.is_finite()) {
            return Err(Error::invalid("c_c must be nonnegative and all coefficients finite"));
        }
        Ok(())
    }
}

/// Mesh, operators and constants; built once, then shared read-only.
#[derive(Clone, Debug)]
pub struct ThermalScene {
    pub spec: CrossSectionSpec,
    pub mesh: Mesh,
    pub ops: Operators,
    pub constants: ThermalConstants,
    /// Exterior plus sun boundary weights (both use `h_ext`).
    outer: Vec<f64>,
}

/// Factorized implicit Euler system for one parameter vector.
pub struct Stepper<'a> {
    scene: &'a ThermalScene,
    params: ThermalParams,
    dt: f64,
    factor: BandCholesky,
    k_int: f64,
    k_ext: f64,
}

/// Simulated temperatures per sensor over the evaluation window.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorSeries {
    /// `values[sensor][step]`, degC.
    pub values: Vec<Vec<f64>>,
}

impl SensorSeries {
    pub fn n_steps(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn n_readings(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }
}

impl ThermalScene {
    pub fn build(spec: CrossSectionSpec, constants: ThermalConstants) -> Result<Self> {
        constants.validate()?;
        let mesh = build_mesh(&spec)?;
        let ops = assemble(&mesh);
        let outer = ops
            .boundary_exterior
            .iter()
            .zip(&ops.boundary_sun)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            spec,
            mesh,
            ops,
            constants,
            outer,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.mesh.probes.len()
    }

    fn rho_cp(&self) -> f64 {
        self.constants.rho * self.constants.c_p
    }

    /// Factorizes `M + dt (alpha K + B)` for the given parameters.
    pub fn stepper(&self, params: &ThermalParams, dt: f64) -> Result<Stepper<'_>> {
        params.validate()?;
        if !(dt > 0.0) {
            return Err(Error::invalid("time step must be positive"));
        }
        let (k_int, k_ext) = self.convection(params);
        let k = &self.ops.stiffness;
        let mut a = BandMatrix::zeros(k.dim(), k.bandwidth()).axpy(dt * params.alpha * 1e-6, k);
        a.add_diagonal(&self.ops.mass, 1.0);
        a.add_diagonal(&self.ops.boundary_interior, dt * k_int);
        a.add_diagonal(&self.outer, dt * k_ext);
        Ok(Stepper {
            scene: self,
            params: *params,
            dt,
            factor: a.cholesky()?,
            k_int,
            k_ext,
        })
    }

    fn convection(&self, params: &ThermalParams) -> (f64, f64) {
        let c = &self.constants;
        (
            params.c_c * c.h_int / self.rho_cp(),
            params.c_c * c.h_ext / self.rho_cp(),
        )
    }

    /// Boundary loads of one step, without the factor `dt`.
    fn loads(&self, params: &ThermalParams, k_int: f64, k_ext: f64, w: &WeatherStep) -> Vec<f64> {
        let source = (params.c_r * self.constants.absorptivity * w.i_in + params.c_rh * w.rh) / self.rho_cp();
        let ops = &self.ops;
        (0..ops.mass.len())
            .map(|i| {
                k_int * w.t_int * ops.boundary_interior[i]
                    + k_ext * w.t_ext * self.outer[i]
                    + source * ops.boundary_sun[i]
            })
            .collect()
    }

    /// Time-independent solution for constant loads `w`.
    pub fn steady_state(&self, params: &ThermalParams, w: &WeatherStep) -> Result<Vec<f64>> {
        params.validate()?;
        let (k_int, k_ext) = self.convection(params);
        if !(k_int > 0.0 || k_ext > 0.0) {
            return Err(Error::numerical("steady state needs nonzero convection"));
        }
        let mut a = BandMatrix::zeros(self.ops.stiffness.dim(), self.ops.stiffness.bandwidth())
            .axpy(params.alpha * 1e-6, &self.ops.stiffness);
        a.add_diagonal(&self.ops.boundary_interior, k_int);
        a.add_diagonal(&self.outer, k_ext);
        let mut t = self.loads(params, k_int, k_ext, w);
        a.cholesky()?.solve_in_place(&mut t);
        Ok(t)
    }

    /// Net heat input through the boundary for field `t` (per unit `rho c_p`,
    /// in K m^2/s): convection towards the air plus sources on the top edge.
    pub fn boundary_flux(&self, params: &ThermalParams, w: &WeatherStep, t: &[f64]) -> (f64, f64) {
        let (k_int, k_ext) = self.convection(params);
        let ops = &self.ops;
        let mut convective = 0.0;
        for i in 0..t.len() {
            convective += k_int * (w.t_int - t[i]) * ops.boundary_interior[i];
            convective += k_ext * (w.t_ext - t[i]) * self.outer[i];
        }
        let source = (params.c_r * self.constants.absorptivity * w.i_in + params.c_rh * w.rh) / self.rho_cp();
        let sources = source * ops.boundary_sun.iter().sum::<f64>();
        (convective, sources)
    }

    pub fn probe_values(&self, t: &[f64]) -> Vec<f64> {
        self.mesh
            .probes
            .iter()
            .map(|p| p.nodes.iter().zip(p.weights).map(|(&k, w)| w * t[k]).sum())
            .collect()
    }

    /// Runs from a homogeneous `t0` through every weather step, calling
    /// `observe(step, field)` after each step.
    pub fn run<F>(&self, params: &ThermalParams, weather: &WeatherSeries, t0: f64, mut observe: F) -> Result<()>
    where
        F: FnMut(usize, &[f64]),
    {
        let stepper = self.stepper(params, STEP_SECONDS)?;
        let mut t = vec![t0; self.mesh.n_nodes()];
        for (k, w) in weather.steps.iter().enumerate() {
            stepper.step(&mut t, w);
            observe(k, &t);
        }
        Ok(())
    }

    /// Runs the warm-up from the constant initial temperature, discards it,
    /// and records every probe at each remaining step.
    pub fn simulate(&self, params: &ThermalParams, weather: &WeatherSeries) -> Result<SensorSeries> {
        let warmup = self.constants.warmup_steps;
        if weather.len() <= warmup {
            return Err(Error::invalid(format!(
                "weather has {} steps, warm-up alone needs {warmup} plus at least one",
                weather.len()
            )));
        }
        let mut values = vec![Vec::with_capacity(weather.len() - warmup); self.n_sensors()];
        self.run(params, weather, self.constants.t0, |k, t| {
            if k >= warmup {
                for (series, v) in values.iter_mut().zip(self.probe_values(t)) {
                    series.push(v);
                }
            }
        })?;
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::numerical("simulation produced non-finite temperatures"));
        }
        Ok(SensorSeries { values })
    }
}

impl Stepper<'_> {
    pub fn params(&self) -> &ThermalParams {
        &self.params
    }

    /// One implicit Euler step with the loads of `w`, in place.
    pub fn step(&self, t: &mut [f64], w: &WeatherStep) {
        let mass = &self.scene.ops.mass;
        let loads = self.scene.loads(&self.params, self.k_int, self.k_ext, w);
        for i in 0..t.len() {
            t[i] = mass[i] * t[i] + self.dt * loads[i];
        }
        self.factor.solve_in_place(t);
    }
}

/// Which boundary terms a fitted model carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThermalVariant {
    /// Parameters `(alpha, c_c, c_r)`.
    #[default]
    Base,
    /// Parameters `(alpha, c_c)`, no irradiation.
    NoIrradiation,
    /// Parameters `(alpha, c_c, c_r)` plus the humidity term with the scene's `c_rh`.
    Humidity,
}

impl ThermalVariant {
    pub fn space(self) -> ParameterSpace {
        let mut specs = vec![
            ParamSpec::new("alpha", 0.5, 5.0, Prior::Gaussian { mean: 1.0, sd: 0.2 }),
            ParamSpec::new("c_c", 0.1, 100.0, Prior::Uniform),
        ];
        if self != ThermalVariant::NoIrradiation {
            specs.push(ParamSpec::new("c_r", 0.01, 10.0, Prior::Uniform));
        }
        ParameterSpace::new(specs).expect("static parameter space")
    }

    pub fn params(self, theta: &[f64], constants: &ThermalConstants) -> Result<ThermalParams> {
        let dim = self.space().dim();
        if theta.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: theta.len(),
            });
        }
        Ok(ThermalParams {
            alpha: theta[0],
            c_c: theta[1],
            c_r: if self == ThermalVariant::NoIrradiation { 0.0 } else { theta[2] },
            c_rh: if self == ThermalVariant::Humidity { constants.c_rh } else { 0.0 },
        })
    }
}

/// A thermal simulation as a [`ForwardModel`]: `sensor_id` selects the probe
/// and `time_index` the step of the evaluation window.
#[derive(Clone, Debug)]
pub struct ThermalModel {
    pub scene: ThermalScene,
    pub weather: WeatherSeries,
    pub variant: ThermalVariant,
}

impl ThermalModel {
    pub fn new(scene: ThermalScene, weather: WeatherSeries, variant: ThermalVariant) -> Self {
        Self { scene, weather, variant }
    }

    pub fn space(&self) -> ParameterSpace {
        self.variant.space()
    }

    pub fn simulate_theta(&self, theta: &[f64]) -> Result<SensorSeries> {
        let params = self.variant.params(theta, &self.scene.constants)?;
        self.scene.simulate(&params, &self.weather)
    }
}

fn lookup(series: &SensorSeries, x: &InputPoint) -> Result<f64> {
    series
        .values
        .get(x.sensor_id)
        .and_then(|s| s.get(x.time_index))
        .copied()
        .ok_or_else(|| {
            Error::invalid(format!(
                "no simulated reading for sensor {} at step {}",
                x.sensor_id, x.time_index
            ))
        })
}

impl ForwardModel for ThermalModel {
    fn n_params(&self) -> usize {
        self.space().dim()
    }

    fn predict(&self, input: &InputPoint, theta: &[f64]) -> Result<f64> {
        lookup(&self.simulate_theta(theta)?, input)
    }

    fn predict_batch(&self, inputs: &[InputPoint], theta: &[f64]) -> Result<Vec<f64>> {
        let series = self.simulate_theta(theta)?;
        inputs.iter().map(|x| lookup(&series, x)).collect()
    }
}

/// Rows ordered by step, then sensor.
pub fn series_to_dataset(series: &SensorSeries, sigma: f64) -> Result<Dataset> {
    let mut inputs = Vec::with_capacity(series.n_readings());
    let mut readings = Vec::with_capacity(series.n_readings());
    for t in 0..series.n_steps() {
        for (s, v) in series.values.iter().enumerate() {
            inputs.push(InputPoint::new(s, t, Vec::new()));
            readings.push(v[t]);
        }
    }
    let n = readings.len();
    Dataset::new(inputs, readings, vec![sigma; n])
}

/// Simulated probe readings plus i.i.d. `N(0, sigma^2)` noise. `sigma = 0`
/// returns the simulation itself (recorded with sigma 1e-12).
pub fn generate_thermal_measurements(
    scene: &ThermalScene,
    truth: &ThermalParams,
    weather: &WeatherSeries,
    sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid("sigma must be nonnegative"));
    }
    let mut series = scene.simulate(truth, weather)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    // Noise is drawn in dataset row order so that it does not depend on layout.
    for t in 0..series.n_steps() {
        for s in 0..series.values.len() {
            let eps: f64 = noise.sample(&mut rng);
            series.values[s][t] += sigma * eps;
        }
    }
    series_to_dataset(&series, if sigma > 0.0 { sigma } else { 1e-12 })
}
