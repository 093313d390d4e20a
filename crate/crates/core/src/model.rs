//! Shared vocabulary: inputs, datasets, bounded parameter spaces with priors,
//! and the forward-model interface every fitting routine works against.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::deficiency::std_normal_cdf;
use crate::error::{Error, Result};

/// One model input: which sensor, which time step, plus any real covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputPoint {
    pub sensor_id: usize,
    pub time_index: usize,
    pub features: Vec<f64>,
}

impl InputPoint {
    pub fn new(sensor_id: usize, time_index: usize, features: Vec<f64>) -> Self {
        Self {
            sensor_id,
            time_index,
            features,
        }
    }

    /// Input carrying a single scalar covariate, as used by the analytic models.
    pub fn scalar(index: usize, xi: f64) -> Self {
        Self::new(0, index, vec![xi])
    }
}

/// Readings `y` with known per-reading noise standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Vec<InputPoint>,
    readings: Vec<f64>,
    noise_sd: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<InputPoint>, readings: Vec<f64>, noise_sd: Vec<f64>) -> Result<Self> {
        let n = inputs.len();
        if n == 0 {
            return Err(Error::invalid("dataset must contain at least one reading"));
        }
        if readings.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: readings.len(),
            });
        }
        if noise_sd.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: noise_sd.len(),
            });
        }
        if let Some(i) = noise_sd.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!(
                "noise sd of reading {i} must be positive and finite, got {}",
                noise_sd[i]
            )));
        }
        if let Some(i) = readings.iter().position(|y| !y.is_finite()) {
            return Err(Error::invalid(format!("reading {i} is not finite")));
        }
        Ok(Self {
            inputs,
            readings,
            noise_sd,
        })
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn inputs(&self) -> &[InputPoint] {
        &self.inputs
    }

    pub fn readings(&self) -> &[f64] {
        &self.readings
    }

    pub fn noise_sd(&self) -> &[f64] {
        &self.noise_sd
    }

    /// Sub-dataset made of the given reading indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("reading index {i} out of range")));
        }
        Self::new(
            indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            indices.iter().map(|&i| self.readings[i]).collect(),
            indices.iter().map(|&i| self.noise_sd[i]).collect(),
        )
    }

    /// Writes `sensor_id,time_index,y,sigma`, followed by `xi_1..xi_p` when
    /// inputs carry covariates.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let p = self.inputs.iter().map(|x| x.features.len()).max().unwrap_or(0);
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "sensor_id".to_string(),
            "time_index".to_string(),
            "y".to_string(),
            "sigma".to_string(),
        ];
        header.extend((1..=p).map(|j| format!("xi_{j}")));
        w.write_record(&header)?;
        for ((x, y), s) in self.inputs.iter().zip(&self.readings).zip(&self.noise_sd) {
            let mut row = vec![
                x.sensor_id.to_string(),
                x.time_index.to_string(),
                y.to_string(),
                s.to_string(),
            ];
            row.extend(x.features.iter().map(|f| f.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header.len() < 4 || header[..4] != ["sensor_id", "time_index", "y", "sigma"] {
            return Err(Error::invalid(
                "dataset header must start with sensor_id,time_index,y,sigma",
            ));
        }
        let mut inputs = Vec::new();
        let mut readings = Vec::new();
        let mut noise = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |j: usize| -> Result<&str> {
                rec.get(j)
                    .map(str::trim)
                    .ok_or_else(|| Error::invalid(format!("row {}: missing column {j}", line + 1)))
            };
            let parse_usize = |j: usize| -> Result<usize> {
                field(j)?
                    .parse()
                    .map_err(|_| Error::invalid(format!("row {}: bad integer in column {j}", line + 1)))
            };
            let parse_f64 = |j: usize| -> Result<f64> {
                field(j)?
                    .parse()
                    .map_err(|_| Error::invalid(format!("row {}: bad number in column {j}", line + 1)))
            };
            let features = (4..header.len()).map(parse_f64).collect::<Result<Vec<_>>>()?;
            inputs.push(InputPoint::new(parse_usize(0)?, parse_usize(1)?, features));
            readings.push(parse_f64(2)?);
            noise.push(parse_f64(3)?);
        }
        Self::new(inputs, readings, noise)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Per-coordinate prior. Gaussian priors are truncated to the coordinate's box
/// and renormalized by the Gaussian mass of the box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    Uniform,
    Gaussian { mean: f64, sd: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub prior: Prior,
}

impl ParamSpec {
    pub fn new(name: &str, lower: f64, upper: f64, prior: Prior) -> Self {
        Self {
            name: name.to_string(),
            lower,
            upper,
            prior,
        }
    }
}

/// Box-bounded parameter domain with an independent prior per coordinate.
#[derive(Clone, Debug)]
pub struct ParameterSpace {
    specs: Vec<ParamSpec>,
    // log of the normalizing constant per coordinate
    log_norm: Vec<f64>,
}

impl ParameterSpace {
    pub fn new(specs: Vec<ParamSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::invalid("parameter space needs at least one coordinate"));
        }
        let mut log_norm = Vec::with_capacity(specs.len());
        for s in &specs {
            if !(s.lower < s.upper) || !s.lower.is_finite() || !s.upper.is_finite() {
                return Err(Error::invalid(format!(
                    "parameter {}: need finite lower < upper, got [{}, {}]",
                    s.name, s.lower, s.upper
                )));
            }
            let c = match s.prior {
                Prior::Uniform => (s.upper - s.lower).ln(),
                Prior::Gaussian { mean, sd } => {
                    if !(sd > 0.0) {
                        return Err(Error::invalid(format!("parameter {}: sd must be > 0", s.name)));
                    }
                    let mass = std_normal_cdf((s.upper - mean) / sd)
                        - std_normal_cdf((s.lower - mean) / sd);
                    if !(mass > 0.0) {
                        return Err(Error::invalid(format!(
                            "parameter {}: prior has no mass on its box",
                            s.name
                        )));
                    }
                    sd.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln() + mass.ln()
                }
            };
            log_norm.push(c);
        }
        Ok(Self { specs, log_norm })
    }

    pub fn dim(&self) -> usize {
        self.specs.len()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn names(&self) -> Vec<&str> {
        self.specs.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.specs.iter().map(|s| s.lower).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.specs.iter().map(|s| s.upper).collect()
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && self
                .specs
                .iter()
                .zip(theta)
                .all(|(s, &t)| t >= s.lower && t <= s.upper)
    }

    /// Sum of per-coordinate log prior densities; `-inf` outside the closed box.
    pub fn log_prior(&self, theta: &[f64]) -> Result<f64> {
        self.check_dim(theta.len())?;
        let mut total = 0.0;
        for ((s, &t), c) in self.specs.iter().zip(theta).zip(&self.log_norm) {
            if !(t >= s.lower && t <= s.upper) {
                return Ok(f64::NEG_INFINITY);
            }
            total += match s.prior {
                Prior::Uniform => -c,
                Prior::Gaussian { mean, sd } => {
                    let z = (t - mean) / sd;
                    -0.5 * z * z - c
                }
            };
        }
        Ok(total)
    }

    /// Affine map of the box onto the unit cube. Points outside the box are
    /// clamped; the flag reports whether that happened.
    pub fn to_unit(&self, theta: &[f64]) -> Result<(Vec<f64>, bool)> {
        self.check_dim(theta.len())?;
        let mut clamped = false;
        let u = self
            .specs
            .iter()
            .zip(theta)
            .map(|(s, &t)| {
                let v = (t - s.lower) / (s.upper - s.lower);
                if !(0.0..=1.0).contains(&v) {
                    clamped = true;
                }
                v.clamp(0.0, 1.0)
            })
            .collect();
        Ok((u, clamped))
    }

    pub fn from_unit(&self, u: &[f64]) -> Result<(Vec<f64>, bool)> {
        self.check_dim(u.len())?;
        let mut clamped = false;
        let theta = self
            .specs
            .iter()
            .zip(u)
            .map(|(s, &v)| {
                if !(0.0..=1.0).contains(&v) {
                    clamped = true;
                }
                let v = v.clamp(0.0, 1.0);
                if v == 1.0 {
                    s.upper
                } else {
                    s.lower + v * (s.upper - s.lower)
                }
            })
            .collect();
        Ok((theta, clamped))
    }

    /// Draws one parameter vector from the prior by inverse-CDF sampling,
    /// consuming exactly one uniform variate per coordinate.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.specs
            .iter()
            .map(|s| {
                let u: f64 = rng.random();
                match s.prior {
                    Prior::Uniform => s.lower + u * (s.upper - s.lower),
                    Prior::Gaussian { mean, sd } => {
                        let lo = std_normal_cdf((s.lower - mean) / sd);
                        let hi = std_normal_cdf((s.upper - mean) / sd);
                        let target = lo + u * (hi - lo);
                        let (mut a, mut b) = (s.lower, s.upper);
                        for _ in 0..200 {
                            let m = 0.5 * (a + b);
                            if std_normal_cdf((m - mean) / sd) < target {
                                a = m;
                            } else {
                                b = m;
                            }
                            if b - a <= 1e-14 * (1.0 + m.abs()) {
                                break;
                            }
                        }
                        0.5 * (a + b)
                    }
                }
            })
            .collect()
    }
}

/// A parametrized computational model `f(input, theta)`.
///
/// Implementations must be deterministic and safe to evaluate concurrently
/// for distinct parameter vectors.
pub trait ForwardModel: Sync {
    fn n_params(&self) -> usize;

    fn predict(&self, input: &InputPoint, theta: &[f64]) -> Result<f64>;

    /// Predictions for many inputs at one parameter vector. Models with
    /// expensive per-parameter state (a PDE solve) override this.
    fn predict_batch(&self, inputs: &[InputPoint], theta: &[f64]) -> Result<Vec<f64>> {
        inputs.iter().map(|x| self.predict(x, theta)).collect()
    }
}

/// `(y_i - f(xi_i, theta)) / sigma_i` for every reading.
pub fn normalized_residuals<M: ForwardModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
) -> Result<Vec<f64>> {
    let pred = model.predict_batch(data.inputs(), theta)?;
    Ok(data
        .readings()
        .iter()
        .zip(&pred)
        .zip(data.noise_sd())
        .map(|((y, f), s)| (y - f) / s)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn half_normal() -> ParameterSpace {
        ParameterSpace::new(vec![ParamSpec::new(
            "a",
            0.0,
            40.0,
            Prior::Gaussian { mean: 0.0, sd: 1.0 },
        )])
        .unwrap()
    }

    #[test]
    fn uniform_log_density() {
        let sp = ParameterSpace::new(vec![ParamSpec::new("c", 0.1, 100.0, Prior::Uniform)]).unwrap();
        let lp = sp.log_prior(&[5.0]).unwrap();
        assert!((lp - (1.0f64 / 99.9).ln()).abs() < 1e-14);
        assert_eq!(sp.log_prior(&[100.5]).unwrap(), f64::NEG_INFINITY);
        assert_eq!(sp.log_prior(&[0.0]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn truncated_gaussian_matches_half_normal() {
        let sp = half_normal();
        let phi = (-0.125f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let lp = sp.log_prior(&[0.5]).unwrap();
        assert!((lp - (2.0 * phi).ln()).abs() < 1e-12);
    }

    #[test]
    fn truncated_gaussian_integrates_to_one() {
        // composite Simpson on the support, independent of the normalizer path
        let sp = ParameterSpace::new(vec![ParamSpec::new(
            "alpha",
            0.5,
            5.0,
            Prior::Gaussian { mean: 1.0, sd: 0.2 },
        )])
        .unwrap();
        let n = 20_000;
        let h = 4.5 / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let x = 0.5 + i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * sp.log_prior(&[x]).unwrap().exp();
        }
        assert!((acc * h / 3.0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let sp = half_normal();
        assert!(matches!(
            sp.log_prior(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn unit_map_endpoints_and_clamping() {
        let sp = ParameterSpace::new(vec![
            ParamSpec::new("a", 0.5, 5.0, Prior::Uniform),
            ParamSpec::new("b", -1.0, 3.0, Prior::Uniform),
        ])
        .unwrap();
        assert_eq!(sp.to_unit(&[0.5, -1.0]).unwrap(), (vec![0.0, 0.0], false));
        assert_eq!(sp.to_unit(&[5.0, 3.0]).unwrap(), (vec![1.0, 1.0], false));
        assert_eq!(sp.from_unit(&[1.0, 1.0]).unwrap().0, vec![5.0, 3.0]);
        let (u, clamped) = sp.to_unit(&[6.0, 0.0]).unwrap();
        assert!(clamped);
        assert_eq!(u[0], 1.0);
    }

    #[test]
    fn prior_samples_stay_in_box() {
        let sp = ParameterSpace::new(vec![
            ParamSpec::new("alpha", 0.5, 5.0, Prior::Gaussian { mean: 1.0, sd: 0.2 }),
            ParamSpec::new("cc", 0.1, 100.0, Prior::Uniform),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<_> = (0..2000).map(|_| sp.sample_prior(&mut rng)).collect();
        assert!(draws.iter().all(|t| sp.contains(t)));
        let mean_alpha = draws.iter().map(|t| t[0]).sum::<f64>() / 2000.0;
        assert!((mean_alpha - 1.0).abs() < 0.03, "{mean_alpha}");
    }

    #[test]
    fn dataset_rejects_bad_sigma() {
        let r = Dataset::new(vec![InputPoint::scalar(0, 0.1)], vec![1.0], vec![0.0]);
        assert!(r.is_err());
    }

    #[test]
    fn dataset_csv_round_trip() {
        let d = Dataset::new(
            vec![InputPoint::new(2, 5, vec![]), InputPoint::new(3, 6, vec![])],
            vec![0.1, 1.0 / 3.0],
            vec![0.05, 0.05],
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("sensor_id,time_index,y,sigma\n"));
        assert_eq!(Dataset::read_csv(buf.as_slice()).unwrap(), d);
    }

    proptest::proptest! {
        #[test]
        fn unit_round_trip(lo in -100.0f64..100.0, width in 1e-3f64..1e3, v in 0.0f64..=1.0) {
            let sp = ParameterSpace::new(vec![ParamSpec::new("x", lo, lo + width, Prior::Uniform)]).unwrap();
            let theta = lo + v * width;
            let (u, _) = sp.to_unit(&[theta]).unwrap();
            let (back, clamped) = sp.from_unit(&u).unwrap();
            proptest::prop_assert!(!clamped);
            proptest::prop_assert!((back[0] - theta).abs() <= 1e-12 * theta.abs().max(lo.abs()).max(width));
        }
    }
}
