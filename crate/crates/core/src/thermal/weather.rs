//! Environmental load series at a fixed 4-hour cadence.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds per simulation step (4 h).
pub const STEP_SECONDS: f64 = 4.0 * 3600.0;
pub const STEPS_PER_DAY: usize = 6;
/// Steps simulated and discarded before readings are taken (30 days).
pub const WARMUP_STEPS: usize = 180;

/// Loads of one step. Temperatures in degrees Celsius, irradiance in W/m^2,
/// relative humidity as a fraction, wind in m/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeatherStep {
    pub timestamp: f64,
    pub t_ext: f64,
    pub t_int: f64,
    pub i_in: f64,
    pub rh: f64,
    pub wind: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeatherSeries {
    pub steps: Vec<WeatherStep>,
}

pub const COVARIATES: [&str; 5] = ["T_ext", "T_int", "I_in", "RH", "wind"];

impl WeatherStep {
    pub fn covariate(&self, name: &str) -> Option<f64> {
        match name {
            "T_ext" => Some(self.t_ext),
            "T_int" => Some(self.t_int),
            "I_in" => Some(self.i_in),
            "RH" => Some(self.rh),
            "wind" => Some(self.wind),
            _ => None,
        }
    }
}

impl WeatherSeries {
    pub fn new(steps: Vec<WeatherStep>) -> Result<Self> {
        for (k, s) in steps.iter().enumerate() {
            let v = [s.timestamp, s.t_ext, s.t_int, s.i_in, s.rh, s.wind];
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("weather step {k} has a non-finite value")));
            }
        }
        if let Some(k) = steps.windows(2).position(|w| w[1].timestamp <= w[0].timestamp) {
            return Err(Error::invalid(format!(
                "weather timestamps must increase (step {})",
                k + 1
            )));
        }
        Ok(Self { steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Steps `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::invalid(format!(
                "window {start}..{} exceeds the {} weather steps",
                start + len,
                self.len()
            )));
        }
        Ok(Self {
            steps: self.steps[start..start + len].to_vec(),
        })
    }

    pub fn covariate(&self, name: &str) -> Result<Vec<f64>> {
        self.steps
            .iter()
            .map(|s| s.covariate(name).ok_or_else(|| Error::invalid(format!("unknown covariate {name}"))))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timestamp", "T_ext", "T_int", "I_in", "RH", "wind"])?;
        for s in &self.steps {
            w.write_record(
                [s.timestamp, s.t_ext, s.t_int, s.i_in, s.rh, s.wind].map(|v| v.to_string()),
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let want = ["timestamp", "T_ext", "T_int", "I_in", "RH", "wind"];
        let cols: Vec<usize> = want
            .iter()
            .map(|name| {
                header
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::invalid(format!("weather CSV lacks column {name}")))
            })
            .collect::<Result<_>>()?;
        let mut steps = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let v: Vec<f64> = cols
                .iter()
                .map(|&c| {
                    rec.get(c)
                        .and_then(|f| f.trim().parse().ok())
                        .ok_or_else(|| Error::invalid(format!("weather row {}: bad value in column {c}", line + 1)))
                })
                .collect::<Result<_>>()?;
            steps.push(WeatherStep {
                timestamp: v[0],
                t_ext: v[1],
                t_int: v[2],
                i_in: v[3],
                rh: v[4],
                wind: v[5],
            });
        }
        Self::new(steps)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Clear-sky irradiance at an hour of the day.
pub fn clear_sky_irradiance(hour: f64) -> f64 {
    (800.0 * (std::f64::consts::PI * (hour - 6.0) / 12.0).sin()).max(0.0)
}

/// Synthetic early-summer weather: `WARMUP_STEPS + 6 * days` steps whose
/// timestamps are the centres of the 4-hour blocks (02:00, 06:00, ...).
///
/// Exterior air temperature is 18 degC plus a 5 K diurnal sinusoid (peak at
/// 15:00) plus a synoptic anomaly: a random walk with 1 K steps, damped by
/// 0.8 per step and reflected into +-6 K. Interior air equals exterior air.
/// Irradiance is the clear-sky curve times a daily cloud factor in
/// `[0.2, 1]` that drifts from day to day. Relative humidity falls with
/// irradiance. Wind is a constant 5 m/s.
pub fn synth_weather(days: usize, seed: u64) -> Result<WeatherSeries> {
    if days == 0 {
        return Err(Error::invalid("days must be at least 1"));
    }
    let n = WARMUP_STEPS + STEPS_PER_DAY * days;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut anomaly = 0.0_f64;
    let mut cloud: f64 = rng.random_range(0.2..=1.0);
    let mut steps = Vec::with_capacity(n);
    for k in 0..n {
        let hour = (4 * (k % STEPS_PER_DAY) + 2) as f64;
        if k > 0 && k % STEPS_PER_DAY == 0 {
            cloud = reflect(cloud + 0.3 * unit.sample(&mut rng), 0.2, 1.0);
        }
        anomaly = reflect(0.8 * anomaly + unit.sample(&mut rng), -6.0, 6.0);
        let diurnal = 5.0 * (2.0 * std::f64::consts::PI * (hour - 9.0) / 24.0).sin();
        let t_ext = 18.0 + diurnal + anomaly;
        let i_in = clear_sky_irradiance(hour) * cloud;
        let rh = (0.85 - 0.45 * i_in / 800.0 + 0.05 * unit.sample(&mut rng)).clamp(0.3, 1.0);
        steps.push(WeatherStep {
            timestamp: k as f64 * STEP_SECONDS + 2.0 * 3600.0,
            t_ext,
            t_int: t_ext,
            i_in,
            rh,
            wind: 5.0,
        });
    }
    WeatherSeries::new(steps)
}

fn reflect(mut v: f64, lo: f64, hi: f64) -> f64 {
    while v < lo || v > hi {
        v = if v < lo { 2.0 * lo - v } else { 2.0 * hi - v };
    }
    v
}
