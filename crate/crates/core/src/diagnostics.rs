//! Interpretation aids for a fitted mixture: per-sensor time series of
//! cluster membership, daily averages, and lagged Pearson correlations with
//! environmental covariates.
//!
//! Lag convention: the correlation at lag `l` pairs `x_t` with `y_{t+l}`.
//! With `x` an assignment series and `y` a covariate, a negative lag means
//! the covariate leads the assignment.
//!
//! How to read the output is up to the modeler. Alternating day/night
//! patterns point at periodic loads, single-sensor clusters at local effects
//! or sensor faults, monotone block patterns at slowly drifting conditions.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};
use crate::mixture::MixtureFit;
use crate::model::Dataset;
use crate::thermal::{WeatherSeries, COVARIATES, SENSOR_NAMES};

/// Block means over `steps_per_day`; a trailing partial day is averaged over
/// the steps it has.
pub fn daily_average(series: &[f64], steps_per_day: usize) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::invalid("cannot average an empty series"));
    }
    if steps_per_day == 0 {
        return Err(Error::invalid("steps_per_day must be at least 1"));
    }
    Ok(series
        .chunks(steps_per_day)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect())
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of `x_t` with `y_{t+lag}` over the overlap, per lag.
/// `None` marks a lag whose overlap has zero variance on either side.
pub fn lagged_cross_correlation(x: &[f64], y: &[f64], lags: &[isize]) -> Result<Vec<Option<f64>>> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.len() as isize;
    lags.iter()
        .map(|&lag| {
            let overlap = n - lag.abs();
            if overlap < 3 {
                return Err(Error::invalid(format!(
                    "lag {lag} leaves {} overlapping samples, need at least 3",
                    overlap.max(0)
                )));
            }
            let (xs, ys) = if lag >= 0 {
                (&x[..overlap as usize], &y[lag as usize..])
            } else {
                (&x[(-lag) as usize..], &y[..overlap as usize])
            };
            Ok(pearson(xs, ys))
        })
        .collect()
}

/// Membership probability of one cluster for one sensor, indexed by step.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentSeries {
    pub sensor_id: usize,
    pub sensor: String,
    pub values: Vec<f64>,
}

pub fn sensor_name(id: usize) -> String {
    SENSOR_NAMES
        .get(id)
        .map_or_else(|| format!("sensor_{id}"), |s| s.to_string())
}

/// Per-sensor series of `P(z_i = cluster)` on a grid of `n_steps` steps.
/// `responsibilities` is the `n x k` matrix aligned with `data`.
pub fn assignment_series(
    responsibilities: &[Vec<f64>],
    data: &Dataset,
    cluster: usize,
    n_steps: usize,
) -> Result<Vec<AssignmentSeries>> {
    if data.len() != responsibilities.len() {
        return Err(Error::DimensionMismatch {
            expected: responsibilities.len(),
            got: data.len(),
        });
    }
    let k = responsibilities.first().map_or(0, Vec::len);
    if cluster >= k {
        return Err(Error::invalid(format!("cluster {cluster} out of range for k = {k}")));
    }
    let n_sensors = data.inputs().iter().map(|x| x.sensor_id + 1).max().unwrap_or(0);
    let mut grid = vec![vec![f64::NAN; n_steps]; n_sensors];
    for (x, row) in data.inputs().iter().zip(responsibilities) {
        if x.time_index >= n_steps {
            return Err(Error::invalid(format!(
                "reading at step {} lies outside the {n_steps}-step window",
                x.time_index
            )));
        }
        grid[x.sensor_id][x.time_index] = row[cluster];
    }
    grid.into_iter()
        .enumerate()
        .filter(|(_, v)| v.iter().any(|p| !p.is_nan()))
        .map(|(s, values)| {
            if let Some(t) = values.iter().position(|p| p.is_nan()) {
                return Err(Error::invalid(format!("sensor {s} has no reading at step {t}")));
            }
            Ok(AssignmentSeries {
                sensor_id: s,
                sensor: sensor_name(s),
                values,
            })
        })
        .collect()
}

/// Time resolution of a correlation report.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cadence {
    /// Native steps; lags are in steps.
    Step,
    /// Daily means of both series; lags are in days, reported in steps.
    Daily { steps_per_day: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationEntry {
    pub sensor: String,
    pub covariate: String,
    pub lag_steps: isize,
    pub corr: Option<f64>,
}

/// Correlations of each sensor's assignment series for `cluster` (default:
/// the heaviest cluster) with every weather covariate at every lag.
pub fn correlation_report(
    fit: &MixtureFit,
    data: &Dataset,
    weather: &WeatherSeries,
    cluster: Option<usize>,
    lags: &[isize],
    cadence: Cadence,
) -> Result<Vec<CorrelationEntry>> {
    let cluster = cluster.unwrap_or_else(|| fit.dominant_cluster());
    correlation_report_for(&fit.responsibilities, cluster, data, weather, lags, cadence)
}

/// [`correlation_report`] from a bare responsibility matrix.
pub fn correlation_report_for(
    responsibilities: &[Vec<f64>],
    cluster: usize,
    data: &Dataset,
    weather: &WeatherSeries,
    lags: &[isize],
    cadence: Cadence,
) -> Result<Vec<CorrelationEntry>> {
    let n_steps = weather.len();
    let max_step = data.inputs().iter().map(|x| x.time_index + 1).max().unwrap_or(0);
    if max_step != n_steps {
        return Err(Error::invalid(format!(
            "weather window has {n_steps} steps but readings span {max_step}"
        )));
    }
    let series = assignment_series(responsibilities, data, cluster, n_steps)?;
    let prepare = |v: &[f64]| -> Result<Vec<f64>> {
        match cadence {
            Cadence::Step => Ok(v.to_vec()),
            Cadence::Daily { steps_per_day } => daily_average(v, steps_per_day),
        }
    };
    let scale = match cadence {
        Cadence::Step => 1,
        Cadence::Daily { steps_per_day } => steps_per_day as isize,
    };
    let mut out = Vec::new();
    for s in &series {
        let x = prepare(&s.values)?;
        for name in COVARIATES {
            let y = prepare(&weather.covariate(name)?)?;
            for (lag, corr) in lags.iter().zip(lagged_cross_correlation(&x, &y, lags)?) {
                out.push(CorrelationEntry {
                    sensor: s.sensor.clone(),
                    covariate: name.to_string(),
                    lag_steps: lag * scale,
                    corr,
                });
            }
        }
    }
    Ok(out)
}

/// The covariate with the largest `|corr|` for `sensor`, with its lag and value.
pub fn strongest_covariate(entries: &[CorrelationEntry], sensor: &str) -> Option<(String, isize, f64)> {
    entries
        .iter()
        .filter(|e| e.sensor == sensor)
        .filter_map(|e| e.corr.map(|c| (e.covariate.clone(), e.lag_steps, c)))
        .fold(None, |best: Option<(String, isize, f64)>, cand| match best {
            Some(b) if b.2.abs() >= cand.2.abs() => Some(b),
            _ => Some(cand),
        })
}

/// Undefined correlations are written as `NA`.
pub fn write_correlation_csv<W: Write>(writer: W, entries: &[CorrelationEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sensor", "covariate", "lag_steps", "corr"])?;
    for e in entries {
        let corr = e.corr.map_or_else(|| "NA".to_string(), |c| c.to_string());
        w.write_record([e.sensor.as_str(), e.covariate.as_str(), &e.lag_steps.to_string(), &corr])?;
    }
    w.flush()?;
    Ok(())
}

/// Pairwise lag-0 correlations between the weather covariates. Constant
/// covariates have undefined entries, except on the diagonal.
pub fn weather_correlation_matrix(weather: &WeatherSeries) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>)> {
    if weather.len() < 3 {
        return Err(Error::invalid("need at least 3 weather steps"));
    }
    let names: Vec<String> = COVARIATES.iter().map(|s| s.to_string()).collect();
    let cols = names
        .iter()
        .map(|n| weather.covariate(n))
        .collect::<Result<Vec<_>>>()?;
    let mut m = vec![vec![None; names.len()]; names.len()];
    for i in 0..names.len() {
        m[i][i] = Some(1.0);
        for j in 0..i {
            let c = pearson(&cols[i], &cols[j]);
            m[i][j] = c;
            m[j][i] = c;
        }
    }
    Ok((names, m))
}

fn colour(c: Option<f64>) -> String {
    match c {
        None => "#cccccc".to_string(),
        Some(c) => {
            // Blue for negative, red for positive.
            let t = c.clamp(-1.0, 1.0);
            let (r, g, b) = if t >= 0.0 {
                (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
            } else {
                (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
            };
            format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
        }
    }
}

/// Heat map with one row per (sensor, covariate) and one column per lag.
pub fn correlation_heatmap_svg(entries: &[CorrelationEntry]) -> String {
    let mut rows: Vec<(String, String)> = Vec::new();
    let mut lags: Vec<isize> = Vec::new();
    for e in entries {
        let key = (e.sensor.clone(), e.covariate.clone());
        if !rows.contains(&key) {
            rows.push(key);
        }
        if !lags.contains(&e.lag_steps) {
            lags.push(e.lag_steps);
        }
    }
    lags.sort_unstable();
    let (cell, left, top) = (28.0, 130.0, 40.0);
    let width = left + cell * lags.len() as f64 + 20.0;
    let height = top + cell * rows.len() as f64 + 20.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    for (c, lag) in lags.iter().enumerate() {
        let x = left + cell * (c as f64 + 0.5);
        let _ = writeln!(svg, r#"<text x="{x}" y="{}" text-anchor="middle">{lag}</text>"#, top - 8.0);
    }
    for (r, (sensor, cov)) in rows.iter().enumerate() {
        let y = top + cell * r as f64;
        let _ = writeln!(svg, r#"<text x="4" y="{}">{sensor} / {cov}</text>"#, y + cell * 0.65);
        for (c, lag) in lags.iter().enumerate() {
            let corr = entries
                .iter()
                .find(|e| &e.sensor == sensor && &e.covariate == cov && e.lag_steps == *lag)
                .and_then(|e| e.corr);
            let _ = writeln!(
                svg,
                r#"<rect x="{}" y="{y}" width="{cell}" height="{cell}" fill="{}"><title>{}</title></rect>"#,
                left + cell * c as f64,
                colour(corr),
                corr.map_or("NA".to_string(), |v| format!("{v:.3}"))
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Line plot of daily assignment probabilities per sensor.
pub fn assignment_svg(series: &[AssignmentSeries], steps_per_day: usize) -> Result<String> {
    let (w, h, pad) = (480.0, 240.0, 30.0);
    let palette = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e"];
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    for (k, s) in series.iter().enumerate() {
        let daily = daily_average(&s.values, steps_per_day)?;
        let n = daily.len().max(2) - 1;
        let pts: Vec<String> = daily
            .iter()
            .enumerate()
            .map(|(d, p)| {
                let x = pad + (w - 2.0 * pad) * d as f64 / n as f64;
                let y = h - pad - (h - 2.0 * pad) * p;
                format!("{x:.1},{y:.1}")
            })
            .collect();
        let colour = palette[k % palette.len()];
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{colour}" points="{}"/><text x="{}" y="{}" fill="{colour}">{}</text>"#,
            pts.join(" "),
            pad + 4.0,
            pad + 12.0 * (k as f64 + 1.0),
            s.sensor
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::FitMethod;
    use crate::model::InputPoint;
    use crate::thermal::{synth_weather, WeatherStep};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn daily_average_basics() {
        assert_eq!(daily_average(&[0.3; 12], 6).unwrap(), vec![0.3, 0.3]);
        let days: Vec<f64> = (0..5).flat_map(|d| [d as f64; 6]).collect();
        assert_eq!(daily_average(&days, 6).unwrap(), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(daily_average(&[1.0, 2.0, 3.0, 5.0], 3).unwrap(), vec![2.0, 5.0]);
        assert!(daily_average(&[], 6).is_err());
    }

    #[test]
    fn daily_means_of_uniform_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut vars = Vec::new();
        for _ in 0..200 {
            let x: Vec<f64> = (0..180).map(|_| rng.random()).collect();
            let d = daily_average(&x, 6).unwrap();
            let m = d.iter().sum::<f64>() / 30.0;
            vars.push(d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 29.0);
        }
        let v = vars.iter().sum::<f64>() / vars.len() as f64;
        let expected = 1.0 / 72.0;
        assert!((v - expected).abs() < 0.1 * expected, "{v} vs {expected}");
    }

    #[test]
    fn correlation_examples() {
        let x: Vec<f64> = (0..60).map(|t| (t as f64 * 0.37).sin() + 0.1 * t as f64).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((lagged_cross_correlation(&x, &x, &[0]).unwrap()[0].unwrap() - 1.0).abs() < 1e-12);
        assert!((lagged_cross_correlation(&x, &neg, &[0]).unwrap()[0].unwrap() + 1.0).abs() < 1e-12);

        let tau = 2.0 * std::f64::consts::PI;
        let s: Vec<f64> = (0..600).map(|t| (tau * t as f64 / 6.0).sin()).collect();
        let shifted: Vec<f64> = (0..600).map(|t| (tau * (t as f64 - 1.0) / 6.0).sin()).collect();
        let c = lagged_cross_correlation(&s, &shifted, &[1, 0]).unwrap();
        assert!((c[0].unwrap() - 1.0).abs() < 1e-9);
        assert!((c[1].unwrap() - 0.5).abs() < 0.01, "{:?}", c[1]);
    }

    #[test]
    fn lag_sign_convention() {
        // y lags x by two steps, so x_t pairs with y_{t+2}.
        let x: Vec<f64> = (0..40).map(|t| ((t * t) % 7) as f64).collect();
        let mut y = vec![0.0, 0.0];
        y.extend_from_slice(&x[..38]);
        let c = lagged_cross_correlation(&x, &y, &[2, -2]).unwrap();
        assert!((c[0].unwrap() - 1.0).abs() < 1e-12);
        assert!(c[1].unwrap() < 0.9);
    }

    #[test]
    fn undefined_and_invalid() {
        let c = lagged_cross_correlation(&[1.0; 10], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0], &[0]).unwrap();
        assert_eq!(c, vec![None]);
        assert!(lagged_cross_correlation(&[1.0, 2.0], &[1.0], &[0]).is_err());
        assert!(lagged_cross_correlation(&[1.0, 2.0, 3.0, 4.0], &[4.0, 1.0, 2.0, 3.0], &[2]).is_err());
    }

    proptest! {
        #[test]
        fn correlation_properties(
            x in prop::collection::vec(-10.0f64..10.0, 8..40),
            noise in prop::collection::vec(-10.0f64..10.0, 40),
            a in 0.1f64..5.0,
            b in -5.0f64..5.0,
            lag in -3isize..=3,
        ) {
            let y: Vec<f64> = noise[..x.len()].to_vec();
            let c = lagged_cross_correlation(&x, &y, &[lag]).unwrap()[0];
            let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let xn: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            let cs = lagged_cross_correlation(&xs, &y, &[lag]).unwrap()[0];
            let cn = lagged_cross_correlation(&xn, &y, &[lag]).unwrap()[0];
            if let (Some(c), Some(cs), Some(cn)) = (c, cs, cn) {
                prop_assert!((-1.0..=1.0).contains(&c));
                prop_assert!((c - cs).abs() < 1e-9);
                prop_assert!((c + cn).abs() < 1e-9);
            }
            let d = daily_average(&x, 6).unwrap();
            let ds = daily_average(&xs, 6).unwrap();
            for (u, v) in d.iter().zip(&ds) {
                prop_assert!((a * u + b - v).abs() < 1e-9);
            }
        }
    }

    fn fit_from(responsibilities: Vec<Vec<f64>>) -> MixtureFit {
        let k = responsibilities[0].len();
        let hard = responsibilities
            .iter()
            .map(|r| (0..k).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap())
            .collect();
        MixtureFit {
            method: FitMethod::Em,
            thetas: vec![vec![0.0]; k],
            weights: vec![1.0 / k as f64; k],
            responsibilities,
            hard_assignment: hard,
            trace: vec![0.0],
            initial_objective: 0.0,
            decreases: vec![],
            restart: 0,
        }
    }

    #[test]
    fn covariate_equal_to_assignment_correlates_perfectly() {
        let weather = synth_weather(3, 1).unwrap().window(0, 18).unwrap();
        let irr = weather.covariate("I_in").unwrap();
        let max = irr.iter().cloned().fold(0.0, f64::max);
        let mut inputs = Vec::new();
        let mut resp = Vec::new();
        for t in 0..18 {
            for s in 0..2 {
                inputs.push(InputPoint::new(s, t, vec![]));
                let p = if s == 0 { irr[t] / max } else { 0.5 + 0.1 * ((t * 5) % 3) as f64 };
                resp.push(vec![p, 1.0 - p]);
            }
        }
        let n = inputs.len();
        let data = Dataset::new(inputs, vec![0.0; n], vec![1.0; n]).unwrap();
        let fit = fit_from(resp);
        let rep = correlation_report(&fit, &data, &weather, Some(0), &[0, 1], Cadence::Step).unwrap();
        assert_eq!(rep.len(), 2 * COVARIATES.len() * 2);
        let e = rep.iter().find(|e| e.sensor == "bottom" && e.covariate == "I_in" && e.lag_steps == 0).unwrap();
        assert!((e.corr.unwrap() - 1.0).abs() < 1e-12);
        // wind is constant, so its correlation is undefined
        assert!(rep.iter().filter(|e| e.covariate == "wind").all(|e| e.corr.is_none()));
        assert_eq!(strongest_covariate(&rep, "bottom").unwrap().0, "I_in");

        let daily = correlation_report(&fit, &data, &weather, Some(0), &[0], Cadence::Daily { steps_per_day: 6 });
        assert!(daily.is_ok());
        let short = weather.window(0, 12).unwrap();
        assert!(correlation_report(&fit, &data, &short, None, &[0], Cadence::Step).is_err());
    }

    #[test]
    fn weather_matrix_is_symmetric_with_unit_diagonal() {
        let w = synth_weather(30, 2).unwrap();
        let (names, m) = weather_correlation_matrix(&w).unwrap();
        assert_eq!(names.len(), m.len());
        for i in 0..m.len() {
            assert_eq!(m[i][i], Some(1.0));
            for j in 0..m.len() {
                assert_eq!(m[i][j], m[j][i]);
            }
        }
        let steps = vec![WeatherStep { timestamp: 0.0, t_ext: 1.0, t_int: 1.0, i_in: 0.0, rh: 0.5, wind: 5.0 }];
        assert!(weather_correlation_matrix(&WeatherSeries::new(steps).unwrap()).is_err());
    }

    #[test]
    fn csv_and_svg_output() {
        let entries = vec![
            CorrelationEntry { sensor: "top".into(), covariate: "I_in".into(), lag_steps: -6, corr: Some(0.7) },
            CorrelationEntry { sensor: "top".into(), covariate: "wind".into(), lag_steps: 0, corr: None },
        ];
        let mut buf = Vec::new();
        write_correlation_csv(&mut buf, &entries).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "sensor,covariate,lag_steps,corr\ntop,I_in,-6,0.7\ntop,wind,0,NA\n");
        let svg = correlation_heatmap_svg(&entries);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
