//! Monitoring exports: block-averaging raw rows onto the 4-hour grid.
//!
//! Input columns are the weather schema `timestamp,T_ext,T_int,I_in,RH,wind`
//! (timestamp in seconds), optionally followed by structural temperatures
//! `T_bottom,T_top,T_south,T_north`. Blocks are anchored at the first
//! timestamp and labeled with their start time.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dataset, InputPoint};
use crate::thermal::{WeatherSeries, WeatherStep, SENSOR_NAMES, STEP_SECONDS};

/// Default noise level attached to ingested temperature readings (K).
pub const DEFAULT_SIGMA: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub weather: WeatherSeries,
    /// Block means of the sensor columns, `sensors[s][step]`; empty if the
    /// export has no sensor columns.
    pub sensors: Vec<Vec<f64>>,
}

impl Ingested {
    /// Readings from step `warmup` on, `time_index` counted from there.
    pub fn dataset(&self, warmup: usize, sigma: f64) -> Result<Dataset> {
        if self.sensors.is_empty() {
            return Err(Error::invalid("the export has no sensor columns"));
        }
        if !(sigma > 0.0) {
            return Err(Error::invalid("sigma must be positive"));
        }
        let steps = self.weather.len();
        if steps <= warmup {
            return Err(Error::invalid(format!(
                "export has {steps} steps, warm-up needs {warmup} plus at least one"
            )));
        }
        let mut inputs = Vec::new();
        let mut readings = Vec::new();
        for t in warmup..steps {
            for (s, series) in self.sensors.iter().enumerate() {
                inputs.push(InputPoint::new(s, t - warmup, Vec::new()));
                readings.push(series[t]);
            }
        }
        let n = readings.len();
        Dataset::new(inputs, readings, vec![sigma; n])
    }
}

pub fn ingest_monitoring_csv(path: &Path) -> Result<Ingested> {
    ingest_monitoring_reader(std::fs::File::open(path)?)
}

pub fn ingest_monitoring_reader<R: Read>(reader: R) -> Result<Ingested> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let weather_cols: Vec<usize> = ["timestamp", "T_ext", "T_int", "I_in", "RH", "wind"]
        .iter()
        .map(|n| col(n).ok_or_else(|| Error::invalid(format!("monitoring CSV lacks column {n}"))))
        .collect::<Result<_>>()?;
    let sensor_cols: Vec<Option<usize>> = SENSOR_NAMES.iter().map(|s| col(&format!("T_{s}"))).collect();
    let sensor_cols: Vec<usize> = match sensor_cols.iter().filter(|c| c.is_some()).count() {
        0 => Vec::new(),
        n if n == SENSOR_NAMES.len() => sensor_cols.into_iter().flatten().collect(),
        _ => return Err(Error::invalid("sensor columns must be all of T_bottom,T_top,T_south,T_north or none")),
    };
    let width = 5 + sensor_cols.len();

    let mut rows: Vec<(f64, Vec<f64>)> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |c: usize| -> Result<f64> {
            rec.get(c)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::invalid(format!("row {}: bad value in column {}", line + 1, header[c])))
        };
        let t = parse(weather_cols[0])?;
        let mut values = Vec::with_capacity(width);
        for &c in weather_cols[1..].iter().chain(&sensor_cols) {
            values.push(parse(c)?);
        }
        if let Some((prev, _)) = rows.last() {
            if t <= *prev {
                return Err(Error::invalid(format!(
                    "timestamps must increase: row {} has {t} after {prev}",
                    line + 1
                )));
            }
        }
        rows.push((t, values));
    }
    if rows.is_empty() {
        return Err(Error::invalid("monitoring CSV has no rows"));
    }

    let start = rows[0].0;
    let mut blocks: Vec<(usize, Vec<f64>, usize)> = Vec::new();
    for (t, values) in &rows {
        let b = ((t - start) / STEP_SECONDS + 1e-9).floor() as usize;
        match blocks.last_mut() {
            Some((last, sums, count)) if *last == b => {
                sums.iter_mut().zip(values).for_each(|(s, v)| *s += v);
                *count += 1;
            }
            _ => blocks.push((b, values.clone(), 1)),
        }
    }
    let means: Vec<(usize, Vec<f64>)> = blocks
        .into_iter()
        .map(|(b, sums, count)| (b, sums.into_iter().map(|s| s / count as f64).collect()))
        .collect();

    // Single missing blocks are interpolated; longer gaps are errors.
    let mut gaps = Vec::new();
    for w in means.windows(2) {
        let missing = w[1].0 - w[0].0 - 1;
        if missing > 1 {
            let from = start + (w[0].0 + 1) as f64 * STEP_SECONDS;
            let to = start + w[1].0 as f64 * STEP_SECONDS;
            gaps.push(format!("[{from}, {to})"));
        }
    }
    if !gaps.is_empty() {
        return Err(Error::invalid(format!(
            "monitoring data has gaps longer than one 4-hour step: {}",
            gaps.join(", ")
        )));
    }
    let mut grid: Vec<Vec<f64>> = Vec::new();
    for (i, (b, v)) in means.iter().enumerate() {
        if i > 0 && *b == means[i - 1].0 + 2 {
            let prev = &means[i - 1].1;
            grid.push(prev.iter().zip(v).map(|(a, c)| 0.5 * (a + c)).collect());
        }
        grid.push(v.clone());
    }

    let steps = grid
        .iter()
        .enumerate()
        .map(|(k, v)| WeatherStep {
            timestamp: start + k as f64 * STEP_SECONDS,
            t_ext: v[0],
            t_int: v[1],
            i_in: v[2],
            rh: v[3],
            wind: v[4],
        })
        .collect();
    let sensors = (0..sensor_cols.len())
        .map(|s| grid.iter().map(|v| v[5 + s]).collect())
        .collect();
    Ok(Ingested {
        weather: WeatherSeries::new(steps)?,
        sensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermal::synth_weather;

    fn csv_of(rows: &[(f64, [f64; 5])], sensors: Option<&[[f64; 4]]>) -> String {
        let mut s = String::from("timestamp,T_ext,T_int,I_in,RH,wind");
        if sensors.is_some() {
            s.push_str(",T_bottom,T_top,T_south,T_north");
        }
        s.push('\n');
        for (i, (t, v)) in rows.iter().enumerate() {
            s.push_str(&format!("{t},{},{},{},{},{}", v[0], v[1], v[2], v[3], v[4]));
            if let Some(sens) = sensors {
                let x = sens[i];
                s.push_str(&format!(",{},{},{},{}", x[0], x[1], x[2], x[3]));
            }
            s.push('\n');
        }
        s
    }

    #[test]
    fn four_hour_data_is_unchanged() {
        let w = synth_weather(2, 7).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let got = ingest_monitoring_reader(buf.as_slice()).unwrap();
        assert_eq!(got.weather, w);
        assert!(got.sensors.is_empty());
    }

    #[test]
    fn ten_minute_constant_averages_to_constant() {
        let rows: Vec<(f64, [f64; 5])> = (0..6 * 24).map(|k| (600.0 * k as f64, [12.5, 13.0, 0.0, 0.6, 5.0])).collect();
        let got = ingest_monitoring_reader(csv_of(&rows, None).as_bytes()).unwrap();
        assert_eq!(got.weather.len(), 6);
        assert!(got.weather.steps.iter().all(|s| (s.t_ext - 12.5).abs() < 1e-12 && (s.rh - 0.6).abs() < 1e-12));
    }

    #[test]
    fn hourly_ramp_gives_block_means() {
        let rows: Vec<(f64, [f64; 5])> = (0..24).map(|h| (3600.0 * h as f64, [h as f64, 0.0, 0.0, 0.5, 5.0])).collect();
        let got = ingest_monitoring_reader(csv_of(&rows, None).as_bytes()).unwrap();
        let means: Vec<f64> = got.weather.steps.iter().map(|s| s.t_ext).collect();
        assert_eq!(means, vec![1.5, 5.5, 9.5, 13.5, 17.5, 21.5]);
        let stamps: Vec<f64> = got.weather.steps.iter().map(|s| s.timestamp).collect();
        assert_eq!(stamps, (0..6).map(|k| k as f64 * STEP_SECONDS).collect::<Vec<_>>());
    }

    #[test]
    fn sensors_become_a_dataset() {
        let rows: Vec<(f64, [f64; 5])> = (0..8).map(|k| (STEP_SECONDS * k as f64, [10.0, 10.0, 0.0, 0.5, 5.0])).collect();
        let sens: Vec<[f64; 4]> = (0..8).map(|k| [k as f64, 10.0 + k as f64, 20.0, 30.0]).collect();
        let got = ingest_monitoring_reader(csv_of(&rows, Some(&sens)).as_bytes()).unwrap();
        let d = got.dataset(2, DEFAULT_SIGMA).unwrap();
        assert_eq!(d.len(), 6 * 4);
        assert_eq!(d.readings()[..4], [2.0, 12.0, 20.0, 30.0]);
        assert_eq!(d.inputs()[4].time_index, 1);
        assert!(d.noise_sd().iter().all(|s| *s == 0.05));
        assert!(got.dataset(8, 0.05).is_err());
    }

    #[test]
    fn single_missing_step_is_interpolated() {
        let rows: Vec<(f64, [f64; 5])> = [0, 1, 3, 4]
            .iter()
            .map(|&k| (STEP_SECONDS * k as f64, [k as f64, 0.0, 0.0, 0.5, 5.0]))
            .collect();
        let got = ingest_monitoring_reader(csv_of(&rows, None).as_bytes()).unwrap();
        let t: Vec<f64> = got.weather.steps.iter().map(|s| s.t_ext).collect();
        assert_eq!(t, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn long_gap_and_disorder_rejected() {
        let rows: Vec<(f64, [f64; 5])> = [0, 1, 4, 5]
            .iter()
            .map(|&k| (STEP_SECONDS * k as f64, [1.0, 0.0, 0.0, 0.5, 5.0]))
            .collect();
        let err = ingest_monitoring_reader(csv_of(&rows, None).as_bytes()).unwrap_err();
        assert!(err.to_string().contains("[28800, 57600)"), "{err}");

        let rows = vec![(0.0, [1.0; 5]), (7200.0, [1.0; 5]), (3600.0, [1.0; 5])];
        assert!(ingest_monitoring_reader(csv_of(&rows, None).as_bytes()).is_err());
    }

    #[test]
    fn partial_sensor_columns_rejected() {
        let csv = "timestamp,T_ext,T_int,I_in,RH,wind,T_top\n0,1,1,0,0.5,5,3\n";
        assert!(ingest_monitoring_reader(csv.as_bytes()).is_err());
    }
}
