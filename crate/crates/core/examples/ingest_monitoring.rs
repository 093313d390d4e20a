//! Turns a 10-minute monitoring export into the 4-hour grid the heat model
//! runs on. The export here is fabricated from synthetic weather.

use mixdisc::experiment::{ingest_monitoring_reader, DEFAULT_SIGMA};
use mixdisc::thermal::synth_weather;

fn main() -> mixdisc::error::Result<()> {
    let coarse = synth_weather(2, 9)?;
    let mut csv = String::from("timestamp,T_ext,T_int,I_in,RH,wind,T_bottom,T_top,T_south,T_north\n");
    for (k, w) in coarse.steps.iter().enumerate() {
        for m in 0..24 {
            let t = k as f64 * 14_400.0 + m as f64 * 600.0;
            let wiggle = 0.1 * (m as f64 - 11.5) / 11.5;
            let s = w.t_int + 0.3 * (w.t_ext - w.t_int);
            csv.push_str(&format!(
                "{t},{},{},{},{},{},{s},{},{s},{s}\n",
                w.t_ext + wiggle, w.t_int, w.i_in, w.rh, w.wind, s + 0.01 * w.i_in
            ));
        }
    }
    let ingested = ingest_monitoring_reader(csv.as_bytes())?;
    println!("{} raw rows -> {} steps", coarse.len() * 24, ingested.weather.len());
    for (a, b) in coarse.steps.iter().zip(&ingested.weather.steps).take(6) {
        println!("  T_ext {:>7.3} -> block mean {:>7.3}", a.t_ext, b.t_ext);
    }
    let data = ingested.dataset(coarse.len() / 2, DEFAULT_SIGMA)?;
    println!("{} readings after warm-up, sigma {}", data.len(), data.noise_sd()[0]);
    Ok(())
}
