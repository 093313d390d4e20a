//! Synthetic deficiency experiment: data come from the full heat model, the
//! fitted model lacks the irradiation term. A two-cluster fit is expected to
//! isolate the sensor under the sun-exposed deck.
//!
//! Takes a minute or so in release mode.

use mixdisc::deficiency::{DeficiencyReport, ALPHA};
use mixdisc::diagnostics::{assignment_series, sensor_name};
use mixdisc::mixture::{em_fit, MixtureConfig};
use mixdisc::model::normalized_residuals;
use mixdisc::thermal::{
    generate_thermal_measurements, synth_weather, CrossSectionSpec, ThermalConstants, ThermalModel, ThermalParams,
    ThermalScene, ThermalVariant,
};

fn main() -> mixdisc::error::Result<()> {
    let scene = ThermalScene::build(CrossSectionSpec::default().with_edge_length(0.08), ThermalConstants::default())?;
    let weather = synth_weather(30, 11)?;
    let data = generate_thermal_measurements(&scene, &ThermalParams::truth(), &weather, 0.05, 11)?;
    let variant = ThermalVariant::NoIrradiation;
    let model = ThermalModel::new(scene, weather, variant);
    let space = variant.space();

    for k in [1, 2] {
        let config = MixtureConfig { k, em_iters: 10, seed: 12, ..MixtureConfig::default() };
        let fit = em_fit(&data, &model, &space, &config)?;
        println!("k={k}");
        for j in 0..k {
            let r = normalized_residuals(&model, &data, &fit.thetas[j])?;
            let members: Vec<f64> = fit.members(j).iter().map(|&i| r[i]).collect();
            let report = if members.is_empty() { "empty".into() } else { DeficiencyReport::from_residuals(&members, ALPHA)?.to_string() };
            println!("  cluster {}  weight {:.2}  alpha {:.2}  c_c {:.2}  {report}", j + 1, fit.weights[j], fit.thetas[j][0], fit.thetas[j][1]);
            for s in assignment_series(&fit.responsibilities, &data, j, data.len() / 4)? {
                let mean = s.values.iter().sum::<f64>() / s.values.len() as f64;
                println!("    P({} in cluster) = {mean:.2}", sensor_name(s.sensor_id));
            }
        }
    }
    Ok(())
}
