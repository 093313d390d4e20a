//! Builds the box-girder cross-section, generates synthetic weather and runs
//! the transient heat model, printing daily sensor means.

use mixdisc::thermal::{synth_weather, CrossSectionSpec, ThermalConstants, ThermalParams, ThermalScene, BoundaryTag, STEPS_PER_DAY};

fn main() -> mixdisc::error::Result<()> {
    let scene = ThermalScene::build(CrossSectionSpec::default().with_edge_length(0.08), ThermalConstants::default())?;
    let mesh = &scene.mesh;
    println!("{} nodes, {} triangles", mesh.n_nodes(), mesh.n_triangles());
    for tag in [BoundaryTag::Interior, BoundaryTag::Exterior, BoundaryTag::Sun] {
        println!("  {tag:?} boundary: {:.2} m", mesh.tag_length(tag));
    }

    let weather = synth_weather(7, 3)?;
    let series = scene.simulate(&ThermalParams::truth(), &weather)?;
    let window = weather.window(weather.len() - series.n_steps(), series.n_steps())?;
    println!("\nday   T_ext  {}", mesh.probes.iter().map(|p| format!("{:>7}", p.name)).collect::<String>());
    for day in 0..series.n_steps() / STEPS_PER_DAY {
        let mean = |v: &[f64]| v[day * STEPS_PER_DAY..(day + 1) * STEPS_PER_DAY].iter().sum::<f64>() / STEPS_PER_DAY as f64;
        let t_ext = mean(&window.covariate("T_ext")?);
        let sensors: String = series.values.iter().map(|s| format!("{:>7.2}", mean(s))).collect();
        println!("{day:>3}  {t_ext:>6.2}  {sensors}");
    }
    Ok(())
}
