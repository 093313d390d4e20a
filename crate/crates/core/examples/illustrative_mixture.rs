//! The analytic bending example: an affine model fitted to data from a
//! curved truth is deficient; a two-cluster mixture of affine models is not.
//!
//! `cargo run --release --example illustrative_mixture -- [seed]`

use mixdisc::deficiency::{DeficiencyReport, ALPHA};
use mixdisc::illustrative::{affine_space, generate_illustrative_data, quadratic_space, AffineModel, CurvatureDomain, QuadraticModel};
use mixdisc::mixture::{cem_fit, em_fit, MixtureConfig};
use mixdisc::model::normalized_residuals;

fn main() -> mixdisc::error::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let data = generate_illustrative_data(40, 0.05, seed)?;
    let space = affine_space();
    let config = |k| MixtureConfig { k, seed, restarts: 10, ..MixtureConfig::default() };

    let base = em_fit(&data, &AffineModel, &space, &config(1))?;
    let r = normalized_residuals(&AffineModel, &data, &base.thetas[0])?;
    println!("affine MAP  theta {:.2?}  {}", base.thetas[0], DeficiencyReport::from_residuals(&r, ALPHA)?);

    let quad = em_fit(&data, &QuadraticModel, &quadratic_space(CurvatureDomain::Real), &config(1))?;
    let r = normalized_residuals(&QuadraticModel, &data, &quad.thetas[0])?;
    println!("quadratic   theta {:.2?}  {}", quad.thetas[0], DeficiencyReport::from_residuals(&r, ALPHA)?);

    for fit in [em_fit(&data, &AffineModel, &space, &config(2))?, cem_fit(&data, &AffineModel, &space, &config(2))?] {
        println!("\n{:?} k=2, objective {:.3} after {} iterations", fit.method, fit.final_objective(), fit.trace.len());
        let residuals: Vec<Vec<f64>> = fit
            .thetas
            .iter()
            .map(|t| normalized_residuals(&AffineModel, &data, t))
            .collect::<Result<_, _>>()?;
        for j in 0..fit.k() {
            let r: Vec<f64> = fit.members(j).iter().map(|&i| residuals[j][i]).collect();
            let report = if r.is_empty() { "empty".to_string() } else { DeficiencyReport::from_residuals(&r, ALPHA)?.to_string() };
            println!("  cluster {}  weight {:.2}  theta {:.2?}  {report}", j + 1, fit.weights[j], fit.thetas[j]);
        }
        let pooled: Vec<f64> = fit.hard_assignment.iter().enumerate().map(|(i, &z)| residuals[z][i]).collect();
        println!("  mixture    {}", DeficiencyReport::from_residuals(&pooled, ALPHA)?);
    }
    Ok(())
}
