//! Sweeping the number of clusters on the illustrative data: beyond two,
//! extra clusters tend to end up nearly empty.

use mixdisc::illustrative::{affine_space, generate_illustrative_data, AffineModel};
use mixdisc::mixture::{em_fit, MixtureConfig};

fn main() -> mixdisc::error::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let data = generate_illustrative_data(40, 0.05, seed)?;
    for k in 1..=4 {
        let config = MixtureConfig { k, seed, restarts: 10, ..MixtureConfig::default() };
        let fit = em_fit(&data, &AffineModel, &affine_space(), &config)?;
        println!("k={k}  log marginal posterior {:>9.3}", fit.final_objective());
        for (w, t) in fit.weights.iter().zip(&fit.thetas) {
            println!("      weight {w:.3}  slope {:.2}  intercept {:.2}", t[0], t[1]);
        }
    }
    Ok(())
}
