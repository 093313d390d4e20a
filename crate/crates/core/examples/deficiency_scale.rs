//! KS deviation and discrepancy for a few (D, n) pairs, and a Monte Carlo
//! look at how variance-inflated residuals map to a deviation.

use mixdisc::deficiency::{
    critical_value, deviation, deviation_from_inflation, discrepancy, ks_statistic, ALPHA,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> mixdisc::error::Result<()> {
    println!("{:>6} {:>5} {:>8} {:>8} {:>12}", "D", "n", "crit", "d", "discrepancy");
    for (d_stat, n) in [(0.43, 40), (0.23, 547), (0.68, 720), (0.75, 720), (0.91, 720), (0.99, 720)] {
        let d = deviation(d_stat, n, ALPHA)?;
        println!(
            "{d_stat:>6.2} {n:>5} {:>8.4} {d:>8.4} {:>12.2}",
            critical_value(n, ALPHA)?,
            discrepancy(d)?
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 200_000;
    println!("\nvariance factor  deviation (MC)  asymptotic");
    for a in [1.5, 2.0, 3.0, 5.0] {
        let noise = Normal::new(0.0, f64::sqrt(a)).expect("positive sd");
        let r: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();
        let d = deviation(ks_statistic(&r)?, n, ALPHA)?;
        println!("{a:>15.1}  {d:>14.4}  {:>10.4}", deviation_from_inflation(a)?);
    }
    Ok(())
}
