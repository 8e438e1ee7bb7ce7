use aonlab_core::secondmoment::{calibrate_margin_constant, tilted_margins};

fn main() -> aonlab_core::Result<()> {
    let rho: Vec<f64> = (0..=2000).map(|i| -1.0 + f64::from(i) / 1000.0).collect();
    let lambdas = [1e2, 1e3, 1e4, 1e5];
    for &l in &lambdas {
        let rows = tilted_margins(&rho, l)?;
        let best = rows.iter().max_by(|a, b| a.scaled_margin.total_cmp(&b.scaled_margin)).unwrap();
        let neg = rows.iter().filter(|r| r.rho <= 0.0).map(|r| r.margin).fold(f64::NEG_INFINITY, f64::max);
        println!("lambda {l:e}: max scaled {:.6} at rho {:.3}; max margin rho<=0 {neg:.3e}", best.scaled_margin, best.rho);
    }
    println!("C = {:.6}", calibrate_margin_constant(&rho, &lambdas)?);
    Ok(())
}
