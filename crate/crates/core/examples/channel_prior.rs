//! Generates the synthetic two-lane street and prints its beamspace prior.
//! The best beams fall in a few narrow strips, which is the structure the
//! learned sensing matrix exploits.
//!
//! cargo run --release --example channel_prior -- 5000

use convcs::channel::{beamspace_prior, gen_scenario, prior_support, ScenarioConfig};

fn main() -> convcs::Result<()> {
    let count: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let cfg = ScenarioConfig { seed: 1, ..Default::default() };
    let samples = gen_scenario(&cfg, count)?;
    let los = samples.iter().filter(|s| s.los).count();
    let prior = beamspace_prior(&samples)?;
    let n = cfg.n;

    println!("{count} drops, {los} with line of sight");
    println!("prior support: {} of {} beams", prior_support(&prior).len(), n * n);
    // one character per beam, darker = more likely
    let shades = [' ', '.', ':', '*', '#'];
    let peak = prior.iter().cloned().fold(0.0, f64::max);
    for row in prior.rows() {
        let line: String = row
            .iter()
            .map(|&p| {
                if p == 0.0 {
                    shades[0]
                } else {
                    shades[1 + ((p / peak) * 3.999) as usize]
                }
            })
            .collect();
        println!("|{line}|");
    }
    Ok(())
}
