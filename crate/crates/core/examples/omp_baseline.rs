//! Random-phase sensing with OMP recovery, the non-learned baseline.
//! Prints the alignment probability over SNR for a few measurement counts.
//!
//! cargo run --release --example omp_baseline -- 400

use convcs::channel::{gen_scenario, normalize_eval, ScenarioConfig};
use convcs::eval::{sweep, Method, SweepConfig};
use convcs::baseline::OmpConfig;
use convcs::sensing::Resolution;

fn main() -> convcs::Result<()> {
    let count: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let mut test = gen_scenario(&ScenarioConfig { seed: 2, ..Default::default() }, count)?;
    normalize_eval(&mut test)?;

    let mut coarse = Method::random_omp(Resolution::Bits(1), OmpConfig::default());
    coarse.name = "random_omp_q1".into();
    let methods = [Method::random_omp(Resolution::Unconstrained, OmpConfig::default()), coarse, Method::oracle()];

    let cfg = SweepConfig { snr_db: vec![-10.0, 0.0, 10.0, 20.0, 30.0], measurements: vec![10, 40, 128], seed: 1, threads: 1 };
    let report = sweep(&test, &methods, &cfg)?;
    print!("{}", report.to_csv());
    Ok(())
}
