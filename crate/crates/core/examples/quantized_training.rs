//! Training under 1-bit and 3-bit phase shifters. The filter is projected
//! onto the phase grid every few mini-batches, and the final base matrix is
//! exactly constant-modulus with quantised phases.
//!
//! cargo run --release --example quantized_training -- 3000 30 15

use convcs::channel::{gen_scenario, normalize_eval, normalize_stage1, ScenarioConfig};
use convcs::eval::{sweep, Method, SweepConfig};
use convcs::network::{train_stage1, train_stage2, TrainConfig};
use convcs::sensing::{phase_residue, Resolution};

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> convcs::Result<()> {
    let (n_train, e1, e2) = (arg(1, 3000), arg(2, 30), arg(3, 15));
    let all = gen_scenario(&ScenarioConfig { seed: 1, ..Default::default() }, n_train + n_train / 4)?;
    let (train, test) = all.split_at(n_train);
    let mut s1 = train.to_vec();
    normalize_stage1(&mut s1)?;
    let mut s2 = train.to_vec();
    normalize_eval(&mut s2)?;
    let mut test = test.to_vec();
    normalize_eval(&mut test)?;

    let mut methods = Vec::new();
    for res in [Resolution::Unconstrained, Resolution::Bits(3), Resolution::Bits(1)] {
        let mut cfg = TrainConfig { epochs: e1, resolution: res, seed: 3, ..Default::default() };
        let stage1 = train_stage1(&s1, &cfg)?;
        cfg.epochs = e2;
        cfg.train_snr_db = Some(10.0);
        let model = train_stage2(&s2, &cfg, Some(&stage1.params))?.params;

        let moduli: Vec<f64> = model.filter.abs();
        let spread = moduli.iter().cloned().fold(f64::MIN, f64::max) - moduli.iter().cloned().fold(f64::MAX, f64::min);
        let residue = match res.bits() {
            Some(q) => model.filter.as_slice().iter().map(|&z| phase_residue(z, q)).fold(0.0, f64::max),
            None => 0.0,
        };
        println!("q = {res}: modulus spread {spread:.1e}, worst phase residue {residue:.1e}");
        methods.push(Method::learned(format!("q{res}"), vec![model]));
    }

    let cfg = SweepConfig { snr_db: vec![0.0, 10.0, 20.0], measurements: vec![40], seed: 5, threads: 1 };
    print!("{}", sweep(&test, &methods, &cfg)?.to_csv());
    Ok(())
}
