//! Full SNR x M sweep: one learned model per measurement count, random-phase
//! OMP and the exhaustive oracle, all under the same paired noise. Writes
//! the report to `sweep.csv` with its manifest next to it.
//!
//! cargo run --release --example eval_sweep -- 3000 30 15

use std::path::Path;

use convcs::baseline::OmpConfig;
use convcs::channel::{gen_scenario, normalize_eval, normalize_stage1, ScenarioConfig};
use convcs::eval::{sweep, Method, SweepConfig};
use convcs::io::{write_csv, Manifest};
use convcs::network::{train_stage1, train_stage2, TrainConfig};
use convcs::sensing::Resolution;

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

    let grid = vec![5, 10, 40];
    let mut models = Vec::new();
    for &m in &grid {
        let mut cfg = TrainConfig { epochs: e1, measurements: m, seed: 3, ..Default::default() };
        let stage1 = train_stage1(&s1, &cfg)?;
        cfg.epochs = e2;
        cfg.train_snr_db = Some(0.0);
        models.push(train_stage2(&s2, &cfg, Some(&stage1.params))?.params);
    }

    let mut test = test.to_vec();
    normalize_eval(&mut test)?;
    let methods = [
        Method::learned("learned", models),
        Method::random_omp(Resolution::Unconstrained, OmpConfig::default()),
        Method::oracle(),
    ];
    let snr_db: Vec<f64> = (0..9).map(|i| -10.0 + 5.0 * i as f64).collect();
    let cfg = SweepConfig { snr_db, measurements: grid, seed: 5, threads: 1 };
    let report = sweep(&test, &methods, &cfg)?;

    // rows sharing (snr, M) saw identical noise
    for r in report.rows.iter().filter(|r| r.m == 40 && r.snr_db == 0.0) {
        println!("{:>10} noise {}", r.method, &r.noise_hash[..16]);
    }
    let mut manifest = Manifest::new();
    manifest.set("seed", cfg.seed).set("samples", test.len());
    write_csv(Path::new("sweep.csv"), &report.to_csv(), &manifest)?;
    print!("{}", report.to_csv());
    Ok(())
}
