//! Two-stage training of the learned base matrix and classifier on the
//! narrowband street scenario, compared with random-phase OMP at the same
//! number of measurements.
//!
//! cargo run --release --example train_narrowband -- 4000 50 25

use convcs::baseline::{random_phase_matrix, OmpConfig};
use convcs::channel::{beamspace_prior, gen_scenario, normalize_eval, normalize_stage1, prior_support, ScenarioConfig};
use convcs::eval::{sweep, Method, SweepConfig};
use convcs::network::{train_stage1, train_stage2, TrainConfig};
use convcs::sensing::{mask, Resolution};
use convcs::ComplexMatrix;

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> convcs::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (n_train, e1, e2) = (arg(1, 4000), arg(2, 50), arg(3, 25));
    let all = gen_scenario(&ScenarioConfig { seed: 1, ..Default::default() }, n_train + n_train / 4)?;
    let (train, test) = all.split_at(n_train);

    let mut cfg = TrainConfig { epochs: e1, seed: 3, ..Default::default() };
    let mut s1 = train.to_vec();
    normalize_stage1(&mut s1)?;
    let stage1 = train_stage1(&s1, &cfg)?;
    println!("stage 1 loss {:.4}", stage1.report.epoch_loss.last().unwrap_or(&f64::NAN));

    let mut s2 = train.to_vec();
    normalize_eval(&mut s2)?;
    cfg.epochs = e2;
    cfg.train_snr_db = Some(0.0);
    let model = train_stage2(&s2, &cfg, Some(&stage1.params))?.params;

    // share of mask energy that lands on beams the prior says are likely
    let support = prior_support(&beamspace_prior(train)?);
    let on_support = |p: &ComplexMatrix| -> convcs::Result<f64> {
        let m = mask(p)?;
        let total: f64 = m.iter().map(|v| v * v).sum();
        Ok(support.iter().map(|&(i, j)| m[[i, j]].powi(2)).sum::<f64>() / total)
    };
    let random = random_phase_matrix(16, Resolution::Unconstrained, 3)?;
    println!(
        "mask energy on the prior support: learned {:.3}, random {:.3}",
        on_support(&model.filter)?,
        on_support(random.matrix())?
    );

    let mut test = test.to_vec();
    normalize_eval(&mut test)?;
    let methods = [Method::learned("learned", vec![model]), Method::random_omp(Resolution::Unconstrained, OmpConfig::default())];
    let cfg = SweepConfig { snr_db: vec![-10.0, 0.0, 10.0, 20.0], measurements: vec![40], seed: 5, threads: 1 };
    print!("{}", sweep(&test, &methods, &cfg)?.to_csv());
    Ok(())
}
