//! Wideband training with learned subcarrier power weights. After every
//! stage-2 step the weights are projected back to one value per block with
//! unit total power; the example reports the projection residuals and
//! compares the wideband model with a narrowband one on the same drops.
//!
//! cargo run --release --example wideband_power -- 2000 30 15

use convcs::channel::{gen_scenario, gen_wideband, normalize_eval, normalize_stage1, ChannelSample, ScenarioConfig, WidebandConfig};
use convcs::eval::{sweep, Method, SweepConfig};
use convcs::network::{train_stage1, train_stage2_with, Stage, TrainConfig, TrainObserver, ModelParams};

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

/// Largest deviation from unit total power seen after a projection.
#[derive(Default)]
struct PowerCheck {
    worst: f64,
    calls: usize,
}

impl TrainObserver for PowerCheck {
    fn on_subcarrier_projection(&mut self, p: &[f64], _expanded: &[f64]) {
        let total: f64 = p.iter().map(|v| v * v).sum();
        self.worst = self.worst.max((total - 1.0).abs());
        self.calls += 1;
    }
}

fn train(train: &[ChannelSample], e1: usize, e2: usize, check: &mut PowerCheck) -> convcs::Result<ModelParams> {
    let mut cfg = TrainConfig { epochs: e1, seed: 3, ..Default::default() };
    let mut s1 = train.to_vec();
    normalize_stage1(&mut s1)?;
    let stage1 = train_stage1(&s1, &cfg)?;
    let mut s2 = train.to_vec();
    normalize_eval(&mut s2)?;
    cfg.epochs = e2;
    cfg.train_snr_db = Some(10.0);
    let model = train_stage2_with(&s2, &cfg, Some(&stage1.params), check)?.params;
    assert_eq!(model.stage, Stage::Two);
    Ok(model)
}

fn main() -> convcs::Result<()> {
    let (n_train, e1, e2) = (arg(1, 2000), arg(2, 30), arg(3, 15));
    let scenario = ScenarioConfig { seed: 1, ..Default::default() };
    let wcfg = WidebandConfig::for_array(scenario.n, scenario.bandwidth);
    let total = n_train + n_train / 4;
    let narrow = gen_scenario(&scenario, total)?;
    let wide = gen_wideband(&scenario, &wcfg, total)?;
    println!("{} subcarriers per wideband sample", wide[0].matrices().len());

    let sweep_cfg = SweepConfig { snr_db: vec![0.0, 10.0, 20.0], measurements: vec![40], seed: 5, threads: 1 };
    for (name, data) in [("narrowband", narrow), ("wideband", wide)] {
        let (tr, te) = data.split_at(n_train);
        let mut check = PowerCheck::default();
        let model = train(tr, e1, e2, &mut check)?;
        if let Some(p) = &model.subcarrier_weights {
            let shown: Vec<String> = p.iter().map(|v| format!("{v:.3}")).collect();
            println!("p = [{}]", shown.join(", "));
            println!("{} projections, worst |sum p^2 - 1| = {:.1e}", check.calls, check.worst);
        }
        let mut te = te.to_vec();
        normalize_eval(&mut te)?;
        print!("{}", sweep(&te, &[Method::learned(name, vec![model])], &sweep_cfg)?.to_csv());
    }
    Ok(())
}
