//! Trains a base matrix and writes its sensing mask `|N dft2(P)|` as a CSV
//! grid, next to the mask of a random-phase matrix and the beamspace prior.
//! Circularly shifting the base matrix leaves the mask file unchanged.
//!
//! cargo run --release --example mask_export -- 3000 30

use std::path::Path;

use convcs::baseline::random_phase_matrix;
use convcs::channel::{beamspace_prior, gen_scenario, normalize_stage1, ScenarioConfig};
use convcs::io::{grid_csv, write_csv, Manifest};
use convcs::linalg::circ_shift;
use convcs::network::{train_stage1, TrainConfig};
use convcs::sensing::{mask, Resolution};

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> convcs::Result<()> {
    let (n_train, epochs) = (arg(1, 3000), arg(2, 30));
    let train = gen_scenario(&ScenarioConfig { seed: 1, ..Default::default() }, n_train)?;
    let mut s1 = train.clone();
    normalize_stage1(&mut s1)?;
    let cfg = TrainConfig { epochs, resolution: Resolution::Bits(3), seed: 3, ..Default::default() };
    let p = train_stage1(&s1, &cfg)?.params.filter;

    let learned = grid_csv(&mask(&p)?);
    let shifted = grid_csv(&mask(&circ_shift(&p, 5, 11)?)?);
    println!("mask unchanged by a circular shift: {}", learned == shifted);

    let random = random_phase_matrix(16, Resolution::Bits(3), 3)?;
    let empty = Manifest::new();
    write_csv(Path::new("mask_learned.csv"), &learned, &empty)?;
    write_csv(Path::new("mask_random.csv"), &grid_csv(&mask(random.matrix())?), &empty)?;
    write_csv(Path::new("prior.csv"), &grid_csv(&beamspace_prior(&train)?), &empty)?;
    println!("wrote mask_learned.csv, mask_random.csv and prior.csv");
    Ok(())
}
