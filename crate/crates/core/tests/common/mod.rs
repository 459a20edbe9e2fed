#![allow(dead_code)]

use viewsync::losses::{LossConfig, LossScenario};
use viewsync::neural_blocks::ArchConfig;
use viewsync::pipeline::{Calibration, ModelConfig, Variant};
use viewsync::scene_sim::{generate_dataset, Dataset, SimConfig};

pub fn small_sim(n_frames: usize) -> SimConfig {
    let mut cfg = SimConfig::desk();
    cfg.n_frames = n_frames;
    cfg.agents.count = 20;
    cfg
}

pub fn small_dataset(n_frames: usize, seed: u64) -> Dataset {
    generate_dataset(&small_sim(n_frames), seed).expect("dataset")
}

pub fn calibration(ds: &Dataset) -> Calibration {
    Calibration {
        scene: ds.scene,
        cameras: ds.cameras.clone(),
    }
}

pub fn small_config(variant: Variant, scenario: LossScenario) -> ModelConfig {
    let mut c = ModelConfig::new(variant, 3, (64, 48));
    c.arch = ArchConfig {
        width_divisor: 8,
        ..ArchConfig::default()
    };
    c.corr_max_cells = 48;
    c.sigma = 1.5;
    c.density_scale = 10.0;
    c.loss = LossConfig::for_scenario(scenario);
    c.seed = 3;
    c
}
