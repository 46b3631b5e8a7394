//! Runs the bundled 28-command exploration headless and prints its summary.

use std::time::Instant;

use voxbridge_core::mission::{MissionRunner, RunnerConfig, Script};
use voxbridge_core::sim::SimConfig;
use voxbridge_core::world::WorldModel;

fn main() {
    let started = Instant::now();
    let mut runner = MissionRunner::new(
        WorldModel::reference(),
        SimConfig::default(),
        RunnerConfig::default(),
        Script::reference(),
    );
    runner.run_to_end();
    println!("{}", runner.summary());
    println!("wall clock        {:.2} s", started.elapsed().as_secs_f64());
}
