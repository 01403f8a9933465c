//! Trains on a small synthetic set and prints the loss curve.
//!
//! `cargo run --release -p headswap-diffusion --example toy_train -- [steps] [base_width] [depth] [lr]`

use headswap_core::mear::MearConfig;
use headswap_core::pipeline::{synth_generate, SynthConfig};
use headswap_diffusion::optim::AdamConfig;
use headswap_diffusion::train::{prepare_items, smoothed, train, TrainConfig, TrainingState};
use headswap_diffusion::{DenoiserConfig, NoiseSchedule, PatchCodec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let steps: u64 = arg(0, "100").parse()?;
    let base_width: usize = arg(1, "64").parse()?;
    let depth: usize = arg(2, "3").parse()?;
    let lr: f64 = arg(3, "1e-4").parse()?;

    let samples = synth_generate(4, 1, &SynthConfig::default())?;
    let codec = PatchCodec::default();
    let items = prepare_items(&samples, &codec, &MearConfig::default())?;
    let model = DenoiserConfig { base_width, depth, ..DenoiserConfig::default() };
    let train_cfg = TrainConfig { adam: AdamConfig { lr, ..AdamConfig::default() }, ..TrainConfig::default() };
    let mut state = TrainingState::new(model, codec, NoiseSchedule::default(), train_cfg, 7)?;
    println!("parameters: {}", state.model.params().num_scalars());
    let recs = train(&mut state, &items, steps, None)?;
    let losses: Vec<f64> = recs.iter().map(|r| r.loss).collect();
    let sm = smoothed(&losses, 50);
    for r in recs.iter().step_by((steps as usize / 20).max(1)) {
        println!("{} loss {:.4} smoothed {:.4} t {:.1}s", r.step, r.loss, sm[r.step as usize - 1], r.wall_clock_s);
    }
    println!("final smoothed {:.4}, first {:.4}, wall {:.1}s", sm.last().unwrap(), losses[0], recs.last().unwrap().wall_clock_s);
    Ok(())
}
