use std::collections::BTreeMap;

use headswap_core::canvas::split_canvas;
use headswap_core::mear::MearConfig;
use headswap_core::pipeline::{load_dataset, save_dataset, synth_generate, SynthConfig};
use headswap_diffusion::sample::{sample, SampleOptions};
use headswap_diffusion::train::{prepare_items, train, TrainConfig, TrainingState};
use headswap_diffusion::{checkpoint, DenoiserConfig, NoiseSchedule, PatchCodec};
use proptest::prelude::*;

fn tiny(frames: usize) -> TrainingState {
    TrainingState::new(
        DenoiserConfig {
            base_width: 8,
            depth: 2,
            frames_per_clip: frames,
            ..DenoiserConfig::default()
        },
        PatchCodec::default(),
        NoiseSchedule::default(),
        TrainConfig::default(),
        17,
    )
    .unwrap()
}

#[test]
fn checkpointed_model_samples_identically() {
    let cfg = SynthConfig {
        frames: 4,
        ..SynthConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&synth_generate(3, 41, &cfg).unwrap(), &dir.path().join("data")).unwrap();
    let samples = load_dataset(&dir.path().join("data")).unwrap();

    let mut state = tiny(4);
    let items = prepare_items(&samples, &state.codec, &MearConfig::default()).unwrap();
    let log = train(&mut state, &items, 3, None).unwrap();
    assert_eq!(log.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(log.iter().all(|r| r.loss.is_finite()));

    let path = dir.path().join("ck.bin");
    checkpoint::save(&state, &BTreeMap::new(), &path).unwrap();
    let (loaded, _) = checkpoint::load(&path).unwrap();

    let opts = SampleOptions {
        steps: 4,
        seed: 5,
        ..SampleOptions::default()
    };
    let s = &samples[1];
    let a = sample(&state, &s.v_d, &s.i_b, &opts, None).unwrap();
    let b = sample(&loaded, &s.v_d, &s.i_b, &opts, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.nonfinite_predictions, 0);
    let clean = state.codec.encode_frame(&s.i_b).unwrap().repeat_frames(4);
    assert_eq!(split_canvas(&a.canvas).unwrap().1, clean);
}

proptest! {
    #[test]
    fn timesteps_descend_to_zero(steps in 2usize..80, strength in 0.01f64..=1.0) {
        let schedule = NoiseSchedule::default();
        let ts = schedule.inference_timesteps(steps, strength).unwrap();
        prop_assert_eq!(ts[0], (999.0 * strength).round() as usize);
        prop_assert_eq!(*ts.last().unwrap(), 0);
        prop_assert!(ts.len() <= steps);
        prop_assert!(ts.windows(2).all(|p| p[0] > p[1]));
    }
}
