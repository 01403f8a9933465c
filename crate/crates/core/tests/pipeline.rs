use headswap_core::canvas::{build_canvas, split_canvas, FrameLatent, LatentTensor};
use headswap_core::media::{SegmentationMask, VideoClip};
use headswap_core::mear::{compute_maps, to_latent_weights, MearConfig};
use headswap_core::metrics::{evaluate, Backends, EvalCase, EvalConfig};
use headswap_core::pipeline::{head_fusion, identity_oracle, load_dataset, save_dataset, synth_generate, SynthConfig};
use ndarray::{Array2, Array4, Array5};
use proptest::prelude::*;

fn small() -> SynthConfig {
    SynthConfig {
        frames: 4,
        ..SynthConfig::default()
    }
}

#[test]
fn weights_from_a_reloaded_dataset_match() {
    let samples = synth_generate(2, 31, &small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&samples, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    let cfg = MearConfig::default();
    for (s, b) in samples.iter().zip(&back) {
        let m = compute_maps(&s.v_a, &s.landmarks_a, &cfg).unwrap();
        assert_eq!(m, compute_maps(&b.v_a, &b.landmarks_a, &cfg).unwrap());
        assert!(m.fused.weights.iter().all(|v| (0.0..=1.0).contains(v)));
        let latent = to_latent_weights(&m.fused, (4, 4, 4)).unwrap();
        assert_eq!(latent.dims(), (4, 4, 4));
    }
}

#[test]
fn driving_clip_scores_worse_than_ground_truth() {
    let samples = synth_generate(3, 32, &small()).unwrap();
    let report = |gen: fn(&headswap_core::pipeline::PairedSample) -> VideoClip| {
        let cases: Vec<_> = samples
            .iter()
            .map(|s| EvalCase::new(s.id.clone(), gen(s), s.v_a.clone()))
            .collect();
        evaluate(&cases, &Backends::default(), &EvalConfig::default()).unwrap().summary
    };
    let perfect = report(|s| s.v_a.clone());
    let driving = report(|s| s.v_d.clone());
    assert!(driving.ssim < perfect.ssim);
    assert!(driving.psnr < perfect.psnr);
    assert!(driving.sim_id < perfect.sim_id);
    assert!(driving.lpips > 0.0);

    for s in &samples {
        assert!(identity_oracle(&s.v_a, s).unwrap().matches_reference);
        assert!(!identity_oracle(&s.v_d, s).unwrap().matches_reference);
    }
}

#[test]
fn saturated_masks_select_one_source() {
    let s = synth_generate(1, 33, &small()).unwrap().remove(0);
    let (h, w) = s.v_a.shape();
    let full = vec![SegmentationMask::new(Array2::ones((h, w))).unwrap(); 4];
    let empty = vec![SegmentationMask::new(Array2::zeros((h, w))).unwrap(); 4];
    assert_eq!(head_fusion(&s.v_d, &s.v_a, &full, 3).unwrap(), s.v_d);
    assert_eq!(head_fusion(&s.v_d, &s.v_a, &empty, 3).unwrap(), s.v_a);
}

proptest! {
    #[test]
    fn canvas_round_trip(b in 1usize..3, c in 1usize..4, f in 1usize..4, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        let mut x = seed;
        let mut next = move || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (x >> 40) as f32 / (1u64 << 24) as f32 - 0.5
        };
        let z_t = LatentTensor::new(Array5::from_shape_simple_fn((b, c, f, h, w), &mut next)).unwrap();
        let z_r = FrameLatent::new(Array4::from_shape_simple_fn((b, c, h, w), &mut next)).unwrap();
        let canvas = build_canvas(&z_t, &z_r).unwrap();
        let (motion, identity) = split_canvas(&canvas.z_cond).unwrap();
        prop_assert_eq!(motion, z_t);
        prop_assert_eq!(identity, z_r.repeat_frames(f));
    }
}
