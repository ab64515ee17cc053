use avword::integration::*;
use avword::Mode;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn posterior(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0f64).powi(3)).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / z).collect()
}

fn argmax(p: &[f64]) -> usize {
    avword::tensor::argmax(p.iter().copied())
}

#[test]
fn coupled_masks_follow_the_drop_law() {
    let cfg = MultimodalDropConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 100_000;
    let (mut no_audio, mut no_video, mut no_bounds, mut both_gone) = (0, 0, 0, 0);
    let mut joint = [[0usize; 2]; 2];
    for _ in 0..n {
        let m = multimodal_mask_sample(&cfg, Mode::Train, &mut rng).unwrap();
        no_audio += usize::from(!m.audio);
        no_video += usize::from(!m.video);
        no_bounds += usize::from(!m.boundaries);
        both_gone += usize::from(!m.audio && !m.video);
        joint[usize::from(m.audio && m.video)][usize::from(m.boundaries)] += 1;
    }
    let f = |c: usize| c as f64 / n as f64;
    assert!((f(no_audio) - 0.25).abs() < 0.01, "audio drops {}", f(no_audio));
    assert!((f(no_video) - 0.25).abs() < 0.01, "video drops {}", f(no_video));
    assert!((f(no_bounds) - 0.25).abs() < 0.01, "boundary drops {}", f(no_bounds));
    assert_eq!(both_gone, 0);
    let kept = n - no_audio - no_video;
    assert!((0.49..=0.51).contains(&f(kept)), "both kept {}", f(kept));
    let both = f(joint[1][0] + joint[1][1]);
    let kept = f(joint[0][1] + joint[1][1]);
    assert!((f(joint[1][1]) - both * kept).abs() < 0.01);
}

#[test]
fn independent_masks_can_drop_both() {
    let cfg = MultimodalDropConfig {
        coupled: false,
        p_drop_audio: 0.5,
        p_drop_video: 0.5,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let both = (0..20_000)
        .filter(|_| {
            let m = multimodal_mask_sample(&cfg, Mode::Train, &mut rng).unwrap();
            !m.audio && !m.video
        })
        .count();
    assert!((both as f64 / 20_000.0 - 0.25).abs() < 0.02);
    let bad = MultimodalDropConfig {
        p_drop_audio: 0.7,
        p_drop_video: 0.4,
        ..Default::default()
    };
    assert!(multimodal_mask_sample(&bad, Mode::Train, &mut rng).is_err());
}

#[test]
fn fusion_rank_agrees_with_weighted_log_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..1000 {
        let k = 2 + i % 9;
        let v = posterior(&mut rng, k);
        let a = posterior(&mut rng, k);
        let gamma = rng.random_range(0.0..=1.0);
        let fused = late_fuse(&v, &a, &FusionConfig { gamma }).unwrap();
        let score: Vec<f64> = v
            .iter()
            .zip(&a)
            .map(|(x, y)| gamma * x.ln() + (1.0 - gamma) * y.ln())
            .collect();
        assert_eq!(argmax(&fused), argmax(&score));
        assert!((fused.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn uniform_visual_keeps_audio_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let a = posterior(&mut rng, 6);
        let v = vec![1.0 / 6.0; 6];
        let fused = late_fuse(&v, &a, &FusionConfig { gamma: rng.random_range(0.0..1.0) }).unwrap();
        let mut by_a: Vec<usize> = (0..6).collect();
        by_a.sort_by(|&i, &j| a[i].total_cmp(&a[j]));
        let mut by_f: Vec<usize> = (0..6).collect();
        by_f.sort_by(|&i, &j| fused[i].total_cmp(&fused[j]));
        assert_eq!(by_a, by_f);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn fused_log_odds_are_linear(seed in any::<u64>(), gamma in 0.0f64..=1.0, k in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = posterior(&mut rng, k);
        let a = posterior(&mut rng, k);
        let f = late_fuse(&v, &a, &FusionConfig { gamma }).unwrap();
        for i in 1..k {
            let want = gamma * (v[i] / v[0]).ln() + (1.0 - gamma) * (a[i] / a[0]).ln();
            prop_assert!(((f[i] / f[0]).ln() - want).abs() < 1e-9);
        }
    }

    #[test]
    fn fusion_endpoints_are_exact_copies(seed in any::<u64>(), k in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = posterior(&mut rng, k);
        let a = posterior(&mut rng, k);
        let f0 = late_fuse(&v, &a, &FusionConfig { gamma: 0.0 }).unwrap();
        let f1 = late_fuse(&v, &a, &FusionConfig { gamma: 1.0 }).unwrap();
        for i in 0..k {
            prop_assert!((f0[i] - a[i]).abs() < 1e-12);
            prop_assert!((f1[i] - v[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn two_class_example() {
    let p = late_fuse(&[0.8, 0.2], &[0.3, 0.7], &FusionConfig { gamma: 0.4 }).unwrap();
    let a = (0.4 * 0.8f64.ln() + 0.6 * 0.3f64.ln()).exp();
    let b = (0.4 * 0.2f64.ln() + 0.6 * 0.7f64.ln()).exp();
    assert!((p[0] - a / (a + b)).abs() < 1e-12);
    assert_eq!(argmax(&p), 0);
}

#[test]
fn rows_must_pair_up() {
    let v = vec![vec![0.5, 0.5]; 3];
    let a = vec![vec![0.9, 0.1]; 2];
    assert!(late_fuse_rows(&v, &a, &FusionConfig::default()).is_err());
    let ok = late_fuse_rows(&v, &v, &FusionConfig::default()).unwrap();
    assert_eq!(ok.len(), 3);
}

#[test]
fn backend_widths_per_kind() {
    let mut s = ModelSpec::default();
    for (kind, width) in [(ModelKind::Audiovisual, 513), (ModelKind::Visual, 257), (ModelKind::Audio, 256)] {
        s.kind = kind;
        assert_eq!(s.backend_input_width(), width);
    }
    s.kind = ModelKind::Audio;
    assert_eq!(s.effective_audio().input_dim(), 162);
    s.boundary_mode = avword::backend::BoundaryMode::Unused;
    assert_eq!(s.effective_audio().input_dim(), 161);
    s.kind = ModelKind::Visual;
    assert_eq!(s.backend_input_width(), 256);
}

#[test]
fn spec_validation() {
    let mut s = ModelSpec::desk(ModelKind::Audio, 10);
    s.backend_kind = BackendKind::Tconv;
    assert!(s.validate().is_err());
    let mut s = ModelSpec::desk(ModelKind::Visual, 1);
    assert!(s.validate().is_err());
    s.vocab_size = 4;
    s.backend_kind = BackendKind::Tconv;
    s.boundary_mode = avword::backend::BoundaryMode::RemoveInside;
    assert!(s.validate().is_err());
    s.boundary_mode = avword::backend::BoundaryMode::Indicator;
    assert!(s.validate().is_ok());
}
