use avword::audio::*;
use avword::recurrent::{Seq, Subsample};
use avword::{Graph, Mode, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frontend(subsample: Subsample) -> (ParamStore<f64>, AudioFrontend) {
    let cfg = AudioFrontendConfig {
        hidden: 4,
        boundary_input: false,
        subsample,
        input_bn: false,
        dropout: 0.0,
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let f = AudioFrontend::new(&mut store, "audio", &cfg, &mut rng).unwrap();
    (store, f)
}

#[test]
fn frame_rate_is_quartered_with_odd_truncation() {
    for subsample in [Subsample::PairConcat, Subsample::KeepEven] {
        let (store, f) = frontend(subsample);
        for t in [5usize, 7, 116, 117] {
            let g = Graph::with_store(&store, Mode::Eval, ChaCha8Rng::seed_from_u64(0));
            let x = Tensor::<f64>::from_fn([t, 2, BINS], |i| ((i % 13) as f64 - 6.0) / 6.0);
            let s = Seq::new(&g, g.constant(x), vec![t, t - 1]).unwrap();
            let (fwd, bwd) = f.forward(&g, &s).unwrap();
            assert_eq!(fwd.lengths, vec![t / 2 / 2, (t - 1) / 2 / 2]);
            assert_eq!(bwd.lengths, fwd.lengths);
            assert_eq!(fwd.dims(&g).2, f.output_dim());
        }
        let g = Graph::with_store(&store, Mode::Eval, ChaCha8Rng::seed_from_u64(0));
        let s = Seq::new(&g, g.constant(Tensor::<f64>::zeros([3, 1, BINS])), vec![3]).unwrap();
        assert!(f.forward(&g, &s).is_err());
    }
}

#[test]
fn pair_concat_doubles_the_layer_input() {
    let (_, pair) = frontend(Subsample::PairConcat);
    let (_, even) = frontend(Subsample::KeepEven);
    assert_eq!(pair.output_dim(), 4);
    assert_eq!(even.output_dim(), 4);
    assert_eq!(pair.stacks.forward.layers[1].cell.input_size, 8);
    assert_eq!(even.stacks.forward.layers[1].cell.input_size, 4);
    let odd = AudioFrontendConfig {
        hidden: 5,
        ..Default::default()
    };
    assert!(odd.layers().is_err());
    assert_eq!(Subsample::PairConcat.width_factor(), 2);
    assert_eq!(Subsample::KeepEven.width_factor(), 1);
    let rows = Tensor::<f64>::from_fn([5, 2], |i| i as f64);
    let paired = avword::recurrent::pair_concat_rows(&rows).unwrap();
    assert_eq!(paired.shape(), [2, 4]);
    assert_eq!(paired.data(), [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
}

#[test]
fn clip_audio_lines_up_with_video() {
    assert_eq!(frame_count(18_560), 116);
    assert_eq!(116 / FRAMES_PER_VIDEO_FRAME, 29);
    let video: Vec<f32> = (0..29).map(|t| if (10..18).contains(&t) { 1.0 } else { 0.0 }).collect();
    let up = upsample_indicator(&video, FRAMES_PER_VIDEO_FRAME);
    assert_eq!(up.len(), 116);
    assert_eq!(up.iter().filter(|&&v| v == 1.0).count(), 32);
    assert_eq!(up[39], 0.0);
    assert_eq!(up[40], 1.0);
    assert_eq!(up[71], 1.0);
    assert_eq!(up[72], 0.0);
}

#[test]
fn boundary_input_widens_the_spectra() {
    let on = AudioFrontendConfig::default();
    let off = AudioFrontendConfig {
        boundary_input: false,
        ..Default::default()
    };
    assert_eq!((on.input_dim(), off.input_dim()), (162, 161));
    let none = AudioFrontendConfig {
        subsample: Subsample::None,
        ..Default::default()
    };
    assert!(none.layers().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalised_spectra_are_standardised(seed in any::<u64>(), len in 320usize..4000, amp in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Waveform::new((0..len).map(|_| (amp * rng.random_range(-1.0..1.0)) as f32).collect());
        let s = utterance_scalar_normalize(stft_log_spectra(&w).unwrap()).unwrap();
        prop_assert_eq!(s.frames.shape(), &[len.div_ceil(HOP), BINS][..]);
        let d = s.frames.to_f64_vec();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-4);
        prop_assert!((var.sqrt() - 1.0).abs() < 1e-4);
        prop_assert!(utterance_scalar_normalize(s).is_err());
    }

    #[test]
    fn wav_round_trip_is_within_one_step(seed in any::<u64>(), len in 1usize..2000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Waveform::new((0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect());
        let back = decode_wav(&encode_wav(&w).unwrap()).unwrap();
        prop_assert_eq!(back.samples.len(), len);
        for (a, b) in w.samples.iter().zip(&back.samples) {
            prop_assert!((a - b).abs() <= 1.0 / 32768.0 + 1e-7);
        }
        let mut q = w.clone();
        q.quantize();
        prop_assert_eq!(decode_wav(&encode_wav(&q).unwrap()).unwrap(), q);
    }
}
