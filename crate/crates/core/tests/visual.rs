use avword::nn::BatchNorm;
use avword::visual::{build_resnet, ResNet, ResNetConfig, StemMode};
use avword::{Graph, Mode, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn desk() -> ResNetConfig {
    ResNetConfig::desk(32, [4, 8, 8, 16], 12)
}

fn net(config: &ResNetConfig, seed: u64) -> (ParamStore<f64>, ResNet) {
    let mut store = ParamStore::new();
    let net = build_resnet(&mut store, config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (store, net)
}

fn frames(seed: u64, n: usize, t: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([n, 1, t, 32, 32], |_| rng.random_range(-1.0..1.0))
}

fn eval(store: &ParamStore<f64>, net: &ResNet, x: Tensor<f64>) -> Tensor<f64> {
    let g = Graph::with_store(store, Mode::Eval, ChaCha8Rng::seed_from_u64(0));
    let y = net.forward(&g, g.constant(x)).unwrap();
    (*g.value(y)).clone()
}

#[test]
fn keeps_frame_count() {
    let (store, net) = net(&desk(), 1);
    let y = eval(&store, &net, frames(2, 2, 29));
    assert_eq!(y.shape(), &[2, 29, 12]);
}

#[test]
fn duplicated_batch_rows_match() {
    let (store, net) = net(&desk(), 1);
    let one = frames(3, 1, 6);
    let mut two = one.data().to_vec();
    two.extend_from_slice(one.data());
    let y = eval(&store, &net, Tensor::new([2, 1, 6, 32, 32], two).unwrap());
    let half = y.len() / 2;
    assert_eq!(y.data()[..half], y.data()[half..]);
}

#[test]
fn rejects_wrong_channel_count() {
    let (store, net) = net(&desk(), 1);
    let g = Graph::with_store(&store, Mode::Eval, ChaCha8Rng::seed_from_u64(0));
    let x = g.constant(Tensor::zeros([1, 3, 4, 32, 32]));
    let err = net.forward(&g, x).unwrap_err();
    assert!(err.to_string().contains("channels"), "{err}");
}

#[test]
fn two_d_stem_only_changes_temporal_extent() {
    let (s3, _) = net(&desk(), 1);
    let (s2, _) = net(&ResNetConfig { stem_mode: StemMode::TwoD, ..desk() }, 1);
    let count = |s: &ParamStore<f64>| s.entries().filter(|(_, e)| e.trainable()).map(|(_, e)| e.value().len()).sum::<usize>();
    let stem = s3.by_name("visual.stem.conv.weight").unwrap().len();
    assert_eq!(count(&s3) - stem, count(&s2) - stem / 5);
    assert_eq!(s2.by_name("visual.stem.conv.weight").unwrap().shape(), &[4, 1, 1, 7, 7]);
}

fn randomize_bn(store: &mut ParamStore<f64>, bn: &BatchNorm, rng: &mut ChaCha8Rng) {
    for id in [bn.gamma, bn.beta, bn.running_mean] {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    store.get_mut(bn.running_var).data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.2..2.0));
}

fn bn_const(store: &ParamStore<f64>, bn: &BatchNorm, x: &[f64]) -> Vec<f64> {
    let p = |id| store.get(id).data().to_vec();
    let (g, b, m, v) = (p(bn.gamma), p(bn.beta), p(bn.running_mean), p(bn.running_var));
    (0..x.len()).map(|c| (x[c] - m[c]) / (v[c] + bn.epsilon).sqrt() * g[c] + b[c]).collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

#[test]
fn zero_video_matches_constant_oracle() {
    let cfg = desk();
    let (mut store, net) = net(&cfg, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    randomize_bn(&mut store, &net.stem_bn, &mut rng);
    for block in net.stages.iter().flatten() {
        for conv in [&block.conv1, &block.conv2] {
            store.get_mut(conv.weight).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        randomize_bn(&mut store, &block.bn1, &mut rng);
        randomize_bn(&mut store, &block.bn2, &mut rng);
        if let Some((conv, bn)) = &block.shortcut {
            store.get_mut(conv.weight).data_mut().iter_mut().for_each(|v| *v = 0.0);
            randomize_bn(&mut store, bn, &mut rng);
        }
    }

    // Every map is spatially constant, so one value per channel suffices.
    let mut x = relu(bn_const(&store, &net.stem_bn, &vec![0.0; cfg.widths[0]]));
    for block in net.stages.iter().flatten() {
        let c = block.bn2.feature_count;
        let y = bn_const(&store, &block.bn2, &vec![0.0; c]);
        let skip = match &block.shortcut {
            Some((_, bn)) => bn_const(&store, bn, &vec![0.0; c]),
            None => x.clone(),
        };
        x = relu(y.iter().zip(&skip).map(|(a, b)| a + b).collect());
    }
    let w = store.get(net.fc.weight).data();
    let b = store.get(net.fc.bias.unwrap()).data();
    let expect: Vec<f64> = (0..cfg.feature_dim)
        .map(|o| b[o] + (0..x.len()).map(|i| w[o * x.len() + i] * x[i]).sum::<f64>())
        .collect();

    let y = eval(&store, &net, Tensor::zeros([1, 1, 3, 32, 32]));
    for t in 0..3 {
        for (o, e) in expect.iter().enumerate() {
            assert!((y.data()[t * cfg.feature_dim + o] - e).abs() < 1e-10);
        }
    }
}

#[test]
fn zeroed_block_is_identity() {
    let (mut store, net) = net(&desk(), 6);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tested = 0;
    for block in net.stages.iter().flatten().filter(|b| b.shortcut.is_none()) {
        for conv in [&block.conv1, &block.conv2] {
            store.get_mut(conv.weight).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let c = block.conv1.spec.in_channels;
        let x = Tensor::<f64>::from_fn([1, c, 2, 4, 4], |_| rng.random_range(0.0..2.0));
        let g = Graph::with_store(&store, Mode::Eval, ChaCha8Rng::seed_from_u64(0));
        let y = block.forward(&g, g.constant(x.clone())).unwrap();
        assert_eq!(g.value(y).data(), x.data());
        tested += 1;
    }
    assert_eq!(tested, 5);
}

#[test]
fn features_depend_on_mouth_position() {
    let (store, net) = net(&desk(), 9);
    let blob = |cx: f64| {
        Tensor::<f64>::from_fn([1, 1, 3, 32, 32], |i| {
            let (h, w) = ((i / 32) % 32, i % 32);
            let d2 = (h as f64 - 16.0).powi(2) + (w as f64 - cx).powi(2);
            (-d2 / 18.0).exp()
        })
    };
    let a = eval(&store, &net, blob(14.0));
    let b = eval(&store, &net, blob(18.0));
    assert!(a.max_abs_diff(&b) > 1e-4);
}
