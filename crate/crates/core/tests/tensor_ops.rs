use avword::gradcheck::{finite_diff_check, GradCheckOptions};
use avword::ops::{BnStats, ConvSpec};
use avword::{Graph, Mode, Result, Tensor, Var};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Well-separated distinct values, so max and relu have no kinks nearby.
fn separated(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Tensor::from_fn(shape.to_vec(), |i| (order[i] as f64 - n as f64 / 2.0 + 0.5) * 0.1)
}

/// Weighted sum of `out` with weights drawn from a fixed stream.
fn project(g: &Graph<'_, f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let w = random(&mut rng, &g.shape(out));
    let y = g.mul_const(out, w)?;
    g.sum(y)
}

fn check<F>(seed: u64, inputs: Vec<Tensor<f64>>, mode: Mode, f: F) -> f64
where
    F: Fn(&Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let r = finite_diff_check(
        |g, xs| {
            let out = f(g, xs)?;
            project(g, out, seed)
        },
        &inputs,
        GradCheckOptions { mode, seed, ..Default::default() },
    )
    .unwrap();
    r.max_relative_error
}

const TOL: f64 = 1e-4;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn elementwise_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random(&mut rng, &[3, 4]), random(&mut rng, &[3, 4]));
        let bias = random(&mut rng, &[4]);
        let e = check(seed, vec![a.clone(), b.clone(), bias], Mode::Train, |g, x| {
            let s = g.add(x[0], x[1])?;
            let d = g.sub(s, x[1])?;
            let m = g.mul(d, x[1])?;
            let m = g.scale(m, 1.7)?;
            let m = g.add_bias(m, x[2])?;
            let s = g.sigmoid(m)?;
            let t = g.tanh(x[0])?;
            g.add(s, t)
        });
        prop_assert!(e < TOL, "{e}");
        let r = separated(&mut rng, &[3, 4]);
        let e = check(seed, vec![r], Mode::Train, |g, x| {
            let y = g.relu(x[0])?;
            let m = g.mean(y)?;
            let s = g.sum(x[0])?;
            let t = g.add(m, s)?;
            g.reshape(t, &[1])
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn shape_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[4, 3, 2]);
        let b = random(&mut rng, &[4, 3, 5]);
        let e = check(seed, vec![a, b], Mode::Train, |g, x| {
            let p = g.permute(x[0], &[1, 0, 2])?;
            let p = g.permute(p, &[1, 0, 2])?;
            let c = g.concat_last(&[p, x[1]])?;
            let s = g.slice_last(c, 1, 6)?;
            let r = g.reshape(s, &[12, 5])?;
            let idx = [Some(3), None, Some(3), Some(11), Some(0)];
            let gr = g.gather_rows(r, &idx)?;
            let cr = g.concat_rows(&[gr, r])?;
            let t = g.reshape(cr, &[17, 1, 5])?;
            g.masked_time_mean(t, &[13])
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn linear_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[2, 3, 4]);
        let w = random(&mut rng, &[5, 4]);
        let b = random(&mut rng, &[5]);
        let m = random(&mut rng, &[4, 6]);
        let e = check(seed, vec![x, w, b, m], Mode::Train, |g, v| {
            let y = g.linear(v[0], v[1], Some(v[2]))?;
            let r = g.reshape(v[0], &[6, 4])?;
            let z = g.matmul(r, v[3])?;
            let z = g.reshape(z, &[36])?;
            let y = g.reshape(y, &[30])?;
            g.concat_last(&[y, z])
        });
        prop_assert!(e < 1e-7, "{e}");
    }

    #[test]
    fn conv_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kt = rng.random_range(1..=3);
        let spec = ConvSpec::new(2, 2, [kt, 3, 3])
            .stride([1, rng.random_range(1..=2), 1])
            .padding([kt / 2, 1, rng.random_range(0..=1)])
            .with_bias(true);
        let x = random(&mut rng, &[1, 2, 3, 4, 4]);
        let w = random(&mut rng, &spec.weight_shape());
        let b = random(&mut rng, &[2]);
        let e = check(seed, vec![x, w, b], Mode::Train, move |g, v| g.conv3d(v[0], v[1], Some(v[2]), spec));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn pool_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = separated(&mut rng, &[2, 2, 2, 5, 5]);
        let e = check(seed, vec![x], Mode::Train, |g, v| {
            let m = g.maxpool3d(v[0], [1, 3, 3], [1, 2, 2], [0, 1, 1])?;
            let a = g.spatial_avgpool(v[0])?;
            let m = g.reshape(m, &[2 * 2 * 2 * 9])?;
            let a = g.reshape(a, &[8])?;
            g.concat_last(&[m, a])
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn batch_norm_gradients(seed in any::<u64>(), train in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[3, 4, 2]);
        let gamma = random(&mut rng, &[4]);
        let beta = random(&mut rng, &[4]);
        let stats = BnStats {
            running_mean: vec![0.1, -0.2, 0.3, 0.0],
            running_var: vec![0.5, 1.5, 2.0, 1.0],
            momentum: 0.1,
            epsilon: 1e-5,
        };
        let mode = if train { Mode::Train } else { Mode::Eval };
        let e = check(seed, vec![x, gamma, beta], mode, |g, v| Ok(g.batch_norm(v[0], v[1], v[2], 1, &stats)?.0));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn loss_dropout_and_cell_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = random(&mut rng, &[3, 5]);
        let labels = [rng.random_range(0..5), rng.random_range(0..5), rng.random_range(0..5)];
        let r = finite_diff_check(
            |g, x| Ok(g.softmax_cross_entropy(x[0], &labels)?.0),
            &[logits],
            GradCheckOptions { seed, ..Default::default() },
        )
        .unwrap();
        prop_assert!(r.max_relative_error < TOL, "{r:?}");

        let seq = random(&mut rng, &[4, 2, 6]);
        let e = check(seed, vec![seq], Mode::Train, |g, v| g.dropout_shared_mask(v[0], 0.3));
        prop_assert!(e < TOL, "{e}");

        let pre = random(&mut rng, &[2, 12]);
        let c = random(&mut rng, &[2, 3]);
        let e = check(seed, vec![pre, c], Mode::Train, |g, v| g.lstm_cell(v[0], v[1]));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn conv_matches_nested_loops(seed in any::<u64>(), n in 1usize..3, c in 1usize..3, o in 1usize..4,
        t in 1usize..4, h in 3usize..7, w in 3usize..7, kt in 1usize..3, kh in 1usize..4, kw in 1usize..4,
        st in 1usize..3, sh in 1usize..3, sw in 1usize..3, bias in any::<bool>()) {
        prop_assume!(kt <= t);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = ConvSpec::new(o, c, [kt, kh, kw])
            .stride([st, sh, sw])
            .padding([kt / 2, kh / 2, kw / 2])
            .with_bias(bias);
        let x = random(&mut rng, &[n, c, t, h, w]);
        let wt = random(&mut rng, &spec.weight_shape());
        let b = random(&mut rng, &[o]);
        let g = Graph::<f64>::new(Mode::Eval, ChaCha8Rng::seed_from_u64(0));
        let (xv, wv) = (g.constant(x.clone()), g.constant(wt.clone()));
        let bv = bias.then(|| g.constant(b.clone()));
        let y = g.value(g.conv3d(xv, wv, bv, spec).unwrap());
        let oracle = nested_conv(&x, &wt, bias.then_some(&b), [kt, kh, kw], [st, sh, sw], [kt / 2, kh / 2, kw / 2]);
        prop_assert_eq!(y.shape(), oracle.shape());
        prop_assert!(y.max_abs_diff(&oracle) < 1e-6);
    }
}

#[allow(clippy::too_many_arguments)]
fn nested_conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    k: [usize; 3],
    s: [usize; 3],
    p: [usize; 3],
) -> Tensor<f64> {
    let xs = x.shape();
    let (n, c, t, h, wd) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let o = w.shape()[0];
    let ext = |l: usize, i: usize| (l + 2 * p[i] - k[i]) / s[i] + 1;
    let (to, ho, wo) = (ext(t, 0), ext(h, 1), ext(wd, 2));
    let mut out = Tensor::zeros([n, o, to, ho, wo]);
    for bn in 0..n {
        for oc in 0..o {
            for a in 0..to {
                for bb in 0..ho {
                    for cc in 0..wo {
                        let mut acc = b.map_or(0.0, |b| b.data()[oc]);
                        for ic in 0..c {
                            for dt in 0..k[0] {
                                for dh in 0..k[1] {
                                    for dw in 0..k[2] {
                                        let ti = (a * s[0] + dt) as isize - p[0] as isize;
                                        let hi = (bb * s[1] + dh) as isize - p[1] as isize;
                                        let wi = (cc * s[2] + dw) as isize - p[2] as isize;
                                        if ti < 0 || hi < 0 || wi < 0 || ti >= t as isize || hi >= h as isize || wi >= wd as isize {
                                            continue;
                                        }
                                        let xv = x.data()[(((bn * c + ic) * t + ti as usize) * h + hi as usize) * wd + wi as usize];
                                        let wv = w.data()[(((oc * c + ic) * k[0] + dt) * k[1] + dh) * k[2] + dw];
                                        acc += xv * wv;
                                    }
                                }
                            }
                        }
                        out.data_mut()[(((bn * o + oc) * to + a) * ho + bb) * wo + cc] = acc;
                    }
                }
            }
        }
    }
    out
}

#[test]
fn conv_example_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let spec = ConvSpec::new(2, 2, [1, 3, 3]).with_bias(false);
    let x = random(&mut rng, &[1, 2, 3, 5, 5]);
    let w = random(&mut rng, &spec.weight_shape());
    let g = Graph::<f64>::new(Mode::Eval, ChaCha8Rng::seed_from_u64(0));
    let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
    let y = g.value(g.conv3d(xv, wv, None, spec).unwrap());
    let oracle = nested_conv(&x, &w, None, [1, 3, 3], [1, 1, 1], [0, 0, 0]);
    assert_eq!(y.shape(), &[1, 2, 3, 3, 3]);
    assert!(y.max_abs_diff(&oracle) < 1e-6);
}

#[test]
fn conv_gradient_example() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = ConvSpec::new(3, 2, [3, 3, 3]).padding([1, 1, 1]).with_bias(true);
    let x = random(&mut rng, &[1, 2, 3, 4, 4]);
    let w = random(&mut rng, &spec.weight_shape());
    let b = random(&mut rng, &[3]);
    let e = check(5, vec![x, w, b], Mode::Train, move |g, v| g.conv3d(v[0], v[1], Some(v[2]), spec));
    assert!(e < 1e-4, "{e}");
}

#[test]
fn forward_backward_bitwise_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ConvSpec::new(4, 1, [3, 5, 5]).stride([1, 2, 2]).padding([1, 2, 2]);
        let x = Tensor::<f32>::from_fn([2, 1, 5, 12, 12], |_| rng.random_range(-1.0..1.0));
        let w = Tensor::<f32>::from_fn(spec.weight_shape(), |_| rng.random_range(-0.3..0.3));
        let g = Graph::<f32>::new(Mode::Train, ChaCha8Rng::seed_from_u64(9));
        let (xv, wv) = (g.input(x), g.input(w));
        let y = g.conv3d(xv, wv, None, spec).unwrap();
        let y = g.relu(y).unwrap();
        let y = g.maxpool3d(y, [1, 3, 3], [1, 2, 2], [0, 1, 1]).unwrap();
        let s = g.shape(y);
        let y = g.reshape(y, &[s[0], s.iter().skip(1).product()]).unwrap();
        let y = g.dropout_shared_mask(y, 0.3).unwrap();
        let y = g.slice_last(y, 0, 7).unwrap();
        let (loss, _) = g.softmax_cross_entropy(y, &[1, 4]).unwrap();
        let grads = g.backward(loss).unwrap();
        let mut bits: Vec<u32> = vec![g.value(loss).data()[0].to_bits()];
        bits.extend(grads.of(xv).unwrap().iter().map(|v| v.to_bits()));
        bits.extend(grads.of(wv).unwrap().iter().map(|v| v.to_bits()));
        bits
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_values_are_hard_errors() {
    let g = Graph::<f64>::new(Mode::Eval, ChaCha8Rng::seed_from_u64(0));
    let x = g.constant(Tensor::full([2], 1e300));
    let y = g.mul(x, x);
    assert!(matches!(y, Err(avword::Error::NonFinite(_))));
}
