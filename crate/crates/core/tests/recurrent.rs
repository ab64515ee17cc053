use avword::gradcheck::{finite_diff_check_params, GradCheckOptions};
use avword::recurrent::{
    reverse_within_lengths, run_direction, BiStack, Direction, DirectionalStack, LayerSpec, LstmCell, LstmState, Seq,
};
use avword::{Graph, Mode, ParamStore, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn graph(store: &ParamStore<f64>) -> Graph<'_, f64> {
    Graph::with_store(store, Mode::Eval, ChaCha8Rng::seed_from_u64(0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hidden_output_is_strictly_bounded(
        seed in 0u64..1000,
        scale in 0.1f64..8.0,
        x in prop::collection::vec(-5.0f64..5.0, 3),
        c in prop::collection::vec(-20.0f64..20.0, 4),
    ) {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = LstmCell::new(&mut store, "c", 3, 4, &mut rng).unwrap();
        for id in [cell.w, cell.u] {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        let g = graph(&store);
        let st = LstmState {
            h: g.constant(Tensor::full([1, 4], 0.9)),
            c: g.constant(Tensor::from_f64([1, 4], &c).unwrap()),
        };
        let next = cell.step(&g, &st, g.constant(Tensor::from_f64([1, 3], &x).unwrap())).unwrap();
        prop_assert!(g.value(next.h).data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn time_reversal_swaps_directions(
        seed in 0u64..1000,
        xs in prop::collection::vec(-2.0f64..2.0, 12),
    ) {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = [LayerSpec::plain(3), LayerSpec::plain(2)];
        let fwd = DirectionalStack::new(&mut store, "s", Direction::Forward, 2, &layers, &mut rng).unwrap();
        let bwd = DirectionalStack { direction: Direction::Backward, ..fwd.clone() };
        let g = graph(&store);
        let x = Seq::single(&g, g.constant(Tensor::from_f64([6, 2], &xs).unwrap())).unwrap();
        let y = run_direction(&g, &fwd, &x).unwrap();
        let rx = reverse_within_lengths(&g, &x).unwrap();
        let ry = run_direction(&g, &bwd, &rx).unwrap();
        let back = reverse_within_lengths(&g, &ry).unwrap();
        prop_assert_eq!(g.value(y.data).data().to_vec(), g.value(back.data).data().to_vec());
    }
}

#[test]
fn zeroed_backward_parameters_leave_forward_half_unchanged() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bi = BiStack::new(&mut store, "bi", 3, &[LayerSpec::plain(4), LayerSpec::plain(4)], &mut rng).unwrap();
    let x = Tensor::<f64>::from_fn([5, 3], |i| (i as f64 * 0.7).sin());
    let run = |store: &ParamStore<f64>| {
        let g = graph(store);
        let s = Seq::single(&g, g.constant(x.clone())).unwrap();
        let y = bi.run_concat(&g, &s).unwrap();
        g.value(y.data).data().to_vec()
    };
    let before = run(&store);
    store.zero_prefix("bi.bwd");
    let after = run(&store);
    for t in 0..5 {
        assert_eq!(before[t * 8..t * 8 + 4], after[t * 8..t * 8 + 4]);
        assert!(after[t * 8 + 4..t * 8 + 8].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn two_layer_bidirectional_gradients() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let l0 = LayerSpec { input_bn: true, input_dropout: 0.3, ..LayerSpec::plain(2) };
    let l1 = LayerSpec { input_bn: true, input_dropout: 0.3, ..LayerSpec::plain(2) };
    let bi = BiStack::new(&mut store, "bi", 2, &[l0, l1], &mut rng).unwrap();
    let x = Tensor::<f64>::from_fn([4, 2, 2], |i| ((i * 7 % 5) as f64 - 2.0) * 0.4);
    let weights = Tensor::<f64>::from_fn([4, 2, 4], |i| ((i * 3 % 7) as f64 - 3.0) * 0.25);
    let report = finite_diff_check_params(
        &mut store,
        |g| {
            let s = Seq::new(g, g.constant(x.clone()), vec![4, 3])?;
            let y = bi.run_concat(g, &s)?;
            let w = g.mul_const(y.data, weights.clone())?;
            g.sum(w)
        },
        GradCheckOptions { mode: Mode::Train, ..Default::default() },
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}
