use jeamc::rnn::bptt::evaluate_batch;
use jeamc::rnn::{forward_step, forward_symbols, Batch, CellKind, HiddenState, ModelSpec, ModelWeights};
use num_complex::Complex32;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn symbols(seed: u64, n: usize) -> Vec<Complex32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Complex32::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5))).collect()
}

/// The training forward pass and streaming inference agree on the
/// final-symbol loss of each example.
#[test]
fn batched_loss_matches_streaming_softmax() {
    for (cell, layers) in [(CellKind::Lstm, 3), (CellKind::Gru, 2)] {
        let spec = ModelSpec::new(cell, layers, 16, 8);
        let w = ModelWeights::init(&spec, 3).unwrap();
        for (k, label) in [0usize, 2, 4].into_iter().enumerate() {
            let seq = symbols(k as u64, 200);
            let batch = Batch::<f32>::from_sequences(&[seq.as_slice()], &[label]).unwrap();
            let stats = evaluate_batch(&spec, w.layout(), &w.params, &batch).unwrap();
            let traj = forward_symbols(&w, &seq).unwrap();
            let stream_loss = -(traj.rows[199][label] as f64).ln();
            assert!((stats.loss_sum - stream_loss).abs() < 1e-4, "{cell:?}: {} vs {stream_loss}", stats.loss_sum);
        }
    }
}

#[test]
fn reference_models_have_expected_shapes() {
    let expect = [(CellKind::Lstm, 2, 128, 64), (CellKind::Lstm, 3, 64, 32), (CellKind::Gru, 2, 128, 64), (CellKind::Gru, 3, 64, 32), (CellKind::Gru, 2, 128, 128)];
    for (id, (cell, layers, hidden, linear)) in expect.into_iter().enumerate() {
        let s = ModelSpec::reference(id).unwrap();
        assert_eq!((s.cell, s.num_layers, s.hidden_size, s.linear_size), (cell, layers, hidden, linear));
        assert_eq!(s.dropout_p, 0.5);
    }
    assert!(ModelSpec::reference(5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), gru in any::<bool>(), len in 1usize..64, scale in 0.1f32..20.0) {
        let spec = ModelSpec::new(if gru { CellKind::Gru } else { CellKind::Lstm }, 2, 12, 6);
        let mut w = ModelWeights::init(&spec, seed).unwrap();
        w.params.iter_mut().for_each(|p| *p *= scale);
        let seq: Vec<Complex32> = symbols(seed ^ 1, len).into_iter().map(|z| z * scale).collect();
        let traj = forward_symbols(&w, &seq).unwrap();
        for row in &traj.rows {
            let sum: f64 = row.iter().map(|&p| p as f64).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6, "sum {}", sum);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn trajectory_is_a_fold_of_steps(seed in any::<u64>(), len in 1usize..40) {
        let spec = ModelSpec::new(CellKind::Lstm, 2, 8, 4);
        let w = ModelWeights::init(&spec, seed).unwrap();
        let seq = symbols(seed, len);
        let traj = forward_symbols(&w, &seq).unwrap();
        prop_assert_eq!(&traj, &forward_symbols(&w, &seq).unwrap());
        let mut state = HiddenState::new(&w);
        for (t, z) in seq.iter().enumerate() {
            prop_assert_eq!(forward_step(&w, *z, &mut state).unwrap(), traj.rows[t]);
            prop_assert!(state.is_finite());
        }
        prop_assert_eq!(state.steps(), len);
    }
}
