use proptest::prelude::*;
use rand::Rng;

use fcrl_core::nn::{gradient_error, gradients, grad_check, td_step, BatchScratch, OptimizerState, QNetwork, TdSample};
use fcrl_core::rng_stream;

/// Plain triple-loop forward pass written against the public layer layout.
fn reference_forward(net: &QNetwork, x: &[f64]) -> Vec<f64> {
    let mut act = x.to_vec();
    let last = net.layers().len() - 1;
    for (k, layer) in net.layers().iter().enumerate() {
        let mut out = layer.bias().to_vec();
        for (i, &a) in act.iter().enumerate() {
            for (o, z) in out.iter_mut().enumerate() {
                *z += a * layer.weights()[i * layer.outputs() + o];
            }
        }
        if k < last {
            out.iter_mut().for_each(|z| *z = z.tanh());
        }
        act = out;
    }
    act
}

fn random_batch(rng: &mut impl Rng, input: usize, actions: usize, n: usize) -> Vec<(Vec<f64>, usize, f64)> {
    (0..n)
        .map(|_| ((0..input).map(|_| rng.gen_range(-1.0..1.0)).collect(), rng.gen_range(0..actions), rng.gen_range(-1.0..1.0)))
        .collect()
}

fn as_samples(batch: &[(Vec<f64>, usize, f64)]) -> Vec<TdSample<'_>> {
    batch.iter().map(|(x, a, t)| TdSample { input: x, action: *a, target: *t }).collect()
}

#[test]
fn forward_matches_reference() {
    let mut rng = rng_stream(11, 0);
    let net = QNetwork::new(18, 8, &mut rng);
    let mut scratch = BatchScratch::default();
    let xs: Vec<Vec<f64>> = (0..16).map(|_| (0..18).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let batch = net.forward_batch(&refs, &mut scratch).to_owned();
    for (row, x) in xs.iter().enumerate() {
        let want = reference_forward(&net, x);
        let got = net.forward(x);
        for a in 0..8 {
            assert!((got[a] - want[a]).abs() < 1e-12);
            assert!((batch[[row, a]] - want[a]).abs() < 1e-12);
        }
    }
}

#[test]
fn small_net_gradient_check() {
    let mut rng = rng_stream(12, 0);
    for _ in 0..5 {
        let net = QNetwork::with_hidden(6, &[5, 4], 3, &mut rng);
        let batch = random_batch(&mut rng, 6, 3, 4);
        let err = grad_check(&net, &as_samples(&batch));
        assert!(err < 1e-4, "relative error {err}");
    }
}

#[test]
fn corrupted_gradient_is_caught() {
    let mut rng = rng_stream(13, 0);
    let net = QNetwork::with_hidden(6, &[5, 4], 3, &mut rng);
    let batch = random_batch(&mut rng, 6, 3, 4);
    let samples = as_samples(&batch);
    let (_, mut grads) = gradients(&net, &samples);
    grads.layers_mut()[1].weights_mut()[3] += 0.5;
    assert!(gradient_error(&net, &samples, &grads) > 1e-2);
}

#[test]
fn parameters_stay_finite_over_long_training() {
    let mut rng = rng_stream(14, 0);
    let mut net = QNetwork::new(18, 8, &mut rng);
    let mut opt = OptimizerState::adam(&net, 1e-3);
    for _ in 0..100_000 {
        let batch = random_batch(&mut rng, 18, 8, 4);
        td_step(&mut net, &mut opt, &as_samples(&batch)).unwrap();
    }
    assert!(net.all_finite());
    assert_eq!(opt.step_count(), 100_000);
}

#[test]
fn td_step_is_deterministic() {
    let mut rng = rng_stream(15, 0);
    let net = QNetwork::new(10, 4, &mut rng);
    let batch = random_batch(&mut rng, 10, 4, 8);
    let run = || {
        let mut n = net.clone();
        let mut opt = OptimizerState::adam(&n, 1e-3);
        for _ in 0..5 {
            td_step(&mut n, &mut opt, &as_samples(&batch)).unwrap();
        }
        n.checksum()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_is_pure_and_sized(seed in any::<u64>(), input in 1usize..12, actions in 1usize..9) {
        let mut rng = rng_stream(seed, 0);
        let net = QNetwork::with_hidden(input, &[7, 5], actions, &mut rng);
        let x: Vec<f64> = (0..input).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let a = net.forward(&x);
        prop_assert_eq!(a.len(), actions);
        prop_assert_eq!(&a, &net.forward(&x));
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>()) {
        let net = QNetwork::with_hidden(5, &[4, 3], 2, &mut rng_stream(seed, 0));
        let back = QNetwork::from_checkpoint(&net.to_checkpoint()).unwrap();
        prop_assert_eq!(back.checksum(), net.checksum());
    }
}
