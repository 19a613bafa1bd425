//! Central finite-difference checks for every tape op and for the whole
//! sender/receiver loss.

mod common;

use common::*;
use graphref::agents::sample_gumbel;
use graphref::rng::{stream, Stream};
use graphref::tensor::Pooling;
use graphref::training::{nll_loss, TrainConfig};
use graphref::{Agents, Episode, GraphCache, Tape, Tensor};
use proptest::prelude::*;
use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k) = dims(&mut rng);
        let n = rng.gen_range(1..5);
        let inputs = vec![random(&mut rng, m, k, -2.0, 2.0), random(&mut rng, k, n, -2.0, 2.0)];
        prop_assert!(max_error(inputs, seed, |t, v| t.matmul(v[0], v[1])) < TOL);
    }

    #[test]
    fn binary_ops(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, c) = dims(&mut rng);
        let inputs = vec![random(&mut rng, r, c, -2.0, 2.0), random(&mut rng, r, c, -2.0, 2.0)];
        prop_assert!(max_error(inputs.clone(), seed, |t, v| t.add(v[0], v[1])) < TOL);
        prop_assert!(max_error(inputs.clone(), seed, |t, v| t.sub(v[0], v[1])) < TOL);
        prop_assert!(max_error(inputs.clone(), seed, |t, v| t.mul(v[0], v[1])) < TOL);
        // the same variable used twice accumulates both paths
        prop_assert!(max_error(vec![inputs[0].clone()], seed, |t, v| t.mul(v[0], v[0])) < TOL);
    }

    #[test]
    fn unary_ops(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, c) = dims(&mut rng);
        let x = off_kink(&mut rng, r, c);
        prop_assert!(max_error(vec![x.clone()], seed, |t, v| Ok(t.relu(v[0]))) < TOL);
        prop_assert!(max_error(vec![x.clone()], seed, |t, v| Ok(t.tanh(v[0]))) < TOL);
        prop_assert!(max_error(vec![x.clone()], seed, |t, v| Ok(t.exp(v[0]))) < TOL);
        prop_assert!(max_error(vec![x.clone()], seed, |t, v| Ok(t.scale(v[0], -1.7))) < TOL);
        let positive = random(&mut rng, r, c, 0.2, 3.0);
        prop_assert!(max_error(vec![positive], seed, |t, v| t.log(v[0])) < TOL);
    }

    #[test]
    fn softmax_family(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, c) = dims(&mut rng);
        let x = random(&mut rng, r, c + 1, -3.0, 3.0);
        prop_assert!(max_error(vec![x.clone()], seed, |t, v| Ok(t.softmax(v[0]))) < TOL);
        prop_assert!(max_error(vec![x], seed, |t, v| Ok(t.log_softmax(v[0]))) < TOL);
    }

    #[test]
    fn reductions(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, c) = dims(&mut rng);
        let x = off_kink(&mut rng, r, c);
        prop_assert!(max_error(vec![x.clone()], seed, |t, v| t.mean_rows(v[0])) < TOL);
        prop_assert!(max_error(vec![x.clone()], seed, |t, v| Ok(t.sum(v[0]))) < TOL);
        prop_assert!(max_error(vec![x.clone()], seed, |t, v| Ok(t.mean(v[0]))) < TOL);
        let columns: Vec<usize> = (0..r).map(|_| rng.gen_range(0..c)).collect();
        prop_assert!(max_error(vec![x], seed, |t, v| t.pick(v[0], &columns)) < TOL);
    }

    #[test]
    fn segment_pooling(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let segments: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(1..5)).collect();
        let rows = segments.iter().sum();
        let cols = rng.gen_range(1..4);
        let x = off_kink(&mut rng, rows, cols);
        for kind in [Pooling::Mean, Pooling::Sum, Pooling::Max] {
            prop_assert!(max_error(vec![x.clone()], seed, |t, v| t.pool_rows(v[0], &segments, kind)) < TOL);
        }
    }

    #[test]
    fn block_propagation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(1..5)).collect();
        let blocks: Vec<Tensor> = sizes.iter().map(|&n| random(&mut rng, n, n, -1.0, 1.0)).collect();
        let cols = rng.gen_range(1..4);
        let x = random(&mut rng, sizes.iter().sum(), cols, -2.0, 2.0);
        prop_assert!(max_error(vec![x], seed, |t, v| t.propagate(blocks.clone(), v[0])) < TOL);
    }

    #[test]
    fn grouped_scores(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (b, group, d) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..4));
        let inputs = vec![random(&mut rng, b * group, d, -2.0, 2.0), random(&mut rng, b, d, -2.0, 2.0)];
        prop_assert!(max_error(inputs, seed, |t, v| t.group_dot(v[0], v[1], group)) < TOL);
    }

    /// With frozen noise and a linear function of the message, the
    /// straight-through gradient with respect to the relaxed sample is the
    /// function's weight vector.
    #[test]
    fn straight_through_passes_gradient(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = rng.gen_range(2..7);
        let w = random(&mut rng, 1, v, -2.0, 2.0);
        let mut tape = Tape::new();
        let soft = tape.param(random(&mut rng, 1, v, 0.0, 1.0));
        let hard = tape.straight_through(soft);
        prop_assert_eq!(tape.value(hard).data().iter().sum::<f64>(), 1.0);
        let wv = tape.constant(w.clone());
        let prod = tape.mul(hard, wv).unwrap();
        let loss = tape.sum(prod);
        let grads = tape.backward(loss).unwrap();
        prop_assert_eq!(grads.get(soft).unwrap().data(), w.data());
    }

    /// Every parameter of both agents through the relaxed channel, for
    /// each pooling and activation pairing.
    #[test]
    fn sender_receiver_composite(seed in any::<u64>()) {
        let worst = composite_error(seed);
        prop_assert!(worst < TOL, "worst relative error {worst}");
    }
}

#[test]
fn matmul_gradient_example() {
    let a = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
    let b = Tensor::from_rows(&[[3.0], [4.0]]).unwrap();
    let mut tape = Tape::new();
    let (av, bv) = (tape.param(a), tape.constant(b));
    let c = tape.matmul(av, bv).unwrap();
    let loss = tape.sum(c);
    let grads = tape.backward(loss).unwrap();
    let g = grads.get(av).unwrap();
    assert!((g.data()[0] - 3.0).abs() < 1e-9 && (g.data()[1] - 4.0).abs() < 1e-9);
}

#[test]
fn backward_is_bit_reproducible() {
    let cfg = TrainConfig {
        k: 2,
        vocab_size: 5,
        n_episodes: 20,
        hidden_width: 6,
        embedding_width: 6,
        ..TrainConfig::default()
    };
    let ds = cfg.make_dataset().unwrap();
    let cache = GraphCache::new(ds.world).unwrap();
    let agents = Agents::new(cfg.model().unwrap(), &mut stream(2, Stream::Init)).unwrap();
    let episodes: Vec<&Episode> = ds.train().iter().collect();
    let grads = || {
        let noise = sample_gumbel(&mut stream(2, Stream::Channel), episodes.len(), 5);
        let mut tape = Tape::new();
        let bound = agents.bind(&mut tape);
        let play = agents.play(&mut tape, &bound, &cache, &episodes, cfg.channel(), Some(&noise), None).unwrap();
        let (loss, _) = nll_loss(&mut tape, play.log_probs, &play.target_positions).unwrap();
        let g = tape.backward(loss).unwrap();
        bound.vars().iter().map(|v| g.get(*v).unwrap().clone()).collect::<Vec<_>>()
    };
    assert_eq!(grads(), grads());
}
