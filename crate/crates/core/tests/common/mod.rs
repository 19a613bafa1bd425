//! Finite-difference oracle shared by the gradient tests and the
//! acceptance suite.
#![allow(dead_code)]

use graphref::agents::{sample_gumbel, Channel};
use graphref::gnn::Activation;
use graphref::rng::{stream, Stream};
use graphref::tensor::Pooling;
use graphref::training::{nll_loss, TrainConfig};
use graphref::{Agents, Episode, GraphCache, Result, Tape, Tensor, Var};
use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

pub fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Builds `f(inputs)` on a fresh tape and reduces a non-scalar output with
/// fixed random weights, so every Jacobian entry is exercised.
pub fn forward<F>(inputs: &[Tensor], weights: &Option<Tensor>, f: &F) -> (Tape, Vec<Var>, Var)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    let loss = match weights {
        Some(w) => {
            let w = tape.constant(w.clone());
            let prod = tape.mul(out, w).unwrap();
            tape.sum(prod)
        }
        None => out,
    };
    (tape, vars, loss)
}

/// Largest relative error between autodiff and central differences over
/// every input element.
pub fn max_error<F>(inputs: Vec<Tensor>, seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let probe = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars).unwrap();
        tape.value(out).clone()
    };
    let weights = (probe.len() > 1).then(|| {
        let data = (0..probe.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(probe.shape().to_vec(), data).unwrap()
    });
    let (tape, vars, loss) = forward(&inputs, &weights, &f);
    let grads = tape.backward(loss).unwrap();
    let eval = |inputs: &[Tensor]| {
        let (tape, _, loss) = forward(inputs, &weights, &f);
        tape.value(loss).data()[0]
    };
    let mut worst: f64 = 0.0;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

/// Values bounded away from zero so relu and max pooling stay off their kinks.
pub fn off_kink(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let mut t = random(rng, rows, cols, 0.05, 2.0);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

pub fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(1..5), rng.gen_range(1..5))
}

/// Worst relative error over every agent parameter for the full game loss
/// through the relaxed channel with frozen noise. The setting (pooling,
/// hidden activation, episodes, initial weights) is drawn from `seed`.
pub fn composite_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pooling = [Pooling::Mean, Pooling::Sum, Pooling::Max][rng.gen_range(0..3)];
    let activation = [Activation::Tanh, Activation::Relu][rng.gen_range(0..2)];
    let cfg = TrainConfig {
        k: 2,
        vocab_size: 4,
        n_episodes: 20,
        hidden_width: 5,
        embedding_width: 4,
        activation,
        pooling,
        seed,
        ..TrainConfig::default()
    };
    let ds = cfg.make_dataset().unwrap();
    let cache = GraphCache::new(ds.world).unwrap();
    let episodes: Vec<&Episode> = ds.train().iter().take(3).collect();
    let mut agents = Agents::new(cfg.model().unwrap(), &mut stream(seed, Stream::Init)).unwrap();
    let noise = sample_gumbel(&mut stream(seed, Stream::Channel), episodes.len(), 4);
    let channel = Channel::Relaxed { temperature: 0.7 };

    let loss_of = |agents: &Agents| -> (Tape, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let bound = agents.bind(&mut tape);
        let play = agents.play(&mut tape, &bound, &cache, &episodes, channel, Some(&noise), None).unwrap();
        let (loss, _) = nll_loss(&mut tape, play.log_probs, &play.target_positions).unwrap();
        (tape, bound.vars(), loss)
    };
    let (tape, vars, loss) = loss_of(&agents);
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.get(*v).unwrap().clone()).collect();

    // Relu and max pooling have kinks, and a step that straddles one gives
    // a wrong slope. An entry passes if either step size agrees; a wrong
    // gradient disagrees at both.
    let mut worst: f64 = 0.0;
    for (i, g) in analytic.iter().enumerate() {
        for j in 0..g.len() {
            let original = agents.params()[i].data()[j];
            let mut best = f64::INFINITY;
            for h in [H, H / 10.0] {
                agents.params_mut()[i].data_mut()[j] = original + h;
                let (t, _, l) = loss_of(&agents);
                let up = t.value(l).data()[0];
                agents.params_mut()[i].data_mut()[j] = original - h;
                let (t, _, l) = loss_of(&agents);
                let down = t.value(l).data()[0];
                best = best.min(rel_err(g.data()[j], (up - down) / (2.0 * h)));
            }
            agents.params_mut()[i].data_mut()[j] = original;
            worst = worst.max(best);
        }
    }
    worst
}
