//! End-to-end training of the sender/receiver pair.
//!
//! The loss is the receiver's cross-entropy on the target position; the
//! sender is trained only through the straight-through channel. Updates use
//! Adam over shuffled minibatches of the train split. Every `eval_cadence`
//! epochs both agents are evaluated with argmax messages on the validation
//! and test splits; the parameters with the best validation accuracy are
//! kept and training stops after `patience` evaluations without improvement.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{sample_gumbel, Agents, Channel, ModelConfig, Vocabulary};
use crate::dataset::{Dataset, Episode, SamplingMode, Split, SplitMode};
use crate::error::{Error, Result};
use crate::gnn::Activation;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::{self, Rng, Stream};
use crate::tensor::{Pooling, Tape, Tensor, Var};
use crate::world::{GraphCache, World};

/// Every knob of a run. Field names double as config-file keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub p: usize,
    pub t: usize,
    pub k: usize,
    pub vocab_size: usize,
    pub n_episodes: usize,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub hidden_width: usize,
    pub embedding_width: usize,
    pub gcn_layers: usize,
    pub activation: Activation,
    pub output_activation: Activation,
    pub pooling: Pooling,
    pub sampling: SamplingMode,
    pub split_mode: SplitMode,
    pub eval_cadence: usize,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            p: 3,
            t: 4,
            k: 4,
            vocab_size: 25,
            n_episodes: 10_000,
            seed: 1,
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            temperature: 1.0,
            hidden_width: 32,
            embedding_width: 32,
            gcn_layers: 2,
            activation: Activation::Tanh,
            output_activation: Activation::Identity,
            pooling: Pooling::Mean,
            sampling: SamplingMode::Uniform,
            split_mode: SplitMode::Episode,
            eval_cadence: 1,
            patience: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("p", self.p),
            ("t", self.t),
            ("k", self.k),
            ("n_episodes", self.n_episodes),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("hidden_width", self.hidden_width),
            ("embedding_width", self.embedding_width),
            ("gcn_layers", self.gcn_layers),
            ("eval_cadence", self.eval_cadence),
            ("patience", self.patience),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{name}` must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.temperature > 0.0) {
            return Err(Error::Config("learning_rate and temperature must be positive".into()));
        }
        Vocabulary::new(self.vocab_size)?;
        let world = World::new(self.p, self.t)?;
        if self.k + 1 > world.size() {
            return Err(Error::Infeasible(format!(
                "K+1 = {} exceeds the {} objects of the world",
                self.k + 1,
                world.size()
            )));
        }
        Ok(())
    }

    pub fn world(&self) -> Result<World> {
        World::new(self.p, self.t)
    }

    pub fn model(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            properties: self.p,
            types: self.t,
            vocab: Vocabulary::new(self.vocab_size)?,
            hidden_width: self.hidden_width,
            embedding_width: self.embedding_width,
            gcn_layers: self.gcn_layers,
            activation: self.activation,
            output_activation: self.output_activation,
            pooling: self.pooling,
        })
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.learning_rate)
    }

    pub fn channel(&self) -> Channel {
        Channel::StraightThrough {
            temperature: self.temperature,
        }
    }

    pub fn make_dataset(&self) -> Result<Dataset> {
        crate::dataset::make_dataset(
            self.world()?,
            self.k,
            self.n_episodes,
            self.seed,
            self.sampling,
            self.split_mode,
        )
    }

    /// Short stable digest of every field but the seed. Runs are keyed by
    /// this hash plus the seed, so the seeds of one setting sort together.
    pub fn hash(&self) -> String {
        let text = toml::to_string(&TrainConfig { seed: 0, ..self.clone() }).expect("config serialises");
        crate::dataset::hex(&Sha256::digest(text.as_bytes()))[..12].to_string()
    }

    /// Checks that `dataset` was generated for this world and K.
    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        let w = dataset.world;
        if (w.properties(), w.types(), dataset.k) != (self.p, self.t, self.k) {
            return Err(Error::Incompatible(format!(
                "dataset has p={}, t={}, K={} but config has p={}, t={}, K={}",
                w.properties(),
                w.types(),
                dataset.k,
                self.p,
                self.t,
                self.k
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub epoch: usize,
    pub split: String,
    pub accuracy: f64,
    pub loss: f64,
    pub distinct_symbols: usize,
}

/// Per-episode outcome of an evaluation pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub symbol: usize,
    pub chosen: usize,
    pub target_position: usize,
    pub correct: bool,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub predictions: Vec<Prediction>,
    pub accuracy: f64,
    pub mean_loss: f64,
    pub distinct_symbols: usize,
}

impl EvalReport {
    fn from_predictions(predictions: Vec<Prediction>) -> Self {
        let n = predictions.len().max(1) as f64;
        let correct = predictions.iter().filter(|p| p.correct).count();
        let loss = predictions.iter().map(|p| p.loss).sum::<f64>();
        let distinct = predictions.iter().map(|p| p.symbol).collect::<BTreeSet<_>>().len();
        Self {
            accuracy: correct as f64 / n,
            mean_loss: loss / n,
            distinct_symbols: distinct,
            predictions,
        }
    }

    fn metrics(&self, epoch: usize, split: Split) -> Metrics {
        Metrics {
            epoch,
            split: split.to_string(),
            accuracy: self.accuracy,
            loss: self.mean_loss,
            distinct_symbols: self.distinct_symbols,
        }
    }
}

/// Scalar outcome of a single game.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GameOutcome {
    pub loss: f64,
    pub correct: bool,
    pub symbol: usize,
}

/// Mean negative log-likelihood of the target positions, plus the argmax
/// choice per episode.
pub fn nll_loss(tape: &mut Tape, log_probs: Var, targets: &[usize]) -> Result<(Var, Vec<usize>)> {
    let picked = tape.pick(log_probs, targets)?;
    let mean = tape.mean(picked);
    let loss = tape.scale(mean, -1.0);
    Ok((loss, tape.value(log_probs).argmax_rows()))
}

/// Plays one episode and returns its loss `-ln p(target)` and correctness.
///
/// `rng` supplies Gumbel noise for stochastic channels and is untouched
/// for [`Channel::Argmax`].
pub fn game_loss(
    agents: &Agents,
    cache: &GraphCache,
    episode: &Episode,
    channel: Channel,
    rng: &mut Rng,
) -> Result<GameOutcome> {
    let mut tape = Tape::new();
    let bound = agents.bind(&mut tape);
    let noise = match channel {
        Channel::Argmax => None,
        _ => Some(sample_gumbel(rng, 1, agents.vocab_size())),
    };
    let play = agents.play(&mut tape, &bound, cache, &[episode], channel, noise.as_ref(), None)?;
    let (loss, chosen) = nll_loss(&mut tape, play.log_probs, &play.target_positions)?;
    let loss = tape.value(loss).data()[0];
    if !loss.is_finite() {
        return Err(Error::Domain {
            op: "game_loss",
            detail: "non-finite loss".into(),
        });
    }
    Ok(GameOutcome {
        loss,
        correct: chosen[0] == episode.target_position,
        symbol: play.symbols[0],
    })
}

const EVAL_CHUNK: usize = 256;

/// Argmax-channel evaluation, optionally forcing the transmitted symbols.
pub fn evaluate_forced(
    agents: &Agents,
    cache: &GraphCache,
    episodes: &[Episode],
    forced: Option<&[usize]>,
) -> Result<EvalReport> {
    let mut predictions = Vec::with_capacity(episodes.len());
    for (c, chunk) in episodes.chunks(EVAL_CHUNK).enumerate() {
        let refs: Vec<&Episode> = chunk.iter().collect();
        let forced = forced.map(|f| &f[c * EVAL_CHUNK..c * EVAL_CHUNK + chunk.len()]);
        let mut tape = Tape::new();
        let bound = agents.bind(&mut tape);
        let play = agents.play(&mut tape, &bound, cache, &refs, Channel::Argmax, None, forced)?;
        let lp = tape.value(play.log_probs);
        for (i, chosen) in lp.argmax_rows().into_iter().enumerate() {
            let target = play.target_positions[i];
            predictions.push(Prediction {
                symbol: play.symbols[i],
                chosen,
                target_position: target,
                correct: chosen == target,
                loss: -lp.at(i, target),
            });
        }
    }
    Ok(EvalReport::from_predictions(predictions))
}

pub fn evaluate(agents: &Agents, cache: &GraphCache, episodes: &[Episode]) -> Result<EvalReport> {
    evaluate_forced(agents, cache, episodes, None)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation accuracy.
    pub agents: Agents,
    pub history: Vec<Metrics>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub steps: u64,
    /// Evaluation of `agents` on the test split.
    pub test: EvalReport,
}

pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    train_with(config, dataset, |_| Ok(()))
}

/// Trains and reports each metrics row to `observer` as soon as it exists.
pub fn train_with(
    config: &TrainConfig,
    dataset: &Dataset,
    mut observer: impl FnMut(&Metrics) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    config.check_dataset(dataset)?;
    let cache = GraphCache::new(dataset.world)?;
    let mut agents = Agents::new(config.model()?, &mut rng::stream(config.seed, Stream::Init))?;
    let mut channel_rng = rng::stream(config.seed, Stream::Channel);
    let mut shuffle_rng = rng::stream(config.seed, Stream::Shuffle);
    let mut adam = AdamState::new();
    let train_split = dataset.train();
    let mut order: Vec<usize> = (0..train_split.len()).collect();

    let mut history = Vec::new();
    let mut record = |m: Metrics, history: &mut Vec<Metrics>| -> Result<()> {
        observer(&m)?;
        history.push(m);
        Ok(())
    };
    let mut best: Option<(f64, usize, Agents)> = None;
    let mut stale = 0;
    let mut epochs_run = 0;

    for epoch in 1..=config.epochs {
        epochs_run = epoch;
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct, mut symbols) = (0.0, 0usize, BTreeSet::new());
        for batch in order.chunks(config.batch_size) {
            let episodes: Vec<&Episode> = batch.iter().map(|&i| &train_split[i]).collect();
            let mut tape = Tape::new();
            let bound = agents.bind(&mut tape);
            let noise = sample_gumbel(&mut channel_rng, episodes.len(), agents.vocab_size());
            let play = agents.play(&mut tape, &bound, &cache, &episodes, config.channel(), Some(&noise), None)?;
            let (loss, chosen) = nll_loss(&mut tape, play.log_probs, &play.target_positions)?;
            let loss_value = tape.value(loss).data()[0];
            if !loss_value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    last_good: Box::new(agents),
                });
            }
            loss_sum += loss_value * episodes.len() as f64;
            correct += chosen
                .iter()
                .zip(&play.target_positions)
                .filter(|(a, b)| a == b)
                .count();
            symbols.extend(play.symbols.iter().copied());

            let mut grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = bound
                .vars()
                .into_iter()
                .map(|v| grads.take(v).expect("every parameter reaches the loss"))
                .collect();
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            adam_step(&mut agents.params_mut(), &grad_refs, &mut adam, config.adam())?;
        }
        let n = train_split.len() as f64;
        record(
            Metrics {
                epoch,
                split: Split::Train.to_string(),
                accuracy: correct as f64 / n,
                loss: loss_sum / n,
                distinct_symbols: symbols.len(),
            },
            &mut history,
        )?;

        if epoch % config.eval_cadence == 0 || epoch == config.epochs {
            let val = evaluate(&agents, &cache, dataset.validation())?;
            let test = evaluate(&agents, &cache, dataset.test())?;
            record(val.metrics(epoch, Split::Validation), &mut history)?;
            record(test.metrics(epoch, Split::Test), &mut history)?;
            if best.as_ref().is_none_or(|(acc, _, _)| val.accuracy > *acc) {
                best = Some((val.accuracy, epoch, agents.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
        }
    }

    let (_, best_epoch, best_agents) = best.expect("the final epoch is always evaluated");
    let test = evaluate(&best_agents, &cache, dataset.test())?;
    Ok(TrainOutcome {
        agents: best_agents,
        history,
        best_epoch,
        epochs_run,
        steps: adam.steps(),
        test,
    })
}

/// Append-only CSV stream of [`Metrics`] rows.
pub struct MetricsWriter {
    inner: csv::Writer<std::fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            inner: csv::Writer::from_writer(file),
        })
    }

    pub fn append(&mut self, m: &Metrics) -> Result<()> {
        self.inner.serialize(m)?;
        self.inner.flush().map_err(|e| Error::io("metrics.csv", e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<Metrics>> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}
