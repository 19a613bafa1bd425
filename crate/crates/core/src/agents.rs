//! Sender and receiver agents and the discrete channel between them.
//!
//! The sender maps a target graph to vocabulary logits. During training the
//! message is a straight-through Gumbel-Softmax sample: the receiver sees a
//! hard one-hot vector while gradients follow the relaxed sample. At
//! evaluation time the message is the one-hot argmax of the logits.
//!
//! The receiver embeds the message with a lookup matrix, embeds every
//! candidate with its own GCN and scores candidates by dot product. Every
//! candidate goes through the same operations regardless of its position.

use rand::distributions::{Distribution, Open01};
use serde::{Deserialize, Serialize};

use crate::dataset::Episode;
use crate::error::{Error, Result};
use crate::gnn::{glorot, Activation, GcnEncoder};
use crate::rng::Rng;
use crate::tensor::{Pooling, Tape, Tensor, Var};
use crate::world::{GraphCache, PropertyGraph};

/// Number of distinct symbols the sender may emit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Vocabulary(usize);

impl Vocabulary {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::Config(format!("vocabulary needs >= 2 symbols, got {size}")));
        }
        Ok(Self(size))
    }

    pub fn size(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for Vocabulary {
    type Error = Error;
    fn try_from(n: usize) -> Result<Self> {
        Self::new(n)
    }
}

impl From<Vocabulary> for usize {
    fn from(v: Vocabulary) -> usize {
        v.0
    }
}

/// Architecture shared by both agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub properties: usize,
    pub types: usize,
    pub vocab: Vocabulary,
    pub hidden_width: usize,
    pub embedding_width: usize,
    pub gcn_layers: usize,
    /// Non-linearity of every GCN layer but the last.
    pub activation: Activation,
    pub output_activation: Activation,
    pub pooling: Pooling,
}

impl ModelConfig {
    fn widths(&self) -> Result<Vec<usize>> {
        if self.gcn_layers == 0 {
            return Err(Error::Config("need at least one GCN layer".into()));
        }
        let mut w = vec![self.properties + self.types];
        w.extend(std::iter::repeat_n(self.hidden_width, self.gcn_layers - 1));
        w.push(self.embedding_width);
        Ok(w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MessageForm {
    StraightThrough,
    Argmax,
}

/// A single-symbol message as a one-hot vector over the vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub vector: Tensor,
    pub form: MessageForm,
}

impl Message {
    pub fn symbol(&self) -> usize {
        crate::tensor::argmax(self.vector.data())
    }

    pub fn argmax(vocab: usize, symbol: usize) -> Self {
        Self {
            vector: Tensor::one_hot(vocab, symbol),
            form: MessageForm::Argmax,
        }
    }
}

/// How the sender's logits become the transmitted vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Channel {
    /// Hard one-hot forward, relaxed-sample gradient.
    StraightThrough { temperature: f64 },
    /// The relaxed Gumbel-Softmax sample itself (fully smooth).
    Relaxed { temperature: f64 },
    /// Deterministic one-hot argmax of the logits.
    Argmax,
}

impl Channel {
    fn temperature(self) -> Option<f64> {
        match self {
            Channel::StraightThrough { temperature } | Channel::Relaxed { temperature } => {
                Some(temperature)
            }
            Channel::Argmax => None,
        }
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("Gumbel temperature must be > 0, got {t}")))
    }
}

/// Standard Gumbel noise `-ln(-ln u)`, `u ~ U(0, 1)` exclusive of both ends.
pub fn sample_gumbel(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let u: f64 = Open01.sample(rng);
            -(-u.ln()).ln()
        })
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

/// Applies the channel to `logits` (one row per message) on `tape`.
pub fn channel_on_tape(tape: &mut Tape, logits: Var, noise: Option<&Tensor>, channel: Channel) -> Result<Var> {
    let Some(temperature) = channel.temperature() else {
        let hard = tape.straight_through(logits);
        return Ok(hard);
    };
    check_temperature(temperature)?;
    let noise = noise.ok_or_else(|| Error::Config("stochastic channel needs Gumbel noise".into()))?;
    let noise = tape.constant(noise.clone());
    let perturbed = tape.add(logits, noise)?;
    let scaled = tape.scale(perturbed, 1.0 / temperature);
    let soft = tape.softmax(scaled);
    Ok(match channel {
        Channel::StraightThrough { .. } => tape.straight_through(soft),
        _ => soft,
    })
}

/// Straight-through Gumbel-Softmax sample for a single logit vector.
pub fn gumbel_softmax_st(logits: &Tensor, temperature: f64, rng: &mut Rng) -> Result<Message> {
    check_temperature(temperature)?;
    let noise = sample_gumbel(rng, 1, logits.len());
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::matrix(1, logits.len(), logits.data().to_vec())?);
    let m = channel_on_tape(&mut tape, l, Some(&noise), Channel::StraightThrough { temperature })?;
    Ok(Message {
        vector: Tensor::vector(tape.value(m).data().to_vec()),
        form: MessageForm::StraightThrough,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sender {
    pub encoder: GcnEncoder,
    /// `d_emb × |V|` map from graph embedding to symbol logits.
    pub head: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Receiver {
    pub encoder: GcnEncoder,
    /// `|V| × d_emb`; a one-hot message selects one row.
    pub message_embedding: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SendMode {
    Train { temperature: f64 },
    Eval,
}

impl Sender {
    pub fn logits(&self, graph: &PropertyGraph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let w: Vec<Var> = self.encoder.weights().map(|w| tape.constant(w.clone())).collect();
        let emb = self.encoder.encode_batch(&mut tape, &w, &[graph])?;
        let head = tape.constant(self.head.clone());
        let logits = tape.matmul(emb, head)?;
        Ok(Tensor::vector(tape.value(logits).data().to_vec()))
    }

    pub fn send(&self, graph: &PropertyGraph, mode: SendMode, rng: &mut Rng) -> Result<Message> {
        let logits = self.logits(graph)?;
        match mode {
            SendMode::Train { temperature } => gumbel_softmax_st(&logits, temperature, rng),
            SendMode::Eval => Ok(Message::argmax(
                logits.len(),
                crate::tensor::argmax(logits.data()),
            )),
        }
    }
}

impl Receiver {
    /// Distribution over `candidates` given `message`.
    pub fn receive(&self, message: &Message, candidates: &[&PropertyGraph]) -> Result<Tensor> {
        if candidates.is_empty() {
            return Err(Error::Config("receiver needs at least one candidate".into()));
        }
        let mut tape = Tape::new();
        let w: Vec<Var> = self.encoder.weights().map(|w| tape.constant(w.clone())).collect();
        let emb = self.encoder.encode_batch(&mut tape, &w, candidates)?;
        let table = tape.constant(self.message_embedding.clone());
        let msg = tape.constant(Tensor::matrix(1, message.vector.len(), message.vector.data().to_vec())?);
        let mu = tape.matmul(msg, table)?;
        let scores = tape.group_dot(emb, mu, candidates.len())?;
        let probs = tape.softmax(scores);
        Ok(Tensor::vector(tape.value(probs).data().to_vec()))
    }
}

/// Both agents plus the architecture they were built from.
#[derive(Clone, Debug, PartialEq)]
pub struct Agents {
    pub config: ModelConfig,
    pub sender: Sender,
    pub receiver: Receiver,
}

/// Agent parameters registered on a tape.
#[derive(Clone, Debug)]
pub struct BoundAgents {
    pub sender_gcn: Vec<Var>,
    pub head: Var,
    pub receiver_gcn: Vec<Var>,
    pub message_embedding: Var,
}

impl BoundAgents {
    /// Parameter handles in [`Agents::params`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.sender_gcn.clone();
        v.push(self.head);
        v.extend(&self.receiver_gcn);
        v.push(self.message_embedding);
        v
    }
}

/// Result of playing a batch of episodes on a tape.
#[derive(Debug)]
pub struct Play {
    /// `B × (K+1)` log-probabilities over candidate positions.
    pub log_probs: Var,
    /// Symbol transmitted per episode (argmax of the forward message).
    pub symbols: Vec<usize>,
    pub target_positions: Vec<usize>,
}

impl Agents {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        let widths = config.widths()?;
        let v = config.vocab.size();
        let d = config.embedding_width;
        let sender = Sender {
            encoder: GcnEncoder::new(rng, &widths, config.activation, config.output_activation, config.pooling)?,
            head: glorot(rng, d, v),
        };
        let receiver = Receiver {
            encoder: GcnEncoder::new(rng, &widths, config.activation, config.output_activation, config.pooling)?,
            message_embedding: glorot(rng, v, d),
        };
        Ok(Self {
            config,
            sender,
            receiver,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab.size()
    }

    /// Named parameters in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, w) in self.sender.encoder.weights().enumerate() {
            out.push((format!("sender.gcn.{i}"), w));
        }
        out.push(("sender.head".to_string(), &self.sender.head));
        for (i, w) in self.receiver.encoder.weights().enumerate() {
            out.push((format!("receiver.gcn.{i}"), w));
        }
        out.push(("receiver.message_embedding".to_string(), &self.receiver.message_embedding));
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.sender.encoder.weights_mut().collect();
        out.push(&mut self.sender.head);
        out.extend(self.receiver.encoder.weights_mut());
        out.push(&mut self.receiver.message_embedding);
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundAgents {
        BoundAgents {
            sender_gcn: self.sender.encoder.bind(tape),
            head: tape.param(self.sender.head.clone()),
            receiver_gcn: self.receiver.encoder.bind(tape),
            message_embedding: tape.param(self.receiver.message_embedding.clone()),
        }
    }

    /// Sender logits for a batch of target graphs, `B × |V|`.
    pub fn sender_logits(&self, tape: &mut Tape, bound: &BoundAgents, targets: &[&PropertyGraph]) -> Result<Var> {
        let emb = self.sender.encoder.encode_batch(tape, &bound.sender_gcn, targets)?;
        tape.matmul(emb, bound.head)
    }

    /// Receiver log-probabilities for `messages` (`B × |V|`) over per-episode
    /// candidate groups laid out consecutively in `candidates`.
    pub fn receiver_log_probs(
        &self,
        tape: &mut Tape,
        bound: &BoundAgents,
        messages: Var,
        candidates: &[&PropertyGraph],
        group: usize,
    ) -> Result<Var> {
        let emb = self.receiver.encoder.encode_batch(tape, &bound.receiver_gcn, candidates)?;
        let mu = tape.matmul(messages, bound.message_embedding)?;
        let scores = tape.group_dot(emb, mu, group)?;
        Ok(tape.log_softmax(scores))
    }

    /// Plays every episode in `episodes` on `tape`.
    ///
    /// `noise` must be `B × |V|` for stochastic channels. When `forced` is
    /// given the sender is bypassed and episode `i` receives symbol
    /// `forced[i]`; `symbols` then reports the sender's own argmax choice.
    pub fn play(
        &self,
        tape: &mut Tape,
        bound: &BoundAgents,
        cache: &GraphCache,
        episodes: &[&Episode],
        channel: Channel,
        noise: Option<&Tensor>,
        forced: Option<&[usize]>,
    ) -> Result<Play> {
        let Some(first) = episodes.first() else {
            return Err(Error::Config("cannot play an empty batch".into()));
        };
        let group = first.num_candidates();
        if episodes.iter().any(|e| e.num_candidates() != group) {
            return Err(Error::Config("episodes in a batch must share K".into()));
        }
        let targets: Vec<&PropertyGraph> = episodes.iter().map(|e| cache.get(&e.target)).collect();
        let logits = self.sender_logits(tape, bound, &targets)?;
        let message = channel_on_tape(tape, logits, noise, channel)?;
        let symbols = tape.value(message).argmax_rows();
        let message = match forced {
            Some(f) => {
                if f.len() != episodes.len() || f.iter().any(|&s| s >= self.vocab_size()) {
                    return Err(Error::Config("forced symbols do not match the batch".into()));
                }
                let v = self.vocab_size();
                let mut data = vec![0.0; f.len() * v];
                for (i, &s) in f.iter().enumerate() {
                    data[i * v + s] = 1.0;
                }
                tape.constant(Tensor::matrix(f.len(), v, data)?)
            }
            None => message,
        };
        let candidates: Vec<&PropertyGraph> = episodes
            .iter()
            .flat_map(|e| e.candidates().into_iter().map(|s| cache.get(s)))
            .collect();
        let log_probs = self.receiver_log_probs(tape, bound, message, &candidates, group)?;
        Ok(Play {
            log_probs,
            symbols,
            target_positions: episodes.iter().map(|e| e.target_position).collect(),
        })
    }
}
