//! Graph convolutional encoder.
//!
//! Each layer computes `σ(Â H W)` with `Â = D̃^{-1/2} (A + I) D̃^{-1/2}`,
//! and the node states of the last layer are pooled into one embedding.

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Pooling, Tape, Tensor, Var};
use crate::world::PropertyGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Symmetric-normalised adjacency with self-loops.
pub fn normalized_adjacency(graph: &PropertyGraph) -> Tensor {
    let n = graph.num_nodes();
    let mut a = graph.adjacency();
    let data = a.data_mut();
    for i in 0..n {
        data[i * n + i] += 1.0;
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / data[i * n..(i + 1) * n].iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..n {
        for j in 0..n {
            data[i * n + j] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    a
}

/// Glorot/Xavier uniform initialisation.
pub fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("shape matches data")
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnLayer {
    pub weight: Tensor,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnEncoder {
    pub layers: Vec<GcnLayer>,
    pub pooling: Pooling,
}

impl GcnEncoder {
    /// Builds an encoder whose layer widths follow `widths` (input first).
    /// The last layer uses `output`, every other layer `hidden`.
    pub fn new(
        rng: &mut Rng,
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        pooling: Pooling,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid GCN widths {widths:?}")));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| GcnLayer {
                weight: glorot(rng, w[0], w[1]),
                activation: if i == last { output } else { hidden },
            })
            .collect();
        Ok(Self { layers, pooling })
    }

    pub fn from_layers(layers: Vec<GcnLayer>, pooling: Pooling) -> Result<Self> {
        let enc = Self { layers, pooling };
        enc.check()?;
        Ok(enc)
    }

    fn check(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("encoder has no layers".into()));
        }
        for pair in self.layers.windows(2) {
            let (a, b) = (&pair[0].weight, &pair[1].weight);
            if a.cols() != b.rows() {
                return Err(Error::Config(format!(
                    "layer widths do not chain: {:?} then {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    pub fn weights(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().map(|l| &l.weight)
    }

    pub fn weights_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().map(|l| &mut l.weight)
    }

    /// Registers the layer weights as differentiable leaves on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.weights().map(|w| tape.param(w.clone())).collect()
    }

    /// Encodes a batch of graphs on `tape`, one output row per graph.
    pub fn encode_batch(
        &self,
        tape: &mut Tape,
        weights: &[Var],
        graphs: &[&PropertyGraph],
    ) -> Result<Var> {
        let width = self.input_width();
        let mut features = Vec::new();
        let mut blocks = Vec::with_capacity(graphs.len());
        let mut segments = Vec::with_capacity(graphs.len());
        for g in graphs {
            if g.features().cols() != width {
                return Err(Error::Config(format!(
                    "graph feature width {} does not match encoder input width {width}",
                    g.features().cols()
                )));
            }
            features.extend_from_slice(g.features().data());
            blocks.push(normalized_adjacency(g));
            segments.push(g.num_nodes());
        }
        let rows: usize = segments.iter().sum();
        let mut h = tape.constant(Tensor::matrix(rows, width, features)?);
        for (layer, &w) in self.layers.iter().zip(weights) {
            let mixed = tape.propagate(blocks.clone(), h)?;
            h = tape.matmul(mixed, w)?;
            h = match layer.activation {
                Activation::Relu => tape.relu(h),
                Activation::Tanh => tape.tanh(h),
                Activation::Identity => h,
            };
        }
        tape.pool_rows(h, &segments, self.pooling)
    }

    /// Embedding of a single graph (forward only).
    pub fn encode(&self, graph: &PropertyGraph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let weights: Vec<Var> = self.weights().map(|w| tape.constant(w.clone())).collect();
        let out = self.encode_batch(&mut tape, &weights, &[graph])?;
        Ok(Tensor::vector(tape.value(out).data().to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use crate::world::{build_graph, ObjectSpec, World};

    fn star() -> PropertyGraph {
        build_graph(&World::new(3, 4).unwrap(), &ObjectSpec::new(vec![2, 0, 1])).unwrap()
    }

    #[test]
    fn star_adjacency_by_hand() {
        let a = normalized_adjacency(&star());
        let cross = 1.0 / 8f64.sqrt();
        for i in 0..4 {
            for j in 0..4 {
                let expected = match (i, j) {
                    (3, 3) => 0.25,
                    (i, j) if i == j => 0.5,
                    (3, _) | (_, 3) => cross,
                    _ => 0.0,
                };
                assert!((a.at(i, j) - expected).abs() < 1e-12, "({i},{j})");
                assert_eq!(a.at(i, j), a.at(j, i));
            }
        }
    }

    #[test]
    fn single_node_adjacency() {
        let g = PropertyGraph::new(1, vec![], Tensor::from_rows(&[[1.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(normalized_adjacency(&g).data(), &[1.0]);
    }

    #[test]
    fn identity_layer_on_single_node_returns_features() {
        let g = PropertyGraph::new(1, vec![], Tensor::from_rows(&[[0.5, -2.0, 3.0]]).unwrap()).unwrap();
        let enc = GcnEncoder::from_layers(
            vec![GcnLayer {
                weight: Tensor::identity(3),
                activation: Activation::Identity,
            }],
            Pooling::Mean,
        )
        .unwrap();
        assert_eq!(enc.encode(&g).unwrap().data(), &[0.5, -2.0, 3.0]);
    }

    #[test]
    fn chained_widths_are_checked() {
        let bad = GcnEncoder::from_layers(
            vec![
                GcnLayer {
                    weight: Tensor::zeros(&[7, 4]),
                    activation: Activation::Relu,
                },
                GcnLayer {
                    weight: Tensor::zeros(&[5, 4]),
                    activation: Activation::Relu,
                },
            ],
            Pooling::Mean,
        );
        assert!(matches!(bad, Err(Error::Config(_))));
    }

    #[test]
    fn feature_width_mismatch_is_a_config_error() {
        let mut rng = stream(1, Stream::Init);
        let enc = GcnEncoder::new(&mut rng, &[5, 8], Activation::Relu, Activation::Identity, Pooling::Mean).unwrap();
        assert!(matches!(enc.encode(&star()), Err(Error::Config(_))));
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = stream(2, Stream::Init);
        let w = glorot(&mut rng, 7, 32);
        let limit = (6.0f64 / 39.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn pooled_embedding_ignores_node_order() {
        let mut rng = stream(3, Stream::Init);
        for pooling in [Pooling::Mean, Pooling::Sum, Pooling::Max] {
            let enc = GcnEncoder::new(&mut rng, &[7, 16, 8], Activation::Tanh, Activation::Relu, pooling).unwrap();
            let g = star();
            let base = enc.encode(&g).unwrap();
            let moved = enc.encode(&g.relabel(&[2, 0, 3, 1]).unwrap()).unwrap();
            for (a, b) in base.data().iter().zip(moved.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
