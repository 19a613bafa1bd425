//! Graph referential game.
//!
//! A sender looks at a target object drawn as a star graph and emits one
//! symbol from a finite vocabulary. A receiver sees that symbol together
//! with the target and `K` distractors and must point at the target. Both
//! agents are graph convolutional networks trained end to end through a
//! straight-through Gumbel-Softmax channel.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors and a reverse-mode tape
//! - [`world`], [`dataset`]: objects, property graphs, episodes and splits
//! - [`gnn`]: the GCN encoder
//! - [`agents`]: sender, receiver and the discrete channel
//! - [`optim`], [`training`]: Adam and the training loop
//! - [`analysis`]: symbol usage, robustness and permutation analyses
//! - [`cli`]: the `graphref` command line
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod agents;
pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod gnn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod training;
pub mod world;

pub use agents::{Agents, Channel, Message, ModelConfig, Vocabulary};
pub use dataset::{make_dataset, Dataset, Episode, SamplingMode, Split, SplitMode};
pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
pub use training::{train, TrainConfig, TrainOutcome};
pub use world::{build_graph, enumerate_objects, GraphCache, ObjectSpec, PropertyGraph, World};
