//! Text checkpoint for trained agents.
//!
//! ```text
//! graphref-checkpoint 1
//! model p=3 t=4 vocab=25 hidden=32 embedding=32 layers=2 activation=tanh output_activation=identity pooling=mean
//! tensor sender.gcn.0 7 32
//! <one line per row, space separated>
//! ...
//! ```
//!
//! Values are written with the shortest representation that parses back to
//! the same `f64`, so a load reproduces the weights bit for bit.

use std::collections::HashMap;
use std::path::Path;

use crate::agents::{Agents, ModelConfig, Receiver, Sender, Vocabulary};
use crate::error::{Error, Result};
use crate::gnn::{GcnEncoder, GcnLayer};
use crate::tensor::Tensor;

const MAGIC: &str = "graphref-checkpoint 1";

pub fn to_text(agents: &Agents) -> String {
    let c = &agents.config;
    let mut out = format!(
        "{MAGIC}\nmodel p={} t={} vocab={} hidden={} embedding={} layers={} activation={} output_activation={} pooling={}\n",
        c.properties,
        c.types,
        c.vocab.size(),
        c.hidden_width,
        c.embedding_width,
        c.gcn_layers,
        c.activation,
        c.output_activation,
        c.pooling
    );
    for (name, t) in agents.named_params() {
        out.push_str(&format!("tensor {name} {} {}\n", t.rows(), t.cols()));
        for r in 0..t.rows() {
            let row: Vec<String> = t.row(r).iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn from_text(text: &str) -> Result<Agents> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, MAGIC)) => {}
        _ => return Err(Error::parse(1, "not a graphref checkpoint (or unsupported version)")),
    }
    let (_, model) = lines.next().ok_or_else(|| Error::parse(2, "missing model line"))?;
    let kv: HashMap<&str, &str> = model
        .strip_prefix("model ")
        .ok_or_else(|| Error::parse(2, "missing model line"))?
        .split_whitespace()
        .filter_map(|f| f.split_once('='))
        .collect();
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::parse(2, format!("model lacks `{k}`")));
    let num = |k: &str| -> Result<usize> {
        get(k)?.parse().map_err(|e| Error::parse(2, format!("`{k}`: {e}")))
    };
    let config = ModelConfig {
        properties: num("p")?,
        types: num("t")?,
        vocab: Vocabulary::new(num("vocab")?)?,
        hidden_width: num("hidden")?,
        embedding_width: num("embedding")?,
        gcn_layers: num("layers")?,
        activation: get("activation")?.parse()?,
        output_activation: get("output_activation")?.parse()?,
        pooling: get("pooling")?.parse()?,
    };

    let mut tensors: HashMap<String, Tensor> = HashMap::new();
    while let Some((no, line)) = lines.next() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let ["tensor", name, rows, cols] = parts[..] else {
            return Err(Error::parse(no, "expected `tensor <name> <rows> <cols>`"));
        };
        let bad = |e: std::num::ParseIntError| Error::parse(no, e.to_string());
        let (rows, cols): (usize, usize) = (rows.parse().map_err(bad)?, cols.parse().map_err(bad)?);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (rno, row) = lines.next().ok_or_else(|| Error::parse(no, "truncated tensor"))?;
            let before = data.len();
            for v in row.split_whitespace() {
                data.push(v.parse::<f64>().map_err(|e| Error::parse(rno, e.to_string()))?);
            }
            if data.len() - before != cols {
                return Err(Error::parse(rno, format!("expected {cols} values")));
            }
        }
        tensors.insert(name.to_string(), Tensor::matrix(rows, cols, data)?);
    }

    let mut take = |name: String| {
        tensors
            .remove(&name)
            .ok_or_else(|| Error::parse(0, format!("checkpoint lacks tensor `{name}`")))
    };
    let mut encoder = |prefix: &str| -> Result<GcnEncoder> {
        let layers = (0..config.gcn_layers)
            .map(|i| {
                Ok(GcnLayer {
                    weight: take(format!("{prefix}.gcn.{i}"))?,
                    activation: if i + 1 == config.gcn_layers {
                        config.output_activation
                    } else {
                        config.activation
                    },
                })
            })
            .collect::<Result<_>>()?;
        GcnEncoder::from_layers(layers, config.pooling)
    };
    let sender_encoder = encoder("sender")?;
    let receiver_encoder = encoder("receiver")?;
    let agents = Agents {
        sender: Sender {
            encoder: sender_encoder,
            head: take("sender.head".into())?,
        },
        receiver: Receiver {
            encoder: receiver_encoder,
            message_embedding: take("receiver.message_embedding".into())?,
        },
        config,
    };
    check_shapes(&agents)?;
    Ok(agents)
}

fn check_shapes(agents: &Agents) -> Result<()> {
    let c = &agents.config;
    let (v, d) = (c.vocab.size(), c.embedding_width);
    for enc in [&agents.sender.encoder, &agents.receiver.encoder] {
        if enc.input_width() != c.properties + c.types || enc.output_width() != d {
            return Err(Error::Incompatible("encoder widths disagree with the model line".into()));
        }
    }
    if agents.sender.head.shape() != [d, v] || agents.receiver.message_embedding.shape() != [v, d] {
        return Err(Error::Incompatible("head/embedding shapes disagree with the model line".into()));
    }
    Ok(())
}

pub fn save(agents: &Agents, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(agents)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Agents> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::Activation;
    use crate::rng::{stream, Stream};
    use crate::tensor::Pooling;

    fn agents() -> Agents {
        let cfg = ModelConfig {
            properties: 3,
            types: 4,
            vocab: Vocabulary::new(6).unwrap(),
            hidden_width: 5,
            embedding_width: 4,
            gcn_layers: 2,
            activation: Activation::Relu,
            output_activation: Activation::Tanh,
            pooling: Pooling::Max,
        };
        Agents::new(cfg, &mut stream(11, Stream::Init)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = agents();
        let text = to_text(&a);
        let b = from_text(&text).unwrap();
        assert_eq!(a, b);
        assert_eq!(to_text(&b), text);
    }

    #[test]
    fn rejects_wrong_magic_and_missing_tensors() {
        assert!(from_text("graphref-checkpoint 2\n").is_err());
        let text = to_text(&agents());
        let cut: String = text
            .lines()
            .take_while(|l| !l.starts_with("tensor receiver.message_embedding"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(matches!(from_text(&cut), Err(Error::Parse { .. })));
    }

    #[test]
    fn rejects_shape_disagreement() {
        let text = to_text(&agents()).replace("vocab=6", "vocab=7");
        assert!(matches!(from_text(&text), Err(Error::Incompatible(_))));
    }
}
