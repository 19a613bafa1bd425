//! Straight-through Gumbel-Softmax: hard one-hot samples whose frequencies
//! follow the softmax of the logits, and whose gradient is the relaxed one.
//!
//!     cargo run --example gumbel_channel

use graphref::agents::{channel_on_tape, gumbel_softmax_st, sample_gumbel};
use graphref::rng::{stream, Stream};
use graphref::tensor::softmax;
use graphref::{Channel, Result, Tape, Tensor};

fn main() -> Result<()> {
    let logits = Tensor::vector(vec![2.0, 1.0, 0.0, -1.0]);
    let mut rng = stream(3, Stream::Channel);
    let probs = softmax(&Tensor::matrix(1, 4, logits.data().to_vec())?);
    for tau in [0.5, 1.0, 5.0] {
        let mut counts = [0usize; 4];
        for _ in 0..20_000 {
            counts[gumbel_softmax_st(&logits, tau, &mut rng)?.symbol()] += 1;
        }
        let freq: Vec<String> = counts.iter().map(|&c| format!("{:.3}", c as f64 / 20_000.0)).collect();
        println!("tau {tau:>3}: argmax frequencies {}", freq.join(" "));
    }
    let p: Vec<String> = probs.data().iter().map(|v| format!("{v:.3}")).collect();
    println!("softmax(logits):          {}", p.join(" "));

    let mut tape = Tape::new();
    let l = tape.param(Tensor::matrix(1, 4, logits.data().to_vec())?);
    let noise = sample_gumbel(&mut rng, 1, 4);
    let m = channel_on_tape(&mut tape, l, Some(&noise), Channel::StraightThrough { temperature: 1.0 })?;
    let w = tape.constant(Tensor::from_rows(&[[1.0, -1.0, 0.5, 0.0]])?);
    let prod = tape.mul(m, w)?;
    let f = tape.sum(prod);
    let grads = tape.backward(f)?;
    println!("\nforward message {:?}", tape.value(m).data());
    println!("gradient reaching the logits {:.4?}", grads.get(l).expect("param").data());
    Ok(())
}
