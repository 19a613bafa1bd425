//! Reverse-mode differentiation on the tape, checked against central
//! finite differences.
//!
//!     cargo run --example autodiff

use graphref::{Result, Tape, Tensor};

fn loss(w: &Tensor, x: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let (w, x) = (tape.constant(w.clone()), tape.constant(x.clone()));
    let h = tape.matmul(x, w)?;
    let h = tape.tanh(h);
    let lp = tape.log_softmax(h);
    let picked = tape.pick(lp, &[1, 0])?;
    let m = tape.mean(picked);
    Ok(-tape.value(m).data()[0])
}

fn main() -> Result<()> {
    let x = Tensor::from_rows(&[[1.0, -0.5], [0.25, 2.0]])?;
    let w = Tensor::from_rows(&[[0.3, -0.2, 0.1], [0.05, 0.4, -0.3]])?;

    let mut tape = Tape::new();
    let wv = tape.param(w.clone());
    let xv = tape.constant(x.clone());
    let h = tape.matmul(xv, wv)?;
    let h = tape.tanh(h);
    let lp = tape.log_softmax(h);
    let picked = tape.pick(lp, &[1, 0])?;
    let m = tape.mean(picked);
    let nll = tape.scale(m, -1.0);
    println!("loss = {:.6}", tape.value(nll).data()[0]);

    let grads = tape.backward(nll)?;
    let g = grads.get(wv).expect("w is a parameter");
    let h = 1e-5;
    println!("{:>8} {:>14} {:>14}", "entry", "autodiff", "finite diff");
    for i in 0..w.len() {
        let (mut up, mut down) = (w.clone(), w.clone());
        up.data_mut()[i] += h;
        down.data_mut()[i] -= h;
        let numeric = (loss(&up, &x)? - loss(&down, &x)?) / (2.0 * h);
        println!("{:>8} {:>14.8} {:>14.8}", format!("w[{}]", i), g.data()[i], numeric);
    }
    Ok(())
}
