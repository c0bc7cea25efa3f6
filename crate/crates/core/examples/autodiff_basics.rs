//! First and second derivatives with the tape: d/dx x^3 at 3, the second
//! derivative by differentiating the gradient, and a Hessian-vector
//! product of a small quadratic form.
//!
//!     cargo run --example autodiff_basics

use mnist1d::autodiff::{grad, Tape, Tensor};

fn main() -> mnist1d::Result<()> {
    let tape = Tape::new();
    let x = tape.leaf(&Tensor::scalar(3.0));
    let y = x.pow(3.0)?;
    let dy = grad(&y, &[&x], true)?;
    let d2y = grad(&dy[0], &[&x], false)?;
    println!("y = {}, dy/dx = {}, d2y/dx2 = {}", y.item(), dy[0].item(), d2y[0].item());

    // f(w) = sum(c * w^2): the Hessian is diag(2c), so H v = 2 c v
    let tape = Tape::new();
    let w = tape.leaf(&Tensor::from_vec(vec![1.0, -2.0, 0.5]));
    let c = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
    let v = Tensor::from_vec(vec![1.0, 1.0, 1.0]);
    let f = w.square()?.mul(&c)?.sum()?;
    let g = grad(&f, &[&w], true)?;
    let hv = grad(&g[0].mul(&v)?.sum()?, &[&w], false)?;
    println!("grad = {:?}, Hv = {:?}", g[0].data(), hv[0].data());

    // a tiny network: softmax cross-entropy gradient wrt logits
    let tape = Tape::new();
    let logits = tape.leaf(&Tensor::new(&[1, 3], vec![2.0, 0.5, -1.0])?);
    let loss = mnist1d::training::nll_loss(&logits, &[0])?;
    let g = grad(&loss, &[&logits], false)?;
    println!("nll = {:.4}, dnll/dlogits = {:?}", loss.item(), g[0].data());
    Ok(())
}
