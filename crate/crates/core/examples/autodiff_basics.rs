//! A two-layer network written directly against the tape: forward, backward,
//! one SGD step.
//!
//!     cargo run --example autodiff_basics

use ulu_kit::activations::ActivationSpec;
use ulu_kit::autodiff::{sgd_step, ActivationRef, Graph, ParamStore};
use ulu_kit::tensor::Tensor;

fn main() -> anyhow::Result<()> {
    let mut store = ParamStore::new();
    let w1 = store.add("w1", Tensor::from_vec(vec![2, 3], vec![0.5, -0.3, 0.8, 0.1, 0.7, -0.6])?)?;
    let b1 = store.add("b1", Tensor::zeros(vec![3]))?;
    let w2 = store.add("w2", Tensor::from_vec(vec![3, 2], vec![0.2, -0.4, 0.9, 0.3, -0.5, 0.6])?)?;

    for step in 0..3 {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(vec![2, 2], vec![1.0, -1.0, 0.5, 2.0])?);
        let (pw1, pb1, pw2) = (g.param(&store, w1), g.param(&store, b1), g.param(&store, w2));
        let h = g.matmul(x, pw1)?;
        let h = g.bias_add(h, pb1)?;
        let h = g.activation(h, ActivationRef::Fixed(ActivationSpec::ulu(0.3, 0.8)?))?;
        let logits = g.matmul(h, pw2)?;
        let loss = g.softmax_cross_entropy(logits, &[0, 1])?;

        store.zero_grad();
        g.backward(loss, &mut store)?;
        println!("step {step}: loss {:.6}", g.value(loss).item());
        println!("  dL/dw1 {:?}", store.grad(w1).data());
        sgd_step(&mut store, 0.5, 0.0, 0.0)?;
    }
    Ok(())
}
