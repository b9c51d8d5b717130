//! Fits a tiny tanh network to a 1-D function with Adam, checking the
//! analytic gradient against finite differences along the way.
//!
//!     cargo run --release --example gradient_check

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use srpmoe::nn::{grad_check, Activation, AdamConfig, DenseNet, LayerGrad, OptimizerState};

fn main() -> srpmoe::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = DenseNet::mlp(&[1, 16, 1], Activation::Tanh, Activation::Linear, &mut rng)?;
    let mut opt = OptimizerState::new(&net, AdamConfig { learning_rate: 1e-2, ..AdamConfig::default() })?;
    let xs: Vec<f64> = (0..32).map(|i| -2.0 + 4.0 * i as f64 / 31.0).collect();
    let target = |x: f64| (1.5 * x).sin();

    for epoch in 0..=2000 {
        let mut grads: Option<Vec<LayerGrad>> = None;
        let mut loss = 0.0;
        for &x in &xs {
            let y = net.forward(&[x])?[0];
            let err = y - target(x);
            loss += 0.5 * err * err / xs.len() as f64;
            let g = net.backward(&[x], &[err / xs.len() as f64])?;
            match grads.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g.layers).for_each(|(a, b)| a.add_assign(b)),
                None => grads = Some(g.layers),
            }
        }
        if epoch % 500 == 0 {
            let t = target(0.7);
            let err = grad_check(&net, &[0.7], |y| (0.5 * (y[0] - t).powi(2), vec![y[0] - t]))?;
            println!("epoch {epoch:>4}  loss {loss:.6}  finite-difference relative error {err:.2e}");
        }
        opt.step(&mut net, &grads.unwrap())?;
    }
    Ok(())
}
