// Reverse-mode gradients of a small graph checked against central
// differences.

use anyhow::{ensure, Result};
use domprompt::numerics::{Graph, Matrix, ParamKey};

const W: ParamKey = ParamKey(0);
const B: ParamKey = ParamKey(1);

/// `sum(gelu(layer_norm(x·W + b)))` and its gradient with respect to `W`.
fn loss_and_grad(x: &Matrix<f64>, w: &Matrix<f64>, b: &Matrix<f64>) -> Result<(f64, Matrix<f64>)> {
    let gain = Matrix::filled(1, w.cols(), 1.0);
    let bias = Matrix::zeros(1, w.cols());
    let mut g = Graph::new([W, B]);
    let x = g.constant(x);
    let w = g.param(w, W);
    let b = g.param(b, B);
    let gain = g.constant(&gain);
    let bias = g.constant(&bias);
    let h = g.matmul(x, w)?;
    let h = g.add_row(h, b)?;
    let h = g.layer_norm(h, gain, bias)?;
    let h = g.gelu(h);
    let loss = g.sum(h);
    let value = g.value(loss).item().unwrap_or_default();
    let grads = g.backward(loss)?;
    Ok((value, grads.get(W)?.clone()))
}

pub fn run_example() -> Result<()> {
    let x = Matrix::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.25, -0.5]])?;
    let w = Matrix::from_fn(3, 4, |r, c| ((r * 4 + c) as f64 * 0.7).sin());
    let b = Matrix::from_fn(1, 4, |_, c| 0.1 * c as f64);
    let (loss, analytic) = loss_and_grad(&x, &w, &b)?;
    println!("loss = {loss:.6}");

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    println!("{:>6} {:>14} {:>14}", "entry", "analytic", "numeric");
    for i in 0..w.len() {
        let mut plus = w.clone();
        plus.data_mut()[i] += h;
        let mut minus = w.clone();
        minus.data_mut()[i] -= h;
        let numeric = (loss_and_grad(&x, &plus, &b)?.0 - loss_and_grad(&x, &minus, &b)?.0) / (2.0 * h);
        let a = analytic.data()[i];
        println!("{i:>6} {a:>14.8} {numeric:>14.8}");
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
    }
    println!("max relative error {worst:.2e}");
    ensure!(worst < 1e-6, "gradient check failed");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
