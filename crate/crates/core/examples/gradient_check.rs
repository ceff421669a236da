// SPDX-License-Identifier: MIT OR Apache-2.0

//! Build a small graph on the tape, differentiate it, and compare against
//! central finite differences in f64.

use cddm_lab::tensor::{ParamStore, Tape, Tensor};

fn loss(params: &ParamStore<f64>) -> cddm_lab::Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new(params);
    let ids: Vec<_> = params.ids().collect();
    let x = tape.param(ids[0]);
    let w = tape.param(ids[1]);
    let g = tape.param(ids[2]);
    let b = tape.param(ids[3]);
    let h = tape.matmul(x, w)?;
    let h = tape.layernorm(h, g, b)?;
    let h = tape.gelu(h)?;
    let l = tape.cross_entropy(h, &[Some(0), None, Some(2)])?;
    let grads = tape.backward(l)?;
    let gw = grads.get_or_zeros(ids[1], params.get(ids[1]));
    Ok((tape.value(l).data()[0], gw.into_data()))
}

fn main() -> cddm_lab::Result<()> {
    let mut params = ParamStore::new();
    let fill = |n: usize, k: f64| (0..n).map(|i| ((i as f64 + 1.0) * k).sin()).collect::<Vec<_>>();
    params.push("x", Tensor::new(vec![3, 4], fill(12, 0.7))?);
    let w = params.push("w", Tensor::new(vec![4, 5], fill(20, 1.3))?);
    params.push("g", Tensor::new(vec![5], fill(5, 0.4))?);
    params.push("b", Tensor::new(vec![5], fill(5, 2.1))?);

    let (value, analytic) = loss(&params)?;
    println!("loss {value:.6}");
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = params.get(w).data()[i];
        params.get_mut(w).data_mut()[i] = orig + h;
        let up = loss(&params)?.0;
        params.get_mut(w).data_mut()[i] = orig - h;
        let down = loss(&params)?.0;
        params.get_mut(w).data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    println!("max relative error over w: {worst:.2e}");
    assert!(worst < 1e-4);
    Ok(())
}
