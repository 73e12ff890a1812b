#![allow(dead_code)]

use deepair::numerics::{Rng, Tape, Tensor, Var};

pub fn rand_tensor(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-scale, scale)).collect()).unwrap()
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|, tiny)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}

/// Compares reverse-mode gradients of `build` against central differences with
/// step `h` for every input; returns the worst norm-wise relative error.
pub fn grad_check<F>(inputs: &[Tensor], h: f64, build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut numeric = vec![0.0; inputs[k].len()];
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            numeric[i] = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Projects a tensor output onto a fixed random direction so every element
/// contributes to a scalar loss.
pub fn project(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let shape = tape.value(y).shape().to_vec();
    let mut rng = Rng::new(seed);
    let w = tape.constant(rand_tensor(&mut rng, &shape, 1.0));
    let p = tape.mul(y, w).unwrap();
    tape.sum(p)
}

/// Direct six-loop same-padded cross-correlation of one `[C_in,H,W]` image.
pub fn naive_conv(x: &Tensor, k: &Tensor, b: &Tensor) -> Vec<f64> {
    let [ci_n, h, w] = *x.shape() else { panic!() };
    let [co_n, _, kk, _] = *k.shape() else { panic!() };
    let pad = (kk / 2) as isize;
    let mut out = vec![0.0; co_n * h * w];
    for co in 0..co_n {
        for y in 0..h {
            for xx in 0..w {
                let mut s = b.data()[co];
                for ci in 0..ci_n {
                    for ky in 0..kk {
                        for kx in 0..kk {
                            let sy = y as isize + ky as isize - pad;
                            let sx = xx as isize + kx as isize - pad;
                            if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                s += k.data()[((co * ci_n + ci) * kk + ky) * kk + kx]
                                    * x.data()[(ci * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                }
                out[(co * h + y) * w + xx] = s;
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar-by-scalar LSTM step; `w[g]` is `hidden x d_in`, `u[g]` is `hidden x hidden`.
pub fn scalar_lstm_step(
    x: &[f64],
    h: &[f64],
    c: &[f64],
    w: &[Vec<f64>; 4],
    u: &[Vec<f64>; 4],
    b: &[Vec<f64>; 4],
) -> (Vec<f64>, Vec<f64>) {
    let hidden = h.len();
    let d = x.len();
    let pre = |g: usize, j: usize| -> f64 {
        let mut s = b[g][j];
        for k in 0..d {
            s += w[g][j * d + k] * x[k];
        }
        for k in 0..hidden {
            s += u[g][j * hidden + k] * h[k];
        }
        s
    };
    let mut h_new = vec![0.0; hidden];
    let mut c_new = vec![0.0; hidden];
    for j in 0..hidden {
        let i = sig(pre(0, j));
        let f = sig(pre(1, j));
        let o = sig(pre(2, j));
        let g = pre(3, j).tanh();
        c_new[j] = f * c[j] + i * g;
        h_new[j] = c_new[j].tanh() * o;
    }
    (h_new, c_new)
}
