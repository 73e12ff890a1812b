//! LSTM cell built from tape primitives.
//!
//! ```text
//! i = sigmoid(W_i x + U_i h_prev + b_i)
//! f = sigmoid(W_f x + U_f h_prev + b_f)
//! o = sigmoid(W_o x + U_o h_prev + b_o)
//! c = f * c_prev + i * tanh(W_c x + U_c h_prev + b_c)
//! h = tanh(c) * o
//! ```

use super::params::{ParamId, ParamStore};
use super::rng::Rng;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const GATES: [&str; 4] = ["i", "f", "o", "c"];
pub const FORGET_BIAS_INIT: f64 = 1.0;

/// Tape handles for one cell's weights, gates ordered `i, f, o, c`.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w: [Var; 4],
    pub u: [Var; 4],
    pub b: [Var; 4],
}

/// Stored parameters of one LSTM layer.
#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub d_in: usize,
    pub hidden: usize,
    pub w: [ParamId; 4],
    pub u: [ParamId; 4],
    pub b: [ParamId; 4],
}

impl LstmLayer {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut w = Vec::with_capacity(4);
        let mut u = Vec::with_capacity(4);
        let mut b = Vec::with_capacity(4);
        for g in GATES {
            w.push(store.add_glorot(&format!("{prefix}.w_{g}"), &[hidden, d_in], d_in, hidden, rng)?);
            u.push(store.add_glorot(&format!("{prefix}.u_{g}"), &[hidden, hidden], hidden, hidden, rng)?);
            let init = if g == "f" { FORGET_BIAS_INIT } else { 0.0 };
            b.push(store.add(&format!("{prefix}.b_{g}"), Tensor::full(&[hidden], init))?);
        }
        Ok(LstmLayer {
            d_in,
            hidden,
            w: w.try_into().expect("four gates"),
            u: u.try_into().expect("four gates"),
            b: b.try_into().expect("four gates"),
        })
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> LstmVars {
        LstmVars {
            w: self.w.map(|id| tape.param(store, id)),
            u: self.u.map(|id| tape.param(store, id)),
            b: self.b.map(|id| tape.param(store, id)),
        }
    }

    /// Runs the layer over `xs` (each `[d_in]` or `[batch, d_in]`) from a zero state
    /// and returns the hidden state after every step.
    pub fn unroll(&self, tape: &mut Tape, vars: &LstmVars, xs: &[Var]) -> Result<Vec<Var>> {
        let Some(&first) = xs.first() else {
            return Err(Error::shape("lstm: empty input sequence"));
        };
        let state_shape = match tape.value(first).shape() {
            [_] => vec![self.hidden],
            [rows, _] => vec![*rows, self.hidden],
            s => return Err(Error::shape(format!("lstm: input must be 1-D or 2-D, got {s:?}"))),
        };
        let mut h = tape.constant(Tensor::zeros(&state_shape));
        let mut c = tape.constant(Tensor::zeros(&state_shape));
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            (h, c) = lstm_step(tape, x, h, c, vars)?;
            out.push(h);
        }
        Ok(out)
    }
}

fn gate(tape: &mut Tape, x: Var, h: Var, p: &LstmVars, k: usize) -> Result<Var> {
    let wx = tape.linear(x, p.w[k], None)?;
    let uh = tape.linear(h, p.u[k], Some(p.b[k]))?;
    tape.add(wx, uh)
}

/// One recurrence step; returns `(h, c)`.
pub fn lstm_step(tape: &mut Tape, x: Var, h_prev: Var, c_prev: Var, p: &LstmVars) -> Result<(Var, Var)> {
    let hidden = tape.value(p.b[0]).len();
    let last = |t: &Tape, v: Var| t.value(v).shape().last().copied();
    if last(tape, h_prev) != Some(hidden) || tape.value(h_prev).shape() != tape.value(c_prev).shape() {
        return Err(Error::shape(format!(
            "lstm_step: state shapes {:?}/{:?} do not match hidden size {hidden}",
            tape.value(h_prev).shape(),
            tape.value(c_prev).shape()
        )));
    }
    let i = gate(tape, x, h_prev, p, 0)?;
    let i = tape.sigmoid(i);
    let f = gate(tape, x, h_prev, p, 1)?;
    let f = tape.sigmoid(f);
    let o = gate(tape, x, h_prev, p, 2)?;
    let o = tape.sigmoid(o);
    let g = gate(tape, x, h_prev, p, 3)?;
    let g = tape.tanh(g);
    let fc = tape.mul(f, c_prev)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let tc = tape.tanh(c);
    let h = tape.mul(tc, o)?;
    Ok((h, c))
}
