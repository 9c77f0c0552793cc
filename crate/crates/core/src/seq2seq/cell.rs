//! Recurrent cells and their backward passes.
//!
//! Gate layouts in the stacked weight matrices:
//! GRU `[r, z, n]`, LSTM `[i, f, g, o]`.
//!
//! ```text
//! SRN   h' = tanh(W_ih x + b_ih + W_hh h + b_hh)
//! GRU   r  = σ(W_ir x + b_ir + W_hr h + b_hr)
//!       z  = σ(W_iz x + b_iz + W_hz h + b_hz)
//!       n  = tanh(W_in x + b_in + r ∘ (W_hn h + b_hn))
//!       h' = (1 - z) ∘ n + z ∘ h
//! LSTM  [i, f, g, o] = [σ, σ, tanh, σ](W_ih x + b_ih + W_hh h + b_hh)
//!       c' = f ∘ c + i ∘ g
//!       h' = o ∘ tanh(c')
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numerics::{gemm_acc, gemv_acc, gemv_t_acc, linear_backward_batch, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Srn,
    Gru,
    Lstm,
}

impl Unit {
    pub const ALL: [Unit; 3] = [Unit::Srn, Unit::Gru, Unit::Lstm];

    /// Number of stacked gate blocks in the weight matrices.
    pub fn gates(self) -> usize {
        match self {
            Unit::Srn => 1,
            Unit::Gru => 3,
            Unit::Lstm => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Unit::Srn => "srn",
            Unit::Gru => "gru",
            Unit::Lstm => "lstm",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Unit::Srn => "SRN",
            Unit::Gru => "GRU",
            Unit::Lstm => "LSTM",
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Unit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "srn" => Ok(Unit::Srn),
            "gru" => Ok(Unit::Gru),
            "lstm" => Ok(Unit::Lstm),
            other => Err(format!("unknown recurrent unit `{other}` (expected srn, gru or lstm)")),
        }
    }
}

/// Hidden state, plus the memory cell for LSTMs.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Option<Vec<f64>>,
}

impl CellState {
    pub fn zeros(unit: Unit, hidden: usize) -> Self {
        CellState {
            h: vec![0.0; hidden],
            c: (unit == Unit::Lstm).then(|| vec![0.0; hidden]),
        }
    }
}

/// Borrowed weights of one cell.
#[derive(Clone, Copy)]
pub(crate) struct CellWeights<'a> {
    pub unit: Unit,
    pub input: usize,
    pub hidden: usize,
    pub w_ih: &'a [f64],
    pub w_hh: &'a [f64],
    pub b_ih: &'a [f64],
    pub b_hh: &'a [f64],
}

/// What the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub h_prev: Vec<f64>,
    pub c_prev: Option<Vec<f64>>,
    /// Activated gates: SRN `[h']`, GRU `[r, z, n]`, LSTM `[i, f, g, o]`.
    pub act: Vec<f64>,
    /// GRU: `W_hn h + b_hn`. LSTM: `tanh(c')`. Empty for SRN.
    pub aux: Vec<f64>,
}

/// Gradients of the pre-activations of one step.
pub(crate) struct PreGrads {
    pub d_in: Vec<f64>,
    pub d_hid: Vec<f64>,
    /// Part of `dL/dh_prev` that bypasses `W_hh` (GRU update path).
    pub dh_direct: Option<Vec<f64>>,
    pub dc_prev: Option<Vec<f64>>,
}

pub(crate) fn forward(w: CellWeights<'_>, x: &[f64], state: &CellState) -> (CellState, StepCache) {
    let mut pre_i = w.b_ih.to_vec();
    gemv_acc(w.w_ih, w.input, x, &mut pre_i);
    forward_projected(w, pre_i, state)
}

/// `W_ih x + b_ih` for a whole input sequence, row by row.
pub(crate) fn input_projections(w: CellWeights<'_>, xs: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut out = vec![w.b_ih.to_vec(); xs.len()];
    gemm_acc(w.w_ih, w.input, xs, &mut out);
    out
}

/// A step whose input projection `W_ih x + b_ih` is already known.
pub(crate) fn forward_projected(w: CellWeights<'_>, pre_i: Vec<f64>, state: &CellState) -> (CellState, StepCache) {
    let hs = w.hidden;
    let mut pre_h = w.b_hh.to_vec();
    gemv_acc(w.w_hh, hs, &state.h, &mut pre_h);

    match w.unit {
        Unit::Srn => {
            let h: Vec<f64> = pre_i.iter().zip(&pre_h).map(|(a, b)| (a + b).tanh()).collect();
            let cache = StepCache { h_prev: state.h.clone(), c_prev: None, act: h.clone(), aux: Vec::new() };
            (CellState { h, c: None }, cache)
        }
        Unit::Gru => {
            let mut act = vec![0.0; 3 * hs];
            let mut h = vec![0.0; hs];
            let hn = pre_h[2 * hs..].to_vec();
            for j in 0..hs {
                let r = sigmoid(pre_i[j] + pre_h[j]);
                let z = sigmoid(pre_i[hs + j] + pre_h[hs + j]);
                let n = (pre_i[2 * hs + j] + r * hn[j]).tanh();
                act[j] = r;
                act[hs + j] = z;
                act[2 * hs + j] = n;
                h[j] = (1.0 - z) * n + z * state.h[j];
            }
            let cache = StepCache { h_prev: state.h.clone(), c_prev: None, act, aux: hn };
            (CellState { h, c: None }, cache)
        }
        Unit::Lstm => {
            let c_prev = state.c.clone().unwrap_or_else(|| vec![0.0; hs]);
            let mut act = vec![0.0; 4 * hs];
            let mut c = vec![0.0; hs];
            let mut tc = vec![0.0; hs];
            let mut h = vec![0.0; hs];
            for j in 0..hs {
                let i = sigmoid(pre_i[j] + pre_h[j]);
                let f = sigmoid(pre_i[hs + j] + pre_h[hs + j]);
                let g = (pre_i[2 * hs + j] + pre_h[2 * hs + j]).tanh();
                let o = sigmoid(pre_i[3 * hs + j] + pre_h[3 * hs + j]);
                act[j] = i;
                act[hs + j] = f;
                act[2 * hs + j] = g;
                act[3 * hs + j] = o;
                c[j] = f * c_prev[j] + i * g;
                tc[j] = c[j].tanh();
                h[j] = o * tc[j];
            }
            let cache = StepCache { h_prev: state.h.clone(), c_prev: Some(c_prev), act, aux: tc };
            (CellState { h, c: Some(c) }, cache)
        }
    }
}

/// Back-propagates `dh` (and `dc` for LSTMs) through the gate nonlinearities.
pub(crate) fn pre_activation_grads(
    unit: Unit,
    hidden: usize,
    cache: &StepCache,
    dh: &[f64],
    dc: Option<&[f64]>,
    flip_reset_sign: bool,
) -> PreGrads {
    let hs = hidden;
    let a = &cache.act;
    match unit {
        Unit::Srn => {
            let d: Vec<f64> = dh.iter().zip(a).map(|(g, h)| g * (1.0 - h * h)).collect();
            PreGrads { d_in: d.clone(), d_hid: d, dh_direct: None, dc_prev: None }
        }
        Unit::Gru => {
            let mut d_in = vec![0.0; 3 * hs];
            let mut d_hid = vec![0.0; 3 * hs];
            let mut direct = vec![0.0; hs];
            let hn = &cache.aux;
            for j in 0..hs {
                let (r, z, n) = (a[j], a[hs + j], a[2 * hs + j]);
                let dn = dh[j] * (1.0 - z);
                let dz = dh[j] * (cache.h_prev[j] - n);
                direct[j] = dh[j] * z;
                let dan = dn * (1.0 - n * n);
                let mut dar = dan * hn[j] * r * (1.0 - r);
                if flip_reset_sign {
                    dar = -dar;
                }
                let daz = dz * z * (1.0 - z);
                d_in[j] = dar;
                d_in[hs + j] = daz;
                d_in[2 * hs + j] = dan;
                d_hid[j] = dar;
                d_hid[hs + j] = daz;
                d_hid[2 * hs + j] = dan * r;
            }
            PreGrads { d_in, d_hid, dh_direct: Some(direct), dc_prev: None }
        }
        Unit::Lstm => {
            let mut d = vec![0.0; 4 * hs];
            let mut dc_prev = vec![0.0; hs];
            let tc = &cache.aux;
            let c_prev = cache.c_prev.as_deref().expect("LSTM cache carries c_prev");
            for j in 0..hs {
                let (i, f, g, o) = (a[j], a[hs + j], a[2 * hs + j], a[3 * hs + j]);
                let dcj = dc.map_or(0.0, |dc| dc[j]) + dh[j] * o * (1.0 - tc[j] * tc[j]);
                let d_o = dh[j] * tc[j];
                d[j] = dcj * g * i * (1.0 - i);
                d[hs + j] = dcj * c_prev[j] * f * (1.0 - f);
                d[2 * hs + j] = dcj * i * (1.0 - g * g);
                d[3 * hs + j] = d_o * o * (1.0 - o);
                dc_prev[j] = dcj * f;
            }
            PreGrads { d_in: d.clone(), d_hid: d, dh_direct: None, dc_prev: Some(dc_prev) }
        }
    }
}

/// Adds the bias gradients of one step and returns `(dh_prev, dc_prev)`.
///
/// The weight gradients are left to [`accumulate_weights`], which handles
/// all steps of a sequence at once.
pub(crate) fn backward_step(
    w: CellWeights<'_>,
    db_ih: &mut [f64],
    db_hh: &mut [f64],
    pre: &PreGrads,
) -> (Vec<f64>, Option<Vec<f64>>) {
    for (g, d) in db_ih.iter_mut().zip(&pre.d_in) {
        *g += d;
    }
    for (g, d) in db_hh.iter_mut().zip(&pre.d_hid) {
        *g += d;
    }
    let mut dh_prev = pre.dh_direct.clone().unwrap_or_else(|| vec![0.0; w.hidden]);
    gemv_t_acc(w.w_hh, w.hidden, &pre.d_hid, &mut dh_prev);
    (dh_prev, pre.dc_prev.clone())
}

/// `dW_ih += Σ d_in xᵀ`, `dW_hh += Σ d_hid h_prevᵀ` over a sequence of steps;
/// returns the gradient with respect to each step's input.
pub(crate) fn accumulate_weights(
    w: CellWeights<'_>,
    dw_ih: &mut [f64],
    dw_hh: &mut [f64],
    steps: &[(&StepCache, &[f64], &PreGrads)],
) -> Vec<Vec<f64>> {
    let d_in: Vec<&[f64]> = steps.iter().map(|s| s.2.d_in.as_slice()).collect();
    let d_hid: Vec<&[f64]> = steps.iter().map(|s| s.2.d_hid.as_slice()).collect();
    let xs: Vec<&[f64]> = steps.iter().map(|s| s.1).collect();
    let hs: Vec<&[f64]> = steps.iter().map(|s| s.0.h_prev.as_slice()).collect();
    let mut dxs = vec![vec![0.0; w.input]; steps.len()];
    linear_backward_batch(w.w_ih, dw_ih, w.input, &d_in, &xs, Some(&mut dxs));
    linear_backward_batch(w.w_hh, dw_hh, w.hidden, &d_hid, &hs, None);
    dxs
}
