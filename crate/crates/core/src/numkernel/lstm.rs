//! LSTM cell and a many-to-one bidirectional reduction over a sequence.
//!
//! Each direction owns four gate weight blocks `[hidden × (input + hidden)]`
//! acting on the concatenation `[x; h_prev]`, followed by four bias vectors
//! `[hidden]`. Gate order is input, forget, candidate, output.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numkernel::dense::{affine, affine_backward, sigmoid};
use crate::numkernel::{GradBuf, ParamStore, Tensor};

pub const GATE_NAMES: [&str; 4] = ["i", "f", "g", "o"];
const FORGET: usize = 1;
const CANDIDATE: usize = 2;

/// Number of tensors one LSTM direction occupies in a [`ParamStore`].
pub const LSTM_TENSORS: usize = 8;

/// Borrowed view of one LSTM direction's weights.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams<'a> {
    pub input: usize,
    pub hidden: usize,
    pub w: [&'a [f64]; 4],
    pub b: [&'a [f64]; 4],
}

impl<'a> LstmParams<'a> {
    /// View of the eight consecutive tensors starting at `start`.
    pub fn at(store: &'a ParamStore, start: usize, input: usize, hidden: usize) -> Result<Self> {
        if start + LSTM_TENSORS > store.len() {
            return Err(Error::shape("LstmParams::at", "store too short for an LSTM block"));
        }
        let w: [&[f64]; 4] = std::array::from_fn(|g| store.at(start + g).data());
        let b: [&[f64]; 4] = std::array::from_fn(|g| store.at(start + 4 + g).data());
        let cols = input + hidden;
        if w.iter().any(|w| w.len() != hidden * cols) || b.iter().any(|b| b.len() != hidden) {
            return Err(Error::shape(
                "LstmParams::at",
                format!("gate blocks must be {hidden}x{cols} with biases of length {hidden}"),
            ));
        }
        Ok(Self { input, hidden, w, b })
    }

    /// View of the tensors named `<prefix>.w_i` … `<prefix>.b_o`.
    pub fn named(store: &'a ParamStore, prefix: &str, input: usize, hidden: usize) -> Result<Self> {
        let name = format!("{prefix}.w_i");
        let start = store.index_of(&name).ok_or(Error::UnknownParameter(name))?;
        Self::at(store, start, input, hidden)
    }
}

/// Mutable gradient slots for one LSTM direction.
pub struct LstmGrads<'a> {
    pub w: [&'a mut [f64]; 4],
    pub b: [&'a mut [f64]; 4],
}

impl<'a> LstmGrads<'a> {
    pub fn at(buf: &'a mut GradBuf, start: usize) -> Self {
        Self::from_block(&mut buf.0[start..start + LSTM_TENSORS])
    }

    /// Disjoint gradient slots for two directions; requires
    /// `fwd_start + 8 <= bwd_start`.
    pub fn pair(buf: &'a mut GradBuf, fwd_start: usize, bwd_start: usize) -> (Self, Self) {
        assert!(fwd_start + LSTM_TENSORS <= bwd_start, "LSTM gradient blocks overlap");
        let (lo, hi) = buf.0.split_at_mut(bwd_start);
        (
            Self::from_block(&mut lo[fwd_start..fwd_start + LSTM_TENSORS]),
            Self::from_block(&mut hi[..LSTM_TENSORS]),
        )
    }

    fn from_block(block: &'a mut [Vec<f64>]) -> Self {
        let (w, b) = block.split_at_mut(4);
        let [w0, w1, w2, w3] = w else { unreachable!() };
        let [b0, b1, b2, b3] = b else { unreachable!() };
        Self {
            w: [w0, w1, w2, w3],
            b: [b0, b1, b2, b3],
        }
    }
}

/// Registers one direction's tensors under `<prefix>.w_*` / `<prefix>.b_*`.
/// Weights and biases are uniform in `[-0.1, 0.1]`; the forget-gate bias
/// starts at 1.
pub fn register_lstm<R: Rng>(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<usize> {
    let cols = input + hidden;
    let start = store.len();
    for g in GATE_NAMES {
        store.insert(format!("{prefix}.w_{g}"), Tensor::uniform(vec![hidden, cols], 0.1, rng))?;
    }
    for (idx, g) in GATE_NAMES.iter().enumerate() {
        let t = if idx == FORGET {
            Tensor::vector(vec![1.0; hidden])
        } else {
            Tensor::uniform(vec![hidden], 0.1, rng)
        };
        store.insert(format!("{prefix}.b_{g}"), t)?;
    }
    Ok(start)
}

/// Activations cached by one cell step for backward-through-time.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStepCache {
    u: Vec<f64>,
    gates: [Vec<f64>; 4],
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

pub fn lstm_cell_step(
    x_in: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmParams<'_>,
) -> Result<(Vec<f64>, Vec<f64>, LstmStepCache)> {
    if x_in.len() != p.input || h_prev.len() != p.hidden || c_prev.len() != p.hidden {
        return Err(Error::shape(
            "lstm_cell_step",
            format!(
                "expected input {} and hidden {}, got x_in {}, h_prev {}, c_prev {}",
                p.input,
                p.hidden,
                x_in.len(),
                h_prev.len(),
                c_prev.len()
            ),
        ));
    }
    let mut u = Vec::with_capacity(p.input + p.hidden);
    u.extend_from_slice(x_in);
    u.extend_from_slice(h_prev);

    let gates: [Vec<f64>; 4] = std::array::from_fn(|g| {
        let mut z = vec![0.0; p.hidden];
        affine(p.w[g], p.b[g], &u, &mut z);
        if g == CANDIDATE {
            z.iter_mut().for_each(|v| *v = v.tanh());
        } else {
            z.iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        z
    });
    let [i, f, g, o] = &gates;
    let c_next: Vec<f64> = (0..p.hidden).map(|j| f[j] * c_prev[j] + i[j] * g[j]).collect();
    let tanh_c: Vec<f64> = c_next.iter().map(|c| c.tanh()).collect();
    let h_next: Vec<f64> = (0..p.hidden).map(|j| o[j] * tanh_c[j]).collect();
    let cache = LstmStepCache {
        u,
        gates,
        c_prev: c_prev.to_vec(),
        tanh_c,
    };
    Ok((h_next, c_next, cache))
}

/// Backward of one cell step. Returns `(dx, dh_prev, dc_prev)`.
pub fn lstm_cell_backward(
    cache: &LstmStepCache,
    dh: &[f64],
    dc: &[f64],
    p: &LstmParams<'_>,
    grads: &mut LstmGrads<'_>,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let [i, f, g, o] = &cache.gates;
    let hidden = p.hidden;
    let mut dz: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hidden]);
    let mut dc_prev = vec![0.0; hidden];
    for j in 0..hidden {
        let tc = cache.tanh_c[j];
        let d_o = dh[j] * tc;
        let dct = dc[j] + dh[j] * o[j] * (1.0 - tc * tc);
        let d_i = dct * g[j];
        let d_g = dct * i[j];
        let d_f = dct * cache.c_prev[j];
        dc_prev[j] = dct * f[j];
        dz[0][j] = d_i * i[j] * (1.0 - i[j]);
        dz[1][j] = d_f * f[j] * (1.0 - f[j]);
        dz[2][j] = d_g * (1.0 - g[j] * g[j]);
        dz[3][j] = d_o * o[j] * (1.0 - o[j]);
    }
    let mut du = vec![0.0; p.input + hidden];
    for gate in 0..4 {
        affine_backward(
            p.w[gate],
            &cache.u,
            &dz[gate],
            grads.w[gate],
            grads.b[gate],
            Some(&mut du),
        );
    }
    let dh_prev = du.split_off(p.input);
    (du, dh_prev, dc_prev)
}

/// Cache of a full bidirectional pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmCache {
    fwd: Vec<LstmStepCache>,
    bwd: Vec<LstmStepCache>,
}

/// Runs `fwd` over `seq` and `bwd` over `seq` reversed; returns the two
/// final hidden states concatenated (forward first).
pub fn bilstm_reduce(seq: &[Vec<f64>], fwd: &LstmParams<'_>, bwd: &LstmParams<'_>) -> Result<Vec<f64>> {
    bilstm_forward(seq, fwd, bwd).map(|(out, _)| out)
}

pub fn bilstm_forward(seq: &[Vec<f64>], fwd: &LstmParams<'_>, bwd: &LstmParams<'_>) -> Result<(Vec<f64>, BiLstmCache)> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let (hf, cf) = run_direction(seq.iter(), fwd)?;
    let (hb, cb) = run_direction(seq.iter().rev(), bwd)?;
    let mut out = hf;
    out.extend(hb);
    Ok((out, BiLstmCache { fwd: cf, bwd: cb }))
}

fn run_direction<'s>(
    seq: impl Iterator<Item = &'s Vec<f64>>,
    p: &LstmParams<'_>,
) -> Result<(Vec<f64>, Vec<LstmStepCache>)> {
    let mut h = vec![0.0; p.hidden];
    let mut c = vec![0.0; p.hidden];
    let mut caches = Vec::new();
    for x in seq {
        let (hn, cn, cache) = lstm_cell_step(x, &h, &c, p)?;
        h = hn;
        c = cn;
        caches.push(cache);
    }
    Ok((h, caches))
}

/// Backward of [`bilstm_forward`] given the gradient of the concatenated
/// output. Returns per-element input gradients in original sequence order.
pub fn bilstm_backward(
    cache: &BiLstmCache,
    dout: &[f64],
    fwd: &LstmParams<'_>,
    bwd: &LstmParams<'_>,
    gf: &mut LstmGrads<'_>,
    gb: &mut LstmGrads<'_>,
) -> Vec<Vec<f64>> {
    let len = cache.fwd.len();
    let mut dseq = vec![vec![0.0; fwd.input]; len];

    let dxs = backprop_direction(&cache.fwd, &dout[..fwd.hidden], fwd, gf);
    for (t, dx) in dxs.into_iter().enumerate() {
        dseq[t] = dx;
    }
    // the reverse direction consumed element len-1-t at its step t
    let dxs = backprop_direction(&cache.bwd, &dout[fwd.hidden..], bwd, gb);
    for (t, dx) in dxs.into_iter().enumerate() {
        for (a, b) in dseq[len - 1 - t].iter_mut().zip(dx) {
            *a += b;
        }
    }
    dseq
}

fn backprop_direction(
    caches: &[LstmStepCache],
    dh_final: &[f64],
    p: &LstmParams<'_>,
    grads: &mut LstmGrads<'_>,
) -> Vec<Vec<f64>> {
    let mut dh = dh_final.to_vec();
    let mut dc = vec![0.0; p.hidden];
    let mut dxs = vec![Vec::new(); caches.len()];
    for (t, cache) in caches.iter().enumerate().rev() {
        let (dx, dh_prev, dc_prev) = lstm_cell_backward(cache, &dh, &dc, p, grads);
        dxs[t] = dx;
        dh = dh_prev;
        dc = dc_prev;
    }
    dxs
}
