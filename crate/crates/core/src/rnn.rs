//! LSTM cells, stacked unidirectional LSTMs and bidirectional encoders.
//!
//! Gate layout inside the packed weights is `[input, forget, cell, output]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{ModelParams, NodeId, ParamId, Tape};

#[derive(Clone, Debug)]
pub struct LstmCellParams {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmCellParams {
    pub fn init<R: Rng + ?Sized>(
        params: &mut ModelParams,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Self {
        let g = 4 * hidden_size;
        Self {
            w_input: params.insert_uniform(format!("{prefix}.w_input"), &[g, input_size], rng),
            w_hidden: params.insert_uniform(format!("{prefix}.w_hidden"), &[g, hidden_size], rng),
            bias: params.insert_uniform(format!("{prefix}.bias"), &[g], rng),
            input_size,
            hidden_size,
        }
    }

    /// Looks up a cell previously registered under `prefix`.
    pub fn find(params: &ModelParams, prefix: &str) -> Result<Self> {
        let get = |suffix: &str| {
            params
                .id(&format!("{prefix}.{suffix}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {prefix}.{suffix}")))
        };
        let w_input = get("w_input")?;
        let w_hidden = get("w_hidden")?;
        let bias = get("bias")?;
        let wi = params.get(w_input).shape();
        let hidden_size = params.get(w_hidden).shape()[1];
        if wi.len() != 2 || wi[0] != 4 * hidden_size {
            return Err(Error::Shape(format!("{prefix}: inconsistent gate weights")));
        }
        Ok(Self {
            w_input,
            w_hidden,
            bias,
            input_size: wi[1],
            hidden_size,
        })
    }

    fn validate(&self, params: &ModelParams) -> Result<()> {
        let g = 4 * self.hidden_size;
        let ok = params.get(self.w_input).shape() == [g, self.input_size]
            && params.get(self.w_hidden).shape() == [g, self.hidden_size]
            && params.get(self.bias).shape() == [g];
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "cell weights inconsistent with input {} / hidden {}",
                self.input_size, self.hidden_size
            )))
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: NodeId,
    pub c: NodeId,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape<'_>, hidden: usize) -> Self {
        let h = tape.zeros(hidden);
        let c = tape.zeros(hidden);
        Self { h, c }
    }

    /// Splits an injected `2·hidden` vector into `h` (first half) and `c` (second half).
    pub fn from_packed(tape: &mut Tape<'_>, packed: NodeId, hidden: usize) -> Self {
        let h = tape.slice(packed, 0, hidden);
        let c = tape.slice(packed, hidden, hidden);
        Self { h, c }
    }
}

/// One LSTM step: returns the new `(h, c)`.
pub fn lstm_cell(
    tape: &mut Tape<'_>,
    x: NodeId,
    prev: LstmState,
    p: &LstmCellParams,
) -> Result<LstmState> {
    let hs = p.hidden_size;
    if tape.value(x).len() != p.input_size
        || tape.value(prev.h).len() != hs
        || tape.value(prev.c).len() != hs
    {
        return Err(Error::Shape(format!(
            "lstm_cell expects input {} / hidden {}, got {} / {} / {}",
            p.input_size,
            hs,
            tape.value(x).len(),
            tape.value(prev.h).len(),
            tape.value(prev.c).len()
        )));
    }
    p.validate(tape.params())?;
    let wi = tape.param(p.w_input);
    let wh = tape.param(p.w_hidden);
    let b = tape.param(p.bias);
    let a = tape.matvec(wi, x);
    let r = tape.matvec(wh, prev.h);
    let gates = tape.add_n(&[a, r, b]);
    let i = tape.slice(gates, 0, hs);
    let f = tape.slice(gates, hs, hs);
    let g = tape.slice(gates, 2 * hs, hs);
    let o = tape.slice(gates, 3 * hs, hs);
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, prev.c);
    let write = tape.mul(i, g);
    let c = tape.add(keep, write);
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc);
    Ok(LstmState { h, c })
}

/// Runs a stack of cells for one time step; layer `k` consumes layer `k-1`'s `h`.
pub fn stacked_lstm_step(
    tape: &mut Tape<'_>,
    layers: &[LstmCellParams],
    input: NodeId,
    states: &[LstmState],
) -> Result<(NodeId, Vec<LstmState>)> {
    if layers.len() != states.len() {
        return Err(Error::Shape(format!(
            "{} layers but {} states",
            layers.len(),
            states.len()
        )));
    }
    if layers.is_empty() {
        return Err(Error::Empty("layer stack"));
    }
    let mut x = input;
    let mut next = Vec::with_capacity(layers.len());
    for (cell, state) in layers.iter().zip(states) {
        let s = lstm_cell(tape, x, *state, cell)?;
        x = s.h;
        next.push(s);
    }
    Ok((x, next))
}

#[derive(Clone, Debug)]
pub struct BiLayer {
    pub forward: LstmCellParams,
    pub backward: LstmCellParams,
}

/// Multi-layer bidirectional LSTM. Layers above the first consume the
/// concatenated `forward‖backward` states of the layer below.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub layers: Vec<BiLayer>,
}

impl BiLstm {
    pub fn init<R: Rng + ?Sized>(
        params: &mut ModelParams,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        num_layers: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let inp = if l == 0 { input_size } else { 2 * hidden_size };
                BiLayer {
                    forward: LstmCellParams::init(
                        params,
                        &format!("{prefix}.l{l}.fwd"),
                        inp,
                        hidden_size,
                        rng,
                    ),
                    backward: LstmCellParams::init(
                        params,
                        &format!("{prefix}.l{l}.bwd"),
                        inp,
                        hidden_size,
                        rng,
                    ),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn find(params: &ModelParams, prefix: &str, num_layers: usize) -> Result<Self> {
        let layers = (0..num_layers)
            .map(|l| {
                Ok(BiLayer {
                    forward: LstmCellParams::find(params, &format!("{prefix}.l{l}.fwd"))?,
                    backward: LstmCellParams::find(params, &format!("{prefix}.l{l}.bwd"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].forward.hidden_size
    }

    /// Width of each per-token output state.
    pub fn output_size(&self) -> usize {
        2 * self.hidden_size()
    }
}

#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// Top-layer `forward‖backward` state per token.
    pub states: Vec<NodeId>,
    /// Top-layer forward state after the last token.
    pub final_forward: NodeId,
    /// Top-layer backward state after reading back to the first token.
    pub final_backward: NodeId,
}

impl EncoderOutput {
    /// Bidirectional state at the last token.
    pub fn last_token(&self) -> NodeId {
        *self.states.last().expect("encoder output is non-empty")
    }

    /// `final_forward‖final_backward`, i.e. both ends of the sequence.
    pub fn both_ends(&self, tape: &mut Tape<'_>) -> NodeId {
        tape.concat(&[self.final_forward, self.final_backward])
    }
}

pub fn bilstm_encode(
    tape: &mut Tape<'_>,
    embeddings: &[NodeId],
    encoder: &BiLstm,
) -> Result<EncoderOutput> {
    if embeddings.is_empty() {
        return Err(Error::Empty("sequence"));
    }
    if encoder.layers.is_empty() {
        return Err(Error::Empty("layer stack"));
    }
    let n = embeddings.len();
    let mut inputs = embeddings.to_vec();
    let mut out = None;
    for layer in &encoder.layers {
        let hs = layer.forward.hidden_size;
        let mut fwd = Vec::with_capacity(n);
        let mut state = LstmState::zeros(tape, hs);
        for &x in &inputs {
            state = lstm_cell(tape, x, state, &layer.forward)?;
            fwd.push(state.h);
        }
        let hs_b = layer.backward.hidden_size;
        let mut bwd = vec![fwd[0]; n];
        let mut state = LstmState::zeros(tape, hs_b);
        for t in (0..n).rev() {
            state = lstm_cell(tape, inputs[t], state, &layer.backward)?;
            bwd[t] = state.h;
        }
        let states: Vec<NodeId> = (0..n).map(|t| tape.concat(&[fwd[t], bwd[t]])).collect();
        out = Some(EncoderOutput {
            states: states.clone(),
            final_forward: fwd[n - 1],
            final_backward: bwd[0],
        });
        inputs = states;
    }
    Ok(out.expect("at least one layer"))
}
