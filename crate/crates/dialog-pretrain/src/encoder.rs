//! Hierarchical dialog encoder, response encoder, and decoder.
//!
//! Utterances run through a bidirectional LSTM whose final states form the
//! utterance representation; the sequence of utterance representations runs
//! through a second bidirectional LSTM producing per-position context
//! states. A separate bidirectional LSTM encodes candidate responses into
//! the same space, and a unidirectional LSTM decoder generates tokens
//! conditioned on a context state. All components share one embedding
//! table.

use crate::data::{EOS_ID, PAD_ID, SOS_ID};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{ParamId, ParamStore, Real, Tensor};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Layer widths. `utt_hidden`/`ctx_hidden` are per direction, so utterance
/// representations are `2 * utt_hidden` wide and context states
/// `2 * ctx_hidden`. The response encoder always matches `ctx_hidden` so
/// score dot products are well-typed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub embed: usize,
    pub utt_hidden: usize,
    pub ctx_hidden: usize,
    pub dec_hidden: usize,
}

impl ModelDims {
    /// Published defaults: 150 units per RNN, shared 150-d embeddings.
    pub fn standard(vocab: usize) -> Self {
        ModelDims {
            vocab,
            embed: 150,
            utt_hidden: 150,
            ctx_hidden: 150,
            dec_hidden: 150,
        }
    }

    pub fn utterance_repr(&self) -> usize {
        2 * self.utt_hidden
    }

    pub fn context_state(&self) -> usize {
        2 * self.ctx_hidden
    }
}

/// One LSTM direction: stacked gate weights (input, forget, cell, output).
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct BiLstm {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub cell: LstmParams,
    /// Context state -> initial hidden state.
    pub init_w: ParamId,
    pub init_b: ParamId,
    /// Hidden state -> vocabulary logits.
    pub out_w: ParamId,
    pub out_b: ParamId,
}

/// Which trainable components a model instance carries beyond the
/// hierarchical encoder.
#[derive(Debug, Clone, Copy, Default)]
pub struct Components {
    pub response_encoder: bool,
    pub decoder: bool,
    pub bsp_head: bool,
    pub dap_head: bool,
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

/// A full model: parameter store plus handles for each component.
#[derive(Debug, Clone)]
pub struct DialogModel<F: Real> {
    pub store: ParamStore<F>,
    pub dims: ModelDims,
    pub embedding: ParamId,
    pub utterance_enc: BiLstm,
    pub context_enc: BiLstm,
    pub response_enc: Option<BiLstm>,
    pub decoder: Option<DecoderParams>,
    pub bsp_head: Option<Linear>,
    pub dap_head: Option<Linear>,
}

/// Name prefixes of everything the downstream fine-tuning inherits.
pub const TRANSFER_PREFIXES: [&str; 3] = ["embedding", "utt.", "ctx."];

const INIT_RANGE: f64 = 0.08;
const EMBED_STD: f64 = 0.1;

fn uniform_tensor<F: Real>(shape: Vec<usize>, rng: &mut ChaCha20Rng) -> Tensor<F> {
    let numel = shape.iter().product();
    let values = (0..numel)
        .map(|_| F::from_f64c(rng.gen_range(-INIT_RANGE..INIT_RANGE)))
        .collect();
    Tensor::new(shape, values).unwrap()
}

fn normal_tensor<F: Real>(shape: Vec<usize>, std: f64, rng: &mut ChaCha20Rng) -> Tensor<F> {
    let numel = shape.iter().product();
    // Box-Muller from the uniform stream keeps the generator dependency small.
    let values = (0..numel)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            F::from_f64c(z * std)
        })
        .collect();
    Tensor::new(shape, values).unwrap()
}

fn add_lstm<F: Real>(
    store: &mut ParamStore<F>,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut ChaCha20Rng,
) -> LstmParams {
    let w_ih = store.add(
        format!("{prefix}.w_ih"),
        uniform_tensor(vec![4 * hidden, input], rng),
    );
    let w_hh = store.add(
        format!("{prefix}.w_hh"),
        uniform_tensor(vec![4 * hidden, hidden], rng),
    );
    // Forget-gate bias starts at one.
    let mut bias = Tensor::zeros(vec![4 * hidden]);
    for v in &mut bias.values[hidden..2 * hidden] {
        *v = F::one();
    }
    let bias = store.add(format!("{prefix}.bias"), bias);
    LstmParams {
        w_ih,
        w_hh,
        bias,
        hidden,
    }
}

fn add_bilstm<F: Real>(
    store: &mut ParamStore<F>,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut ChaCha20Rng,
) -> BiLstm {
    BiLstm {
        fwd: add_lstm(store, &format!("{prefix}.fwd"), input, hidden, rng),
        bwd: add_lstm(store, &format!("{prefix}.bwd"), input, hidden, rng),
        hidden,
    }
}

impl<F: Real> DialogModel<F> {
    /// Fresh parameters: RNN and projection weights uniform in
    /// [-0.08, 0.08], embeddings normal with std 0.1, biases zero except
    /// the forget gates. Deterministic in `seed`.
    pub fn new(dims: ModelDims, components: Components, seed: u64) -> Self {
        let mut rng = crate::rng::stream(seed, "init", 0);
        let mut store = ParamStore::new();
        let embedding = store.add(
            "embedding",
            normal_tensor(vec![dims.vocab, dims.embed], EMBED_STD, &mut rng),
        );
        let utterance_enc = add_bilstm(&mut store, "utt", dims.embed, dims.utt_hidden, &mut rng);
        let context_enc = add_bilstm(
            &mut store,
            "ctx",
            dims.utterance_repr(),
            dims.ctx_hidden,
            &mut rng,
        );
        let response_enc = components
            .response_encoder
            .then(|| add_bilstm(&mut store, "resp", dims.embed, dims.ctx_hidden, &mut rng));
        let decoder = components.decoder.then(|| {
            let cell = add_lstm(&mut store, "dec.cell", dims.embed, dims.dec_hidden, &mut rng);
            let init_w = store.add(
                "dec.init_w",
                uniform_tensor(vec![dims.dec_hidden, dims.context_state()], &mut rng),
            );
            let init_b = store.add("dec.init_b", Tensor::zeros(vec![dims.dec_hidden]));
            let out_w = store.add(
                "dec.out_w",
                uniform_tensor(vec![dims.vocab, dims.dec_hidden], &mut rng),
            );
            let out_b = store.add("dec.out_b", Tensor::zeros(vec![dims.vocab]));
            DecoderParams {
                cell,
                init_w,
                init_b,
                out_w,
                out_b,
            }
        });
        let bsp_head = components.bsp_head.then(|| Linear {
            w: store.add(
                "bsp.w",
                uniform_tensor(vec![1784, dims.context_state()], &mut rng),
            ),
            b: store.add("bsp.b", Tensor::zeros(vec![1784])),
        });
        let dap_head = components.dap_head.then(|| Linear {
            w: store.add(
                "dap.w",
                uniform_tensor(vec![32, dims.context_state()], &mut rng),
            ),
            b: store.add("dap.b", Tensor::zeros(vec![32])),
        });
        DialogModel {
            store,
            dims,
            embedding,
            utterance_enc,
            context_enc,
            response_enc,
            decoder,
            bsp_head,
            dap_head,
        }
    }
}

/// Dropout configuration for a forward pass. Everything is deterministic
/// in eval mode.
pub struct ForwardMode<'a> {
    pub train: bool,
    pub dropout: f64,
    pub rng: Option<&'a mut ChaCha20Rng>,
}

impl<'a> ForwardMode<'a> {
    pub fn eval() -> ForwardMode<'static> {
        ForwardMode {
            train: false,
            dropout: 0.0,
            rng: None,
        }
    }

    pub fn train(dropout: f64, rng: &'a mut ChaCha20Rng) -> Self {
        ForwardMode {
            train: true,
            dropout,
            rng: Some(rng),
        }
    }

    fn apply<F: Real>(&mut self, tape: &mut Tape<F>, x: Var) -> Var {
        match (&mut self.rng, self.train) {
            (Some(rng), true) => tape.dropout(x, self.dropout, true, rng),
            _ => x,
        }
    }
}

fn run_lstm<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    cell: &LstmParams,
    inputs: &[Var],
    reverse: bool,
) -> Result<Vec<Var>> {
    let w_ih = tape.param(store, cell.w_ih);
    let w_hh = tape.param(store, cell.w_hh);
    let bias = tape.param(store, cell.bias);
    let hidden = cell.hidden;
    let mut h = tape.zeros(hidden);
    let mut c = tape.zeros(hidden);
    let mut states = vec![h; inputs.len()];
    let order: Vec<usize> = if reverse {
        (0..inputs.len()).rev().collect()
    } else {
        (0..inputs.len()).collect()
    };
    for idx in order {
        let wx = tape.matmul(w_ih, inputs[idx])?;
        let wh = tape.matmul(w_hh, h)?;
        let pre = tape.add(wx, wh)?;
        let z = tape.add(pre, bias)?;
        let gi = tape.slice(z, 0, hidden)?;
        let gf = tape.slice(z, hidden, hidden)?;
        let gc = tape.slice(z, 2 * hidden, hidden)?;
        let go = tape.slice(z, 3 * hidden, hidden)?;
        let i = tape.sigmoid(gi);
        let f = tape.sigmoid(gf);
        let g = tape.tanh(gc);
        let o = tape.sigmoid(go);
        let fc = tape.multiply(f, c)?;
        let ig = tape.multiply(i, g)?;
        c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        h = tape.multiply(o, tc)?;
        states[idx] = h;
    }
    Ok(states)
}

/// Per-position `[forward ; backward]` states over a sequence.
fn run_bilstm<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    enc: &BiLstm,
    inputs: &[Var],
) -> Result<Vec<Var>> {
    let fwd = run_lstm(tape, store, &enc.fwd, inputs, false)?;
    let bwd = run_lstm(tape, store, &enc.bwd, inputs, true)?;
    fwd.into_iter()
        .zip(bwd)
        .map(|(f, b)| tape.concat(&[f, b]))
        .collect()
}

/// Final `[forward_last ; backward_first]` state of a bidirectional pass.
fn run_bilstm_final<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    enc: &BiLstm,
    inputs: &[Var],
) -> Result<Var> {
    let fwd = run_lstm(tape, store, &enc.fwd, inputs, false)?;
    let bwd = run_lstm(tape, store, &enc.bwd, inputs, true)?;
    tape.concat(&[*fwd.last().unwrap(), bwd[0]])
}

fn embed_tokens<F: Real>(
    tape: &mut Tape<F>,
    model: &DialogModel<F>,
    token_ids: &[u32],
    mode: &mut ForwardMode,
) -> Result<Vec<Var>> {
    if token_ids.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot encode an empty token sequence".into(),
        ));
    }
    let table = tape.param(&model.store, model.embedding);
    let indices: Vec<usize> = token_ids.iter().map(|&t| t as usize).collect();
    let rows = tape.embedding_lookup(table, &indices)?;
    let rows = mode.apply(tape, rows);
    let width = model.dims.embed;
    (0..indices.len())
        .map(|i| tape.slice(rows, i * width, width))
        .collect()
}

/// Utterance representation: final-state concatenation of the
/// utterance-level encoder, `2 * utt_hidden` wide.
pub fn encode_utterance<F: Real>(
    tape: &mut Tape<F>,
    model: &DialogModel<F>,
    token_ids: &[u32],
    mode: &mut ForwardMode,
) -> Result<Var> {
    let inputs = embed_tokens(tape, model, token_ids, mode)?;
    let repr = run_bilstm_final(tape, &model.store, &model.utterance_enc, &inputs)?;
    Ok(mode.apply(tape, repr))
}

/// Per-position context states over a sequence of utterances.
pub fn encode_context<F: Real>(
    tape: &mut Tape<F>,
    model: &DialogModel<F>,
    utterances: &[Vec<u32>],
    mode: &mut ForwardMode,
) -> Result<Vec<Var>> {
    if utterances.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot encode an empty context".into(),
        ));
    }
    let reprs = utterances
        .iter()
        .map(|u| encode_utterance(tape, model, u, mode))
        .collect::<Result<Vec<_>>>()?;
    let states = run_bilstm(tape, &model.store, &model.context_enc, &reprs)?;
    Ok(states
        .into_iter()
        .map(|s| mode.apply(tape, s))
        .collect())
}

/// Response representation in context-state space.
pub fn encode_response<F: Real>(
    tape: &mut Tape<F>,
    model: &DialogModel<F>,
    token_ids: &[u32],
    mode: &mut ForwardMode,
) -> Result<Var> {
    let enc = model
        .response_enc
        .as_ref()
        .ok_or_else(|| Error::Config("model has no response encoder".into()))?;
    let inputs = embed_tokens(tape, model, token_ids, mode)?;
    let repr = run_bilstm_final(tape, &model.store, enc, &inputs)?;
    Ok(mode.apply(tape, repr))
}

fn decoder_init<F: Real>(
    tape: &mut Tape<F>,
    model: &DialogModel<F>,
    dec: &DecoderParams,
    context_state: Var,
) -> Result<Var> {
    let w = tape.param(&model.store, dec.init_w);
    let b = tape.param(&model.store, dec.init_b);
    let proj = tape.matmul(w, context_state)?;
    let z = tape.add(proj, b)?;
    Ok(tape.tanh(z))
}

fn decoder_step<F: Real>(
    tape: &mut Tape<F>,
    model: &DialogModel<F>,
    dec: &DecoderParams,
    input: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var)> {
    let w_ih = tape.param(&model.store, dec.cell.w_ih);
    let w_hh = tape.param(&model.store, dec.cell.w_hh);
    let bias = tape.param(&model.store, dec.cell.bias);
    let hidden = dec.cell.hidden;
    let wx = tape.matmul(w_ih, input)?;
    let wh = tape.matmul(w_hh, h)?;
    let pre = tape.add(wx, wh)?;
    let z = tape.add(pre, bias)?;
    let gi = tape.slice(z, 0, hidden)?;
    let gf = tape.slice(z, hidden, hidden)?;
    let gc = tape.slice(z, 2 * hidden, hidden)?;
    let go = tape.slice(z, 3 * hidden, hidden)?;
    let i = tape.sigmoid(gi);
    let f = tape.sigmoid(gf);
    let g = tape.tanh(gc);
    let o = tape.sigmoid(go);
    let fc = tape.multiply(f, c)?;
    let ig = tape.multiply(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next);
    let h_next = tape.multiply(o, tc)?;
    Ok((h_next, c_next))
}

fn decoder_logits<F: Real>(
    tape: &mut Tape<F>,
    model: &DialogModel<F>,
    dec: &DecoderParams,
    h: Var,
) -> Result<Var> {
    let w = tape.param(&model.store, dec.out_w);
    let b = tape.param(&model.store, dec.out_b);
    let proj = tape.matmul(w, h)?;
    tape.add(proj, b)
}

/// Teacher-forced decoding. `target_ids` must start with the start marker
/// and end with the end marker; returns the log-probability (a scalar Var,
/// one per predicted position) of each target token after the start marker.
pub fn decode_teacher_forced<F: Real>(
    tape: &mut Tape<F>,
    model: &DialogModel<F>,
    context_state: Var,
    target_ids: &[u32],
    mode: &mut ForwardMode,
) -> Result<Vec<Var>> {
    let dec = model
        .decoder
        .as_ref()
        .ok_or_else(|| Error::Config("model has no decoder".into()))?;
    if target_ids.len() < 2 || target_ids[0] != SOS_ID || *target_ids.last().unwrap() != EOS_ID {
        return Err(Error::InvalidArgument(
            "teacher forcing target must be <sos> ... <eos>".into(),
        ));
    }
    let mut h = decoder_init(tape, model, dec, context_state)?;
    let mut c = tape.zeros(dec.cell.hidden);
    let mut log_probs = Vec::with_capacity(target_ids.len() - 1);
    for k in 1..target_ids.len() {
        let prev = embed_tokens(tape, model, &target_ids[k - 1..k], mode)?;
        let (h_next, c_next) = decoder_step(tape, model, dec, prev[0], h, c)?;
        h = h_next;
        c = c_next;
        let logits = decoder_logits(tape, model, dec, h)?;
        let lp = tape.log_softmax(logits)?;
        log_probs.push(tape.slice(lp, target_ids[k] as usize, 1)?);
    }
    Ok(log_probs)
}

/// Greedy argmax decoding from a context state. Stops at the end marker or
/// `max_len` tokens; the padding and start markers are never emitted.
/// Returns content token ids (no markers).
pub fn decode_greedy<F: Real>(
    model: &DialogModel<F>,
    context: &[Vec<u32>],
    max_len: usize,
) -> Result<Vec<u32>> {
    let dec = model
        .decoder
        .as_ref()
        .ok_or_else(|| Error::Config("model has no decoder".into()))?;
    let mut tape = Tape::no_grad();
    let mut mode = ForwardMode::eval();
    let states = encode_context(&mut tape, model, context, &mut mode)?;
    let ctx = *states.last().unwrap();
    let mut h = decoder_init(&mut tape, model, dec, ctx)?;
    let mut c = tape.zeros(dec.cell.hidden);
    let mut out = Vec::new();
    let mut prev = SOS_ID;
    for _ in 0..max_len {
        let emb = embed_tokens(&mut tape, model, &[prev], &mut mode)?;
        let (h_next, c_next) = decoder_step(&mut tape, model, dec, emb[0], h, c)?;
        h = h_next;
        c = c_next;
        let logits = decoder_logits(&mut tape, model, dec, h)?;
        let values = tape.values(logits);
        let mut best = EOS_ID as usize;
        let mut best_val = F::neg_infinity();
        for (i, &v) in values.iter().enumerate() {
            if i == PAD_ID as usize || i == SOS_ID as usize {
                continue;
            }
            if v > best_val {
                best_val = v;
                best = i;
            }
        }
        if best == EOS_ID as usize {
            break;
        }
        out.push(best as u32);
        prev = best as u32;
    }
    Ok(out)
}
