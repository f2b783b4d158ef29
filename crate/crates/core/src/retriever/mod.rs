//! Context-aware variational retriever.
//!
//! The utterance and its context are encoded separately, mapped to unit
//! directions `μ_x` and `μ_c`, and a vMF sample around each initialises a
//! stacked LSTM that reconstructs the gold surface program. Training
//! maximises the reconstruction log-likelihood; the KL term between two
//! codes with a shared κ is bounded by a constant and drops out. Retrieval
//! ranks indexed examples by the closed-form KL between mean directions.

mod index;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use index::{DistanceMode, RetrievalIndex};

use crate::data::{build_vocab, split_camel_case, ContextEnv, Example, Vocab};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamState, ModelParams, NodeId, ParamId, Tape};
use crate::rnn::{bilstm_encode, stacked_lstm_step, BiLstm, LstmCellParams, LstmState};
use crate::vmf::{vmf_sample_node, LatentCode};

/// Pre-normalisation norms below this are treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrieverConfig {
    /// Word embedding width; must be even (member names are encoded into it).
    pub word_dim: usize,
    pub hidden: usize,
    pub encoder_layers: usize,
    /// Dimension of each of the two direction vectors.
    pub latent: usize,
    pub kappa: f64,
    pub decoder_layers: usize,
    pub decoder_hidden: usize,
    pub dropout: f64,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            word_dim: 64,
            hidden: 64,
            encoder_layers: 1,
            latent: 32,
            kappa: 50.0,
            decoder_layers: 4,
            decoder_hidden: 64,
            dropout: 0.5,
        }
    }
}

impl RetrieverConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.word_dim,
            self.hidden,
            self.encoder_layers,
            self.decoder_layers,
            self.decoder_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(
                "retriever dimensions must be positive".into(),
            ));
        }
        if !self.word_dim.is_multiple_of(2) {
            return Err(Error::Config("retriever word_dim must be even".into()));
        }
        if self.latent < 3 {
            return Err(Error::Config("latent dimension must be at least 3".into()));
        }
        if self.kappa.is_nan() || self.kappa <= 0.0 {
            return Err(Error::Config(format!(
                "kappa {} must be positive",
                self.kappa
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrieverTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Share of the data held out for early stopping; zero disables it.
    pub dev_fraction: f64,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
}

impl Default for RetrieverTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 0.005,
            batch_size: 10,
            dev_fraction: 0.1,
            patience: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean negative log-likelihood per example.
    pub train_nll: f64,
    /// Mean negative log-likelihood per target token (including end marker).
    pub train_token_nll: f64,
    pub dev_token_nll: Option<f64>,
}

#[derive(Clone, Debug)]
struct RetrieverIds {
    word_emb: ParamId,
    utterance: BiLstm,
    name: BiLstm,
    member: BiLstm,
    question: BiLstm,
    head_x_w: ParamId,
    head_x_b: ParamId,
    head_c_w: ParamId,
    head_c_b: ParamId,
    init_w: ParamId,
    init_b: ParamId,
    decoder: Vec<LstmCellParams>,
    out_w: ParamId,
    out_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct Retriever {
    pub config: RetrieverConfig,
    pub vocab: Vocab,
    ids: RetrieverIds,
}

fn context_tokens(ctx: &ContextEnv) -> Vec<String> {
    match ctx {
        ContextEnv::Class { variables, methods } => variables
            .iter()
            .chain(methods)
            .flat_map(|m| {
                let mut t = split_camel_case(&m.name).unwrap_or_default();
                t.push(m.type_name.clone());
                t
            })
            .collect(),
        ContextEnv::Dialog { history } => history.iter().flatten().cloned().collect(),
    }
}

/// Vocabulary over utterances, contexts and gold surface tokens.
pub fn retriever_vocab(examples: &[Example]) -> Vocab {
    let mut tokens = Vec::new();
    for ex in examples {
        tokens.extend(ex.nl.iter().cloned());
        tokens.extend(ex.surface.iter().cloned());
        tokens.extend(context_tokens(&ex.context));
    }
    build_vocab(tokens.iter().map(String::as_str), 1)
}

impl Retriever {
    pub fn new<R: Rng + ?Sized>(
        vocab: Vocab,
        config: RetrieverConfig,
        rng: &mut R,
    ) -> Result<(Self, ModelParams)> {
        config.validate()?;
        let c = &config;
        let two_h = 2 * c.hidden;
        let mut p = ModelParams::new();
        p.insert_uniform("word_emb", &[vocab.len(), c.word_dim], rng);
        BiLstm::init(&mut p, "utt", c.word_dim, c.hidden, c.encoder_layers, rng);
        BiLstm::init(&mut p, "name", c.word_dim, c.word_dim / 2, 1, rng);
        BiLstm::init(&mut p, "member", c.word_dim, c.hidden, 1, rng);
        BiLstm::init(
            &mut p,
            "question",
            c.word_dim,
            c.hidden,
            c.encoder_layers,
            rng,
        );
        p.insert_uniform("head_x.w", &[c.latent, two_h], rng);
        p.insert_uniform("head_x.b", &[c.latent], rng);
        p.insert_uniform("head_c.w", &[c.latent, two_h], rng);
        p.insert_uniform("head_c.b", &[c.latent], rng);
        let packed = 2 * c.decoder_hidden * c.decoder_layers;
        p.insert_uniform("init.w", &[packed, 2 * c.latent], rng);
        p.insert_uniform("init.b", &[packed], rng);
        for l in 0..c.decoder_layers {
            let inp = if l == 0 { c.word_dim } else { c.decoder_hidden };
            LstmCellParams::init(&mut p, &format!("dec.l{l}"), inp, c.decoder_hidden, rng);
        }
        p.insert_uniform("out.w", &[vocab.len(), c.decoder_hidden], rng);
        p.insert_uniform("out.b", &[vocab.len()], rng);
        let r = Self::with_params(vocab, config, &p)?;
        Ok((r, p))
    }

    pub fn with_params(vocab: Vocab, config: RetrieverConfig, p: &ModelParams) -> Result<Self> {
        config.validate()?;
        let ids = RetrieverIds {
            word_emb: p.require("word_emb")?,
            utterance: BiLstm::find(p, "utt", config.encoder_layers)?,
            name: BiLstm::find(p, "name", 1)?,
            member: BiLstm::find(p, "member", 1)?,
            question: BiLstm::find(p, "question", config.encoder_layers)?,
            head_x_w: p.require("head_x.w")?,
            head_x_b: p.require("head_x.b")?,
            head_c_w: p.require("head_c.w")?,
            head_c_b: p.require("head_c.b")?,
            init_w: p.require("init.w")?,
            init_b: p.require("init.b")?,
            decoder: (0..config.decoder_layers)
                .map(|l| LstmCellParams::find(p, &format!("dec.l{l}")))
                .collect::<Result<_>>()?,
            out_w: p.require("out.w")?,
            out_b: p.require("out.b")?,
        };
        let emb = p.get(ids.word_emb).shape();
        if emb != [vocab.len(), config.word_dim] || p.get(ids.out_w).shape()[0] != vocab.len() {
            return Err(Error::Checkpoint(format!(
                "retriever weights do not match a vocabulary of {}",
                vocab.len()
            )));
        }
        Ok(Self { config, vocab, ids })
    }

    fn embed(&self, tape: &mut Tape<'_>, token: &str, rng: Option<&mut ChaCha8Rng>) -> NodeId {
        let e = tape.embedding(self.ids.word_emb, self.vocab.id(token));
        match rng {
            Some(r) => tape.dropout(e, self.config.dropout, r),
            None => e,
        }
    }

    /// Bidirectional state at the last utterance token.
    pub fn encode_utterance(
        &self,
        tape: &mut Tape<'_>,
        tokens: &[String],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId> {
        if tokens.is_empty() {
            return Err(Error::Empty("utterance"));
        }
        let emb: Vec<NodeId> = tokens
            .iter()
            .map(|t| self.embed(tape, t, rng.as_deref_mut()))
            .collect();
        Ok(bilstm_encode(tape, &emb, &self.ids.utterance)?.last_token())
    }

    /// Vector for one class member: a two-step BiLSTM over its type
    /// embedding and the encoding of its name subwords.
    pub fn encode_member(
        &self,
        tape: &mut Tape<'_>,
        name: &str,
        type_name: &str,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId> {
        let parts = split_camel_case(name).unwrap_or_else(|_| vec![name.to_string()]);
        let sub: Vec<NodeId> = parts
            .iter()
            .map(|t| self.embed(tape, t, rng.as_deref_mut()))
            .collect();
        let name_vec = bilstm_encode(tape, &sub, &self.ids.name)?.both_ends(tape);
        let ty = self.embed(tape, type_name, rng);
        Ok(bilstm_encode(tape, &[ty, name_vec], &self.ids.member)?.both_ends(tape))
    }

    /// Mean of the member (or previous-question) vectors; zeros when empty.
    pub fn encode_context(
        &self,
        tape: &mut Tape<'_>,
        ctx: &ContextEnv,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId> {
        let items: Vec<NodeId> = match ctx {
            ContextEnv::Class { variables, methods } => variables
                .iter()
                .chain(methods)
                .map(|m| self.encode_member(tape, &m.name, &m.type_name, rng.as_deref_mut()))
                .collect::<Result<_>>()?,
            ContextEnv::Dialog { history } => history
                .iter()
                .filter(|q| !q.is_empty())
                .map(|q| {
                    let emb: Vec<NodeId> = q
                        .iter()
                        .map(|t| self.embed(tape, t, rng.as_deref_mut()))
                        .collect();
                    Ok(bilstm_encode(tape, &emb, &self.ids.question)?.both_ends(tape))
                })
                .collect::<Result<_>>()?,
        };
        if items.is_empty() {
            return Ok(tape.zeros(2 * self.config.hidden));
        }
        Ok(tape.mean(&items))
    }

    fn head(&self, tape: &mut Tape<'_>, h: NodeId, w: ParamId, b: ParamId) -> Result<NodeId> {
        let (w, b) = (tape.param(w), tape.param(b));
        let pre = tape.affine(w, h, b);
        let act = tape.tanh(pre);
        let norm = tape.value(act).norm();
        if norm < DEGENERATE_NORM {
            return Err(Error::DegenerateDirection(norm));
        }
        Ok(tape.l2_normalize(act))
    }

    /// Unit directions `(μ_x, μ_c)`: tanh of a linear map, then L2-normalised.
    pub fn latent_params(
        &self,
        tape: &mut Tape<'_>,
        h_x: NodeId,
        h_c: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let mx = self.head(tape, h_x, self.ids.head_x_w, self.ids.head_x_b)?;
        let mc = self.head(tape, h_c, self.ids.head_c_w, self.ids.head_c_b)?;
        Ok((mx, mc))
    }

    fn directions(
        &self,
        tape: &mut Tape<'_>,
        ex: &Example,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(NodeId, NodeId)> {
        let hx = self.encode_utterance(tape, &ex.nl, rng.as_deref_mut())?;
        let hc = self.encode_context(tape, &ex.context, rng)?;
        self.latent_params(tape, hx, hc)
    }

    /// Mean-direction latent code of an example (no sampling, no dropout).
    pub fn latent_code(&self, params: &ModelParams, ex: &Example) -> Result<LatentCode> {
        let mut tape = Tape::new(params);
        let (mx, mc) = self.directions(&mut tape, ex, None)?;
        tape.check_finite()?;
        Ok(LatentCode {
            mu_x: tape.value(mx).data().to_vec(),
            mu_c: tape.value(mc).data().to_vec(),
            kappa: self.config.kappa,
        })
    }

    /// Teacher-forced `log p(target | z)` over `target + <eos>`, starting from `<bos>`.
    pub fn reconstruction_logprob(
        &self,
        tape: &mut Tape<'_>,
        z: NodeId,
        target: &[String],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId> {
        let c = &self.config;
        if tape.value(z).len() != 2 * c.latent {
            return Err(Error::Shape(format!(
                "latent sample of {} for latent size {}",
                tape.value(z).len(),
                2 * c.latent
            )));
        }
        let (w, b) = (tape.param(self.ids.init_w), tape.param(self.ids.init_b));
        let packed = tape.affine(w, z, b);
        let span = 2 * c.decoder_hidden;
        let mut states: Vec<LstmState> = (0..c.decoder_layers)
            .map(|l| {
                let part = tape.slice(packed, l * span, span);
                LstmState::from_packed(tape, part, c.decoder_hidden)
            })
            .collect();
        let (ow, ob) = (tape.param(self.ids.out_w), tape.param(self.ids.out_b));
        let mask = vec![true; self.vocab.len()];
        let mut prev = crate::data::BOS.to_string();
        let mut terms = Vec::with_capacity(target.len() + 1);
        for tok in target.iter().map(String::as_str).chain([crate::data::EOS]) {
            let x = self.embed(tape, &prev, rng.as_deref_mut());
            let (top, next) = stacked_lstm_step(tape, &self.ids.decoder, x, &states)?;
            states = next;
            let logits = tape.affine(ow, top, ob);
            terms.push(tape.log_prob_masked(logits, &mask, self.vocab.id(tok))?);
            prev = tok.to_string();
        }
        Ok(tape.add_n(&terms))
    }

    /// Negative reconstruction log-likelihood with `z` drawn around the
    /// example's directions (or equal to them when `rng` is `None`).
    pub fn build_loss(
        &self,
        tape: &mut Tape<'_>,
        ex: &Example,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId> {
        let (mx, mc) = self.directions(tape, ex, rng.as_deref_mut())?;
        let z = match rng.as_deref_mut() {
            Some(r) => {
                let zx = vmf_sample_node(tape, mx, self.config.kappa, r)?;
                let zc = vmf_sample_node(tape, mc, self.config.kappa, r)?;
                tape.concat(&[zx, zc])
            }
            None => tape.concat(&[mx, mc]),
        };
        let lp = self.reconstruction_logprob(tape, z, &ex.surface, rng)?;
        Ok(tape.scale(lp, -1.0))
    }

    /// Mean negative log-likelihood per target token using mean directions.
    pub fn token_nll(&self, params: &ModelParams, examples: &[Example]) -> Result<f64> {
        let mut total = 0.0;
        let mut tokens = 0usize;
        for ex in examples {
            let mut tape = Tape::new(params);
            let loss = self.build_loss(&mut tape, ex, None)?;
            tape.check_finite()?;
            total += tape.scalar(loss);
            tokens += ex.surface.len() + 1;
        }
        Ok(total / tokens.max(1) as f64)
    }
}

/// Adam training of the reconstruction objective with early stopping on a
/// held-out share of `examples`. Returns the best weights seen and the
/// per-epoch statistics.
pub fn train_retriever(
    retriever: &Retriever,
    mut params: ModelParams,
    examples: &[Example],
    cfg: &RetrieverTrainConfig,
    rng: &mut ChaCha8Rng,
    log: &mut dyn FnMut(&EpochStats),
) -> Result<(ModelParams, Vec<EpochStats>)> {
    if examples.is_empty() {
        return Err(Error::Empty("retriever training set"));
    }
    if cfg.lr <= 0.0 || cfg.batch_size == 0 {
        return Err(Error::Config(
            "retriever lr and batch size must be positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    let n_dev = ((cfg.dev_fraction * examples.len() as f64).round() as usize)
        .min(examples.len().saturating_sub(1));
    let dev: Vec<Example> = order[..n_dev]
        .iter()
        .map(|&i| examples[i].clone())
        .collect();
    let mut train_idx: Vec<usize> = order[n_dev..].to_vec();
    train_idx.sort_unstable();

    let mut adam = AdamState::new(&params);
    let mut stats = Vec::new();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(rng);
        let (mut nll, mut tokens) = (0.0, 0usize);
        for batch in train_idx.chunks(cfg.batch_size) {
            let mut grads = params.zero_grads();
            let w = 1.0 / batch.len() as f64;
            for &i in batch {
                let ex = &examples[i];
                let mut tape = Tape::new(&params);
                let loss = retriever.build_loss(&mut tape, ex, Some(rng))?;
                let g = tape.backward(loss).map_err(|e| {
                    Error::Diverged(format!("example {} in epoch {epoch}: {e}", ex.id))
                })?;
                nll += tape.scalar(loss);
                tokens += ex.surface.len() + 1;
                grads.axpy(w, &g)?;
            }
            adam_step(&mut params, &grads, &mut adam, cfg.lr)?;
        }
        let dev_nll = if dev.is_empty() {
            None
        } else {
            Some(retriever.token_nll(&params, &dev)?)
        };
        let s = EpochStats {
            epoch,
            train_nll: nll / train_idx.len() as f64,
            train_token_nll: nll / tokens.max(1) as f64,
            dev_token_nll: dev_nll,
        };
        log(&s);
        stats.push(s);
        if let Some(d) = dev_nll {
            match &best {
                Some((b, _)) if d >= *b => {
                    stale += 1;
                    if stale >= cfg.patience.max(1) {
                        break;
                    }
                }
                _ => {
                    best = Some((d, params.clone()));
                    stale = 0;
                }
            }
        }
    }
    let params = best.map(|(_, p)| p).unwrap_or(params);
    Ok((params, stats))
}
