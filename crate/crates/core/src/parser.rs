//! Grammar-constrained sequence-to-action parser.
//!
//! A bidirectional LSTM reads the utterance; its two ends initialise a
//! decoder LSTM whose input at each step is the current frontier symbol,
//! the previous action, the parent action and the parent's decoder state.
//! Rules are scored by `W_a s_t` masked to the legitimate set, constants by
//! `v_mᵀ tanh(W s_t)` where `v_m` encodes the constant's name subwords.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{build_vocab, split_camel_case, Example, Vocab};
use crate::error::{Error, Result};
use crate::grammar::{
    Action, ContextConstants, DerivationState, FrontierEntry, Grammar, SymbolKind,
};
use crate::numerics::{Gradients, ModelParams, NodeId, ParamId, Tape};
use crate::rnn::{bilstm_encode, lstm_cell, BiLstm, LstmCellParams, LstmState};

pub const DEFAULT_MAX_ACTIONS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParserConfig {
    pub word_dim: usize,
    pub encoder_hidden: usize,
    pub encoder_layers: usize,
    /// Width of action embeddings and of constant encodings; must be even.
    pub action_dim: usize,
    pub symbol_dim: usize,
    pub decoder_hidden: usize,
    pub dropout: f64,
}

impl Default for ParserConfig {
    fn default() -> Self {
        Self {
            word_dim: 32,
            encoder_hidden: 32,
            encoder_layers: 1,
            action_dim: 32,
            symbol_dim: 16,
            decoder_hidden: 64,
            dropout: 0.5,
        }
    }
}

impl ParserConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.word_dim,
            self.encoder_hidden,
            self.encoder_layers,
            self.action_dim,
            self.symbol_dim,
            self.decoder_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("parser dimensions must be positive".into()));
        }
        if !self.action_dim.is_multiple_of(2) {
            return Err(Error::Config("parser action_dim must be even".into()));
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

#[derive(Clone, Debug)]
struct ParserIds {
    word_emb: ParamId,
    action_emb: ParamId,
    symbol_emb: ParamId,
    encoder: BiLstm,
    constant_encoder: BiLstm,
    init_w: ParamId,
    init_b: ParamId,
    decoder: LstmCellParams,
    rule_scorer: ParamId,
    constant_scorer: ParamId,
    start_parent: ParamId,
    start_prev: ParamId,
    start_state: ParamId,
}

/// Model structure; the weights live in a separate [`ModelParams`] so that
/// adapted copies can be scored by the same parser.
#[derive(Clone, Debug)]
pub struct Parser {
    pub config: ParserConfig,
    pub grammar: Grammar,
    pub vocab: Vocab,
    ids: ParserIds,
    /// Row of each frontier symbol (nonterminal or category) in the symbol table.
    symbol_rows: Vec<Option<usize>>,
}

/// Decoder hidden state plus the inputs that produced it.
#[derive(Clone, Copy, Debug)]
pub struct DecoderStep {
    pub state: LstmState,
    pub symbol: NodeId,
    pub prev_action: NodeId,
    pub parent_action: NodeId,
    pub parent_state: NodeId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseStatus {
    Ok,
    Failed,
}

impl ParseStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseStatus::Ok => "ok",
            ParseStatus::Failed => "failed",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParseResult {
    pub status: ParseStatus,
    pub actions: Vec<Action>,
    /// Surface tokens of the completed derivation; empty when failed.
    pub tokens: Vec<String>,
    /// Probability of each chosen action under its step distribution.
    pub step_probs: Vec<f64>,
}

/// Vocabulary over utterance tokens and constant-name subwords.
pub fn parser_vocab(grammar: &Grammar, examples: &[Example]) -> Vocab {
    let mut tokens: Vec<String> = Vec::new();
    for ex in examples {
        tokens.extend(ex.nl.iter().cloned());
        for names in ex.constants(grammar).by_category {
            for name in names {
                tokens.extend(split_camel_case(&name).unwrap_or_default());
            }
        }
    }
    build_vocab(tokens.iter().map(String::as_str), 1)
}

fn symbol_rows(grammar: &Grammar) -> (Vec<Option<usize>>, usize) {
    let mut n = 0;
    let rows = grammar
        .symbols()
        .map(|s| {
            (grammar.kind(s) != SymbolKind::Terminal).then(|| {
                n += 1;
                n - 1
            })
        })
        .collect();
    (rows, n)
}

impl Parser {
    /// Creates a parser with freshly initialised weights.
    pub fn new<R: Rng + ?Sized>(
        grammar: Grammar,
        vocab: Vocab,
        config: ParserConfig,
        rng: &mut R,
    ) -> Result<(Self, ModelParams)> {
        config.validate()?;
        let c = &config;
        let (rows, n_symbols) = symbol_rows(&grammar);
        let n_actions = grammar.num_rules() + grammar.categories().len();
        let mut p = ModelParams::new();
        p.insert_uniform("word_emb", &[vocab.len(), c.word_dim], rng);
        p.insert_uniform("action_emb", &[n_actions, c.action_dim], rng);
        p.insert_uniform("symbol_emb", &[n_symbols, c.symbol_dim], rng);
        BiLstm::init(
            &mut p,
            "enc",
            c.word_dim,
            c.encoder_hidden,
            c.encoder_layers,
            rng,
        );
        BiLstm::init(&mut p, "const", c.word_dim, c.action_dim / 2, 1, rng);
        p.insert_uniform("init.w", &[2 * c.decoder_hidden, 2 * c.encoder_hidden], rng);
        p.insert_uniform("init.b", &[2 * c.decoder_hidden], rng);
        let dec_in = c.symbol_dim + 2 * c.action_dim + c.decoder_hidden;
        LstmCellParams::init(&mut p, "dec", dec_in, c.decoder_hidden, rng);
        p.insert_uniform("rule_scorer", &[grammar.num_rules(), c.decoder_hidden], rng);
        p.insert_uniform("const_scorer", &[c.action_dim, c.decoder_hidden], rng);
        p.insert_uniform("start.parent", &[c.action_dim], rng);
        p.insert_uniform("start.prev", &[c.action_dim], rng);
        p.insert_uniform("start.state", &[c.decoder_hidden], rng);
        let parser = Self::with_params(grammar, vocab, config, &p)?;
        debug_assert_eq!(parser.symbol_rows, rows);
        Ok((parser, p))
    }

    /// Binds a parser to an existing parameter layout (e.g. a loaded checkpoint).
    pub fn with_params(
        grammar: Grammar,
        vocab: Vocab,
        config: ParserConfig,
        params: &ModelParams,
    ) -> Result<Self> {
        config.validate()?;
        let (rows, n_symbols) = symbol_rows(&grammar);
        let ids = ParserIds {
            word_emb: params.require("word_emb")?,
            action_emb: params.require("action_emb")?,
            symbol_emb: params.require("symbol_emb")?,
            encoder: BiLstm::find(params, "enc", config.encoder_layers)?,
            constant_encoder: BiLstm::find(params, "const", 1)?,
            init_w: params.require("init.w")?,
            init_b: params.require("init.b")?,
            decoder: LstmCellParams::find(params, "dec")?,
            rule_scorer: params.require("rule_scorer")?,
            constant_scorer: params.require("const_scorer")?,
            start_parent: params.require("start.parent")?,
            start_prev: params.require("start.prev")?,
            start_state: params.require("start.state")?,
        };
        let expect = [
            (ids.word_emb, vec![vocab.len(), config.word_dim]),
            (
                ids.action_emb,
                vec![
                    grammar.num_rules() + grammar.categories().len(),
                    config.action_dim,
                ],
            ),
            (ids.symbol_emb, vec![n_symbols, config.symbol_dim]),
            (
                ids.rule_scorer,
                vec![grammar.num_rules(), config.decoder_hidden],
            ),
        ];
        for (id, shape) in expect {
            if params.get(id).shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    params.name(id),
                    params.get(id).shape(),
                    shape
                )));
            }
        }
        Ok(Self {
            config,
            grammar,
            vocab,
            ids,
            symbol_rows: rows,
        })
    }

    fn embed_words<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        words: impl IntoIterator<Item = usize>,
        mut rng: Option<&mut R>,
    ) -> Vec<NodeId> {
        words
            .into_iter()
            .map(|w| {
                let e = tape.embedding(self.ids.word_emb, w);
                match rng.as_deref_mut() {
                    Some(r) => tape.dropout(e, self.config.dropout, r),
                    None => e,
                }
            })
            .collect()
    }

    /// Encodes the utterance and returns the decoder's initial state, a
    /// linear map of the encoder's two ends split into `h` and `c`.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        utterance: &[String],
        rng: Option<&mut R>,
    ) -> Result<LstmState> {
        if utterance.is_empty() {
            return Err(Error::Empty("utterance"));
        }
        let ids: Vec<usize> = utterance.iter().map(|w| self.vocab.id(w)).collect();
        let emb = self.embed_words(tape, ids, rng);
        let enc = bilstm_encode(tape, &emb, &self.ids.encoder)?;
        let ends = enc.both_ends(tape);
        let w = tape.param(self.ids.init_w);
        let b = tape.param(self.ids.init_b);
        let packed = tape.affine(w, ends, b);
        Ok(LstmState::from_packed(
            tape,
            packed,
            self.config.decoder_hidden,
        ))
    }

    /// Encoding `v_m` of a constant from its name subwords.
    pub fn encode_constant(&self, tape: &mut Tape<'_>, name: &str) -> Result<NodeId> {
        let ids: Vec<usize> = match split_camel_case(name) {
            Ok(parts) => parts.iter().map(|p| self.vocab.id(p)).collect(),
            Err(_) => vec![Vocab::UNK_ID],
        };
        let emb = self.embed_words::<ChaCha8Rng>(tape, ids, None);
        let enc = bilstm_encode(tape, &emb, &self.ids.constant_encoder)?;
        Ok(enc.both_ends(tape))
    }

    /// One decoder update from the frontier entry about to be expanded.
    pub fn decoder_step<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        prev: LstmState,
        entry: &FrontierEntry<NodeId>,
        prev_action: NodeId,
        rng: Option<&mut R>,
    ) -> Result<DecoderStep> {
        let row = self.symbol_rows[entry.symbol.index()]
            .ok_or_else(|| Error::InvalidArgument("terminal symbols are never expanded".into()))?;
        let symbol = tape.embedding(self.ids.symbol_emb, row);
        let parent_action = match entry.parent {
            Some(Action::Apply(r)) => tape.embedding(self.ids.action_emb, r),
            Some(Action::Instantiate { .. }) => {
                return Err(Error::InvalidArgument(
                    "instantiations have no children".into(),
                ))
            }
            None => tape.param(self.ids.start_parent),
        };
        let parent_state = match entry.parent_state {
            Some(s) => s,
            None => tape.param(self.ids.start_state),
        };
        let mut x = tape.concat(&[symbol, prev_action, parent_action, parent_state]);
        if let Some(r) = rng {
            x = tape.dropout(x, self.config.dropout, r);
        }
        let state = lstm_cell(tape, x, prev, &self.ids.decoder)?;
        Ok(DecoderStep {
            state,
            symbol,
            prev_action,
            parent_action,
            parent_state,
        })
    }

    /// Unnormalised rule scores `W_a s_t`.
    pub fn rule_logits(&self, tape: &mut Tape<'_>, s_t: NodeId) -> NodeId {
        let w = tape.param(self.ids.rule_scorer);
        tape.matvec(w, s_t)
    }

    fn rule_mask(&self, legal: &[Action]) -> Vec<bool> {
        let mut mask = vec![false; self.grammar.num_rules()];
        for a in legal {
            if let Action::Apply(r) = a {
                mask[*r] = true;
            }
        }
        mask
    }

    /// Probabilities over all rules, zero outside the legitimate set.
    pub fn action_distribution(
        &self,
        tape: &mut Tape<'_>,
        s_t: NodeId,
        legal: &[Action],
    ) -> Result<NodeId> {
        if legal.is_empty() {
            return Err(Error::Empty("legitimate action set"));
        }
        let logits = self.rule_logits(tape, s_t);
        tape.softmax_masked(logits, &self.rule_mask(legal))
    }

    /// Scores `v_mᵀ tanh(W s_t)` for each constant encoding.
    pub fn constant_scores(
        &self,
        tape: &mut Tape<'_>,
        s_t: NodeId,
        constants: &[NodeId],
    ) -> Result<NodeId> {
        if constants.is_empty() {
            return Err(Error::Empty("constant set"));
        }
        let w = tape.param(self.ids.constant_scorer);
        let proj = tape.matvec(w, s_t);
        let q = tape.tanh(proj);
        let scores: Vec<NodeId> = constants.iter().map(|&v| tape.dot(v, q)).collect();
        Ok(tape.concat(&scores))
    }

    pub fn instantiate_distribution(
        &self,
        tape: &mut Tape<'_>,
        s_t: NodeId,
        constants: &[NodeId],
    ) -> Result<NodeId> {
        let scores = self.constant_scores(tape, s_t, constants)?;
        let mask = vec![true; constants.len()];
        tape.softmax_masked(scores, &mask)
    }

    /// Embedding fed back as `y_{t-1}` after `action`.
    fn action_repr(
        &self,
        tape: &mut Tape<'_>,
        action: Action,
        cache: &mut ConstantCache,
        constants: &ContextConstants,
    ) -> Result<NodeId> {
        Ok(match action {
            Action::Apply(r) => tape.embedding(self.ids.action_emb, r),
            Action::Instantiate { category, constant } => {
                let v = cache.get(self, tape, constants, category)?[constant];
                let tag = tape.embedding(self.ids.action_emb, self.grammar.num_rules() + category);
                tape.add(v, tag)
            }
        })
    }

    /// Records the teacher-forced negative log-likelihood of the gold
    /// derivation on `tape` and returns its node. Dropout is applied when
    /// `rng` is given.
    pub fn build_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        example: &Example,
        mut rng: Option<&mut R>,
    ) -> Result<NodeId> {
        let constants = example.constants(&self.grammar);
        let mut cache = ConstantCache::new(&self.grammar);
        let mut state = DerivationState::<NodeId>::new(&self.grammar);
        let mut dec = self.encode(tape, &example.nl, rng.as_deref_mut())?;
        let mut prev_action = tape.param(self.ids.start_prev);
        let mut terms = Vec::with_capacity(example.actions.len());
        for (i, &gold) in example.actions.iter().enumerate() {
            let entry = match state.top() {
                Some(e) => e.clone(),
                None => {
                    return Err(Error::TrailingActions {
                        completed_at: i,
                        trailing: example.actions.len() - i,
                    })
                }
            };
            let step = self.decoder_step(tape, dec, &entry, prev_action, rng.as_deref_mut())?;
            dec = step.state;
            let s_t = dec.h;
            let legal = state.legitimate_actions(&self.grammar, &constants)?;
            let lp = match gold {
                Action::Apply(r) => {
                    if !legal.contains(&gold) {
                        return Err(Error::IllegalAction {
                            index: i,
                            reason: format!("rule {r} is not legitimate here"),
                        });
                    }
                    let logits = self.rule_logits(tape, s_t);
                    tape.log_prob_masked(logits, &self.rule_mask(&legal), r)?
                }
                Action::Instantiate { category, constant } => {
                    if !legal.contains(&gold) {
                        return Err(Error::IllegalAction {
                            index: i,
                            reason: format!(
                                "constant {category}:{constant} is not legitimate here"
                            ),
                        });
                    }
                    let vs = cache.get(self, tape, &constants, category)?.to_vec();
                    let scores = self.constant_scores(tape, s_t, &vs)?;
                    tape.log_prob_masked(scores, &vec![true; vs.len()], constant)?
                }
            };
            terms.push(lp);
            state.apply(&self.grammar, &constants, gold, s_t)?;
            prev_action = self.action_repr(tape, gold, &mut cache, &constants)?;
        }
        if !state.is_complete() {
            return Err(Error::IncompleteDerivation(state.frontier().len()));
        }
        if terms.is_empty() {
            return Err(Error::IncompleteDerivation(1));
        }
        let total = tape.add_n(&terms);
        Ok(tape.scale(total, -1.0))
    }

    /// Negative log-likelihood of the gold derivation.
    pub fn loss(&self, params: &ModelParams, example: &Example) -> Result<f64> {
        let mut tape = Tape::new(params);
        let loss = self.build_loss::<ChaCha8Rng>(&mut tape, example, None)?;
        tape.check_finite()?;
        Ok(tape.scalar(loss))
    }

    pub fn loss_and_grad(
        &self,
        params: &ModelParams,
        example: &Example,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new(params);
        let loss = self.build_loss(&mut tape, example, rng)?;
        let grads = tape.backward(loss)?;
        Ok((tape.scalar(loss), grads))
    }

    /// Mean loss and gradient over a batch.
    pub fn batch_loss_and_grad(
        &self,
        params: &ModelParams,
        batch: &[&Example],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut total = params.zero_grads();
        let mut loss = 0.0;
        let w = 1.0 / batch.len() as f64;
        for ex in batch {
            let (l, g) = self.loss_and_grad(params, ex, rng.as_deref_mut())?;
            loss += w * l;
            total.axpy(w, &g)?;
        }
        Ok((loss, total))
    }

    /// Greedy decoding restricted to legitimate actions. Ties go to the
    /// lowest action id. Rollouts that do not finish within `max_actions`,
    /// or reach a category with no constants, are marked failed.
    pub fn parse_greedy(
        &self,
        params: &ModelParams,
        example: &Example,
        max_actions: usize,
    ) -> Result<ParseResult> {
        let constants = example.constants(&self.grammar);
        let mut cache = ConstantCache::new(&self.grammar);
        let mut tape = Tape::new(params);
        let mut state = DerivationState::<NodeId>::new(&self.grammar);
        let mut dec = self.encode::<ChaCha8Rng>(&mut tape, &example.nl, None)?;
        let mut prev_action = tape.param(self.ids.start_prev);
        let mut actions = Vec::new();
        let mut step_probs = Vec::new();
        let failed = |actions, step_probs| ParseResult {
            status: ParseStatus::Failed,
            actions,
            tokens: Vec::new(),
            step_probs,
        };
        while !state.is_complete() {
            if actions.len() >= max_actions {
                return Ok(failed(actions, step_probs));
            }
            let entry = state.top().expect("not complete").clone();
            dec = self
                .decoder_step::<ChaCha8Rng>(&mut tape, dec, &entry, prev_action, None)?
                .state;
            let s_t = dec.h;
            let legal = state.legitimate_actions(&self.grammar, &constants)?;
            if legal.is_empty() {
                return Ok(failed(actions, step_probs));
            }
            let (choice, prob) = match legal[0] {
                Action::Apply(_) => {
                    let probs = self.action_distribution(&mut tape, s_t, &legal)?;
                    let p = tape.value(probs).data();
                    argmax(legal.iter().map(|a| match a {
                        Action::Apply(r) => (*a, p[*r]),
                        _ => unreachable!("rules and constants never mix"),
                    }))
                }
                Action::Instantiate { category, .. } => {
                    let vs = cache.get(self, &mut tape, &constants, category)?.to_vec();
                    let probs = self.instantiate_distribution(&mut tape, s_t, &vs)?;
                    let p = tape.value(probs).data().to_vec();
                    argmax(legal.iter().zip(p).map(|(a, q)| (*a, q)))
                }
            };
            tape.check_finite()?;
            state.apply(&self.grammar, &constants, choice, s_t)?;
            prev_action = self.action_repr(&mut tape, choice, &mut cache, &constants)?;
            actions.push(choice);
            step_probs.push(prob);
        }
        let tokens = state.ast(&self.grammar, &constants)?.tokens();
        Ok(ParseResult {
            status: ParseStatus::Ok,
            actions,
            tokens,
            step_probs,
        })
    }
}

fn argmax(items: impl Iterator<Item = (Action, f64)>) -> (Action, f64) {
    let mut best: Option<(Action, f64)> = None;
    for (a, p) in items {
        match best {
            Some((_, bp)) if p <= bp => {}
            _ => best = Some((a, p)),
        }
    }
    best.expect("non-empty candidate set")
}

/// Per-example constant encodings, computed on first use.
struct ConstantCache {
    by_category: Vec<Option<Vec<NodeId>>>,
}

impl ConstantCache {
    fn new(grammar: &Grammar) -> Self {
        Self {
            by_category: vec![None; grammar.categories().len()],
        }
    }

    fn get(
        &mut self,
        parser: &Parser,
        tape: &mut Tape<'_>,
        constants: &ContextConstants,
        category: usize,
    ) -> Result<&[NodeId]> {
        if self.by_category[category].is_none() {
            let names = constants.get(category);
            if names.is_empty() {
                return Err(Error::NoConstants(
                    parser.grammar.categories()[category].name.clone(),
                ));
            }
            let encoded = names
                .iter()
                .map(|n| parser.encode_constant(tape, n))
                .collect::<Result<Vec<_>>>()?;
            self.by_category[category] = Some(encoded);
        }
        Ok(self.by_category[category].as_deref().expect("filled above"))
    }
}
