//! Finite-difference cases for every differentiable operation.

use ctxparse::data::{generate_synthetic, Example, SyntheticGrammar, SyntheticTaskConfig};
use ctxparse::numerics::{ModelParams, Tape};
use ctxparse::parser::{parser_vocab, Parser, ParserConfig};
use ctxparse::retriever::{retriever_vocab, Retriever, RetrieverConfig};
use ctxparse::rnn::{
    bilstm_encode, lstm_cell, stacked_lstm_step, BiLstm, LstmCellParams, LstmState,
};
use ctxparse::vmf::vmf_sample_node;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fd_max_error, project, random_tensor, random_vec};

pub type Case = fn(u64) -> f64;

/// Redraws every parameter from a wider range than the default init so
/// the nonlinearities leave their linear regime.
fn widen(params: &mut ModelParams, rng: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let shape = params.get(id).shape().to_vec();
        *params.get_mut(id) = random_tensor(rng, &shape, scale);
    }
}

fn inputs(rng: &mut ChaCha8Rng, shapes: &[&[usize]]) -> ModelParams {
    let mut p = ModelParams::new();
    for (i, s) in shapes.iter().enumerate() {
        p.insert(format!("x{i}"), random_tensor(rng, s, 1.0));
    }
    p
}

fn unary(
    seed: u64,
    n: usize,
    op: fn(&mut Tape<'_>, ctxparse::numerics::NodeId) -> ctxparse::numerics::NodeId,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = inputs(&mut rng, &[&[n]]);
    fd_max_error(&p, None, |t| {
        let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 0x11);
        let x = t.param(p.id("x0").unwrap());
        let y = op(t, x);
        Ok(project(t, y, &mut prng))
    })
}

fn binary(
    seed: u64,
    op: fn(
        &mut Tape<'_>,
        ctxparse::numerics::NodeId,
        ctxparse::numerics::NodeId,
    ) -> ctxparse::numerics::NodeId,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..6);
    let p = inputs(&mut rng, &[&[n], &[n]]);
    let w = random_vec(&mut rng, n);
    fd_max_error(&p, None, |t| {
        let a = t.param(p.id("x0").unwrap());
        let b = t.param(p.id("x1").unwrap());
        let y = op(t, a, b);
        let w = t.vector(w.clone());
        Ok(t.dot(y, w))
    })
}

fn matvec(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
    let p = inputs(&mut rng, &[&[r, c], &[c]]);
    let w = random_vec(&mut rng, r);
    fd_max_error(&p, None, |t| {
        let m = t.param(p.id("x0").unwrap());
        let x = t.param(p.id("x1").unwrap());
        let y = t.matvec(m, x);
        let w = t.vector(w.clone());
        Ok(t.dot(y, w))
    })
}

fn affine(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c) = (rng.random_range(1..5), rng.random_range(1..5));
    let p = inputs(&mut rng, &[&[r, c], &[c], &[r]]);
    let w = random_vec(&mut rng, r);
    fd_max_error(&p, None, |t| {
        let m = t.param(p.id("x0").unwrap());
        let x = t.param(p.id("x1").unwrap());
        let b = t.param(p.id("x2").unwrap());
        let y = t.affine(m, x, b);
        let w = t.vector(w.clone());
        Ok(t.dot(y, w))
    })
}

fn scale(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = rng.random_range(-3.0..3.0);
    let p = inputs(&mut rng, &[&[4]]);
    let w = random_vec(&mut rng, 4);
    fd_max_error(&p, None, |t| {
        let x = t.param(p.id("x0").unwrap());
        let y = t.scale(x, f);
        let w = t.vector(w.clone());
        Ok(t.dot(y, w))
    })
}

fn mul_const(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = random_vec(&mut rng, 5);
    let p = inputs(&mut rng, &[&[5]]);
    let w = random_vec(&mut rng, 5);
    fd_max_error(&p, None, |t| {
        let x = t.param(p.id("x0").unwrap());
        let y = t.mul_const(x, f.clone());
        let w = t.vector(w.clone());
        Ok(t.dot(y, w))
    })
}

fn add_n_and_mean(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = inputs(&mut rng, &[&[3], &[3], &[3]]);
    let w = random_vec(&mut rng, 3);
    fd_max_error(&p, None, |t| {
        let xs: Vec<_> = (0..3)
            .map(|i| t.param(p.id(&format!("x{i}")).unwrap()))
            .collect();
        let s = t.add_n(&xs);
        let m = t.mean(&xs);
        let w = t.vector(w.clone());
        let a = t.dot(s, w);
        let prod = t.mul(m, m);
        let b = t.sum(prod);
        Ok(t.add(a, b))
    })
}

fn concat_slice(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = inputs(&mut rng, &[&[2], &[3], &[4]]);
    let w = random_vec(&mut rng, 5);
    fd_max_error(&p, None, |t| {
        let xs: Vec<_> = (0..3)
            .map(|i| t.param(p.id(&format!("x{i}")).unwrap()))
            .collect();
        let c = t.concat(&xs);
        let s = t.slice(c, 3, 5);
        let s = t.tanh(s);
        let w = t.vector(w.clone());
        Ok(t.dot(s, w))
    })
}

fn dot(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = inputs(&mut rng, &[&[6], &[6]]);
    fd_max_error(&p, None, |t| {
        let a = t.param(p.id("x0").unwrap());
        let b = t.param(p.id("x1").unwrap());
        let d = t.dot(a, b);
        let d2 = t.mul(d, d);
        Ok(t.add(d, d2))
    })
}

fn softmax_masked(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..7);
    let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
    mask[0] = true;
    let p = inputs(&mut rng, &[&[n]]);
    let w = random_vec(&mut rng, n);
    fd_max_error(&p, None, |t| {
        let x = t.param(p.id("x0").unwrap());
        let y = t.softmax_masked(x, &mask)?;
        let w = t.vector(w.clone());
        Ok(t.dot(y, w))
    })
}

fn log_prob_masked(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..7);
    let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
    let target = rng.random_range(0..n);
    mask[target] = true;
    let p = inputs(&mut rng, &[&[n]]);
    fd_max_error(&p, None, |t| {
        let x = t.param(p.id("x0").unwrap());
        t.log_prob_masked(x, &mask, target)
    })
}

fn householder(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(3..7);
    let p = inputs(&mut rng, &[&[d]]);
    let frame = random_vec(&mut rng, d);
    let w = random_vec(&mut rng, d);
    fd_max_error(&p, None, |t| {
        let x = t.param(p.id("x0").unwrap());
        let mu = t.l2_normalize(x);
        let y = t.householder(mu, frame.clone());
        let w = t.vector(w.clone());
        Ok(t.dot(y, w))
    })
}

fn embedding(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = inputs(&mut rng, &[&[5, 3]]);
    let rows: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
    let w = random_vec(&mut rng, 3);
    fd_max_error(&p, None, |t| {
        let id = p.id("x0").unwrap();
        let es: Vec<_> = rows.iter().map(|&r| t.embedding(id, r)).collect();
        let s = t.add_n(&es);
        let s = t.tanh(s);
        let w = t.vector(w.clone());
        Ok(t.dot(s, w))
    })
}

fn dropout(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = inputs(&mut rng, &[&[8]]);
    let w = random_vec(&mut rng, 8);
    fd_max_error(&p, None, |t| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd0);
        let x = t.param(p.id("x0").unwrap());
        let y = t.dropout(x, 0.4, &mut mask_rng);
        let y = t.sigmoid(y);
        let w = t.vector(w.clone());
        Ok(t.dot(y, w))
    })
}

fn lstm(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::new();
    let layers = vec![
        LstmCellParams::init(&mut p, "l0", 3, 4, &mut rng),
        LstmCellParams::init(&mut p, "l1", 4, 4, &mut rng),
    ];
    p.insert("x", random_tensor(&mut rng, &[3], 1.0));
    p.insert("h", random_tensor(&mut rng, &[4], 1.0));
    p.insert("c", random_tensor(&mut rng, &[4], 1.0));
    widen(&mut p, &mut rng, 0.7);
    let mut proj_seed = seed;
    proj_seed ^= 0x5eed;
    fd_max_error(&p, None, |t| {
        let mut prng = ChaCha8Rng::seed_from_u64(proj_seed);
        let x = t.param(p.id("x").unwrap());
        let prev = LstmState {
            h: t.param(p.id("h").unwrap()),
            c: t.param(p.id("c").unwrap()),
        };
        let one = lstm_cell(t, x, prev, &layers[0])?;
        let (top, states) = stacked_lstm_step(t, &layers, x, &[prev, one])?;
        let a = project(t, top, &mut prng);
        let b = project(t, states[0].c, &mut prng);
        Ok(t.add(a, b))
    })
}

fn bilstm(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::new();
    let enc = BiLstm::init(&mut p, "enc", 3, 3, 2, &mut rng);
    for i in 0..3 {
        p.insert(format!("e{i}"), random_tensor(&mut rng, &[3], 1.0));
    }
    widen(&mut p, &mut rng, 0.6);
    fd_max_error(&p, None, |t| {
        let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1);
        let es: Vec<_> = (0..3)
            .map(|i| t.param(p.id(&format!("e{i}")).unwrap()))
            .collect();
        let out = bilstm_encode(t, &es, &enc)?;
        let ends = out.both_ends(t);
        let a = project(t, ends, &mut prng);
        let last = out.last_token();
        let b = project(t, last, &mut prng);
        Ok(t.add(a, b))
    })
}

fn vmf_reparam(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(3..8);
    let p = inputs(&mut rng, &[&[d]]);
    let w = random_vec(&mut rng, d);
    fd_max_error(&p, None, |t| {
        let mut srng = ChaCha8Rng::seed_from_u64(seed ^ 0x7f);
        let x = t.param(p.id("x0").unwrap());
        let mu = t.l2_normalize(x);
        let z = vmf_sample_node(t, mu, 20.0, &mut srng)?;
        let w = t.vector(w.clone());
        Ok(t.dot(z, w))
    })
}

fn java_examples(seed: u64, n: usize) -> Vec<Example> {
    generate_synthetic(&SyntheticTaskConfig {
        grammar: SyntheticGrammar::Java,
        context_patterns: 4,
        examples: n,
        ambiguity: 0.5,
        seed,
    })
    .unwrap()
}

pub fn tiny_parser_config(dropout: f64) -> ParserConfig {
    ParserConfig {
        word_dim: 4,
        encoder_hidden: 3,
        encoder_layers: 1,
        action_dim: 4,
        symbol_dim: 3,
        decoder_hidden: 4,
        dropout,
    }
}

fn parser_loss(seed: u64, dropout: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = java_examples(seed, 6);
    let grammar = SyntheticGrammar::Java.grammar();
    let vocab = parser_vocab(&grammar, &examples);
    let (parser, mut p) =
        Parser::new(grammar, vocab, tiny_parser_config(dropout), &mut rng).unwrap();
    widen(&mut p, &mut rng, 0.3);
    let ex = &examples[seed as usize % examples.len()];
    fd_max_error(&p, Some((300, &mut rng)), |t| {
        let mut drng = ChaCha8Rng::seed_from_u64(seed ^ 0xd7);
        parser.build_loss(t, ex, (dropout > 0.0).then_some(&mut drng))
    })
}

fn seq2action_loss(seed: u64) -> f64 {
    parser_loss(seed, 0.0)
}

fn seq2action_loss_dropout(seed: u64) -> f64 {
    parser_loss(seed, 0.3)
}

fn retriever_loss(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = java_examples(seed, 6);
    let cfg = RetrieverConfig {
        word_dim: 4,
        hidden: 3,
        encoder_layers: 1,
        latent: 3,
        kappa: 10.0,
        decoder_layers: 2,
        decoder_hidden: 3,
        dropout: 0.0,
    };
    let (model, mut p) = Retriever::new(retriever_vocab(&examples), cfg, &mut rng).unwrap();
    widen(&mut p, &mut rng, 0.3);
    let ex = &examples[seed as usize % examples.len()];
    fd_max_error(&p, Some((300, &mut rng)), |t| {
        let mut srng = ChaCha8Rng::seed_from_u64(seed ^ 0x3e);
        model.build_loss(t, ex, Some(&mut srng))
    })
}

pub fn cases() -> Vec<(&'static str, Case)> {
    vec![
        ("matvec", matvec),
        ("affine", affine),
        ("add", |s| binary(s, |t, a, b| t.add(a, b))),
        ("sub", |s| binary(s, |t, a, b| t.sub(a, b))),
        ("mul", |s| binary(s, |t, a, b| t.mul(a, b))),
        ("scale", scale),
        ("mul_const", mul_const),
        ("add_n+mean", add_n_and_mean),
        ("tanh", |s| unary(s, 5, |t, x| t.tanh(x))),
        ("sigmoid", |s| unary(s, 5, |t, x| t.sigmoid(x))),
        ("sum", |s| {
            unary(s, 4, |t, x| {
                let y = t.mul(x, x);
                let s = t.sum(y);
                t.concat(&[s, x])
            })
        }),
        ("l2_normalize", |s| unary(s, 4, |t, x| t.l2_normalize(x))),
        ("concat+slice", concat_slice),
        ("dot", dot),
        ("softmax_masked", softmax_masked),
        ("log_prob_masked", log_prob_masked),
        ("householder", householder),
        ("embedding", embedding),
        ("dropout", dropout),
        ("lstm", lstm),
        ("bilstm", bilstm),
        ("vmf_reparam", vmf_reparam),
        ("seq2action_loss", seq2action_loss),
        ("seq2action_loss+dropout", seq2action_loss_dropout),
        ("retriever_loss", retriever_loss),
    ]
}
