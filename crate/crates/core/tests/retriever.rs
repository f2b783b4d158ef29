use ctxparse::data::{
    generate_synthetic, ContextEnv, Example, SyntheticGrammar, SyntheticTaskConfig,
};
use ctxparse::numerics::{ModelParams, Tape, NORMALIZE_EPS};
use ctxparse::retriever::{
    retriever_vocab, train_retriever, DistanceMode, RetrievalIndex, Retriever, RetrieverConfig,
    RetrieverTrainConfig,
};
use ctxparse::vmf::latent_distance;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn data(grammar: SyntheticGrammar, n: usize, seed: u64) -> Vec<Example> {
    generate_synthetic(&SyntheticTaskConfig {
        grammar,
        context_patterns: 4,
        examples: n,
        ambiguity: 0.5,
        seed,
    })
    .unwrap()
}

fn small_config() -> RetrieverConfig {
    RetrieverConfig {
        word_dim: 8,
        hidden: 6,
        encoder_layers: 1,
        latent: 5,
        kappa: 20.0,
        decoder_layers: 2,
        decoder_hidden: 8,
        dropout: 0.0,
    }
}

fn model(examples: &[Example], config: RetrieverConfig, seed: u64) -> (Retriever, ModelParams) {
    Retriever::new(
        retriever_vocab(examples),
        config,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap()
}

fn values(tape: &Tape<'_>, id: ctxparse::numerics::NodeId) -> Vec<f64> {
    tape.value(id).data().to_vec()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn class_context_is_the_mean_of_member_vectors() {
    let examples = data(SyntheticGrammar::Java, 5, 1);
    let (r, params) = model(&examples, small_config(), 2);
    for ex in &examples {
        let ContextEnv::Class { variables, methods } = &ex.context else {
            unreachable!()
        };
        let mut tape = Tape::new(&params);
        let got = r.encode_context(&mut tape, &ex.context, None).unwrap();
        let got = values(&tape, got);
        let members: Vec<Vec<f64>> = variables
            .iter()
            .chain(methods)
            .map(|m| {
                let mut t = Tape::new(&params);
                let v = r
                    .encode_member(&mut t, &m.name, &m.type_name, None)
                    .unwrap();
                values(&t, v)
            })
            .collect();
        let n = members.len() as f64;
        let mean: Vec<f64> = (0..got.len())
            .map(|i| members.iter().map(|m| m[i]).sum::<f64>() / n)
            .collect();
        assert!(close(&got, &mean, 1e-14));
    }
}

#[test]
fn empty_contexts_encode_to_zero() {
    let examples = data(SyntheticGrammar::Dialog, 3, 3);
    let (r, params) = model(&examples, small_config(), 4);
    let mut tape = Tape::new(&params);
    for ctx in [
        ContextEnv::Dialog { history: vec![] },
        ContextEnv::Dialog {
            history: vec![vec![]],
        },
        ContextEnv::Class {
            variables: vec![],
            methods: vec![],
        },
    ] {
        let v = r.encode_context(&mut tape, &ctx, None).unwrap();
        assert_eq!(values(&tape, v), vec![0.0; 12]);
    }
}

#[test]
fn dialog_context_ignores_empty_questions() {
    let examples = data(SyntheticGrammar::Dialog, 3, 5);
    let (r, params) = model(&examples, small_config(), 6);
    let q: Vec<String> = examples[0].nl.clone();
    let mut tape = Tape::new(&params);
    let a = r
        .encode_context(
            &mut tape,
            &ContextEnv::Dialog {
                history: vec![q.clone()],
            },
            None,
        )
        .unwrap();
    let b = r
        .encode_context(
            &mut tape,
            &ContextEnv::Dialog {
                history: vec![vec![], q.clone(), vec![]],
            },
            None,
        )
        .unwrap();
    assert!(close(&values(&tape, a), &values(&tape, b), 0.0));
}

#[test]
fn latent_directions_match_hand_computed_heads() {
    let examples = data(SyntheticGrammar::Java, 4, 7);
    let (r, params) = model(&examples, small_config(), 8);
    let head = |h: &[f64], prefix: &str| -> Vec<f64> {
        let w = params.get(params.require(&format!("{prefix}.w")).unwrap());
        let b = params.get(params.require(&format!("{prefix}.b")).unwrap());
        let cols = w.shape()[1];
        let act: Vec<f64> = (0..w.shape()[0])
            .map(|i| {
                let pre: f64 = (0..cols)
                    .map(|j| w.data()[i * cols + j] * h[j])
                    .sum::<f64>()
                    + b.data()[i];
                pre.tanh()
            })
            .collect();
        let n = act.iter().map(|a| a * a).sum::<f64>().sqrt() + NORMALIZE_EPS;
        act.iter().map(|a| a / n).collect()
    };
    for ex in &examples {
        let mut tape = Tape::new(&params);
        let hx = r.encode_utterance(&mut tape, &ex.nl, None).unwrap();
        let hc = r.encode_context(&mut tape, &ex.context, None).unwrap();
        let (hx, hc) = (values(&tape, hx), values(&tape, hc));
        let code = r.latent_code(&params, ex).unwrap();
        assert!(close(&code.mu_x, &head(&hx, "head_x"), 1e-13));
        assert!(close(&code.mu_c, &head(&hc, "head_c"), 1e-13));
        assert_eq!(code.kappa, 20.0);
    }
}

#[test]
fn untrained_loss_is_near_uniform() {
    let examples = data(SyntheticGrammar::Java, 6, 9);
    let (r, params) = model(&examples, small_config(), 10);
    let nll = r.token_nll(&params, &examples).unwrap();
    let uniform = (r.vocab.len() as f64).ln();
    assert!((nll - uniform).abs() < 0.1, "{nll} vs {uniform}");
}

#[test]
fn index_queries_match_brute_force_ranking() {
    let examples = data(SyntheticGrammar::Java, 40, 11);
    let (r, params) = model(&examples, small_config(), 12);
    let index = RetrievalIndex::build(&r, &params, &examples).unwrap();
    let codes: Vec<_> = examples
        .iter()
        .map(|e| r.latent_code(&params, e).unwrap())
        .collect();
    for (q, code) in codes.iter().enumerate().step_by(7) {
        let mut brute: Vec<(usize, f64)> = codes
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != q)
            .map(|(i, c)| (examples[i].id, latent_distance(code, c).unwrap()))
            .collect();
        brute.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let got = index
            .query(code, 5, Some(examples[q].id), DistanceMode::ContextAware)
            .unwrap();
        assert_eq!(got.len(), 5);
        for (g, b) in got.iter().zip(&brute) {
            assert_eq!(g.0, b.0);
            assert!((g.1 - b.1).abs() <= 1e-12 * b.1.max(1.0));
        }
    }
}

#[test]
fn index_save_load_round_trip() {
    let examples = data(SyntheticGrammar::Dialog, 12, 13);
    let (r, params) = model(&examples, small_config(), 14);
    let index = RetrievalIndex::build(&r, &params, &examples).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("index");
    index.save(&stem).unwrap();
    assert_eq!(RetrievalIndex::load(&stem).unwrap(), index);
    std::fs::write(stem.with_extension("bin"), [0u8; 16]).unwrap();
    assert!(RetrievalIndex::load(&stem).is_err());
}

#[test]
fn memorizes_twenty_examples() {
    let examples = data(SyntheticGrammar::Java, 20, 15);
    let config = RetrieverConfig {
        word_dim: 16,
        hidden: 16,
        encoder_layers: 1,
        latent: 8,
        kappa: 50.0,
        decoder_layers: 1,
        decoder_hidden: 32,
        dropout: 0.0,
    };
    let (r, init) = model(&examples, config, 16);
    let cfg = RetrieverTrainConfig {
        epochs: 200,
        lr: 0.01,
        batch_size: 5,
        dev_fraction: 0.0,
        patience: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (params, stats) =
        train_retriever(&r, init, &examples, &cfg, &mut rng, &mut |_| {}).unwrap();
    assert_eq!(stats.len(), 200);
    let nll = r.token_nll(&params, &examples).unwrap();
    assert!(nll < 0.1, "token nll {nll}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn codes_are_unit_directions(seed in 0u64..1000) {
        let examples = data(SyntheticGrammar::Java, 3, seed);
        let (r, params) = model(&examples, small_config(), seed + 1);
        for ex in &examples {
            let code = r.latent_code(&params, ex).unwrap();
            for half in [&code.mu_x, &code.mu_c] {
                let n: f64 = half.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((n - 1.0).abs() < 1e-8, "norm {}", n);
            }
        }
    }
}
