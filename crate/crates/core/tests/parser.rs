mod common;

use common::grad::tiny_parser_config;
use common::{class_example, with_surface};
use ctxparse::data::{generate_synthetic, Example, SyntheticGrammar, SyntheticTaskConfig};
use ctxparse::grammar::{actions_to_ast, Action, DerivationState, Grammar};
use ctxparse::metalearn::{train_plain, TrainConfig};
use ctxparse::numerics::{ModelParams, Tape};
use ctxparse::parser::{parser_vocab, ParseStatus, Parser, ParserConfig};
use ctxparse::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn java(seed: u64, n: usize) -> Vec<Example> {
    generate_synthetic(&SyntheticTaskConfig {
        grammar: SyntheticGrammar::Java,
        context_patterns: 4,
        examples: n,
        ambiguity: 0.5,
        seed,
    })
    .unwrap()
}

fn build(examples: &[Example], config: ParserConfig, seed: u64) -> (Parser, ModelParams) {
    let grammar = SyntheticGrammar::Java.grammar();
    let vocab = parser_vocab(&grammar, examples);
    Parser::new(grammar, vocab, config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn softmax_over(logits: &[f64], keep: &[usize]) -> Vec<f64> {
    let top = keep.iter().map(|&i| logits[i]).fold(f64::MIN, f64::max);
    let z: f64 = keep.iter().map(|&i| (logits[i] - top).exp()).sum();
    keep.iter().map(|&i| (logits[i] - top).exp() / z).collect()
}

#[test]
fn loss_equals_sum_of_greedy_step_log_probs() {
    let examples = java(1, 8);
    let (parser, params) = build(&examples, tiny_parser_config(0.0), 3);
    for ex in &examples {
        let r = parser.parse_greedy(&params, ex, 50).unwrap();
        if r.status != ParseStatus::Ok {
            continue;
        }
        let mut replay = ex.clone();
        replay.actions = r.actions.clone();
        let want: f64 = r.step_probs.iter().map(|p| -p.ln()).sum();
        let got = parser.loss(&params, &replay).unwrap();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        assert!(got >= 0.0);
    }
}

#[test]
fn first_step_distribution_renormalizes_rule_scores() {
    let examples = java(2, 3);
    let (parser, params) = build(&examples, tiny_parser_config(0.0), 5);
    let ex = &examples[0];
    let grammar = &parser.grammar;
    let mut tape = Tape::new(&params);
    let init = parser
        .encode::<ChaCha8Rng>(&mut tape, &ex.nl, None)
        .unwrap();
    let state = DerivationState::<ctxparse::numerics::NodeId>::new(grammar);
    let constants = ex.constants(grammar);
    let legal = state.legitimate_actions(grammar, &constants).unwrap();
    let entry = state.top().unwrap().clone();
    let prev = tape.param(params.require("start.prev").unwrap());
    let step = parser
        .decoder_step::<ChaCha8Rng>(&mut tape, init, &entry, prev, None)
        .unwrap();
    let logits = parser.rule_logits(&mut tape, step.state.h);
    let logits = tape.value(logits).data().to_vec();
    let dist = parser
        .action_distribution(&mut tape, step.state.h, &legal)
        .unwrap();
    let dist = tape.value(dist).data().to_vec();
    let keep: Vec<usize> = legal
        .iter()
        .map(|a| match a {
            Action::Apply(r) => *r,
            _ => unreachable!(),
        })
        .collect();
    let oracle = softmax_over(&logits, &keep);
    for (i, r) in keep.iter().enumerate() {
        assert!((dist[*r] - oracle[i]).abs() < 1e-14);
    }
    let masked: f64 = (0..grammar.num_rules())
        .filter(|r| !keep.contains(r))
        .map(|r| dist[r])
        .sum();
    assert_eq!(masked, 0.0);
    let greedy_first = parser.parse_greedy(&params, ex, 50).unwrap();
    let best = keep
        .iter()
        .copied()
        .fold(keep[0], |b, k| if dist[k] > dist[b] { k } else { b });
    assert_eq!(greedy_first.actions[0], Action::Apply(best));
    let greedy_prob = greedy_first.step_probs[0];
    assert!((greedy_prob - dist[best]).abs() < 1e-14);
}

#[test]
fn constant_scores_match_manual_computation() {
    let examples = java(3, 2);
    let (parser, params) = build(&examples, tiny_parser_config(0.0), 7);
    let mut tape = Tape::new(&params);
    let names = ["pageLimit", "rawScores", "add"];
    let vs: Vec<_> = names
        .iter()
        .map(|n| parser.encode_constant(&mut tape, n).unwrap())
        .collect();
    let s = tape.vector(vec![0.3, -0.2, 0.5, 0.1]);
    let dist = parser.instantiate_distribution(&mut tape, s, &vs).unwrap();
    let dist = tape.value(dist).data().to_vec();
    let w = params.get(params.require("const_scorer").unwrap());
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    let sv = [0.3, -0.2, 0.5, 0.1];
    let q: Vec<f64> = (0..rows)
        .map(|i| {
            (0..cols)
                .map(|j| w.data()[i * cols + j] * sv[j])
                .sum::<f64>()
                .tanh()
        })
        .collect();
    let scores: Vec<f64> = vs
        .iter()
        .map(|&v| {
            tape.value(v)
                .data()
                .iter()
                .zip(&q)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect();
    let oracle = softmax_over(&scores, &[0, 1, 2]);
    for (a, b) in dist.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn greedy_parsing_is_deterministic() {
    let examples = java(4, 5);
    let (parser, params) = build(&examples, tiny_parser_config(0.0), 9);
    for ex in &examples {
        assert_eq!(
            parser.parse_greedy(&params, ex, 60).unwrap(),
            parser.parse_greedy(&params, ex, 60).unwrap()
        );
    }
}

#[test]
fn step_probabilities_beat_uniform() {
    let examples = java(5, 20);
    let (parser, params) = build(&examples, tiny_parser_config(0.0), 11);
    for ex in &examples {
        let r = parser.parse_greedy(&params, ex, 60).unwrap();
        let constants = ex.constants(&parser.grammar);
        let mut state = DerivationState::<()>::new(&parser.grammar);
        for (a, p) in r.actions.iter().zip(&r.step_probs) {
            let n = state
                .legitimate_actions(&parser.grammar, &constants)
                .unwrap()
                .len();
            assert!(*p >= 1.0 / n as f64 - 1e-12);
            state.apply(&parser.grammar, &constants, *a, ()).unwrap();
        }
    }
}

#[test]
fn random_rollouts_are_grammatical_or_failed() {
    let examples = java(6, 40);
    for seed in 0..25 {
        let (parser, params) = build(&examples, tiny_parser_config(0.0), 100 + seed);
        for ex in &examples {
            let r = parser.parse_greedy(&params, ex, 40).unwrap();
            if r.status == ParseStatus::Ok {
                let ast =
                    actions_to_ast(&parser.grammar, &ex.constants(&parser.grammar), &r.actions)
                        .unwrap();
                assert_eq!(ast.tokens(), r.tokens);
            } else {
                assert!(r.tokens.is_empty());
            }
        }
    }
}

#[test]
fn nonterminating_grammar_fails_at_the_cap() {
    let grammar = Grammar::parse("@terminals a\nS -> a S\n").unwrap();
    let ex = class_example(0, "go", &[], &[], vec![]);
    let vocab = parser_vocab(&grammar, std::slice::from_ref(&ex));
    let (parser, params) = Parser::new(
        grammar,
        vocab,
        tiny_parser_config(0.0),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    let r = parser.parse_greedy(&params, &ex, 12).unwrap();
    assert_eq!(r.status, ParseStatus::Failed);
    assert_eq!(r.actions.len(), 12);
}

#[test]
fn empty_utterance_is_rejected() {
    let examples = java(7, 2);
    let (parser, params) = build(&examples, tiny_parser_config(0.0), 1);
    let mut ex = examples[0].clone();
    ex.nl.clear();
    assert!(matches!(parser.loss(&params, &ex), Err(Error::Empty(_))));
}

#[test]
fn memorizes_ten_examples() {
    let grammar = SyntheticGrammar::Java.grammar();
    let examples: Vec<Example> = java(8, 10)
        .into_iter()
        .map(|e| with_surface(&grammar, e))
        .collect();
    let config = ParserConfig {
        word_dim: 16,
        encoder_hidden: 16,
        encoder_layers: 1,
        action_dim: 16,
        symbol_dim: 8,
        decoder_hidden: 24,
        dropout: 0.0,
    };
    let (parser, init) = build(&examples, config, 21);
    let cfg = TrainConfig {
        epochs: 120,
        lr: 0.01,
        batch_size: 5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let params = train_plain(&parser, init, &examples, &cfg, &mut rng, &mut |_| {}).unwrap();
    let correct = examples
        .iter()
        .filter(|ex| parser.parse_greedy(&params, ex, 60).unwrap().tokens == ex.surface)
        .count();
    assert_eq!(correct, examples.len());
}
