//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use ctxparse::data::{ContextEnv, Example, Member};
use ctxparse::grammar::{
    actions_to_ast, apply_action, enumerate_derivations, legitimate_actions, Action,
    ContextConstants, DerivationState, Grammar, SymbolKind, DEFAULT_ENUMERATION_BUDGET,
};
use ctxparse::numerics::{ModelParams, NodeId, Tape, Tensor};
use ctxparse::Result;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Step of the five-point central stencil; its O(h^4) truncation and
/// eps/h roundoff are both near 1e-12 at this size.
pub const FD_STEP: f64 = 1e-3;
/// Denominator floor for relative errors, so entries that are zero on both
/// sides compare on absolute error.
pub const FD_FLOOR: f64 = 1e-6;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

/// Largest relative error between the tape gradient of `loss` and
/// five-point central differences, over every scalar (or `coords` random scalars when given).
pub fn fd_max_error(
    params: &ModelParams,
    coords: Option<(usize, &mut ChaCha8Rng)>,
    loss: impl Fn(&mut Tape<'_>) -> Result<NodeId>,
) -> f64 {
    let grads = {
        let mut tape = Tape::new(params);
        let l = loss(&mut tape).unwrap();
        tape.backward(l).unwrap()
    };
    let eval = |p: &ModelParams| {
        let mut tape = Tape::new(p);
        let l = loss(&mut tape).unwrap();
        tape.scalar(l)
    };
    let mut slots: Vec<(usize, usize)> = Vec::new();
    for (id, _, t) in params.iter() {
        for j in 0..t.len() {
            slots.push((id.index(), j));
        }
    }
    if let Some((n, rng)) = coords {
        if n < slots.len() {
            let picked = sample(rng, slots.len(), n);
            slots = picked.iter().map(|i| slots[i]).collect();
        }
    }
    let ids: Vec<_> = params.ids().collect();
    let mut worst: f64 = 0.0;
    let mut p = params.clone();
    for (pi, j) in slots {
        let id = ids[pi];
        let orig = p.get(id).data()[j];
        let mut at = |offset: f64| {
            p.get_mut(id).data_mut()[j] = orig + offset;
            eval(&p)
        };
        let (u1, u2, d1, d2) = (
            at(FD_STEP),
            at(2.0 * FD_STEP),
            at(-FD_STEP),
            at(-2.0 * FD_STEP),
        );
        p.get_mut(id).data_mut()[j] = orig;
        let numeric = (8.0 * (u1 - d1) - (u2 - d2)) / (12.0 * FD_STEP);
        let analytic = grads.get(id).data()[j];
        let e = relative_error(analytic, numeric);
        if e > worst && std::env::var_os("FD_DEBUG").is_some() {
            eprintln!(
                "  {}[{j}] analytic {analytic:e} numeric {numeric:e}",
                params.name(id)
            );
        }
        worst = worst.max(e);
    }
    worst
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

pub fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Contracts a vector node to a scalar with fixed random weights.
pub fn project(tape: &mut Tape<'_>, x: NodeId, rng: &mut impl Rng) -> NodeId {
    let n = tape.value(x).len();
    let w = tape.vector(random_vec(rng, n));
    tape.dot(x, w)
}

/// Expression grammar with a category; eleven rules.
pub const TOY_EXPR: &str = "\
@category Var source=class_variables
@terminals + * ( ) num ; print skip
E -> E + T | T
T -> T * F | F
F -> ( E ) | Var | num
S -> E ;
S -> print ( E ) ;
S -> S S
S -> skip
@start S
";

/// Statement grammar mixing left and right recursion; ten rules.
pub const TOY_STMT: &str = "\
@category Method source=class_methods
@category Field source=class_variables
@terminals ; = if ( ) 0 .
Block -> Stmt | Stmt Block
Stmt -> Call ; | Field = Val ; | if ( Val ) Stmt
Call -> Method ( ) | Call . Method ( )
Val -> Field | 0 | Call
";

pub fn toy_constants(grammar: &Grammar) -> ContextConstants {
    let mut c = ContextConstants::empty(grammar);
    for (i, cat) in grammar.categories().iter().enumerate() {
        c.by_category[i] = (0..2)
            .map(|k| format!("{}{k}", cat.name.to_lowercase()))
            .collect();
    }
    c
}

/// Every action the grammar could name, legal or not.
pub fn all_actions(grammar: &Grammar, constants: &ContextConstants) -> Vec<Action> {
    let mut out: Vec<Action> = (0..grammar.num_rules()).map(Action::Apply).collect();
    for cat in 0..grammar.categories().len() {
        for constant in 0..constants.get(cat).len() {
            out.push(Action::Instantiate {
                category: cat,
                constant,
            });
        }
    }
    out
}

/// Filters every nameable action by the definition of legality: a rule
/// whose left side is the top frontier symbol, or a constant of the top
/// category.
pub fn brute_force_legal(
    grammar: &Grammar,
    constants: &ContextConstants,
    state: &DerivationState,
) -> Vec<Action> {
    let Some(top) = state.top() else {
        return Vec::new();
    };
    all_actions(grammar, constants)
        .into_iter()
        .filter(|a| match *a {
            Action::Apply(r) => grammar.rule(r).lhs == top.symbol,
            Action::Instantiate { category, .. } => {
                grammar.kind(top.symbol) == SymbolKind::Category(category)
            }
        })
        .collect()
}

/// Actions that `apply_action` accepts in `state`.
pub fn applicable(
    grammar: &Grammar,
    constants: &ContextConstants,
    state: &DerivationState,
) -> Vec<Action> {
    all_actions(grammar, constants)
        .into_iter()
        .filter(|&a| apply_action(grammar, constants, state, a, ()).is_ok())
        .collect()
}

#[derive(Debug, Default)]
pub struct OracleReport {
    pub states: usize,
    pub mismatches: usize,
    pub derivations: usize,
    pub round_trip_failures: usize,
    /// Complete sequences found by the independent search but not by
    /// `enumerate_derivations`, or the reverse.
    pub enumeration_diff: usize,
}

/// Walks every state reachable within `depth` actions comparing
/// `legitimate_actions` with both oracles, then checks the enumerator
/// against an independent depth-first search.
pub fn grammar_oracle(grammar: &Grammar, depth: usize) -> OracleReport {
    let constants = toy_constants(grammar);
    let mut report = OracleReport::default();
    let mut complete: Vec<Vec<Action>> = Vec::new();
    let mut stack = vec![(DerivationState::new(grammar), Vec::<Action>::new())];
    while let Some((state, prefix)) = stack.pop() {
        report.states += 1;
        if state.is_complete() {
            complete.push(prefix);
            continue;
        }
        let mut got = legitimate_actions(grammar, &state, &constants).unwrap();
        got.sort();
        let mut oracle = brute_force_legal(grammar, &constants, &state);
        oracle.sort();
        let mut trial = applicable(grammar, &constants, &state);
        trial.sort();
        if got != oracle || got != trial {
            report.mismatches += 1;
        }
        if prefix.len() == depth {
            continue;
        }
        for a in oracle {
            let next = apply_action(grammar, &constants, &state, a, ()).unwrap();
            let mut p = prefix.clone();
            p.push(a);
            stack.push((next, p));
        }
    }
    let mut listed =
        enumerate_derivations(grammar, &constants, depth, DEFAULT_ENUMERATION_BUDGET).unwrap();
    report.derivations = listed.len();
    for seq in &listed {
        match actions_to_ast(grammar, &constants, seq) {
            Ok(ast) if ast.to_actions() == *seq => {}
            _ => report.round_trip_failures += 1,
        }
    }
    listed.sort();
    complete.sort();
    report.enumeration_diff = listed
        .iter()
        .filter(|s| complete.binary_search(s).is_err())
        .count()
        + complete
            .iter()
            .filter(|s| listed.binary_search(s).is_err())
            .count();
    report
}

pub fn replays(grammar: &Grammar, constants: &ContextConstants, actions: &[Action]) -> bool {
    actions_to_ast(grammar, constants, actions).is_ok()
}

pub fn class_example(
    id: usize,
    nl: &str,
    vars: &[&str],
    methods: &[&str],
    actions: Vec<Action>,
) -> Example {
    Example {
        id,
        nl: nl.split_whitespace().map(str::to_string).collect(),
        context: ContextEnv::Class {
            variables: vars.iter().map(|v| Member::new(*v, "int")).collect(),
            methods: methods.iter().map(|m| Member::new(*m, "void")).collect(),
        },
        actions,
        surface: Vec::new(),
        tags: Vec::new(),
    }
}

/// Fills in the surface tokens from the gold actions.
pub fn with_surface(grammar: &Grammar, mut ex: Example) -> Example {
    let ast = actions_to_ast(grammar, &ex.constants(grammar), &ex.actions).unwrap();
    ex.surface = ast.tokens();
    ex
}
/// `I_ν(κ) / I_{ν-1}(κ)` from the ascending series
/// `I_ν(κ) = (κ/2)^ν / Γ(ν+1) · Σ_m (κ²/4)^m / (m! (ν+1)_m)`, summed in log space.
pub fn series_ratio(nu: f64, kappa: f64) -> f64 {
    let log_sum = |order: f64| {
        let q = (kappa * kappa / 4.0).ln();
        let mut terms = vec![0.0];
        let mut log_t = 0.0;
        for m in 1..5000 {
            let m = m as f64;
            log_t += q - m.ln() - (order + m).ln();
            terms.push(log_t);
            if log_t < terms.iter().cloned().fold(f64::MIN, f64::max) - 60.0 {
                break;
            }
        }
        let top = terms.iter().cloned().fold(f64::MIN, f64::max);
        top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
    };
    (kappa / 2.0) / nu * (log_sum(nu) - log_sum(nu - 1.0)).exp()
}

pub mod grad;
pub mod meta;
pub mod metrics;
