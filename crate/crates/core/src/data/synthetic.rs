//! Synthetic context-dependent parsing tasks.
//!
//! Java tasks pair a command with a class environment. For ambiguous
//! commands such as "increment the raw scores" the gold program depends on
//! whether the class offers a suitable method (`this . add ( ) ;`) or only
//! the array itself (a loop). Dialog tasks resolve pronouns against the
//! previous question, and ambiguous questions depend on the kind of entity
//! mentioned there.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ContextEnv, Example, Member};
use crate::error::{Error, Result};
use crate::grammar::{actions_to_ast, Action, Grammar};

pub const JAVA_GRAMMAR: &str = include_str!("../../grammars/java.grammar");
/// Tag carried by generated examples whose program depends on the context.
pub const AMBIGUOUS_TAG: &str = "ambiguous";
pub const DIALOG_GRAMMAR: &str = include_str!("../../grammars/dialog.grammar");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticGrammar {
    Java,
    Dialog,
}

impl SyntheticGrammar {
    pub fn text(self) -> &'static str {
        match self {
            SyntheticGrammar::Java => JAVA_GRAMMAR,
            SyntheticGrammar::Dialog => DIALOG_GRAMMAR,
        }
    }

    pub fn grammar(self) -> Grammar {
        Grammar::parse(self.text()).expect("bundled grammar is valid")
    }

    pub fn file_name(self) -> &'static str {
        match self {
            SyntheticGrammar::Java => "java.grammar",
            SyntheticGrammar::Dialog => "dialog.grammar",
        }
    }
}

impl std::str::FromStr for SyntheticGrammar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "java" => Ok(SyntheticGrammar::Java),
            "dialog" => Ok(SyntheticGrammar::Dialog),
            _ => Err(Error::Config(format!("unknown synthetic grammar `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTaskConfig {
    pub grammar: SyntheticGrammar,
    /// Number of distinct distractor members (methods, or entities for
    /// dialogs) contexts are drawn from.
    pub context_patterns: usize,
    pub examples: usize,
    /// Fraction of examples whose gold program depends on the context.
    pub ambiguity: f64,
    pub seed: u64,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        Self {
            grammar: SyntheticGrammar::Java,
            context_patterns: 8,
            examples: 100,
            ambiguity: 0.5,
            seed: 0,
        }
    }
}

const SCALAR_PREFIXES: &[&str] = &["total", "max", "last", "user", "page", "next"];
const SCALAR_NOUNS: &[&str] = &[
    "count", "speed", "price", "weight", "level", "offset", "width", "limit",
];
const ARRAY_PREFIXES: &[&str] = &["raw", "old", "all", "vec", "tmp", "cached"];
const ARRAY_NOUNS: &[&str] = &[
    "scores", "items", "values", "weights", "entries", "nodes", "elements", "prices",
];
const DISTRACTOR_METHODS: &[(&str, &str)] = &[
    ("reset", "void"),
    ("update", "void"),
    ("render", "String"),
    ("validate", "boolean"),
    ("init", "void"),
    ("flush", "void"),
    ("sort", "void"),
    ("print", "void"),
    ("load", "boolean"),
    ("save", "boolean"),
    ("close", "void"),
    ("hash", "int"),
];
const COUNTRIES: &[&str] = &[
    "france", "spain", "italy", "germany", "norway", "chile", "peru", "kenya",
];
const ORGANIZATIONS: &[&str] = &[
    "nato", "fifa", "opec", "unesco", "asean", "mercosur", "interpol", "unicef",
];

// Rule ids of the bundled Java grammar, in file order.
const STMT_EXPR: usize = 0;
const STMT_RETURN: usize = 1;
const STMT_FOR: usize = 2;
const EXPR_CALL: usize = 3;
const EXPR_VAR: usize = 4;
const EXPR_INDEX: usize = 5;
const EXPR_LENGTH: usize = 6;
const EXPR_INC: usize = 7;
const EXPR_ASSIGN: usize = 8;
const EXPR_ZERO: usize = 9;
const EXPR_NULL: usize = 10;
const CAT_METHOD: usize = 0;
const CAT_VARIABLE: usize = 1;

// Rule ids of the bundled dialog grammar.
const Q_COUNT: usize = 0;
const Q_LIST: usize = 1;
const Q_EXISTS: usize = 2;
const SET_NEIGHBORS: usize = 3;
const SET_MEMBERS: usize = 4;
const SET_CAPITAL: usize = 5;
const CAT_ENTITY: usize = 0;

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn camel(prefix: &str, noun: &str) -> String {
    let mut c = noun.chars();
    let head = c.next().map(|h| h.to_ascii_uppercase()).unwrap_or_default();
    format!("{prefix}{head}{}", c.as_str())
}

fn method(m: usize) -> Action {
    Action::Instantiate {
        category: CAT_METHOD,
        constant: m,
    }
}

fn variable(v: usize) -> Action {
    Action::Instantiate {
        category: CAT_VARIABLE,
        constant: v,
    }
}

pub fn generate_synthetic(cfg: &SyntheticTaskConfig) -> Result<Vec<Example>> {
    if !(0.0..=1.0).contains(&cfg.ambiguity) {
        return Err(Error::Config(format!(
            "ambiguity rate {} outside [0, 1]",
            cfg.ambiguity
        )));
    }
    if cfg.examples == 0 {
        return Err(Error::Config(
            "synthetic dataset needs at least one example".into(),
        ));
    }
    let pool = match cfg.grammar {
        SyntheticGrammar::Java => DISTRACTOR_METHODS.len(),
        SyntheticGrammar::Dialog => COUNTRIES.len().min(ORGANIZATIONS.len()),
    };
    if cfg.context_patterns < 2 || cfg.context_patterns > pool {
        return Err(Error::Config(format!(
            "context_patterns must lie in 2..={pool} for this grammar, got {}",
            cfg.context_patterns
        )));
    }
    let grammar = cfg.grammar.grammar();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_ambiguous = (cfg.ambiguity * cfg.examples as f64).round() as usize;
    let mut flags: Vec<bool> = (0..cfg.examples).map(|i| i < n_ambiguous).collect();
    flags.shuffle(&mut rng);

    let mut out = Vec::with_capacity(cfg.examples);
    for (id, ambiguous) in flags.into_iter().enumerate() {
        let (nl, context, actions) = match cfg.grammar {
            SyntheticGrammar::Java => java_example(&mut rng, ambiguous, cfg.context_patterns),
            SyntheticGrammar::Dialog => dialog_example(&mut rng, ambiguous, cfg.context_patterns),
        };
        let constants = context.constants_for(&grammar);
        let surface = actions_to_ast(&grammar, &constants, &actions)?.tokens();
        out.push(Example {
            id,
            nl,
            context,
            actions,
            surface,
            tags: if ambiguous {
                vec![AMBIGUOUS_TAG.to_string()]
            } else {
                Vec::new()
            },
        });
    }
    Ok(out)
}

fn java_example(
    rng: &mut ChaCha8Rng,
    ambiguous: bool,
    patterns: usize,
) -> (Vec<String>, ContextEnv, Vec<Action>) {
    let scalar = |rng: &mut ChaCha8Rng| {
        let p = *SCALAR_PREFIXES.choose(rng).unwrap();
        let n = *SCALAR_NOUNS.choose(rng).unwrap();
        (camel(p, n), format!("{p} {n}"))
    };
    let array = |rng: &mut ChaCha8Rng| {
        let p = *ARRAY_PREFIXES.choose(rng).unwrap();
        let n = *ARRAY_NOUNS.choose(rng).unwrap();
        (camel(p, n), format!("{p} {n}"))
    };

    let intent = if ambiguous {
        3 + rng.random_range(0..3)
    } else {
        rng.random_range(0..3)
    };
    let (target, phrase) = if intent < 3 { scalar(rng) } else { array(rng) };
    let target_type = if intent < 3 {
        ["int", "long", "double"].choose(rng).unwrap().to_string()
    } else {
        ["int[]", "double[]"].choose(rng).unwrap().to_string()
    };

    let mut variables = vec![Member::new(target.clone(), target_type)];
    let extra = rng.random_range(1..=3);
    while variables.len() < 1 + extra {
        let ((name, words), ty) = if rng.random_bool(0.5) {
            (scalar(rng), "int")
        } else {
            (array(rng), "int[]")
        };
        // Distractors never share a word with the target.
        let overlaps = words.split(' ').any(|w| phrase.split(' ').any(|t| t == w));
        if !overlaps && variables.iter().all(|m| m.name != name) {
            variables.push(Member::new(name, ty));
        }
    }
    variables.shuffle(rng);

    // Method the ambiguous intent would call, and whether the class has it.
    let needed = match intent {
        3 => Some("add"),
        4 => Some("size"),
        5 => Some("clear"),
        _ => None,
    };
    let has_needed = needed.is_some() && rng.random_bool(0.5);
    let mut methods = Vec::new();
    for (name, ty) in [("add", "void"), ("size", "int"), ("clear", "void")] {
        let include = if Some(name) == needed {
            has_needed
        } else {
            rng.random_bool(0.5)
        };
        if include {
            methods.push(Member::new(name, ty));
        }
    }
    let distractors = rng.random_range(0..=2);
    for &(name, ty) in DISTRACTOR_METHODS[..patterns].choose_multiple(rng, distractors) {
        methods.push(Member::new(name, ty));
    }
    methods.shuffle(rng);

    let v = variables.iter().position(|m| m.name == target).unwrap();
    let m = needed.and_then(|n| methods.iter().position(|x| x.name == n));
    let pick = |rng: &mut ChaCha8Rng, options: &[&str]| options.choose(rng).unwrap().to_string();
    let (verb, actions) = match intent {
        0 => (
            pick(rng, &["return the", "return"]),
            vec![
                Action::Apply(STMT_RETURN),
                Action::Apply(EXPR_VAR),
                variable(v),
            ],
        ),
        1 => (
            pick(rng, &["reset the", "zero the"]),
            vec![
                Action::Apply(STMT_EXPR),
                Action::Apply(EXPR_ASSIGN),
                Action::Apply(EXPR_VAR),
                variable(v),
                Action::Apply(EXPR_ZERO),
            ],
        ),
        2 => (
            pick(rng, &["bump the", "bump"]),
            vec![
                Action::Apply(STMT_EXPR),
                Action::Apply(EXPR_INC),
                Action::Apply(EXPR_VAR),
                variable(v),
            ],
        ),
        3 => (
            pick(rng, &["increment the", "increment all"]),
            match m {
                Some(m) => vec![
                    Action::Apply(STMT_EXPR),
                    Action::Apply(EXPR_CALL),
                    method(m),
                ],
                None => vec![
                    Action::Apply(STMT_FOR),
                    Action::Apply(EXPR_LENGTH),
                    variable(v),
                    Action::Apply(STMT_EXPR),
                    Action::Apply(EXPR_INC),
                    Action::Apply(EXPR_INDEX),
                    variable(v),
                ],
            },
        ),
        4 => (
            pick(rng, &["get the size of", "count the"]),
            match m {
                Some(m) => vec![
                    Action::Apply(STMT_RETURN),
                    Action::Apply(EXPR_CALL),
                    method(m),
                ],
                None => vec![
                    Action::Apply(STMT_RETURN),
                    Action::Apply(EXPR_LENGTH),
                    variable(v),
                ],
            },
        ),
        _ => (
            pick(rng, &["empty the", "clear the"]),
            match m {
                Some(m) => vec![
                    Action::Apply(STMT_EXPR),
                    Action::Apply(EXPR_CALL),
                    method(m),
                ],
                None => vec![
                    Action::Apply(STMT_EXPR),
                    Action::Apply(EXPR_ASSIGN),
                    Action::Apply(EXPR_VAR),
                    variable(v),
                    Action::Apply(EXPR_NULL),
                ],
            },
        ),
    };
    let nl = words(&format!("{verb} {phrase}"));
    (nl, ContextEnv::Class { variables, methods }, actions)
}

fn dialog_example(
    rng: &mut ChaCha8Rng,
    ambiguous: bool,
    patterns: usize,
) -> (Vec<String>, ContextEnv, Vec<Action>) {
    let is_country = rng.random_bool(0.5);
    let pool = if is_country { COUNTRIES } else { ORGANIZATIONS };
    let entity = pool[..patterns].choose(rng).unwrap().to_string();
    let mut history = Vec::new();
    if rng.random_bool(0.5) {
        let other_pool = if rng.random_bool(0.5) {
            COUNTRIES
        } else {
            ORGANIZATIONS
        };
        let others: Vec<&str> = other_pool[..patterns]
            .iter()
            .copied()
            .filter(|e| *e != entity)
            .collect();
        let other = others.choose(rng).unwrap();
        history.push(words(&format!("where is {other}")));
    }
    let opener = ["tell me about", "what is"].choose(rng).unwrap();
    history.push(words(&format!("{opener} {entity}")));
    let context = ContextEnv::Dialog { history };
    let k = context
        .constants(crate::grammar::ConstantSource::HistoryEntities)
        .iter()
        .position(|t| *t == entity)
        .unwrap();
    let ent = Action::Instantiate {
        category: CAT_ENTITY,
        constant: k,
    };
    let natural = if is_country {
        SET_NEIGHBORS
    } else {
        SET_MEMBERS
    };
    let (question, query, set) = if ambiguous {
        match rng.random_range(0..2) {
            0 => ("how many are there", Q_COUNT, natural),
            _ => ("list them", Q_LIST, natural),
        }
    } else {
        match rng.random_range(0..3) {
            0 => ("list the neighbors of it", Q_LIST, SET_NEIGHBORS),
            1 => ("does it have a capital", Q_EXISTS, SET_CAPITAL),
            _ => ("how many members does it have", Q_COUNT, SET_MEMBERS),
        }
    };
    let actions = vec![Action::Apply(query), Action::Apply(set), ent];
    (words(question), context, actions)
}
