use std::fmt;
use std::str::FromStr;

use super::{ContextConstants, Grammar, SymbolId, SymbolKind};
use crate::error::{Error, Result};

pub const DEFAULT_ENUMERATION_BUDGET: usize = 1_000_000;

/// One decoding step: expand a nonterminal by a rule, or fill an
/// instantiable category with one of the example's constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Apply(usize),
    Instantiate { category: usize, constant: usize },
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Apply(r) => write!(f, "R{r}"),
            Action::Instantiate { category, constant } => write!(f, "I{category}:{constant}"),
        }
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("malformed action `{s}`"));
        if let Some(rest) = s.strip_prefix('R') {
            return rest.parse().map(Action::Apply).map_err(|_| bad());
        }
        if let Some(rest) = s.strip_prefix('I') {
            let (c, k) = rest.split_once(':').ok_or_else(bad)?;
            return Ok(Action::Instantiate {
                category: c.parse().map_err(|_| bad())?,
                constant: k.parse().map_err(|_| bad())?,
            });
        }
        Err(bad())
    }
}

impl serde::Serialize for Action {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Action {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// A pending symbol on the derivation frontier.
#[derive(Clone, Debug)]
pub struct FrontierEntry<H> {
    pub symbol: SymbolId,
    /// Action that introduced this symbol; `None` for the start symbol.
    pub parent: Option<Action>,
    /// Decoder state recorded when the parent action was taken.
    pub parent_state: Option<H>,
    node: usize,
}

#[derive(Clone, Debug)]
enum Slot {
    Pending,
    Rule { rule: usize, children: Vec<usize> },
    Terminal(SymbolId),
    Constant { category: usize, constant: usize },
}

/// A partially built leftmost derivation.
#[derive(Clone, Debug)]
pub struct DerivationState<H = ()> {
    stack: Vec<FrontierEntry<H>>,
    slots: Vec<Slot>,
    steps: usize,
}

impl<H: Clone> DerivationState<H> {
    pub fn new(grammar: &Grammar) -> Self {
        let start = grammar.start();
        Self {
            stack: vec![FrontierEntry {
                symbol: start,
                parent: None,
                parent_state: None,
                node: 0,
            }],
            slots: vec![Slot::Pending],
            steps: 0,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.stack.is_empty()
    }

    pub fn top(&self) -> Option<&FrontierEntry<H>> {
        self.stack.last()
    }

    /// Frontier from bottom to top; the last entry is expanded next.
    pub fn frontier(&self) -> &[FrontierEntry<H>] {
        &self.stack
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn legitimate_actions(
        &self,
        grammar: &Grammar,
        constants: &ContextConstants,
    ) -> Result<Vec<Action>> {
        let top = self.top().ok_or(Error::DerivationComplete)?;
        Ok(match grammar.kind(top.symbol) {
            SymbolKind::Nonterminal => grammar
                .rules_for(top.symbol)
                .iter()
                .map(|&r| Action::Apply(r))
                .collect(),
            SymbolKind::Category(c) => (0..constants.get(c).len())
                .map(|k| Action::Instantiate {
                    category: c,
                    constant: k,
                })
                .collect(),
            SymbolKind::Terminal => unreachable!("terminals never enter the frontier"),
        })
    }

    fn check(&self, grammar: &Grammar, constants: &ContextConstants, action: Action) -> Result<()> {
        let illegal = |reason: String| Error::IllegalAction {
            index: self.steps,
            reason,
        };
        let top = self.top().ok_or(Error::DerivationComplete)?;
        match action {
            Action::Apply(r) => {
                if r >= grammar.num_rules() {
                    return Err(illegal(format!("rule {r} does not exist")));
                }
                if grammar.rule(r).lhs != top.symbol {
                    return Err(illegal(format!(
                        "rule `{}` cannot expand `{}`",
                        grammar.rule_text(r),
                        grammar.name(top.symbol)
                    )));
                }
            }
            Action::Instantiate { category, constant } => {
                if grammar.kind(top.symbol) != SymbolKind::Category(category) {
                    return Err(illegal(format!(
                        "category {category} cannot fill `{}`",
                        grammar.name(top.symbol)
                    )));
                }
                let n = constants.get(category).len();
                if constant >= n {
                    return Err(illegal(format!(
                        "constant {constant} out of range ({n} available)"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Applies `action` in place. `handle` is recorded as the parent
    /// decoder state of every symbol the action pushes.
    pub fn apply(
        &mut self,
        grammar: &Grammar,
        constants: &ContextConstants,
        action: Action,
        handle: H,
    ) -> Result<()> {
        self.check(grammar, constants, action)?;
        let entry = self.stack.pop().expect("checked non-empty");
        match action {
            Action::Apply(r) => {
                let rule = grammar.rule(r);
                let mut children = Vec::with_capacity(rule.rhs.len());
                let mut pushed = Vec::new();
                for &sym in &rule.rhs {
                    let idx = self.slots.len();
                    if grammar.kind(sym) == SymbolKind::Terminal {
                        self.slots.push(Slot::Terminal(sym));
                    } else {
                        self.slots.push(Slot::Pending);
                        pushed.push((sym, idx));
                    }
                    children.push(idx);
                }
                self.slots[entry.node] = Slot::Rule { rule: r, children };
                for (sym, idx) in pushed.into_iter().rev() {
                    self.stack.push(FrontierEntry {
                        symbol: sym,
                        parent: Some(action),
                        parent_state: Some(handle.clone()),
                        node: idx,
                    });
                }
            }
            Action::Instantiate { category, constant } => {
                self.slots[entry.node] = Slot::Constant { category, constant };
            }
        }
        self.steps += 1;
        Ok(())
    }

    /// Builds the AST of a complete derivation.
    pub fn ast(&self, grammar: &Grammar, constants: &ContextConstants) -> Result<Ast> {
        if !self.is_complete() {
            return Err(Error::IncompleteDerivation(self.stack.len()));
        }
        Ok(self.build(0, grammar, constants))
    }

    fn build(&self, idx: usize, grammar: &Grammar, constants: &ContextConstants) -> Ast {
        match &self.slots[idx] {
            Slot::Rule { rule, children } => Ast::Node {
                symbol: grammar.name(grammar.rule(*rule).lhs).to_string(),
                rule: *rule,
                children: children
                    .iter()
                    .map(|&c| self.build(c, grammar, constants))
                    .collect(),
            },
            Slot::Terminal(sym) => Ast::Terminal(grammar.name(*sym).to_string()),
            Slot::Constant { category, constant } => Ast::Constant {
                category: *category,
                constant: *constant,
                name: constants.get(*category)[*constant].clone(),
            },
            Slot::Pending => unreachable!("complete derivations have no pending slots"),
        }
    }
}

/// Functional form of [`DerivationState::apply`].
pub fn apply_action<H: Clone>(
    grammar: &Grammar,
    constants: &ContextConstants,
    state: &DerivationState<H>,
    action: Action,
    handle: H,
) -> Result<DerivationState<H>> {
    let mut next = state.clone();
    next.apply(grammar, constants, action, handle)?;
    Ok(next)
}

pub fn legitimate_actions<H: Clone>(
    grammar: &Grammar,
    state: &DerivationState<H>,
    constants: &ContextConstants,
) -> Result<Vec<Action>> {
    state.legitimate_actions(grammar, constants)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Ast {
    Node {
        symbol: String,
        rule: usize,
        children: Vec<Ast>,
    },
    Terminal(String),
    Constant {
        category: usize,
        constant: usize,
        name: String,
    },
}

impl Ast {
    /// The leftmost derivation that produces this tree.
    pub fn to_actions(&self) -> Vec<Action> {
        let mut out = Vec::new();
        self.collect_actions(&mut out);
        out
    }

    fn collect_actions(&self, out: &mut Vec<Action>) {
        match self {
            Ast::Node { rule, children, .. } => {
                out.push(Action::Apply(*rule));
                for c in children {
                    c.collect_actions(out);
                }
            }
            Ast::Terminal(_) => {}
            Ast::Constant {
                category, constant, ..
            } => out.push(Action::Instantiate {
                category: *category,
                constant: *constant,
            }),
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_tokens(&mut out);
        out
    }

    fn collect_tokens(&self, out: &mut Vec<String>) {
        match self {
            Ast::Node { children, .. } => children.iter().for_each(|c| c.collect_tokens(out)),
            Ast::Terminal(t) => out.push(t.clone()),
            Ast::Constant { name, .. } => out.push(name.clone()),
        }
    }

    /// Indented debug rendering, two spaces per level.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        self.dump_into(0, &mut out);
        out
    }

    fn dump_into(&self, depth: usize, out: &mut String) {
        let pad = "  ".repeat(depth);
        match self {
            Ast::Node {
                symbol,
                rule,
                children,
            } => {
                out.push_str(&format!("{pad}{symbol} [R{rule}]\n"));
                for c in children {
                    c.dump_into(depth + 1, out);
                }
            }
            Ast::Terminal(t) => out.push_str(&format!("{pad}'{t}'\n")),
            Ast::Constant { name, category, .. } => {
                out.push_str(&format!("{pad}{name} <cat {category}>\n"))
            }
        }
    }
}

/// Replays `actions` from the start symbol and returns the resulting tree.
pub fn actions_to_ast(
    grammar: &Grammar,
    constants: &ContextConstants,
    actions: &[Action],
) -> Result<Ast> {
    let mut state = DerivationState::<()>::new(grammar);
    for (i, &a) in actions.iter().enumerate() {
        if state.is_complete() {
            return Err(Error::TrailingActions {
                completed_at: i,
                trailing: actions.len() - i,
            });
        }
        state.apply(grammar, constants, a, ())?;
    }
    state.ast(grammar, constants)
}

pub fn ast_to_tokens(ast: &Ast) -> Vec<String> {
    ast.tokens()
}

/// Every complete legal derivation with at most `max_actions` actions,
/// in lexicographic action order. `budget` caps the number of partial
/// states visited.
pub fn enumerate_derivations(
    grammar: &Grammar,
    constants: &ContextConstants,
    max_actions: usize,
    budget: usize,
) -> Result<Vec<Vec<Action>>> {
    let mut out = Vec::new();
    let mut visited = 0usize;
    let mut prefix = Vec::new();
    let root = DerivationState::<()>::new(grammar);
    walk(
        grammar,
        constants,
        &root,
        &mut prefix,
        max_actions,
        budget,
        &mut visited,
        &mut out,
    )?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn walk(
    grammar: &Grammar,
    constants: &ContextConstants,
    state: &DerivationState<()>,
    prefix: &mut Vec<Action>,
    max_actions: usize,
    budget: usize,
    visited: &mut usize,
    out: &mut Vec<Vec<Action>>,
) -> Result<()> {
    *visited += 1;
    if *visited > budget {
        return Err(Error::BudgetExceeded(budget));
    }
    if state.is_complete() {
        out.push(prefix.clone());
        return Ok(());
    }
    // each pending symbol needs at least one more action
    if prefix.len() + state.frontier().len() > max_actions {
        return Ok(());
    }
    for a in state.legitimate_actions(grammar, constants)? {
        let next = apply_action(grammar, constants, state, a, ())?;
        prefix.push(a);
        walk(
            grammar,
            constants,
            &next,
            prefix,
            max_actions,
            budget,
            visited,
            out,
        )?;
        prefix.pop();
    }
    Ok(())
}
