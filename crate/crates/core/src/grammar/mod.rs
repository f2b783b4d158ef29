//! Production-rule grammars and the derivation machinery that drives
//! grammar-constrained decoding.
//!
//! Grammar files are line oriented:
//!
//! ```text
//! # comment
//! @start Stmt
//! @terminals return ; ( )
//! @category ClassMethod source=class_methods
//! Stmt -> return Expr ; | Expr ;
//! Expr -> ClassMethod ( )
//! ```
//!
//! Nonterminals are the symbols that appear on a left-hand side. Every
//! right-hand symbol must be a nonterminal, a declared terminal or a
//! declared category. Rule ids follow file order.

mod derivation;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

pub use derivation::{
    actions_to_ast, apply_action, ast_to_tokens, enumerate_derivations, legitimate_actions, Action,
    Ast, DerivationState, FrontierEntry, DEFAULT_ENUMERATION_BUDGET,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrammarError {
    pub line: usize,
    pub kind: GrammarErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GrammarErrorKind {
    Syntax(String),
    UndefinedSymbol(String),
    DuplicateRule(String),
    DuplicateDeclaration(String),
    UnknownSource(String),
    MissingStart(Option<String>),
}

impl fmt::Display for GrammarError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "grammar line {}: ", self.line)?;
        match &self.kind {
            GrammarErrorKind::Syntax(msg) => write!(f, "{msg}"),
            GrammarErrorKind::UndefinedSymbol(s) => write!(f, "undefined symbol `{s}`"),
            GrammarErrorKind::DuplicateRule(r) => write!(f, "duplicate rule `{r}`"),
            GrammarErrorKind::DuplicateDeclaration(s) => {
                write!(f, "symbol `{s}` declared more than once")
            }
            GrammarErrorKind::UnknownSource(s) => write!(f, "unknown constant source `{s}`"),
            GrammarErrorKind::MissingStart(Some(s)) => {
                write!(f, "start symbol `{s}` has no rules")
            }
            GrammarErrorKind::MissingStart(None) => write!(f, "no rules, so no start symbol"),
        }
    }
}

impl std::error::Error for GrammarError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymbolId(usize);

impl SymbolId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SymbolKind {
    Terminal,
    Nonterminal,
    Category(usize),
}

/// Where the constants of an instantiable category come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConstantSource {
    ClassMethods,
    ClassVariables,
    HistoryEntities,
}

impl ConstantSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ConstantSource::ClassMethods => "class_methods",
            ConstantSource::ClassVariables => "class_variables",
            ConstantSource::HistoryEntities => "history_entities",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "class_methods" => Some(ConstantSource::ClassMethods),
            "class_variables" => Some(ConstantSource::ClassVariables),
            "history_entities" => Some(ConstantSource::HistoryEntities),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Category {
    pub name: String,
    pub source: ConstantSource,
    pub symbol: SymbolId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rule {
    pub id: usize,
    pub lhs: SymbolId,
    pub rhs: Vec<SymbolId>,
}

#[derive(Clone, Debug)]
pub struct Grammar {
    names: Vec<String>,
    kinds: Vec<SymbolKind>,
    lookup: HashMap<String, SymbolId>,
    rules: Vec<Rule>,
    by_lhs: Vec<Vec<usize>>,
    categories: Vec<Category>,
    start: SymbolId,
    source: String,
}

/// Constants available to each category for one example, indexed by category id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ContextConstants {
    pub by_category: Vec<Vec<String>>,
}

impl ContextConstants {
    pub fn new(by_category: Vec<Vec<String>>) -> Self {
        Self { by_category }
    }

    pub fn empty(grammar: &Grammar) -> Self {
        Self {
            by_category: vec![Vec::new(); grammar.categories.len()],
        }
    }

    pub fn get(&self, category: usize) -> &[String] {
        self.by_category
            .get(category)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

struct RawRule {
    line: usize,
    lhs: String,
    rhs: Vec<String>,
}

impl Grammar {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text)?)
    }

    /// Parses the line-oriented grammar format.
    pub fn parse(text: &str) -> Result<Self, GrammarError> {
        let err = |line: usize, kind| GrammarError { line, kind };
        let mut terminals: Vec<(usize, String)> = Vec::new();
        let mut categories: Vec<(usize, String, ConstantSource)> = Vec::new();
        let mut start: Option<(usize, String)> = None;
        let mut raw: Vec<RawRule> = Vec::new();

        for (i, full) in text.lines().enumerate() {
            let line = i + 1;
            let content = full.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(directive) = content.strip_prefix('@') {
                let mut parts = directive.split_whitespace();
                match parts.next() {
                    Some("start") => {
                        let name = parts.next().ok_or_else(|| {
                            err(
                                line,
                                GrammarErrorKind::Syntax("@start needs a symbol".into()),
                            )
                        })?;
                        start = Some((line, name.to_string()));
                    }
                    Some("terminals") => {
                        terminals.extend(parts.map(|t| (line, t.to_string())));
                    }
                    Some("category") => {
                        let name = parts.next().ok_or_else(|| {
                            err(
                                line,
                                GrammarErrorKind::Syntax("@category needs a name".into()),
                            )
                        })?;
                        let source = parts
                            .next()
                            .and_then(|s| s.strip_prefix("source="))
                            .ok_or_else(|| {
                                err(
                                    line,
                                    GrammarErrorKind::Syntax(
                                        "@category needs source=<kind>".into(),
                                    ),
                                )
                            })?;
                        let source = ConstantSource::parse(source).ok_or_else(|| {
                            err(line, GrammarErrorKind::UnknownSource(source.to_string()))
                        })?;
                        categories.push((line, name.to_string(), source));
                    }
                    other => {
                        return Err(err(
                            line,
                            GrammarErrorKind::Syntax(format!(
                                "unknown directive `@{}`",
                                other.unwrap_or("")
                            )),
                        ))
                    }
                }
                continue;
            }
            let (lhs, rhs) = content.split_once("->").ok_or_else(|| {
                err(
                    line,
                    GrammarErrorKind::Syntax("expected `LHS -> symbols`".into()),
                )
            })?;
            let lhs = lhs.trim();
            if lhs.is_empty() || lhs.split_whitespace().count() != 1 {
                return Err(err(
                    line,
                    GrammarErrorKind::Syntax("left-hand side must be one symbol".into()),
                ));
            }
            for alt in rhs.split('|') {
                let syms: Vec<String> = alt.split_whitespace().map(str::to_string).collect();
                if syms.is_empty() {
                    return Err(err(
                        line,
                        GrammarErrorKind::Syntax(format!("empty alternative for `{lhs}`")),
                    ));
                }
                raw.push(RawRule {
                    line,
                    lhs: lhs.to_string(),
                    rhs: syms,
                });
            }
        }

        let mut names = Vec::new();
        let mut kinds = Vec::new();
        let mut lookup: HashMap<String, SymbolId> = HashMap::new();
        let mut declare = |name: &str, kind: SymbolKind, line: usize| {
            if let Some(&id) = lookup.get(name) {
                if kinds[id.0] == kind && kind == SymbolKind::Nonterminal {
                    return Ok(id);
                }
                return Err(err(
                    line,
                    GrammarErrorKind::DuplicateDeclaration(name.into()),
                ));
            }
            let id = SymbolId(names.len());
            names.push(name.to_string());
            kinds.push(kind);
            lookup.insert(name.to_string(), id);
            Ok(id)
        };

        for r in &raw {
            declare(&r.lhs, SymbolKind::Nonterminal, r.line)?;
        }
        for (line, t) in &terminals {
            declare(t, SymbolKind::Terminal, *line)?;
        }
        let mut cats = Vec::new();
        for (idx, (line, name, source)) in categories.iter().enumerate() {
            let symbol = declare(name, SymbolKind::Category(idx), *line)?;
            cats.push(Category {
                name: name.clone(),
                source: *source,
                symbol,
            });
        }

        let mut rules: Vec<Rule> = Vec::with_capacity(raw.len());
        for r in &raw {
            let lhs = lookup[&r.lhs];
            let rhs =
                r.rhs
                    .iter()
                    .map(|s| {
                        lookup.get(s).copied().ok_or_else(|| {
                            err(r.line, GrammarErrorKind::UndefinedSymbol(s.clone()))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
            if rules.iter().any(|q| q.lhs == lhs && q.rhs == rhs) {
                return Err(err(
                    r.line,
                    GrammarErrorKind::DuplicateRule(format!("{} -> {}", r.lhs, r.rhs.join(" "))),
                ));
            }
            rules.push(Rule {
                id: rules.len(),
                lhs,
                rhs,
            });
        }

        let start = match start {
            Some((line, name)) => match lookup.get(&name) {
                Some(&id) if kinds[id.0] == SymbolKind::Nonterminal => id,
                _ => return Err(err(line, GrammarErrorKind::MissingStart(Some(name)))),
            },
            None => match rules.first() {
                Some(r) => r.lhs,
                None => {
                    let last = text.lines().count().max(1);
                    return Err(err(last, GrammarErrorKind::MissingStart(None)));
                }
            },
        };

        let mut by_lhs = vec![Vec::new(); names.len()];
        for r in &rules {
            by_lhs[r.lhs.0].push(r.id);
        }

        Ok(Self {
            names,
            kinds,
            lookup,
            rules,
            by_lhs,
            categories: cats,
            start,
            source: text.to_string(),
        })
    }

    /// The text this grammar was parsed from.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn start(&self) -> SymbolId {
        self.start
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule(&self, id: usize) -> &Rule {
        &self.rules[id]
    }

    pub fn num_rules(&self) -> usize {
        self.rules.len()
    }

    /// Rule ids whose left-hand side is `symbol`, ascending.
    pub fn rules_for(&self, symbol: SymbolId) -> &[usize] {
        &self.by_lhs[symbol.0]
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn num_symbols(&self) -> usize {
        self.names.len()
    }

    pub fn symbol(&self, name: &str) -> Option<SymbolId> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, id: SymbolId) -> &str {
        &self.names[id.0]
    }

    pub fn kind(&self, id: SymbolId) -> SymbolKind {
        self.kinds[id.0]
    }

    pub fn symbols(&self) -> impl Iterator<Item = SymbolId> {
        (0..self.names.len()).map(SymbolId)
    }

    pub fn nonterminals(&self) -> impl Iterator<Item = SymbolId> + '_ {
        self.kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == SymbolKind::Nonterminal)
            .map(|(i, _)| SymbolId(i))
    }

    pub fn terminals(&self) -> impl Iterator<Item = SymbolId> + '_ {
        self.kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == SymbolKind::Terminal)
            .map(|(i, _)| SymbolId(i))
    }

    /// Renders rule `id` as `LHS -> a b c`.
    pub fn rule_text(&self, id: usize) -> String {
        let r = &self.rules[id];
        let rhs: Vec<&str> = r.rhs.iter().map(|s| self.name(*s)).collect();
        format!("{} -> {}", self.name(r.lhs), rhs.join(" "))
    }
}
