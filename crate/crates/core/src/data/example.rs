use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{Action, ConstantSource, ContextConstants, Grammar};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Member {
    pub name: String,
    #[serde(rename = "type")]
    pub type_name: String,
}

impl Member {
    pub fn new(name: impl Into<String>, type_name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            type_name: type_name.into(),
        }
    }
}

/// What an utterance is interpreted against.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextEnv {
    /// Class variables `(name, type)` and methods `(name, return type)`.
    Class {
        variables: Vec<Member>,
        methods: Vec<Member>,
    },
    /// Previous questions of the dialog, oldest first.
    Dialog { history: Vec<Vec<String>> },
}

impl ContextEnv {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            ContextEnv::Class { variables, methods } => {
                for m in variables.iter().chain(methods) {
                    if m.name.is_empty() || m.type_name.is_empty() {
                        return Err("class member with empty name or type".into());
                    }
                }
            }
            ContextEnv::Dialog { history } => {
                if history.iter().flatten().any(|t| t.is_empty()) {
                    return Err("empty token in dialog history".into());
                }
            }
        }
        Ok(())
    }

    /// Constant names offered to a category with the given source.
    /// History entities are the distinct history tokens in first-seen order.
    pub fn constants(&self, source: ConstantSource) -> Vec<String> {
        match (self, source) {
            (ContextEnv::Class { methods, .. }, ConstantSource::ClassMethods) => {
                methods.iter().map(|m| m.name.clone()).collect()
            }
            (ContextEnv::Class { variables, .. }, ConstantSource::ClassVariables) => {
                variables.iter().map(|m| m.name.clone()).collect()
            }
            (ContextEnv::Dialog { history }, ConstantSource::HistoryEntities) => {
                let mut seen = Vec::<String>::new();
                for t in history.iter().flatten() {
                    if !seen.contains(t) {
                        seen.push(t.clone());
                    }
                }
                seen
            }
            _ => Vec::new(),
        }
    }

    pub fn constants_for(&self, grammar: &Grammar) -> ContextConstants {
        ContextConstants::new(
            grammar
                .categories()
                .iter()
                .map(|c| self.constants(c.source))
                .collect(),
        )
    }

    pub fn is_empty(&self) -> bool {
        match self {
            ContextEnv::Class { variables, methods } => variables.is_empty() && methods.is_empty(),
            ContextEnv::Dialog { history } => history.is_empty(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: usize,
    pub nl: Vec<String>,
    pub context: ContextEnv,
    pub actions: Vec<Action>,
    pub surface: Vec<String>,
    /// Free-form labels, e.g. `ambiguous` on generated examples whose
    /// program depends on the context.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

impl Example {
    pub fn constants(&self, grammar: &Grammar) -> ContextConstants {
        self.context.constants_for(grammar)
    }

    /// Gold actions with constant choices erased, so examples that differ
    /// only in which constant they copy share a pattern.
    pub fn output_pattern(&self) -> String {
        let parts: Vec<String> = self
            .actions
            .iter()
            .map(|a| match a {
                Action::Apply(r) => format!("R{r}"),
                Action::Instantiate { category, .. } => format!("I{category}"),
            })
            .collect();
        parts.join(" ")
    }

    /// Checks the gold derivation replays to the stored surface tokens.
    pub fn validate(&self, grammar: &Grammar) -> Result<()> {
        let invalid = |reason: String| Error::InvalidExample {
            id: self.id,
            reason,
        };
        if self.nl.is_empty() {
            return Err(invalid("empty utterance".into()));
        }
        self.context.validate().map_err(invalid)?;
        let ast = crate::grammar::actions_to_ast(grammar, &self.constants(grammar), &self.actions)
            .map_err(|e| invalid(e.to_string()))?;
        let tokens = ast.tokens();
        if tokens != self.surface {
            return Err(invalid(format!(
                "surface `{}` differs from derivation yield `{}`",
                self.surface.join(" "),
                tokens.join(" ")
            )));
        }
        Ok(())
    }
}
