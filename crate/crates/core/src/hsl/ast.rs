use serde::{Deserialize, Serialize};

use super::diag::Span;
use crate::value::Decimal;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Name {
    pub text: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub imports: Vec<Name>,
    pub entities: Vec<Entity>,
    pub operations: Vec<Operation>,
    pub dependencies: Vec<Dependency>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub name: Name,
    pub chain: Name,
    pub kind: EntityKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntityKind {
    Account { address: String, balance: Option<Decimal>, unit: Option<Name> },
    Contract { contract_type: Name, address: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coin {
    pub amount: Decimal,
    pub unit: Name,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operation {
    pub name: Name,
    pub kind: OpKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpKind {
    Payment {
        coin: Coin,
        from: Name,
        to: Name,
        /// `with <give> as <get>`: `give` of the payer's unit buys `get` of
        /// the payee's unit.
        give: Coin,
        get: Coin,
    },
    Invocation {
        contract: Name,
        method: Name,
        args: Vec<Arg>,
        invoker: Name,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arg {
    pub span: Span,
    pub kind: ArgKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArgKind {
    Int(Decimal),
    Float(Decimal),
    Str(String),
    StateVar {
        entity: Name,
        prop: Name,
    },
    /// `x.f()`: syntactically accepted so validation can reject it as
    /// unverifiable.
    MethodCall {
        entity: Name,
        method: Name,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Before,
    After,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeUnit {
    Seconds,
    Minutes,
    Hours,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeadlineSpec {
    Blocks(Decimal),
    Default,
    Time { amount: Decimal, unit: TimeUnit },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dependency {
    Temporal { subject: Vec<Name>, relation: Relation, objects: Vec<Name> },
    Deadline { ops: Vec<Name>, spec: DeadlineSpec },
}

impl Program {
    pub fn entity(&self, name: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.name.text == name)
    }

    pub fn op_index(&self, name: &str) -> Option<usize> {
        self.operations.iter().position(|o| o.name.text == name)
    }

    /// Every pairwise temporal constraint, normalized to `(before, after)`.
    pub fn temporal_constraints(&self) -> Vec<(&Name, &Name)> {
        let mut out = Vec::new();
        for d in &self.dependencies {
            if let Dependency::Temporal { subject, relation, objects } = d {
                for s in subject {
                    for o in objects {
                        out.push(match relation {
                            Relation::Before => (s, o),
                            Relation::After => (o, s),
                        });
                    }
                }
            }
        }
        out
    }

    /// Every per-operation deadline spec.
    pub fn deadline_specs(&self) -> Vec<(&Name, &DeadlineSpec)> {
        let mut out = Vec::new();
        for d in &self.dependencies {
            if let Dependency::Deadline { ops, spec } = d {
                for o in ops {
                    out.push((o, spec));
                }
            }
        }
        out
    }

    pub fn accounts(&self) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(|e| matches!(e.kind, EntityKind::Account { .. }))
    }

    pub fn contracts(&self) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(|e| matches!(e.kind, EntityKind::Contract { .. }))
    }
}
