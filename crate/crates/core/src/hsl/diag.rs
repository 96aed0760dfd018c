use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub fn new(line: u32, col: u32) -> Self {
        Span { line, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Note,
}

/// Stable diagnostic codes. `E0xx` syntax, `E1xx` validation, `E2xx`
/// interface files, `E3xx` compilation, `N` notes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Code {
    Syntax,
    DuplicateEntity,
    DuplicateOperation,
    UndefinedEntity,
    WrongEntityKind,
    MissingInterface,
    UnknownContractType,
    UnknownMethod,
    Arity,
    IncompatibleArgument,
    UnverifiableArgument,
    UnknownStateVar,
    UndefinedOperation,
    Cycle,
    ConflictingConstraint,
    DuplicateDeadline,
    MissingUnit,
    UnitMismatch,
    ChainMismatch,
    AmbiguousInterface,
    SelfDependency,
    NonPositive,
    UnknownLanguage,
    MalformedInterface,
    DuplicateMember,
    UnmappedType,
    UnreachableChain,
    MissingRelay,
    MissingRate,
    NonIntegralAmount,
    UnanchoredStateRef,
    MissingRefundAccount,
    GoStringResolved,
}

impl Code {
    pub fn as_str(&self) -> &'static str {
        use Code::*;
        match self {
            Syntax => "E001",
            DuplicateEntity => "E101",
            DuplicateOperation => "E102",
            UndefinedEntity => "E103",
            WrongEntityKind => "E104",
            MissingInterface => "E105",
            UnknownContractType => "E106",
            UnknownMethod => "E107",
            Arity => "E108",
            IncompatibleArgument => "E109",
            UnverifiableArgument => "E110",
            UnknownStateVar => "E111",
            UndefinedOperation => "E112",
            Cycle => "E113",
            ConflictingConstraint => "E114",
            DuplicateDeadline => "E115",
            MissingUnit => "E116",
            UnitMismatch => "E117",
            ChainMismatch => "E118",
            AmbiguousInterface => "E119",
            SelfDependency => "E120",
            NonPositive => "E121",
            UnknownLanguage => "E201",
            MalformedInterface => "E202",
            DuplicateMember => "E203",
            UnmappedType => "E204",
            UnreachableChain => "E301",
            MissingRelay => "E302",
            MissingRate => "E303",
            NonIntegralAmount => "E304",
            UnanchoredStateRef => "E305",
            MissingRefundAccount => "E306",
            GoStringResolved => "N001",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: Code,
    pub span: Span,
    pub message: String,
}

impl Diagnostic {
    pub fn error(code: Code, span: Span, message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Error, code, span, message: message.into() }
    }

    pub fn note(code: Code, span: Span, message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Note, code, span, message: message.into() }
    }

    /// `ERROR <code> <file>:<line>:<col> <message>`
    pub fn render(&self, file: &str) -> String {
        let level = match self.severity {
            Severity::Error => "ERROR",
            Severity::Note => "NOTE",
        };
        format!("{level} {} {file}:{}:{} {}", self.code.as_str(), self.span.line, self.span.col, self.message)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render("<input>"))
    }
}

/// A non-empty batch of diagnostics.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{} diagnostic(s), first: {}", .0.len(), .0[0])]
pub struct Diagnostics(pub Vec<Diagnostic>);

impl Diagnostics {
    pub fn single(d: Diagnostic) -> Self {
        Diagnostics(vec![d])
    }

    pub fn render(&self, file: &str) -> String {
        self.0.iter().map(|d| d.render(file)).collect::<Vec<_>>().join("\n")
    }

    pub fn codes(&self) -> Vec<Code> {
        self.0.iter().map(|d| d.code).collect()
    }
}
