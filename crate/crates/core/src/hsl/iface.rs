//! Declarative contract interface files.
//!
//! ```text
//! # comment
//! contract Option lang=vyper chain=ChainY
//! var LastStrike: int128
//! fn CashSettle(amount: int128, strike: uint256)
//! ```
//!
//! `chain=` is optional and only used to pick between two imported
//! interfaces that share a contract name.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::diag::{Code, Diagnostic, Diagnostics, Span};
use super::types::{map_type, Language, TypeMapping};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub native: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Method {
    pub name: String,
    pub params: Vec<Param>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractInterface {
    pub name: String,
    pub language: Language,
    pub chain: Option<String>,
    pub state_vars: Vec<Param>,
    pub methods: Vec<Method>,
}

impl ContractInterface {
    pub fn method(&self, name: &str) -> Option<&Method> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn state_var(&self, name: &str) -> Option<&Param> {
        self.state_vars.iter().find(|v| v.name == name)
    }

    /// Unified mapping of a native type declared in this interface. Types
    /// were checked at parse time.
    pub fn map(&self, native: &str) -> TypeMapping {
        map_type(self.language, native).expect("interface types are validated when parsed")
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_') && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn typed(decl: &str, span: Span, lang: Language) -> Result<Param, Diagnostic> {
    let (name, native) = decl
        .split_once(':')
        .ok_or_else(|| Diagnostic::error(Code::MalformedInterface, span, format!("expected `name: type`, got {decl:?}")))?;
    let (name, native) = (name.trim(), native.trim());
    if !is_ident(name) || native.is_empty() {
        return Err(Diagnostic::error(Code::MalformedInterface, span, format!("bad declaration {decl:?}")));
    }
    map_type(lang, native).map_err(|e| Diagnostic::error(Code::UnmappedType, span, e.to_string()))?;
    Ok(Param { name: name.to_string(), native: native.to_string() })
}

pub fn parse_contract_interface(text: &str) -> Result<ContractInterface, Diagnostics> {
    let mut errors = Vec::new();
    let mut header: Option<(String, Language, Option<String>)> = None;
    let mut state_vars = Vec::new();
    let mut methods: Vec<Method> = Vec::new();
    let mut names = BTreeSet::new();

    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let col = raw.len() - raw.trim_start().len() + 1;
        let span = Span::new(i as u32 + 1, col as u32);
        let (kw, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        match kw {
            "contract" => {
                if header.is_some() {
                    errors.push(Diagnostic::error(Code::MalformedInterface, span, "second contract header"));
                    continue;
                }
                let mut words = rest.split_whitespace();
                let name = words.next().unwrap_or("");
                if !is_ident(name) {
                    errors.push(Diagnostic::error(Code::MalformedInterface, span, "missing contract name"));
                    continue;
                }
                let mut lang = None;
                let mut lang_tagged = false;
                let mut chain = None;
                for w in words {
                    match w.split_once('=') {
                        Some(("lang", l)) => {
                            lang_tagged = true;
                            match l.parse::<Language>() {
                                Ok(l) => lang = Some(l),
                                Err(l) => errors.push(Diagnostic::error(Code::UnknownLanguage, span, format!("unknown language {l:?}"))),
                            }
                        }
                        Some(("chain", c)) if is_ident(c) => chain = Some(c.to_string()),
                        _ => errors.push(Diagnostic::error(Code::MalformedInterface, span, format!("unexpected {w:?}"))),
                    }
                }
                match lang {
                    Some(l) => header = Some((name.to_string(), l, chain)),
                    None if !lang_tagged => errors.push(Diagnostic::error(Code::MalformedInterface, span, "missing lang= tag")),
                    None => {}
                }
            }
            "var" | "fn" => {
                let Some((_, lang, _)) = &header else {
                    errors.push(Diagnostic::error(Code::MalformedInterface, span, "declaration before contract header"));
                    continue;
                };
                let lang = *lang;
                let parsed = if kw == "var" {
                    typed(rest, span, lang).map(|p| {
                        let n = p.name.clone();
                        state_vars.push(p);
                        n
                    })
                } else {
                    parse_fn(rest, span, lang).map(|m| {
                        let n = m.name.clone();
                        methods.push(m);
                        n
                    })
                };
                match parsed {
                    Ok(name) => {
                        if !names.insert(name.clone()) {
                            errors.push(Diagnostic::error(Code::DuplicateMember, span, format!("duplicate member {name}")));
                        }
                    }
                    Err(d) => errors.push(d),
                }
            }
            other => errors.push(Diagnostic::error(Code::MalformedInterface, span, format!("unknown declaration {other:?}"))),
        }
    }
    if header.is_none() && errors.is_empty() {
        errors.push(Diagnostic::error(Code::MalformedInterface, Span::new(1, 1), "missing contract header"));
    }
    if !errors.is_empty() {
        return Err(Diagnostics(errors));
    }
    let (name, language, chain) = header.expect("checked above");
    Ok(ContractInterface { name, language, chain, state_vars, methods })
}

fn parse_fn(rest: &str, span: Span, lang: Language) -> Result<Method, Diagnostic> {
    let malformed = || Diagnostic::error(Code::MalformedInterface, span, format!("bad method {rest:?}"));
    let (name, tail) = rest.split_once('(').ok_or_else(malformed)?;
    let name = name.trim();
    let inner = tail.trim_end().strip_suffix(')').ok_or_else(malformed)?;
    if !is_ident(name) {
        return Err(malformed());
    }
    let mut params = Vec::new();
    if !inner.trim().is_empty() {
        for decl in inner.split(',') {
            params.push(typed(decl, span, lang)?);
        }
    }
    let mut seen = BTreeSet::new();
    for p in &params {
        if !seen.insert(&p.name) {
            return Err(Diagnostic::error(Code::DuplicateMember, span, format!("duplicate parameter {}", p.name)));
        }
    }
    Ok(Method { name: name.to_string(), params })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BROKER: &str = "contract Broker lang=solidity\nvar StrikePrice: uint\nfn GetStrikePrice()\n";

    #[test]
    fn broker_interface() {
        let i = parse_contract_interface(BROKER).unwrap();
        assert_eq!(i.name, "Broker");
        assert_eq!(i.language, Language::Solidity);
        assert_eq!(i.state_vars.len(), 1);
        assert_eq!(i.methods.len(), 1);
        assert!(i.method("GetStrikePrice").unwrap().params.is_empty());
    }

    #[test]
    fn params_and_chain_tag() {
        let i = parse_contract_interface(
            "# option on Y\ncontract Option lang=vyper chain=ChainY\nfn CashSettle(amount: int128, strike: uint256)\n",
        )
        .unwrap();
        assert_eq!(i.chain.as_deref(), Some("ChainY"));
        let m = i.method("CashSettle").unwrap();
        assert_eq!(m.params[1], Param { name: "strike".into(), native: "uint256".into() });
    }

    #[test]
    fn duplicate_method_rejected() {
        let e = parse_contract_interface("contract A lang=go\nfn f()\nfn f(x: int)\n").unwrap_err();
        assert_eq!(e.codes(), vec![Code::DuplicateMember]);
    }

    #[test]
    fn unknown_language_rejected() {
        let e = parse_contract_interface("contract A lang=java\n").unwrap_err();
        assert_eq!(e.codes(), vec![Code::UnknownLanguage]);
    }

    #[test]
    fn unmapped_native_type_rejected() {
        let e = parse_contract_interface("contract A lang=solidity\nvar x: uint8\n").unwrap_err();
        assert_eq!(e.codes(), vec![Code::UnmappedType]);
        assert_eq!(e.0[0].span, Span::new(2, 1));
    }

    #[test]
    fn malformed_lines_reported() {
        let e = parse_contract_interface("var x: int\ncontract A\nfn g(\n").unwrap_err();
        assert!(e.codes().iter().all(|c| *c == Code::MalformedInterface));
        assert_eq!(e.0.len(), 3);
    }
}
