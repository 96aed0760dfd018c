//! Semantic validation: entity references, argument compatibility and
//! verifiability, and the temporal constraint DAG. All violations are
//! collected; validation either returns a program or diagnostics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::diag::{Code, Diagnostic, Diagnostics, Span};
use super::iface::ContractInterface;
use super::types::{TypeMapping, UnifiedType};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatedProgram {
    pub program: Program,
    /// Interface bound to each contract entity.
    pub bindings: BTreeMap<String, ContractInterface>,
    /// Resolved unified type of each argument, keyed by operation name.
    pub arg_types: BTreeMap<String, Vec<UnifiedType>>,
    /// Operation DAG over indices into `program.operations`.
    pub edges: BTreeSet<(usize, usize)>,
    /// Deadline per operation index; absent means `default`.
    pub deadlines: BTreeMap<usize, DeadlineSpec>,
    /// Go `string` resolutions and similar non-fatal remarks.
    pub notes: Vec<Diagnostic>,
}

impl ValidatedProgram {
    pub fn deadline(&self, op: usize) -> &DeadlineSpec {
        self.deadlines.get(&op).unwrap_or(&DeadlineSpec::Default)
    }

    pub fn op_count(&self) -> usize {
        self.program.operations.len()
    }
}

struct Ctx<'a> {
    program: &'a Program,
    errors: Vec<Diagnostic>,
    notes: Vec<Diagnostic>,
}

impl<'a> Ctx<'a> {
    fn error(&mut self, code: Code, span: Span, msg: impl Into<String>) {
        self.errors.push(Diagnostic::error(code, span, msg));
    }

    fn account(&mut self, name: &Name) -> Option<&'a Entity> {
        match self.program.entity(&name.text) {
            Some(e @ Entity { kind: EntityKind::Account { .. }, .. }) => Some(e),
            Some(_) => {
                self.error(Code::WrongEntityKind, name.span, format!("`{}` is not an account", name.text));
                None
            }
            None => {
                self.error(Code::UndefinedEntity, name.span, format!("undefined entity `{}`", name.text));
                None
            }
        }
    }

    fn contract(&mut self, name: &Name) -> Option<&'a Entity> {
        match self.program.entity(&name.text) {
            Some(e @ Entity { kind: EntityKind::Contract { .. }, .. }) => Some(e),
            Some(_) => {
                self.error(Code::WrongEntityKind, name.span, format!("`{}` is not a contract", name.text));
                None
            }
            None => {
                self.error(Code::UndefinedEntity, name.span, format!("undefined entity `{}`", name.text));
                None
            }
        }
    }
}

pub fn validate(program: &Program, interfaces: &BTreeMap<String, ContractInterface>) -> Result<ValidatedProgram, Diagnostics> {
    let mut cx = Ctx { program, errors: Vec::new(), notes: Vec::new() };

    let mut imported = Vec::new();
    for imp in &program.imports {
        match interfaces.get(&imp.text) {
            Some(i) => imported.push(i),
            None => cx.error(Code::MissingInterface, imp.span, format!("no interface supplied for import \"{}\"", imp.text)),
        }
    }

    let mut seen = BTreeSet::new();
    for e in &program.entities {
        if !seen.insert(e.name.text.as_str()) {
            cx.error(Code::DuplicateEntity, e.name.span, format!("entity `{}` defined twice", e.name.text));
        }
    }
    let mut seen = BTreeSet::new();
    for o in &program.operations {
        if !seen.insert(o.name.text.as_str()) {
            cx.error(Code::DuplicateOperation, o.name.span, format!("operation `{}` defined twice", o.name.text));
        }
    }

    let mut bindings = BTreeMap::new();
    for e in program.contracts() {
        let EntityKind::Contract { contract_type, .. } = &e.kind else { unreachable!() };
        let named: Vec<&&ContractInterface> =
            imported.iter().filter(|i| i.name == contract_type.text && i.chain.as_deref().is_none_or(|c| c == e.chain.text)).collect();
        let chosen = match named.len() {
            0 => {
                cx.error(Code::UnknownContractType, contract_type.span, format!("no imported interface named `{}`", contract_type.text));
                continue;
            }
            1 => named[0],
            _ => {
                let on_chain: Vec<_> = named.iter().filter(|i| i.chain.as_deref() == Some(e.chain.text.as_str())).collect();
                if on_chain.len() != 1 {
                    cx.error(
                        Code::AmbiguousInterface,
                        contract_type.span,
                        format!("{} imported interfaces named `{}` match {}", named.len(), contract_type.text, e.chain.text),
                    );
                    continue;
                }
                on_chain[0]
            }
        };
        bindings.insert(e.name.text.clone(), (*chosen).clone());
    }

    let mut arg_types = BTreeMap::new();
    for op in &program.operations {
        match &op.kind {
            OpKind::Payment { coin, from, to, give, get } => {
                check_payment(&mut cx, coin, from, to, give, get);
            }
            OpKind::Invocation { contract, method, args, invoker } => {
                let c = cx.contract(contract);
                let inv = cx.account(invoker);
                if let (Some(c), Some(inv)) = (c, inv) {
                    if c.chain.text != inv.chain.text {
                        cx.error(
                            Code::ChainMismatch,
                            invoker.span,
                            format!("`{}` lives on {} but `{}` on {}", invoker.text, inv.chain.text, contract.text, c.chain.text),
                        );
                    }
                }
                let Some(iface) = bindings.get(&contract.text).cloned() else {
                    // Argument sources are still checked for verifiability.
                    for a in args {
                        arg_type(&mut cx, &bindings, a);
                    }
                    continue;
                };
                let Some(m) = iface.method(&method.text) else {
                    cx.error(Code::UnknownMethod, method.span, format!("`{}` has no method `{}`", iface.name, method.text));
                    continue;
                };
                if m.params.len() != args.len() {
                    cx.error(
                        Code::Arity,
                        method.span,
                        format!("`{}` takes {} argument(s), {} given", method.text, m.params.len(), args.len()),
                    );
                }
                let mut resolved = Vec::new();
                for (a, p) in args.iter().zip(&m.params) {
                    let Some(actual) = arg_type(&mut cx, &bindings, a) else { continue };
                    let want = iface.map(&p.native);
                    match resolve(&want, &actual) {
                        Some(t) => {
                            if want == TypeMapping::AddressOrString || actual == TypeMapping::AddressOrString {
                                cx.notes.push(Diagnostic::note(
                                    Code::GoStringResolved,
                                    a.span,
                                    format!("Go string resolved as {t} for parameter `{}`", p.name),
                                ));
                            }
                            resolved.push(t);
                        }
                        None => cx.error(
                            Code::IncompatibleArgument,
                            a.span,
                            format!(
                                "argument for `{}` has type {} but the parameter is {} ({})",
                                p.name,
                                show(&actual),
                                show(&want),
                                p.native
                            ),
                        ),
                    }
                }
                arg_types.insert(op.name.text.clone(), resolved);
            }
        }
    }

    let mut edges = BTreeSet::new();
    let mut spans = BTreeMap::new();
    for (a, b) in program.temporal_constraints() {
        let (ia, ib) = (program.op_index(&a.text), program.op_index(&b.text));
        for n in [(a, ia), (b, ib)] {
            if n.1.is_none() {
                cx.error(Code::UndefinedOperation, n.0.span, format!("undefined operation `{}`", n.0.text));
            }
        }
        let (Some(ia), Some(ib)) = (ia, ib) else { continue };
        if ia == ib {
            cx.error(Code::SelfDependency, a.span, format!("`{}` cannot precede itself", a.text));
            continue;
        }
        if edges.contains(&(ib, ia)) {
            cx.error(Code::ConflictingConstraint, a.span, format!("`{}` and `{}` are ordered in both directions", a.text, b.text));
            continue;
        }
        edges.insert((ia, ib));
        spans.entry((ia, ib)).or_insert(a.span);
    }
    if let Some(cycle) = find_cycle(program.operations.len(), &edges) {
        let names: Vec<&str> = cycle.iter().map(|&i| program.operations[i].name.text.as_str()).collect();
        let span = spans.get(&(cycle[0], cycle[1 % cycle.len()])).copied().unwrap_or_default();
        cx.error(Code::Cycle, span, format!("temporal constraints form a cycle: {}", names.join(" -> ")));
    }

    let mut deadlines = BTreeMap::new();
    for (name, spec) in program.deadline_specs() {
        let Some(i) = program.op_index(&name.text) else {
            cx.error(Code::UndefinedOperation, name.span, format!("undefined operation `{}`", name.text));
            continue;
        };
        let amount = match spec {
            DeadlineSpec::Blocks(n) => {
                if !n.is_integer() {
                    cx.error(Code::NonPositive, name.span, format!("block deadline {n} is not a whole number"));
                }
                Some(n)
            }
            DeadlineSpec::Time { amount, .. } => Some(amount),
            DeadlineSpec::Default => None,
        };
        if amount.is_some_and(|a| !a.is_positive()) {
            cx.error(Code::NonPositive, name.span, format!("deadline for `{}` must be positive", name.text));
        }
        if deadlines.insert(i, spec.clone()).is_some() {
            cx.error(Code::DuplicateDeadline, name.span, format!("`{}` has more than one deadline", name.text));
        }
    }

    if !cx.errors.is_empty() {
        cx.errors.sort_by_key(|d| d.span);
        return Err(Diagnostics(cx.errors));
    }
    Ok(ValidatedProgram { program: program.clone(), bindings, arg_types, edges, deadlines, notes: cx.notes })
}

fn show(m: &TypeMapping) -> String {
    match m {
        TypeMapping::Exact(t) => t.to_string(),
        TypeMapping::AddressOrString => "Address|String".into(),
    }
}

/// Pick the unified type both sides agree on. Address wins when either
/// side demands it exactly; otherwise an ambiguous pair settles on String.
fn resolve(param: &TypeMapping, arg: &TypeMapping) -> Option<UnifiedType> {
    let common: Vec<UnifiedType> = param.candidates().into_iter().filter(|t| arg.admits(*t)).collect();
    match common.as_slice() {
        [] => None,
        [one] => Some(*one),
        _ => Some(UnifiedType::String),
    }
}

fn arg_type(cx: &mut Ctx, bindings: &BTreeMap<String, ContractInterface>, a: &Arg) -> Option<TypeMapping> {
    match &a.kind {
        ArgKind::Int(_) | ArgKind::Float(_) => Some(TypeMapping::Exact(UnifiedType::Numeric)),
        ArgKind::Str(_) => Some(TypeMapping::Exact(UnifiedType::String)),
        ArgKind::MethodCall { entity, method } => {
            cx.error(
                Code::UnverifiableArgument,
                a.span,
                format!("`{}.{}()` is a return value, not persistent on-chain state", entity.text, method.text),
            );
            None
        }
        ArgKind::StateVar { entity, prop } => {
            cx.contract(entity)?;
            let iface = bindings.get(&entity.text)?;
            match iface.state_var(&prop.text) {
                Some(v) => Some(iface.map(&v.native)),
                None => {
                    cx.error(
                        Code::UnknownStateVar,
                        prop.span,
                        format!("`{}` declares no public state variable `{}`", iface.name, prop.text),
                    );
                    None
                }
            }
        }
    }
}

fn check_payment(cx: &mut Ctx, coin: &Coin, from: &Name, to: &Name, give: &Coin, get: &Coin) {
    for c in [coin, give, get] {
        if !c.amount.is_positive() {
            cx.error(Code::NonPositive, c.unit.span, format!("amount {} {} must be positive", c.amount, c.unit.text));
        }
    }
    let unit_of = |cx: &mut Ctx, e: Option<&Entity>, n: &Name| -> Option<String> {
        let EntityKind::Account { unit, .. } = &e?.kind else { return None };
        match unit {
            Some(u) => Some(u.text.clone()),
            None => {
                cx.error(Code::MissingUnit, n.span, format!("account `{}` is used in a payment but declares no unit", n.text));
                None
            }
        }
    };
    let payer = cx.account(from);
    let payee = cx.account(to);
    let payer_unit = unit_of(cx, payer, from);
    let payee_unit = unit_of(cx, payee, to);
    if let Some(u) = &payer_unit {
        if coin.unit.text != *u {
            cx.error(Code::UnitMismatch, coin.unit.span, format!("payer `{}` holds {u}, not {}", from.text, coin.unit.text));
        }
        if give.unit.text != *u {
            cx.error(Code::UnitMismatch, give.unit.span, format!("exchange must start from the payer's unit {u}"));
        }
    }
    if let Some(u) = &payee_unit {
        if get.unit.text != *u {
            cx.error(Code::UnitMismatch, get.unit.span, format!("exchange must end in the payee's unit {u}"));
        }
    }
}

/// Some cycle in the graph, listed in edge order, if one exists.
fn find_cycle(n: usize, edges: &BTreeSet<(usize, usize)>) -> Option<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; n];
    let mut stack = Vec::new();
    fn dfs(v: usize, adj: &[Vec<usize>], state: &mut [u8], stack: &mut Vec<usize>) -> Option<Vec<usize>> {
        state[v] = 1;
        stack.push(v);
        for &w in &adj[v] {
            if state[w] == 1 {
                let at = stack.iter().position(|&x| x == w).expect("on stack");
                return Some(stack[at..].to_vec());
            }
            if state[w] == 0 {
                if let Some(c) = dfs(w, adj, state, stack) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        state[v] = 2;
        None
    }
    for v in 0..n {
        if state[v] == 0 {
            if let Some(c) = dfs(v, &adj, &mut state, &mut stack) {
                return Some(c);
            }
        }
    }
    None
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::hsl::iface::parse_contract_interface;
    use crate::hsl::parser::parse_hsl;

    pub(crate) const OPTION_HSL: &str = include_str!("../../fixtures/option/option.hsl");

    pub(crate) fn option_interfaces() -> BTreeMap<String, ContractInterface> {
        let mut m = BTreeMap::new();
        for (file, text) in [
            ("broker.sol", include_str!("../../fixtures/option/broker.sol.iface")),
            ("option.vy", include_str!("../../fixtures/option/option.vy.iface")),
            ("option.go", include_str!("../../fixtures/option/option.go.iface")),
        ] {
            m.insert(file.to_string(), parse_contract_interface(text).unwrap());
        }
        m
    }

    fn check(src: &str) -> Result<ValidatedProgram, Diagnostics> {
        validate(&parse_hsl(src).unwrap(), &option_interfaces())
    }

    #[test]
    fn option_program_validates() {
        let v = check(OPTION_HSL).unwrap();
        assert_eq!(v.arg_types["op4"], vec![UnifiedType::Numeric, UnifiedType::Numeric]);
        assert_eq!(v.edges, BTreeSet::from([(0, 1), (0, 3), (1, 2)]));
        assert_eq!(v.bindings["c2"].language, crate::hsl::Language::Vyper);
        assert_eq!(v.bindings["c3"].language, crate::hsl::Language::Go);
    }

    #[test]
    fn reversed_constraint_is_conflict() {
        let src = OPTION_HSL.replace("op3 after op2", "op3 after op2; op2 before op1");
        let e = check(&src).unwrap_err();
        assert_eq!(e.codes(), vec![Code::ConflictingConstraint]);
    }

    #[test]
    fn longer_cycle_detected() {
        let src = OPTION_HSL.replace("op3 after op2", "op3 after op2; op3 before op1");
        let e = check(&src).unwrap_err();
        assert_eq!(e.codes(), vec![Code::Cycle]);
        assert!(e.0[0].message.contains("op1 -> op2 -> op3"), "{}", e.0[0].message);
    }

    #[test]
    fn return_value_argument_unverifiable() {
        let src = OPTION_HSL.replace("c2.CashSettle(10, c1.StrikePrice)", "c2.CashSettle(10, c1.GetStrikePrice())");
        let e = check(&src).unwrap_err();
        assert_eq!(e.codes(), vec![Code::UnverifiableArgument]);
        assert_eq!(e.0[0].span, Span::new(10, 37));
    }

    #[test]
    fn incompatible_and_unknown_reported_together() {
        let src = OPTION_HSL
            .replace("c2.CashSettle(10, c1.StrikePrice)", "c2.CashSettle(\"ten\", c1.StrikePrice)")
            .replace("c3.CashSettle(5, c1.StrikePrice)", "c3.CashSettle(5, c1.Missing)")
            .replace("using a1", "using a9");
        let e = check(&src).unwrap_err();
        let mut codes = e.codes();
        codes.sort();
        assert_eq!(codes, vec![Code::UndefinedEntity, Code::IncompatibleArgument, Code::UnknownStateVar]);
    }

    #[test]
    fn missing_interface_and_unit() {
        let src = OPTION_HSL.replace("0x47a1..., 0, ycoin", "0x47a1");
        let mut ifaces = option_interfaces();
        ifaces.remove("option.go");
        let e = validate(&parse_hsl(&src).unwrap(), &ifaces).unwrap_err();
        let mut codes = e.codes();
        codes.sort();
        assert_eq!(codes, vec![Code::MissingInterface, Code::UnknownContractType, Code::MissingUnit]);
    }

    #[test]
    fn exchange_units_must_match_accounts() {
        let src = OPTION_HSL.replace("as 0.5 ycoin", "as 0.5 zcoin");
        assert_eq!(check(&src).unwrap_err().codes(), vec![Code::UnitMismatch]);
    }

    #[test]
    fn invoker_must_share_chain() {
        let src = OPTION_HSL.replace("c3.CashSettle(5, c1.StrikePrice) using a3", "c3.CashSettle(5, c1.StrikePrice) using a1");
        assert_eq!(check(&src).unwrap_err().codes(), vec![Code::ChainMismatch]);
    }

    #[test]
    fn duplicate_deadline() {
        let src = OPTION_HSL.replace("op4 deadline 20 mins", "op4 deadline 20 mins; op1 deadline 3 blocks");
        assert_eq!(check(&src).unwrap_err().codes(), vec![Code::DuplicateDeadline]);
    }

    #[test]
    fn go_string_resolution() {
        let mut ifaces = option_interfaces();
        ifaces.insert(
            "reg.go".into(),
            parse_contract_interface("contract Registry lang=go\nvar Owner: string\nfn Register(who: string, tag: string)\n").unwrap(),
        );
        ifaces.insert(
            "wallet.sol".into(),
            parse_contract_interface("contract Wallet lang=solidity\nvar Holder: address\nfn Pay(to: address)\n").unwrap(),
        );
        let src = OPTION_HSL
            .replace("import(\"broker.sol\"", "import(\"reg.go\", \"wallet.sol\", \"broker.sol\"")
            .replace("contract c1", "contract r1 = ChainX::Registry(0x1111)\ncontract w1 = ChainX::Wallet(0x2222)\ncontract c1")
            .replace(
                "op op2 payment",
                "op op5 invocation r1.Register(w1.Holder, \"tag\") using a1\nop op6 invocation w1.Pay(r1.Owner) using a1\nop op2 payment",
            );
        let v = validate(&parse_hsl(&src).unwrap(), &ifaces).unwrap();
        assert_eq!(v.arg_types["op5"], vec![UnifiedType::Address, UnifiedType::String]);
        assert_eq!(v.arg_types["op6"], vec![UnifiedType::Address]);
        assert_eq!(v.notes.len(), 3);
        assert!(v.notes.iter().all(|n| n.code == Code::GoStringResolved));
    }

    #[test]
    fn undefined_operation_in_dependency() {
        let src = OPTION_HSL.replace("op3 after op2", "op3 after op9");
        assert_eq!(check(&src).unwrap_err().codes(), vec![Code::UndefinedOperation]);
    }
}
