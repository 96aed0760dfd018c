use std::collections::{BTreeMap, BTreeSet};

use super::config::{Party, VesConfig};
use super::tdg::*;
use crate::hsl::ast::{ArgKind, DeadlineSpec, Entity, EntityKind, OpKind, TimeUnit};
use crate::hsl::{Code, Diagnostic, Diagnostics, Span, ValidatedProgram};
use crate::value::{Decimal, Value};

/// Convert a deadline spec into NSB blocks. Time intervals are rounded up.
pub fn deadline_to_blocks(spec: &DeadlineSpec, config: &VesConfig) -> Result<u64, String> {
    let blocks = match spec {
        DeadlineSpec::Blocks(n) => n.clone(),
        DeadlineSpec::Default => Decimal::from(config.default_deadline_blocks),
        DeadlineSpec::Time { amount, unit } => {
            let minutes = match unit {
                TimeUnit::Seconds => amount.div(&Decimal::from_int(60)).expect("nonzero"),
                TimeUnit::Minutes => amount.clone(),
                TimeUnit::Hours => amount.mul(&Decimal::from_int(60)),
            };
            minutes.mul(&config.blocks_per_minute).ceil()
        }
    };
    match blocks.to_u64() {
        Some(b) if b >= 1 => Ok(b),
        _ => Err(format!("deadline converts to {blocks} blocks; need a positive whole number")),
    }
}

/// One wrapper before seq assignment.
struct Leg {
    op: usize,
    leg: usize,
    from: AccountRef,
    to: AccountRef,
    chain: String,
    payload: Draft,
    span: Span,
}

enum Draft {
    Payment { value: u64, unit: String },
    Invocation { method: String, args: Vec<DraftArg> },
}

enum DraftArg {
    Literal(Value),
    State { contract: String, var: String, span: Span },
}

fn account_ref(e: &Entity, owner: Option<Party>) -> AccountRef {
    let address = match &e.kind {
        EntityKind::Account { address, .. } | EntityKind::Contract { address, .. } => address.clone(),
    };
    AccountRef { chain: e.chain.text.clone(), address, owner }
}

fn unit_of(e: &Entity) -> Option<&str> {
    match &e.kind {
        EntityKind::Account { unit, .. } => unit.as_ref().map(|u| u.text.as_str()),
        _ => None,
    }
}

/// Lower a validated program into a transaction dependency graph.
pub fn compile(program: &ValidatedProgram, config: &VesConfig) -> Result<Tdg, Diagnostics> {
    let p = &program.program;
    let mut errors = Vec::new();
    let entity = |name: &str| p.entity(name).expect("validated reference");

    for e in &p.entities {
        if !config.reachable.contains(&e.chain.text) {
            errors.push(Diagnostic::error(Code::UnreachableChain, e.chain.span, format!("{} is not reachable by this VES", e.chain.text)));
        }
    }
    if !config.reachable.contains(&config.isc_chain) {
        errors.push(Diagnostic::error(Code::UnreachableChain, Span::default(), format!("ISC chain {} is not reachable", config.isc_chain)));
    }

    let relay = |chain: &str, span: Span, errors: &mut Vec<Diagnostic>| -> AccountRef {
        match config.relay.get(chain) {
            Some(a) => AccountRef { chain: chain.to_string(), address: a.clone(), owner: Some(Party::Ves) },
            None => {
                errors.push(Diagnostic::error(Code::MissingRelay, span, format!("no relay account configured on {chain}")));
                AccountRef { chain: chain.to_string(), address: String::new(), owner: Some(Party::Ves) }
            }
        }
    };
    let whole = |d: &Decimal, span: Span, what: &str, errors: &mut Vec<Diagnostic>| -> u64 {
        match d.to_u64() {
            Some(v) => v,
            None => {
                errors.push(Diagnostic::error(Code::NonIntegralAmount, span, format!("{what} {d} is not a whole number of base units")));
                0
            }
        }
    };

    let mut legs: Vec<Leg> = Vec::new();
    for (oi, op) in p.operations.iter().enumerate() {
        let span = op.name.span;
        match &op.kind {
            OpKind::Invocation { contract, method, args, invoker } => {
                let c = entity(&contract.text);
                let inv = entity(&invoker.text);
                let args = args
                    .iter()
                    .map(|a| match &a.kind {
                        ArgKind::Int(d) | ArgKind::Float(d) => DraftArg::Literal(Value::Num(d.clone())),
                        ArgKind::Str(s) => DraftArg::Literal(Value::Str(s.clone())),
                        ArgKind::StateVar { entity: e, prop } => {
                            DraftArg::State { contract: e.text.clone(), var: prop.text.clone(), span: a.span }
                        }
                        ArgKind::MethodCall { .. } => unreachable!("rejected by validation"),
                    })
                    .collect();
                legs.push(Leg {
                    op: oi,
                    leg: 0,
                    from: account_ref(inv, Some(Party::Client)),
                    to: account_ref(c, None),
                    chain: c.chain.text.clone(),
                    payload: Draft::Invocation { method: method.text.clone(), args },
                    span,
                });
            }
            OpKind::Payment { coin, from, to, give, get } => {
                let payer = entity(&from.text);
                let payee = entity(&to.text);
                let (pu, qu) = (unit_of(payer).unwrap_or_default(), unit_of(payee).unwrap_or_default());
                let credit = coin.amount.mul(&get.amount).div(&give.amount).expect("validated positive");
                let debit = whole(&coin.amount, coin.unit.span, "payment", &mut errors);
                let credit = whole(&credit, get.unit.span, "converted payment", &mut errors);
                if payer.chain.text == payee.chain.text {
                    if pu != qu {
                        errors.push(Diagnostic::error(
                            Code::UnitMismatch,
                            get.unit.span,
                            format!("same-chain payment cannot convert {pu} to {qu}"),
                        ));
                    }
                    legs.push(Leg {
                        op: oi,
                        leg: 0,
                        from: account_ref(payer, Some(Party::Client)),
                        to: account_ref(payee, Some(Party::Client)),
                        chain: payer.chain.text.clone(),
                        payload: Draft::Payment { value: debit, unit: pu.to_string() },
                        span,
                    });
                } else {
                    let src_relay = relay(&payer.chain.text, span, &mut errors);
                    let dst_relay = relay(&payee.chain.text, span, &mut errors);
                    legs.push(Leg {
                        op: oi,
                        leg: 0,
                        from: account_ref(payer, Some(Party::Client)),
                        to: src_relay,
                        chain: payer.chain.text.clone(),
                        payload: Draft::Payment { value: debit, unit: pu.to_string() },
                        span,
                    });
                    legs.push(Leg {
                        op: oi,
                        leg: 1,
                        from: dst_relay,
                        to: account_ref(payee, Some(Party::Client)),
                        chain: payee.chain.text.clone(),
                        payload: Draft::Payment { value: credit, unit: qu.to_string() },
                        span,
                    });
                }
            }
        }
    }

    // Wrapper-level edges over leg indices.
    let mut raw_edges = BTreeSet::new();
    for &(a, b) in &program.edges {
        for (i, la) in legs.iter().enumerate().filter(|(_, l)| l.op == a) {
            for (j, _) in legs.iter().enumerate().filter(|(_, l)| l.op == b) {
                let _ = la;
                raw_edges.insert((i, j));
            }
        }
    }
    for i in 0..legs.len() {
        if i + 1 < legs.len() && legs[i].op == legs[i + 1].op {
            raw_edges.insert((i, i + 1));
        }
    }

    // Kahn's algorithm, ready set ordered by (op, leg).
    let n = legs.len();
    let mut indeg = vec![0usize; n];
    for &(_, b) in &raw_edges {
        indeg[b] += 1;
    }
    let mut ready: BTreeSet<(usize, usize, usize)> = (0..n).filter(|&i| indeg[i] == 0).map(|i| (legs[i].op, legs[i].leg, i)).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(first) = ready.iter().next().copied() {
        ready.remove(&first);
        let i = first.2;
        order.push(i);
        for &(a, b) in &raw_edges {
            if a == i {
                indeg[b] -= 1;
                if indeg[b] == 0 {
                    ready.insert((legs[b].op, legs[b].leg, b));
                }
            }
        }
    }
    assert_eq!(order.len(), n, "validated op graph is acyclic");
    let mut seq_of = vec![0u32; n];
    for (pos, &i) in order.iter().enumerate() {
        seq_of[i] = pos as u32 + 1;
    }
    let edges: BTreeSet<(u32, u32)> = raw_edges.iter().map(|&(a, b)| (seq_of[a], seq_of[b])).collect();
    let preds = |s: u32| edges.iter().filter(move |e| e.1 == s).map(|e| e.0);
    let ancestors = |s: u32| {
        let mut out = BTreeSet::new();
        let mut stack: Vec<u32> = preds(s).collect();
        while let Some(x) = stack.pop() {
            if out.insert(x) {
                stack.extend(preds(x));
            }
        }
        out
    };

    let mut nonces: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut wrappers = Vec::with_capacity(n);
    for &i in &order {
        let leg = &legs[i];
        let seq = seq_of[i];
        let mut slots = BTreeSet::new();
        let payload = match &leg.payload {
            Draft::Payment { value, unit } => Payload::Payment { value: *value, unit: unit.clone() },
            Draft::Invocation { method, args } => {
                let up = ancestors(seq);
                let args = args
                    .iter()
                    .map(|a| match a {
                        DraftArg::Literal(v) => WrapperArg::Literal(v.clone()),
                        DraftArg::State { contract, var, span } => {
                            let c = account_ref(entity(contract), None);
                            let producer = up.iter().rev().copied().find(|&s| {
                                let l = &legs[order[s as usize - 1]];
                                matches!(l.payload, Draft::Invocation { .. }) && l.to.address == c.address && l.to.chain == c.chain
                            });
                            match producer {
                                Some(s) => {
                                    slots.insert(StateSlot { seq: s, contract: c.address.clone(), var: var.clone() });
                                    WrapperArg::State { seq: s, contract: c.address, var: var.clone() }
                                }
                                None => {
                                    errors.push(Diagnostic::error(
                                        Code::UnanchoredStateRef,
                                        *span,
                                        format!("`{contract}.{var}` is read without an upstream invocation of `{contract}`"),
                                    ));
                                    WrapperArg::Literal(Value::Bool(false))
                                }
                            }
                        }
                    })
                    .collect();
                Payload::Invocation { method: method.clone(), args }
            }
        };

        let (amt, rate) = match &payload {
            Payload::Payment { value, unit } => match config.rates.get(unit) {
                Some(r) => {
                    let conv = Decimal::from(*value).mul(r);
                    let v = conv.to_u64().unwrap_or_else(|| {
                        errors.push(Diagnostic::error(
                            Code::NonIntegralAmount,
                            leg.span,
                            format!("{value} {unit} is {conv} {}, not whole", config.isc_unit),
                        ));
                        0
                    });
                    (v + config.fee_allowance, Some(r.clone()))
                }
                None => {
                    errors.push(Diagnostic::error(Code::MissingRate, leg.span, format!("no rate from {unit} to {}", config.isc_unit)));
                    (0, None)
                }
            },
            Payload::Invocation { .. } => (config.fee_allowance, None),
        };

        let originator = leg.from.owner.expect("senders are party-owned");
        let dst = match config.refund_account(originator) {
            Some(a) => AccountRef { chain: config.isc_chain.clone(), address: a.to_string(), owner: Some(originator) },
            None => {
                errors.push(Diagnostic::error(Code::MissingRefundAccount, Span::default(), format!("no refund account for {originator}")));
                AccountRef { chain: config.isc_chain.clone(), address: String::new(), owner: Some(originator) }
            }
        };

        let deadline_blocks = match deadline_to_blocks(program.deadline(leg.op), config) {
            Ok(b) => b,
            Err(msg) => {
                errors.push(Diagnostic::error(Code::NonPositive, leg.span, msg));
                1
            }
        };

        let key = (leg.from.chain.clone(), leg.from.address.clone());
        let nonce = nonces.entry(key).or_insert(0);
        let this_nonce = *nonce;
        *nonce += 1;

        wrappers.push(TransactionWrapper {
            from: leg.from.clone(),
            to: leg.to.clone(),
            seq,
            meta: Meta {
                amt,
                dst,
                rate,
                payload,
                state_proof_slots: slots.into_iter().collect(),
                deadline_blocks,
                chain: leg.chain.clone(),
                nonce: this_nonce,
                op: p.operations[leg.op].name.text.clone(),
            },
        });
    }

    if !errors.is_empty() {
        errors.sort_by_key(|d| d.span);
        errors.dedup();
        return Err(Diagnostics(errors));
    }
    Ok(Tdg {
        session: SessionParams {
            isc_chain: config.isc_chain.clone(),
            isc_unit: config.isc_unit.clone(),
            default_deadline_blocks: config.default_deadline_blocks,
        },
        wrappers,
        edges: edges.into_iter().collect(),
    })
}
