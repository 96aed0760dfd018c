//! Recursive-descent parser for HSL programs.
//!
//! ```text
//! hsl        := import+ entity_def+ op_def+ dep_def*
//! import     := 'import' '(' STRING (',' STRING)* ')'
//! entity_def := ('account' | 'contract') NAME '=' CHAIN '::' TYPE '(' ADDR (',' NUMBER)? (',' UNIT)? ')'
//! op_def     := 'op' NAME 'payment' coin 'from' NAME 'to' NAME 'with' coin 'as' coin
//!             | 'op' NAME 'invocation' NAME '.' NAME '(' args? ')' 'using' NAME
//! dep_def    := clause (';' clause)*
//! clause     := names ('before' | 'after') names
//!             | names 'deadline' (NUMBER 'blocks' | 'default' | NUMBER TIME_UNIT)
//! ```

use super::ast::*;
use super::diag::{Code, Diagnostic, Span};
use super::lexer::{lex, Tok, Token};
use crate::value::Decimal;

pub fn parse_hsl(text: &str) -> Result<Program, Diagnostic> {
    let tokens = lex(text)?;
    let end = tokens.last().map(|t| Span::new(t.span.line, t.span.col + 1)).unwrap_or(Span::new(1, 1));
    Parser { tokens, pos: 0, end }.program()
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: Span,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn span(&self) -> Span {
        self.tokens.get(self.pos).map(|t| t.span).unwrap_or(self.end)
    }

    fn err<T>(&self, what: &str) -> PResult<T> {
        let found = match self.peek() {
            Some(t) => t.describe(),
            None => "end of input".to_string(),
        };
        Err(Diagnostic::error(Code::Syntax, self.span(), format!("expected {what}, found {found}")))
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn kw(&mut self, kw: &str) -> PResult<()> {
        if self.is_kw(kw) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(&format!("`{kw}`"))
        }
    }

    fn punct(&mut self, tok: Tok) -> PResult<()> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(&tok.describe())
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn name(&mut self, what: &str) -> PResult<Name> {
        let span = self.span();
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let text = s.clone();
                self.pos += 1;
                Ok(Name { text, span })
            }
            _ => self.err(what),
        }
    }

    fn number(&mut self) -> PResult<(Decimal, bool)> {
        match self.peek() {
            Some(Tok::Number(s)) => {
                let is_int = !s.contains('.');
                let d = s.parse().map_err(|_| Diagnostic::error(Code::Syntax, self.span(), format!("bad number {s}")))?;
                self.pos += 1;
                Ok((d, is_int))
            }
            _ => self.err("a number"),
        }
    }

    fn names(&mut self, what: &str) -> PResult<Vec<Name>> {
        let mut v = vec![self.name(what)?];
        while self.eat(&Tok::Comma) {
            v.push(self.name(what)?);
        }
        Ok(v)
    }

    fn program(&mut self) -> PResult<Program> {
        let mut imports = Vec::new();
        if !self.is_kw("import") {
            return self.err("`import`");
        }
        while self.is_kw("import") {
            self.pos += 1;
            self.punct(Tok::LParen)?;
            loop {
                let span = self.span();
                match self.peek() {
                    Some(Tok::Str(s)) => {
                        imports.push(Name { text: s.clone(), span });
                        self.pos += 1;
                    }
                    _ => return self.err("an import file name"),
                }
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
            self.punct(Tok::RParen)?;
        }

        let mut entities = Vec::new();
        if !(self.is_kw("account") || self.is_kw("contract")) {
            return self.err("`account` or `contract`");
        }
        while self.is_kw("account") || self.is_kw("contract") {
            entities.push(self.entity()?);
        }

        let mut operations = Vec::new();
        if !self.is_kw("op") {
            return self.err("`op`");
        }
        while self.is_kw("op") {
            operations.push(self.operation()?);
        }

        let mut dependencies = Vec::new();
        while self.peek().is_some() {
            dependencies.push(self.clause()?);
            while self.eat(&Tok::Semi) {
                dependencies.push(self.clause()?);
            }
        }
        Ok(Program { imports, entities, operations, dependencies })
    }

    fn entity(&mut self) -> PResult<Entity> {
        let is_account = self.is_kw("account");
        self.pos += 1;
        let name = self.name("an entity name")?;
        self.punct(Tok::Eq)?;
        let chain = self.name("a chain name")?;
        if !chain.text.starts_with("Chain") {
            return Err(Diagnostic::error(Code::Syntax, chain.span, format!("chain names start with `Chain`, got `{}`", chain.text)));
        }
        self.punct(Tok::PathSep)?;
        let ty = self.name("a contract type")?;
        self.punct(Tok::LParen)?;
        let address = match self.peek() {
            Some(Tok::Hex(h)) => h.trim_end_matches("...").to_string(),
            _ => return self.err("an address"),
        };
        self.pos += 1;
        let kind = if is_account {
            if ty.text != "Account" {
                return Err(Diagnostic::error(
                    Code::Syntax,
                    ty.span,
                    format!("accounts are constructed with `Account`, got `{}`", ty.text),
                ));
            }
            let mut balance = None;
            let mut unit = None;
            if self.eat(&Tok::Comma) {
                if matches!(self.peek(), Some(Tok::Number(_))) {
                    balance = Some(self.number()?.0);
                    if self.eat(&Tok::Comma) {
                        unit = Some(self.name("a unit")?);
                    }
                } else {
                    unit = Some(self.name("a balance or unit")?);
                }
            }
            EntityKind::Account { address, balance, unit }
        } else {
            EntityKind::Contract { contract_type: ty, address }
        };
        self.punct(Tok::RParen)?;
        Ok(Entity { name, chain, kind })
    }

    fn coin(&mut self) -> PResult<Coin> {
        let (amount, _) = self.number()?;
        let unit = self.name("a unit")?;
        Ok(Coin { amount, unit })
    }

    fn operation(&mut self) -> PResult<Operation> {
        self.kw("op")?;
        let name = self.name("an operation name")?;
        let kind = if self.is_kw("payment") {
            self.pos += 1;
            let coin = self.coin()?;
            self.kw("from")?;
            let from = self.name("an account")?;
            self.kw("to")?;
            let to = self.name("an account")?;
            self.kw("with")?;
            let give = self.coin()?;
            self.kw("as")?;
            let get = self.coin()?;
            OpKind::Payment { coin, from, to, give, get }
        } else if self.is_kw("invocation") {
            self.pos += 1;
            let contract = self.name("a contract")?;
            self.punct(Tok::Dot)?;
            let method = self.name("a method")?;
            self.punct(Tok::LParen)?;
            let mut args = Vec::new();
            if !self.eat(&Tok::RParen) {
                loop {
                    args.push(self.arg()?);
                    if self.eat(&Tok::RParen) {
                        break;
                    }
                    self.punct(Tok::Comma)?;
                }
            }
            self.kw("using")?;
            let invoker = self.name("an account")?;
            OpKind::Invocation { contract, method, args, invoker }
        } else {
            return self.err("`payment` or `invocation`");
        };
        Ok(Operation { name, kind })
    }

    fn arg(&mut self) -> PResult<Arg> {
        let span = self.span();
        let kind = match self.peek().cloned() {
            Some(Tok::Number(_)) => {
                let (d, is_int) = self.number()?;
                if is_int {
                    ArgKind::Int(d)
                } else {
                    ArgKind::Float(d)
                }
            }
            Some(Tok::Str(s)) => {
                self.pos += 1;
                ArgKind::Str(s)
            }
            Some(Tok::Ident(_)) => {
                let entity = self.name("an entity")?;
                self.punct(Tok::Dot)?;
                let prop = self.name("a property")?;
                if self.eat(&Tok::LParen) {
                    self.punct(Tok::RParen)?;
                    ArgKind::MethodCall { entity, method: prop }
                } else {
                    ArgKind::StateVar { entity, prop }
                }
            }
            _ => return self.err("an argument"),
        };
        Ok(Arg { span, kind })
    }

    fn clause(&mut self) -> PResult<Dependency> {
        let subject = self.names("an operation name")?;
        if self.is_kw("before") || self.is_kw("after") {
            let relation = if self.is_kw("before") { Relation::Before } else { Relation::After };
            self.pos += 1;
            let objects = self.names("an operation name")?;
            return Ok(Dependency::Temporal { subject, relation, objects });
        }
        if self.is_kw("deadline") {
            self.pos += 1;
            if self.is_kw("default") {
                self.pos += 1;
                return Ok(Dependency::Deadline { ops: subject, spec: DeadlineSpec::Default });
            }
            let (amount, _) = self.number()?;
            let unit_name = self.name("a deadline unit")?;
            let spec = match unit_name.text.as_str() {
                "block" | "blocks" => DeadlineSpec::Blocks(amount),
                "s" | "sec" | "secs" | "second" | "seconds" => DeadlineSpec::Time { amount, unit: TimeUnit::Seconds },
                "min" | "mins" | "minute" | "minutes" => DeadlineSpec::Time { amount, unit: TimeUnit::Minutes },
                "h" | "hour" | "hours" => DeadlineSpec::Time { amount, unit: TimeUnit::Hours },
                other => return Err(Diagnostic::error(Code::Syntax, unit_name.span, format!("unknown deadline unit `{other}`"))),
            };
            return Ok(Dependency::Deadline { ops: subject, spec });
        }
        self.err("`before`, `after` or `deadline`")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const OPTION_HSL: &str = r#"import("broker.sol", "option.vy", "option.go")
account a1 = ChainX::Account(0x7019..., 100, xcoin)
account a2 = ChainY::Account(0x47a1..., 0, ycoin)
account a3 = ChainZ::Account(0x61a2..., 50, zcoin)
contract c1 = ChainX::Broker(0xbba7...)
contract c2 = ChainY::Option(0x917f...)
contract c3 = ChainZ::Option(0xefed...)
op op1 invocation c1.GetStrikePrice() using a1
op op2 payment 50 xcoin from a1 to a2 with 1 xcoin as 0.5 ycoin
op op3 invocation c2.CashSettle(10, c1.StrikePrice) using a2
op op4 invocation c3.CashSettle(5, c1.StrikePrice) using a3
op1 before op2, op4; op3 after op2
op1 deadline 10 blocks; op2, op3 deadline default; op4 deadline 20 mins
"#;

    #[test]
    fn option_program_counts() {
        let p = parse_hsl(OPTION_HSL).unwrap();
        assert_eq!(p.imports.len(), 3);
        assert_eq!(p.accounts().count(), 3);
        assert_eq!(p.contracts().count(), 3);
        assert_eq!(p.operations.len(), 4);
        let pairs: Vec<(String, String)> = p.temporal_constraints().iter().map(|(a, b)| (a.text.clone(), b.text.clone())).collect();
        assert_eq!(pairs, vec![("op1".into(), "op2".into()), ("op1".into(), "op4".into()), ("op2".into(), "op3".into())]);
        assert_eq!(p.deadline_specs().len(), 4);
    }

    #[test]
    fn option_program_details() {
        let p = parse_hsl(OPTION_HSL).unwrap();
        match &p.entity("a1").unwrap().kind {
            EntityKind::Account { address, balance, unit } => {
                assert_eq!(address, "0x7019");
                assert_eq!(balance, &Some(Decimal::from_int(100)));
                assert_eq!(unit.as_ref().unwrap().text, "xcoin");
            }
            _ => panic!("a1 is an account"),
        }
        match &p.operations[1].kind {
            OpKind::Payment { coin, get, .. } => {
                assert_eq!(coin.amount, Decimal::from_int(50));
                assert_eq!(get.amount, Decimal::ratio(1, 2));
            }
            _ => panic!("op2 is a payment"),
        }
        match &p.operations[3].kind {
            OpKind::Invocation { args, .. } => {
                assert!(matches!(&args[1].kind, ArgKind::StateVar { entity, prop } if entity.text == "c1" && prop.text == "StrikePrice"));
                assert_eq!(args[1].span, Span::new(11, 36));
            }
            _ => panic!("op4 is an invocation"),
        }
        assert_eq!(p.deadline_specs()[3].1, &DeadlineSpec::Time { amount: Decimal::from_int(20), unit: TimeUnit::Minutes });
    }

    #[test]
    fn deterministic() {
        assert_eq!(parse_hsl(OPTION_HSL).unwrap(), parse_hsl(OPTION_HSL).unwrap());
    }

    #[test]
    fn empty_input_needs_import() {
        let e = parse_hsl("").unwrap_err();
        assert_eq!(e.code, Code::Syntax);
        assert!(e.message.contains("`import`"));
    }

    #[test]
    fn payment_needs_exchange_clause() {
        let src = OPTION_HSL.replace(" with 1 xcoin as 0.5 ycoin", "");
        let e = parse_hsl(&src).unwrap_err();
        assert_eq!(e.span.line, 10);
        assert!(e.message.contains("`with`"), "{}", e.message);
    }

    #[test]
    fn method_call_arguments_parse() {
        let src = OPTION_HSL.replace("c2.CashSettle(10, c1.StrikePrice)", "c2.CashSettle(10, c1.GetStrikePrice())");
        let p = parse_hsl(&src).unwrap();
        match &p.operations[2].kind {
            OpKind::Invocation { args, .. } => assert!(matches!(args[1].kind, ArgKind::MethodCall { .. })),
            _ => unreachable!(),
        }
    }

    #[test]
    fn comments_ignored() {
        let src = format!("# header\n{}", OPTION_HSL.replace("op op1", "# first op\nop op1"));
        assert_eq!(parse_hsl(&src).unwrap().operations.len(), 4);
    }

    #[test]
    fn time_deadlines() {
        let src = OPTION_HSL.replace("op4 deadline 20 mins", "op4 deadline 90 seconds");
        let p = parse_hsl(&src).unwrap();
        assert!(matches!(p.deadline_specs()[3].1, DeadlineSpec::Time { unit: TimeUnit::Seconds, .. }));
    }
}
