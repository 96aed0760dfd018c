use super::diag::{Code, Diagnostic, Span};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    /// Decimal literal text, e.g. `50` or `0.5`.
    Number(String),
    /// `0x`-prefixed literal, possibly with a trailing `...` elision.
    Hex(String),
    Str(String),
    LParen,
    RParen,
    Comma,
    Semi,
    Dot,
    Eq,
    PathSep,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Number(s) | Tok::Hex(s) => format!("`{s}`"),
            Tok::Str(s) => format!("{s:?}"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Eq => "`=`".into(),
            Tok::PathSep => "`::`".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

pub fn lex(text: &str) -> Result<Vec<Token>, Diagnostic> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    while i < chars.len() {
        let c = chars[i];
        let span = Span::new(line, col);
        let start = i;
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            c if c.is_whitespace() => {
                i += 1;
                col += 1;
                continue;
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            '(' | ')' | ',' | ';' | '=' => {
                i += 1;
                out.push(Token {
                    tok: match c {
                        '(' => Tok::LParen,
                        ')' => Tok::RParen,
                        ',' => Tok::Comma,
                        ';' => Tok::Semi,
                        _ => Tok::Eq,
                    },
                    span,
                });
            }
            ':' if chars.get(i + 1) == Some(&':') => {
                i += 2;
                out.push(Token { tok: Tok::PathSep, span });
            }
            '.' => {
                i += 1;
                out.push(Token { tok: Tok::Dot, span });
            }
            '"' => {
                i += 1;
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some('\n') | None => {
                            return Err(Diagnostic::error(Code::Syntax, span, "unterminated string"));
                        }
                        Some(ch) => {
                            s.push(*ch);
                            i += 1;
                        }
                    }
                }
                out.push(Token { tok: Tok::Str(s), span });
            }
            '0' if matches!(chars.get(i + 1), Some('x') | Some('X')) => {
                i += 2;
                while i < chars.len() && chars[i].is_ascii_hexdigit() {
                    i += 1;
                }
                if i == start + 2 {
                    return Err(Diagnostic::error(Code::Syntax, span, "empty hex literal"));
                }
                // Addresses in examples are often elided as `0x7019...`.
                if chars[i..].starts_with(&['.', '.', '.']) {
                    i += 3;
                }
                out.push(Token { tok: Tok::Hex(chars[start..i].iter().collect()), span });
            }
            c if c.is_ascii_digit() => {
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if chars.get(i) == Some(&'.') && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                out.push(Token { tok: Tok::Number(chars[start..i].iter().collect()), span });
            }
            c if c.is_alphabetic() || c == '_' => {
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), span });
            }
            other => {
                return Err(Diagnostic::error(Code::Syntax, span, format!("unexpected character {other:?}")));
            }
        }
        col += (i - start) as u32;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_and_positions() {
        let toks = lex("account a1 = ChainX::Account(0x7019..., 100, xcoin) # c\nop").unwrap();
        let kinds: Vec<_> = toks.iter().map(|t| t.tok.clone()).collect();
        assert_eq!(kinds[3], Tok::Ident("ChainX".into()));
        assert_eq!(kinds[4], Tok::PathSep);
        assert_eq!(kinds[7], Tok::Hex("0x7019...".into()));
        assert_eq!(toks.last().unwrap().span, Span::new(2, 1));
        assert_eq!(toks[1].span, Span::new(1, 9));
    }

    #[test]
    fn decimals_and_member_access() {
        let toks = lex("0.5 c1.StrikePrice").unwrap();
        assert_eq!(toks[0].tok, Tok::Number("0.5".into()));
        assert_eq!(toks[2].tok, Tok::Dot);
    }

    #[test]
    fn bad_character() {
        let e = lex("op @").unwrap_err();
        assert_eq!(e.span, Span::new(1, 4));
    }
}
