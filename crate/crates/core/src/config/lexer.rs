use std::path::Path;
use std::sync::Arc;

use super::ast::{Reference, SourceSpan, TemplatePart};
use super::ConfigError;
use crate::address::is_valid_label;

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Ident(String),
    /// A quoted string, already split into literal and `${...}` segments.
    Str(Vec<TemplatePart>),
    Int(i64),
    Float(f64),
    Bool(bool),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Equals,
    Comma,
    Dot,
}

impl TokenKind {
    pub fn describe(&self) -> String {
        match self {
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Str(_) => "string".to_string(),
            TokenKind::Int(i) => format!("number `{i}`"),
            TokenKind::Float(f) => format!("number `{f}`"),
            TokenKind::Bool(b) => format!("`{b}`"),
            TokenKind::LBrace => "`{`".to_string(),
            TokenKind::RBrace => "`}`".to_string(),
            TokenKind::LBracket => "`[`".to_string(),
            TokenKind::RBracket => "`]`".to_string(),
            TokenKind::Equals => "`=`".to_string(),
            TokenKind::Comma => "`,`".to_string(),
            TokenKind::Dot => "`.`".to_string(),
        }
    }

    /// The literal text of a string token, if it has no interpolations.
    pub fn plain_string(&self) -> Option<String> {
        match self {
            TokenKind::Str(parts) => {
                let mut out = String::new();
                for part in parts {
                    match part {
                        TemplatePart::Literal(s) => out.push_str(s),
                        TemplatePart::Reference(_) => return None,
                    }
                }
                Some(out)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: SourceSpan,
}

struct Cursor {
    chars: Vec<char>,
    pos: usize,
    file: Arc<Path>,
    line: u32,
    column: u32,
}

impl Cursor {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_at(&self, offset: usize) -> Option<char> {
        self.chars.get(self.pos + offset).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn span(&self) -> SourceSpan {
        SourceSpan::new(self.file.clone(), self.line, self.column)
    }
}

/// Splits `source` into tokens. Whitespace and `#` comments are dropped.
pub fn tokenize(source: &str, file: &Path) -> Result<Vec<Token>, ConfigError> {
    let mut cur = Cursor {
        chars: source.chars().collect(),
        pos: 0,
        file: Arc::from(file),
        line: 1,
        column: 1,
    };
    let mut tokens = Vec::new();
    while let Some(c) = cur.peek() {
        let span = cur.span();
        let single = match c {
            '{' => Some(TokenKind::LBrace),
            '}' => Some(TokenKind::RBrace),
            '[' => Some(TokenKind::LBracket),
            ']' => Some(TokenKind::RBracket),
            '=' => Some(TokenKind::Equals),
            ',' => Some(TokenKind::Comma),
            '.' => Some(TokenKind::Dot),
            _ => None,
        };
        if let Some(kind) = single {
            cur.bump();
            tokens.push(Token { kind, span });
            continue;
        }
        if c.is_whitespace() {
            cur.bump();
        } else if c == '#' {
            while let Some(c) = cur.peek() {
                if c == '\n' {
                    break;
                }
                cur.bump();
            }
        } else if c == '"' {
            cur.bump();
            let parts = lex_string(&mut cur, &span)?;
            tokens.push(Token {
                kind: TokenKind::Str(parts),
                span,
            });
        } else if c.is_ascii_digit() || c == '-' {
            let kind = lex_number(&mut cur, &span)?;
            tokens.push(Token { kind, span });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let mut ident = String::new();
            while let Some(c) = cur.peek() {
                if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                    ident.push(c);
                    cur.bump();
                } else {
                    break;
                }
            }
            let kind = match ident.as_str() {
                "true" => TokenKind::Bool(true),
                "false" => TokenKind::Bool(false),
                _ => TokenKind::Ident(ident),
            };
            tokens.push(Token { kind, span });
        } else {
            return Err(ConfigError::Syntax {
                span,
                message: format!("illegal character `{c}`"),
            });
        }
    }
    Ok(tokens)
}

fn lex_number(cur: &mut Cursor, span: &SourceSpan) -> Result<TokenKind, ConfigError> {
    let mut text = String::new();
    if cur.peek() == Some('-') {
        text.push('-');
        cur.bump();
    }
    let mut is_float = false;
    while let Some(c) = cur.peek() {
        let accept = c.is_ascii_digit()
            || (c == '.' && !is_float && !text.contains(['e', 'E']))
            || ((c == 'e' || c == 'E') && !text.contains(['e', 'E']))
            || ((c == '+' || c == '-') && text.ends_with(['e', 'E']));
        if !accept {
            break;
        }
        if c == '.' || c == 'e' || c == 'E' {
            is_float = true;
        }
        text.push(c);
        cur.bump();
    }
    let bad = || ConfigError::Syntax {
        span: span.clone(),
        message: format!("malformed number `{text}`"),
    };
    if is_float {
        // A trailing dot would be a reference separator, not a fraction.
        if text.ends_with(['.', 'e', 'E', '+', '-']) {
            return Err(bad());
        }
        text.parse::<f64>().map(TokenKind::Float).map_err(|_| bad())
    } else {
        text.parse::<i64>().map(TokenKind::Int).map_err(|_| bad())
    }
}

fn lex_string(cur: &mut Cursor, start: &SourceSpan) -> Result<Vec<TemplatePart>, ConfigError> {
    let mut parts = Vec::new();
    let mut lit = String::new();
    loop {
        let here = cur.span();
        let Some(c) = cur.bump() else {
            return Err(ConfigError::Syntax {
                span: start.clone(),
                message: "unterminated string".to_string(),
            });
        };
        match c {
            '"' => break,
            '\n' => {
                return Err(ConfigError::Syntax {
                    span: start.clone(),
                    message: "unterminated string".to_string(),
                })
            }
            '\\' => {
                let escaped = match cur.bump() {
                    Some('n') => '\n',
                    Some('t') => '\t',
                    Some('r') => '\r',
                    Some('"') => '"',
                    Some('\\') => '\\',
                    Some('$') => '$',
                    other => {
                        return Err(ConfigError::Syntax {
                            span: here,
                            message: format!(
                                "invalid escape `\\{}`",
                                other.map(String::from).unwrap_or_default()
                            ),
                        })
                    }
                };
                lit.push(escaped);
            }
            '$' if cur.peek() == Some('$') && cur.peek_at(1) == Some('{') => {
                cur.bump();
                cur.bump();
                lit.push_str("${");
            }
            '$' if cur.peek() == Some('{') => {
                cur.bump();
                let mut inner = String::new();
                loop {
                    match cur.peek() {
                        Some('}') => {
                            cur.bump();
                            break;
                        }
                        Some('"') | Some('\n') | None => {
                            return Err(ConfigError::Syntax {
                                span: here,
                                message: "`${` without closing `}`".to_string(),
                            })
                        }
                        Some(c) => {
                            inner.push(c);
                            cur.bump();
                        }
                    }
                }
                if !lit.is_empty() {
                    parts.push(TemplatePart::Literal(std::mem::take(&mut lit)));
                }
                parts.push(TemplatePart::Reference(parse_interpolation(&inner, &here)?));
            }
            c => lit.push(c),
        }
    }
    if !lit.is_empty() || parts.is_empty() {
        parts.push(TemplatePart::Literal(lit));
    }
    Ok(parts)
}

fn parse_interpolation(inner: &str, span: &SourceSpan) -> Result<Reference, ConfigError> {
    let parts: Vec<&str> = inner.trim().split('.').collect();
    if parts.len() < 2 || !parts.iter().all(|p| is_valid_label(p)) {
        return Err(ConfigError::Syntax {
            span: span.clone(),
            message: format!("`${{{inner}}}` is not a reference (expected a dotted path)"),
        });
    }
    Ok(Reference::new(parts))
}

/// Splits already-unescaped text (as found in JSON strings) into template
/// parts using the same `${ref}` and `$${` rules as native strings.
pub fn template_parts(text: &str, span: &SourceSpan) -> Result<Vec<TemplatePart>, ConfigError> {
    let mut parts = Vec::new();
    let mut lit = String::new();
    let mut rest = text;
    while let Some(pos) = rest.find('$') {
        lit.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("$${") {
            lit.push_str("${");
            rest = after;
        } else if let Some(after) = tail.strip_prefix("${") {
            let Some(close) = after.find('}') else {
                return Err(ConfigError::Syntax {
                    span: span.clone(),
                    message: "`${` without closing `}`".to_string(),
                });
            };
            if !lit.is_empty() {
                parts.push(TemplatePart::Literal(std::mem::take(&mut lit)));
            }
            parts.push(TemplatePart::Reference(parse_interpolation(
                &after[..close],
                span,
            )?));
            rest = &after[close + 1..];
        } else {
            lit.push('$');
            rest = &tail[1..];
        }
    }
    lit.push_str(rest);
    if !lit.is_empty() || parts.is_empty() {
        parts.push(TemplatePart::Literal(lit));
    }
    Ok(parts)
}
