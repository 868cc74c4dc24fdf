use std::collections::BTreeMap;
use std::path::Path;

use super::ast::{Attribute, Block, BlockKind, Expression, Literal, Reference, SourceSpan};
use super::lexer::{tokenize, Token, TokenKind};
use super::ConfigError;
use crate::address::is_valid_label;

/// Parses a token stream into top-level blocks, in source order.
pub fn parse(tokens: &[Token]) -> Result<Vec<Block>, ConfigError> {
    let mut p = Parser { tokens, pos: 0 };
    let mut blocks = Vec::new();
    while let Some(tok) = p.peek() {
        let TokenKind::Ident(keyword) = &tok.kind else {
            return Err(p.unexpected(tok, "a block keyword"));
        };
        let Some(kind) = BlockKind::top_level(keyword) else {
            return Err(ConfigError::Syntax {
                span: tok.span.clone(),
                message: format!("unknown block kind `{keyword}`"),
            });
        };
        p.pos += 1;
        blocks.push(p.block(kind, tok.span.clone())?);
    }
    Ok(blocks)
}

/// Tokenizes and parses native-syntax source text.
pub fn parse_source(source: &str, file: &Path) -> Result<Vec<Block>, ConfigError> {
    parse(&tokenize(source, file)?)
}

/// Parses a lone expression, as written on the right of `=`.
pub fn parse_expression(source: &str) -> Result<Expression, ConfigError> {
    let tokens = tokenize(source, Path::new("<expression>"))?;
    let mut p = Parser {
        tokens: &tokens,
        pos: 0,
    };
    let expr = p.expr()?;
    if let Some(tok) = p.peek() {
        return Err(p.unexpected(tok, "end of expression"));
    }
    Ok(expr)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn peek_kind(&self, offset: usize) -> Option<&'a TokenKind> {
        self.tokens.get(self.pos + offset).map(|t| &t.kind)
    }

    fn next(&mut self, expected: &str) -> Result<&'a Token, ConfigError> {
        match self.tokens.get(self.pos) {
            Some(tok) => {
                self.pos += 1;
                Ok(tok)
            }
            None => Err(self.eof(expected)),
        }
    }

    fn eof(&self, expected: &str) -> ConfigError {
        let span = self
            .tokens
            .last()
            .map(|t| t.span.clone())
            .unwrap_or_else(|| SourceSpan::start_of(Path::new("<input>").into()));
        ConfigError::Syntax {
            span,
            message: format!("unexpected end of input, expected {expected}"),
        }
    }

    fn unexpected(&self, tok: &Token, expected: &str) -> ConfigError {
        ConfigError::Syntax {
            span: tok.span.clone(),
            message: format!("unexpected {}, expected {expected}", tok.kind.describe()),
        }
    }

    fn expect(&mut self, kind: TokenKind, expected: &str) -> Result<&'a Token, ConfigError> {
        let tok = self.next(expected)?;
        if tok.kind == kind {
            Ok(tok)
        } else {
            Err(self.unexpected(tok, expected))
        }
    }

    /// Parses labels and body; the keyword has been consumed.
    fn block(&mut self, kind: BlockKind, span: SourceSpan) -> Result<Block, ConfigError> {
        let mut labels = Vec::new();
        while let Some(tok) = self.peek() {
            if !matches!(tok.kind, TokenKind::Str(_)) {
                break;
            }
            let Some(label) = tok.kind.plain_string() else {
                return Err(ConfigError::Syntax {
                    span: tok.span.clone(),
                    message: "block labels cannot contain interpolation".to_string(),
                });
            };
            if !is_valid_label(&label) {
                return Err(ConfigError::Syntax {
                    span: tok.span.clone(),
                    message: format!("invalid block label `{label}`"),
                });
            }
            labels.push(label);
            self.pos += 1;
        }
        let wanted = kind.label_count();
        if wanted.is_some_and(|n| n != labels.len()) || labels.len() > 2 {
            return Err(ConfigError::Syntax {
                span,
                message: format!(
                    "`{kind}` block takes {} label(s), found {}",
                    wanted.unwrap_or(2),
                    labels.len()
                ),
            });
        }
        self.expect(TokenKind::LBrace, "`{`")?;
        let mut body: Vec<Attribute> = Vec::new();
        let mut nested_blocks = Vec::new();
        loop {
            let tok = self.next("an attribute, a block or `}`")?;
            let name = match &tok.kind {
                TokenKind::RBrace => break,
                TokenKind::Ident(name) => name,
                _ => return Err(self.unexpected(tok, "an attribute, a block or `}`")),
            };
            match self.peek_kind(0) {
                Some(TokenKind::Equals) => {
                    self.pos += 1;
                    if body.iter().any(|a| &a.name == name) {
                        return Err(ConfigError::Syntax {
                            span: tok.span.clone(),
                            message: format!("duplicate attribute `{name}`"),
                        });
                    }
                    let expr = self.expr()?;
                    body.push(Attribute {
                        name: name.clone(),
                        expr,
                        span: tok.span.clone(),
                    });
                }
                Some(TokenKind::Str(_)) | Some(TokenKind::LBrace) => {
                    let nested = self.block(BlockKind::Nested(name.clone()), tok.span.clone())?;
                    nested_blocks.push(nested);
                }
                _ => match self.peek() {
                    Some(next) => return Err(self.unexpected(next, "`=` or a block body")),
                    None => return Err(self.eof("`=` or a block body")),
                },
            }
        }
        Ok(Block {
            kind,
            labels,
            body,
            nested_blocks,
            span,
        })
    }

    fn expr(&mut self) -> Result<Expression, ConfigError> {
        let tok = self.next("an expression")?;
        Ok(match &tok.kind {
            TokenKind::Str(parts) => Expression::from_string_parts(parts.clone()),
            TokenKind::Int(i) => Expression::Literal(Literal::Int(*i)),
            TokenKind::Float(f) => Expression::Literal(Literal::Float(*f)),
            TokenKind::Bool(b) => Expression::Literal(Literal::Bool(*b)),
            TokenKind::LBracket => {
                let mut items = Vec::new();
                loop {
                    if self.peek_kind(0) == Some(&TokenKind::RBracket) {
                        self.pos += 1;
                        break;
                    }
                    items.push(self.expr()?);
                    let sep = self.next("`,` or `]`")?;
                    match sep.kind {
                        TokenKind::Comma => {}
                        TokenKind::RBracket => break,
                        _ => return Err(self.unexpected(sep, "`,` or `]`")),
                    }
                }
                Expression::List(items)
            }
            TokenKind::LBrace => {
                let mut entries = BTreeMap::new();
                loop {
                    let key_tok = self.next("a map key or `}`")?;
                    let key = match &key_tok.kind {
                        TokenKind::RBrace => break,
                        TokenKind::Ident(k) => k.clone(),
                        k @ TokenKind::Str(_) => match k.plain_string() {
                            Some(k) => k,
                            None => return Err(self.unexpected(key_tok, "a map key")),
                        },
                        _ => return Err(self.unexpected(key_tok, "a map key or `}`")),
                    };
                    self.expect(TokenKind::Equals, "`=`")?;
                    let value = self.expr()?;
                    if entries.insert(key.clone(), value).is_some() {
                        return Err(ConfigError::Syntax {
                            span: key_tok.span.clone(),
                            message: format!("duplicate map key `{key}`"),
                        });
                    }
                    if self.peek_kind(0) == Some(&TokenKind::Comma) {
                        self.pos += 1;
                    }
                }
                Expression::Map(entries)
            }
            TokenKind::Ident(first) => {
                let mut parts = vec![first.clone()];
                while self.peek_kind(0) == Some(&TokenKind::Dot) {
                    self.pos += 1;
                    let seg = self.next("an identifier after `.`")?;
                    match &seg.kind {
                        TokenKind::Ident(s) => parts.push(s.clone()),
                        _ => return Err(self.unexpected(seg, "an identifier after `.`")),
                    }
                }
                if parts.len() < 2 {
                    return Err(ConfigError::Syntax {
                        span: tok.span.clone(),
                        message: format!(
                            "bare word `{first}` is not a value; references need at least two segments"
                        ),
                    });
                }
                Expression::Reference(Reference { parts })
            }
            _ => return Err(self.unexpected(tok, "an expression")),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_str(src: &str) -> Result<Vec<Block>, ConfigError> {
        parse_source(src, Path::new("main.tf"))
    }

    #[test]
    fn provider_block() {
        let blocks = parse_str(r#"provider "memcloud" { endpoint = "http://localhost:8790" }"#).unwrap();
        assert_eq!(blocks.len(), 1);
        let b = &blocks[0];
        assert_eq!(b.kind, BlockKind::Provider);
        assert_eq!(b.labels, ["memcloud"]);
        assert_eq!(
            b.attribute("endpoint").unwrap().expr,
            Expression::string("http://localhost:8790")
        );
    }

    #[test]
    fn subnet_references_vpc() {
        let blocks =
            parse_str(r#"resource "memcloud_subnet" "a" { vpc_id = memcloud_vpc.main.id }"#).unwrap();
        assert_eq!(
            blocks[0].attribute("vpc_id").unwrap().expr,
            Expression::reference(["memcloud_vpc", "main", "id"])
        );
    }

    #[test]
    fn variable_block() {
        let blocks = parse_str(r#"variable "region" { default = "us-west" }"#).unwrap();
        assert_eq!(blocks[0].kind, BlockKind::Variable);
        assert_eq!(blocks[0].labels, ["region"]);
    }

    #[test]
    fn order_and_nesting_preserved() {
        let blocks = parse_str(
            r#"
            terraform {
              required_providers {
                memcloud = { source = "local/memcloud", version = "1.0" }
              }
            }
            resource "x_a" "one" {
              z = 1
              a = [1, 2.5, true, "s",]
              m = { k = "v" "q-r" = 2 }
            }
            "#,
        )
        .unwrap();
        assert_eq!(blocks[0].nested_blocks[0].kind, BlockKind::Nested("required_providers".into()));
        let names: Vec<_> = blocks[1].body.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, ["z", "a", "m"]);
    }

    #[test]
    fn wrong_label_count() {
        let err = parse_str(r#"resource "memcloud_vpc" {}"#).unwrap_err();
        assert!(err.to_string().contains("takes 2 label(s), found 1"), "{err}");
        let err = parse_str(r#"terraform "x" {}"#).unwrap_err();
        assert!(err.to_string().contains("takes 0 label(s)"));
    }

    #[test]
    fn duplicate_attribute() {
        let err = parse_str(r#"provider "a" { x = 1 x = 2 }"#).unwrap_err();
        assert!(err.to_string().contains("duplicate attribute `x`"));
        assert_eq!(err.span().unwrap().column, 22);
    }

    #[test]
    fn unknown_kind_and_unexpected_token() {
        assert!(parse_str(r#"widget "a" {}"#)
            .unwrap_err()
            .to_string()
            .contains("unknown block kind `widget`"));
        let err = parse_str("provider \"a\" { x = }").unwrap_err();
        assert!(err.to_string().contains("main.tf:1:20"), "{err}");
    }

    #[test]
    fn bare_word_rejected() {
        assert!(parse_str(r#"provider "a" { x = y }"#).is_err());
    }

    #[test]
    fn lone_expression() {
        assert_eq!(
            parse_expression("\"lb-${memcloud_vpc.main.id}\"").unwrap(),
            Expression::Template(vec![
                super::super::ast::TemplatePart::Literal("lb-".into()),
                super::super::ast::TemplatePart::Reference(Reference::new([
                    "memcloud_vpc",
                    "main",
                    "id"
                ]))
            ])
        );
        assert!(parse_expression("1 2").is_err());
    }
}
