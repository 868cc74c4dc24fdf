use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

/// A position in a configuration file. Lines and columns are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SourceSpan {
    pub file: Arc<Path>,
    pub line: u32,
    pub column: u32,
}

impl SourceSpan {
    pub fn new(file: Arc<Path>, line: u32, column: u32) -> Self {
        debug_assert!(line >= 1 && column >= 1);
        SourceSpan { file, line, column }
    }

    pub fn start_of(file: Arc<Path>) -> Self {
        SourceSpan::new(file, 1, 1)
    }
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file.display(), self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockKind {
    Terraform,
    Provider,
    Variable,
    Resource,
    Data,
    Output,
    /// A block nested inside another block body, e.g. `required_providers`.
    Nested(String),
}

impl BlockKind {
    pub fn top_level(keyword: &str) -> Option<BlockKind> {
        Some(match keyword {
            "terraform" => BlockKind::Terraform,
            "provider" => BlockKind::Provider,
            "variable" => BlockKind::Variable,
            "resource" => BlockKind::Resource,
            "data" => BlockKind::Data,
            "output" => BlockKind::Output,
            _ => return None,
        })
    }

    pub fn keyword(&self) -> &str {
        match self {
            BlockKind::Terraform => "terraform",
            BlockKind::Provider => "provider",
            BlockKind::Variable => "variable",
            BlockKind::Resource => "resource",
            BlockKind::Data => "data",
            BlockKind::Output => "output",
            BlockKind::Nested(name) => name,
        }
    }

    /// Required label count, or `None` for nested blocks (0 to 2 allowed).
    pub fn label_count(&self) -> Option<usize> {
        match self {
            BlockKind::Terraform => Some(0),
            BlockKind::Provider | BlockKind::Variable | BlockKind::Output => Some(1),
            BlockKind::Resource | BlockKind::Data => Some(2),
            BlockKind::Nested(_) => None,
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// One `name = expr` assignment. Equality ignores the span.
#[derive(Debug, Clone)]
pub struct Attribute {
    pub name: String,
    pub expr: Expression,
    pub span: SourceSpan,
}

impl PartialEq for Attribute {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.expr == other.expr
    }
}

/// A declaration block. Equality is structural and ignores source positions,
/// so a block loaded from JSON compares equal to its native-syntax twin.
#[derive(Debug, Clone)]
pub struct Block {
    pub kind: BlockKind,
    pub labels: Vec<String>,
    pub body: Vec<Attribute>,
    pub nested_blocks: Vec<Block>,
    pub span: SourceSpan,
}

impl PartialEq for Block {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.labels == other.labels
            && self.body == other.body
            && self.nested_blocks == other.nested_blocks
    }
}

impl Block {
    pub fn attribute(&self, name: &str) -> Option<&Attribute> {
        self.body.iter().find(|a| a.name == name)
    }

    /// Every reference appearing in this block's body and nested blocks.
    pub fn references(&self) -> Vec<(&Reference, &SourceSpan)> {
        let mut out = Vec::new();
        self.collect_references(&mut out);
        out
    }

    fn collect_references<'a>(&'a self, out: &mut Vec<(&'a Reference, &'a SourceSpan)>) {
        for attr in &self.body {
            for r in attr.expr.references() {
                out.push((r, &attr.span));
            }
        }
        for nested in &self.nested_blocks {
            nested.collect_references(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    String(String),
    Int(i64),
    Float(f64),
    Bool(bool),
}

/// A dotted path such as `var.region` or `memcloud_vpc.main.id`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reference {
    pub parts: Vec<String>,
}

impl Reference {
    pub fn new<I, S>(parts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Reference {
            parts: parts.into_iter().map(Into::into).collect(),
        }
    }
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.parts.join("."))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TemplatePart {
    Literal(String),
    Reference(Reference),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Literal(Literal),
    List(Vec<Expression>),
    Map(BTreeMap<String, Expression>),
    Reference(Reference),
    /// A string with at least one embedded reference and at least one other
    /// segment; a string that is exactly `${ref}` parses as a reference.
    Template(Vec<TemplatePart>),
}

impl Expression {
    pub fn string(s: impl Into<String>) -> Expression {
        Expression::Literal(Literal::String(s.into()))
    }

    pub fn reference<I, S>(parts: I) -> Expression
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Expression::Reference(Reference::new(parts))
    }

    /// Builds the expression for a string body: a literal, a lone reference,
    /// or a template, depending on how many interpolations it has.
    pub fn from_string_parts(parts: Vec<TemplatePart>) -> Expression {
        let mut merged: Vec<TemplatePart> = Vec::new();
        for part in parts {
            match (merged.last_mut(), part) {
                (_, TemplatePart::Literal(s)) if s.is_empty() => {}
                (Some(TemplatePart::Literal(prev)), TemplatePart::Literal(s)) => prev.push_str(&s),
                (_, part) => merged.push(part),
            }
        }
        let has_ref = merged
            .iter()
            .any(|p| matches!(p, TemplatePart::Reference(_)));
        match merged.as_slice() {
            [] => Expression::string(""),
            [TemplatePart::Reference(r)] => Expression::Reference(r.clone()),
            _ if !has_ref => {
                let mut s = String::new();
                for p in &merged {
                    if let TemplatePart::Literal(l) = p {
                        s.push_str(l);
                    }
                }
                Expression::string(s)
            }
            _ => Expression::Template(merged),
        }
    }

    pub fn references(&self) -> Vec<&Reference> {
        let mut out = Vec::new();
        self.collect_references(&mut out);
        out
    }

    fn collect_references<'a>(&'a self, out: &mut Vec<&'a Reference>) {
        match self {
            Expression::Literal(_) => {}
            Expression::List(items) => items.iter().for_each(|e| e.collect_references(out)),
            Expression::Map(entries) => entries.values().for_each(|e| e.collect_references(out)),
            Expression::Reference(r) => out.push(r),
            Expression::Template(parts) => {
                for p in parts {
                    if let TemplatePart::Reference(r) = p {
                        out.push(r);
                    }
                }
            }
        }
    }
}
