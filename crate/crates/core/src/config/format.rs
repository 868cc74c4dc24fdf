use std::fmt::Write;

use super::ast::{Block, Expression, Literal, TemplatePart};
use crate::address::is_valid_label;
use crate::value::format_float;

/// Prints blocks in canonical native syntax. Re-parsing the output yields
/// blocks equal to the input.
pub fn format_blocks(blocks: &[Block]) -> String {
    let mut out = String::new();
    for (i, block) in blocks.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        write_block(&mut out, block, 0);
    }
    out
}

fn write_block(out: &mut String, block: &Block, depth: usize) {
    let indent = "  ".repeat(depth);
    out.push_str(&indent);
    out.push_str(block.kind.keyword());
    for label in &block.labels {
        let _ = write!(out, " {}", quote(label));
    }
    if block.body.is_empty() && block.nested_blocks.is_empty() {
        out.push_str(" {}\n");
        return;
    }
    out.push_str(" {\n");
    let width = block.body.iter().map(|a| a.name.len()).max().unwrap_or(0);
    for attr in &block.body {
        let _ = writeln!(
            out,
            "{indent}  {:width$} = {}",
            attr.name,
            format_expression(&attr.expr)
        );
    }
    for nested in &block.nested_blocks {
        write_block(out, nested, depth + 1);
    }
    out.push_str(&indent);
    out.push_str("}\n");
}

/// Prints one expression on a single line.
pub fn format_expression(expr: &Expression) -> String {
    match expr {
        Expression::Literal(Literal::String(s)) => quote(s),
        Expression::Literal(Literal::Int(i)) => i.to_string(),
        Expression::Literal(Literal::Float(f)) => format_float(*f),
        Expression::Literal(Literal::Bool(b)) => b.to_string(),
        Expression::List(items) => {
            let inner: Vec<String> = items.iter().map(format_expression).collect();
            format!("[{}]", inner.join(", "))
        }
        Expression::Map(entries) if entries.is_empty() => "{}".to_string(),
        Expression::Map(entries) => {
            let inner: Vec<String> = entries
                .iter()
                .map(|(k, v)| {
                    let key = if is_valid_label(k) && k != "true" && k != "false" {
                        k.clone()
                    } else {
                        quote(k)
                    };
                    format!("{key} = {}", format_expression(v))
                })
                .collect();
            format!("{{ {} }}", inner.join(", "))
        }
        Expression::Reference(r) => r.to_string(),
        Expression::Template(parts) => {
            let mut s = String::from("\"");
            for (i, part) in parts.iter().enumerate() {
                match part {
                    // `$` right before `${` would read back as the `$${` escape
                    TemplatePart::Literal(l)
                        if l.ends_with('$')
                            && matches!(parts.get(i + 1), Some(TemplatePart::Reference(_))) =>
                    {
                        s.push_str(&escape(&l[..l.len() - 1]));
                        s.push_str("\\$");
                    }
                    TemplatePart::Literal(l) => s.push_str(&escape(l)),
                    TemplatePart::Reference(r) => {
                        let _ = write!(s, "${{{r}}}");
                    }
                }
            }
            s.push('"');
            s
        }
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            '$' if chars.peek() == Some(&'{') => out.push_str("$$"),
            c => out.push(c),
        }
    }
    out
}

fn quote(s: &str) -> String {
    format!("\"{}\"", escape(s))
}
