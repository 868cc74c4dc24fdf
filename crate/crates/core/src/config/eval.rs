use std::collections::BTreeMap;

use super::ast::{Expression, Literal, Reference, TemplatePart};
use crate::address::ResourceAddress;
use crate::value::{Attributes, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("undefined variable `var.{0}`")]
    UndefinedVariable(String),
    #[error("reference to undeclared resource `{0}`")]
    UnknownAddress(String),
    #[error("`{address}` has no attribute `{attribute}`")]
    UnsupportedAttribute { address: String, attribute: String },
    #[error("malformed reference `{0}`")]
    MalformedReference(String),
    #[error("cannot interpolate a {0} value into a string")]
    NotInterpolable(&'static str),
}

/// What references resolve against: variable values and, per resource
/// address, its attribute map. Attribute values may be [`Value::Unknown`].
#[derive(Debug, Clone, Default)]
pub struct EvalContext {
    pub vars: BTreeMap<String, Value>,
    pub resources: BTreeMap<ResourceAddress, Attributes>,
}

impl EvalContext {
    pub fn new(vars: BTreeMap<String, Value>) -> Self {
        EvalContext {
            vars,
            resources: BTreeMap::new(),
        }
    }

    pub fn with_resource(mut self, address: ResourceAddress, attrs: Attributes) -> Self {
        self.resources.insert(address, attrs);
        self
    }
}

/// The resource a reference points at, or `None` for `var.*`.
pub fn reference_target(r: &Reference) -> Result<Option<(ResourceAddress, Option<&str>)>, EvalError> {
    let malformed = || EvalError::MalformedReference(r.to_string());
    match r.parts.as_slice() {
        [v, _] if v == "var" => Ok(None),
        [v, ..] if v == "var" => Err(malformed()),
        [d, t, n, rest @ ..] if d == "data" => {
            if rest.len() > 1 {
                return Err(malformed());
            }
            Ok(Some((
                ResourceAddress::data(t.as_str(), n.as_str()),
                rest.first().map(String::as_str),
            )))
        }
        [t, n, rest @ ..] if t != "data" => {
            if rest.len() > 1 {
                return Err(malformed());
            }
            Ok(Some((
                ResourceAddress::managed(t.as_str(), n.as_str()),
                rest.first().map(String::as_str),
            )))
        }
        _ => Err(malformed()),
    }
}

fn resolve(r: &Reference, ctx: &EvalContext) -> Result<Value, EvalError> {
    match reference_target(r)? {
        None => {
            let name = &r.parts[1];
            ctx.vars
                .get(name)
                .cloned()
                .ok_or_else(|| EvalError::UndefinedVariable(name.clone()))
        }
        Some((address, attribute)) => {
            let attrs = ctx
                .resources
                .get(&address)
                .ok_or_else(|| EvalError::UnknownAddress(address.to_string()))?;
            let Some(attribute) = attribute else {
                return Err(EvalError::MalformedReference(r.to_string()));
            };
            attrs
                .get(attribute)
                .cloned()
                .ok_or_else(|| EvalError::UnsupportedAttribute {
                    address: address.to_string(),
                    attribute: attribute.to_string(),
                })
        }
    }
}

pub fn literal_value(lit: &Literal) -> Value {
    match lit {
        Literal::String(s) => Value::String(s.clone()),
        Literal::Int(i) => Value::Int(*i),
        Literal::Float(f) => Value::Float(*f),
        Literal::Bool(b) => Value::Bool(*b),
    }
}

/// Evaluates an expression. Any unknown operand makes the result unknown.
pub fn evaluate(expr: &Expression, ctx: &EvalContext) -> Result<Value, EvalError> {
    match expr {
        Expression::Literal(lit) => Ok(literal_value(lit)),
        Expression::Reference(r) => resolve(r, ctx),
        Expression::List(items) => {
            let values = items
                .iter()
                .map(|e| evaluate(e, ctx))
                .collect::<Result<Vec<_>, _>>()?;
            if values.iter().any(Value::contains_unknown) {
                Ok(Value::Unknown)
            } else {
                Ok(Value::List(values))
            }
        }
        Expression::Map(entries) => {
            let values = entries
                .iter()
                .map(|(k, e)| Ok((k.clone(), evaluate(e, ctx)?)))
                .collect::<Result<BTreeMap<_, _>, EvalError>>()?;
            if values.values().any(Value::contains_unknown) {
                Ok(Value::Unknown)
            } else {
                Ok(Value::Map(values))
            }
        }
        Expression::Template(parts) => {
            let mut out = String::new();
            let mut unknown = false;
            for part in parts {
                match part {
                    TemplatePart::Literal(s) => out.push_str(s),
                    TemplatePart::Reference(r) => match resolve(r, ctx)? {
                        Value::Unknown => unknown = true,
                        v @ (Value::List(_) | Value::Map(_)) => {
                            return Err(EvalError::NotInterpolable(v.type_name()))
                        }
                        v => out.push_str(&v.to_string()),
                    },
                }
            }
            Ok(if unknown {
                Value::Unknown
            } else {
                Value::String(out)
            })
        }
    }
}

fn value_expression(v: &Value) -> Expression {
    match v {
        Value::String(s) => Expression::Literal(Literal::String(s.clone())),
        Value::Int(i) => Expression::Literal(Literal::Int(*i)),
        Value::Float(f) => Expression::Literal(Literal::Float(*f)),
        Value::Bool(b) => Expression::Literal(Literal::Bool(*b)),
        Value::List(items) => Expression::List(items.iter().map(value_expression).collect()),
        Value::Map(entries) => Expression::Map(
            entries
                .iter()
                .map(|(k, v)| (k.clone(), value_expression(v)))
                .collect(),
        ),
        Value::Unknown => unreachable!("unknown values are never substituted"),
    }
}

/// Partially evaluates `expr`: every reference that resolves to a known
/// value is replaced by that value, leaving only the references that are
/// still unknown. The residual is what gets re-evaluated at apply time.
pub fn residual(expr: &Expression, ctx: &EvalContext) -> Result<Expression, EvalError> {
    Ok(match expr {
        Expression::Literal(_) => expr.clone(),
        Expression::Reference(r) => match resolve(r, ctx)? {
            Value::Unknown => expr.clone(),
            v if v.contains_unknown() => expr.clone(),
            v => value_expression(&v),
        },
        Expression::List(items) => Expression::List(
            items
                .iter()
                .map(|e| residual(e, ctx))
                .collect::<Result<_, _>>()?,
        ),
        Expression::Map(entries) => Expression::Map(
            entries
                .iter()
                .map(|(k, e)| Ok((k.clone(), residual(e, ctx)?)))
                .collect::<Result<_, EvalError>>()?,
        ),
        Expression::Template(parts) => {
            let mut out = Vec::new();
            for part in parts {
                match part {
                    TemplatePart::Literal(_) => out.push(part.clone()),
                    TemplatePart::Reference(r) => match resolve(r, ctx)? {
                        Value::Unknown => out.push(part.clone()),
                        v @ (Value::List(_) | Value::Map(_)) => {
                            return Err(EvalError::NotInterpolable(v.type_name()))
                        }
                        v => out.push(TemplatePart::Literal(v.to_string())),
                    },
                }
            }
            Expression::from_string_parts(out)
        }
    })
}
