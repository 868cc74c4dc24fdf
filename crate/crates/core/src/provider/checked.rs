use std::sync::Mutex;

use super::{Created, Diagnostic, Provider, ProviderContext, ProviderError, ProviderSchema};
use crate::value::Attributes;

/// Wraps a provider and records every attribute it returns that its own
/// schema does not declare, or whose value has the wrong kind.
pub struct SchemaChecked<P> {
    inner: P,
    violations: Mutex<Vec<String>>,
}

impl<P: Provider> SchemaChecked<P> {
    pub fn new(inner: P) -> Self {
        SchemaChecked {
            inner,
            violations: Mutex::new(Vec::new()),
        }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    pub fn violations(&self) -> Vec<String> {
        self.violations.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn check(&self, type_name: &str, data: bool, op: &str, attrs: &Attributes) {
        let schema = self.inner.schema();
        let specs = if data {
            schema.data(type_name)
        } else {
            schema.resource(type_name)
        };
        let mut found = Vec::new();
        match specs {
            None => found.push(format!("{op} {type_name}: type missing from schema")),
            Some(specs) => {
                for (name, value) in attrs {
                    match specs.iter().find(|s| &s.name == name) {
                        None => found.push(format!("{op} {type_name}: undeclared attribute `{name}`")),
                        Some(s) if value.contains_unknown() || !s.kind.accepts(value) => found.push(
                            format!("{op} {type_name}: `{name}` is {}, schema says {}", value.type_name(), s.kind),
                        ),
                        Some(_) => {}
                    }
                }
            }
        }
        if !found.is_empty() {
            self.violations
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .extend(found);
        }
    }
}

impl<P: Provider> Provider for SchemaChecked<P> {
    fn schema(&self) -> ProviderSchema {
        self.inner.schema()
    }

    fn configure(&mut self, config: &Attributes, ctx: &ProviderContext) -> Result<(), ProviderError> {
        self.inner.configure(config, ctx)
    }

    fn validate(&self, type_name: &str, attrs: &Attributes) -> Vec<Diagnostic> {
        self.inner.validate(type_name, attrs)
    }

    fn create(&self, type_name: &str, attrs: &Attributes) -> Result<Created, ProviderError> {
        let created = self.inner.create(type_name, attrs)?;
        self.check(type_name, false, "create", &created.attributes);
        Ok(created)
    }

    fn read(&self, type_name: &str, id: &str) -> Result<Option<Attributes>, ProviderError> {
        let read = self.inner.read(type_name, id)?;
        if let Some(attrs) = &read {
            self.check(type_name, false, "read", attrs);
        }
        Ok(read)
    }

    fn update(&self, type_name: &str, id: &str, attrs: &Attributes) -> Result<Attributes, ProviderError> {
        let updated = self.inner.update(type_name, id, attrs)?;
        self.check(type_name, false, "update", &updated);
        Ok(updated)
    }

    fn delete(&self, type_name: &str, id: &str) -> Result<(), ProviderError> {
        self.inner.delete(type_name, id)
    }

    fn read_data(&self, type_name: &str, attrs: &Attributes) -> Result<Attributes, ProviderError> {
        let read = self.inner.read_data(type_name, attrs)?;
        self.check(type_name, true, "read_data", &read);
        Ok(read)
    }
}
