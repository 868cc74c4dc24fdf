//! The provider contract, the registry that resolves provider names to
//! configured handles, and the built-in providers.
//!
//! A provider publishes a [`ProviderSchema`] describing its resource and
//! data types, and implements create, read, update and delete for them. The
//! engine never talks to infrastructure any other way.

mod checked;
pub mod inmem;
pub mod localfs;
pub mod memcloud;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

pub use checked::SchemaChecked;

use crate::address::provider_prefix;
use crate::config::{evaluate, ConfigDocument};
use crate::value::{Attributes, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    String,
    Integer,
    Bool,
    StringList,
    StringMap,
}

impl ValueKind {
    pub fn accepts(self, value: &Value) -> bool {
        match (self, value) {
            (_, Value::Unknown) => true,
            (ValueKind::String, Value::String(_)) => true,
            (ValueKind::Integer, Value::Int(_)) => true,
            (ValueKind::Bool, Value::Bool(_)) => true,
            (ValueKind::StringList, Value::List(items)) => items
                .iter()
                .all(|v| matches!(v, Value::String(_) | Value::Unknown)),
            (ValueKind::StringMap, Value::Map(entries)) => entries
                .values()
                .all(|v| matches!(v, Value::String(_) | Value::Unknown)),
            _ => false,
        }
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueKind::String => "string",
            ValueKind::Integer => "integer",
            ValueKind::Bool => "bool",
            ValueKind::StringList => "list of strings",
            ValueKind::StringMap => "map of strings",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributeMode {
    Required,
    Optional,
    Computed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: ValueKind,
    pub mode: AttributeMode,
    /// Changing this attribute requires destroying and recreating.
    pub force_new: bool,
    pub default: Option<Value>,
}

impl AttributeSpec {
    pub fn required(name: &str, kind: ValueKind) -> Self {
        AttributeSpec {
            name: name.to_string(),
            kind,
            mode: AttributeMode::Required,
            force_new: false,
            default: None,
        }
    }

    pub fn optional(name: &str, kind: ValueKind) -> Self {
        AttributeSpec {
            mode: AttributeMode::Optional,
            ..AttributeSpec::required(name, kind)
        }
    }

    pub fn computed(name: &str, kind: ValueKind) -> Self {
        AttributeSpec {
            mode: AttributeMode::Computed,
            ..AttributeSpec::required(name, kind)
        }
    }

    pub fn force_new(mut self) -> Self {
        self.force_new = true;
        self
    }

    pub fn with_default(mut self, value: impl Into<Value>) -> Self {
        self.default = Some(value.into());
        self
    }

    pub fn is_computed(&self) -> bool {
        self.mode == AttributeMode::Computed
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProviderSchema {
    pub provider_name: String,
    pub config_attrs: Vec<AttributeSpec>,
    pub resource_types: BTreeMap<String, Vec<AttributeSpec>>,
    pub data_types: BTreeMap<String, Vec<AttributeSpec>>,
}

impl ProviderSchema {
    pub fn resource(&self, type_name: &str) -> Option<&[AttributeSpec]> {
        self.resource_types.get(type_name).map(Vec::as_slice)
    }

    pub fn data(&self, type_name: &str) -> Option<&[AttributeSpec]> {
        self.data_types.get(type_name).map(Vec::as_slice)
    }

    /// Checks the structural rules: prefixed type names, unique attribute
    /// names, no required computed attributes, defaults only on optionals.
    pub fn check(&self) -> Result<(), String> {
        let types = self.resource_types.iter().chain(&self.data_types);
        for (type_name, specs) in types {
            if provider_prefix(type_name) != self.provider_name
                || !type_name.starts_with(&format!("{}_", self.provider_name))
            {
                return Err(format!("type `{type_name}` lacks the `{}_` prefix", self.provider_name));
            }
            for (i, spec) in specs.iter().enumerate() {
                if specs[..i].iter().any(|s| s.name == spec.name) {
                    return Err(format!("`{type_name}.{}` declared twice", spec.name));
                }
                if spec.default.is_some() && spec.mode != AttributeMode::Optional {
                    return Err(format!("`{type_name}.{}`: default on a non-optional attribute", spec.name));
                }
            }
        }
        Ok(())
    }
}

/// Every schema in use, keyed by provider name.
pub type Schemas = BTreeMap<String, ProviderSchema>;

/// Finds the attribute specs for a managed type (`data == false`) or a data
/// type across a set of schemas.
pub fn type_specs<'a>(schemas: &'a Schemas, type_name: &str, data: bool) -> Option<&'a [AttributeSpec]> {
    let schema = schemas.get(provider_prefix(type_name))?;
    if data {
        schema.data(type_name)
    } else {
        schema.resource(type_name)
    }
}

/// A problem with one attribute (or the whole body when `attribute` is
/// `None`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub attribute: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.attribute {
            Some(a) => write!(f, "{a}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Checks `attrs` against `specs`: no unknown or computed attributes, every
/// required attribute present, kinds match. Unknown values pass.
pub fn validate_against(specs: &[AttributeSpec], attrs: &Attributes) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let diag = |a: &str, m: String| Diagnostic {
        attribute: Some(a.to_string()),
        message: m,
    };
    for (name, value) in attrs {
        match specs.iter().find(|s| &s.name == name) {
            None => out.push(diag(name, "unsupported attribute".to_string())),
            Some(s) if s.is_computed() => {
                out.push(diag(name, "computed attribute cannot be set".to_string()))
            }
            Some(s) if !s.kind.accepts(value) => out.push(diag(
                name,
                format!("expected {}, got {}", s.kind, value.type_name()),
            )),
            Some(_) => {}
        }
    }
    for spec in specs {
        if spec.mode == AttributeMode::Required && !attrs.contains_key(&spec.name) {
            out.push(diag(&spec.name, "required attribute is missing".to_string()));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("unknown provider `{0}`")]
    UnknownProvider(String),
    #[error("provider `{0}` is already registered")]
    DuplicateProvider(String),
    #[error("provider `{provider}` configuration failed: {message}")]
    Configure { provider: String, message: String },
    #[error("unsupported resource type `{0}`")]
    UnsupportedType(String),
    #[error("invalid: {}", join_diagnostics(.0))]
    Validation(Vec<Diagnostic>),
    #[error("object `{0}` not found")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    /// The object was created but a later step of creation failed. The
    /// object exists and must be tracked.
    #[error("created `{id}` but then failed: {message}")]
    PartialCreate {
        id: String,
        attributes: Attributes,
        message: String,
    },
    #[error("{0}")]
    Other(String),
}

fn join_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl ProviderError {
    pub fn invalid(attribute: &str, message: impl Into<String>) -> Self {
        ProviderError::Validation(vec![Diagnostic {
            attribute: Some(attribute.to_string()),
            message: message.into(),
        }])
    }
}

/// Result of a successful create.
#[derive(Debug, Clone, PartialEq)]
pub struct Created {
    pub id: String,
    /// Full attributes, computed ones included.
    pub attributes: Attributes,
}

/// Environment handed to providers at configure time.
#[derive(Debug, Clone, Default)]
pub struct ProviderContext {
    /// Directory relative paths in provider config resolve against.
    pub working_dir: PathBuf,
}

/// A provider implementation.
///
/// Handles are shared across the executor's worker threads, so calls for
/// distinct ids may arrive concurrently.
pub trait Provider: Send + Sync {
    fn schema(&self) -> ProviderSchema;

    fn configure(&mut self, config: &Attributes, ctx: &ProviderContext) -> Result<(), ProviderError>;

    fn validate(&self, type_name: &str, attrs: &Attributes) -> Vec<Diagnostic> {
        match self.schema().resource(type_name) {
            Some(specs) => validate_against(specs, attrs),
            None => vec![Diagnostic {
                attribute: None,
                message: format!("unsupported resource type `{type_name}`"),
            }],
        }
    }

    fn create(&self, type_name: &str, attrs: &Attributes) -> Result<Created, ProviderError>;

    /// Current attributes of `id`, or `None` if it no longer exists.
    fn read(&self, type_name: &str, id: &str) -> Result<Option<Attributes>, ProviderError>;

    fn update(&self, type_name: &str, id: &str, attrs: &Attributes) -> Result<Attributes, ProviderError>;

    fn delete(&self, type_name: &str, id: &str) -> Result<(), ProviderError>;

    fn read_data(&self, type_name: &str, _attrs: &Attributes) -> Result<Attributes, ProviderError> {
        Err(ProviderError::UnsupportedType(type_name.to_string()))
    }
}

pub type ProviderHandle = Arc<dyn Provider>;

type Factory = Arc<dyn Fn() -> Box<dyn Provider> + Send + Sync>;

/// Maps provider names to factories.
#[derive(Clone, Default)]
pub struct Registry {
    factories: BTreeMap<String, Factory>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    /// `localfs` and `memcloud`.
    pub fn builtin() -> Self {
        let mut r = Registry::new();
        r.register("localfs", || Box::new(localfs::LocalFs::new()))
            .expect("fresh registry");
        r.register("memcloud", || Box::new(memcloud::MemCloud::new()))
            .expect("fresh registry");
        r
    }

    pub fn register(
        &mut self,
        name: &str,
        factory: impl Fn() -> Box<dyn Provider> + Send + Sync + 'static,
    ) -> Result<(), ProviderError> {
        if self.factories.contains_key(name) {
            return Err(ProviderError::DuplicateProvider(name.to_string()));
        }
        self.factories.insert(name.to_string(), Arc::new(factory));
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    /// The schema of `name`, from an unconfigured instance.
    pub fn schema(&self, name: &str) -> Result<ProviderSchema, ProviderError> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| ProviderError::UnknownProvider(name.to_string()))?;
        Ok(factory().schema())
    }

    /// Schemas of every provider the document declares.
    pub fn schemas_for(&self, doc: &ConfigDocument) -> Result<Schemas, ProviderError> {
        doc.provider_names()
            .into_iter()
            .map(|name| Ok((name.clone(), self.schema(&name)?)))
            .collect()
    }

    /// A handle configured with the document's `provider "<name>"` block.
    pub fn resolve(
        &self,
        name: &str,
        doc: &ConfigDocument,
        ctx: &ProviderContext,
    ) -> Result<ProviderHandle, ProviderError> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| ProviderError::UnknownProvider(name.to_string()))?;
        let block = doc
            .provider_block(name)
            .ok_or_else(|| ProviderError::Configure {
                provider: name.to_string(),
                message: "no provider block declared".to_string(),
            })?;
        let eval_ctx = doc.eval_context();
        let mut config = Attributes::new();
        for attr in &block.body {
            let value = evaluate(&attr.expr, &eval_ctx).map_err(|e| ProviderError::Configure {
                provider: name.to_string(),
                message: format!("{}: {e}", attr.name),
            })?;
            config.insert(attr.name.clone(), value);
        }
        let mut provider = factory();
        let diags = validate_against(&provider.schema().config_attrs, &config);
        if !diags.is_empty() {
            return Err(ProviderError::Configure {
                provider: name.to_string(),
                message: join_diagnostics(&diags),
            });
        }
        provider.configure(&config, ctx)?;
        Ok(Arc::from(provider))
    }

    /// Resolves every provider the document declares.
    pub fn configure_all(
        &self,
        doc: &ConfigDocument,
        ctx: &ProviderContext,
    ) -> Result<ConfiguredProviders, ProviderError> {
        let mut handles = BTreeMap::new();
        for name in doc.provider_names() {
            let handle = self.resolve(&name, doc, ctx)?;
            handles.insert(name, handle);
        }
        Ok(ConfiguredProviders::new(handles))
    }
}

/// Configured handles keyed by provider name.
#[derive(Clone, Default)]
pub struct ConfiguredProviders {
    handles: BTreeMap<String, ProviderHandle>,
    schemas: Schemas,
}

impl ConfiguredProviders {
    pub fn new(handles: BTreeMap<String, ProviderHandle>) -> Self {
        let schemas = handles
            .iter()
            .map(|(name, h)| (name.clone(), h.schema()))
            .collect();
        ConfiguredProviders { handles, schemas }
    }

    pub fn get(&self, name: &str) -> Option<&ProviderHandle> {
        self.handles.get(name)
    }

    /// The handle owning `type_name`.
    pub fn for_type(&self, type_name: &str) -> Result<&ProviderHandle, ProviderError> {
        let name = provider_prefix(type_name);
        self.handles
            .get(name)
            .ok_or_else(|| ProviderError::UnknownProvider(name.to_string()))
    }

    pub fn schemas(&self) -> &Schemas {
        &self.schemas
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_str;

    fn doc(src: &str) -> ConfigDocument {
        ConfigDocument::from_blocks(load_str(src).unwrap(), BTreeMap::new()).unwrap()
    }

    #[test]
    fn builtin_schemas_are_well_formed() {
        let r = Registry::builtin();
        for name in ["localfs", "memcloud"] {
            r.schema(name).unwrap().check().unwrap();
        }
        assert!(r.schema("localfs").unwrap().resource("localfs_file").is_some());
    }

    #[test]
    fn unknown_and_duplicate_providers() {
        let mut r = Registry::builtin();
        assert_eq!(
            r.schema("gcp").unwrap_err(),
            ProviderError::UnknownProvider("gcp".into())
        );
        assert!(matches!(
            r.register("localfs", || Box::new(localfs::LocalFs::new())),
            Err(ProviderError::DuplicateProvider(_))
        ));
    }

    #[test]
    fn resolve_configures_localfs() {
        let dir = tempfile::tempdir().unwrap();
        let d = doc(r#"provider "localfs" { root = "out" }"#);
        let ctx = ProviderContext {
            working_dir: dir.path().to_path_buf(),
        };
        let h = Registry::builtin().resolve("localfs", &d, &ctx).unwrap();
        let created = h
            .create(
                "localfs_file",
                &Attributes::from([
                    ("path".to_string(), Value::from("motd")),
                    ("content".to_string(), Value::from("hi")),
                ]),
            )
            .unwrap();
        assert_eq!(created.id, "motd");
        assert!(dir.path().join("out/motd").exists());
    }

    #[test]
    fn bad_provider_config_fails_at_resolve() {
        let d = doc(r#"provider "localfs" { bogus = 1 }"#);
        assert!(matches!(
            Registry::builtin().resolve("localfs", &d, &ProviderContext::default()),
            Err(ProviderError::Configure { .. })
        ));
    }

    #[test]
    fn validation_diagnostics() {
        let specs = vec![
            AttributeSpec::required("path", ValueKind::String),
            AttributeSpec::optional("port", ValueKind::Integer),
            AttributeSpec::computed("id", ValueKind::String),
        ];
        let attrs = Attributes::from([
            ("port".to_string(), Value::from("x")),
            ("id".to_string(), Value::from("y")),
            ("zzz".to_string(), Value::Int(1)),
        ]);
        let d = validate_against(&specs, &attrs);
        let named: Vec<_> = d.iter().map(|d| d.attribute.clone().unwrap()).collect();
        assert_eq!(named, ["id", "port", "zzz", "path"]);
        assert!(validate_against(&specs, &Attributes::from([("path".into(), Value::Unknown)])).is_empty());
    }
}
