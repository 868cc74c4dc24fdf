//! Client for the mockcloud HTTP API.
//!
//! Every CRUD call is one HTTP round trip against `endpoint`. Client errors
//! (4xx) come back as validation or conflict errors carrying the server's
//! message; server errors and transport failures as `Unavailable`.

use std::collections::BTreeMap;
use std::time::Duration;

use super::{
    AttributeSpec, Created, Diagnostic, Provider, ProviderContext, ProviderError, ProviderSchema,
    ValueKind,
};
use crate::value::{Attributes, Value};

pub struct MemCloud {
    endpoint: Option<String>,
    agent: ureq::Agent,
}

impl MemCloud {
    pub fn new() -> Self {
        MemCloud {
            endpoint: None,
            agent: ureq::Agent::config_builder()
                .http_status_as_error(false)
                // tiny_http parks a worker on every idle keep-alive connection
                .max_idle_connections_per_host(0)
                .timeout_global(Some(Duration::from_secs(30)))
                .build()
                .into(),
        }
    }

    fn url(&self, path: &str) -> Result<String, ProviderError> {
        let base = self
            .endpoint
            .as_deref()
            .ok_or_else(|| ProviderError::Unavailable("provider not configured".into()))?;
        Ok(format!("{base}{path}"))
    }
}

impl Default for MemCloud {
    fn default() -> Self {
        MemCloud::new()
    }
}

fn collection(type_name: &str) -> Result<&'static str, ProviderError> {
    Ok(match type_name {
        "memcloud_vpc" => "vpcs",
        "memcloud_subnet" => "subnets",
        "memcloud_security_group" => "security_groups",
        "memcloud_instance" => "instances",
        "memcloud_load_balancer" => "load_balancers",
        other => return Err(ProviderError::UnsupportedType(other.to_string())),
    })
}

fn resource_types() -> BTreeMap<String, Vec<AttributeSpec>> {
    use ValueKind::*;
    let id = || AttributeSpec::computed("id", String);
    BTreeMap::from([
        (
            "memcloud_vpc".to_string(),
            vec![AttributeSpec::required("cidr", String).force_new(), id()],
        ),
        (
            "memcloud_subnet".to_string(),
            vec![
                AttributeSpec::required("vpc_id", String).force_new(),
                AttributeSpec::required("cidr", String).force_new(),
                id(),
            ],
        ),
        (
            "memcloud_security_group".to_string(),
            vec![
                AttributeSpec::required("vpc_id", String).force_new(),
                AttributeSpec::optional("rules", StringList),
                id(),
            ],
        ),
        (
            "memcloud_instance".to_string(),
            vec![
                AttributeSpec::required("subnet_id", String).force_new(),
                AttributeSpec::required("image", String).force_new(),
                AttributeSpec::optional("size", String).with_default("small"),
                AttributeSpec::optional("security_group_ids", StringList),
                id(),
                AttributeSpec::computed("private_ip", String),
            ],
        ),
        (
            "memcloud_load_balancer".to_string(),
            vec![
                AttributeSpec::required("subnet_id", String).force_new(),
                AttributeSpec::required("instance_ids", StringList),
                AttributeSpec::optional("port", Integer).with_default(80),
                id(),
                AttributeSpec::computed("dns_name", String),
            ],
        ),
    ])
}

type Response = ureq::http::Response<ureq::Body>;

fn transport(e: ureq::Error) -> ProviderError {
    ProviderError::Unavailable(e.to_string())
}

/// Status and parsed JSON body (`Null` when empty or not JSON).
fn finish(mut resp: Response) -> Result<(u16, serde_json::Value), ProviderError> {
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(transport)?;
    let body = serde_json::from_str(&text).unwrap_or(serde_json::Value::Null);
    Ok((status, body))
}

fn server_message(body: &serde_json::Value) -> String {
    body["error"]
        .as_str()
        .map(str::to_string)
        .unwrap_or_else(|| body.to_string())
}

fn status_error(status: u16, body: &serde_json::Value) -> ProviderError {
    let message = server_message(body);
    match status {
        404 => ProviderError::NotFound(message),
        409 => ProviderError::Conflict(message),
        400..=499 => {
            let diagnostic = match message.split_once(": ") {
                Some((field, reason)) if !field.contains(' ') => Diagnostic {
                    attribute: Some(field.to_string()),
                    message: reason.to_string(),
                },
                _ => Diagnostic {
                    attribute: None,
                    message,
                },
            };
            ProviderError::Validation(vec![diagnostic])
        }
        _ => ProviderError::Unavailable(format!("HTTP {status}: {message}")),
    }
}

fn object_attributes(body: &serde_json::Value) -> Result<Attributes, ProviderError> {
    Value::attributes_from_json(body)
        .ok_or_else(|| ProviderError::Other(format!("unexpected response body: {body}")))
}

impl Provider for MemCloud {
    fn schema(&self) -> ProviderSchema {
        ProviderSchema {
            provider_name: "memcloud".to_string(),
            config_attrs: vec![AttributeSpec::required("endpoint", ValueKind::String)],
            resource_types: resource_types(),
            data_types: BTreeMap::from([(
                "memcloud_vpc".to_string(),
                vec![
                    AttributeSpec::required("id", ValueKind::String),
                    AttributeSpec::computed("cidr", ValueKind::String),
                ],
            )]),
        }
    }

    fn configure(&mut self, config: &Attributes, _ctx: &ProviderContext) -> Result<(), ProviderError> {
        let configure_error = |message: String| ProviderError::Configure {
            provider: "memcloud".into(),
            message,
        };
        let endpoint = config
            .get("endpoint")
            .and_then(Value::as_str)
            .ok_or_else(|| configure_error("endpoint must be a string".into()))?;
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let probe = self
            .agent
            .get(&format!("{endpoint}/v1/vpcs"))
            .call()
            .map_err(|e| configure_error(format!("endpoint {endpoint} unreachable: {e}")))?;
        let (status, _) = finish(probe)?;
        if status != 200 {
            return Err(configure_error(format!("endpoint {endpoint} answered HTTP {status}")));
        }
        self.endpoint = Some(endpoint);
        Ok(())
    }

    fn create(&self, type_name: &str, attrs: &Attributes) -> Result<Created, ProviderError> {
        let coll = collection(type_name)?;
        let specs = &resource_types()[type_name];
        let body: serde_json::Map<_, _> = attrs
            .iter()
            .filter(|(k, _)| specs.iter().any(|s| &s.name == *k && !s.is_computed()))
            .map(|(k, v)| (k.clone(), v.to_json()))
            .collect();
        let resp = self
            .agent
            .post(&self.url(&format!("/v1/{coll}"))?)
            .header("Content-Type", "application/json")
            .send(serde_json::Value::Object(body).to_string())
            .map_err(transport)?;
        match finish(resp)? {
            (201 | 200, body) => {
                let attributes = object_attributes(&body)?;
                let id = attributes
                    .get("id")
                    .and_then(Value::as_str)
                    .ok_or_else(|| ProviderError::Other("created object lacks an id".into()))?
                    .to_string();
                Ok(Created { id, attributes })
            }
            (status, body) => Err(status_error(status, &body)),
        }
    }

    fn read(&self, type_name: &str, id: &str) -> Result<Option<Attributes>, ProviderError> {
        let coll = collection(type_name)?;
        let resp = self
            .agent
            .get(&self.url(&format!("/v1/{coll}/{id}"))?)
            .call()
            .map_err(transport)?;
        match finish(resp)? {
            (200, body) => Ok(Some(object_attributes(&body)?)),
            (404, _) => Ok(None),
            (status, body) => Err(status_error(status, &body)),
        }
    }

    fn update(&self, type_name: &str, id: &str, attrs: &Attributes) -> Result<Attributes, ProviderError> {
        let coll = collection(type_name)?;
        let specs = &resource_types()[type_name];
        let mut body = serde_json::Map::new();
        for spec in specs.iter().filter(|s| !s.is_computed()) {
            match attrs.get(&spec.name) {
                Some(v) => {
                    body.insert(spec.name.clone(), v.to_json());
                }
                None if !spec.force_new => {
                    body.insert(spec.name.clone(), serde_json::Value::Null);
                }
                None => {}
            }
        }
        let resp = self
            .agent
            .put(&self.url(&format!("/v1/{coll}/{id}"))?)
            .header("Content-Type", "application/json")
            .send(serde_json::Value::Object(body).to_string())
            .map_err(transport)?;
        match finish(resp)? {
            (200, body) => object_attributes(&body),
            (status, body) => Err(status_error(status, &body)),
        }
    }

    fn delete(&self, type_name: &str, id: &str) -> Result<(), ProviderError> {
        let coll = collection(type_name)?;
        let resp = self
            .agent
            .delete(&self.url(&format!("/v1/{coll}/{id}"))?)
            .call()
            .map_err(transport)?;
        match finish(resp)? {
            (200 | 204 | 404, _) => Ok(()),
            (status, body) => Err(status_error(status, &body)),
        }
    }

    fn read_data(&self, type_name: &str, attrs: &Attributes) -> Result<Attributes, ProviderError> {
        if type_name != "memcloud_vpc" {
            return Err(ProviderError::UnsupportedType(type_name.to_string()));
        }
        let id = attrs
            .get("id")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::invalid("id", "expected a string"))?;
        self.read(type_name, id)?
            .ok_or_else(|| ProviderError::NotFound(id.to_string()))
    }
}
