use std::collections::BTreeMap;

use super::PlanError;
use crate::address::ResourceAddress;
use crate::provider::ConfiguredProviders;
use crate::state::StateSnapshot;
use crate::value::Attributes;

/// Re-reads every recorded resource from its provider. Resources the
/// provider no longer has are dropped. The serial is left alone: the result
/// is a candidate, persisted only by a later apply.
pub fn refresh(state: &StateSnapshot, providers: &ConfiguredProviders) -> Result<StateSnapshot, PlanError> {
    refresh_with_parallelism(state, providers, 10)
}

pub fn refresh_with_parallelism(
    state: &StateSnapshot,
    providers: &ConfiguredProviders,
    parallelism: usize,
) -> Result<StateSnapshot, PlanError> {
    let entries: Vec<_> = state.resources.iter().collect();
    let mut observed: BTreeMap<ResourceAddress, Option<Attributes>> = BTreeMap::new();
    for batch in entries.chunks(parallelism.max(1)) {
        let results = std::thread::scope(|s| {
            let workers: Vec<_> = batch
                .iter()
                .map(|(addr, r)| {
                    s.spawn(move || {
                        let read = providers
                            .for_type(&r.type_name)
                            .and_then(|h| h.read(&r.type_name, &r.id));
                        ((*addr).clone(), read)
                    })
                })
                .collect();
            workers
                .into_iter()
                .map(|w| w.join().expect("refresh worker panicked"))
                .collect::<Vec<_>>()
        });
        for (address, read) in results {
            let attrs = read.map_err(|source| PlanError::Provider {
                address: address.clone(),
                source,
            })?;
            observed.insert(address, attrs);
        }
    }

    let mut next = state.clone();
    for (address, attrs) in observed {
        match attrs {
            Some(attrs) => {
                if let Some(r) = next.resources.get_mut(&address) {
                    r.attributes = attrs;
                }
            }
            None => {
                log::info!("{address} no longer exists; removing it from state");
                next.resources.remove(&address);
            }
        }
    }
    Ok(next)
}
