//! Resource dependency graphs.
//!
//! An edge `(from, to)` means `from` depends on `to`: `to` must exist before
//! `from` is created, and `from` must be gone before `to` is destroyed.
//! Nodes and edges live in ordered sets, so every traversal below is
//! deterministic, with ties broken by canonical address text.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use crate::address::ResourceAddress;
use crate::config::{eval::reference_target, ConfigDocument, SourceSpan};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("{span}: `{from}` references undeclared resource `{target}`")]
    UnknownReference {
        from: ResourceAddress,
        target: String,
        span: SourceSpan,
    },
    #[error("{span}: malformed reference `{reference}`")]
    MalformedReference { reference: String, span: SourceSpan },
    #[error("dependency cycle: {}", format_path(.0))]
    Cycle(Vec<ResourceAddress>),
    #[error("edge ({0}, {1}) references a node not in the graph")]
    MissingNode(ResourceAddress, ResourceAddress),
    #[error("self-edge on {0}")]
    SelfEdge(ResourceAddress),
}

fn format_path(path: &[ResourceAddress]) -> String {
    path.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" -> ")
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DependencyGraph {
    nodes: BTreeSet<ResourceAddress>,
    edges: BTreeSet<(ResourceAddress, ResourceAddress)>,
}

impl DependencyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, node: ResourceAddress) {
        self.nodes.insert(node);
    }

    /// Adds `from` depends-on `to`. Both nodes must exist.
    pub fn add_edge(&mut self, from: ResourceAddress, to: ResourceAddress) -> Result<(), GraphError> {
        if from == to {
            return Err(GraphError::SelfEdge(from));
        }
        if !self.nodes.contains(&from) || !self.nodes.contains(&to) {
            return Err(GraphError::MissingNode(from, to));
        }
        self.edges.insert((from, to));
        Ok(())
    }

    pub fn nodes(&self) -> &BTreeSet<ResourceAddress> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(ResourceAddress, ResourceAddress)> {
        &self.edges
    }

    pub fn contains(&self, node: &ResourceAddress) -> bool {
        self.nodes.contains(node)
    }

    /// What `node` directly depends on.
    pub fn dependencies(&self, node: &ResourceAddress) -> Vec<&ResourceAddress> {
        self.edges
            .iter()
            .filter(|(from, _)| from == node)
            .map(|(_, to)| to)
            .collect()
    }

    /// Everything that transitively depends on `node`, excluding itself.
    pub fn descendants(&self, node: &ResourceAddress) -> BTreeSet<ResourceAddress> {
        let dependents = self.adjacency(|(from, to)| (to, from));
        let mut seen = BTreeSet::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            for d in dependents.get(n).into_iter().flatten() {
                if seen.insert((*d).clone()) {
                    stack.push(d);
                }
            }
        }
        seen
    }

    fn adjacency<'a, F>(&'a self, orient: F) -> BTreeMap<&'a ResourceAddress, Vec<&'a ResourceAddress>>
    where
        F: Fn((&'a ResourceAddress, &'a ResourceAddress)) -> (&'a ResourceAddress, &'a ResourceAddress),
    {
        let mut adj: BTreeMap<&ResourceAddress, Vec<&ResourceAddress>> = BTreeMap::new();
        for (a, b) in &self.edges {
            let (key, val) = orient((a, b));
            adj.entry(key).or_default().push(val);
        }
        adj
    }
}

/// One node per resource or data block; one edge per distinct reference
/// from a block to another block. Variable references add nothing.
pub fn build_graph(doc: &ConfigDocument) -> Result<DependencyGraph, GraphError> {
    let mut g = DependencyGraph::new();
    for (addr, _) in doc.resources() {
        g.add_node(addr);
    }
    for (addr, block) in doc.resources() {
        for (reference, span) in block.references() {
            let target = match reference_target(reference) {
                Ok(Some((target, _))) => target,
                Ok(None) => continue,
                Err(_) => {
                    return Err(GraphError::MalformedReference {
                        reference: reference.to_string(),
                        span: span.clone(),
                    })
                }
            };
            if !g.contains(&target) {
                return Err(GraphError::UnknownReference {
                    from: addr.clone(),
                    target: target.to_string(),
                    span: span.clone(),
                });
            }
            if target == addr {
                return Err(GraphError::Cycle(vec![addr.clone(), addr.clone()]));
            }
            g.add_edge(addr.clone(), target)?;
        }
    }
    Ok(g)
}

/// Finds a cycle, if any. The reported path starts and ends at the
/// lexicographically smallest address on the cycle.
pub fn detect_cycles(g: &DependencyGraph) -> Result<(), GraphError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Visiting,
        Done,
    }
    let adj = g.adjacency(|e| e);
    let mut marks: BTreeMap<&ResourceAddress, Mark> = BTreeMap::new();

    for root in &g.nodes {
        if marks.contains_key(root) {
            continue;
        }
        // Iterative DFS; `path` mirrors the current recursion stack.
        let mut path: Vec<&ResourceAddress> = vec![root];
        let mut cursors: Vec<usize> = vec![0];
        marks.insert(root, Mark::Visiting);
        while let Some(&node) = path.last() {
            let i = cursors.last_mut().expect("cursor per path entry");
            let next = adj.get(node).and_then(|v| v.get(*i)).copied();
            *i += 1;
            match next {
                None => {
                    marks.insert(node, Mark::Done);
                    path.pop();
                    cursors.pop();
                }
                Some(n) => match marks.get(n) {
                    Some(Mark::Done) => {}
                    Some(Mark::Visiting) => {
                        let start = path.iter().position(|p| *p == n).expect("on stack");
                        let cycle: Vec<ResourceAddress> =
                            path[start..].iter().map(|a| (*a).clone()).collect();
                        return Err(GraphError::Cycle(rotate_to_smallest(cycle)));
                    }
                    None => {
                        marks.insert(n, Mark::Visiting);
                        path.push(n);
                        cursors.push(0);
                    }
                },
            }
        }
    }
    Ok(())
}

fn rotate_to_smallest(mut cycle: Vec<ResourceAddress>) -> Vec<ResourceAddress> {
    let min = cycle
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    cycle.rotate_left(min);
    let first = cycle[0].clone();
    cycle.push(first);
    cycle
}

/// Dependencies first; among nodes ready at the same time, the smallest
/// address goes first.
pub fn topo_order(g: &DependencyGraph) -> Result<Vec<ResourceAddress>, GraphError> {
    let mut remaining: BTreeMap<&ResourceAddress, usize> =
        g.nodes.iter().map(|n| (n, 0)).collect();
    let dependents = g.adjacency(|(from, to)| (to, from));
    for (from, _) in &g.edges {
        *remaining.get_mut(from).expect("edge endpoints are nodes") += 1;
    }
    let mut ready: BTreeSet<&ResourceAddress> = remaining
        .iter()
        .filter(|(_, &n)| n == 0)
        .map(|(a, _)| *a)
        .collect();
    let mut order = Vec::with_capacity(g.nodes.len());
    while let Some(next) = ready.pop_first() {
        order.push(next.clone());
        for d in dependents.get(next).into_iter().flatten() {
            let count = remaining.get_mut(d).expect("node");
            *count -= 1;
            if *count == 0 {
                ready.insert(d);
            }
        }
    }
    if order.len() != g.nodes.len() {
        detect_cycles(g)?;
        unreachable!("an incomplete ordering implies a cycle");
    }
    Ok(order)
}

pub fn reverse(g: &DependencyGraph) -> DependencyGraph {
    DependencyGraph {
        nodes: g.nodes.clone(),
        edges: g.edges.iter().map(|(a, b)| (b.clone(), a.clone())).collect(),
    }
}

/// Renders a DOT digraph: node declarations, then edges, both sorted.
pub fn render_dot(g: &DependencyGraph) -> String {
    let mut out = String::from("digraph {\n");
    for n in &g.nodes {
        let _ = writeln!(out, "  \"{n}\";");
    }
    for (a, b) in &g.edges {
        let _ = writeln!(out, "  \"{a}\" -> \"{b}\";");
    }
    out.push_str("}\n");
    out
}
