use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::framing::Nanos;
use crate::ids::{LinkId, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkSpec {
    pub id: LinkId,
    pub src: NodeId,
    pub dst: NodeId,
    pub capacity_bps: u64,
    /// Propagation plus processing and switching time at the receiver.
    pub latency: Nanos,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("duplicate link id {0}")]
    DuplicateLink(LinkId),
    #[error("link {link} references unknown node {node}")]
    UnknownNode { link: LinkId, node: NodeId },
    #[error("link {0} has zero capacity")]
    ZeroCapacity(LinkId),
    #[error("link {0} starts and ends at the same node")]
    SelfLoop(LinkId),
    #[error("path is empty")]
    EmptyPath,
    #[error("path references unknown link {0}")]
    UnknownLink(LinkId),
    #[error("links {from} and {to} are not consecutive")]
    Disconnected { from: LinkId, to: LinkId },
    #[error("path visits node {0} twice")]
    Loop(NodeId),
}

/// Directed graph of nodes and links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    nodes: BTreeSet<NodeId>,
    links: BTreeMap<LinkId, LinkSpec>,
}

impl Topology {
    pub fn new(
        nodes: impl IntoIterator<Item = NodeId>,
        links: impl IntoIterator<Item = LinkSpec>,
    ) -> Result<Self, TopologyError> {
        let mut node_set = BTreeSet::new();
        for n in nodes {
            if !node_set.insert(n) {
                return Err(TopologyError::DuplicateNode(n));
            }
        }
        let mut link_map = BTreeMap::new();
        for l in links {
            for node in [l.src, l.dst] {
                if !node_set.contains(&node) {
                    return Err(TopologyError::UnknownNode { link: l.id, node });
                }
            }
            if l.capacity_bps == 0 {
                return Err(TopologyError::ZeroCapacity(l.id));
            }
            if l.src == l.dst {
                return Err(TopologyError::SelfLoop(l.id));
            }
            if link_map.insert(l.id, l).is_some() {
                return Err(TopologyError::DuplicateLink(l.id));
            }
        }
        Ok(Self {
            nodes: node_set,
            links: link_map,
        })
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied()
    }

    pub fn links(&self) -> impl Iterator<Item = &LinkSpec> {
        self.links.values()
    }

    pub fn link(&self, id: LinkId) -> Option<&LinkSpec> {
        self.links.get(&id)
    }

    /// Checks that `path` is a non-empty, connected, loop-free walk.
    pub fn validate_path(&self, path: &[LinkId]) -> Result<(), TopologyError> {
        let first = path.first().ok_or(TopologyError::EmptyPath)?;
        let first = self
            .link(*first)
            .ok_or(TopologyError::UnknownLink(*first))?;
        let mut visited = BTreeSet::from([first.src]);
        let mut prev = first;
        for (k, id) in path.iter().enumerate() {
            let link = self.link(*id).ok_or(TopologyError::UnknownLink(*id))?;
            if k > 0 && link.src != prev.dst {
                return Err(TopologyError::Disconnected {
                    from: prev.id,
                    to: link.id,
                });
            }
            if !visited.insert(link.dst) {
                return Err(TopologyError::Loop(link.dst));
            }
            prev = link;
        }
        Ok(())
    }
}
