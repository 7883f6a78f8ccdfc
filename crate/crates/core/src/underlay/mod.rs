//! Simulated physical network beneath the overlay.
//!
//! Nodes are addressed by [`NodeHandle`]. Channels are bidirectional once up;
//! whether a node may *open* a channel is governed by its
//! [`ReachabilityPolicy`] and its [`Attachment`]. Every frame crossing a
//! channel is counted so that overlay routes can be measured in underlay
//! hops.

mod event;
mod oracle;
mod snapshot;
pub mod topology;

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use event::{order_events, EventAction, WorldEvent};
pub use oracle::{bfs_distances, Distance};
pub use snapshot::{ChannelRecord, NodeRecord, UnderlaySnapshot};
pub use topology::{build_topology, TopologyKind, TopologySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeHandle(pub u32);

impl NodeHandle {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for NodeHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyClass {
    Public,
    Natted,
}

/// Who may initiate a channel to a node.
///
/// A public node accepts any initiator. A natted node accepts only peers it
/// shares a hole-punch record with (or peers on its own LAN).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReachabilityPolicy {
    pub class: PolicyClass,
}

/// How a node is attached below the overlay.
///
/// `LinkOnly` nodes (ad-hoc and mesh edge networks) can only use the
/// channels their topology gives them. `Internet` nodes can dial any other
/// internet-attached node, subject to the destination's policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attachment {
    LinkOnly,
    Internet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnderlayNode {
    pub policy: ReachabilityPolicy,
    pub attachment: Attachment,
    /// Nodes sharing a LAN can always reach each other directly.
    pub lan: Option<u32>,
    pub alive: bool,
}

impl UnderlayNode {
    pub fn public_link_only() -> Self {
        UnderlayNode {
            policy: ReachabilityPolicy { class: PolicyClass::Public },
            attachment: Attachment::LinkOnly,
            lan: None,
            alive: true,
        }
    }

    pub fn internet(class: PolicyClass, lan: Option<u32>) -> Self {
        UnderlayNode {
            policy: ReachabilityPolicy { class },
            attachment: Attachment::Internet,
            lan,
            alive: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelState {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhysicalChannel {
    pub id: ChannelId,
    /// Lower handle first.
    pub endpoints: (NodeHandle, NodeHandle),
    /// Explicit channel or endpoint failure; not undone by `heal`.
    pub failed: bool,
    /// Cut by the active partition.
    pub partitioned: bool,
}

impl PhysicalChannel {
    pub fn other(&self, n: NodeHandle) -> NodeHandle {
        if self.endpoints.0 == n {
            self.endpoints.1
        } else {
            self.endpoints.0
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UnderlayError {
    #[error("invalid topology configuration: {0}")]
    Config(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeHandle),
    #[error("unknown channel {0:?}")]
    UnknownChannel(ChannelId),
    #[error("node {0} is unavailable")]
    NodeUnavailable(NodeHandle),
    #[error("policy denies {from} initiating to {to}")]
    PolicyDenied { from: NodeHandle, to: NodeHandle },
    #[error("no direct underlay path from {from} to {to}")]
    NotDialable { from: NodeHandle, to: NodeHandle },
    #[error("{from} and {to} are separated by a partition")]
    Partitioned { from: NodeHandle, to: NodeHandle },
    #[error("channel between {0} and {1} is down")]
    ChannelDown(NodeHandle, NodeHandle),
    #[error("introducer {introducer} lacks an up channel to {missing}")]
    IntroducerUnlinked { introducer: NodeHandle, missing: NodeHandle },
    #[error("hole punching between {0} and {1} is unsupported")]
    Unsupported(NodeHandle, NodeHandle),
    #[error("event at tick {got} precedes current tick {now}")]
    OutOfOrder { got: u64, now: u64 },
}

/// A frame could not make it across one hop.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("delivery failed between {from} and {to} after {hops} hops")]
pub struct DeliveryError {
    pub from: NodeHandle,
    pub to: NodeHandle,
    /// Hops completed before the failure.
    pub hops: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnderlayConfig {
    /// Probability a hole punch succeeds.
    pub punch_success: f64,
    /// Per-frame loss probability; zero keeps delivery lossless.
    pub drop_probability: f64,
    pub seed: u64,
}

impl Default for UnderlayConfig {
    fn default() -> Self {
        UnderlayConfig { punch_success: 1.0, drop_probability: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Underlay {
    nodes: Vec<UnderlayNode>,
    channels: Vec<PhysicalChannel>,
    adjacency: Vec<Vec<ChannelId>>,
    by_pair: HashMap<(NodeHandle, NodeHandle), ChannelId>,
    punch_records: BTreeSet<(NodeHandle, NodeHandle)>,
    partition: Option<Vec<u32>>,
    config: UnderlayConfig,
    rng: ChaCha8Rng,
    tick: u64,
    frames: u64,
}

fn ordered(a: NodeHandle, b: NodeHandle) -> (NodeHandle, NodeHandle) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Underlay {
    pub fn new(nodes: Vec<UnderlayNode>, config: UnderlayConfig) -> Self {
        let n = nodes.len();
        Underlay {
            nodes,
            channels: Vec::new(),
            adjacency: vec![Vec::new(); n],
            by_pair: HashMap::new(),
            punch_records: BTreeSet::new(),
            partition: None,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x756e_6465_726c_6179),
            config,
            tick: 0,
            frames: 0,
        }
    }

    /// `n` public link-only nodes joined by `edges`.
    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Self {
        let mut u = Underlay::new(vec![UnderlayNode::public_link_only(); n], UnderlayConfig::default());
        for &(a, b) in edges {
            u.add_channel(NodeHandle(a), NodeHandle(b));
        }
        u
    }

    pub fn config(&self) -> &UnderlayConfig {
        &self.config
    }

    pub fn set_config(&mut self, config: UnderlayConfig) {
        self.rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x756e_6465_726c_6179);
        self.config = config;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn handles(&self) -> impl Iterator<Item = NodeHandle> + '_ {
        (0..self.nodes.len() as u32).map(NodeHandle)
    }

    pub fn node(&self, h: NodeHandle) -> Option<&UnderlayNode> {
        self.nodes.get(h.index())
    }

    pub fn is_alive(&self, h: NodeHandle) -> bool {
        self.nodes.get(h.index()).is_some_and(|n| n.alive)
    }

    pub fn channels(&self) -> &[PhysicalChannel] {
        &self.channels
    }

    pub fn channel(&self, id: ChannelId) -> Option<&PhysicalChannel> {
        self.channels.get(id.0 as usize)
    }

    pub fn channel_between(&self, a: NodeHandle, b: NodeHandle) -> Option<&PhysicalChannel> {
        self.by_pair.get(&ordered(a, b)).map(|id| &self.channels[id.0 as usize])
    }

    pub fn channel_state(&self, id: ChannelId) -> ChannelState {
        let c = &self.channels[id.0 as usize];
        let (a, b) = c.endpoints;
        if c.failed || c.partitioned || !self.nodes[a.index()].alive || !self.nodes[b.index()].alive {
            ChannelState::Down
        } else {
            ChannelState::Up
        }
    }

    pub fn is_up(&self, id: ChannelId) -> bool {
        self.channel_state(id) == ChannelState::Up
    }

    /// Up channel joining `a` and `b`, if any.
    pub fn up_channel(&self, a: NodeHandle, b: NodeHandle) -> Option<ChannelId> {
        self.by_pair.get(&ordered(a, b)).copied().filter(|&id| self.is_up(id))
    }

    /// Neighbors of `h` over up channels, in channel creation order.
    pub fn up_neighbors(&self, h: NodeHandle) -> impl Iterator<Item = NodeHandle> + '_ {
        self.adjacency[h.index()]
            .iter()
            .filter(|&&c| self.is_up(c))
            .map(move |&c| self.channels[c.0 as usize].other(h))
    }

    pub fn degree(&self, h: NodeHandle) -> usize {
        self.adjacency[h.index()].len()
    }

    pub fn hole_punch_records(&self) -> impl Iterator<Item = &(NodeHandle, NodeHandle)> {
        self.punch_records.iter()
    }

    pub fn has_punch_record(&self, a: NodeHandle, b: NodeHandle) -> bool {
        self.punch_records.contains(&ordered(a, b))
    }

    pub fn partition_tag(&self, h: NodeHandle) -> Option<u32> {
        self.partition.as_ref().map(|t| t[h.index()])
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Total frames carried across channels so far.
    pub fn frames_delivered(&self) -> u64 {
        self.frames
    }

    /// Adds a channel without consulting policy (topology construction).
    /// Returns the existing channel if the pair is already joined.
    pub fn add_channel(&mut self, a: NodeHandle, b: NodeHandle) -> ChannelId {
        assert_ne!(a, b, "self-channels are not allowed");
        let key = ordered(a, b);
        if let Some(&id) = self.by_pair.get(&key) {
            return id;
        }
        let id = ChannelId(self.channels.len() as u32);
        let partitioned = self.crosses_partition(a, b);
        self.channels.push(PhysicalChannel { id, endpoints: key, failed: false, partitioned });
        self.adjacency[a.index()].push(id);
        self.adjacency[b.index()].push(id);
        self.by_pair.insert(key, id);
        id
    }

    fn crosses_partition(&self, a: NodeHandle, b: NodeHandle) -> bool {
        self.partition.as_ref().is_some_and(|t| t[a.index()] != t[b.index()])
    }

    fn check(&self, h: NodeHandle) -> Result<&UnderlayNode, UnderlayError> {
        self.nodes.get(h.index()).ok_or(UnderlayError::UnknownNode(h))
    }

    /// Whether `from` may open a new channel to `to`.
    pub fn may_initiate(&self, from: NodeHandle, to: NodeHandle) -> Result<(), UnderlayError> {
        let a = self.check(from)?;
        let b = self.check(to)?;
        if !a.alive {
            return Err(UnderlayError::NodeUnavailable(from));
        }
        if !b.alive {
            return Err(UnderlayError::NodeUnavailable(to));
        }
        if self.crosses_partition(from, to) {
            return Err(UnderlayError::Partitioned { from, to });
        }
        if a.lan.is_some() && a.lan == b.lan {
            return Ok(());
        }
        if a.attachment != Attachment::Internet || b.attachment != Attachment::Internet {
            return Err(UnderlayError::NotDialable { from, to });
        }
        match b.policy.class {
            PolicyClass::Public => Ok(()),
            PolicyClass::Natted if self.has_punch_record(from, to) => Ok(()),
            PolicyClass::Natted => Err(UnderlayError::PolicyDenied { from, to }),
        }
    }

    /// Opens (or reuses) a channel from `a` to `b`.
    pub fn connect(&mut self, a: NodeHandle, b: NodeHandle) -> Result<ChannelId, UnderlayError> {
        self.check(a)?;
        self.check(b)?;
        if a == b {
            return Err(UnderlayError::NotDialable { from: a, to: b });
        }
        if let Some(&id) = self.by_pair.get(&ordered(a, b)) {
            if self.is_up(id) {
                return Ok(id);
            }
            if !self.is_alive(a) {
                return Err(UnderlayError::NodeUnavailable(a));
            }
            if !self.is_alive(b) {
                return Err(UnderlayError::NodeUnavailable(b));
            }
            return Err(UnderlayError::ChannelDown(a, b));
        }
        self.may_initiate(a, b)?;
        Ok(self.add_channel(a, b))
    }

    /// Uses `introducer` to punch a direct channel between `a` and `b`.
    ///
    /// On failure the caller is expected to keep forwarding through the
    /// overlay instead.
    pub fn hole_punch(
        &mut self,
        a: NodeHandle,
        b: NodeHandle,
        introducer: NodeHandle,
    ) -> Result<ChannelId, UnderlayError> {
        for h in [a, b, introducer] {
            self.check(h)?;
        }
        for end in [a, b] {
            if self.up_channel(introducer, end).is_none() {
                return Err(UnderlayError::IntroducerUnlinked { introducer, missing: end });
            }
        }
        if let Some(id) = self.up_channel(a, b) {
            return Ok(id);
        }
        let internet = |h: NodeHandle| self.nodes[h.index()].attachment == Attachment::Internet;
        if !internet(a) || !internet(b) || self.crosses_partition(a, b) || a == b {
            return Err(UnderlayError::Unsupported(a, b));
        }
        if !self.rng.gen_bool(self.config.punch_success.clamp(0.0, 1.0)) {
            return Err(UnderlayError::Unsupported(a, b));
        }
        self.punch_records.insert(ordered(a, b));
        if let Some(&id) = self.by_pair.get(&ordered(a, b)) {
            // a punched session revives a previously failed mapping
            self.channels[id.0 as usize].failed = false;
            return Ok(id);
        }
        Ok(self.add_channel(a, b))
    }

    /// Carries one frame along `path`, one channel per consecutive pair.
    /// Returns the number of hops taken.
    pub fn deliver(&mut self, path: &[NodeHandle]) -> Result<u32, DeliveryError> {
        let mut hops = 0u32;
        for w in path.windows(2) {
            let (from, to) = (w[0], w[1]);
            let ok = self.up_channel(from, to).is_some()
                && (self.config.drop_probability <= 0.0
                    || !self.rng.gen_bool(self.config.drop_probability.min(1.0)));
            if !ok {
                return Err(DeliveryError { from, to, hops });
            }
            hops += 1;
            self.frames += 1;
        }
        Ok(hops)
    }

    /// Hop count over up channels, ignoring initiation policy.
    pub fn shortest_path_len(&self, a: NodeHandle, b: NodeHandle) -> Distance {
        oracle::shortest_path_len(self, a, b)
    }

    pub fn apply_event(&mut self, ev: &WorldEvent) -> Result<Vec<ChannelId>, UnderlayError> {
        if ev.at < self.tick {
            return Err(UnderlayError::OutOfOrder { got: ev.at, now: self.tick });
        }
        self.tick = ev.at;
        self.apply_action(&ev.action)
    }

    /// Applies `action` at the current tick. Returns the channels that came
    /// back up as a result (non-empty only for `heal`).
    pub fn apply_action(&mut self, action: &EventAction) -> Result<Vec<ChannelId>, UnderlayError> {
        match action {
            EventAction::NodeJoin { node } => {
                let n = NodeHandle(*node);
                self.check(n)?;
                self.nodes[n.index()].alive = true;
                Ok(Vec::new())
            }
            EventAction::NodeFail { node } => {
                let n = NodeHandle(*node);
                self.check(n)?;
                self.nodes[n.index()].alive = false;
                for &c in &self.adjacency[n.index()] {
                    self.channels[c.0 as usize].failed = true;
                }
                Ok(Vec::new())
            }
            EventAction::ChannelFail { a, b } => {
                let key = ordered(NodeHandle(*a), NodeHandle(*b));
                self.check(key.0)?;
                self.check(key.1)?;
                let id = *self.by_pair.get(&key).ok_or_else(|| {
                    UnderlayError::Config(format!("no channel between {} and {}", key.0, key.1))
                })?;
                self.channels[id.0 as usize].failed = true;
                Ok(Vec::new())
            }
            EventAction::Partition { groups } => {
                let mut tags = vec![0u32; self.nodes.len()];
                let mut seen = vec![false; self.nodes.len()];
                for (g, members) in groups.iter().enumerate() {
                    for &m in members {
                        let h = NodeHandle(m);
                        self.check(h)?;
                        if std::mem::replace(&mut seen[h.index()], true) {
                            return Err(UnderlayError::Config(format!(
                                "node {h} listed in more than one partition group"
                            )));
                        }
                        tags[h.index()] = g as u32 + 1;
                    }
                }
                for c in &mut self.channels {
                    let (a, b) = c.endpoints;
                    c.partitioned = tags[a.index()] != tags[b.index()];
                }
                self.partition = Some(tags);
                Ok(Vec::new())
            }
            EventAction::Heal => {
                let mut restored = Vec::new();
                for i in 0..self.channels.len() {
                    if self.channels[i].partitioned {
                        self.channels[i].partitioned = false;
                        if self.is_up(ChannelId(i as u32)) {
                            restored.push(ChannelId(i as u32));
                        }
                    }
                }
                self.partition = None;
                Ok(restored)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nat_pair() -> Underlay {
        // 0: public, 1: natted, 2: natted, 3: public
        Underlay::new(
            vec![
                UnderlayNode::internet(PolicyClass::Public, None),
                UnderlayNode::internet(PolicyClass::Natted, Some(1)),
                UnderlayNode::internet(PolicyClass::Natted, Some(2)),
                UnderlayNode::internet(PolicyClass::Public, None),
            ],
            UnderlayConfig::default(),
        )
    }

    #[test]
    fn initiation_policy() {
        let mut u = nat_pair();
        assert!(u.connect(NodeHandle(0), NodeHandle(3)).is_ok());
        assert_eq!(
            u.connect(NodeHandle(0), NodeHandle(1)),
            Err(UnderlayError::PolicyDenied { from: NodeHandle(0), to: NodeHandle(1) })
        );
        let c = u.connect(NodeHandle(1), NodeHandle(0)).unwrap();
        // once up, usable from the public side too
        assert_eq!(u.connect(NodeHandle(0), NodeHandle(1)), Ok(c));
        assert_eq!(u.deliver(&[NodeHandle(0), NodeHandle(1)]), Ok(1));
    }

    #[test]
    fn link_only_nodes_cannot_dial() {
        let mut u = Underlay::from_edges(3, &[(0, 1)]);
        assert!(u.connect(NodeHandle(1), NodeHandle(0)).is_ok());
        assert!(matches!(
            u.connect(NodeHandle(0), NodeHandle(2)),
            Err(UnderlayError::NotDialable { .. })
        ));
    }

    #[test]
    fn hole_punch_paths() {
        let mut u = nat_pair();
        u.connect(NodeHandle(1), NodeHandle(0)).unwrap();
        u.connect(NodeHandle(2), NodeHandle(0)).unwrap();
        assert!(matches!(
            u.hole_punch(NodeHandle(1), NodeHandle(2), NodeHandle(3)),
            Err(UnderlayError::IntroducerUnlinked { .. })
        ));
        let c = u.hole_punch(NodeHandle(1), NodeHandle(2), NodeHandle(0)).unwrap();
        assert!(u.is_up(c));
        assert!(u.has_punch_record(NodeHandle(2), NodeHandle(1)));

        let mut v = nat_pair();
        v.set_config(UnderlayConfig { punch_success: 0.0, ..UnderlayConfig::default() });
        v.connect(NodeHandle(1), NodeHandle(0)).unwrap();
        v.connect(NodeHandle(2), NodeHandle(0)).unwrap();
        assert_eq!(
            v.hole_punch(NodeHandle(1), NodeHandle(2), NodeHandle(0)),
            Err(UnderlayError::Unsupported(NodeHandle(1), NodeHandle(2)))
        );
        assert!(v.channel_between(NodeHandle(1), NodeHandle(2)).is_none());
    }

    #[test]
    fn hop_accounting_on_three_node_path() {
        let mut u = Underlay::from_edges(3, &[(0, 1), (1, 2)]);
        let before = u.frames_delivered();
        assert_eq!(u.deliver(&[NodeHandle(0), NodeHandle(1), NodeHandle(2)]), Ok(2));
        assert_eq!(u.deliver(&[NodeHandle(2), NodeHandle(1)]), Ok(1));
        assert_eq!(u.frames_delivered() - before, 3);
        let err = u.deliver(&[NodeHandle(0), NodeHandle(2)]).unwrap_err();
        assert_eq!(err.hops, 0);
    }

    #[test]
    fn failures_and_partitions() {
        let mut u = Underlay::from_edges(4, &[(0, 1), (1, 2), (2, 3)]);
        u.apply_event(&WorldEvent { at: 1, action: EventAction::Partition { groups: vec![vec![0, 1]] } })
            .unwrap();
        assert_eq!(u.shortest_path_len(NodeHandle(0), NodeHandle(3)), Distance::Unreachable);
        assert_eq!(u.shortest_path_len(NodeHandle(2), NodeHandle(3)), Distance::Hops(1));
        let restored = u.apply_event(&WorldEvent { at: 2, action: EventAction::Heal }).unwrap();
        assert_eq!(restored.len(), 1);
        assert_eq!(u.shortest_path_len(NodeHandle(0), NodeHandle(3)), Distance::Hops(3));

        u.apply_event(&WorldEvent { at: 3, action: EventAction::NodeFail { node: 1 } }).unwrap();
        assert_eq!(u.shortest_path_len(NodeHandle(0), NodeHandle(2)), Distance::Unreachable);
        assert!(u.apply_event(&WorldEvent { at: 2, action: EventAction::Heal }).is_err());
        assert!(matches!(
            u.apply_event(&WorldEvent { at: 4, action: EventAction::NodeFail { node: 9 } }),
            Err(UnderlayError::UnknownNode(_))
        ));
    }

    #[test]
    fn failing_isolated_node_touches_nothing() {
        let mut u = Underlay::from_edges(3, &[(0, 1)]);
        let before: Vec<_> = u.channels().to_vec();
        u.apply_action(&EventAction::NodeFail { node: 2 }).unwrap();
        assert_eq!(u.channels(), &before[..]);
    }
}
