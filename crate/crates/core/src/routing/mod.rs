//! The overlay protocol: neighbor tables, virtual links, join, search,
//! forwarding, failure teardown and repair.
//!
//! All nodes of one simulated network live in a [`World`]. Node behavior is
//! expressed as handlers that read only the handling node's table; every
//! exchange between two nodes is sent over a link and paid for in underlay
//! frames.

pub mod audit;
mod forward;
mod join;
pub mod link;
pub mod message;
mod repair;
mod search;
pub mod table;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::{common_prefix_len, NodeId};
use crate::underlay::{
    ChannelId, DeliveryError, EventAction, NodeHandle, Underlay, UnderlayError, WorldEvent,
};

pub use audit::{audit, AuditReport, Violation, ViolationKind};
pub use forward::{shortcut_route, DeliveryOutcome, Packet};
pub use join::JoinReport;
pub use link::{LinkId, LinkKind, LinkRecord, LinkStore};
pub use message::{Counter, MessageCounters, MessageKind, Phase, ProtocolMessage};
pub use repair::RepairReport;
pub use search::{SearchOutcome, SearchResult, SearchStep, SearchTrace};
pub use table::{EntryOrigin, NeighborEntry, NeighborTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub id_bits: u16,
    pub k: usize,
    /// Defaults to `2 * k`.
    pub k_max: Option<usize>,
    pub depth_cap: u32,
    pub repair_period: u64,
    /// Defaults to ten repair periods.
    pub liveness_timeout: Option<u64>,
    pub punch_success: f64,
    pub direct_upgrade: bool,
    pub drop_probability: f64,
    pub route_shortcuts: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            id_bits: 64,
            k: 3,
            k_max: None,
            depth_cap: 32,
            repair_period: 10,
            liveness_timeout: None,
            punch_success: 1.0,
            direct_upgrade: true,
            drop_probability: 0.0,
            route_shortcuts: true,
        }
    }
}

impl ProtocolConfig {
    pub fn k_max(&self) -> usize {
        self.k_max.unwrap_or(2 * self.k)
    }

    pub fn liveness_timeout(&self) -> u64 {
        self.liveness_timeout.unwrap_or(10 * self.repair_period)
    }

    /// Checks documented ranges. The error names the offending key.
    pub fn validate(&self) -> Result<(), String> {
        if !(8..=256).contains(&self.id_bits) {
            return Err(format!("protocol.id_bits must be in 8..=256, got {}", self.id_bits));
        }
        self.validate_params()
    }

    /// Everything but the id width, which hand-built worlds may set lower.
    fn validate_params(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("protocol.k must be at least 1".into());
        }
        if self.k_max() < self.k {
            return Err(format!("protocol.k_max must be at least k ({}), got {}", self.k, self.k_max()));
        }
        if self.depth_cap == 0 {
            return Err("protocol.depth_cap must be at least 1".into());
        }
        if self.repair_period == 0 {
            return Err("protocol.repair_period must be at least 1".into());
        }
        if self.liveness_timeout() == 0 {
            return Err("protocol.liveness_timeout must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.punch_success) {
            return Err(format!("protocol.punch_success must be in [0, 1], got {}", self.punch_success));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(format!(
                "protocol.drop_probability must be in [0, 1], got {}",
                self.drop_probability
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RoutingError {
    #[error("a node cannot search for its own identifier")]
    SelfSearch,
    #[error("unknown node {0}")]
    UnknownNode(NodeHandle),
    #[error("node {0} has not joined")]
    NotJoined(NodeHandle),
    #[error("node {0} has already joined")]
    AlreadyJoined(NodeHandle),
    #[error("node {0} is down")]
    NodeDown(NodeHandle),
    #[error("identifier {0} is already in use")]
    DuplicateId(NodeId),
    #[error("bootstrap {0} is unreachable")]
    BootstrapUnreachable(NodeHandle),
    #[error("virtual link would have depth {depth}, above the cap of {cap}")]
    DepthCapExceeded { depth: u32, cap: u32 },
    #[error("no link from {from} to {to}")]
    NoLink { from: NodeHandle, to: NodeHandle },
    #[error("{0} has no neighbor entry for the destination")]
    NoRoute(NodeHandle),
    #[error("link failed between {from} and {to} after {hops} hops")]
    LinkFailed { from: NodeHandle, to: NodeHandle, hops: u32 },
    #[error("invalid world: {0}")]
    Config(String),
    #[error(transparent)]
    Underlay(#[from] UnderlayError),
}

impl From<DeliveryError> for RoutingError {
    fn from(e: DeliveryError) -> Self {
        RoutingError::LinkFailed { from: e.from, to: e.to, hops: e.hops }
    }
}

const WIDE_SEARCH_ATTEMPTS: u8 = 3;

/// An overlay over one underlay.
#[derive(Debug, Clone)]
pub struct World {
    underlay: Underlay,
    config: ProtocolConfig,
    seed: u64,
    ids: Vec<NodeId>,
    by_id: HashMap<NodeId, NodeHandle>,
    tables: Vec<NeighborTable>,
    joined: Vec<bool>,
    links: LinkStore,
    counters: MessageCounters,
    phase: Phase,
    tick: u64,
    repair_draws: Vec<u64>,
    pending_repair: BTreeSet<NodeHandle>,
    /// Buckets emptied by a teardown, with the wide searches left to try.
    lost_buckets: BTreeMap<(NodeHandle, usize), u8>,
    /// Buckets left past k_max because nothing in them could be let go.
    overfull: BTreeSet<(NodeHandle, usize)>,
    overflows: u64,
    log: Option<Vec<ProtocolMessage>>,
}

impl World {
    /// `ids[i]` is the identifier of underlay node `i`. No node has joined yet.
    pub fn new(
        mut underlay: Underlay,
        ids: Vec<NodeId>,
        config: ProtocolConfig,
        seed: u64,
    ) -> Result<Self, RoutingError> {
        config.validate_params().map_err(RoutingError::Config)?;
        if config.id_bits == 0 || config.id_bits > 256 {
            return Err(RoutingError::Config(format!("id width {} out of range", config.id_bits)));
        }
        if ids.len() != underlay.len() {
            return Err(RoutingError::Config(format!(
                "{} identifiers for {} underlay nodes",
                ids.len(),
                underlay.len()
            )));
        }
        if let Some(bad) = ids.iter().find(|id| id.bit_len() != config.id_bits) {
            return Err(RoutingError::Config(format!(
                "identifier {bad} has {} bits, world uses {}",
                bad.bit_len(),
                config.id_bits
            )));
        }
        let mut ucfg = *underlay.config();
        ucfg.punch_success = config.punch_success;
        ucfg.drop_probability = config.drop_probability;
        underlay.set_config(ucfg);
        let n = ids.len();
        Ok(World {
            underlay,
            config,
            seed,
            tables: ids.iter().map(|&id| NeighborTable::new(id)).collect(),
            ids,
            by_id: HashMap::new(),
            joined: vec![false; n],
            links: LinkStore::default(),
            counters: MessageCounters::default(),
            phase: Phase::Join,
            tick: 0,
            repair_draws: vec![0; n],
            pending_repair: BTreeSet::new(),
            lost_buckets: BTreeMap::new(),
            overfull: BTreeSet::new(),
            overflows: 0,
            log: None,
        })
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn set_direct_upgrade(&mut self, on: bool) {
        self.config.direct_upgrade = on;
    }

    pub fn set_route_shortcuts(&mut self, on: bool) {
        self.config.route_shortcuts = on;
    }

    pub fn underlay(&self) -> &Underlay {
        &self.underlay
    }

    pub fn underlay_mut(&mut self) -> &mut Underlay {
        &mut self.underlay
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, h: NodeHandle) -> &NodeId {
        &self.ids[h.index()]
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    /// Handle of the joined node carrying `id`.
    pub fn handle_of(&self, id: &NodeId) -> Option<NodeHandle> {
        self.by_id.get(id).copied()
    }

    pub fn table(&self, h: NodeHandle) -> &NeighborTable {
        &self.tables[h.index()]
    }

    pub fn links(&self) -> &LinkStore {
        &self.links
    }

    pub fn counters(&self) -> &MessageCounters {
        &self.counters
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn set_tick(&mut self, tick: u64) {
        self.tick = tick;
    }

    pub fn is_joined(&self, h: NodeHandle) -> bool {
        self.joined.get(h.index()).copied().unwrap_or(false)
    }

    /// Joined and alive.
    pub fn is_active(&self, h: NodeHandle) -> bool {
        self.is_joined(h) && self.underlay.is_alive(h)
    }

    pub fn active_nodes(&self) -> Vec<NodeHandle> {
        self.underlay.handles().filter(|&h| self.is_active(h)).collect()
    }

    /// Times a bucket had to exceed `k_max` because every candidate for
    /// eviction was protected.
    pub fn overflow_count(&self) -> u64 {
        self.overflows
    }

    pub fn pending_repair(&self) -> &BTreeSet<NodeHandle> {
        &self.pending_repair
    }

    pub fn enable_message_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn message_log(&self) -> Option<&[ProtocolMessage]> {
        self.log.as_deref()
    }

    fn check_node(&self, h: NodeHandle) -> Result<(), RoutingError> {
        if h.index() >= self.ids.len() {
            return Err(RoutingError::UnknownNode(h));
        }
        Ok(())
    }

    fn check_active(&self, h: NodeHandle) -> Result<(), RoutingError> {
        self.check_node(h)?;
        if !self.joined[h.index()] {
            return Err(RoutingError::NotJoined(h));
        }
        if !self.underlay.is_alive(h) {
            return Err(RoutingError::NodeDown(h));
        }
        Ok(())
    }

    fn record(&mut self, kind: MessageKind, from: NodeHandle, to: NodeHandle, frames: u32, delivered: bool) {
        self.counters.record(self.phase, kind, frames as u64);
        if let Some(log) = self.log.as_mut() {
            log.push(ProtocolMessage {
                tick: self.tick,
                kind,
                from: self.ids[from.index()].to_hex(),
                to: self.ids[to.index()].to_hex(),
                frames,
                delivered,
            });
        }
    }

    /// Sends one message from `from` to the other end of `link`.
    ///
    /// Success refreshes liveness on every link the route rests on. A failed
    /// hop tears down the physical link it crossed, which takes every link
    /// built over it along.
    pub(crate) fn send(&mut self, from: NodeHandle, link: LinkId, kind: MessageKind) -> Result<u32, RoutingError> {
        let rec = self.links.get(link).ok_or(RoutingError::NoLink { from, to: from })?;
        let to = rec.other(from);
        let route = self.links.route(link, from);
        self.deliver_route(from, to, &route, link, kind)
    }

    fn deliver_route(
        &mut self,
        from: NodeHandle,
        to: NodeHandle,
        route: &[NodeHandle],
        link: LinkId,
        kind: MessageKind,
    ) -> Result<u32, RoutingError> {
        match self.underlay.deliver(route) {
            Ok(hops) => {
                self.record(kind, from, to, hops, true);
                self.refresh(link);
                Ok(hops)
            }
            Err(e) => {
                self.record(kind, from, to, e.hops, false);
                self.drop_failed_hop(e.from, e.to);
                if self.links.get(link).is_some() {
                    self.remove_link(link);
                }
                Err(e.into())
            }
        }
    }

    fn drop_failed_hop(&mut self, a: NodeHandle, b: NodeHandle) {
        if let Some(l) = self.links.between(a, b) {
            if self.links.get(l).is_some_and(LinkRecord::is_physical) {
                self.remove_link(l);
            }
        }
    }

    fn refresh(&mut self, link: LinkId) {
        let tick = self.tick;
        for l in self.links.support(link) {
            let Some(rec) = self.links.get(l) else { continue };
            let [a, b] = rec.ends;
            let (ida, idb) = (self.ids[a.index()], self.ids[b.index()]);
            if let Some(e) = self.tables[a.index()].get_mut(&idb) {
                e.liveness = tick;
            }
            if let Some(e) = self.tables[b.index()].get_mut(&ida) {
                e.liveness = tick;
            }
        }
    }

    /// Sends a request over `link` and the reply back.
    pub(crate) fn exchange(
        &mut self,
        from: NodeHandle,
        link: LinkId,
        request: MessageKind,
        reply: MessageKind,
    ) -> Result<(), RoutingError> {
        let peer = self.links.get(link).ok_or(RoutingError::NoLink { from, to: from })?.other(from);
        self.send(from, link, request)?;
        self.send(peer, link, reply)?;
        Ok(())
    }

    /// Asks `contact` a question on behalf of `origin`. Local when they are
    /// the same node.
    pub(crate) fn query(&mut self, origin: NodeHandle, contact: NodeHandle) -> Result<(), RoutingError> {
        if origin == contact {
            return Ok(());
        }
        let link = self.links.between(origin, contact).ok_or(RoutingError::NoLink { from: origin, to: contact })?;
        self.exchange(origin, link, MessageKind::NearestQuery, MessageKind::NearestReply)
    }

    /// The entry in `receiver`'s table closest to `target`, skipping
    /// `exclude`; none unless it beats the receiver itself.
    pub fn handle_nearest_query(
        &self,
        receiver: NodeHandle,
        target: &NodeId,
        exclude: &[NodeId],
    ) -> Option<NeighborEntry> {
        self.tables.get(receiver.index())?.nearest(target, exclude).cloned()
    }

    pub(crate) fn link_hops(&self, link: LinkId) -> u32 {
        self.links.get(link).map_or(u32::MAX, |r| r.hops)
    }

    /// Records a physical link over `channel` in both tables.
    pub(crate) fn add_physical_link(
        &mut self,
        a: NodeHandle,
        b: NodeHandle,
        channel: ChannelId,
        origin: EntryOrigin,
    ) -> Result<LinkId, RoutingError> {
        if let Some(l) = self.links.between(a, b) {
            return Ok(l);
        }
        let link = self.links.add_physical(a, b, channel);
        self.install(link, origin);
        if self.links.get(link).is_none() {
            return Err(RoutingError::NoLink { from: a, to: b });
        }
        self.send(a, link, MessageKind::LinkSetup)?;
        Ok(link)
    }

    /// Builds `owner–remote` as a virtual link through `via`.
    pub fn build_virtual_link(
        &mut self,
        owner: NodeHandle,
        via: NodeHandle,
        remote: NodeHandle,
    ) -> Result<LinkId, RoutingError> {
        let link = self.build_virtual(owner, via, remote, EntryOrigin::Search)?;
        let keep = self.links.support(link);
        self.settle(&keep);
        Ok(link)
    }

    fn build_virtual(
        &mut self,
        owner: NodeHandle,
        via: NodeHandle,
        remote: NodeHandle,
        origin: EntryOrigin,
    ) -> Result<LinkId, RoutingError> {
        if let Some(l) = self.links.between(owner, remote) {
            return Ok(l);
        }
        if owner == remote || via == owner || via == remote {
            return Err(RoutingError::NoLink { from: owner, to: remote });
        }
        let depth = self
            .links
            .virtual_depth(owner, via, remote)
            .ok_or(RoutingError::NoLink { from: owner, to: via })?;
        if depth > self.config.depth_cap {
            return Err(RoutingError::DepthCapExceeded { depth, cap: self.config.depth_cap });
        }
        let link = self.links.add_virtual(owner, via, remote).expect("legs checked above");
        self.install(link, origin);
        if self.links.get(link).is_none() {
            return Err(RoutingError::NoLink { from: owner, to: remote });
        }
        self.send(owner, link, MessageKind::LinkSetup)?;
        Ok(link)
    }

    /// Gives `origin` a link to `cand`: an existing one, a direct channel if
    /// allowed, or a virtual link through `via`.
    pub(crate) fn ensure_link(
        &mut self,
        origin: NodeHandle,
        cand: NodeHandle,
        via: Option<NodeHandle>,
        tag: EntryOrigin,
    ) -> Result<LinkId, RoutingError> {
        if let Some(l) = self.links.between(origin, cand) {
            return Ok(l);
        }
        if origin == cand {
            return Err(RoutingError::NoLink { from: origin, to: cand });
        }
        if self.config.direct_upgrade {
            if let Some(ch) = self.try_direct(origin, cand, via) {
                if let Ok(l) = self.add_physical_link(origin, cand, ch, tag) {
                    return Ok(l);
                }
            }
        }
        match via {
            Some(v) => {
                let v = self.best_via(origin, cand, v);
                self.build_virtual(origin, v, cand, tag)
            }
            None => Err(RoutingError::NoLink { from: origin, to: cand }),
        }
    }

    /// The common neighbor of `a` and `b` giving the shortest route within
    /// the depth cap; `named` when none beats it.
    fn best_via(&self, a: NodeHandle, b: NodeHandle, named: NodeHandle) -> NodeHandle {
        let cost = |v: NodeHandle| {
            let l = self.links.get(self.links.between(a, v)?)?;
            let r = self.links.get(self.links.between(v, b)?)?;
            let depth = 1 + l.depth.max(r.depth);
            (depth <= self.config.depth_cap).then_some((l.hops + r.hops, depth, v != named, v))
        };
        self.tables[a.index()]
            .iter()
            .filter(|e| e.node != b)
            .filter_map(|e| cost(e.node))
            .chain(cost(named))
            .min()
            .map_or(named, |c| c.3)
    }

    fn try_direct(&mut self, a: NodeHandle, b: NodeHandle, via: Option<NodeHandle>) -> Option<ChannelId> {
        if let Some(ch) = self.underlay.up_channel(a, b) {
            return Some(ch);
        }
        if self.underlay.channel_between(a, b).is_some() {
            // a failed channel stays failed
            return None;
        }
        match self.underlay.connect(a, b) {
            Ok(ch) => return Some(ch),
            Err(UnderlayError::PolicyDenied { .. }) => {}
            Err(_) => return None,
        }
        let mut introducers: Vec<NodeHandle> = via.into_iter().collect();
        introducers.extend(self.underlay.up_neighbors(b).filter(|&x| {
            x != a && self.underlay.may_initiate(a, x).is_ok() && self.underlay.may_initiate(x, b).is_ok()
        }));
        for intro in introducers {
            if intro == a || intro == b {
                continue;
            }
            if self.underlay.up_channel(intro, b).is_none() {
                continue;
            }
            if self.underlay.up_channel(a, intro).is_none() && self.underlay.connect(a, intro).is_err() {
                continue;
            }
            return self.underlay.hole_punch(a, b, intro).ok();
        }
        None
    }

    /// Adds the entries for `link` to both ends and trims overfull buckets.
    fn install(&mut self, link: LinkId, origin: EntryOrigin) {
        let rec = self.links.get(link).expect("fresh link");
        let ends = rec.ends;
        for (i, &end) in ends.iter().enumerate() {
            let other = ends[1 - i];
            let entry = NeighborEntry {
                id: self.ids[other.index()],
                node: other,
                link,
                liveness: self.tick,
                origin,
            };
            self.tables[end.index()].insert(entry);
        }
        let protected = self.links.support(link);
        for (i, &end) in ends.iter().enumerate() {
            let b = self.tables[end.index()].bucket_index(&self.ids[ends[1 - i].index()]);
            self.enforce_capacity(end, b, &protected);
        }
        // the new entry may be what lets an overfull bucket elsewhere let go
        for (i, &end) in ends.iter().enumerate() {
            let b = self.tables[end.index()].bucket_index(&self.ids[ends[1 - i].index()]);
            let own = self.ids[end.index()];
            let far: Vec<(NodeHandle, usize)> = self.tables[end.index()]
                .bucket(b)
                .iter()
                .map(|e| (e.node, self.tables[e.node.index()].bucket_index(&own)))
                .filter(|&(m, c)| m != ends[1 - i] && self.tables[m.index()].bucket(c).len() > self.config.k_max())
                .collect();
            for (m, c) in far {
                self.enforce_capacity(m, c, &protected);
            }
        }
    }

    /// Evicts free entries from an overfull bucket. Physical links and
    /// links others rest on are never evicted; if only such entries are
    /// left the bucket stays over `k_max` and the overflow is counted.
    pub(crate) fn enforce_capacity(&mut self, node: NodeHandle, b: usize, protected: &HashSet<LinkId>) {
        let k_max = self.config.k_max();
        while self.tables[node.index()].bucket(b).len() > k_max {
            let victim = self.tables[node.index()]
                .bucket(b)
                .iter()
                .filter(|e| !protected.contains(&e.link) && self.is_free(e.link))
                .max_by(|x, y| self.eviction_rank(x).cmp(&self.eviction_rank(y)))
                .map(|e| e.link);
            match victim {
                Some(l) => {
                    self.remove_link(l);
                }
                None => {
                    if self.overfull.insert((node, b)) {
                        self.overflows += 1;
                    }
                    return;
                }
            }
        }
        self.overfull.remove(&(node, b));
    }

    /// Retries every overfull bucket until a pass lets nothing go. Run at
    /// the end of each public operation; `protected` is what the caller is
    /// about to use.
    pub(crate) fn settle(&mut self, protected: &HashSet<LinkId>) -> usize {
        let before = self.links.len();
        loop {
            let links = self.links.len();
            for (n, b) in self.overfull.clone() {
                if self.is_active(n) {
                    self.enforce_capacity(n, b, protected);
                } else {
                    self.overfull.remove(&(n, b));
                }
            }
            if self.links.len() == links {
                return before - self.links.len();
            }
        }
    }

    /// A virtual link nothing rests on whose removal empties no bucket.
    pub(crate) fn is_free(&self, link: LinkId) -> bool {
        self.links
            .get(link)
            .is_some_and(|r| !r.is_physical() && r.dependents.is_empty() && !self.removal_empties_bucket(link))
    }

    /// Whether tearing down `link` would leave some bucket, at either end
    /// of anything resting on it, empty.
    pub(crate) fn removal_empties_bucket(&self, link: LinkId) -> bool {
        self.removal_leaves_below(link, 1)
    }

    /// Whether tearing down `link` would leave some affected bucket with
    /// fewer than `floor` entries.
    pub(crate) fn removal_leaves_below(&self, link: LinkId, floor: usize) -> bool {
        let mut lost: HashMap<(NodeHandle, usize), usize> = HashMap::new();
        for l in self.links.dependents_closure(link) {
            let Some(rec) = self.links.get(l) else { continue };
            let [a, b] = rec.ends;
            for (end, other) in [(a, b), (b, a)] {
                let bucket = self.tables[end.index()].bucket_index(&self.ids[other.index()]);
                *lost.entry((end, bucket)).or_default() += 1;
            }
        }
        lost.into_iter().any(|((end, bucket), n)| self.tables[end.index()].bucket(bucket).len() < n + floor)
    }

    /// Larger is evicted first.
    fn eviction_rank(&self, e: &NeighborEntry) -> (u32, std::cmp::Reverse<u64>, NodeId) {
        let rec = self.links.get(e.link).expect("entry without link");
        (rec.depth, std::cmp::Reverse(e.liveness), e.id)
    }

    /// Removes `link` and every link resting on it from all tables. Returns
    /// the number of links removed.
    pub(crate) fn remove_link(&mut self, link: LinkId) -> usize {
        let removed = self.links.remove_cascade(link);
        for (lid, rec) in &removed {
            let [a, b] = rec.ends;
            for (end, other) in [(a, b), (b, a)] {
                let oid = self.ids[other.index()];
                let t = &mut self.tables[end.index()];
                if t.get(&oid).is_some_and(|e| e.link == *lid) {
                    t.remove(&oid);
                    let b = t.bucket_index(&oid);
                    if t.bucket(b).is_empty() {
                        self.lost_buckets.insert((end, b), WIDE_SEARCH_ATTEMPTS);
                    }
                }
                self.pending_repair.insert(end);
            }
            self.record(MessageKind::LinkTeardown, a, b, 0, true);
        }
        removed.len()
    }

    /// Drops `failed` from `node`'s table along with everything built on it.
    /// Unknown links and links not touching `node` are ignored.
    pub fn handle_link_failure(&mut self, node: NodeHandle, failed: LinkId) -> usize {
        let removed = match self.links.get(failed) {
            Some(rec) if rec.ends.contains(&node) => self.remove_link(failed),
            _ => 0,
        };
        self.settle(&HashSet::new());
        removed
    }

    /// Applies one scheduled event and lets the protocol react to what it
    /// can observe locally.
    pub fn apply_event(&mut self, ev: &WorldEvent) -> Result<(), RoutingError> {
        if ev.at > self.tick {
            self.tick = ev.at;
        }
        let restored = self.underlay.apply_event(ev)?;
        match &ev.action {
            EventAction::NodeJoin { node } => {
                let h = NodeHandle(*node);
                if !self.is_joined(h) {
                    self.join(h, None)?;
                }
            }
            EventAction::Heal => self.reconnect(&restored),
            _ => {}
        }
        self.settle(&HashSet::new());
        Ok(())
    }

    /// Links the ends of channels that just came back and runs the bridge
    /// walk across each.
    pub fn reconnect(&mut self, channels: &[ChannelId]) {
        let mut seeds = Vec::new();
        for &ch in channels {
            let Some(c) = self.underlay.channel(ch) else { continue };
            let (a, b) = c.endpoints;
            if !self.is_active(a) || !self.is_active(b) || !self.underlay.is_up(ch) {
                continue;
            }
            if self.add_physical_link(a, b, ch, EntryOrigin::Physical).is_err() {
                continue;
            }
            for (x, y) in [(a, b), (b, a)] {
                if matches!(self.bridge_walk(x, y), Ok(true)) {
                    seeds.push(x);
                }
            }
        }
        self.bridge_cascade(seeds);
        self.settle(&HashSet::new());
    }

    pub(crate) fn proximity_of(&self, a: NodeHandle, b: NodeHandle) -> u16 {
        common_prefix_len(&self.ids[a.index()], &self.ids[b.index()])
    }
}
