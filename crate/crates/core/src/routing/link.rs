//! Physical and virtual links, with the dependency graph between them.
//!
//! A link joins two nodes and is shared by both ends' tables. A virtual link
//! is carried by two legs that meet at an intermediary; removing any link
//! removes every virtual link built on top of it.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::underlay::{ChannelId, NodeHandle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinkKind {
    Physical { channel: ChannelId },
    Virtual { via: NodeHandle, legs: [LinkId; 2] },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkRecord {
    pub ends: [NodeHandle; 2],
    pub kind: LinkKind,
    /// 0 for physical links, otherwise one more than the deeper leg.
    pub depth: u32,
    /// Underlay hops of the fully expanded route.
    pub hops: u32,
    pub dependents: Vec<LinkId>,
}

impl LinkRecord {
    pub fn other(&self, n: NodeHandle) -> NodeHandle {
        if self.ends[0] == n {
            self.ends[1]
        } else {
            self.ends[0]
        }
    }

    pub fn is_physical(&self) -> bool {
        matches!(self.kind, LinkKind::Physical { .. })
    }
}

fn pair(a: NodeHandle, b: NodeHandle) -> (NodeHandle, NodeHandle) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, Default)]
pub struct LinkStore {
    slots: Vec<Option<LinkRecord>>,
    free: Vec<u32>,
    by_pair: HashMap<(NodeHandle, NodeHandle), LinkId>,
}

impl LinkStore {
    pub fn get(&self, id: LinkId) -> Option<&LinkRecord> {
        self.slots.get(id.0 as usize).and_then(Option::as_ref)
    }

    pub fn between(&self, a: NodeHandle, b: NodeHandle) -> Option<LinkId> {
        self.by_pair.get(&pair(a, b)).copied()
    }

    pub fn len(&self) -> usize {
        self.by_pair.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_pair.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (LinkId, &LinkRecord)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|r| (LinkId(i as u32), r)))
    }

    pub fn add_physical(&mut self, a: NodeHandle, b: NodeHandle, channel: ChannelId) -> LinkId {
        self.put(LinkRecord {
            ends: [a, b],
            kind: LinkKind::Physical { channel },
            depth: 0,
            hops: 1,
            dependents: Vec::new(),
        })
    }

    /// Joins `a` and `b` through `via` using the existing legs `a–via` and
    /// `via–b`.
    pub fn add_virtual(&mut self, a: NodeHandle, via: NodeHandle, b: NodeHandle) -> Option<LinkId> {
        let left = self.between(a, via)?;
        let right = self.between(via, b)?;
        let (l, r) = (self.get(left)?, self.get(right)?);
        let rec = LinkRecord {
            ends: [a, b],
            kind: LinkKind::Virtual { via, legs: [left, right] },
            depth: 1 + l.depth.max(r.depth),
            hops: l.hops + r.hops,
            dependents: Vec::new(),
        };
        let id = self.put(rec);
        for leg in [left, right] {
            self.slots[leg.0 as usize].as_mut().unwrap().dependents.push(id);
        }
        Some(id)
    }

    /// Depth a virtual link `a–via–b` would have.
    pub fn virtual_depth(&self, a: NodeHandle, via: NodeHandle, b: NodeHandle) -> Option<u32> {
        let l = self.get(self.between(a, via)?)?;
        let r = self.get(self.between(via, b)?)?;
        Some(1 + l.depth.max(r.depth))
    }

    fn put(&mut self, rec: LinkRecord) -> LinkId {
        let key = pair(rec.ends[0], rec.ends[1]);
        assert!(!self.by_pair.contains_key(&key), "duplicate link {key:?}");
        let id = match self.free.pop() {
            Some(i) => {
                self.slots[i as usize] = Some(rec);
                LinkId(i)
            }
            None => {
                self.slots.push(Some(rec));
                LinkId(self.slots.len() as u32 - 1)
            }
        };
        self.by_pair.insert(key, id);
        id
    }

    /// Removes `id` and everything built on it. Returns the removed records
    /// in removal order (dependents after the link they rest on).
    pub fn remove_cascade(&mut self, id: LinkId) -> Vec<(LinkId, LinkRecord)> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(x) = stack.pop() {
            let Some(rec) = self.slots.get_mut(x.0 as usize).and_then(Option::take) else {
                continue;
            };
            self.free.push(x.0);
            self.by_pair.remove(&pair(rec.ends[0], rec.ends[1]));
            if let LinkKind::Virtual { legs, .. } = rec.kind {
                for leg in legs {
                    if let Some(Some(l)) = self.slots.get_mut(leg.0 as usize) {
                        l.dependents.retain(|&d| d != x);
                    }
                }
            }
            stack.extend(rec.dependents.iter().copied());
            out.push((x, rec));
        }
        out
    }

    /// `id` plus every link resting on it, transitively: what
    /// [`remove_cascade`](Self::remove_cascade) would take.
    pub fn dependents_closure(&self, id: LinkId) -> HashSet<LinkId> {
        let mut seen = HashSet::new();
        let mut stack = vec![id];
        while let Some(x) = stack.pop() {
            if !seen.insert(x) {
                continue;
            }
            if let Some(rec) = self.get(x) {
                stack.extend(rec.dependents.iter().copied());
            }
        }
        seen
    }

    /// `id` plus every link it rests on, transitively.
    pub fn support(&self, id: LinkId) -> HashSet<LinkId> {
        let mut seen = HashSet::new();
        let mut stack = vec![id];
        while let Some(x) = stack.pop() {
            if !seen.insert(x) {
                continue;
            }
            if let Some(LinkRecord { kind: LinkKind::Virtual { legs, .. }, .. }) = self.get(x) {
                stack.extend(legs);
            }
        }
        seen
    }

    /// Node sequence obtained by expanding `id` starting at `from`.
    pub fn route(&self, id: LinkId, from: NodeHandle) -> Vec<NodeHandle> {
        let mut out = vec![from];
        self.expand_into(id, from, &mut out);
        out
    }

    fn expand_into(&self, id: LinkId, from: NodeHandle, out: &mut Vec<NodeHandle>) {
        let rec = self.get(id).expect("route over a removed link");
        match rec.kind {
            LinkKind::Physical { .. } => out.push(rec.other(from)),
            LinkKind::Virtual { via, legs } => {
                let to = rec.other(from);
                // legs[0] touches ends[0], legs[1] touches ends[1]
                let (first, second) =
                    if from == rec.ends[0] { (legs[0], legs[1]) } else { (legs[1], legs[0]) };
                self.expand_into(first, from, out);
                self.expand_into(second, via, out);
                debug_assert_eq!(*out.last().unwrap(), to);
            }
        }
    }
}
