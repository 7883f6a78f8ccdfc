use serde::{Deserialize, Serialize};

use super::link::LinkId;
use crate::identity::{common_prefix_len, NodeId};
use crate::underlay::NodeHandle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryOrigin {
    Physical,
    Join,
    Search,
    Repair,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborEntry {
    pub id: NodeId,
    /// Underlay attachment of the neighbor (its "address").
    pub node: NodeHandle,
    pub link: LinkId,
    /// Tick of the last successful exchange over `link`.
    pub liveness: u64,
    pub origin: EntryOrigin,
}

/// Neighbors bucketed by proximity to the owner.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    owner: NodeId,
    buckets: Vec<Vec<NeighborEntry>>,
}

impl NeighborTable {
    pub fn new(owner: NodeId) -> Self {
        NeighborTable { owner, buckets: vec![Vec::new(); owner.bit_len() as usize] }
    }

    pub fn owner(&self) -> &NodeId {
        &self.owner
    }

    pub fn bucket_index(&self, id: &NodeId) -> usize {
        common_prefix_len(&self.owner, id) as usize
    }

    pub fn bucket(&self, b: usize) -> &[NeighborEntry] {
        &self.buckets[b]
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    pub fn get(&self, id: &NodeId) -> Option<&NeighborEntry> {
        if *id == self.owner {
            return None;
        }
        self.buckets[self.bucket_index(id)].iter().find(|e| e.id == *id)
    }

    pub(crate) fn get_mut(&mut self, id: &NodeId) -> Option<&mut NeighborEntry> {
        if *id == self.owner {
            return None;
        }
        let b = self.bucket_index(id);
        self.buckets[b].iter_mut().find(|e| e.id == *id)
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.get(id).is_some()
    }

    /// Adds `entry` to its bucket. Capacity is enforced by the caller.
    pub(crate) fn insert(&mut self, entry: NeighborEntry) -> usize {
        assert_ne!(entry.id, self.owner, "a node cannot be its own neighbor");
        let b = self.bucket_index(&entry.id);
        debug_assert!(!self.buckets[b].iter().any(|e| e.id == entry.id));
        self.buckets[b].push(entry);
        b
    }

    pub(crate) fn remove(&mut self, id: &NodeId) -> Option<NeighborEntry> {
        if *id == self.owner {
            return None;
        }
        let b = self.bucket_index(id);
        let pos = self.buckets[b].iter().position(|e| e.id == *id)?;
        Some(self.buckets[b].remove(pos))
    }

    pub fn iter(&self) -> impl Iterator<Item = &NeighborEntry> {
        self.buckets.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.iter().all(Vec::is_empty)
    }

    pub fn nonempty_buckets(&self) -> usize {
        self.buckets.iter().filter(|b| !b.is_empty()).count()
    }

    pub fn highest_nonempty(&self) -> Option<usize> {
        self.buckets.iter().rposition(|b| !b.is_empty())
    }

    /// The entry closest to `target` that is strictly closer than the owner,
    /// ties going to the numerically smallest id.
    pub fn nearest(&self, target: &NodeId, exclude: &[NodeId]) -> Option<&NeighborEntry> {
        let floor = common_prefix_len(&self.owner, target);
        self.iter()
            .filter(|e| !exclude.contains(&e.id))
            .map(|e| (common_prefix_len(&e.id, target), e))
            .filter(|&(p, _)| p > floor)
            .min_by(|(pa, a), (pb, b)| pb.cmp(pa).then_with(|| a.id.cmp(&b.id)))
            .map(|(_, e)| e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> NodeId {
        NodeId::from_bit_str(s).unwrap()
    }

    fn entry(s: &str, n: u32) -> NeighborEntry {
        NeighborEntry {
            id: id(s),
            node: NodeHandle(n),
            link: LinkId(n),
            liveness: 0,
            origin: EntryOrigin::Physical,
        }
    }

    #[test]
    fn bucket_placement() {
        let mut t = NeighborTable::new(id("1011"));
        assert_eq!(t.insert(entry("1001", 1)), 2);
        assert_eq!(t.insert(entry("0011", 2)), 0);
        assert_eq!(t.insert(entry("1010", 3)), 3);
        assert_eq!(t.nonempty_buckets(), 3);
        assert_eq!(t.highest_nonempty(), Some(3));
        assert!(t.remove(&id("0011")).is_some());
        assert!(t.remove(&id("0011")).is_none());
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn nearest_prefers_longer_prefix_then_smaller_id() {
        let mut t = NeighborTable::new(id("0000"));
        t.insert(entry("1001", 1));
        t.insert(entry("1010", 2));
        assert_eq!(t.nearest(&id("1011"), &[]).unwrap().id, id("1010"));
        t.insert(entry("1000", 3));
        // 1000 and 1001 tie at proximity 2 for target 1011 once 1010 is excluded
        assert_eq!(t.nearest(&id("1011"), &[id("1010")]).unwrap().id, id("1000"));
        assert!(t.nearest(&id("1011"), &[id("1010"), id("1001"), id("1000")]).is_none());
    }

    #[test]
    fn nearest_requires_improvement() {
        let mut t = NeighborTable::new(id("1000"));
        t.insert(entry("0111", 1));
        // owner already shares one bit with 1111; 0111 shares none
        assert!(t.nearest(&id("1111"), &[]).is_none());
    }
}
