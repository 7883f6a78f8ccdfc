use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{EntryOrigin, MessageKind, RoutingError, World};
use crate::underlay::NodeHandle;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinReport {
    /// Links the newcomer holds once the join completes.
    pub links_built: usize,
    pub messages: u64,
}

impl World {
    /// Brings `n` into the overlay.
    ///
    /// Every joined underlay neighbor becomes a physical link. The walk then
    /// starts at `bootstrap`, or at the physical neighbor closest in id when
    /// none is given. With no joined neighbor at all the node starts alone.
    pub fn join(&mut self, n: NodeHandle, bootstrap: Option<NodeHandle>) -> Result<JoinReport, RoutingError> {
        self.check_node(n)?;
        if self.joined[n.index()] {
            return Err(RoutingError::AlreadyJoined(n));
        }
        if !self.underlay.is_alive(n) {
            return Err(RoutingError::NodeDown(n));
        }
        let own = self.ids[n.index()];
        if self.by_id.contains_key(&own) {
            return Err(RoutingError::DuplicateId(own));
        }
        if let Some(b) = bootstrap {
            self.check_node(b)?;
            if !self.is_active(b) || self.underlay.up_channel(n, b).is_none() {
                return Err(RoutingError::BootstrapUnreachable(b));
            }
        }
        let before = self.counters.total_messages();
        self.joined[n.index()] = true;
        self.by_id.insert(own, n);

        let mut neighbors: Vec<NodeHandle> =
            self.underlay.up_neighbors(n).filter(|&m| self.is_active(m)).collect();
        neighbors.sort();
        neighbors.dedup();
        for &m in &neighbors {
            if let Some(ch) = self.underlay.up_channel(n, m) {
                let _ = self.add_physical_link(n, m, ch, EntryOrigin::Physical);
            }
        }
        let contact = bootstrap.or_else(|| {
            neighbors.iter().copied().max_by_key(|&m| (self.proximity_of(n, m), std::cmp::Reverse(m)))
        });
        if let Some(c) = contact {
            if self.links.between(n, c).is_some() {
                let _ = self.bridge_walk(n, c);
            }
            let mut seeds = Vec::new();
            for &m in neighbors.iter().filter(|&&m| Some(m) != contact) {
                if self.links.between(n, m).is_some() && matches!(self.bridge_walk(n, m), Ok(true)) {
                    seeds.push(n);
                }
            }
            seeds.dedup();
            self.bridge_cascade(seeds);
        }
        self.settle(&Default::default());
        Ok(JoinReport {
            links_built: self.tables[n.index()].len(),
            messages: self.counters.total_messages() - before,
        })
    }

    /// Walks from `start` toward `n`'s own id, filling `n`'s buckets from
    /// each contact, then links `n` into the subtree it ends up beside.
    /// Returns whether a bucket of `n` that was empty is now populated.
    pub(crate) fn bridge_walk(&mut self, n: NodeHandle, start: NodeHandle) -> Result<bool, RoutingError> {
        self.check_active(n)?;
        let own = self.ids[n.index()];
        let k = self.config.k;
        let empty_before: Vec<bool> =
            (0..self.tables[n.index()].bucket_count()).map(|b| self.tables[n.index()].bucket(b).is_empty()).collect();

        let mut cur = start;
        let mut excluded = vec![own];
        loop {
            if self.query(n, cur).is_err() {
                break;
            }
            excluded.push(self.ids[cur.index()]);
            let p = self.proximity_of(n, cur) as usize;
            for b in 0..p {
                if self.tables[n.index()].bucket(b).len() >= k {
                    continue;
                }
                let mut cands: Vec<(u32, NodeHandle)> = self.tables[cur.index()]
                    .bucket(b)
                    .iter()
                    .filter(|e| e.node != n)
                    .map(|e| (self.link_hops(e.link), e.node))
                    .collect();
                cands.sort();
                for (_, x) in cands {
                    if self.tables[n.index()].bucket(b).len() >= k {
                        break;
                    }
                    if self.links.between(n, x).is_none() {
                        let _ = self.ensure_link(n, x, Some(cur), EntryOrigin::Join);
                    }
                }
            }
            if self.links.between(n, cur).is_none() {
                break;
            }
            let mut next = None;
            while let Some(c) = self.handle_nearest_query(cur, &own, &excluded) {
                match self.ensure_link(n, c.node, Some(cur), EntryOrigin::Join) {
                    Ok(_) => {
                        next = Some(c.node);
                        break;
                    }
                    Err(_) => excluded.push(c.id),
                }
            }
            match next {
                Some(c) => cur = c,
                None => break,
            }
        }
        if self.links.between(n, cur).is_some() {
            self.fix_up_subtree(n, cur);
        }
        let table = &self.tables[n.index()];
        Ok(empty_before.iter().enumerate().any(|(b, &was)| was && !table.bucket(b).is_empty()))
    }

    /// Links `n` with the nodes sharing exactly as many bits with it as
    /// `last` does, wherever either side is short of entries.
    fn fix_up_subtree(&mut self, n: NodeHandle, last: NodeHandle) {
        let k = self.config.k;
        let p = self.proximity_of(n, last) as usize;
        let own = self.ids[n.index()];
        let mut seen = HashSet::from([n, last]);
        let mut queue = VecDeque::from([last]);
        while let Some(x) = queue.pop_front() {
            if x != last && self.query(n, x).is_err() {
                continue;
            }
            let mut found: Vec<(u32, NodeHandle)> = self.tables[x.index()]
                .iter()
                .filter(|e| self.tables[x.index()].bucket_index(&e.id) > p && !seen.contains(&e.node))
                .map(|e| (self.link_hops(e.link), e.node))
                .collect();
            found.sort();
            for (_, y) in found {
                seen.insert(y);
                if !self.is_active(y) {
                    continue;
                }
                let far = &self.tables[y.index()];
                let far_short = far.bucket(far.bucket_index(&own)).len() < k;
                let near_short = self.tables[n.index()].bucket(p).len() < k;
                if !(far_short || near_short) {
                    continue;
                }
                if self.ensure_link(n, y, Some(x), EntryOrigin::Join).is_ok() {
                    queue.push_back(y);
                }
            }
        }
    }

    /// Each seed tells its neighbors it has learned of new territory; each
    /// neighbor walks from the seed and passes the news on if it learned
    /// something too.
    pub(crate) fn bridge_cascade(&mut self, seeds: Vec<NodeHandle>) {
        let mut queue: VecDeque<NodeHandle> = seeds.into();
        while let Some(x) = queue.pop_front() {
            if !self.is_active(x) {
                continue;
            }
            let neighbors: Vec<_> = self.tables[x.index()].iter().map(|e| (e.node, e.link)).collect();
            for (y, link) in neighbors {
                if self.links.get(link).is_none() || !self.is_active(y) {
                    continue;
                }
                if self.send(x, link, MessageKind::BridgeNotify).is_err() {
                    continue;
                }
                if matches!(self.bridge_walk(y, x), Ok(true)) {
                    queue.push_back(y);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::*;

    #[test]
    fn genesis_join_is_empty() {
        let mut w = world(&["1011"], &[], cfg());
        let r = w.join(NodeHandle(0), None).unwrap();
        assert_eq!(r.links_built, 0);
        assert!(w.table(NodeHandle(0)).is_empty());
    }

    #[test]
    fn two_nodes_meet_in_bucket_two() {
        let mut w = world(&["1011", "1001"], &[(0, 1)], cfg());
        w.join(NodeHandle(0), None).unwrap();
        w.join(NodeHandle(1), Some(NodeHandle(0))).unwrap();
        assert_eq!(w.table(NodeHandle(0)).bucket(2)[0].id, id("1001"));
        assert_eq!(w.table(NodeHandle(1)).bucket(2)[0].id, id("1011"));
        assert_eq!(w.table(NodeHandle(0)).len(), 1);
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let mut w = world(&["1011", "1011"], &[(0, 1)], cfg());
        w.join(NodeHandle(0), None).unwrap();
        assert_eq!(w.join(NodeHandle(1), None).unwrap_err(), RoutingError::DuplicateId(id("1011")));
        assert_eq!(w.join(NodeHandle(0), None).unwrap_err(), RoutingError::AlreadyJoined(NodeHandle(0)));
    }

    #[test]
    fn bootstrap_must_be_linked() {
        let mut w = world(&["1011", "1001", "0001"], &[(0, 1)], cfg());
        w.join(NodeHandle(0), None).unwrap();
        w.join(NodeHandle(1), None).unwrap();
        assert_eq!(
            w.join(NodeHandle(2), Some(NodeHandle(0))).unwrap_err(),
            RoutingError::BootstrapUnreachable(NodeHandle(0))
        );
        assert!(!w.is_joined(NodeHandle(2)));
    }

    #[test]
    fn reverse_fix_up_reaches_far_nodes() {
        // line 0000 – 0001 – 1000 – 1001; the last joiner must become known
        // to both 0xxx nodes even though neither is its physical neighbor
        let mut w = world(
            &["0000", "0001", "1000", "1001"],
            &[(0, 1), (1, 2), (2, 3)],
            ProtocolConfig { direct_upgrade: false, ..cfg() },
        );
        for i in 0..4 {
            w.join(NodeHandle(i), None).unwrap();
        }
        let report = audit(&w);
        assert!(report.is_clean(), "{report:?}");
    }
}
