use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EntryOrigin, LinkId, MessageKind, RoutingError, World};
use crate::identity::{common_prefix_len, NodeId};
use crate::underlay::NodeHandle;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairReport {
    pub messages: u64,
    pub links_added: usize,
    pub links_removed: usize,
    /// Buckets still short after repair because nobody could be found.
    pub unfilled: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Explored {
    Found,
    Exhausted,
    OutOfBudget,
}

impl RepairReport {
    fn absorb(&mut self, other: &RepairReport) {
        self.messages += other.messages;
        self.links_added += other.links_added;
        self.links_removed += other.links_removed;
        self.unfilled += other.unfilled;
    }
}

impl World {
    /// Synthetic id sharing exactly `b` leading bits with `n`; the tail comes
    /// from a per-node counter-seeded generator.
    pub fn synthetic_target(&mut self, n: NodeHandle, b: u16) -> NodeId {
        let own = self.ids[n.index()];
        let draw = self.repair_draws[n.index()];
        self.repair_draws[n.index()] += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (n.0 as u64).rotate_left(32) ^ draw);
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        let tail = NodeId::from_bytes(&bytes, own.bit_len()).expect("width already validated");
        own.with_bit_flipped(b).splice(b + 1, &tail)
    }

    /// One maintenance pass for `n`.
    pub fn repair(&mut self, n: NodeHandle) -> Result<RepairReport, RoutingError> {
        self.check_active(n)?;
        self.pending_repair.remove(&n);
        let before = self.counters.total_messages();
        let links_before = self.tables[n.index()].len();
        let mut report = RepairReport::default();
        let k = self.config.k;

        // a node sees its own channels go down
        let dead: Vec<LinkId> = self.tables[n.index()]
            .iter()
            .filter_map(|e| match self.links.get(e.link)?.kind {
                super::LinkKind::Physical { channel } if !self.underlay.is_up(channel) => Some(e.link),
                _ => None,
            })
            .collect();
        for l in dead {
            report.links_removed += self.remove_link(l);
        }

        let mut neighbors: Vec<NodeHandle> = self.underlay.up_neighbors(n).filter(|&m| self.is_active(m)).collect();
        neighbors.sort();
        for m in neighbors {
            let b = self.proximity_of(n, m) as usize;
            if self.links.between(n, m).is_none() && self.tables[n.index()].bucket(b).len() < k {
                if let Some(ch) = self.underlay.up_channel(n, m) {
                    let _ = self.add_physical_link(n, m, ch, EntryOrigin::Physical);
                }
            }
        }

        let timeout = self.config.liveness_timeout();
        let stale: Vec<LinkId> = self.tables[n.index()]
            .iter()
            .filter(|e| self.tick.saturating_sub(e.liveness) >= timeout)
            .map(|e| e.link)
            .collect();
        for l in stale {
            if self.links.get(l).is_some() {
                let _ = self.exchange(n, l, MessageKind::LivenessPing, MessageKind::LivenessAck);
            }
        }

        // one bucket past the deepest filled one, which moves as we go
        let mut b = 0;
        while !self.tables[n.index()].is_empty() && b < self.tables[n.index()].bucket_count() {
            if b > self.tables[n.index()].highest_nonempty().map_or(0, |h| h + 1) {
                break;
            }
            if self.tables[n.index()].bucket(b).len() < k {
                self.refill_bucket(n, b);
                if self.tables[n.index()].bucket(b).is_empty() {
                    report.unfilled += 1;
                }
            }
            b += 1;
        }
        self.prune(n);
        self.settle(&Default::default());

        report.messages = self.counters.total_messages() - before;
        let links_after = self.tables[n.index()].len();
        report.links_added += links_after.saturating_sub(links_before);
        Ok(report)
    }

    fn refill_bucket(&mut self, n: NodeHandle, b: usize) {
        let k = self.config.k;
        let own = self.ids[n.index()];
        if self.tables[n.index()].bucket(b).is_empty() {
            let t = self.synthetic_target(n, b as u16);
            let member = |id: &NodeId| common_prefix_len(id, &own) as usize == b;
            if self.explore(n, &t, b as u16, member) != Explored::Found
                && self
                    .walk(n, &t, None, EntryOrigin::Repair, Some(self.repair_budget(n)), member)
                    .found
                    .is_none()
            {
                if let Some(left) = self.lost_buckets.get(&(n, b)).copied() {
                    match self.explore(n, &t, 0, member) {
                        Explored::OutOfBudget if left > 1 => {
                            self.lost_buckets.insert((n, b), left - 1);
                        }
                        _ => {
                            self.lost_buckets.remove(&(n, b));
                        }
                    }
                }
            }
        }
        if !self.tables[n.index()].bucket(b).is_empty() {
            self.lost_buckets.remove(&(n, b));
        }
        let mut members: Vec<(u32, NodeHandle)> = self.tables[n.index()]
            .bucket(b)
            .iter()
            .map(|e| (self.link_hops(e.link), e.node))
            .collect();
        members.sort();
        for (_, m) in members {
            if self.tables[n.index()].bucket(b).len() >= k {
                break;
            }
            if self.links.between(n, m).is_none() || self.query(n, m).is_err() {
                continue;
            }
            let mut cands: Vec<(u32, NodeHandle)> = self.tables[m.index()]
                .iter()
                .filter(|e| e.node != n && common_prefix_len(&e.id, &own) as usize == b)
                .filter(|e| self.links.between(n, e.node).is_none())
                .map(|e| (self.link_hops(e.link), e.node))
                .collect();
            cands.sort();
            for (_, x) in cands {
                if self.tables[n.index()].bucket(b).len() >= k {
                    break;
                }
                let _ = self.ensure_link(n, x, Some(m), EntryOrigin::Repair);
            }
        }
    }

    /// Asks the nodes sharing at least `floor` bits with `t`, closest
    /// first, for their entries nearest to `t` until one satisfies `done`.
    /// Each node asked is linked to `n` first.
    fn explore(&mut self, n: NodeHandle, t: &NodeId, floor: u16, done: impl Fn(&NodeId) -> bool) -> Explored {
        use std::cmp::Reverse;
        use std::collections::{BTreeSet, HashSet};

        let k = self.config.k;
        let budget = self.repair_budget(n);
        let mut known: HashSet<NodeHandle> = HashSet::from([n]);
        let mut frontier: BTreeSet<(Reverse<u16>, NodeId, NodeHandle, Option<NodeHandle>)> = BTreeSet::new();
        for e in self.tables[n.index()].iter() {
            let p = common_prefix_len(&e.id, t);
            if p >= floor {
                known.insert(e.node);
                frontier.insert((Reverse(p), e.id, e.node, None));
            }
        }
        let mut asked = 0;
        while let Some((_, _, x, via)) = frontier.pop_first() {
            if asked >= budget {
                return Explored::OutOfBudget;
            }
            if self.ensure_link(n, x, via, EntryOrigin::Repair).is_err() || self.query(n, x).is_err() {
                continue;
            }
            asked += 1;
            let mut found: Vec<_> = self.tables[x.index()]
                .iter()
                .filter(|e| !known.contains(&e.node) && common_prefix_len(&e.id, t) >= floor)
                .map(|e| (Reverse(common_prefix_len(&e.id, t)), e.id, e.node))
                .collect();
            found.sort();
            found.truncate(k);
            for (p, id, y) in found {
                known.insert(y);
                if done(&id) {
                    if self.ensure_link(n, y, Some(x), EntryOrigin::Repair).is_ok() {
                        return Explored::Found;
                    }
                    continue;
                }
                frontier.insert((p, id, y, Some(x)));
            }
        }
        Explored::Exhausted
    }

    /// Queries one repair search may spend: twice the depth of `n`'s table.
    fn repair_budget(&self, n: NodeHandle) -> usize {
        2 * (self.tables[n.index()].highest_nonempty().unwrap_or(0) + 1)
    }

    /// Drops surplus virtual entries that nothing rests on, as long as both
    /// ends keep at least `k` in the affected buckets.
    fn prune(&mut self, n: NodeHandle) {
        let k = self.config.k;
        for b in 0..self.tables[n.index()].bucket_count() {
            if self.tables[n.index()].bucket(b).len() > self.config.k_max() {
                self.enforce_capacity(n, b, &Default::default());
            }
            while self.tables[n.index()].bucket(b).len() > k {
                let victim = self.tables[n.index()]
                    .bucket(b)
                    .iter()
                    .filter(|e| {
                        let rec = self.links.get(e.link).expect("entry without link");
                        !rec.is_physical() && rec.dependents.is_empty() && !self.removal_leaves_below(e.link, k)
                    })
                    .max_by_key(|e| (self.link_hops(e.link), e.id))
                    .map(|e| e.link);
                match victim {
                    Some(l) => {
                        self.remove_link(l);
                    }
                    None => break,
                }
            }
        }
    }

    /// One repair pass over every active node, in handle order, closed by
    /// a capacity pass.
    pub fn repair_round(&mut self) -> RepairReport {
        let mut total = RepairReport::default();
        for n in self.active_nodes() {
            if let Ok(r) = self.repair(n) {
                total.absorb(&r);
            }
        }
        total.links_removed += self.settle(&Default::default());
        total
    }

    /// Repairs nodes whose tables lost entries since their last pass.
    pub fn repair_pending(&mut self) -> RepairReport {
        let mut total = RepairReport::default();
        let pending: Vec<NodeHandle> = std::mem::take(&mut self.pending_repair).into_iter().collect();
        for n in pending {
            if self.is_active(n) {
                if let Ok(r) = self.repair(n) {
                    total.absorb(&r);
                }
            }
        }
        total
    }
}
