//! Whole-world consistency checks over every table and link.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{LinkId, LinkKind, World};
use crate::identity::common_prefix_len;
use crate::underlay::{bfs_distances, NodeHandle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    BucketPlacement,
    Duplicate,
    SelfEntry,
    Capacity,
    /// An entry and the link store disagree.
    LinkMismatch,
    /// A virtual link whose legs are missing or do not meet at its
    /// intermediary.
    DanglingVia,
    DepthCap,
    Cycle,
    /// A bucket is empty although a reachable node belongs in it.
    MissingNeighbor,
    /// A bucket holds only nodes that are no longer reachable.
    StaleBucket,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub node: Option<NodeHandle>,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub violations: Vec<Violation>,
    /// Buckets holding fewer than `min(k, available)` entries.
    pub redundancy_deficit: usize,
    pub nodes_checked: usize,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn of_kind(&self, kinds: &[ViolationKind]) -> Vec<&Violation> {
        self.violations.iter().filter(|v| kinds.contains(&v.kind)).collect()
    }

    pub fn dangling(&self) -> Vec<&Violation> {
        self.of_kind(&[ViolationKind::DanglingVia, ViolationKind::LinkMismatch, ViolationKind::Cycle])
    }

    pub fn connectivity(&self) -> Vec<&Violation> {
        self.of_kind(&[ViolationKind::MissingNeighbor, ViolationKind::StaleBucket])
    }
}

/// Runs every check. Connectivity is judged against the nodes each node can
/// currently reach over up channels.
pub fn audit(w: &World) -> AuditReport {
    let mut r = AuditReport::default();
    let push = |r: &mut AuditReport, kind, node, detail: String| {
        r.violations.push(Violation { kind, node, detail })
    };
    check_links(w, &mut r);
    let k = w.config().k;
    let k_max = w.config().k_max();
    let component = components(w);
    let bits = w.config().id_bits as usize;
    for n in w.underlay().handles() {
        if !w.is_joined(n) {
            continue;
        }
        r.nodes_checked += 1;
        let t = w.table(n);
        let own = *w.id(n);
        let mut seen = HashSet::new();
        for b in 0..t.bucket_count() {
            // past k_max only while no entry can be let go
            if t.bucket(b).len() > k_max && t.bucket(b).iter().any(|e| w.is_free(e.link)) {
                push(&mut r, ViolationKind::Capacity, Some(n), format!("bucket {b} holds {}", t.bucket(b).len()));
            }
            for e in t.bucket(b) {
                if e.id == own {
                    push(&mut r, ViolationKind::SelfEntry, Some(n), format!("bucket {b}"));
                }
                if common_prefix_len(&own, &e.id) as usize != b {
                    push(&mut r, ViolationKind::BucketPlacement, Some(n), format!("{} in bucket {b}", e.id));
                }
                if !seen.insert(e.id) {
                    push(&mut r, ViolationKind::Duplicate, Some(n), format!("{}", e.id));
                }
                match w.links().get(e.link) {
                    Some(rec) if rec.ends.contains(&n) && rec.other(n) == e.node => {}
                    _ => push(&mut r, ViolationKind::LinkMismatch, Some(n), format!("entry {} link {:?}", e.id, e.link)),
                }
            }
        }
        if !w.underlay().is_alive(n) {
            continue;
        }
        let mut available = vec![0usize; bits];
        for m in w.underlay().handles() {
            if m != n && w.is_active(m) && component[m.index()] == component[n.index()] {
                available[common_prefix_len(&own, w.id(m)) as usize] += 1;
            }
        }
        for b in 0..bits {
            let live = t
                .bucket(b)
                .iter()
                .filter(|e| w.is_active(e.node) && component[e.node.index()] == component[n.index()])
                .count();
            if available[b] > 0 && live == 0 {
                push(&mut r, ViolationKind::MissingNeighbor, Some(n), format!("bucket {b} empty, {} reachable", available[b]));
            }
            if available[b] == 0 && !t.bucket(b).is_empty() {
                push(&mut r, ViolationKind::StaleBucket, Some(n), format!("bucket {b}"));
            }
            if live < k.min(available[b]) {
                r.redundancy_deficit += 1;
            }
        }
    }
    r
}

fn components(w: &World) -> Vec<usize> {
    let u = w.underlay();
    let mut comp = vec![usize::MAX; u.len()];
    let mut next = 0;
    for h in u.handles() {
        if comp[h.index()] != usize::MAX {
            continue;
        }
        for (i, d) in bfs_distances(u, h).iter().enumerate() {
            if d.is_some() {
                comp[i] = next;
            }
        }
        comp[h.index()] = next;
        next += 1;
    }
    comp
}

fn check_links(w: &World, r: &mut AuditReport) {
    let store = w.links();
    let cap = w.config().depth_cap;
    for (id, rec) in store.iter() {
        let [a, b] = rec.ends;
        for (x, y) in [(a, b), (b, a)] {
            if w.table(x).get(w.id(y)).map(|e| e.link) != Some(id) {
                r.violations.push(Violation {
                    kind: ViolationKind::LinkMismatch,
                    node: Some(x),
                    detail: format!("link {id:?} missing from table"),
                });
            }
        }
        if rec.depth > cap {
            r.violations.push(Violation {
                kind: ViolationKind::DepthCap,
                node: Some(a),
                detail: format!("link {id:?} depth {}", rec.depth),
            });
        }
        if let LinkKind::Virtual { via, legs } = rec.kind {
            let meets = |leg: LinkId, end| store.get(leg).is_some_and(|l| l.ends.contains(&end) && l.ends.contains(&via));
            if !meets(legs[0], a) || !meets(legs[1], b) {
                r.violations.push(Violation {
                    kind: ViolationKind::DanglingVia,
                    node: Some(a),
                    detail: format!("link {id:?} via {via}"),
                });
                continue;
            }
        }
        if !expands_acyclically(w, id) {
            r.violations.push(Violation { kind: ViolationKind::Cycle, node: Some(a), detail: format!("link {id:?}") });
        }
    }
}

/// Walks the leg tree of `id` without trusting the recorded depth.
fn expands_acyclically(w: &World, id: LinkId) -> bool {
    let cap = w.config().depth_cap as usize;
    let mut stack = vec![(id, 0usize, vec![id])];
    while let Some((x, depth, path)) = stack.pop() {
        if depth > cap {
            return false;
        }
        let Some(rec) = w.links().get(x) else { return false };
        if let LinkKind::Virtual { legs, .. } = rec.kind {
            for leg in legs {
                if path.contains(&leg) {
                    return false;
                }
                let mut p = path.clone();
                p.push(leg);
                stack.push((leg, depth + 1, p));
            }
        }
    }
    true
}
