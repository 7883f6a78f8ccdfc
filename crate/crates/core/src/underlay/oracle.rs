//! Breadth-first shortest paths over up channels.
//!
//! This is the yardstick for stretch and for reachability audits, so it
//! reads only underlay state and never consults overlay tables.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{NodeHandle, Underlay};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Distance {
    Hops(u32),
    Unreachable,
}

impl Distance {
    pub fn hops(self) -> Option<u32> {
        match self {
            Distance::Hops(h) => Some(h),
            Distance::Unreachable => None,
        }
    }

    pub fn is_reachable(self) -> bool {
        matches!(self, Distance::Hops(_))
    }
}

/// Distances from `src` to every node; `None` where unreachable.
pub fn bfs_distances(u: &Underlay, src: NodeHandle) -> Vec<Option<u32>> {
    let mut dist = vec![None; u.len()];
    if !u.is_alive(src) {
        return dist;
    }
    dist[src.index()] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(x) = queue.pop_front() {
        let d = dist[x.index()].unwrap();
        for y in u.up_neighbors(x) {
            if dist[y.index()].is_none() {
                dist[y.index()] = Some(d + 1);
                queue.push_back(y);
            }
        }
    }
    dist
}

pub(super) fn shortest_path_len(u: &Underlay, a: NodeHandle, b: NodeHandle) -> Distance {
    if a.index() >= u.len() || b.index() >= u.len() || !u.is_alive(a) || !u.is_alive(b) {
        return Distance::Unreachable;
    }
    if a == b {
        return Distance::Hops(0);
    }
    let mut dist = vec![u32::MAX; u.len()];
    dist[a.index()] = 0;
    let mut queue = VecDeque::from([a]);
    while let Some(x) = queue.pop_front() {
        let d = dist[x.index()];
        for y in u.up_neighbors(x) {
            if dist[y.index()] == u32::MAX {
                if y == b {
                    return Distance::Hops(d + 1);
                }
                dist[y.index()] = d + 1;
                queue.push_back(y);
            }
        }
    }
    Distance::Unreachable
}
