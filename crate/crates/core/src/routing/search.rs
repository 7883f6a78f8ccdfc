use serde::{Deserialize, Serialize};

use super::{EntryOrigin, NeighborEntry, RoutingError, World};
use crate::identity::{common_prefix_len, NodeId};
use crate::underlay::NodeHandle;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStep {
    pub queried: NodeId,
    pub returned: NodeId,
    /// Proximity of `returned` to the target.
    pub proximity: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchOutcome {
    Found,
    NotFound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchTrace {
    /// Steps along the path that was finally taken.
    pub steps: Vec<SearchStep>,
    /// Every message sent, including abandoned branches.
    pub messages: u64,
    pub outcome: SearchOutcome,
}

impl SearchTrace {
    pub fn is_strictly_increasing(&self) -> bool {
        self.steps.windows(2).all(|w| w[0].proximity < w[1].proximity)
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub entry: Option<NeighborEntry>,
    pub trace: SearchTrace,
}

/// Where a walk stopped.
pub(crate) struct WalkEnd {
    pub found: Option<NodeHandle>,
    pub steps: Vec<SearchStep>,
}

impl World {
    /// Finds `target` and leaves `origin` holding a link to it.
    pub fn search(&mut self, origin: NodeHandle, target: &NodeId) -> Result<SearchResult, RoutingError> {
        self.check_active(origin)?;
        let own = self.ids[origin.index()];
        if *target == own {
            return Err(RoutingError::SelfSearch);
        }
        if target.bit_len() != own.bit_len() {
            return Err(RoutingError::Config(format!(
                "target has {} bits, world uses {}",
                target.bit_len(),
                own.bit_len()
            )));
        }
        if let Some(e) = self.tables[origin.index()].get(target) {
            let trace = SearchTrace { steps: Vec::new(), messages: 0, outcome: SearchOutcome::Found };
            return Ok(SearchResult { entry: Some(e.clone()), trace });
        }
        let before = self.counters.total_messages();
        let b1 = common_prefix_len(&own, target);
        let end = if self.tables[origin.index()].bucket(b1 as usize).is_empty() {
            WalkEnd { found: None, steps: Vec::new() }
        } else {
            self.walk(origin, target, Some(b1), EntryOrigin::Search, None, |id| id == target)
        };
        let keep = end.found.and_then(|f| self.links.between(origin, f)).map(|l| self.links.support(l));
        self.settle(&keep.unwrap_or_default());
        let messages = self.counters.total_messages() - before;
        let entry = end.found.and_then(|_| self.tables[origin.index()].get(target).cloned());
        let outcome = if entry.is_some() { SearchOutcome::Found } else { SearchOutcome::NotFound };
        Ok(SearchResult { entry, trace: SearchTrace { steps: end.steps, messages, outcome } })
    }

    /// Greedy walk toward `target` with backtracking.
    ///
    /// The first hop comes from `origin`'s own table, restricted to entries
    /// beating `floor` when given. Every node reached is linked to `origin`
    /// through the node that named it. Stops at the first node for which
    /// `done` holds, or once `budget` nodes have been queried.
    pub(crate) fn walk(
        &mut self,
        origin: NodeHandle,
        target: &NodeId,
        floor: Option<u16>,
        tag: EntryOrigin,
        budget: Option<usize>,
        done: impl Fn(&NodeId) -> bool,
    ) -> WalkEnd {
        let own = self.ids[origin.index()];
        let mut asked = 0;
        let mut excluded = vec![own];
        let mut path: Vec<(NodeHandle, Option<SearchStep>)> = vec![(origin, None)];
        while let Some(&(cur, _)) = path.last() {
            let cand = if cur == origin {
                self.local_candidate(origin, target, floor, &excluded)
            } else if budget.is_some_and(|b| asked >= b) {
                break;
            } else {
                asked += 1;
                match self.query(origin, cur) {
                    Ok(()) => self.handle_nearest_query(cur, target, &excluded),
                    Err(_) => None,
                }
            };
            let Some(cand) = cand else {
                if cur == origin {
                    break;
                }
                excluded.push(self.ids[cur.index()]);
                path.pop();
                continue;
            };
            let via = (cur != origin).then_some(cur);
            match self.ensure_link(origin, cand.node, via, tag) {
                Ok(_) => {
                    let step = SearchStep {
                        queried: self.ids[cur.index()],
                        returned: cand.id,
                        proximity: common_prefix_len(&cand.id, target),
                    };
                    if done(&cand.id) {
                        let mut steps: Vec<SearchStep> = path.into_iter().filter_map(|(_, s)| s).collect();
                        steps.push(step);
                        return WalkEnd { found: Some(cand.node), steps };
                    }
                    excluded.push(cand.id);
                    path.push((cand.node, Some(step)));
                }
                Err(_) => excluded.push(cand.id),
            }
            // the link to cur may have been torn down while trying
            while let Some(&(c, _)) = path.last() {
                if c == origin || self.links.between(origin, c).is_some() {
                    break;
                }
                excluded.push(self.ids[c.index()]);
                path.pop();
            }
        }
        WalkEnd { found: None, steps: Vec::new() }
    }

    fn local_candidate(
        &self,
        origin: NodeHandle,
        target: &NodeId,
        floor: Option<u16>,
        excluded: &[NodeId],
    ) -> Option<NeighborEntry> {
        match floor {
            Some(_) => self.tables[origin.index()].nearest(target, excluded).cloned(),
            None => self.tables[origin.index()]
                .iter()
                .filter(|e| !excluded.contains(&e.id))
                .min_by(|a, b| {
                    common_prefix_len(&b.id, target)
                        .cmp(&common_prefix_len(&a.id, target))
                        .then_with(|| a.id.cmp(&b.id))
                })
                .cloned(),
        }
    }
}
