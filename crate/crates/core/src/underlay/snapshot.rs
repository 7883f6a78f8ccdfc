//! JSON form of an underlay.
//!
//! ```json
//! {
//!   "nodes": [{"handle": 0, "class": "public", "attachment": "link-only",
//!              "lan": null, "alive": true, "partition": null}],
//!   "channels": [{"id": 0, "a": 0, "b": 1, "state": "up",
//!                 "failed": false, "partitioned": false}],
//!   "hole_punch_records": [[1, 2]],
//!   "config": {"punch_success": 1.0, "drop_probability": 0.0, "seed": 7},
//!   "tick": 0
//! }
//! ```

use serde::{Deserialize, Serialize};

use super::{
    Attachment, ChannelId, ChannelState, NodeHandle, PolicyClass, ReachabilityPolicy, Underlay,
    UnderlayConfig, UnderlayError, UnderlayNode,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub handle: u32,
    pub class: PolicyClass,
    pub attachment: Attachment,
    pub lan: Option<u32>,
    pub alive: bool,
    pub partition: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelRecord {
    pub id: u32,
    pub a: u32,
    pub b: u32,
    pub state: ChannelState,
    pub failed: bool,
    pub partitioned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnderlaySnapshot {
    pub nodes: Vec<NodeRecord>,
    pub channels: Vec<ChannelRecord>,
    pub hole_punch_records: Vec<(u32, u32)>,
    pub config: UnderlayConfig,
    pub tick: u64,
}

impl UnderlaySnapshot {
    pub fn from_json(s: &str) -> Result<Self, UnderlayError> {
        serde_json::from_str(s).map_err(|e| UnderlayError::Config(format!("underlay snapshot: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }
}

impl Underlay {
    pub fn snapshot(&self) -> UnderlaySnapshot {
        UnderlaySnapshot {
            nodes: self
                .handles()
                .map(|h| {
                    let n = self.node(h).unwrap();
                    NodeRecord {
                        handle: h.0,
                        class: n.policy.class,
                        attachment: n.attachment,
                        lan: n.lan,
                        alive: n.alive,
                        partition: self.partition_tag(h),
                    }
                })
                .collect(),
            channels: self
                .channels()
                .iter()
                .map(|c| ChannelRecord {
                    id: c.id.0,
                    a: c.endpoints.0 .0,
                    b: c.endpoints.1 .0,
                    state: self.channel_state(c.id),
                    failed: c.failed,
                    partitioned: c.partitioned,
                })
                .collect(),
            hole_punch_records: self.hole_punch_records().map(|&(a, b)| (a.0, b.0)).collect(),
            config: *self.config(),
            tick: self.tick(),
        }
    }

    /// Rebuilds an underlay, checking every cross reference.
    pub fn from_snapshot(s: &UnderlaySnapshot) -> Result<Self, UnderlayError> {
        let bad = |m: String| Err(UnderlayError::Config(format!("underlay snapshot: {m}")));
        if s.nodes.is_empty() {
            return bad("no nodes".into());
        }
        let n = s.nodes.len();
        let mut nodes = Vec::with_capacity(n);
        let with_tags = s.nodes.iter().filter(|r| r.partition.is_some()).count();
        if with_tags != 0 && with_tags != n {
            return bad("partition tags must be given for all nodes or none".into());
        }
        for (i, r) in s.nodes.iter().enumerate() {
            if r.handle as usize != i {
                return bad(format!("node {i} carries handle {}", r.handle));
            }
            nodes.push(UnderlayNode {
                policy: ReachabilityPolicy { class: r.class },
                attachment: r.attachment,
                lan: r.lan,
                alive: r.alive,
            });
        }
        if !(0.0..=1.0).contains(&s.config.punch_success)
            || !(0.0..=1.0).contains(&s.config.drop_probability)
        {
            return bad("probabilities must lie in [0, 1]".into());
        }
        let mut u = Underlay::new(nodes, s.config);
        for (i, c) in s.channels.iter().enumerate() {
            if c.id as usize != i {
                return bad(format!("channel {i} carries id {}", c.id));
            }
            if c.a as usize >= n || c.b as usize >= n || c.a == c.b {
                return bad(format!("channel {i} has invalid endpoints ({}, {})", c.a, c.b));
            }
            if u.channel_between(NodeHandle(c.a), NodeHandle(c.b)).is_some() {
                return bad(format!("channel {i} duplicates an earlier channel"));
            }
            let id = u.add_channel(NodeHandle(c.a), NodeHandle(c.b));
            let ch = &mut u.channels[id.0 as usize];
            ch.failed = c.failed;
            ch.partitioned = c.partitioned;
            if u.channel_state(ChannelId(id.0)) != c.state {
                return bad(format!("channel {i} state disagrees with its flags"));
            }
        }
        for &(a, b) in &s.hole_punch_records {
            if a as usize >= n || b as usize >= n || a == b {
                return bad(format!("hole-punch record ({a}, {b}) is invalid"));
            }
            u.punch_records.insert(super::ordered(NodeHandle(a), NodeHandle(b)));
        }
        if with_tags == n {
            u.partition = Some(s.nodes.iter().map(|r| r.partition.unwrap()).collect());
        }
        u.tick = s.tick;
        Ok(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::underlay::topology::{build_topology, TopologyKind, TopologySpec};
    use crate::underlay::EventAction;

    #[test]
    fn snapshot_round_trip() {
        let mut u = build_topology(&TopologySpec::new(TopologyKind::NatClusters { n: 20, clusters: 2, gateways: 2 }, 3)).unwrap();
        u.apply_action(&EventAction::Partition { groups: vec![vec![0, 2, 3]] }).unwrap();
        u.apply_action(&EventAction::NodeFail { node: 5 }).unwrap();
        let snap = u.snapshot();
        let back = Underlay::from_snapshot(&UnderlaySnapshot::from_json(&snap.to_json()).unwrap()).unwrap();
        assert_eq!(back.snapshot(), snap);
    }

    #[test]
    fn rejects_dangling_channel() {
        let mut snap = Underlay::from_edges(2, &[(0, 1)]).snapshot();
        snap.channels[0].b = 9;
        assert!(Underlay::from_snapshot(&snap).is_err());
    }

    #[test]
    fn rejects_unknown_keys() {
        let json = r#"{"nodes":[],"channels":[],"hole_punch_records":[],"config":{"punch_success":1.0,"drop_probability":0.0,"seed":0},"tick":0,"extra":1}"#;
        assert!(UnderlaySnapshot::from_json(json).is_err());
    }
}
