//! Seeded topology generators.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NodeHandle, PolicyClass, Underlay, UnderlayConfig, UnderlayError, UnderlayNode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TopologyKind {
    /// Erdős–Rényi G(n, p). With `connected`, stray components are
    /// stitched onto the rest with one extra channel each.
    RandomGnp {
        n: usize,
        p: f64,
        #[serde(default = "yes")]
        connected: bool,
    },
    /// A cycle plus `chords` random extra channels.
    RingWithChords {
        n: usize,
        #[serde(default)]
        chords: usize,
    },
    /// Barabási–Albert growth, `m` channels per arriving node.
    PreferentialAttachment { n: usize, m: usize },
    /// `gateways` public internet nodes in a full mesh, the remaining nodes
    /// split into `clusters` natted LANs. Each member holds a channel to its
    /// cluster's gateway and a ring channel to its LAN neighbors.
    NatClusters { n: usize, clusters: usize, gateways: usize },
}

fn yes() -> bool {
    true
}

impl TopologyKind {
    pub fn node_count(&self) -> usize {
        match *self {
            TopologyKind::RandomGnp { n, .. }
            | TopologyKind::RingWithChords { n, .. }
            | TopologyKind::PreferentialAttachment { n, .. }
            | TopologyKind::NatClusters { n, .. } => n,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TopologyKind::RandomGnp { .. } => "random-gnp",
            TopologyKind::RingWithChords { .. } => "ring-with-chords",
            TopologyKind::PreferentialAttachment { .. } => "preferential-attachment",
            TopologyKind::NatClusters { .. } => "nat-clusters",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    #[serde(flatten)]
    pub kind: TopologyKind,
    pub seed: u64,
}

impl TopologySpec {
    pub fn new(kind: TopologyKind, seed: u64) -> Self {
        TopologySpec { kind, seed }
    }

    pub fn validate(&self) -> Result<(), UnderlayError> {
        let bad = |m: String| Err(UnderlayError::Config(m));
        let n = self.kind.node_count();
        if n == 0 {
            return bad("n: must be at least 1".into());
        }
        if n > u32::MAX as usize / 2 {
            return bad(format!("n: {n} is too large"));
        }
        match self.kind {
            TopologyKind::RandomGnp { p, .. } if !(0.0..=1.0).contains(&p) => {
                bad(format!("p: {p} outside [0, 1]"))
            }
            TopologyKind::RingWithChords { n, chords } if chords > free_pairs(n) => {
                bad(format!("chords: {chords} exceeds the {} pairs a ring of {n} leaves free", free_pairs(n)))
            }
            TopologyKind::PreferentialAttachment { m, .. } if m == 0 => {
                bad("m: must be at least 1".into())
            }
            TopologyKind::NatClusters { n, clusters, gateways } => {
                if gateways == 0 {
                    bad("gateways: must be at least 1".into())
                } else if clusters == 0 {
                    bad("clusters: must be at least 1".into())
                } else if n < gateways + clusters {
                    bad(format!("n: {n} too small for {gateways} gateways and {clusters} clusters"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

fn ring_edges(n: usize) -> usize {
    match n {
        0 | 1 => 0,
        2 => 1,
        _ => n,
    }
}

fn free_pairs(n: usize) -> usize {
    (n * n.saturating_sub(1) / 2).saturating_sub(ring_edges(n))
}

/// Builds the underlay described by `spec`. Identical specs yield identical
/// channel lists.
pub fn build_topology(spec: &TopologySpec) -> Result<Underlay, UnderlayError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let config = UnderlayConfig { seed: spec.seed, ..UnderlayConfig::default() };
    let underlay = match spec.kind {
        TopologyKind::RandomGnp { n, p, connected } => {
            let mut u = Underlay::new(vec![UnderlayNode::public_link_only(); n], config);
            for a in 0..n as u32 {
                for b in a + 1..n as u32 {
                    if rng.gen_bool(p) {
                        u.add_channel(NodeHandle(a), NodeHandle(b));
                    }
                }
            }
            if connected {
                stitch_components(&mut u, &mut rng);
            }
            u
        }
        TopologyKind::RingWithChords { n, chords } => {
            let mut u = Underlay::new(vec![UnderlayNode::public_link_only(); n], config);
            if n == 2 {
                u.add_channel(NodeHandle(0), NodeHandle(1));
            } else if n > 2 {
                for i in 0..n as u32 {
                    u.add_channel(NodeHandle(i), NodeHandle((i + 1) % n as u32));
                }
            }
            let max_edges = n * n.saturating_sub(1) / 2;
            let mut added = 0;
            while added < chords && u.channels().len() < max_edges {
                let a = rng.gen_range(0..n as u32);
                let b = rng.gen_range(0..n as u32);
                if a != b && u.channel_between(NodeHandle(a), NodeHandle(b)).is_none() {
                    u.add_channel(NodeHandle(a), NodeHandle(b));
                    added += 1;
                }
            }
            u
        }
        TopologyKind::PreferentialAttachment { n, m } => {
            let mut u = Underlay::new(vec![UnderlayNode::public_link_only(); n], config);
            let core = (m + 1).min(n) as u32;
            // endpoint multiset: each node appears once per incident channel
            let mut ends: Vec<u32> = Vec::new();
            for a in 0..core {
                for b in a + 1..core {
                    u.add_channel(NodeHandle(a), NodeHandle(b));
                    ends.extend([a, b]);
                }
            }
            if core == 1 && n > 1 {
                ends.push(0);
            }
            for v in core..n as u32 {
                let mut targets: Vec<u32> = Vec::with_capacity(m);
                let want = m.min(v as usize);
                while targets.len() < want {
                    let t = ends[rng.gen_range(0..ends.len())];
                    if !targets.contains(&t) {
                        targets.push(t);
                    }
                }
                for t in targets {
                    u.add_channel(NodeHandle(v), NodeHandle(t));
                    ends.extend([v, t]);
                }
            }
            u
        }
        TopologyKind::NatClusters { n, clusters, gateways } => {
            let members = n - gateways;
            let mut nodes = vec![UnderlayNode::internet(PolicyClass::Public, None); gateways];
            let mut cluster_of = Vec::with_capacity(members);
            for c in 0..clusters {
                let size = members / clusters + usize::from(c < members % clusters);
                for _ in 0..size {
                    nodes.push(UnderlayNode::internet(PolicyClass::Natted, Some(c as u32)));
                    cluster_of.push(c);
                }
            }
            let mut u = Underlay::new(nodes, config);
            for a in 0..gateways as u32 {
                for b in a + 1..gateways as u32 {
                    u.add_channel(NodeHandle(a), NodeHandle(b));
                }
            }
            let mut start = gateways;
            for c in 0..clusters {
                let size = cluster_of.iter().filter(|&&x| x == c).count();
                let gw = NodeHandle((c % gateways) as u32);
                let lan: Vec<NodeHandle> = (start..start + size).map(|i| NodeHandle(i as u32)).collect();
                for &h in &lan {
                    u.add_channel(h, gw);
                }
                if size == 2 {
                    u.add_channel(lan[0], lan[1]);
                } else if size > 2 {
                    for i in 0..size {
                        u.add_channel(lan[i], lan[(i + 1) % size]);
                    }
                }
                start += size;
            }
            u
        }
    };
    Ok(underlay)
}

/// Joins every component to the union of earlier components (ordered by
/// smallest member) with one random channel.
fn stitch_components(u: &mut Underlay, rng: &mut ChaCha8Rng) {
    let n = u.len();
    let mut comp = vec![usize::MAX; n];
    let mut comps: Vec<Vec<NodeHandle>> = Vec::new();
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut members = vec![NodeHandle(s as u32)];
        comp[s] = id;
        let mut i = 0;
        while i < members.len() {
            let x = members[i];
            let next: Vec<NodeHandle> = u.up_neighbors(x).collect();
            for y in next {
                if comp[y.index()] == usize::MAX {
                    comp[y.index()] = id;
                    members.push(y);
                }
            }
            i += 1;
        }
        comps.push(members);
    }
    let mut seen: Vec<NodeHandle> = Vec::new();
    for (i, members) in comps.iter().enumerate() {
        if i > 0 {
            let a = *members.choose(rng).unwrap();
            let b = *seen.choose(rng).unwrap();
            u.add_channel(a, b);
        }
        seen.extend(members.iter().copied());
    }
}
