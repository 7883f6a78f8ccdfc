use serde::{Deserialize, Serialize};

use super::{MessageKind, RoutingError, World};
use crate::identity::NodeId;
use crate::underlay::{NodeHandle, Underlay};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub src: NodeId,
    pub dst: NodeId,
    #[serde(with = "hex::serde")]
    pub payload: Vec<u8>,
    /// Remaining underlay nodes to visit, next hop first.
    pub route: Vec<NodeHandle>,
    pub hops: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryOutcome {
    pub packet: Packet,
    pub hops: u32,
    /// Every underlay node visited, origin first.
    pub route: Vec<NodeHandle>,
}

/// Lets each node on `route` skip ahead to the furthest later node it
/// reaches directly over an up channel, or to a later visit of itself.
pub fn shortcut_route(underlay: &Underlay, route: &[NodeHandle]) -> Vec<NodeHandle> {
    let Some(&first) = route.first() else { return Vec::new() };
    let mut out = vec![first];
    let mut i = 0;
    while i + 1 < route.len() {
        let here = route[i];
        let mut next = i + 1;
        for j in (i + 1..route.len()).rev() {
            if route[j] == here || underlay.up_channel(here, route[j]).is_some() {
                next = j;
                break;
            }
        }
        if route[next] != here {
            out.push(route[next]);
        }
        i = next;
    }
    out
}

impl World {
    /// Lets each node on `route` replace the stretch up to a later node with
    /// its own link to that node whenever the link is shorter, then applies
    /// [`shortcut_route`].
    pub fn optimize_route(&self, route: &[NodeHandle]) -> Vec<NodeHandle> {
        let Some(&first) = route.first() else { return Vec::new() };
        let mut last = std::collections::HashMap::new();
        for (j, &h) in route.iter().enumerate() {
            last.insert(h, j);
        }
        let mut out = vec![first];
        let mut i = 0;
        while i + 1 < route.len() {
            let here = route[i];
            let best = self.tables[here.index()]
                .iter()
                .filter_map(|e| {
                    let j = *last.get(&e.node)?;
                    let hops = self.link_hops(e.link) as usize;
                    (j > i && hops < j - i).then(|| (j - i - hops, j, e.link))
                })
                .max();
            match best {
                Some((_, j, link)) => {
                    out.extend(self.links.route(link, here).into_iter().skip(1));
                    i = j;
                }
                None => {
                    out.push(route[i + 1]);
                    i += 1;
                }
            }
        }
        shortcut_route(&self.underlay, &out)
    }

    /// Sends `payload` to `dst` over `origin`'s link to it.
    pub fn forward_packet(
        &mut self,
        origin: NodeHandle,
        dst: &NodeId,
        payload: &[u8],
    ) -> Result<DeliveryOutcome, RoutingError> {
        self.check_active(origin)?;
        let entry = self.tables[origin.index()].get(dst).cloned().ok_or(RoutingError::NoRoute(origin))?;
        let mut route = self.links.route(entry.link, origin);
        if self.config.route_shortcuts {
            route = self.optimize_route(&route);
        }
        let mut packet = Packet {
            src: self.ids[origin.index()],
            dst: *dst,
            payload: payload.to_vec(),
            route: route[1..].to_vec(),
            hops: 0,
        };
        let hops = self.deliver_route(origin, entry.node, &route, entry.link, MessageKind::Data)?;
        packet.route.clear();
        packet.hops = hops;
        Ok(DeliveryOutcome { packet, hops, route })
    }

    /// Underlay hops a data packet from `origin` to `dst` would take, without
    /// sending anything. `None` when `origin` has no entry for `dst`.
    pub fn probe_route(&self, origin: NodeHandle, dst: &NodeId) -> Option<Vec<NodeHandle>> {
        let entry = self.tables.get(origin.index())?.get(dst)?;
        let route = self.links.route(entry.link, origin);
        Some(if self.config.route_shortcuts { self.optimize_route(&route) } else { route })
    }
}
