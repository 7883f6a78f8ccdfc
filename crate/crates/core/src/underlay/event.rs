use serde::{Deserialize, Serialize};

/// A scheduled change to the world.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawEvent")]
pub struct WorldEvent {
    pub at: u64,
    #[serde(flatten)]
    pub action: EventAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum EventAction {
    NodeJoin { node: u32 },
    NodeFail { node: u32 },
    ChannelFail { a: u32, b: u32 },
    /// Each listed group gets its own tag; unlisted nodes share one more.
    Partition { groups: Vec<Vec<u32>> },
    Heal,
}

// Flattened enums cannot reject unknown keys, so events are read through
// this strict shape and then checked for the fields each action needs.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    at: u64,
    action: String,
    node: Option<u32>,
    a: Option<u32>,
    b: Option<u32>,
    groups: Option<Vec<Vec<u32>>>,
}

impl TryFrom<RawEvent> for WorldEvent {
    type Error = String;

    fn try_from(r: RawEvent) -> Result<Self, String> {
        let need = |v: Option<u32>, key: &str| v.ok_or_else(|| format!("{} needs `{key}`", r.action));
        let extra = |present: bool, key: &str| {
            if present {
                Err(format!("`{key}` is not valid for {}", r.action))
            } else {
                Ok(())
            }
        };
        let action = match r.action.as_str() {
            "node-join" | "node-fail" => {
                extra(r.a.is_some(), "a")?;
                extra(r.b.is_some(), "b")?;
                extra(r.groups.is_some(), "groups")?;
                let node = need(r.node, "node")?;
                if r.action == "node-join" {
                    EventAction::NodeJoin { node }
                } else {
                    EventAction::NodeFail { node }
                }
            }
            "channel-fail" => {
                extra(r.node.is_some(), "node")?;
                extra(r.groups.is_some(), "groups")?;
                EventAction::ChannelFail { a: need(r.a, "a")?, b: need(r.b, "b")? }
            }
            "partition" => {
                extra(r.node.is_some() || r.a.is_some() || r.b.is_some(), "node/a/b")?;
                EventAction::Partition {
                    groups: r.groups.clone().ok_or_else(|| "partition needs `groups`".to_string())?,
                }
            }
            "heal" => {
                extra(r.node.is_some() || r.a.is_some() || r.b.is_some(), "node/a/b")?;
                extra(r.groups.is_some(), "groups")?;
                EventAction::Heal
            }
            other => return Err(format!("unknown event action `{other}`")),
        };
        Ok(WorldEvent { at: r.at, action })
    }
}

/// Stable sort by tick; equal ticks keep their listed order.
pub fn order_events(events: &mut [WorldEvent]) {
    events.sort_by_key(|e| e.at);
}
