use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    NearestQuery,
    NearestReply,
    LinkSetup,
    LinkTeardown,
    Data,
    LivenessPing,
    LivenessAck,
    BridgeNotify,
}

impl MessageKind {
    pub const ALL: [MessageKind; 8] = [
        MessageKind::NearestQuery,
        MessageKind::NearestReply,
        MessageKind::LinkSetup,
        MessageKind::LinkTeardown,
        MessageKind::Data,
        MessageKind::LivenessPing,
        MessageKind::LivenessAck,
        MessageKind::BridgeNotify,
    ];
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counter {
    /// Protocol messages sent.
    pub messages: u64,
    /// Underlay frames those messages consumed.
    pub frames: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Join,
    Events,
    Repair,
    Measure,
}

/// Message and frame counts split by phase and kind.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageCounters {
    pub by_phase: BTreeMap<Phase, BTreeMap<MessageKind, Counter>>,
}

impl MessageCounters {
    pub fn record(&mut self, phase: Phase, kind: MessageKind, frames: u64) {
        let c = self.by_phase.entry(phase).or_default().entry(kind).or_default();
        c.messages += 1;
        c.frames += frames;
    }

    pub fn total_frames(&self) -> u64 {
        self.by_phase.values().flat_map(|m| m.values()).map(|c| c.frames).sum()
    }

    pub fn total_messages(&self) -> u64 {
        self.by_phase.values().flat_map(|m| m.values()).map(|c| c.messages).sum()
    }

    pub fn phase_messages(&self, phase: Phase) -> u64 {
        self.by_phase.get(&phase).map_or(0, |m| m.values().map(|c| c.messages).sum())
    }

    pub fn kind_total(&self, kind: MessageKind) -> Counter {
        let mut out = Counter::default();
        for m in self.by_phase.values() {
            if let Some(c) = m.get(&kind) {
                out.messages += c.messages;
                out.frames += c.frames;
            }
        }
        out
    }
}

/// One protocol message as recorded in a world snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolMessage {
    pub tick: u64,
    pub kind: MessageKind,
    /// Hex node ids.
    pub from: String,
    pub to: String,
    pub frames: u32,
    pub delivered: bool,
}

impl ProtocolMessage {
    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}
