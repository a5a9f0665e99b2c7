//! Message payloads, size classes and cost keys.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::{EdgeId, NodeId};
use crate::partition::{ClusterId, Level};

pub type OpId = usize;
pub type FailureId = usize;
pub type TxnId = usize;
pub type MsgId = u64;
pub type Time = u64;

/// Accounting label for message size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    Constant,
    LogN,
    NLogN,
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SizeClass::Constant => "constant",
            SizeClass::LogN => "log_n",
            SizeClass::NLogN => "n_log_n",
        })
    }
}

/// What a message's cost is charged to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "category", rename_all = "snake_case")]
pub enum CostKey {
    Setup,
    Op { op: OpId },
    SptUpdate { failure: FailureId },
    Resend { failure: FailureId },
    Recluster { failure: FailureId, cluster: ClusterId },
    PathUpdate { failure: FailureId, cluster: ClusterId },
    Preprocessing { failure: FailureId, cluster: ClusterId },
}

impl fmt::Display for CostKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostKey::Setup => write!(f, "setup"),
            CostKey::Op { op } => write!(f, "op:{op}"),
            CostKey::SptUpdate { failure } => write!(f, "spt_update:f{failure}"),
            CostKey::Resend { failure } => write!(f, "resend:f{failure}"),
            CostKey::Recluster { failure, cluster } => write!(f, "recluster:f{failure}:c{cluster}"),
            CostKey::PathUpdate { failure, cluster } => write!(f, "path_update:f{failure}:c{cluster}"),
            CostKey::Preprocessing { failure, cluster } => {
                write!(f, "preprocessing:f{failure}:c{cluster}")
            }
        }
    }
}

/// A (node, level) directory slot.
pub type SlotRef = (NodeId, Level);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Lookup,
    /// `down` is the mover's new path node one level below; `own` marks the
    /// mover's own leader, which joins on a miss.
    Move { down: NodeId, own: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Miss,
    Hit,
    Joined,
}

/// Corrected cluster knowledge for one node: `(node, cluster, leader)`.
pub type ClusterUpdate = (NodeId, ClusterId, NodeId);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    PubJoin { op: OpId, level: Level, down: NodeId, up: Option<NodeId> },
    Query { op: OpId, level: Level, q: QueryKind, members: Vec<NodeId> },
    Reply { op: OpId, level: Level, from: NodeId, answer: Answer, updates: Vec<ClusterUpdate> },
    /// Lookup walking down the path; `sp_from` is the level of the special
    /// parent that redirected it.
    Walk { op: OpId, level: Level, sp_from: Option<Level> },
    Found { op: OpId, version: u64, owner: NodeId },
    Stale { op: OpId, sp_from: Option<Level> },
    SetUp { level: Level, up: NodeId },
    Delete { op: OpId, level: Level, mover: NodeId },
    Token { op: OpId, version: u64 },
    SpReg { target: NodeId, level: Level, at: Level },
    SpUnreg { target: NodeId, level: Level, at: Level },

    SptNotice { failure: FailureId },
    ResendSummary { failure: FailureId },
    FailNotice { failure: FailureId, cluster: ClusterId, key: ClusterId, edge: EdgeId },
    LockReq { txn: TxnId, from: SlotRef, level: Level },
    LockReply { txn: TxnId, from: SlotRef, to: Level, granted: bool, linked: bool, wake_me: bool },
    Unlock { from: SlotRef, level: Level },
    Wake { level: Level },
    PathNotice { txn: Option<TxnId>, split: usize, path: Option<PathInfo> },
    Relink { txn: TxnId, level: Level, old: NodeId, new: NodeId, from_below: bool },
    RelinkDone { txn: TxnId },
    TreeBcast { split: usize },
    Refresh { level: Level, node: NodeId, cluster: ClusterId, leader: NodeId },
    LayerBcast { ext: usize },
}

/// Path state handed to a new leader.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathInfo {
    pub lo: Level,
    pub hi: Level,
    pub up: Option<NodeId>,
    pub down: NodeId,
    pub added_by: NodeId,
    pub old: NodeId,
}

impl Payload {
    pub fn name(&self) -> &'static str {
        match self {
            Payload::PubJoin { .. } => "pub_join",
            Payload::Query { .. } => "query",
            Payload::Reply { .. } => "reply",
            Payload::Walk { .. } => "walk",
            Payload::Found { .. } => "found",
            Payload::Stale { .. } => "stale",
            Payload::SetUp { .. } => "set_up",
            Payload::Delete { .. } => "delete",
            Payload::Token { .. } => "token",
            Payload::SpReg { .. } => "sp_reg",
            Payload::SpUnreg { .. } => "sp_unreg",
            Payload::SptNotice { .. } => "spt_notice",
            Payload::ResendSummary { .. } => "resend_summary",
            Payload::FailNotice { .. } => "fail_notice",
            Payload::LockReq { .. } => "lock_req",
            Payload::LockReply { .. } => "lock_reply",
            Payload::Unlock { .. } => "unlock",
            Payload::Wake { .. } => "wake",
            Payload::PathNotice { .. } => "path_notice",
            Payload::Relink { .. } => "relink",
            Payload::RelinkDone { .. } => "relink_done",
            Payload::TreeBcast { .. } => "tree_bcast",
            Payload::Refresh { .. } => "refresh",
            Payload::LayerBcast { .. } => "layer_bcast",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub id: MsgId,
    pub key: CostKey,
    pub size: SizeClass,
    pub src: NodeId,
    pub dst: NodeId,
    pub payload: Payload,
    /// Weight of the hops travelled so far.
    pub cost: u64,
    pub resent: bool,
}
