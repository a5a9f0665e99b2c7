//! Deterministic discrete-event runtime.
//!
//! Messages travel hop by hop; a hop over an edge of weight `w` takes `w`
//! time units and costs `w`. Equal latency per edge plus insertion-order
//! tie-breaking keeps every edge FIFO. A node handles one message to
//! completion before the next. A handler may defer a message, in which case
//! it is retried after the node's state next changes.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::directory::{DirectoryState, OpState};
use crate::exact::fmt_q;
use crate::failure::FailureState;
use crate::graph::{EdgeId, Graph, GraphError, NodeId, Weight};
use crate::leaders::{preprocess_leaders, LeaderDirectory};
use crate::message::{CostKey, FailureId, Message, MsgId, OpId, Payload, SizeClass, Time};
use crate::partition::{Hierarchy, Level, Mode};
use crate::spt::{build_spt, ShortestPathTree, SptIndex};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("failing edge {0} would disconnect the graph")]
    WouldDisconnect(EdgeId),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("path view requested while the simulator is busy")]
    NotQuiescent,
    #[error("directory path broken: {0}")]
    BrokenPath(String),
    #[error("token already published")]
    AlreadyPublished,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub messages: u64,
    pub weighted_cost: u64,
    pub max_size: Option<SizeClass>,
    /// Largest route weight of a single delivered message that was neither
    /// rerouted around a failure nor resent.
    pub max_msg_cost: u64,
    pub nlogn_messages: u64,
    pub max_nlogn_cost: u64,
    /// Messages rerouted or resent because of a failure, and their largest route.
    pub disturbed: u64,
    pub max_disturbed_cost: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CostLedger {
    pub entries: BTreeMap<CostKey, LedgerEntry>,
}

impl CostLedger {
    pub fn charge_hop(&mut self, key: CostKey, w: Weight) {
        self.entries.entry(key).or_default().weighted_cost += w;
    }

    pub fn charge_delivery(&mut self, key: CostKey, size: SizeClass, cost: Weight, disturbed: bool) {
        let e = self.entries.entry(key).or_default();
        e.messages += 1;
        e.max_size = Some(e.max_size.map_or(size, |s| s.max(size)));
        if size == SizeClass::NLogN {
            e.nlogn_messages += 1;
        }
        if disturbed {
            e.disturbed += 1;
            e.max_disturbed_cost = e.max_disturbed_cost.max(cost);
            return;
        }
        e.max_msg_cost = e.max_msg_cost.max(cost);
        if size == SizeClass::NLogN {
            e.max_nlogn_cost = e.max_nlogn_cost.max(cost);
        }
    }

    /// Charges cost computed without simulating the messages.
    pub fn charge_bulk(&mut self, key: CostKey, size: SizeClass, messages: u64, cost: Weight) {
        let e = self.entries.entry(key).or_default();
        e.messages += messages;
        e.weighted_cost += cost;
        e.max_size = Some(e.max_size.map_or(size, |s| s.max(size)));
    }

    pub fn get(&self, key: CostKey) -> LedgerEntry {
        self.entries.get(&key).copied().unwrap_or_default()
    }

    /// Entries as a list; JSON object keys cannot carry structured keys.
    pub fn rows(&self) -> Vec<(CostKey, LedgerEntry)> {
        self.entries.iter().map(|(k, e)| (*k, *e)).collect()
    }

    pub fn from_rows(rows: Vec<(CostKey, LedgerEntry)>) -> Self {
        CostLedger { entries: rows.into_iter().collect() }
    }

    pub fn total_excluding_setup(&self) -> u64 {
        self.entries.iter().filter(|(k, _)| **k != CostKey::Setup).map(|(_, e)| e.weighted_cost).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["key", "messages", "weighted_cost", "max_size_class"]).unwrap();
        for (k, e) in &self.entries {
            w.write_record([
                k.to_string(),
                e.messages.to_string(),
                e.weighted_cost.to_string(),
                e.max_size.map(|s| s.to_string()).unwrap_or_default(),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Publish,
    Lookup,
    Move,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathEntry {
    pub level: Level,
    pub node: NodeId,
    /// Failure epoch in which the link to the level below was set.
    pub down_epoch: usize,
    pub repaired: bool,
    /// Distance to the entry one level below (0 at level −1).
    pub gap: Weight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Setup {
        n: usize,
        m: usize,
        diameter: Weight,
        h: Level,
        rho: u64,
        mode: Mode,
        sigma: String,
        intersect: usize,
        c_prime: u64,
        sp_offset: Level,
        root: NodeId,
        setup_messages: u64,
        setup_cost: u64,
    },
    Hop { msg: MsgId, edge: EdgeId, from: NodeId, to: NodeId, depart: Time, arrive: Time, weight: Weight },
    MsgDone {
        msg: MsgId,
        kind: String,
        key: CostKey,
        size: SizeClass,
        src: NodeId,
        dst: NodeId,
        cost: Weight,
        time: Time,
        resent: bool,
        rerouted: bool,
    },
    MsgLost { msg: MsgId, edge: EdgeId, from: NodeId, time: Time },
    Resent { failure: FailureId, msg: MsgId, from: NodeId, time: Time },
    OpIssued {
        op: OpId,
        kind: OpKind,
        node: NodeId,
        time: Time,
        repairs_pending: bool,
        /// For moves, distance from the previous requester.
        opt_dist: Option<Weight>,
    },
    OpLevel { op: OpId, level: Level, queries: u32, query_cost: Weight },
    OpFound { op: OpId, level: Level, via: String },
    OpComplete {
        op: OpId,
        kind: OpKind,
        node: NodeId,
        time: Time,
        cost: Weight,
        version: Option<u64>,
        owner: Option<NodeId>,
        /// Distance from the requester to the owner it reached.
        owner_dist: Option<Weight>,
        transient: bool,
        reasons: Vec<String>,
    },
    TokenInstalled { node: NodeId, version: u64, time: Time, op: OpId },
    TokenReleased { node: NodeId, version: u64, time: Time },
    PathSnapshot { time: Time, after_op: Option<OpId>, epoch: usize, path: Vec<PathEntry> },
    Failure { failure: FailureId, edge: EdgeId, weight: Weight, time: Time },
    SptCheck {
        failure: FailureId,
        repaired_roots: Vec<NodeId>,
        all_match: bool,
        /// Diameter of the graph that remains.
        diameter: Weight,
    },
    Split {
        failure: FailureId,
        key: usize,
        split: usize,
        level: Level,
        parent: usize,
        child: usize,
        old_leader: NodeId,
        leader: NodeId,
        members: Vec<NodeId>,
        edge: EdgeId,
        on_path: bool,
    },
    NoSplit { failure: FailureId, cluster: usize, level: Level, reason: String },
    LayerExt {
        failure: FailureId,
        old_top: Level,
        new_top: Level,
        farthest: NodeId,
        farthest_dist: Weight,
        critical_edge: Option<EdgeId>,
        critical_weight: Weight,
        threshold: String,
        farthest_in_v2: bool,
        triggered: bool,
        extended: bool,
    },
    PathTxn {
        failure: FailureId,
        key: usize,
        txn: usize,
        lo: Level,
        hi: Level,
        old: NodeId,
        new: NodeId,
        outcome: String,
        time: Time,
    },
    Finding { time: Time, op: Option<OpId>, what: String },
}

#[derive(Debug, Clone, Default)]
pub struct EventLog {
    pub events: Vec<LogEvent>,
}

impl EventLog {
    pub fn push(&mut self, e: LogEvent) {
        self.events.push(e);
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&serde_json::to_string(e).expect("log event serializes"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(EventLog { events })
    }
}

#[derive(Debug, Clone)]
enum Event {
    Arrive { msg: MsgId, hop: u64, from: NodeId, to: NodeId },
    Deliver { msg: MsgId },
    Fail { edge: EdgeId },
    Issue { op: OpId },
}

#[derive(Debug, Clone)]
struct InFlight {
    msg: Message,
    route: VecDeque<NodeId>,
    at: NodeId,
    hop: u64,
    lost: bool,
    rerouted: bool,
}

/// Outcome of a handler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Done,
    Defer,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct SimConfig {
    /// Events after this time are not processed.
    pub horizon: Option<Time>,
}

pub struct Sim {
    pub g: Graph,
    pub spts: Vec<ShortestPathTree>,
    pub spt_index: SptIndex,
    pub hier: Hierarchy,
    pub leaders: LeaderDirectory,
    pub dir: DirectoryState,
    pub ops: Vec<OpState>,
    pub fail: FailureState,
    pub ledger: CostLedger,
    pub log: EventLog,
    pub config: SimConfig,
    /// Number of failures applied so far.
    pub epoch: usize,
    now: Time,
    seq: u64,
    queue: BinaryHeap<Reverse<(Time, u64)>>,
    events: BTreeMap<u64, Event>,
    inflight: BTreeMap<MsgId, InFlight>,
    transit: BTreeMap<EdgeId, BTreeSet<MsgId>>,
    delivered: BTreeSet<MsgId>,
    deferred: BTreeMap<NodeId, VecDeque<Message>>,
    next_msg: MsgId,
}

impl Sim {
    pub fn new(g: Graph, hier: Hierarchy, config: SimConfig) -> Self {
        let n = g.n();
        let spts: Vec<_> = (0..n).map(|r| build_spt(&g, r)).collect();
        let spt_index = SptIndex::build(&spts);
        let (leaders, setup) = preprocess_leaders(&hier, &spts);
        let mut ledger = CostLedger::default();
        ledger.charge_bulk(CostKey::Setup, SizeClass::LogN, setup.messages, setup.weighted_cost);
        let mut log = EventLog::default();
        log.push(LogEvent::Setup {
            n,
            m: g.edges().len(),
            diameter: hier.diameter,
            h: hier.h,
            rho: hier.rho,
            mode: hier.mode,
            sigma: fmt_q(hier.sigma),
            intersect: hier.intersect,
            c_prime: hier.c_prime,
            sp_offset: hier.sp_offset,
            root: hier.root,
            setup_messages: setup.messages,
            setup_cost: setup.weighted_cost,
        });
        Sim {
            dir: DirectoryState::new(n),
            g,
            spts,
            spt_index,
            hier,
            leaders,
            ops: Vec::new(),
            fail: FailureState::default(),
            ledger,
            log,
            config,
            epoch: 0,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            events: BTreeMap::new(),
            inflight: BTreeMap::new(),
            transit: BTreeMap::new(),
            delivered: BTreeSet::new(),
            deferred: BTreeMap::new(),
            next_msg: 0,
        }
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn n(&self) -> usize {
        self.g.n()
    }

    fn schedule(&mut self, at: Time, e: Event) {
        let s = self.seq;
        self.seq += 1;
        self.events.insert(s, e);
        self.queue.push(Reverse((at, s)));
    }

    pub fn schedule_failure(&mut self, at: Time, edge: EdgeId) {
        self.schedule(at.max(self.now), Event::Fail { edge });
    }

    pub fn schedule_issue(&mut self, at: Time, op: OpId) {
        self.schedule(at.max(self.now), Event::Issue { op });
    }

    /// Current shortest-path distance between two nodes.
    pub fn dist(&self, a: NodeId, b: NodeId) -> Weight {
        self.spts[a].dist[b]
    }

    /// Sends along the sender's shortest path tree.
    pub fn send(&mut self, src: NodeId, dst: NodeId, key: CostKey, size: SizeClass, payload: Payload) -> MsgId {
        let route: VecDeque<NodeId> = if src == dst {
            VecDeque::new()
        } else {
            self.spts[src].path_from_root(dst).into_iter().skip(1).collect()
        };
        self.launch_new(src, dst, key, size, payload, route)
    }

    /// Sends along an explicit path `path[0] -> ... -> last`.
    pub fn send_path(&mut self, path: &[NodeId], key: CostKey, size: SizeClass, payload: Payload) -> MsgId {
        let src = path[0];
        let dst = *path.last().unwrap();
        let route = path.iter().skip(1).copied().collect();
        self.launch_new(src, dst, key, size, payload, route)
    }

    fn launch_new(
        &mut self,
        src: NodeId,
        dst: NodeId,
        key: CostKey,
        size: SizeClass,
        payload: Payload,
        route: VecDeque<NodeId>,
    ) -> MsgId {
        let id = self.next_msg;
        self.next_msg += 1;
        let msg = Message { id, key, size, src, dst, payload, cost: 0, resent: false };
        self.inflight.insert(id, InFlight { msg, route, at: src, hop: 0, lost: false, rerouted: false });
        self.forward(id);
        id
    }

    /// Moves a message one hop on from its current node.
    fn forward(&mut self, id: MsgId) {
        let f = self.inflight.get_mut(&id).unwrap();
        let at = f.at;
        if at == f.msg.dst {
            self.schedule(self.now, Event::Deliver { msg: id });
            return;
        }
        let mut next = f.route.front().copied();
        let usable = next.is_some_and(|nx| self.g.is_alive(EdgeId::new(at, nx)));
        if !usable {
            f.rerouted |= next.is_some();
            let dst = f.msg.dst;
            f.route = self.spts[at].path_from_root(dst).into_iter().skip(1).collect();
            next = f.route.front().copied();
        }
        let nx = next.expect("route to a distinct node has a hop");
        f.route.pop_front();
        f.hop += 1;
        let hop = f.hop;
        let e = EdgeId::new(at, nx);
        let w = self.g.weight(e).unwrap();
        self.transit.entry(e).or_default().insert(id);
        self.schedule(self.now + w, Event::Arrive { msg: id, hop, from: at, to: nx });
    }

    fn on_arrive(&mut self, id: MsgId, hop: u64, from: NodeId, to: NodeId) {
        let Some(f) = self.inflight.get_mut(&id) else { return };
        if f.lost || f.hop != hop {
            return;
        }
        let e = EdgeId::new(from, to);
        if let Some(s) = self.transit.get_mut(&e) {
            s.remove(&id);
        }
        let w = self.g.weight(e).unwrap();
        f.msg.cost += w;
        f.at = to;
        let key = f.msg.key;
        self.ledger.charge_hop(key, w);
        self.log.push(LogEvent::Hop { msg: id, edge: e, from, to, depart: self.now - w, arrive: self.now, weight: w });
        self.forward(id);
    }

    fn on_deliver(&mut self, id: MsgId) {
        let Some(f) = self.inflight.remove(&id) else { return };
        let (msg, rerouted) = (f.msg, f.rerouted);
        if !self.delivered.insert(id) {
            return;
        }
        self.ledger.charge_delivery(msg.key, msg.size, msg.cost, rerouted || msg.resent);
        self.log.push(LogEvent::MsgDone {
            msg: id,
            kind: msg.payload.name().to_string(),
            key: msg.key,
            size: msg.size,
            src: msg.src,
            dst: msg.dst,
            cost: msg.cost,
            time: self.now,
            resent: msg.resent,
            rerouted,
        });
        let dst = msg.dst;
        match self.dispatch(&msg) {
            Flow::Defer => self.deferred.entry(dst).or_default().push_back(msg),
            Flow::Done => self.retry_deferred(dst),
        }
    }

    /// Retries messages deferred at `node` until none makes progress.
    pub fn retry_deferred(&mut self, node: NodeId) {
        loop {
            let Some(mut q) = self.deferred.remove(&node) else { return };
            let mut progressed = false;
            let mut keep = VecDeque::new();
            while let Some(m) = q.pop_front() {
                match self.dispatch(&m) {
                    Flow::Done => progressed = true,
                    Flow::Defer => keep.push_back(m),
                }
            }
            // handlers may have deferred fresh messages meanwhile
            if let Some(extra) = self.deferred.remove(&node) {
                keep.extend(extra);
            }
            if !keep.is_empty() {
                self.deferred.insert(node, keep);
            }
            if !progressed {
                return;
            }
        }
    }

    fn dispatch(&mut self, m: &Message) -> Flow {
        let at = m.dst;
        match m.payload.clone() {
            Payload::PubJoin { op, level, down, up } => self.on_pub_join(at, op, level, down, up),
            Payload::Query { op, level, q, members } => self.on_query(at, m.src, m.cost, op, level, q, &members),
            Payload::Reply { op, level, from, answer, updates } => {
                self.on_reply(at, op, level, from, answer, &updates)
            }
            Payload::Walk { op, level, sp_from } => self.on_walk(at, op, level, sp_from),
            Payload::Found { op, version, owner } => self.on_found(op, version, owner),
            Payload::Stale { op, sp_from } => self.on_stale(op, sp_from),
            Payload::SetUp { level, up } => self.on_set_up(at, level, up),
            Payload::Delete { op, level, mover } => self.on_delete(at, op, level, mover, m.key),
            Payload::Token { op, version } => self.on_token(at, op, version),
            Payload::SpReg { target, level, at: lv } => self.on_sp_reg(at, target, level, lv, true),
            Payload::SpUnreg { target, level, at: lv } => self.on_sp_reg(at, target, level, lv, false),
            Payload::SptNotice { failure } => self.on_spt_notice(at, failure),
            Payload::ResendSummary { failure } => self.on_resend_summary(at, failure),
            Payload::FailNotice { failure, cluster, key, edge } => {
                self.on_fail_notice(at, failure, cluster, key, edge)
            }
            Payload::LockReq { txn, from, level } => self.on_lock_req(at, txn, from, level),
            Payload::LockReply { txn, from, to, granted, linked, wake_me } => {
                self.on_lock_reply(at, txn, from, to, granted, linked, wake_me)
            }
            Payload::Unlock { from, level } => self.on_unlock(at, from, level),
            Payload::Wake { level } => self.on_wake(at, level),
            Payload::PathNotice { txn, split, path } => self.on_path_notice(at, txn, split, path),
            Payload::Relink { txn, level, old, new, from_below } => {
                self.on_relink(at, txn, level, old, new, from_below)
            }
            Payload::RelinkDone { txn } => self.on_relink_done(at, txn),
            Payload::TreeBcast { split } => self.on_tree_bcast(at, split, m.key),
            Payload::Refresh { level, node, cluster, leader } => {
                self.leaders.learn(at, level, node, cluster, leader);
                Flow::Done
            }
            Payload::LayerBcast { ext } => self.on_layer_bcast(at, ext, m.key),
        }
    }

    /// Drops every message currently crossing `e`; returns `(msg, sender)`.
    pub(crate) fn lose_in_transit(&mut self, e: EdgeId) -> Vec<(MsgId, NodeId)> {
        let ids = self.transit.remove(&e).unwrap_or_default();
        let mut out = Vec::new();
        for id in ids {
            if let Some(f) = self.inflight.get_mut(&id) {
                f.lost = true;
                out.push((id, f.at));
                self.log.push(LogEvent::MsgLost { msg: id, edge: e, from: f.at, time: self.now });
            }
        }
        out
    }

    /// Resumes a lost message from `from` towards its destination.
    pub(crate) fn resend(&mut self, id: MsgId, from: NodeId) -> bool {
        if self.delivered.contains(&id) {
            return false;
        }
        let Some(f) = self.inflight.get_mut(&id) else { return false };
        if !f.lost {
            return false;
        }
        f.lost = false;
        f.at = from;
        f.msg.resent = true;
        f.route.clear();
        self.forward(id);
        true
    }

    pub fn has_deferred(&self) -> bool {
        self.deferred.values().any(|q| !q.is_empty())
    }

    pub fn deferred_count(&self) -> usize {
        self.deferred.values().map(|q| q.len()).sum()
    }

    pub fn in_flight(&self) -> usize {
        self.inflight.values().filter(|f| !f.lost).count()
    }

    /// No pending event, no waiting message, no open transaction.
    pub fn quiescent(&self) -> bool {
        self.queue.is_empty() && !self.has_deferred() && self.fail.open_txns() == 0
    }

    /// Whether repair work for some failure is still outstanding.
    pub fn repairs_pending(&self) -> bool {
        self.fail.open_txns() > 0
            || self.has_deferred()
            || self.inflight.values().any(|f| {
                !matches!(f.msg.key, CostKey::Op { .. } | CostKey::Setup)
            })
            || self.events.values().any(|e| matches!(e, Event::Fail { .. }))
    }

    /// Processes events until the queue is empty or the horizon passes.
    pub fn run(&mut self) -> Result<(), SimError> {
        while self.step()? {}
        Ok(())
    }

    /// Processes one event. Returns false when nothing is left before the horizon.
    pub fn step(&mut self) -> Result<bool, SimError> {
        {
            let Some(&Reverse((t, s))) = self.queue.peek() else { return Ok(false) };
            if self.config.horizon.is_some_and(|h| t > h) {
                return Ok(false);
            }
            self.queue.pop();
            self.now = t;
            let e = self.events.remove(&s).unwrap();
            match e {
                Event::Arrive { msg, hop, from, to } => self.on_arrive(msg, hop, from, to),
                Event::Deliver { msg } => self.on_deliver(msg),
                Event::Fail { edge } => self.apply_failure(edge)?,
                Event::Issue { op } => self.start_op(op),
            }
        }
        Ok(true)
    }
}
