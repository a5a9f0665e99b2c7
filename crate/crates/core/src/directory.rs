//! Publish, lookup and move as message handlers.
//!
//! Every (node, level) pair has a [`Slot`] holding that node's directory
//! state as a level-`i` leader. The path `φ` is the chain of on-path slots
//! linked by `down` pointers from the top level to the owner at level -1.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::exact::{q, q_u64};
use crate::graph::{NodeId, Weight};
use crate::message::{Answer, ClusterUpdate, CostKey, OpId, Payload, QueryKind, SizeClass, SlotRef, Time, TxnId};
use crate::partition::Level;
use crate::sim::{Flow, LogEvent, OpKind, PathEntry, Sim, SimError};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub on_path: bool,
    pub up: Option<NodeId>,
    pub down: Option<NodeId>,
    pub added_by: Option<NodeId>,
    pub down_epoch: usize,
    /// The down link was set by a repair rather than a publish or move.
    pub repaired: bool,
    /// Where this slot's special parent entry lives.
    pub sp_at: Option<SlotRef>,
    pub lock: Option<SlotRef>,
    pub txn: Option<TxnId>,
    /// New leader that has not yet heard whether it is on the path.
    pub pending: bool,
    pub replaced_by: Option<NodeId>,
    pub relinked_from: Option<NodeId>,
    pub waiters: Vec<SlotRef>,
}

impl Slot {
    pub fn busy(&self) -> bool {
        self.lock.is_some() || self.txn.is_some() || self.pending
    }
}

#[derive(Debug, Clone, Default)]
pub struct DirectoryState {
    pub slots: BTreeMap<SlotRef, Slot>,
    /// Special parent entries: `(leader, level) -> {(path level, path node)}`.
    pub registry: BTreeMap<SlotRef, BTreeSet<(Level, NodeId)>>,
    pub token: Vec<Option<u64>>,
    /// Movers a deleted pending owner must hand the token to.
    pub owe: Vec<VecDeque<(OpId, NodeId)>>,
    pub published: bool,
    /// Requester of the latest publish or move, for optimal-cost accounting.
    pub last_requester: Option<NodeId>,
}

impl DirectoryState {
    pub fn new(n: usize) -> Self {
        DirectoryState { token: vec![None; n], owe: vec![VecDeque::new(); n], ..Default::default() }
    }

    pub fn slot(&self, s: SlotRef) -> Slot {
        self.slots.get(&s).cloned().unwrap_or_default()
    }

    pub fn slot_mut(&mut self, s: SlotRef) -> &mut Slot {
        self.slots.entry(s).or_default()
    }

    pub fn owner(&self) -> Option<(NodeId, u64)> {
        self.token.iter().enumerate().find_map(|(v, t)| t.map(|ver| (v, ver)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpState {
    pub id: OpId,
    pub kind: OpKind,
    pub node: NodeId,
    pub issued: Option<Time>,
    pub completed: Option<Time>,
    pub version: Option<u64>,
    pub owner: Option<NodeId>,
    pub found_level: Option<Level>,
    /// `(queries, outbound query cost)` per searched level.
    pub level_cost: BTreeMap<Level, (u32, Weight)>,
    pub restarts: u32,
    pub transient: Vec<String>,
    pub stuck: bool,
    level: Level,
    todo: VecDeque<NodeId>,
    contacted: BTreeSet<NodeId>,
    members: BTreeMap<NodeId, Vec<NodeId>>,
    own: Option<NodeId>,
    chain_below: NodeId,
    tried: BTreeSet<(NodeId, Level, NodeId)>,
    outstanding: usize,
    waiting_self: bool,
}

impl OpState {
    fn new(id: OpId, kind: OpKind, node: NodeId) -> Self {
        OpState {
            id,
            kind,
            node,
            issued: None,
            completed: None,
            version: None,
            owner: None,
            found_level: None,
            level_cost: BTreeMap::new(),
            restarts: 0,
            transient: Vec::new(),
            stuck: false,
            level: -1,
            todo: VecDeque::new(),
            contacted: BTreeSet::new(),
            members: BTreeMap::new(),
            own: None,
            chain_below: node,
            tried: BTreeSet::new(),
            outstanding: 0,
            waiting_self: false,
        }
    }

    pub fn done(&self) -> bool {
        self.completed.is_some()
    }

    fn mark(&mut self, why: &str) {
        if !self.transient.iter().any(|t| t == why) {
            self.transient.push(why.to_string());
        }
    }
}

const MAX_RESTARTS: u32 = 32;

impl Sim {
    pub fn add_op(&mut self, kind: OpKind, node: NodeId) -> OpId {
        let id = self.ops.len();
        self.ops.push(OpState::new(id, kind, node));
        id
    }

    pub fn open_ops(&self) -> impl Iterator<Item = &OpState> {
        self.ops.iter().filter(|o| o.issued.is_some() && !o.done())
    }

    fn op_key(op: OpId) -> CostKey {
        CostKey::Op { op }
    }

    pub(crate) fn start_op(&mut self, op: OpId) {
        let (kind, v) = (self.ops[op].kind, self.ops[op].node);
        let pending = self.repairs_pending();
        self.ops[op].issued = Some(self.now());
        if pending {
            self.ops[op].mark("repairs pending at issue");
        }
        let opt_dist = match kind {
            OpKind::Lookup => None,
            _ => {
                let d = self.dir.last_requester.map(|p| self.dist(p, v)).unwrap_or(0);
                self.dir.last_requester = Some(v);
                Some(d)
            }
        };
        self.log.push(LogEvent::OpIssued { op, kind, node: v, time: self.now(), repairs_pending: pending, opt_dist });
        match kind {
            OpKind::Publish => self.start_publish(op, v),
            OpKind::Lookup => self.start_lookup(op, v),
            OpKind::Move => self.start_move(op, v),
        }
    }

    fn believed_leader(&self, v: NodeId, i: Level) -> NodeId {
        let base = self.hier.base(i);
        self.leaders.get(v, base, v).map(|(_, l)| l).unwrap_or_else(|| self.hier.leader_of(v, i))
    }

    fn start_publish(&mut self, op: OpId, v: NodeId) {
        if self.dir.published {
            self.log.push(LogEvent::Finding { time: self.now(), op: Some(op), what: "second publish rejected".into() });
            self.ops[op].stuck = true;
            self.ops[op].completed = Some(self.now());
            return;
        }
        self.dir.published = true;
        let top = self.hier.top;
        let ls: Vec<NodeId> = (0..=top).map(|i| self.believed_leader(v, i)).collect();
        let epoch = self.epoch;
        {
            let s = self.dir.slot_mut((v, -1));
            s.on_path = true;
            s.added_by = Some(v);
            s.down = None;
            s.up = Some(ls[0]);
            s.down_epoch = epoch;
        }
        self.dir.token[v] = Some(0);
        self.log.push(LogEvent::TokenInstalled { node: v, version: 0, time: self.now(), op });
        self.ops[op].outstanding = ls.len();
        for i in 0..=top {
            let down = if i == 0 { v } else { ls[(i - 1) as usize] };
            let up = if i < top { Some(ls[(i + 1) as usize]) } else { None };
            self.send(v, ls[i as usize], Self::op_key(op), SizeClass::LogN, Payload::PubJoin { op, level: i, down, up });
        }
    }

    pub(crate) fn on_pub_join(&mut self, at: NodeId, op: OpId, i: Level, down: NodeId, up: Option<NodeId>) -> Flow {
        if self.dir.slot((at, i)).busy() {
            return Flow::Defer;
        }
        let v = self.ops[op].node;
        let epoch = self.epoch;
        {
            let s = self.dir.slot_mut((at, i));
            s.on_path = true;
            s.down = Some(down);
            s.up = up;
            s.added_by = Some(v);
            s.down_epoch = epoch;
            s.repaired = false;
            s.replaced_by = None;
            s.relinked_from = None;
        }
        self.sp_register(at, i, Self::op_key(op));
        let o = &mut self.ops[op];
        o.outstanding -= 1;
        if o.outstanding == 0 {
            self.ops[op].found_level = Some(self.hier.top);
            self.complete_op(op, Some(0), Some(v));
        }
        Flow::Done
    }

    pub(crate) fn sp_register(&mut self, p: NodeId, k: Level, key: CostKey) {
        if k >= self.hier.top {
            return;
        }
        let at = self.hier.sp_level(k);
        let s = self.hier.leader_of(p, at);
        self.dir.slot_mut((p, k)).sp_at = Some((s, at));
        self.send(p, s, key, SizeClass::LogN, Payload::SpReg { target: p, level: k, at });
    }

    pub(crate) fn sp_unregister(&mut self, p: NodeId, k: Level, key: CostKey) {
        if let Some((s, at)) = self.dir.slot_mut((p, k)).sp_at.take() {
            self.send(p, s, key, SizeClass::LogN, Payload::SpUnreg { target: p, level: k, at });
        }
    }

    pub(crate) fn on_sp_reg(&mut self, at: NodeId, target: NodeId, level: Level, lv: Level, add: bool) -> Flow {
        let e = self.dir.registry.entry((at, lv)).or_default();
        if add {
            e.insert((level, target));
        } else {
            e.remove(&(level, target));
        }
        Flow::Done
    }

    fn start_lookup(&mut self, op: OpId, v: NodeId) {
        let s = self.dir.slot((v, -1));
        if self.dir.token[v].is_some() || s.on_path {
            self.ops[op].found_level = Some(-1);
            self.log.push(LogEvent::OpFound { op, level: -1, via: "local".into() });
            self.send(v, v, Self::op_key(op), SizeClass::Constant, Payload::Walk { op, level: -1, sp_from: None });
        } else {
            self.begin_level(op, 0);
        }
    }

    fn start_move(&mut self, op: OpId, v: NodeId) {
        let s = self.dir.slot((v, -1));
        if s.on_path {
            self.ops[op].found_level = Some(-1);
            self.log.push(LogEvent::OpFound { op, level: -1, via: "local".into() });
            match self.dir.token[v] {
                Some(ver) => self.install_token(v, ver + 1, op),
                None => self.ops[op].waiting_self = true,
            }
            return;
        }
        let epoch = self.epoch;
        {
            let s = self.dir.slot_mut((v, -1));
            *s = Slot { on_path: true, added_by: Some(v), down_epoch: epoch, ..Slot::default() };
        }
        self.ops[op].chain_below = v;
        self.begin_level(op, 0);
    }

    /// Believed clusters of `P_i(v)` that pass the distance guard, as
    /// `(leader, believed members)`.
    fn contact_list(&self, v: NodeId, i: Level) -> Vec<(NodeId, Vec<NodeId>)> {
        let base = self.hier.base(i);
        let r = self.hier.radius(i);
        let guard = q_u64(r) * (q(1) + q(2) * self.hier.sigma);
        let mut out: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for k in self.leaders.neighborhood_clusters(v, base, r, &self.spts[v].dist) {
            if q_u64(self.dist(v, k.leader)) <= guard {
                out.entry(k.leader).or_default().extend(k.members);
            }
        }
        out.into_iter().collect()
    }

    fn begin_level(&mut self, op: OpId, i: Level) {
        let v = self.ops[op].node;
        if i > self.hier.top {
            self.log.push(LogEvent::Finding {
                time: self.now(),
                op: Some(op),
                what: format!("search passed the top level {}", self.hier.top),
            });
            self.ops[op].stuck = true;
            return;
        }
        let list = self.contact_list(v, i);
        let own = (self.ops[op].kind == OpKind::Move).then(|| self.believed_leader(v, i));
        let o = &mut self.ops[op];
        o.level = i;
        o.contacted.clear();
        o.members = list.iter().cloned().collect();
        o.todo = list.iter().map(|(l, _)| *l).filter(|l| Some(*l) != own).collect();
        o.own = own;
        if let Some(own) = own {
            o.members.entry(own).or_default();
            o.todo.push_back(own);
        }
        self.next_query(op);
    }

    fn next_query(&mut self, op: OpId) {
        let v = self.ops[op].node;
        let i = self.ops[op].level;
        let Some(l) = self.ops[op].todo.pop_front() else {
            if self.ops[op].kind == OpKind::Move {
                self.log.push(LogEvent::Finding {
                    time: self.now(),
                    op: Some(op),
                    what: format!("move left level {i} without joining"),
                });
            }
            self.begin_level(op, i + 1);
            return;
        };
        let o = &mut self.ops[op];
        o.contacted.insert(l);
        o.level_cost.entry(i).or_default().0 += 1;
        let members = o.members.get(&l).cloned().unwrap_or_default();
        let qk = match o.kind {
            OpKind::Move => QueryKind::Move { down: o.chain_below, own: o.own == Some(l) },
            _ => QueryKind::Lookup,
        };
        self.send(v, l, Self::op_key(op), SizeClass::LogN, Payload::Query { op, level: i, q: qk, members });
    }

    /// Cluster corrections a leader sends back for a stale member list.
    fn corrections(&self, l: NodeId, i: Level, members: &[NodeId]) -> Vec<ClusterUpdate> {
        let c = self.hier.cluster_of(l, i);
        let leads = self.hier.cluster(c).leader == l;
        members
            .iter()
            .filter(|&&x| !leads || self.hier.cluster_of(x, i) != c)
            .map(|&x| (x, self.hier.cluster_of(x, i), self.hier.leader_of(x, i)))
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn on_query(
        &mut self,
        at: NodeId,
        src: NodeId,
        cost: Weight,
        op: OpId,
        i: Level,
        qk: QueryKind,
        members: &[NodeId],
    ) -> Flow {
        let slot = self.dir.slot((at, i));
        if slot.busy() {
            return Flow::Defer;
        }
        self.ops[op].level_cost.entry(i).or_default().1 += cost;
        let mut updates = self.corrections(at, i, members);
        let key = Self::op_key(op);
        let epoch = self.epoch;
        let reply = |answer, updates| Payload::Reply { op, level: i, from: at, answer, updates };
        match qk {
            QueryKind::Lookup => {
                if slot.on_path {
                    self.note_found(op, i, "hit");
                    if slot.down_epoch < epoch {
                        self.ops[op].mark("traversed path built before the latest failure");
                    }
                    let d = slot.down.expect("on-path slot above -1 has a down link");
                    self.send(at, d, key, SizeClass::LogN, Payload::Walk { op, level: i - 1, sp_from: None });
                    return Flow::Done;
                }
                let entries: Vec<(Level, NodeId)> =
                    self.dir.registry.get(&(at, i)).map(|s| s.iter().copied().collect()).unwrap_or_default();
                if let Some(&(k, p)) = entries.iter().find(|(k, p)| !self.ops[op].tried.contains(&(at, *k, *p))) {
                    self.ops[op].tried.insert((at, k, p));
                    self.note_found(op, i, "special");
                    self.send(at, p, key, SizeClass::LogN, Payload::Walk { op, level: k, sp_from: Some(i) });
                    return Flow::Done;
                }
                self.send(at, src, key, SizeClass::LogN, reply(Answer::Miss, updates));
            }
            QueryKind::Move { down, own } => {
                if slot.on_path {
                    let old = slot.down;
                    {
                        let s = self.dir.slot_mut((at, i));
                        s.down = Some(down);
                        s.down_epoch = epoch;
                        s.repaired = false;
                    }
                    self.note_found(op, i, "hit");
                    self.send(at, down, key, SizeClass::LogN, Payload::SetUp { level: i - 1, up: at });
                    if let Some(o) = old.filter(|o| *o != down) {
                        self.send(at, o, key, SizeClass::LogN, Payload::Delete { op, level: i - 1, mover: src });
                    }
                    self.send(at, src, key, SizeClass::LogN, reply(Answer::Hit, updates));
                    return Flow::Done;
                }
                let c = self.hier.cluster_of(at, i);
                let leads = self.hier.cluster(c).leader == at;
                if own && leads && self.hier.cluster_of(src, i) == c {
                    {
                        let s = self.dir.slot_mut((at, i));
                        s.on_path = true;
                        s.down = Some(down);
                        s.up = None;
                        s.added_by = Some(src);
                        s.down_epoch = epoch;
                        s.repaired = false;
                        s.replaced_by = None;
                        s.relinked_from = None;
                    }
                    self.send(at, down, key, SizeClass::LogN, Payload::SetUp { level: i - 1, up: at });
                    self.sp_register(at, i, key);
                    self.send(at, src, key, SizeClass::LogN, reply(Answer::Joined, updates));
                    return Flow::Done;
                }
                if own && !updates.iter().any(|u| u.0 == src) {
                    updates.push((src, self.hier.cluster_of(src, i), self.hier.leader_of(src, i)));
                }
                self.send(at, src, key, SizeClass::LogN, reply(Answer::Miss, updates));
            }
        }
        Flow::Done
    }

    fn note_found(&mut self, op: OpId, i: Level, via: &str) {
        if self.ops[op].found_level.is_none() || via == "hit" {
            self.ops[op].found_level = Some(i);
        }
        self.log.push(LogEvent::OpFound { op, level: i, via: via.into() });
    }

    pub(crate) fn on_reply(
        &mut self,
        at: NodeId,
        op: OpId,
        i: Level,
        from: NodeId,
        answer: Answer,
        updates: &[ClusterUpdate],
    ) -> Flow {
        let base = self.hier.base(i);
        for &(x, c, l) in updates {
            self.leaders.learn(at, base, x, c, l);
        }
        if self.ops[op].done() || self.ops[op].level != i {
            return Flow::Done;
        }
        match answer {
            Answer::Miss => {
                if !updates.is_empty() {
                    self.extend_contacts(op, i);
                }
                self.next_query(op);
            }
            Answer::Hit => {}
            Answer::Joined => {
                self.ops[op].chain_below = from;
                self.begin_level(op, i + 1);
            }
        }
        Flow::Done
    }

    /// Adds leaders learned from corrections to the current level's queue.
    fn extend_contacts(&mut self, op: OpId, i: Level) {
        let v = self.ops[op].node;
        let list = self.contact_list(v, i);
        let own = (self.ops[op].kind == OpKind::Move).then(|| self.believed_leader(v, i));
        let o = &mut self.ops[op];
        for (l, m) in list {
            o.members.insert(l, m);
        }
        let mut fresh: Vec<NodeId> = o
            .members
            .keys()
            .copied()
            .filter(|l| !o.contacted.contains(l) && !o.todo.contains(l) && Some(*l) != own)
            .collect();
        fresh.sort();
        let had_own = o.own.is_some_and(|x| o.todo.contains(&x));
        o.todo.retain(|l| Some(*l) != o.own);
        o.todo.extend(fresh);
        if let Some(own) = own {
            if !o.contacted.contains(&own) || Some(own) != o.own {
                o.members.entry(own).or_default();
                o.contacted.remove(&own);
                o.todo.retain(|l| *l != own);
                o.todo.push_back(own);
            } else if had_own {
                o.todo.push_back(own);
            }
            o.own = Some(own);
        }
    }

    pub(crate) fn on_walk(&mut self, at: NodeId, op: OpId, k: Level, sp_from: Option<Level>) -> Flow {
        let issuer = self.ops[op].node;
        let key = Self::op_key(op);
        let slot = self.dir.slot((at, k));
        if slot.busy() {
            return Flow::Defer;
        }
        if k == -1 {
            if let Some(ver) = self.dir.token[at] {
                self.send(at, issuer, key, SizeClass::LogN, Payload::Found { op, version: ver, owner: at });
            } else if slot.on_path || !self.dir.owe[at].is_empty() {
                return Flow::Defer;
            } else {
                self.send(at, issuer, key, SizeClass::LogN, Payload::Stale { op, sp_from });
            }
            return Flow::Done;
        }
        if !slot.on_path {
            match slot.replaced_by {
                Some(w) => {
                    self.send(at, w, key, SizeClass::LogN, Payload::Walk { op, level: k, sp_from });
                }
                None => {
                    self.send(at, issuer, key, SizeClass::LogN, Payload::Stale { op, sp_from });
                }
            }
            return Flow::Done;
        }
        if slot.down_epoch < self.epoch {
            self.ops[op].mark("traversed path built before the latest failure");
        }
        match slot.down {
            Some(d) => {
                self.send(at, d, key, SizeClass::LogN, Payload::Walk { op, level: k - 1, sp_from });
            }
            None => {
                self.send(at, issuer, key, SizeClass::LogN, Payload::Stale { op, sp_from });
            }
        }
        Flow::Done
    }

    pub(crate) fn on_found(&mut self, op: OpId, version: u64, owner: NodeId) -> Flow {
        if !self.ops[op].done() {
            self.complete_op(op, Some(version), Some(owner));
        }
        Flow::Done
    }

    pub(crate) fn on_stale(&mut self, op: OpId, sp_from: Option<Level>) -> Flow {
        if self.ops[op].done() {
            return Flow::Done;
        }
        match sp_from {
            Some(lv) if self.ops[op].level == lv => self.next_query(op),
            _ => {
                let o = &mut self.ops[op];
                o.restarts += 1;
                o.mark("restarted after a stale path");
                let what = format!("stale downward walk, restart {}", o.restarts);
                let give_up = o.restarts > MAX_RESTARTS;
                self.log.push(LogEvent::Finding { time: self.now(), op: Some(op), what });
                if give_up {
                    self.ops[op].stuck = true;
                } else {
                    let v = self.ops[op].node;
                    self.start_lookup(op, v);
                }
            }
        }
        Flow::Done
    }

    pub(crate) fn on_set_up(&mut self, at: NodeId, k: Level, up: NodeId) -> Flow {
        // recording an up link is safe even while the slot is locked
        let s = self.dir.slot((at, k));
        if s.on_path && s.relinked_from != Some(up) {
            self.dir.slot_mut((at, k)).up = Some(up);
            self.up_link_arrived(at, k);
        }
        Flow::Done
    }

    pub(crate) fn on_delete(&mut self, at: NodeId, op: OpId, k: Level, mover: NodeId, key: CostKey) -> Flow {
        let s = self.dir.slot((at, k));
        if s.busy() {
            return Flow::Defer;
        }
        if !s.on_path {
            match s.replaced_by {
                Some(w) => {
                    self.send(at, w, key, SizeClass::LogN, Payload::Delete { op, level: k, mover });
                }
                None => self.log.push(LogEvent::Finding {
                    time: self.now(),
                    op: Some(op),
                    what: format!("delete reached off-path slot ({at}, {k})"),
                }),
            }
            return Flow::Done;
        }
        {
            let s = self.dir.slot_mut((at, k));
            s.on_path = false;
            s.up = None;
            s.down = None;
            s.added_by = None;
            s.relinked_from = None;
        }
        self.sp_unregister(at, k, key);
        if k >= 0 {
            match s.down {
                Some(d) => {
                    self.send(at, d, key, SizeClass::LogN, Payload::Delete { op, level: k - 1, mover });
                }
                None => self.log.push(LogEvent::Finding {
                    time: self.now(),
                    op: Some(op),
                    what: format!("deleted slot ({at}, {k}) had no down link"),
                }),
            }
        } else if let Some(ver) = self.dir.token[at].take() {
            self.log.push(LogEvent::TokenReleased { node: at, version: ver, time: self.now() });
            self.send(at, mover, key, SizeClass::LogN, Payload::Token { op, version: ver });
        } else {
            self.dir.owe[at].push_back((op, mover));
        }
        Flow::Done
    }

    fn install_token(&mut self, at: NodeId, version: u64, op: OpId) {
        if let Some(old) = self.dir.token[at] {
            self.log.push(LogEvent::TokenReleased { node: at, version: old, time: self.now() });
        }
        self.dir.token[at] = Some(version);
        self.log.push(LogEvent::TokenInstalled { node: at, version, time: self.now(), op });
        self.complete_op(op, Some(version), Some(at));
    }

    pub(crate) fn on_token(&mut self, at: NodeId, op: OpId, version: u64) -> Flow {
        self.install_token(at, version + 1, op);
        let waiting: Vec<OpId> = self
            .ops
            .iter()
            .filter(|o| o.node == at && o.waiting_self && !o.done())
            .map(|o| o.id)
            .collect();
        for w in waiting {
            let ver = self.dir.token[at].unwrap();
            self.install_token(at, ver + 1, w);
        }
        // readers waiting at this node see the token before it moves on
        self.retry_deferred(at);
        if let Some((op2, mover)) = self.dir.owe[at].pop_front() {
            let ver = self.dir.token[at].take().unwrap();
            self.log.push(LogEvent::TokenReleased { node: at, version: ver, time: self.now() });
            self.send(at, mover, CostKey::Op { op: op2 }, SizeClass::LogN, Payload::Token { op: op2, version: ver });
        }
        Flow::Done
    }

    pub(crate) fn complete_op(&mut self, op: OpId, version: Option<u64>, owner: Option<NodeId>) {
        let now = self.now();
        let cost = self.ledger.get(CostKey::Op { op }).weighted_cost;
        let o = &mut self.ops[op];
        if o.done() {
            return;
        }
        o.completed = Some(now);
        o.version = version;
        o.owner = owner;
        let levels: Vec<_> = o.level_cost.iter().map(|(&l, &(n, c))| (l, n, c)).collect();
        let (kind, node, transient) = (o.kind, o.node, o.transient.clone());
        for (level, queries, query_cost) in levels {
            self.log.push(LogEvent::OpLevel { op, level, queries, query_cost });
        }
        self.log.push(LogEvent::OpComplete {
            op,
            kind,
            node,
            time: now,
            cost,
            version,
            owner,
            owner_dist: owner.map(|w| self.dist(node, w)),
            transient: !transient.is_empty(),
            reasons: transient,
        });
    }

    /// Marks every open operation as overlapping a failure.
    pub(crate) fn mark_open_ops(&mut self, why: &str) {
        for o in self.ops.iter_mut().filter(|o| o.issued.is_some() && !o.done()) {
            o.mark(why);
        }
    }

    /// The root-to-owner chain. Requires quiescence.
    pub fn path_view(&self) -> Result<Vec<PathEntry>, SimError> {
        if !self.quiescent() {
            return Err(SimError::NotQuiescent);
        }
        self.path_chain()
    }

    pub(crate) fn path_chain(&self) -> Result<Vec<PathEntry>, SimError> {
        let top = self.hier.top;
        let roots: Vec<NodeId> = self
            .dir
            .slots
            .iter()
            .filter(|((_, l), s)| *l == top && s.on_path)
            .map(|((n, _), _)| *n)
            .collect();
        if roots.len() != 1 {
            return Err(SimError::BrokenPath(format!("{} on-path slots at the top level", roots.len())));
        }
        let mut chain = Vec::new();
        let mut cur = roots[0];
        let mut level = top;
        let mut seen = BTreeSet::new();
        loop {
            let s = self.dir.slot((cur, level));
            if !s.on_path {
                return Err(SimError::BrokenPath(format!("({cur}, {level}) is not on the path")));
            }
            seen.insert((cur, level));
            let gap = s.down.filter(|_| level > -1).map(|d| self.dist(cur, d)).unwrap_or(0);
            chain.push(PathEntry { level, node: cur, down_epoch: s.down_epoch, repaired: s.repaired, gap });
            if level == -1 {
                break;
            }
            let d = s.down.ok_or_else(|| SimError::BrokenPath(format!("({cur}, {level}) has no down link")))?;
            let below = self.dir.slot((d, level - 1));
            if below.up != Some(cur) {
                return Err(SimError::BrokenPath(format!(
                    "({d}, {}) has up link {:?}, expected {cur}",
                    level - 1,
                    below.up
                )));
            }
            cur = d;
            level -= 1;
        }
        if let Some(extra) = self.dir.slots.iter().find(|(k, s)| s.on_path && !seen.contains(k)) {
            return Err(SimError::BrokenPath(format!("extra on-path slot {:?}", extra.0)));
        }
        Ok(chain)
    }

    pub fn snapshot_path(&mut self, after_op: Option<OpId>) {
        if let Ok(path) = self.path_chain() {
            self.log.push(LogEvent::PathSnapshot { time: self.now(), after_op, epoch: self.epoch, path });
        }
    }
}
