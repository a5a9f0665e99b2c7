//! Edge failures and everything that repairs after them.
//!
//! Both endpoints learn of a failure instantly. Every shortest path tree that
//! used the edge is repaired at once and the surviving endpoint notifies the
//! tree's root. Every cluster tree that used the edge is split by its leader
//! once the failure notice reaches it; if the leader was on the directory
//! path and the node that placed it there ended up in the split-off part, a
//! locked five-step transaction hands the path over to the new leader.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::exact::{fmt_q, pow, q_u64, Q};
use crate::graph::{EdgeId, NodeId, Weight};
use crate::leaders::alias_radius;
use crate::message::{CostKey, FailureId, MsgId, PathInfo, Payload, SizeClass, SlotRef, Time, TxnId};
use crate::partition::{ClusterId, ClusterTree, Level, Mode};
use crate::sim::{Flow, LogEvent, Sim, SimError};
use crate::spt::{build_spt, update_spt, ShortestPathTree};

#[derive(Debug, Clone)]
pub struct FailureRecord {
    pub id: FailureId,
    pub edge: EdgeId,
    pub time: Time,
    pub old_root_tree: Option<ShortestPathTree>,
    pub root_checked: bool,
    pub lost: Vec<(MsgId, NodeId)>,
    pub diameter_after: Weight,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitRecord {
    pub id: usize,
    pub failure: FailureId,
    /// Cluster whose tree held the edge when it failed.
    pub key: ClusterId,
    pub level: Level,
    pub parent: ClusterId,
    pub child: ClusterId,
    pub old_leader: NodeId,
    pub leader: NodeId,
    /// Child-side endpoint of the failed edge.
    pub via: NodeId,
    pub members: Vec<NodeId>,
    pub edge: EdgeId,
    pub band: (Level, Level),
    pub on_path: bool,
    /// Layer extensions inform members with their own broadcast.
    pub no_bcast: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxnState {
    Locking,
    WaitingUp,
    Waiting,
    Notified,
    Done,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Txn {
    pub id: TxnId,
    pub split: usize,
    pub key: CostKey,
    pub leader: NodeId,
    pub lo: Level,
    pub hi: Level,
    pub state: TxnState,
    pub needs: Vec<SlotRef>,
    pub grants: BTreeMap<SlotRef, bool>,
    pub relinks: usize,
    pub attempts: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerExtRecord {
    pub failure: FailureId,
    pub old_top: Level,
    pub new_top: Level,
    pub v1: Vec<NodeId>,
    pub v2: Vec<NodeId>,
    pub c1: ClusterId,
    pub c2: ClusterId,
    pub top_cluster: ClusterId,
}

#[derive(Debug, Clone, Default)]
pub struct FailureState {
    pub records: Vec<FailureRecord>,
    pub splits: Vec<SplitRecord>,
    pub txns: BTreeMap<TxnId, Txn>,
    pub exts: Vec<LayerExtRecord>,
}

impl FailureState {
    pub fn open_txns(&self) -> usize {
        self.txns.values().filter(|t| t.state != TxnState::Done).count()
    }
}

/// Layer-extension threshold `σρ^{h+1} − 4σρ^h`.
pub fn extension_threshold(sigma: Q, rho: u64, h: Level) -> Q {
    let r = q_u64(rho);
    sigma * pow(r, (h + 1) as u32) - Q::from_integer(4) * sigma * pow(r, h as u32)
}

/// Smallest `h'` with `σρ^{h'} > d`.
pub fn minimal_top(sigma: Q, rho: u64, d: Weight) -> Level {
    let mut h = 0;
    while sigma * pow(q_u64(rho), h as u32) <= q_u64(d) {
        h += 1;
    }
    h
}

fn spt_as_tree(t: &ShortestPathTree) -> ClusterTree {
    ClusterTree { root: t.root, parent: t.parent.iter().enumerate().map(|(v, p)| (v, *p)).collect() }
}

impl Sim {
    /// Levels whose clusters are those of `base`.
    pub(crate) fn band_levels(&self, base: Level) -> Vec<Level> {
        self.hier
            .levels
            .iter()
            .filter(|li| li.level == base || li.copy_of == Some(base))
            .map(|li| li.level)
            .collect()
    }

    pub(crate) fn apply_failure(&mut self, e: EdgeId) -> Result<(), SimError> {
        if !self.g.is_alive(e) {
            return Err(SimError::Graph(crate::graph::GraphError::AlreadyDead(e)));
        }
        if !self.g.connected_without(&[e]) {
            return Err(SimError::WouldDisconnect(e));
        }
        let f = self.fail.records.len();
        self.epoch += 1;
        let w = self.g.weight(e).unwrap();
        self.log.push(LogEvent::Failure { failure: f, edge: e, weight: w, time: self.now() });
        self.mark_open_ops("failure during operation");
        let root = self.hier.root;
        let old_root_tree = self.spts[root].contains_edge(e).then(|| self.spts[root].clone());
        self.g.fail_edge(e)?;
        let lost = self.lose_in_transit(e);

        let mut notices = Vec::new();
        for r in self.spt_index.roots_of(e) {
            let Some(child) = self.spts[r].child_endpoint(e) else { continue };
            let delta = update_spt(&mut self.spts[r], e, &self.g);
            self.spt_index.apply(r, &delta);
            notices.push((e.other(child), r));
        }
        let all_match = (0..self.n()).all(|r| self.spts[r] == build_spt(&self.g, r));
        let diameter_after = self.g.diameter().unwrap_or(0);
        self.log.push(LogEvent::SptCheck {
            failure: f,
            repaired_roots: notices.iter().map(|x| x.1).collect(),
            all_match,
            diameter: diameter_after,
        });
        self.fail.records.push(FailureRecord {
            id: f,
            edge: e,
            time: self.now(),
            old_root_tree,
            root_checked: false,
            lost,
            diameter_after,
        });
        for (s, r) in notices {
            self.send(s, r, CostKey::SptUpdate { failure: f }, SizeClass::LogN, Payload::SptNotice { failure: f });
        }
        for (a, b) in [(e.lo, e.hi), (e.hi, e.lo)] {
            self.send(a, b, CostKey::Resend { failure: f }, SizeClass::LogN, Payload::ResendSummary { failure: f });
        }

        let top = self.hier.top;
        let mut hits = Vec::new();
        for li in &self.hier.levels {
            if li.copy_of.is_some() || li.level < 0 || li.level >= top {
                continue;
            }
            for &c in &li.clusters {
                let cl = self.hier.cluster(c);
                if let Some((u, _)) = cl.tree.orient(e.lo, e.hi) {
                    hits.push((c, cl.tree.path_to_root(u)));
                }
            }
        }
        for (c, path) in hits {
            let key = CostKey::Recluster { failure: f, cluster: c };
            let p = Payload::FailNotice { failure: f, cluster: c, key: c, edge: e };
            self.send_path(&path, key, SizeClass::LogN, p);
        }
        Ok(())
    }

    pub(crate) fn on_resend_summary(&mut self, at: NodeId, f: FailureId) -> Flow {
        let mine: Vec<MsgId> =
            self.fail.records[f].lost.iter().filter(|(_, from)| *from == at).map(|(id, _)| *id).collect();
        for id in mine {
            if self.resend(id, at) {
                self.log.push(crate::sim::LogEvent::Resent { failure: f, msg: id, from: at, time: self.now() });
            }
        }
        Flow::Done
    }

    pub(crate) fn on_fail_notice(
        &mut self,
        at: NodeId,
        f: FailureId,
        c: ClusterId,
        key: ClusterId,
        e: EdgeId,
    ) -> Flow {
        let ckey = CostKey::Recluster { failure: f, cluster: key };
        let leader = self.hier.cluster(c).leader;
        if leader != at {
            self.send(at, leader, ckey, SizeClass::LogN, Payload::FailNotice { failure: f, cluster: c, key, edge: e });
            return Flow::Done;
        }
        let base = self.hier.cluster(c).level;
        if self.band_levels(base).iter().any(|&l| self.dir.slot((at, l)).busy()) {
            return Flow::Defer;
        }
        if !self.hier.cluster(c).tree.has_edge(e.lo, e.hi) {
            // the edge went to a cluster split off from this one
            let target = self
                .hier
                .clusters
                .iter()
                .filter(|x| self.descends_from(x.id, c) && x.tree.has_edge(e.lo, e.hi))
                .map(|x| x.id)
                .next();
            match target {
                Some(c2) => {
                    let l2 = self.hier.cluster(c2).leader;
                    let p = Payload::FailNotice { failure: f, cluster: c2, key, edge: e };
                    self.send(at, l2, ckey, SizeClass::LogN, p);
                }
                None => self.log.push(LogEvent::NoSplit {
                    failure: f,
                    cluster: c,
                    level: base,
                    reason: "edge no longer in the cluster tree".into(),
                }),
            }
            return Flow::Done;
        }
        self.split(at, f, c, key, e);
        Flow::Done
    }

    fn descends_from(&self, mut x: ClusterId, anc: ClusterId) -> bool {
        while let Some(p) = self.hier.cluster(x).split_from {
            if p == anc {
                return true;
            }
            x = p;
        }
        false
    }

    fn split(&mut self, l: NodeId, f: FailureId, c: ClusterId, key: ClusterId, e: EdgeId) {
        let cl = self.hier.cluster(c).clone();
        let base = cl.level;
        let (_, v) = cl.tree.orient(e.lo, e.hi).unwrap();
        let sub = cl.tree.subtree(v);
        let x2: BTreeSet<NodeId> = cl.members.intersection(&sub).copied().collect();
        let mode = self.hier.mode;
        let mut tree1 = cl.tree.clone();
        tree1.remove_subtree(v);
        if x2.is_empty() {
            tree1.prune(&cl.members);
            self.hier.cluster_mut(c).tree = tree1;
            self.log.push(LogEvent::NoSplit {
                failure: f,
                cluster: c,
                level: base,
                reason: "no members below the failed edge".into(),
            });
            return;
        }
        let w = match mode {
            Mode::Strong => v,
            Mode::Weak => {
                let d = cl.tree.distances(&self.g, v);
                *x2.iter().min_by_key(|&&m| (d.get(&m).copied().unwrap_or(Weight::MAX), m)).unwrap()
            }
        };
        let mut tree2 = cl.tree.reroot(&sub, w);
        let x1: BTreeSet<NodeId> = cl.members.difference(&x2).copied().collect();
        if mode == Mode::Weak {
            tree2.prune(&x2);
            tree1.prune(&x1);
        }
        self.hier.cluster_mut(c).tree = tree1;
        let c2 = self.hier.split_off(c, x2.clone(), w, tree2);

        let band = self.band_levels(base);
        let on: Vec<Level> = band.iter().copied().filter(|&lv| self.dir.slot((l, lv)).on_path).collect();
        let added_by = on.first().and_then(|&lo| self.dir.slot((l, lo)).added_by);
        let on_path = !on.is_empty() && added_by.is_some_and(|a| x2.contains(&a));
        let (lo, hi) = (*on.first().unwrap_or(&base), *on.last().unwrap_or(&base));
        for &lv in &band {
            *self.dir.slot_mut((w, lv)) = crate::directory::Slot { pending: true, ..Default::default() };
        }
        let sid = self.fail.splits.len();
        self.log.push(LogEvent::Split {
            failure: f,
            key,
            split: sid,
            level: base,
            parent: c,
            child: c2,
            old_leader: l,
            leader: w,
            members: x2.iter().copied().collect(),
            edge: e,
            on_path,
        });
        self.fail.splits.push(SplitRecord {
            id: sid,
            failure: f,
            key,
            level: base,
            parent: c,
            child: c2,
            old_leader: l,
            leader: w,
            via: v,
            members: x2.into_iter().collect(),
            edge: e,
            band: (lo, hi),
            on_path,
            no_bcast: false,
        });
        if on_path {
            self.start_txn(sid);
        } else {
            self.send_path_notice(sid, None, None);
        }
    }

    fn path_key(&self, sid: usize) -> CostKey {
        let s = &self.fail.splits[sid];
        CostKey::PathUpdate { failure: s.failure, cluster: s.key }
    }

    fn send_path_notice(&mut self, sid: usize, txn: Option<TxnId>, path: Option<PathInfo>) {
        let (l, v) = (self.fail.splits[sid].old_leader, self.fail.splits[sid].via);
        let key = self.path_key(sid);
        self.send(l, v, key, SizeClass::LogN, Payload::PathNotice { txn, split: sid, path });
    }

    fn start_txn(&mut self, sid: usize) {
        let id = self.fail.txns.len();
        let s = &self.fail.splits[sid];
        let (l, lo, hi) = (s.old_leader, s.band.0, s.band.1);
        let key = self.path_key(sid);
        self.fail.txns.insert(
            id,
            Txn {
                id,
                split: sid,
                key,
                leader: l,
                lo,
                hi,
                state: TxnState::Locking,
                needs: Vec::new(),
                grants: BTreeMap::new(),
                relinks: 0,
                attempts: 0,
            },
        );
        for lv in lo..=hi {
            self.dir.slot_mut((l, lv)).txn = Some(id);
        }
        self.request_locks(id);
    }

    fn request_locks(&mut self, id: TxnId) {
        let t = self.fail.txns[&id].clone();
        let l = t.leader;
        let below = self.dir.slot((l, t.lo)).down.expect("on-path slot has a down link");
        let mut needs = vec![(below, t.lo - 1)];
        if t.hi < self.hier.top {
            match self.dir.slot((l, t.hi)).up {
                Some(up) => needs.push((up, t.hi + 1)),
                None => {
                    self.fail.txns.get_mut(&id).unwrap().state = TxnState::WaitingUp;
                    return;
                }
            }
        }
        let tx = self.fail.txns.get_mut(&id).unwrap();
        tx.state = TxnState::Locking;
        tx.grants.clear();
        tx.attempts += 1;
        tx.needs = needs.clone();
        for (n, lv) in needs {
            let from = if lv < t.lo { (l, t.lo) } else { (l, t.hi) };
            self.send(l, n, t.key, SizeClass::LogN, Payload::LockReq { txn: id, from, level: lv });
        }
    }

    /// Called when a slot learns its up link; a transaction may be waiting.
    pub(crate) fn up_link_arrived(&mut self, at: NodeId, k: Level) {
        if let Some(t) = self.dir.slot((at, k)).txn {
            if self.fail.txns[&t].state == TxnState::WaitingUp {
                self.request_locks(t);
            }
        }
    }

    pub(crate) fn on_lock_req(&mut self, at: NodeId, txn: TxnId, from: SlotRef, j: Level) -> Flow {
        let key = self.fail.txns[&txn].key;
        let s = self.dir.slot((at, j));
        let me = (at, j);
        let reply = |granted, linked, wake_me| Payload::LockReply { txn, from: me, to: from.1, granted, linked, wake_me };
        let deny = |sim: &mut Sim| {
            sim.dir.slot_mut(me).waiters.push(from);
            sim.send(at, from.0, key, SizeClass::LogN, reply(false, false, false));
        };
        if let Some(holder) = s.lock {
            if holder != from {
                deny(self);
                return Flow::Done;
            }
        } else if let Some(t2) = s.txn {
            let st = self.fail.txns[&t2].state;
            let contending = matches!(st, TxnState::Locking | TxnState::WaitingUp | TxnState::Waiting);
            if contending && from < me {
                // the lower id goes first; this slot backs off and waits
                self.abort_locks(t2);
                self.dir.slot_mut(me).lock = Some(from);
                let linked = self.linked(me, from);
                self.send(at, from.0, key, SizeClass::LogN, reply(true, linked, true));
                return Flow::Done;
            }
            deny(self);
            return Flow::Done;
        }
        self.dir.slot_mut(me).lock = Some(from);
        let linked = self.linked(me, from);
        self.send(at, from.0, key, SizeClass::LogN, reply(true, linked, false));
        Flow::Done
    }

    fn linked(&self, me: SlotRef, from: SlotRef) -> bool {
        let s = self.dir.slot(me);
        if me.1 > from.1 {
            s.on_path && s.down == Some(from.0)
        } else {
            s.on_path
        }
    }

    fn abort_locks(&mut self, id: TxnId) {
        let t = self.fail.txns[&id].clone();
        for (&(n, lv), _) in &t.grants {
            let from = if lv < t.lo { (t.leader, t.lo) } else { (t.leader, t.hi) };
            self.send(t.leader, n, t.key, SizeClass::LogN, Payload::Unlock { from, level: lv });
        }
        let tx = self.fail.txns.get_mut(&id).unwrap();
        tx.grants.clear();
        tx.state = TxnState::Waiting;
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn on_lock_reply(
        &mut self,
        at: NodeId,
        txn: TxnId,
        from: SlotRef,
        to: Level,
        granted: bool,
        linked: bool,
        wake_me: bool,
    ) -> Flow {
        let t = self.fail.txns[&txn].clone();
        if wake_me {
            self.dir.slot_mut((at, to)).waiters.push(from);
        }
        if t.state != TxnState::Locking || !t.needs.contains(&from) {
            if granted {
                self.send(at, from.0, t.key, SizeClass::LogN, Payload::Unlock { from: (at, to), level: from.1 });
            }
            return Flow::Done;
        }
        if !granted {
            self.abort_locks(txn);
            return Flow::Done;
        }
        self.fail.txns.get_mut(&txn).unwrap().grants.insert(from, linked);
        let t = self.fail.txns[&txn].clone();
        if t.grants.len() < t.needs.len() {
            return Flow::Done;
        }
        let sid = t.split;
        if t.grants.values().all(|&x| x) {
            self.fail.txns.get_mut(&txn).unwrap().state = TxnState::Notified;
            let lo_slot = self.dir.slot((t.leader, t.lo));
            let hi_slot = self.dir.slot((t.leader, t.hi));
            let info = PathInfo {
                lo: t.lo,
                hi: t.hi,
                up: if t.hi < self.hier.top { hi_slot.up } else { None },
                down: lo_slot.down.unwrap(),
                added_by: lo_slot.added_by.unwrap_or(t.leader),
                old: t.leader,
            };
            self.send_path_notice(sid, Some(txn), Some(info));
        } else {
            // the path moved away meanwhile; the split part is not on it
            self.abort_locks(txn);
            self.finish_txn(txn, "path moved before the update");
            self.fail.splits[sid].on_path = false;
            self.send_path_notice(sid, None, None);
        }
        Flow::Done
    }

    fn finish_txn(&mut self, txn: TxnId, outcome: &str) {
        let t = self.fail.txns[&txn].clone();
        self.fail.txns.get_mut(&txn).unwrap().state = TxnState::Done;
        let s = self.fail.splits[t.split].clone();
        for lv in t.lo..=t.hi {
            self.dir.slot_mut((t.leader, lv)).txn = None;
        }
        self.log.push(LogEvent::PathTxn {
            failure: s.failure,
            key: s.key,
            txn,
            lo: t.lo,
            hi: t.hi,
            old: t.leader,
            new: s.leader,
            outcome: outcome.into(),
            time: self.now(),
        });
        for lv in t.lo..=t.hi {
            self.wake_waiters((t.leader, lv), t.key);
        }
    }

    fn wake_waiters(&mut self, slot: SlotRef, key: CostKey) {
        let ws = std::mem::take(&mut self.dir.slot_mut(slot).waiters);
        for (n, lv) in ws {
            self.send(slot.0, n, key, SizeClass::LogN, Payload::Wake { level: lv });
        }
    }

    pub(crate) fn on_unlock(&mut self, at: NodeId, from: SlotRef, j: Level) -> Flow {
        if self.dir.slot((at, j)).lock == Some(from) {
            self.dir.slot_mut((at, j)).lock = None;
            let key = self.dir.slot((from.0, from.1)).txn.map(|t| self.fail.txns[&t].key);
            if let Some(key) = key {
                self.wake_waiters((at, j), key);
            } else {
                let ws = std::mem::take(&mut self.dir.slot_mut((at, j)).waiters);
                self.dir.slot_mut((at, j)).waiters = ws;
                self.wake_all_plain((at, j));
            }
        }
        Flow::Done
    }

    fn wake_all_plain(&mut self, slot: SlotRef) {
        let ws = std::mem::take(&mut self.dir.slot_mut(slot).waiters);
        for (n, lv) in ws {
            let key = self.dir.slot((n, lv)).txn.map(|t| self.fail.txns[&t].key).unwrap_or(CostKey::Setup);
            self.send(slot.0, n, key, SizeClass::LogN, Payload::Wake { level: lv });
        }
    }

    pub(crate) fn on_wake(&mut self, at: NodeId, lv: Level) -> Flow {
        if let Some(t) = self.dir.slot((at, lv)).txn {
            if self.fail.txns[&t].state == TxnState::Waiting {
                self.request_locks(t);
            }
        }
        Flow::Done
    }

    pub(crate) fn on_path_notice(&mut self, at: NodeId, txn: Option<TxnId>, sid: usize, path: Option<PathInfo>) -> Flow {
        let s = self.fail.splits[sid].clone();
        if at != s.leader {
            // weak mode: the child endpoint hands leadership to the nearest member
            let key = CostKey::Recluster { failure: s.failure, cluster: s.key };
            self.send(at, s.leader, key, SizeClass::NLogN, Payload::PathNotice { txn, split: sid, path });
            return Flow::Done;
        }
        let key = self.path_key(sid);
        let w = at;
        for lv in self.band_levels(s.level) {
            self.dir.slot_mut((w, lv)).pending = false;
        }
        if let (Some(txn), Some(p)) = (txn, path) {
            let epoch = self.epoch;
            for lv in p.lo..=p.hi {
                let sl = self.dir.slot_mut((w, lv));
                sl.on_path = true;
                sl.added_by = Some(p.added_by);
                sl.down = Some(if lv == p.lo { p.down } else { w });
                sl.up = if lv == p.hi { p.up } else { Some(w) };
                sl.down_epoch = epoch;
                sl.repaired = true;
                sl.replaced_by = None;
                sl.relinked_from = None;
            }
            if let Some(up) = p.up {
                let pl = Payload::Relink { txn, level: p.hi + 1, old: p.old, new: w, from_below: true };
                self.send(w, up, key, SizeClass::LogN, pl);
            }
            let pl = Payload::Relink { txn, level: p.lo - 1, old: p.old, new: w, from_below: false };
            self.send(w, p.down, key, SizeClass::LogN, pl);
            for lv in p.lo..=p.hi {
                self.sp_register(w, lv, key);
            }
        }
        if !s.no_bcast {
            let rkey = CostKey::Recluster { failure: s.failure, cluster: s.key };
            self.bcast_step(w, sid, rkey);
        }
        Flow::Done
    }

    pub(crate) fn on_relink(
        &mut self,
        at: NodeId,
        txn: TxnId,
        j: Level,
        old: NodeId,
        new: NodeId,
        from_below: bool,
    ) -> Flow {
        let epoch = self.epoch;
        let key = self.fail.txns[&txn].key;
        let s = self.dir.slot_mut((at, j));
        if from_below {
            if s.on_path && s.down == Some(old) {
                s.down = Some(new);
                s.down_epoch = epoch;
                s.repaired = true;
            }
        } else if s.on_path && (s.up == Some(old) || s.up.is_none()) {
            s.up = Some(new);
            s.relinked_from = Some(old);
        }
        if s.lock.map(|x| x.0) == Some(old) {
            s.lock = None;
            self.wake_waiters((at, j), key);
        }
        self.send(at, old, key, SizeClass::LogN, Payload::RelinkDone { txn });
        Flow::Done
    }

    pub(crate) fn on_relink_done(&mut self, at: NodeId, txn: TxnId) -> Flow {
        let tx = self.fail.txns.get_mut(&txn).unwrap();
        tx.relinks += 1;
        if tx.relinks < tx.needs.len() {
            return Flow::Done;
        }
        let t = tx.clone();
        let w = self.fail.splits[t.split].leader;
        for lv in t.lo..=t.hi {
            self.sp_unregister(at, lv, t.key);
            let s = self.dir.slot_mut((at, lv));
            s.on_path = false;
            s.up = None;
            s.down = None;
            s.added_by = None;
            s.replaced_by = Some(w);
        }
        self.finish_txn(txn, "replaced");
        Flow::Done
    }

    /// One step of the broadcast along the new cluster's tree: members
    /// refresh their neighborhoods, then the message moves to the children.
    fn bcast_step(&mut self, y: NodeId, sid: usize, key: CostKey) {
        let s = self.fail.splits[sid].clone();
        let base = s.level;
        let cl = self.hier.cluster(s.child).clone();
        if cl.members.contains(&y) {
            let c = self.hier.cluster_of(y, base);
            let l = self.hier.cluster(c).leader;
            self.leaders.learn(y, base, y, c, l);
            let r = alias_radius(&self.hier, base);
            let pkey = CostKey::Preprocessing { failure: s.failure, cluster: s.key };
            for z in 0..self.n() {
                if z != y && self.dist(y, z) <= r {
                    let p = Payload::Refresh { level: base, node: y, cluster: c, leader: l };
                    self.send(y, z, pkey, SizeClass::LogN, p);
                }
            }
        }
        if let Some(ch) = cl.tree.children().get(&y) {
            for &x in ch {
                self.send_path(&[y, x], key, SizeClass::LogN, Payload::TreeBcast { split: sid });
            }
        }
    }

    pub(crate) fn on_tree_bcast(&mut self, at: NodeId, sid: usize, key: CostKey) -> Flow {
        self.bcast_step(at, sid, key);
        Flow::Done
    }

    pub(crate) fn on_spt_notice(&mut self, at: NodeId, f: FailureId) -> Flow {
        let rec = &self.fail.records[f];
        if at != self.hier.root || rec.old_root_tree.is_none() || rec.root_checked {
            return Flow::Done;
        }
        if self.dir.slot((at, self.hier.top)).busy() {
            return Flow::Defer;
        }
        self.fail.records[f].root_checked = true;
        self.root_level_check(f);
        Flow::Done
    }

    fn root_level_check(&mut self, f: FailureId) {
        let rec = self.fail.records[f].clone();
        let old = rec.old_root_tree.unwrap();
        let e = rec.edge;
        let r = self.hier.root;
        let top = self.hier.top;
        let child = old.child_endpoint(e).unwrap();
        let mask = old.subtree(child);
        let v2: BTreeSet<NodeId> = (0..self.n()).filter(|&x| mask[x]).collect();
        let new = self.spts[r].clone();
        let x = (0..self.n()).max_by_key(|&x| (new.dist[x], std::cmp::Reverse(x))).unwrap();
        let dx = new.dist[x];
        let x_in_v2 = v2.contains(&x);
        let path = new.path_from_root(x);
        let mut crit: Option<(EdgeId, Weight)> = None;
        for win in path.windows(2) {
            if v2.contains(&win[0]) != v2.contains(&win[1]) {
                let ce = EdgeId::new(win[0], win[1]);
                let cw = self.g.weight(ce).unwrap();
                if crit.is_none_or(|(_, w)| cw > w) {
                    crit = Some((ce, cw));
                }
            }
        }
        let sigma = self.hier.sigma;
        let threshold = extension_threshold(sigma, self.hier.rho, top);
        let cw = crit.map(|c| c.1).unwrap_or(0);
        let triggered = x_in_v2 && crit.is_some() && q_u64(cw) > threshold;
        let h2 = minimal_top(sigma, self.hier.rho, dx);
        let extended = triggered && h2 > top;
        self.log.push(LogEvent::LayerExt {
            failure: f,
            old_top: top,
            new_top: if extended { h2 } else { top },
            farthest: x,
            farthest_dist: dx,
            critical_edge: crit.map(|c| c.0),
            critical_weight: cw,
            threshold: fmt_q(threshold),
            farthest_in_v2: x_in_v2,
            triggered,
            extended,
        });
        let top_c = self.hier.level_info(top).clusters[0];
        if !extended {
            self.hier.cluster_mut(top_c).tree = spt_as_tree(&new);
            return;
        }
        self.extend(f, old, child, v2, h2);
    }

    fn extend(&mut self, f: FailureId, old: ShortestPathTree, child: NodeId, v2: BTreeSet<NodeId>, h2: Level) {
        let r = self.hier.root;
        let top = self.hier.top;
        let top_c = self.hier.level_info(top).clusters[0];
        let tree = spt_as_tree(&old);
        let tree2 = tree.reroot(&v2, child);
        let mut tree1 = tree.clone();
        tree1.remove_subtree(child);
        self.hier.cluster_mut(top_c).tree = tree1;
        let c2 = self.hier.split_off(top_c, v2.clone(), child, tree2);
        let new_tree = spt_as_tree(&self.spts[r]);
        self.hier.extend_layers(h2, new_tree);
        let new_c = self.hier.level_info(h2).clusters[0];
        let v1: Vec<NodeId> = (0..self.n()).filter(|x| !v2.contains(x)).collect();
        let ext = self.fail.exts.len();
        self.fail.exts.push(LayerExtRecord {
            failure: f,
            old_top: top,
            new_top: h2,
            v1: v1.clone(),
            v2: v2.iter().copied().collect(),
            c1: top_c,
            c2,
            top_cluster: new_c,
        });

        let root_slot = self.dir.slot((r, top));
        let added_by = root_slot.added_by;
        let on_path = root_slot.on_path && added_by.is_some_and(|a| v2.contains(&a));
        let sid = self.fail.splits.len();
        self.fail.splits.push(SplitRecord {
            id: sid,
            failure: f,
            key: top_c,
            level: top,
            parent: top_c,
            child: c2,
            old_leader: r,
            leader: child,
            via: child,
            members: v2.iter().copied().collect(),
            edge: self.fail.records[f].edge,
            band: (top, h2 - 1),
            on_path,
            no_bcast: true,
        });
        self.log.push(LogEvent::Split {
            failure: f,
            key: top_c,
            split: sid,
            level: top,
            parent: top_c,
            child: c2,
            old_leader: r,
            leader: child,
            members: v2.iter().copied().collect(),
            edge: self.fail.records[f].edge,
            on_path,
        });
        for lv in top..h2 {
            *self.dir.slot_mut((child, lv)) = crate::directory::Slot { pending: true, ..Default::default() };
        }
        if root_slot.on_path {
            let epoch = self.epoch;
            for lv in top + 1..=h2 {
                let s = self.dir.slot_mut((r, lv));
                *s = crate::directory::Slot {
                    on_path: true,
                    added_by,
                    up: (lv < h2).then_some(r),
                    down: Some(r),
                    down_epoch: epoch,
                    repaired: true,
                    ..Default::default()
                };
            }
            self.dir.slot_mut((r, top)).up = Some(r);
        }
        let key = CostKey::Recluster { failure: f, cluster: top_c };
        self.layer_step(r, ext, key);
        if on_path {
            self.start_txn(sid);
        } else {
            self.send_path_notice(sid, None, None);
        }
    }

    fn layer_step(&mut self, y: NodeId, ext: usize, key: CostKey) {
        let x = self.fail.exts[ext].clone();
        let r = self.hier.root;
        let v2: BTreeSet<NodeId> = x.v2.iter().copied().collect();
        let c2_leader = self.hier.cluster(x.c2).leader;
        for z in 0..self.n() {
            let (c, l) = if v2.contains(&z) { (x.c2, c2_leader) } else { (x.c1, r) };
            self.leaders.set(y, x.old_top, z, c, l);
            self.leaders.set(y, x.new_top, z, x.top_cluster, r);
        }
        // special parents whose level moved with the new top
        let slots: Vec<Level> =
            self.dir.slots.iter().filter(|((n, _), s)| *n == y && s.on_path).map(|((_, l), _)| *l).collect();
        let pkey = CostKey::PathUpdate { failure: x.failure, cluster: x.c1 };
        for k in slots {
            if k >= self.hier.top {
                continue;
            }
            let at = self.hier.sp_level(k);
            let want = (self.hier.leader_of(y, at), at);
            if self.dir.slot((y, k)).sp_at != Some(want) {
                self.sp_unregister(y, k, pkey);
                self.sp_register(y, k, pkey);
            }
        }
        let tree = self.hier.cluster(x.top_cluster).tree.clone();
        if let Some(ch) = tree.children().get(&y) {
            for &c in ch {
                self.send_path(&[y, c], key, SizeClass::NLogN, Payload::LayerBcast { ext });
            }
        }
    }

    pub(crate) fn on_layer_bcast(&mut self, at: NodeId, ext: usize, key: CostKey) -> Flow {
        self.layer_step(at, ext, key);
        Flow::Done
    }
}
