//! Bound checks over a finished run's event log.
//!
//! Everything here is post-processing: the log carries the hierarchy
//! constants, path snapshots with link distances, per-level query costs and
//! every delivered hop, so a report can be recomputed from the JSON lines
//! alone. Operations that overlapped a failure are listed as transient and
//! kept out of the normal-operation inequalities.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::exact::{fmt_q, pow, q_u64, to_f64, Q};
use crate::failure::{extension_threshold, minimal_top};
use crate::graph::{NodeId, Weight};
use crate::message::{CostKey, FailureId, MsgId, OpId, SizeClass, Time};
use crate::partition::{verify_partition, ClusterId, Level, Mode};
use crate::sim::{CostLedger, LogEvent, OpKind, PathEntry, Sim};

/// Recluster messages per affected cluster are at most `a·n`.
pub const RECLUSTER_A: u64 = 2;
/// Path-update messages per affected cluster are at most `b`.
pub const PATH_UPDATE_B: u64 = 24;
const MAX_DETAILS: usize = 20;

/// The inequality behind a formula id.
pub fn formula(id: &str) -> &'static str {
    match id {
        "publish-length" => "len(φ) ≤ σ(ρ+1)(ρ^{h+1}−1)/((ρ−1)ρ)",
        "publish-length-post" => "len(φ) ≤ 2σ(ρ+1)(ρ^{h'+1}−1)/((ρ−1)ρ)",
        "pair-distance" => "d(φ_i, φ_{i−1}) ≤ σ(r_{i−1}+r_i) + r_i",
        "pair-distance-post" => "d(φ_i, φ_{i−1}) ≤ 2σ(r_{i−1}+r_i) + r_i",
        "lookup-level" => "query cost at level i ≤ I(1+σ)r_i",
        "lookup-level-post" => "query cost at level i ≤ (I+f)(1+2σ)r_i strong, (f+1)I(1+2σ)r_i weak",
        "lookup-total" => "cost ≤ Σ_{l≤i'} 2·q_l + σ'r_{i'} + len_{i'}(φ) + d(u, owner)",
        "move-ratio" => "C(S)/C*(S) ≤ 2c₄(h+1)ρσ(σ+I), c₄ = 7 + 2ρc'",
        "move-ratio-post" => "C(S)/C*(S) ≤ 2c₄(h'+1)ρσ'(σ'+I+f) strong, 2c₄(h'+1)ρσ'(σ'+(f+1)I) weak, σ' = 2σ",
        "split-count" => "splits per failure ≤ h strong, ≤ I·h weak",
        "descendants" => "clusters descending from one original cluster ≤ f+1",
        "recluster-messages" => "recluster messages per cluster ≤ a·n",
        "recluster-transfer" => "n·log n messages per cluster ≤ 1 weak, 0 strong, each ≤ σr_i",
        "layer-broadcast" => "layer broadcast n·log n messages ≤ n",
        "path-update-messages" => "path update messages per cluster ≤ b",
        "path-update-distance" => "each path update message travels ≤ D'",
        "preprocessing-messages" => "refresh messages per cluster ≤ n²",
        "preprocessing-distance" => "each refresh message travels ≤ r_i",
        "layer-extension-rule" => "extend iff x ∈ V2 and w(e*) > σρ^{h+1} − 4σρ^h, with minimal h'",
        "spt-repair" => "every repaired tree equals a fresh shortest path tree",
        "cluster-diameter" => "cluster diameter ≤ σr_i, after failures ≤ 2σr_i",
        "path-intact" => "quiescent path is one chain from the top level to the owner",
        "completion" => "every issued operation completes",
        "lookup-consistency" => "a lookup returns a version its owner held during the lookup",
        "version-order" => "token versions are installed in order, one holder at a time",
        "fifo" => "per directed edge, arrival order equals departure order",
        "cost-conservation" => "ledger cost per key equals the sum of its delivered hop weights",
        _ => "",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detail {
    pub subject: String,
    pub lhs: String,
    pub rhs: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: String,
    pub formula: String,
    pub evaluated: usize,
    pub failed: usize,
    /// Largest lhs/rhs seen.
    pub worst: Option<Detail>,
    pub worst_ratio: f64,
    pub failures: Vec<Detail>,
}

impl Check {
    fn new(id: &str) -> Self {
        Check {
            id: id.into(),
            formula: formula(id).into(),
            evaluated: 0,
            failed: 0,
            worst: None,
            worst_ratio: -1.0,
            failures: Vec::new(),
        }
    }

    pub fn pass(&self) -> bool {
        self.failed == 0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransientOp {
    pub op: OpId,
    pub kind: OpKind,
    pub cost: Weight,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Constants {
    pub n: usize,
    pub mode: Option<Mode>,
    pub rho: u64,
    pub h: Level,
    pub final_top: Level,
    pub sigma: String,
    pub intersect: usize,
    pub c_prime: u64,
    pub c4: u64,
    pub a: u64,
    pub b: u64,
    pub failures: usize,
    pub diameter: Weight,
    pub diameter_after: Weight,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Summary {
    pub lookups: usize,
    pub normal_lookups: usize,
    pub lookup_ratio_mean: Option<f64>,
    pub lookup_ratio_max: Option<f64>,
    pub moves: usize,
    pub normal_moves: usize,
    pub move_ratio: Option<f64>,
    pub move_ratio_post: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BoundReport {
    pub constants: Constants,
    pub checks: Vec<Check>,
    pub transient: Vec<TransientOp>,
    pub summary: Summary,
    /// Things the log did not let us evaluate.
    pub notes: Vec<String>,
}

impl BoundReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(Check::pass)
    }

    pub fn check(&self, id: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.id == id)
    }

    pub fn failed_ids(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.pass()).map(|c| c.id.as_str()).collect()
    }

    fn entry(&mut self, id: &str) -> &mut Check {
        if let Some(i) = self.checks.iter().position(|c| c.id == id) {
            &mut self.checks[i]
        } else {
            self.checks.push(Check::new(id));
            self.checks.last_mut().unwrap()
        }
    }

    /// Records `lhs ≤ rhs`.
    fn le(&mut self, id: &str, subject: impl Into<String>, lhs: Q, rhs: Q) {
        let ok = lhs <= rhs;
        let ratio = if rhs > Q::from_integer(0) { to_f64(lhs / rhs) } else if ok { 0.0 } else { f64::INFINITY };
        self.record(id, subject.into(), fmt_q(lhs), fmt_q(rhs), ok, ratio);
    }

    /// Records a yes/no property.
    fn holds(&mut self, id: &str, subject: impl Into<String>, ok: bool, what: impl Into<String>) {
        self.record(id, subject.into(), what.into(), "holds".into(), ok, if ok { 0.0 } else { 1.0 });
    }

    fn record(&mut self, id: &str, subject: String, lhs: String, rhs: String, ok: bool, ratio: f64) {
        let c = self.entry(id);
        c.evaluated += 1;
        let d = Detail { subject, lhs, rhs };
        if ratio > c.worst_ratio {
            c.worst_ratio = ratio;
            c.worst = Some(d.clone());
        }
        if !ok {
            c.failed += 1;
            if c.failures.len() < MAX_DETAILS {
                c.failures.push(d);
            }
        }
    }

    /// Human-readable one line per check.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let k = &self.constants;
        s.push_str(&format!(
            "n={} mode={:?} rho={} h={} top={} sigma={} I={} c'={} c4={} f={} D={} D'={}\n",
            k.n,
            k.mode.unwrap_or(Mode::Strong),
            k.rho,
            k.h,
            k.final_top,
            k.sigma,
            k.intersect,
            k.c_prime,
            k.c4,
            k.failures,
            k.diameter,
            k.diameter_after
        ));
        for c in &self.checks {
            let status = if c.pass() { "PASS" } else { "FAIL" };
            s.push_str(&format!("{status} {:<24} {:>6} evaluated {:>4} failed", c.id, c.evaluated, c.failed));
            if let Some(w) = &c.worst {
                s.push_str(&format!("  worst {}: {} vs {}", w.subject, w.lhs, w.rhs));
            }
            s.push('\n');
            for f in &c.failures {
                s.push_str(&format!("     {}: {} > {}\n", f.subject, f.lhs, f.rhs));
            }
        }
        s.push_str(&format!("transient operations: {}\n", self.transient.len()));
        for n in &self.notes {
            s.push_str(&format!("note: {n}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, Default)]
struct OpInfo {
    kind: Option<OpKind>,
    node: NodeId,
    issued: Option<Time>,
    opt_dist: Option<Weight>,
    completed: Option<Time>,
    cost: Weight,
    version: Option<u64>,
    owner: Option<NodeId>,
    owner_dist: Option<Weight>,
    transient: bool,
    reasons: Vec<String>,
    levels: Vec<(Level, u32, Weight)>,
    found: Option<Level>,
    /// Failures applied before the issue, in log order.
    epoch: usize,
}

struct Snapshot<'a> {
    time: Time,
    after_op: Option<OpId>,
    epoch: usize,
    path: &'a [PathEntry],
}

/// Hierarchy constants read back from the setup event.
#[derive(Debug, Clone)]
struct Params {
    n: usize,
    diameter: Weight,
    h: Level,
    rho: u64,
    mode: Mode,
    sigma: Q,
    intersect: usize,
    c_prime: u64,
}

impl Params {
    fn r(&self, i: Level) -> Q {
        if i < 0 {
            return Q::from_integer(0);
        }
        let p = pow(q_u64(self.rho), i as u32);
        if i <= self.h {
            p.min(q_u64(self.diameter))
        } else {
            p
        }
    }

    fn per_level(&self, i: Level, f: usize) -> Q {
        let s = self.sigma;
        let one = Q::from_integer(1);
        let ii = Q::from_integer(self.intersect as i128);
        let ff = Q::from_integer(f as i128);
        if f == 0 {
            return ii * (one + s) * self.r(i);
        }
        let two_s = Q::from_integer(2) * s;
        match self.mode {
            Mode::Strong => (ii + ff) * (one + two_s) * self.r(i),
            Mode::Weak => (ff + one) * ii * (one + two_s) * self.r(i),
        }
    }

    fn c4(&self) -> u64 {
        7 + 2 * self.rho * self.c_prime
    }
}

/// Evaluates every log-derived check. Pass the ledger to also check cost
/// conservation.
pub fn check_bounds(events: &[LogEvent], ledger: Option<&CostLedger>) -> BoundReport {
    let mut rep = BoundReport::default();
    let Some(p) = events.iter().find_map(|e| match e {
        LogEvent::Setup { n, diameter, h, rho, mode, sigma, intersect, c_prime, .. } => Some(Params {
            n: *n,
            diameter: *diameter,
            h: *h,
            rho: *rho,
            mode: *mode,
            sigma: sigma.parse().unwrap_or(Q::from_integer(1)),
            intersect: *intersect,
            c_prime: *c_prime,
        }),
        _ => None,
    }) else {
        rep.notes.push("log has no setup event".into());
        rep.holds("completion", "log", false, "missing setup event");
        return rep;
    };

    // gather
    let mut ops: BTreeMap<OpId, OpInfo> = BTreeMap::new();
    let mut failures: Vec<(FailureId, Time)> = Vec::new();
    let mut diameter_after = p.diameter;
    let mut snaps = Vec::new();
    let mut installs: Vec<(NodeId, u64, Time)> = Vec::new();
    let mut releases: BTreeMap<(NodeId, u64), Time> = BTreeMap::new();
    let mut hops_by_msg: BTreeMap<MsgId, Weight> = BTreeMap::new();
    let mut key_of: BTreeMap<MsgId, CostKey> = BTreeMap::new();
    let mut edge_order: BTreeMap<(NodeId, NodeId), Vec<(Time, Time, Weight, MsgId)>> = BTreeMap::new();
    let mut top = p.h;
    for e in events {
        match e {
            LogEvent::OpIssued { op, kind, node, time, opt_dist, .. } => {
                let o = ops.entry(*op).or_default();
                o.kind = Some(*kind);
                o.node = *node;
                o.issued = Some(*time);
                o.opt_dist = *opt_dist;
                o.epoch = failures.len();
            }
            LogEvent::OpLevel { op, level, queries, query_cost } => {
                ops.entry(*op).or_default().levels.push((*level, *queries, *query_cost));
            }
            LogEvent::OpFound { op, level, .. } => {
                let o = ops.entry(*op).or_default();
                o.found = Some(o.found.map_or(*level, |f: Level| f.max(*level)));
            }
            LogEvent::OpComplete { op, kind, node, time, cost, version, owner, owner_dist, transient, reasons } => {
                let o = ops.entry(*op).or_default();
                o.kind = Some(*kind);
                o.node = *node;
                o.completed = Some(*time);
                o.cost = *cost;
                o.version = *version;
                o.owner = *owner;
                o.owner_dist = *owner_dist;
                o.transient = *transient;
                o.reasons = reasons.clone();
            }
            LogEvent::Failure { failure, time, .. } => failures.push((*failure, *time)),
            LogEvent::SptCheck { failure, all_match, diameter, .. } => {
                rep.holds("spt-repair", format!("failure {failure}"), *all_match, "repaired trees match");
                diameter_after = diameter_after.max(*diameter);
            }
            LogEvent::LayerExt { extended, new_top, .. } => {
                if *extended {
                    top = *new_top;
                }
            }
            LogEvent::PathSnapshot { time, after_op, epoch, path } => {
                snaps.push(Snapshot { time: *time, after_op: *after_op, epoch: *epoch, path });
            }
            LogEvent::TokenInstalled { node, version, time, .. } => installs.push((*node, *version, *time)),
            LogEvent::TokenReleased { node, version, time } => {
                releases.insert((*node, *version), *time);
            }
            LogEvent::Hop { msg, from, to, depart, arrive, weight, .. } => {
                *hops_by_msg.entry(*msg).or_default() += weight;
                edge_order.entry((*from, *to)).or_default().push((*depart, *arrive, *weight, *msg));
            }
            LogEvent::MsgDone { msg, key, .. } => {
                key_of.insert(*msg, *key);
            }
            _ => {}
        }
    }
    let f_total = failures.len();
    rep.constants = Constants {
        n: p.n,
        mode: Some(p.mode),
        rho: p.rho,
        h: p.h,
        final_top: top,
        sigma: fmt_q(p.sigma),
        intersect: p.intersect,
        c_prime: p.c_prime,
        c4: p.c4(),
        a: RECLUSTER_A,
        b: PATH_UPDATE_B,
        failures: f_total,
        diameter: p.diameter,
        diameter_after,
    };

    // completion and transient classification
    for (&id, o) in &ops {
        let done = o.completed.is_some();
        rep.holds("completion", format!("op {id}"), done, if done { "completed" } else { "never completed" });
        let overlapped = match (o.issued, o.completed) {
            (Some(a), Some(b)) => failures.iter().any(|(_, t)| a <= *t && *t <= b),
            _ => false,
        };
        if o.transient || overlapped {
            let mut reasons = o.reasons.clone();
            if overlapped && reasons.is_empty() {
                reasons.push("failure during operation".into());
            }
            rep.transient.push(TransientOp { op: id, kind: o.kind.unwrap_or(OpKind::Lookup), cost: o.cost, reasons });
        }
    }
    let transient: BTreeSet<OpId> = rep.transient.iter().map(|t| t.op).collect();
    let normal = |id: &OpId| !transient.contains(id);

    check_paths(&mut rep, &p, &ops, &snaps);
    check_lookups(&mut rep, &p, &ops, &snaps, &normal);
    check_moves(&mut rep, &p, &ops, &normal, top, f_total);
    check_tokens(&mut rep, &ops, &installs, &releases);
    check_repairs(&mut rep, &p, events, ledger, f_total, diameter_after);

    // fifo per directed edge, in arrival (log) order
    for ((a, b), hops) in &edge_order {
        let ok = hops.windows(2).all(|w| w[0].0 <= w[1].0) && hops.iter().all(|h| h.1 == h.0 + h.2);
        rep.holds("fifo", format!("edge {a}->{b}"), ok, format!("{} hops", hops.len()));
    }
    if let Some(ledger) = ledger {
        let mut by_key: BTreeMap<CostKey, Weight> = BTreeMap::new();
        let mut unattributed = 0;
        for (msg, w) in &hops_by_msg {
            match key_of.get(msg) {
                Some(k) => *by_key.entry(*k).or_default() += w,
                None => unattributed += w,
            }
        }
        for (k, e) in &ledger.entries {
            if *k == CostKey::Setup {
                continue;
            }
            let hops = by_key.get(k).copied().unwrap_or(0);
            rep.le("cost-conservation", format!("{k} ledger vs hops"), q_u64(e.weighted_cost), q_u64(hops));
            rep.le("cost-conservation", format!("{k} hops vs ledger"), q_u64(hops), q_u64(e.weighted_cost));
        }
        rep.le("cost-conservation", "hops of undelivered messages", q_u64(unattributed), Q::from_integer(0));
    }
    rep.summary.lookups = ops.values().filter(|o| o.kind == Some(OpKind::Lookup)).count();
    rep.summary.moves = ops.values().filter(|o| o.kind == Some(OpKind::Move)).count();
    rep
}

fn check_paths(
    rep: &mut BoundReport,
    p: &Params,
    ops: &BTreeMap<OpId, OpInfo>,
    snaps: &[Snapshot<'_>],
) {
    let two = Q::from_integer(2);
    let rho = q_u64(p.rho);
    let one = Q::from_integer(1);
    for s in snaps {
        let len: Weight = s.path.iter().map(|e| e.gap).sum();
        let is_publish = s.after_op.is_some_and(|o| ops.get(&o).and_then(|x| x.kind) == Some(OpKind::Publish));
        if is_publish {
            let h = s.path.first().map(|e| e.level).unwrap_or(p.h);
            let geo = (pow(rho, (h + 1) as u32) - one) / ((rho - one) * rho);
            if s.epoch == 0 {
                rep.le("publish-length", "publish", q_u64(len), p.sigma * (rho + one) * geo);
            } else {
                rep.le("publish-length-post", "publish", q_u64(len), two * p.sigma * (rho + one) * geo);
            }
        }
        for e in s.path.iter().filter(|e| e.level >= 0) {
            let i = e.level;
            let subject = format!("snapshot t={} level {} node {}", s.time, i, e.node);
            // links from before the latest failure or rebuilt by a repair are not bounded
            if e.repaired || e.down_epoch != s.epoch {
                continue;
            }
            let base = p.r(i - 1) + p.r(i);
            if s.epoch == 0 {
                rep.le("pair-distance", subject, q_u64(e.gap), p.sigma * base + p.r(i));
            } else {
                rep.le("pair-distance-post", subject, q_u64(e.gap), two * p.sigma * base + p.r(i));
            }
        }
    }
}

fn latest_snapshot<'a>(snaps: &'a [Snapshot<'a>], t: Time) -> Option<&'a Snapshot<'a>> {
    snaps.iter().rev().find(|s| s.time <= t)
}

fn check_lookups(
    rep: &mut BoundReport,
    p: &Params,
    ops: &BTreeMap<OpId, OpInfo>,
    snaps: &[Snapshot<'_>],
    normal: &dyn Fn(&OpId) -> bool,
) {
    let mut ratios = Vec::new();
    let mut normal_count = 0;
    for (id, o) in ops.iter().filter(|(_, o)| o.kind == Some(OpKind::Lookup)) {
        if !normal(id) || o.completed.is_none() {
            continue;
        }
        normal_count += 1;
        let f = o.epoch;
        let level_id = if f == 0 { "lookup-level" } else { "lookup-level-post" };
        for &(i, _, cost) in &o.levels {
            rep.le(level_id, format!("op {id} level {i}"), q_u64(cost), p.per_level(i, f));
        }
        let d = o.owner_dist.unwrap_or(0);
        if d > 0 {
            ratios.push(o.cost as f64 / d as f64);
        }
        let Some(found) = o.found else { continue };
        let Some(snap) = latest_snapshot(snaps, o.issued.unwrap_or(0)) else {
            rep.notes.push(format!("op {id}: no path snapshot before issue, total bound not evaluated"));
            continue;
        };
        let sigma = if f == 0 { p.sigma } else { Q::from_integer(2) * p.sigma };
        let queries: Q = (0..=found).map(|l| Q::from_integer(2) * p.per_level(l, f)).sum();
        let walk: Weight = snap.path.iter().filter(|e| e.level <= found).map(|e| e.gap).sum();
        let bound = queries + sigma * p.r(found) + q_u64(walk) + q_u64(d);
        rep.le("lookup-total", format!("op {id} found at level {found}"), q_u64(o.cost), bound);
    }
    rep.summary.normal_lookups = normal_count;
    if !ratios.is_empty() {
        rep.summary.lookup_ratio_mean = Some(ratios.iter().sum::<f64>() / ratios.len() as f64);
        rep.summary.lookup_ratio_max = ratios.iter().cloned().reduce(f64::max);
    }
}

fn check_moves(
    rep: &mut BoundReport,
    p: &Params,
    ops: &BTreeMap<OpId, OpInfo>,
    normal: &dyn Fn(&OpId) -> bool,
    final_top: Level,
    f_total: usize,
) {
    let (mut c_pre, mut opt_pre, mut c_post, mut opt_post, mut count) = (0u64, 0u64, 0u64, 0u64, 0);
    for (id, o) in ops.iter().filter(|(_, o)| o.kind == Some(OpKind::Move)) {
        if !normal(id) || o.completed.is_none() {
            continue;
        }
        count += 1;
        let opt = o.opt_dist.unwrap_or(0);
        if o.epoch == 0 {
            c_pre += o.cost;
            opt_pre += opt;
        } else {
            c_post += o.cost;
            opt_post += opt;
        }
    }
    rep.summary.normal_moves = count;
    let c4 = q_u64(p.c4());
    let rho = q_u64(p.rho);
    let two = Q::from_integer(2);
    let ii = Q::from_integer(p.intersect as i128);
    if opt_pre > 0 {
        let ratio = q_u64(c_pre) / q_u64(opt_pre);
        rep.summary.move_ratio = Some(to_f64(ratio));
        let bound = two * c4 * Q::from_integer(p.h as i128 + 1) * rho * p.sigma * (p.sigma + ii);
        rep.le("move-ratio", format!("{c_pre}/{opt_pre}"), ratio, bound);
    }
    if opt_post > 0 {
        let ratio = q_u64(c_post) / q_u64(opt_post);
        rep.summary.move_ratio_post = Some(to_f64(ratio));
        let s2 = two * p.sigma;
        let ff = Q::from_integer(f_total as i128);
        let inner = match p.mode {
            Mode::Strong => s2 + ii + ff,
            Mode::Weak => s2 + (ff + Q::from_integer(1)) * ii,
        };
        let bound = two * c4 * Q::from_integer(final_top as i128 + 1) * rho * s2 * inner;
        rep.le("move-ratio-post", format!("{c_post}/{opt_post}"), ratio, bound);
    }
}

fn check_tokens(
    rep: &mut BoundReport,
    ops: &BTreeMap<OpId, OpInfo>,
    installs: &[(NodeId, u64, Time)],
    releases: &BTreeMap<(NodeId, u64), Time>,
) {
    // versions in order, each held until the next one is installed
    for w in installs.windows(2) {
        let (n0, v0, _) = w[0];
        let (n1, v1, t1) = w[1];
        let released = releases.get(&(n0, v0)).copied();
        let ok = v1 == v0 + 1 && released.is_some_and(|r| r <= t1);
        rep.holds("version-order", format!("version {v1} at node {n1}"), ok, format!("after version {v0} at {n0}"));
    }
    for (id, o) in ops.iter().filter(|(_, o)| o.kind == Some(OpKind::Lookup)) {
        let (Some(issued), Some(done)) = (o.issued, o.completed) else { continue };
        let (Some(v), Some(owner)) = (o.version, o.owner) else {
            rep.holds("lookup-consistency", format!("op {id}"), false, "no version returned");
            continue;
        };
        let held = installs.iter().find(|(n, ver, _)| *n == owner && *ver == v);
        let ok = match held {
            Some(&(_, _, t_in)) => {
                let t_out = releases.get(&(owner, v)).copied().unwrap_or(Time::MAX);
                t_in <= done && t_out >= issued
            }
            None => false,
        };
        rep.holds("lookup-consistency", format!("op {id}"), ok, format!("version {v} at node {owner}"));
    }
}

/// Level and alias radius of every cluster key used by repair costs.
fn key_levels(events: &[LogEvent]) -> BTreeMap<(FailureId, ClusterId), Level> {
    let mut m = BTreeMap::new();
    for e in events {
        match e {
            LogEvent::Split { failure, key, level, .. } => {
                m.insert((*failure, *key), *level);
            }
            LogEvent::NoSplit { failure, cluster, level, .. } => {
                m.entry((*failure, *cluster)).or_insert(*level);
            }
            _ => {}
        }
    }
    m
}

fn check_repairs(
    rep: &mut BoundReport,
    p: &Params,
    events: &[LogEvent],
    ledger: Option<&CostLedger>,
    f_total: usize,
    d_after: Weight,
) {
    let levels = key_levels(events);
    let mut extended: BTreeMap<FailureId, (Level, Level)> = BTreeMap::new();
    let mut top = p.h;
    let mut top_at: BTreeMap<FailureId, Level> = BTreeMap::new();
    let mut parent: BTreeMap<ClusterId, ClusterId> = BTreeMap::new();
    let mut splits_per_failure: BTreeMap<FailureId, usize> = BTreeMap::new();
    for e in events {
        match e {
            LogEvent::Failure { failure, .. } => {
                top_at.insert(*failure, top);
                splits_per_failure.entry(*failure).or_default();
            }
            LogEvent::LayerExt {
                failure,
                old_top,
                new_top,
                farthest_dist,
                critical_edge,
                critical_weight,
                farthest_in_v2,
                triggered,
                extended: ext,
                ..
            } => {
                let thr = extension_threshold(p.sigma, p.rho, *old_top);
                let expect = *farthest_in_v2 && critical_edge.is_some() && q_u64(*critical_weight) > thr;
                let minimal = minimal_top(p.sigma, p.rho, *farthest_dist);
                let expect_ext = expect && minimal > *old_top;
                let ok = expect == *triggered
                    && expect_ext == *ext
                    && (if *ext { *new_top == minimal } else { new_top == old_top });
                rep.holds(
                    "layer-extension-rule",
                    format!("failure {failure}"),
                    ok,
                    format!("w(e*)={critical_weight} threshold={} h'={new_top} minimal={minimal}", fmt_q(thr)),
                );
                if *ext {
                    extended.insert(*failure, (*old_top, *new_top));
                    top = *new_top;
                }
            }
            LogEvent::Split { failure, level, parent: par, child, .. } => {
                parent.insert(*child, *par);
                let t = top_at.get(failure).copied().unwrap_or(p.h);
                if *level < t {
                    *splits_per_failure.entry(*failure).or_default() += 1;
                }
            }
            _ => {}
        }
    }
    for (f, count) in &splits_per_failure {
        let h = top_at.get(f).copied().unwrap_or(p.h);
        let bound = match p.mode {
            Mode::Strong => h as i128,
            Mode::Weak => p.intersect as i128 * h as i128,
        };
        rep.le("split-count", format!("failure {f}"), Q::from_integer(*count as i128), Q::from_integer(bound));
    }
    // families of original clusters
    let mut family: BTreeMap<ClusterId, usize> = BTreeMap::new();
    for &c in parent.keys() {
        let mut r = c;
        while let Some(&q) = parent.get(&r) {
            r = q;
        }
        *family.entry(r).or_insert(1) += 1;
    }
    for (c, size) in family {
        rep.le(
            "descendants",
            format!("cluster {c}"),
            Q::from_integer(size as i128),
            Q::from_integer(f_total as i128 + 1),
        );
    }

    let Some(ledger) = ledger else {
        rep.notes.push("no ledger; repair cost shapes not evaluated".into());
        return;
    };
    let n = p.n as u64;
    // refreshes reach as far as the highest level that copies the cluster's level
    let alias_r = |level: Level| -> Q {
        extended.values().filter(|(old, _)| *old == level).map(|(_, new)| p.r(new - 1)).fold(p.r(level), Q::max)
    };
    let disturbed: u64 = ledger
        .entries
        .iter()
        .filter(|(k, _)| !matches!(k, CostKey::Op { .. } | CostKey::Setup))
        .map(|(_, e)| e.disturbed)
        .sum();
    if disturbed > 0 {
        rep.notes.push(format!(
            "{disturbed} repair messages were rerouted or resent after a later failure; their distances are not bounded"
        ));
    }
    for (k, e) in &ledger.entries {
        match *k {
            CostKey::Recluster { failure, cluster } => {
                let subject = format!("{k}");
                let layer = extended.contains_key(&failure)
                    && levels.get(&(failure, cluster)).copied() == extended.get(&failure).map(|x| x.0);
                if layer {
                    rep.le("layer-broadcast", subject, q_u64(e.nlogn_messages), q_u64(n));
                    continue;
                }
                rep.le("recluster-messages", subject.clone(), q_u64(e.messages), q_u64(RECLUSTER_A * n));
                let allowed = if p.mode == Mode::Weak { 1 } else { 0 };
                rep.le("recluster-transfer", format!("{subject} count"), q_u64(e.nlogn_messages), q_u64(allowed));
                if e.nlogn_messages > 0 {
                    let level = levels.get(&(failure, cluster)).copied().unwrap_or(0);
                    let bound = p.sigma * p.r(level);
                    rep.le("recluster-transfer", format!("{subject} distance"), q_u64(e.max_nlogn_cost), bound);
                }
            }
            CostKey::PathUpdate { .. } => {
                rep.le("path-update-messages", format!("{k}"), q_u64(e.messages), q_u64(PATH_UPDATE_B));
                rep.le("path-update-distance", format!("{k}"), q_u64(e.max_msg_cost), q_u64(d_after));
                if e.max_size.is_some_and(|s| s > SizeClass::LogN) {
                    rep.holds("path-update-messages", format!("{k} size"), false, "message larger than log n");
                }
            }
            CostKey::Preprocessing { failure, cluster } => {
                let level = levels.get(&(failure, cluster)).copied().unwrap_or(0);
                rep.le("preprocessing-messages", format!("{k}"), q_u64(e.messages), q_u64(n * n));
                rep.le("preprocessing-distance", format!("{k}"), q_u64(e.max_msg_cost), alias_r(level));
            }
            _ => {}
        }
    }
}

/// Checks that need the final simulator state rather than the log.
pub fn check_structure(sim: &Sim, rep: &mut BoundReport) {
    let post = sim.epoch > 0;
    let pr = verify_partition(&sim.hier, &sim.g, post);
    for l in &pr.levels {
        rep.holds(
            "cluster-diameter",
            format!("level {}", l.level),
            l.diameter_ok && l.partition_ok,
            format!("max diameter {:?} bound {}", l.max_diameter, l.diameter_bound),
        );
    }
    match sim.path_view() {
        Ok(path) => rep.holds("path-intact", "final", true, format!("{} entries", path.len())),
        Err(e) => rep.holds("path-intact", "final", false, e.to_string()),
    }
}
