use ftdir_core::partition::Mode;
use ftdir_core::scenario::{generate_scenario, run_scenario, GenParams, GraphKind};

#[test]
fn generated_runs_complete() {
    let mut bad = Vec::new();
    for seed in 0..40u64 {
        for mode in [Mode::Strong, Mode::Weak] {
            for (kind, seq) in [(GraphKind::Ring, true), (GraphKind::Random, true), (GraphKind::Grid, false), (GraphKind::Random, false)] {
                let p = GenParams { mode, sequential: seq, failures: if kind == GraphKind::Ring { (seed % 2) as usize } else { (seed % 4) as usize }, ..Default::default() };
                let sc = generate_scenario(kind, &p, seed).unwrap();
                let out = run_scenario(&sc).unwrap();
                if !out.all_completed() || out.path.is_err() {
                    bad.push(format!("{} {:?} seq={} -> done={} path={:?}", sc.name, mode, seq, out.all_completed(), out.path.as_ref().err()));
                }
            }
        }
    }
    for b in &bad { eprintln!("{b}"); }
    assert!(bad.is_empty(), "{} bad runs", bad.len());
}

#[test]
fn bounds_over_corpus() {
    use ftdir_core::metrics::{check_bounds, check_structure};
    use std::collections::BTreeMap;
    let mut fails: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for seed in 0..40u64 {
        for mode in [Mode::Strong, Mode::Weak] {
            for (kind, seq) in [(GraphKind::Ring, true), (GraphKind::Random, true), (GraphKind::Grid, true), (GraphKind::Random, false)] {
                let f = if kind == GraphKind::Ring { (seed % 2) as usize } else { (seed % 4) as usize };
                let p = GenParams { mode, sequential: seq, failures: f, ..Default::default() };
                let sc = generate_scenario(kind, &p, seed).unwrap();
                let out = run_scenario(&sc).unwrap();
                let mut rep = check_bounds(&out.sim.log.events, Some(&out.sim.ledger));
                check_structure(&out.sim, &mut rep);
                for c in rep.checks.iter().filter(|c| !c.pass()) {
                    let w = c.failures.first().map(|d| format!("{}: {} vs {}", d.subject, d.lhs, d.rhs)).unwrap_or_default();
                    fails.entry(c.id.clone()).or_default().push(format!("{} {:?} seq={seq}: {w}", sc.name, mode));
                }
            }
        }
    }
    for (k, v) in &fails {
        eprintln!("{k}: {} runs", v.len());
        for x in v.iter().take(4) { eprintln!("    {x}"); }
    }
    assert!(fails.is_empty());
}
