mod common;

use std::collections::BTreeMap;

use common::*;
use glidesim::datacache::GeoPoint;
use glidesim::glidein::{
    compute_pressure, frontend_cycle, pilot_bootstrap, synthetic_slot_ad, Bootstrap, CeType,
    EntryPoint, FrontendParams, Pilot, PilotCounts, PilotId, PilotShape, PilotState,
};
use glidesim::matchlang::{evaluate, parse, symmetric_match, Ad, AdKind, Expr, Value};
use rand::Rng;

fn entry(name: &str, cpus: u32, gpus: u32, max_pilots: u32, max_idle: u32, req: &str) -> EntryPoint {
    EntryPoint {
        name: name.into(),
        site: format!("site_{name}"),
        ce_type: CeType::ArcCe,
        max_pilots,
        max_idle_pilots: max_idle,
        shape: PilotShape { cpus, gpus, ..PilotShape::default() },
        requirements: parse(req).unwrap(),
        geo: GeoPoint::new(0.0, 0.0),
        bootstrap_failure: 0.0,
        trusted: true,
        containers: true,
    }
}

fn job(cpus: i64, gpus: i64) -> Ad {
    Ad::new(AdKind::Job)
        .with_value("requestcpus", cpus)
        .with_value("requestgpus", gpus)
        .with_expr("requirements", "TARGET.cpus >= MY.requestcpus && TARGET.gpus >= MY.requestgpus")
        .unwrap()
}

/// Hand-applied pressure formula.
fn formula(m: u64, fraction: f64, min_idle: u64, c: PilotCounts, max_pilots: u64, max_idle: u64) -> u64 {
    let desired = if m == 0 { 0 } else { (m as f64 * fraction).ceil() as u64 + min_idle };
    let want = desired as i64 - c.idle as i64 - c.queued as i64;
    let cap = (max_pilots as i64 - c.alive as i64).min(max_idle as i64 - c.idle as i64 - c.queued as i64);
    want.clamp(0, cap.max(0)) as u64
}

#[test]
fn frontend_cycle_equals_per_entry_composition() {
    let mut r = rng(31);
    for case in 0..300 {
        let entries: Vec<EntryPoint> = (0..r.random_range(1..5))
            .map(|i| {
                let max = r.random_range(1..60);
                let req = ["true", "TARGET.requestgpus == 0", "TARGET.requestcpus <= 4"][r.random_range(0..3)];
                entry(&format!("e{i}"), r.random_range(1..9), r.random_range(0..2), max, r.random_range(0..=max), req)
            })
            .collect();
        let ads: Vec<Ad> = (0..r.random_range(0..5)).map(|_| job(r.random_range(1..9), r.random_range(0..2))).collect();
        let groups: Vec<(&Ad, u64)> = ads.iter().map(|a| (a, r.random_range(0..200))).collect();
        let fe = FrontendParams {
            fraction: r.random_range(0.1..1.5),
            min_idle: r.random_range(0..4),
            ..FrontendParams::default()
        };
        let mut counts = BTreeMap::new();
        for e in &entries {
            let alive = r.random_range(0..=e.max_pilots);
            let idle = r.random_range(0..=alive);
            let queued = r.random_range(0..=alive - idle);
            counts.insert(e.name.clone(), PilotCounts { idle, queued, alive });
        }
        let got = frontend_cycle(&entries, &fe, &groups, &counts, case);
        assert_eq!(got.len(), entries.len());
        for (e, req) in entries.iter().zip(&got) {
            let probe = synthetic_slot_ad(e, &fe, "probe");
            let m: u64 = groups
                .iter()
                .filter(|(j, _)| symmetric_match(j, &probe))
                .map(|(_, n)| n)
                .sum();
            let c = counts[&e.name];
            let want = formula(m, fe.fraction, fe.min_idle as u64, c, e.max_pilots as u64, e.max_idle_pilots as u64);
            assert_eq!(req.requested as u64, want, "case {case} entry {}", e.name);
            assert_eq!(*req, compute_pressure(e, &fe, &groups, c, case));
            // Never pushes an entry past either cap.
            assert!(c.alive + req.requested <= e.max_pilots);
            assert!(c.idle + c.queued + req.requested <= e.max_idle_pilots.max(c.idle + c.queued));
        }
    }
}

#[test]
fn pressure_capped_by_max_pilots() {
    let e = entry("e", 8, 0, 50, 50, "true");
    let j = job(1, 0);
    let req = compute_pressure(&e, &FrontendParams::default(), &[(&j, 100)], PilotCounts::default(), 0);
    assert_eq!(req.requested, 50);
}

#[test]
fn injected_attributes_are_a_subset_of_the_slot_ad() {
    let mut r = rng(32);
    for _ in 0..100 {
        let mut fe = FrontendParams::default();
        for i in 0..r.random_range(0..6) {
            let v = match r.random_range(0..4) {
                0 => Value::Boolean(r.random_bool(0.5)),
                1 => Value::Integer(r.random_range(-5..5)),
                2 => Value::Real(r.random_range(0.0..1.0)),
                _ => Value::Text(format!("v{i}")),
            };
            fe.attrs.push((format!("Attr{i}"), v));
        }
        let e = entry("e", 4, 0, 1, 1, "true");
        let mut p = Pilot::new(PilotId(9), "e", &e.site, 0);
        p.advance(PilotState::CeQueued, 0).unwrap();
        p.advance(PilotState::Bootstrapping, 10).unwrap();
        let Bootstrap::Advertised(slot) = pilot_bootstrap(&mut p, &e, &fe, 100, 0.5).unwrap() else {
            panic!("no failure configured");
        };
        for (k, v) in &fe.attrs {
            assert_eq!(slot.ad.get(k), Some(&Expr::Literal(v.clone())));
            assert_eq!(evaluate(&Expr::attr(glidesim::matchlang::Scope::Unscoped, k), &slot.ad, None), *v);
        }
        assert_eq!(slot.cpus(), 4);
        assert_eq!(slot.ad.text_attr("status"), Some("idle"));
    }
}
