mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use glidesim::matchlang::{evaluate, Ad, AdKind};
use glidesim::pool::{
    decay_user_priority, negotiate, ClusterId, CollectorState, JobId, JobState, PriorityConfig,
    UserRecord,
};
use glidesim::time::SimDuration;
use rand::Rng;

#[test]
fn expire_equals_threshold_filter() {
    let mut r = rng(21);
    for _ in 0..200 {
        let interval = r.random_range(1..600u64);
        let limit = r.random_range(1..5u32);
        let mut c = CollectorState::new(SimDuration(interval), limit);
        let mut heard: BTreeMap<String, u64> = BTreeMap::new();
        let mut now = 0;
        for _ in 0..r.random_range(1..60) {
            now += r.random_range(0..interval * 2);
            let name = format!("s{}", r.random_range(0..15));
            let ad = Ad::new(AdKind::Slot).with_value("name", name.as_str());
            c.advertise(ad, now).unwrap();
            heard.insert(name, now);
        }
        now += r.random_range(0..interval * (limit as u64 + 2));
        let expected: BTreeSet<String> = heard
            .iter()
            .filter(|(_, &t)| now - t > interval * limit as u64)
            .map(|(n, _)| n.clone())
            .collect();
        let removed: BTreeSet<String> = c.expire(now).iter().map(|a| a.name().unwrap().to_string()).collect();
        assert_eq!(removed, expected);
        assert_eq!(c.len(), heard.len() - expected.len());
    }
}

#[test]
fn query_equals_direct_filter() {
    let mut r = rng(22);
    for _ in 0..100 {
        let mut c = CollectorState::default();
        let mut all = Vec::new();
        for i in 0..r.random_range(0..20) {
            let t = random_table(&mut r);
            let ad = table_ad(AdKind::Slot, &t, &random_req(&mut r, 2, true)).with_value("name", format!("n{i:02}"));
            c.advertise(ad.clone(), 0).unwrap();
            all.push(ad);
        }
        let constraint = random_req(&mut r, 3, true).to_expr();
        let expected: Vec<String> = all
            .iter()
            .filter(|ad| evaluate(&constraint, ad, None).is_true())
            .map(|ad| ad.name().unwrap().to_string())
            .collect();
        let got: Vec<String> = c.query(&constraint).iter().map(|a| a.name().unwrap().to_string()).collect();
        assert_eq!(got, expected);
    }
}

#[test]
fn decay_matches_closed_form() {
    let cfg = PriorityConfig::default();
    for p in [0.5, 1.0, 3.0, 10.0, 250.0] {
        for usage in [0.0, 0.5, 4.0, 64.0] {
            for dt in [1u64, 60, 3600, 86_400, 7 * 86_400] {
                let mut rec = UserRecord::new("u", 1.0, cfg);
                rec.real_priority = p;
                let got = decay_user_priority(&rec, usage, SimDuration(dt)).real_priority;
                let k = (-(dt as f64) / 86_400.0 * std::f64::consts::LN_2).exp();
                let want = (usage + (p - usage) * k).max(0.5);
                assert!((got - want).abs() <= 1e-12 * want.max(1.0), "p={p} u={usage} dt={dt}: {got} vs {want}");
            }
        }
    }
}

fn identical_jobs(owner: &str, n: usize, first: u64) -> Vec<JobState> {
    (0..n as u64)
        .map(|i| {
            let ad = Ad::new(AdKind::Job)
                .with_value("name", format!("{owner}.{i}"))
                .with_value("requirements", true);
            JobState::new(JobId(first + i), ad, owner, "schedd", ClusterId(first as u32), 0)
        })
        .collect()
}

/// Integer split minimizing total absolute deviation from the exact shares,
/// found by enumerating every composition.
fn brute_force_split(slots: u64, weights: &[f64]) -> Vec<u64> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| slots as f64 * w / total).collect();
    let mut best: Option<(f64, Vec<u64>)> = None;
    let mut cur = vec![0u64; weights.len()];
    fn rec(i: usize, left: u64, cur: &mut Vec<u64>, exact: &[f64], best: &mut Option<(f64, Vec<u64>)>) {
        if i == cur.len() - 1 {
            cur[i] = left;
            let cost: f64 = cur.iter().zip(exact).map(|(&x, e)| (x as f64 - e).abs()).sum();
            if best.as_ref().is_none_or(|(c, _)| cost < *c - 1e-9) {
                *best = Some((cost, cur.clone()));
            }
            return;
        }
        for x in 0..=left {
            cur[i] = x;
            rec(i + 1, left - x, cur, exact, best);
        }
    }
    rec(0, slots, &mut cur, &exact, &mut best);
    best.unwrap().1
}

#[test]
fn negotiated_split_equals_brute_force_share() {
    let mut r = rng(23);
    let names = ["ann", "ben", "cat"];
    for case in 0..300 {
        let n_users = r.random_range(2..=3);
        let slots_n = r.random_range(1..25u64);
        let factors: Vec<f64> = (0..n_users).map(|_| r.random_range(1.0..5.0)).collect();
        let job_sets: Vec<Vec<JobState>> = (0..n_users)
            .map(|u| identical_jobs(names[u], 30, 100 * u as u64))
            .collect();
        let mut jobs = BTreeMap::new();
        let mut users = BTreeMap::new();
        for u in 0..n_users {
            jobs.insert(names[u].to_string(), job_sets[u].iter().collect::<Vec<_>>());
            users.insert(names[u].to_string(), UserRecord::new(names[u], factors[u], PriorityConfig::default()));
        }
        let slot_ads: Vec<Ad> = (0..slots_n)
            .map(|i| Ad::new(AdKind::Slot).with_value("name", format!("s{i:03}")).with_value("requirements", true))
            .collect();
        let refs: Vec<&Ad> = slot_ads.iter().collect();
        let matches = negotiate(case, &jobs, &refs, &users, &BTreeMap::new());
        let got: Vec<u64> = (0..n_users)
            .map(|u| matches.iter().filter(|m| m.owner == names[u]).count() as u64)
            .collect();
        let weights: Vec<f64> = factors.iter().map(|f| 1.0 / (0.5 * f)).collect();
        assert_eq!(got, brute_force_split(slots_n, &weights), "case {case} factors {factors:?}");
        let distinct: BTreeSet<&str> = matches.iter().map(|m| m.slot.as_str()).collect();
        assert_eq!(distinct.len(), matches.len());
        // Within one owner, jobs are served in submission order.
        for u in 0..n_users {
            let ids: Vec<u64> = matches.iter().filter(|m| m.owner == names[u]).map(|m| m.job.0).collect();
            let want: Vec<u64> = (0..ids.len() as u64).map(|i| 100 * u as u64 + i).collect();
            assert_eq!(ids, want);
        }
    }
}

#[test]
fn each_job_gets_best_ranked_remaining_slot() {
    let job_ad = Ad::new(AdKind::Job)
        .with_value("name", "j")
        .with_value("requirements", true)
        .with_expr("rank", "TARGET.mips")
        .unwrap();
    let jobs_v: Vec<JobState> = (0..3)
        .map(|i| JobState::new(JobId(i), job_ad.clone(), "ann", "schedd", ClusterId(0), 0))
        .collect();
    let mut jobs = BTreeMap::new();
    jobs.insert("ann".to_string(), jobs_v.iter().collect::<Vec<_>>());
    let slots: Vec<Ad> = [("a", 5), ("b", 9), ("c", 9), ("d", 1)]
        .iter()
        .map(|(n, m)| {
            Ad::new(AdKind::Slot)
                .with_value("name", *n)
                .with_value("mips", *m as i64)
                .with_value("requirements", true)
        })
        .collect();
    let refs: Vec<&Ad> = slots.iter().collect();
    let m = negotiate(0, &jobs, &refs, &BTreeMap::new(), &BTreeMap::new());
    let got: Vec<&str> = m.iter().map(|m| m.slot.as_str()).collect();
    assert_eq!(got, ["b", "c", "a"]);
    // Same input, same output.
    assert_eq!(negotiate(0, &jobs, &refs, &BTreeMap::new(), &BTreeMap::new()), m);
}
