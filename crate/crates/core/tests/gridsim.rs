mod common;

use std::collections::BTreeMap;

use common::*;
use glidesim::gridsim::{replay_summary, run, Distribution, RecordKind, Scenario, Trace};
use glidesim::gridsim::workload::sample;
use glidesim::time::SimDuration;

fn one_site(cores: u32, extra_site: &str, entry: &str, workloads: &str) -> String {
    format!(
        r#"
seed = 1
until = "3d"

[[sites]]
name = "s"
lat = 0.0
lon = 0.0
cores = {cores}
{extra_site}

[[entries]]
name = "e"
site = "s"
ce_type = "HTCONDOR_CE"
{entry}

[[users]]
name = "u"

{workloads}
"#
    )
}

const SMALL_ENTRY: &str = r#"max_pilots = 4
max_idle_pilots = 4
shape = { cpus = 1, memory_mb = 4096, gpus = 0, max_walltime = "2d", idle_timeout = "20m" }"#;

fn batch(count: u32, runtime: &str) -> String {
    format!(
        r#"[[workloads]]
name = "w"
user = "u"
kind = "independent"
count = {count}
arrival = {{ profile = "burst", at = "0s" }}
runtime = {runtime}
"#
    )
}

fn job_stage(t: &Trace) -> BTreeMap<u64, u32> {
    t.of_kind(RecordKind::JobSubmit).map(|r| (r.num("job").unwrap(), r.num("stage").unwrap())).collect()
}

#[test]
fn empty_workload_is_housekeeping_only() {
    let s = toml_scenario(&one_site(4, "", SMALL_ENTRY, ""));
    let t = run(&s, 1, 3600).unwrap();
    let kinds: std::collections::BTreeSet<RecordKind> = t.records.iter().map(|r| r.kind).collect();
    let allowed = [
        RecordKind::Site,
        RecordKind::Entry,
        RecordKind::User,
        RecordKind::Negotiate,
        RecordKind::FrontendCycle,
        RecordKind::Expire,
    ];
    assert!(kinds.iter().all(|k| allowed.contains(k)), "{kinds:?}");
    assert_eq!(t.of_kind(RecordKind::Negotiate).count(), 61);
    assert_eq!(t.of_kind(RecordKind::FrontendCycle).count(), 13);
    assert_eq!(t.summary.get("matches"), None);
}

#[test]
fn same_seed_gives_identical_text() {
    let s = bundled("iterative.toml");
    let a = simulate(&s).to_text();
    let b = simulate(&s).to_text();
    assert_eq!(a, b);
    let c = run(&s, s.seed + 1, s.until.as_secs()).unwrap().to_text();
    assert_ne!(a, c);
}

#[test]
fn trace_text_round_trips_and_replays_to_the_footer() {
    for name in BUNDLED {
        let t = simulate(&bundled(name));
        let text = t.to_text();
        let back = Trace::parse(&text).unwrap();
        assert_eq!(back.to_text(), text, "{name}");
        assert_eq!(replay_summary(&back).unwrap(), t.summary, "{name}");
    }
}

#[test]
fn dispatch_order_is_strictly_increasing() {
    let t = simulate(&bundled("elasticity.toml"));
    for w in t.records.windows(2) {
        assert!((w[0].time, w[0].seq) < (w[1].time, w[1].seq));
    }
}

#[test]
fn batch_of_100_submits_exactly_100() {
    let s = toml_scenario(&one_site(4, "", SMALL_ENTRY, &batch(100, r#"{ dist = "degenerate", value = "10m" }"#)));
    let t = simulate(&s);
    assert_eq!(t.of_kind(RecordKind::JobSubmit).count(), 100);
}

#[test]
fn degenerate_ce_delay_starts_exactly_then() {
    let site = r#"ce_delay = { dist = "degenerate", value = "60s" }"#;
    let s = toml_scenario(&one_site(8, site, SMALL_ENTRY, &batch(4, r#"{ dist = "degenerate", value = "1h" }"#)));
    let t = simulate(&s);
    let submits: BTreeMap<u64, u64> = t.of_kind(RecordKind::PilotSubmit).map(|r| (r.num("pilot").unwrap(), r.time)).collect();
    assert!(!submits.is_empty());
    for r in t.of_kind(RecordKind::PilotStart) {
        assert_eq!(r.time, submits[&r.num::<u64>("pilot").unwrap()] + 60);
    }
}

#[test]
fn full_site_holds_pilots_until_one_dies() {
    let entry = r#"max_pilots = 3
max_idle_pilots = 3
shape = { cpus = 1, memory_mb = 4096, gpus = 0, max_walltime = "90m", idle_timeout = "5m" }"#;
    // Walltime fits one job, so pilots die while work is still queued.
    let s = toml_scenario(&one_site(1, "", entry, &batch(5, r#"{ dist = "degenerate", value = "1h" }"#)));
    let t = simulate(&s);
    let queued: Vec<u64> = t
        .of_kind(RecordKind::PilotSubmit)
        .filter(|r| r.get("queued") == Some("1"))
        .map(|r| r.num("pilot").unwrap())
        .collect();
    assert!(!queued.is_empty());
    let deaths: Vec<u64> = t.of_kind(RecordKind::PilotDead).filter(|r| r.get("started") != Some("-")).map(|r| r.time).collect();
    let mut started_queued = Vec::new();
    for r in t.of_kind(RecordKind::PilotStart) {
        let p: u64 = r.num("pilot").unwrap();
        if queued.contains(&p) {
            assert!(deaths.contains(&r.time), "pilot {p} started at {} without a death", r.time);
            started_queued.push(p);
        }
    }
    assert!(!started_queued.is_empty());
    // First in, first out.
    let mut sorted = started_queued.clone();
    sorted.sort();
    assert_eq!(started_queued, sorted);
    assert_eq!(peak_pilot_cores(&t)["s"], 1);
    assert_eq!(t.summary["jobs.completed"], 5);
}

#[test]
fn preemption_rate_matches_configuration() {
    let rate = 0.1;
    let site = format!("preemption_rate = {rate}");
    let entry = r#"max_pilots = 50
max_idle_pilots = 50
shape = { cpus = 1, memory_mb = 4096, gpus = 0, max_walltime = "30d", idle_timeout = "20m" }"#;
    let mut text = one_site(50, &site, entry, &batch(2000, r#"{ dist = "degenerate", value = "10h" }"#));
    text = text.replace("until = \"3d\"", "until = \"10d\"");
    let t = simulate(&toml_scenario(&text));
    // Pilot-hours from the pilots' own start/death records.
    let mut start = BTreeMap::new();
    let mut secs = 0u64;
    for r in &t.records {
        match r.kind {
            RecordKind::PilotStart => {
                start.insert(r.num::<u64>("pilot").unwrap(), r.time);
            }
            RecordKind::PilotDead => {
                if let Some(s) = start.remove(&r.num::<u64>("pilot").unwrap()) {
                    secs += r.time - s;
                }
            }
            _ => {}
        }
    }
    secs += start.values().map(|s| t.header.until - s).sum::<u64>();
    let hours = secs as f64 / 3600.0;
    let preempts = t.of_kind(RecordKind::Preempt).count() as f64;
    assert!(hours >= 1000.0, "{hours}");
    let observed = preempts / hours;
    assert!((observed - rate).abs() <= 0.1 * rate, "{preempts} over {hours} h = {observed}");
}

#[test]
fn uniform_runtime_samples_stay_in_bounds() {
    let d = Distribution::Uniform { min: SimDuration::hours(1), max: SimDuration::hours(48) };
    let mut r = rng(3);
    let xs: Vec<u64> = (0..10_000).map(|_| sample(&d, &mut r)).collect();
    assert!(*xs.iter().min().unwrap() >= 3600);
    assert!(*xs.iter().max().unwrap() <= 48 * 3600);
    // And the draws actually spread over the range.
    assert!(*xs.iter().min().unwrap() < 2 * 3600);
    assert!(*xs.iter().max().unwrap() > 47 * 3600);
}

#[test]
fn lognormal_samples_respect_truncation() {
    let d = Distribution::Lognormal {
        median: SimDuration::hours(12),
        sigma: 1.5,
        min: SimDuration::hours(1),
        max: SimDuration::hours(48),
    };
    let mut r = rng(4);
    for _ in 0..10_000 {
        let x = sample(&d, &mut r);
        assert!((3600..=48 * 3600).contains(&x));
    }
}

/// Checks the barrier: every start of stage k+1 comes at or after the last
/// completion of stage k. Returns the number of stages seen.
fn check_barrier(t: &Trace) -> usize {
    let stage = job_stage(t);
    let mut last_done: BTreeMap<u32, u64> = BTreeMap::new();
    let mut first_start: BTreeMap<u32, u64> = BTreeMap::new();
    let mut first_submit: BTreeMap<u32, u64> = BTreeMap::new();
    for r in &t.records {
        let job = || r.num::<u64>("job").unwrap();
        match r.kind {
            RecordKind::JobDone => {
                let e = last_done.entry(stage[&job()]).or_default();
                *e = (*e).max(r.time);
            }
            RecordKind::JobStart => {
                first_start.entry(stage[&job()]).or_insert(r.time);
            }
            RecordKind::JobSubmit => {
                first_submit.entry(stage[&job()]).or_insert(r.time);
            }
            _ => {}
        }
    }
    for (&k, &start) in &first_start {
        if k > 0 {
            assert!(start >= last_done[&(k - 1)], "stage {k} started at {start}");
            assert!(first_submit[&k] >= last_done[&(k - 1)]);
        }
    }
    first_start.len()
}

#[test]
fn iterative_stages_respect_the_barrier() {
    let t = simulate(&bundled("iterative.toml"));
    assert_eq!(check_barrier(&t), 3);
    let s = &t.summary;
    assert_eq!(s["jobs.submitted"], 30);
    assert_eq!(s["jobs.completed"], 30);
    assert!(s["jobs.evicted"] > 0, "the scenario is meant to exercise preemption");
}

#[test]
fn zero_input_wall_time_is_compute_time() {
    let t = simulate(&bundled("iterative.toml"));
    let starts: BTreeMap<u64, (u64, u64, u64)> = t
        .of_kind(RecordKind::JobStart)
        .map(|r| (r.num("claim").unwrap(), (r.time, r.num("stage").unwrap(), r.num("compute").unwrap())))
        .collect();
    let mut n = 0;
    for r in t.of_kind(RecordKind::JobDone) {
        let (start, stage, compute) = starts[&r.num::<u64>("claim").unwrap()];
        assert_eq!(stage, 0);
        assert_eq!(r.time - start, compute);
        n += 1;
    }
    assert_eq!(n, 30);
}

fn cache_scenario() -> Scenario {
    let text = one_site(
        1,
        "",
        SMALL_ENTRY,
        r#"
[[files]]
name = "frames"
size = 2147483648

[[caches]]
name = "c"
lat = 0.0
lon = 0.0
capacity = 8589934592
bandwidth = 104857600
origin_bandwidth = 10485760

[[workloads]]
name = "w"
user = "u"
kind = "independent"
count = 2
arrival = { profile = "burst", at = "0s" }
runtime = { dist = "degenerate", value = "1h" }
inputs = ["frames"]
"#,
    );
    toml_scenario(&text)
}

#[test]
fn warm_cache_run_is_faster_than_cold() {
    let t = simulate(&cache_scenario());
    let starts: BTreeMap<u64, (u64, u64, u64)> = t
        .of_kind(RecordKind::JobStart)
        .map(|r| (r.num("claim").unwrap(), (r.time, r.num("stage").unwrap(), r.num("compute").unwrap())))
        .collect();
    let mut walls: Vec<(u64, u64, u64)> = t
        .of_kind(RecordKind::JobDone)
        .map(|r| {
            let (start, stage, compute) = starts[&r.num::<u64>("claim").unwrap()];
            assert_eq!(r.time - start, stage + compute);
            (start, r.time - start, stage)
        })
        .collect();
    walls.sort();
    assert_eq!(walls.len(), 2);
    let (cold, warm) = (walls[0], walls[1]);
    // 2 GiB from origin at 10 MiB/s plus the cache hop, then cache-only.
    assert_eq!(cold.2, (2048.0 / 10.0 + 2048.0 / 100.0_f64).ceil() as u64);
    assert_eq!(warm.2, (2048.0 / 100.0_f64).ceil() as u64);
    assert!(warm.1 < cold.1);
}

#[test]
fn rift_like_jobs_are_about_twenty_times_faster_on_gpus() {
    // Requirements that accept both kinds of slot, so the same job lands on each.
    let text = r#"
seed = 9
until = "2d"

[[sites]]
name = "gpu"
lat = 0.0
lon = 0.0
cores = 8
gpus = 4

[[sites]]
name = "cpu"
lat = 0.0
lon = 1.0
cores = 8

[[entries]]
name = "gpu-ce"
site = "gpu"
ce_type = "HTCONDOR_CE"
max_pilots = 4
max_idle_pilots = 4
shape = { cpus = 2, memory_mb = 8192, gpus = 1, max_walltime = "2d", idle_timeout = "20m" }

[[entries]]
name = "cpu-ce"
site = "cpu"
ce_type = "HTCONDOR_CE"
max_pilots = 4
max_idle_pilots = 4
shape = { cpus = 2, memory_mb = 8192, gpus = 0, max_walltime = "2d", idle_timeout = "20m" }

[[users]]
name = "ligo"

[[workloads]]
name = "rift"
user = "ligo"
kind = "independent"
count = 16
arrival = { profile = "burst", at = "0s" }
runtime = { dist = "degenerate", value = "463m" }
gpu_runtime = { dist = "degenerate", value = "23m" }
request_gpus = 1
requirements = "TARGET.cpus >= MY.requestcpus"
"#;
    let t = simulate(&toml_scenario(text));
    let starts: BTreeMap<u64, (u64, bool)> = t
        .of_kind(RecordKind::JobStart)
        .map(|r| (r.num("claim").unwrap(), (r.time, r.field("gpu_path").unwrap() == "1")))
        .collect();
    let (mut cpu, mut gpu) = (Vec::new(), Vec::new());
    for r in t.of_kind(RecordKind::JobDone) {
        let (start, on_gpu) = starts[&r.num::<u64>("claim").unwrap()];
        if on_gpu { &mut gpu } else { &mut cpu }.push(r.time - start);
    }
    assert!(!cpu.is_empty() && !gpu.is_empty());
    assert!(cpu.iter().all(|&w| w == 463 * 60));
    assert!(gpu.iter().all(|&w| w == 23 * 60));
    let ratio = cpu[0] as f64 / gpu[0] as f64;
    assert!((ratio - 463.0 / 23.0).abs() < 1e-12);
    assert!((ratio - 20.13).abs() < 0.005);
}

#[test]
fn bundled_rift_scenario_runs_the_prelude_on_cpu_then_gpu_stages() {
    let t = simulate(&bundled("rift-gpu.toml"));
    assert_eq!(check_barrier(&t), 4);
    let stage = job_stage(&t);
    for r in t.of_kind(RecordKind::JobStart) {
        let k = stage[&r.num::<u64>("job").unwrap()];
        let compute: u64 = r.num("compute").unwrap();
        if k == 0 {
            assert_eq!(compute, 2 * 3600);
        } else {
            assert_eq!(r.field("gpu_path").unwrap(), "1");
            assert_eq!(compute, 23 * 60);
        }
    }
    assert_eq!(t.summary["jobs.completed"], 31);
}

#[test]
fn pilots_never_exceed_site_capacity() {
    for name in BUNDLED {
        let s = bundled(name);
        let t = simulate(&s);
        let peak = peak_pilot_cores(&t);
        for site in &s.sites {
            let p = peak.get(&site.name).copied().unwrap_or(0);
            assert!(p <= site.cores as u64, "{name} {}: {p} > {}", site.name, site.cores);
        }
    }
}

#[test]
fn ten_thousand_jobs_finish_when_capacity_suffices() {
    let s = bundled("ligo-10k.toml");
    let w = &s.workloads[0];
    let count = w.count.unwrap() as u64;
    let cores: u64 = s.sites.iter().map(|x| x.cores as u64).sum();
    let (_, max_runtime) = w.runtime.bounds();
    // List-scheduling bound: every core busy until the work runs out, plus one
    // longest job; doubled to cover CE delays, pilot churn and preemption.
    let bound = 2 * (count * max_runtime / cores + max_runtime);
    assert!(bound < s.until.as_secs(), "{bound}");

    let t = simulate(&s);
    assert_eq!(t.summary["jobs.submitted"], count);
    assert_eq!(t.summary["jobs.completed"], count);
    let last_done = t.of_kind(RecordKind::JobDone).map(|r| r.time).max().unwrap();
    assert!(last_done < t.header.until);
}

#[test]
fn validation_errors_come_before_any_event() {
    let good = one_site(4, "", SMALL_ENTRY, &batch(1, r#"{ dist = "degenerate", value = "1h" }"#));
    assert!(Scenario::from_toml(&good).is_ok());
    let bad = [
        good.replace("site = \"s\"", "site = \"nowhere\""),
        good.replace("user = \"u\"", "user = \"nobody\""),
        good.replace("until = \"3d\"", "until = \"0s\""),
        good.replace("until = \"3d\"", "until = \"-1h\""),
        good.replace("cpus = 1,", "cpus = 16,"),
        good.replace("count = 1", "count = 0"),
        good.replace("cores = 4", "cores = 4\nbogus = 1"),
        good.replace("[[users]]\nname = \"u\"", "[[users]]\nname = \"u\"\n[[users]]\nname = \"u\""),
        good.replace("value = \"1h\"", "value = \"1h\" }\nrequirements = \"TARGET.cpus >=\"\nx = { a = 1"),
    ];
    for (i, text) in bad.iter().enumerate() {
        assert!(Scenario::from_toml(text).is_err(), "case {i} accepted:\n{text}");
    }
}
