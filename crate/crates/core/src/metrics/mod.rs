//! Usage aggregation, derived figures and run reports. Everything here is a
//! pure function of a trace.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::glidein::DeathCause;
use crate::gridsim::{RecordKind, Trace, TraceError};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("window length must be positive, got {0}")]
    NonPositiveWindow(f64),
    #[error("bucket width of {0} hours is not a positive whole number of seconds")]
    BadBucket(f64),
    #[error("accelerated duration must be positive")]
    ZeroDuration,
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Average concurrent cores implied by `core_hours` spread over `window_hours`.
pub fn avg_cores(core_hours: f64, window_hours: f64) -> Result<f64, MetricsError> {
    if !(window_hours > 0.0) {
        return Err(MetricsError::NonPositiveWindow(window_hours));
    }
    Ok(core_hours / window_hours)
}

/// Ratio of two durations in the same unit.
pub fn speedup(baseline: f64, accelerated: f64) -> Result<f64, MetricsError> {
    if !(accelerated > 0.0) {
        return Err(MetricsError::ZeroDuration);
    }
    Ok(baseline / accelerated)
}

/// One claim's time in RUNNING. Claims still open at the horizon end there.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunInterval {
    pub claim: u64,
    pub job: u64,
    pub owner: String,
    pub site: String,
    pub start: SimTime,
    pub end: SimTime,
    pub cpus: u64,
    pub gpus: u64,
    /// Ended by JOB_DONE (as opposed to eviction or the horizon).
    pub completed: bool,
}

impl RunInterval {
    pub fn core_seconds(&self) -> u64 {
        self.cpus * (self.end - self.start)
    }

    pub fn gpu_seconds(&self) -> u64 {
        self.gpus * (self.end - self.start)
    }
}

pub fn running_intervals(trace: &Trace) -> Result<Vec<RunInterval>, MetricsError> {
    let mut open: BTreeMap<u64, RunInterval> = BTreeMap::new();
    let mut done = Vec::new();
    for r in &trace.records {
        match r.kind {
            RecordKind::JobStart => {
                let claim = r.num("claim")?;
                open.insert(
                    claim,
                    RunInterval {
                        claim,
                        job: r.num("job")?,
                        owner: r.field("owner")?.to_string(),
                        site: r.field("site")?.to_string(),
                        start: r.time,
                        end: r.time,
                        cpus: r.num("cpus")?,
                        gpus: r.num("gpus")?,
                        completed: false,
                    },
                );
            }
            RecordKind::JobDone | RecordKind::JobEvict => {
                if let Some(mut iv) = open.remove(&r.num("claim")?) {
                    iv.end = r.time;
                    iv.completed = r.kind == RecordKind::JobDone;
                    done.push(iv);
                }
            }
            _ => {}
        }
    }
    let until = trace.header.until;
    done.extend(open.into_values().map(|mut iv| {
        iv.end = until;
        iv
    }));
    done.sort_by_key(|iv| (iv.start, iv.claim));
    Ok(done)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UsageBucket {
    pub site: String,
    pub window_start: SimTime,
    /// Covered length; the last window may be cut short by the horizon.
    pub window_hours: f64,
    pub core_seconds: u64,
    pub gpu_seconds: u64,
}

impl UsageBucket {
    pub fn core_hours(&self) -> f64 {
        self.core_seconds as f64 / 3600.0
    }

    pub fn gpu_hours(&self) -> f64 {
        self.gpu_seconds as f64 / 3600.0
    }
}

fn bucket_width(bucket_hours: f64) -> Result<u64, MetricsError> {
    let secs = bucket_hours * 3600.0;
    let whole = secs.round();
    // Hours that are a whole number of seconds rarely survive the multiply exactly.
    if !secs.is_finite() || whole < 1.0 || (secs - whole).abs() > 1e-6 * whole.max(1.0) {
        return Err(MetricsError::BadBucket(bucket_hours));
    }
    Ok(whole as u64)
}

fn site_names(trace: &Trace) -> Result<Vec<String>, MetricsError> {
    let mut names: Vec<String> = trace
        .of_kind(RecordKind::Site)
        .map(|r| r.field("name").map(str::to_string))
        .collect::<Result<_, _>>()?;
    names.sort();
    Ok(names)
}

/// Busy core- and gpu-seconds per site and fixed-width window, every
/// interval split exactly at window edges. Rows come site by site, windows
/// in time order, zero rows included.
pub fn aggregate_usage(trace: &Trace, bucket_hours: f64) -> Result<Vec<UsageBucket>, MetricsError> {
    let width = bucket_width(bucket_hours)?;
    let until = trace.header.until;
    let windows = until.div_ceil(width).max(1);
    let sites = site_names(trace)?;
    let mut grid: BTreeMap<&str, Vec<(u64, u64)>> =
        sites.iter().map(|s| (s.as_str(), vec![(0, 0); windows as usize])).collect();
    for iv in running_intervals(trace)? {
        let Some(row) = grid.get_mut(iv.site.as_str()) else {
            continue;
        };
        let mut t = iv.start;
        while t < iv.end {
            let w = t / width;
            let edge = ((w + 1) * width).min(iv.end);
            let cell = &mut row[w as usize];
            cell.0 += iv.cpus * (edge - t);
            cell.1 += iv.gpus * (edge - t);
            t = edge;
        }
    }
    let mut out = Vec::new();
    for (site, row) in grid {
        for (w, (core, gpu)) in row.into_iter().enumerate() {
            let start = w as u64 * width;
            out.push(UsageBucket {
                site: site.to_string(),
                window_start: start,
                window_hours: ((start + width).min(until) - start) as f64 / 3600.0,
                core_seconds: core,
                gpu_seconds: gpu,
            });
        }
    }
    Ok(out)
}

/// Plot-ready table: `site,windowStart,coreHours,gpuHours`, window start in
/// seconds, hours to six decimals.
pub fn usage_csv(buckets: &[UsageBucket]) -> String {
    let mut out = String::from("site,windowStart,coreHours,gpuHours\n");
    for b in buckets {
        writeln!(out, "{},{},{:.6},{:.6}", b.site, b.window_start, b.core_hours(), b.gpu_hours()).unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Percentiles {
    pub count: u64,
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
    pub max: u64,
}

/// Nearest-rank percentiles of `xs` (seconds).
pub fn percentiles(mut xs: Vec<u64>) -> Percentiles {
    if xs.is_empty() {
        return Percentiles::default();
    }
    xs.sort_unstable();
    let n = xs.len();
    let rank = |p: u64| xs[((p as usize * n).div_ceil(100)).clamp(1, n) - 1];
    Percentiles {
        count: n as u64,
        p50: rank(50),
        p90: rank(90),
        p99: rank(99),
        max: xs[n - 1],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteTotals {
    pub site: String,
    pub cores: u64,
    pub gpus: u64,
    pub core_seconds: u64,
    pub gpu_seconds: u64,
    /// Time pilots held cores, busy or not.
    pub pilot_core_seconds: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheLine {
    pub name: String,
    pub hit_blocks: u64,
    pub miss_blocks: u64,
    pub bytes_from_cache: u64,
    pub bytes_from_origin: u64,
}

impl CacheLine {
    pub fn hit_ratio(&self) -> f64 {
        let n = self.hit_blocks + self.miss_blocks;
        if n == 0 {
            0.0
        } else {
            self.hit_blocks as f64 / n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub until: SimTime,
    pub bucket_hours: f64,
    pub buckets: Vec<UsageBucket>,
    pub sites: Vec<SiteTotals>,
    pub core_seconds: u64,
    pub gpu_seconds: u64,
    pub jobs_submitted: u64,
    pub jobs_completed: u64,
    pub jobs_evicted: u64,
    pub claim_races: u64,
    pub caches: Vec<CacheLine>,
    /// First submission to first start.
    pub wait: Percentiles,
    /// Start to completion of the run that finished the job.
    pub execution: Percentiles,
    pub pilot_deaths: BTreeMap<DeathCause, u64>,
}

impl RunReport {
    pub fn from_trace(trace: &Trace, bucket_hours: f64) -> Result<RunReport, MetricsError> {
        let buckets = aggregate_usage(trace, bucket_hours)?;
        let until = trace.header.until;

        let mut sites: BTreeMap<String, SiteTotals> = BTreeMap::new();
        for r in trace.of_kind(RecordKind::Site) {
            let name = r.field("name")?.to_string();
            sites.insert(
                name.clone(),
                SiteTotals {
                    site: name,
                    cores: r.num("cores")?,
                    gpus: r.num("gpus")?,
                    core_seconds: 0,
                    gpu_seconds: 0,
                    pilot_core_seconds: 0,
                },
            );
        }
        for b in &buckets {
            let s = sites.get_mut(&b.site).expect("buckets come from site records");
            s.core_seconds += b.core_seconds;
            s.gpu_seconds += b.gpu_seconds;
        }

        let mut pilot_start: BTreeMap<u64, (String, SimTime, u64)> = BTreeMap::new();
        let mut pilot_deaths: BTreeMap<DeathCause, u64> = DeathCause::ALL.iter().map(|&c| (c, 0)).collect();
        let mut submitted: BTreeMap<u64, SimTime> = BTreeMap::new();
        let mut first_start: BTreeMap<u64, SimTime> = BTreeMap::new();
        let mut run_start: BTreeMap<u64, SimTime> = BTreeMap::new();
        let mut execution = Vec::new();
        let mut caches: BTreeMap<String, CacheLine> = BTreeMap::new();
        let (mut completed, mut evicted, mut races) = (0, 0, 0);
        let charge = |sites: &mut BTreeMap<String, SiteTotals>, site: &str, cpus: u64, secs: u64| {
            if let Some(s) = sites.get_mut(site) {
                s.pilot_core_seconds += cpus * secs;
            }
        };
        for r in &trace.records {
            match r.kind {
                RecordKind::Cache => {
                    let name = r.field("name")?.to_string();
                    caches.insert(
                        name.clone(),
                        CacheLine {
                            name,
                            hit_blocks: 0,
                            miss_blocks: 0,
                            bytes_from_cache: 0,
                            bytes_from_origin: 0,
                        },
                    );
                }
                RecordKind::JobSubmit => {
                    submitted.insert(r.num("job")?, r.time);
                }
                RecordKind::JobStart => {
                    let job = r.num("job")?;
                    first_start.entry(job).or_insert(r.time);
                    run_start.insert(job, r.time);
                    if let Some(c) = caches.get_mut(r.field("cache")?) {
                        c.hit_blocks += r.num::<u64>("hit_blocks")?;
                        c.miss_blocks += r.num::<u64>("miss_blocks")?;
                        c.bytes_from_cache += r.num::<u64>("bytes_from_cache")?;
                        c.bytes_from_origin += r.num::<u64>("bytes_from_origin")?;
                    }
                }
                RecordKind::JobDone => {
                    completed += 1;
                    let job = r.num("job")?;
                    if let Some(s) = run_start.get(&job) {
                        execution.push(r.time - s);
                    }
                }
                RecordKind::JobEvict => evicted += 1,
                RecordKind::ClaimRace => races += 1,
                RecordKind::PilotStart => {
                    pilot_start.insert(r.num("pilot")?, (r.field("site")?.to_string(), r.time, r.num("cpus")?));
                }
                RecordKind::PilotDead => {
                    if let Some(c) = DeathCause::parse(r.field("cause")?) {
                        *pilot_deaths.entry(c).or_default() += 1;
                    }
                    if let Some((site, start, cpus)) = pilot_start.remove(&r.num("pilot")?) {
                        charge(&mut sites, &site, cpus, r.time - start);
                    }
                }
                _ => {}
            }
        }
        for (site, start, cpus) in pilot_start.into_values() {
            charge(&mut sites, &site, cpus, until - start);
        }
        let wait = first_start
            .iter()
            .filter_map(|(job, t)| submitted.get(job).map(|s| t - s))
            .collect();

        let sites: Vec<SiteTotals> = sites.into_values().collect();
        Ok(RunReport {
            scenario: trace.header.scenario.clone(),
            seed: trace.header.seed,
            until,
            bucket_hours,
            core_seconds: sites.iter().map(|s| s.core_seconds).sum(),
            gpu_seconds: sites.iter().map(|s| s.gpu_seconds).sum(),
            sites,
            buckets,
            jobs_submitted: submitted.len() as u64,
            jobs_completed: completed,
            jobs_evicted: evicted,
            claim_races: races,
            caches: caches.into_values().collect(),
            wait: percentiles(wait),
            execution: percentiles(execution),
            pilot_deaths,
        })
    }

    pub fn run_hours(&self) -> f64 {
        self.until as f64 / 3600.0
    }

    pub fn render(&self) -> String {
        let mut o = String::new();
        let hours = self.run_hours();
        let avg = |secs: u64| avg_cores(secs as f64 / 3600.0, hours).unwrap_or(0.0);
        writeln!(o, "# glidesim run report").unwrap();
        writeln!(o, "scenario {}", self.scenario).unwrap();
        writeln!(o, "seed {}", self.seed).unwrap();
        writeln!(o, "until {}", self.until).unwrap();
        writeln!(o, "bucket_hours {}", self.bucket_hours).unwrap();

        writeln!(o, "\n[totals]").unwrap();
        writeln!(o, "jobs_submitted {}", self.jobs_submitted).unwrap();
        writeln!(o, "jobs_completed {}", self.jobs_completed).unwrap();
        writeln!(o, "jobs_evicted {}", self.jobs_evicted).unwrap();
        writeln!(o, "claim_races {}", self.claim_races).unwrap();
        writeln!(o, "core_hours {:.6}", self.core_seconds as f64 / 3600.0).unwrap();
        writeln!(o, "gpu_hours {:.6}", self.gpu_seconds as f64 / 3600.0).unwrap();
        writeln!(o, "avg_cores {:.6}", avg(self.core_seconds)).unwrap();
        writeln!(o, "avg_gpus {:.6}", avg(self.gpu_seconds)).unwrap();

        writeln!(o, "\n[sites]").unwrap();
        writeln!(o, "# site cores gpus core_hours gpu_hours avg_cores pilot_core_hours").unwrap();
        for s in &self.sites {
            writeln!(
                o,
                "{} {} {} {:.6} {:.6} {:.6} {:.6}",
                s.site,
                s.cores,
                s.gpus,
                s.core_seconds as f64 / 3600.0,
                s.gpu_seconds as f64 / 3600.0,
                avg(s.core_seconds),
                s.pilot_core_seconds as f64 / 3600.0
            )
            .unwrap();
        }

        writeln!(o, "\n[usage]").unwrap();
        writeln!(o, "# site window_start window_hours core_hours gpu_hours").unwrap();
        for b in &self.buckets {
            writeln!(
                o,
                "{} {} {:.6} {:.6} {:.6}",
                b.site,
                b.window_start,
                b.window_hours,
                b.core_hours(),
                b.gpu_hours()
            )
            .unwrap();
        }

        writeln!(o, "\n[caches]").unwrap();
        writeln!(o, "# cache hit_blocks miss_blocks hit_ratio bytes_from_cache bytes_from_origin").unwrap();
        for c in &self.caches {
            writeln!(
                o,
                "{} {} {} {:.6} {} {}",
                c.name,
                c.hit_blocks,
                c.miss_blocks,
                c.hit_ratio(),
                c.bytes_from_cache,
                c.bytes_from_origin
            )
            .unwrap();
        }

        writeln!(o, "\n[latency]").unwrap();
        writeln!(o, "# phase count p50 p90 p99 max (seconds)").unwrap();
        for (name, p) in [("submit_to_start", self.wait), ("start_to_done", self.execution)] {
            writeln!(o, "{name} {} {} {} {} {}", p.count, p.p50, p.p90, p.p99, p.max).unwrap();
        }

        writeln!(o, "\n[pilots]").unwrap();
        for (cause, n) in &self.pilot_deaths {
            writeln!(o, "{cause} {n}").unwrap();
        }
        o
    }
}
