use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Exp};
use thiserror::Error;

use crate::datacache::{nearest_cache_index, stage_files, CacheError, FileId};
use crate::glidein::{
    bootstrap_delay, factory_submit, matchable_idle, pilot_bootstrap, pilot_tick, pressure_from_demand,
    synthetic_slot_ad, Bootstrap, DeathCause, EntryPoint, GlideinError, PilotCounts, PilotId, PilotRequest,
    PilotState, Pilot, TickAction,
};
use crate::matchlang::Ad;
use crate::pool::{ClaimId, CollectorState, JobId, JobStatus, Match, Pool, PoolError, ReleaseReason, SlotStatus};
use crate::time::SimTime;

use super::engine::{substream, EventQueue};
use super::scenario::{Built, Scenario, ScenarioError, WorkloadKind};
use super::trace::{Record, RecordKind, Summary, Trace, TraceHeader};
use super::workload::{plan_stage, sample, stage_count, JobPlan};

const SCHEDD: &str = "schedd";

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Glidein(#[from] GlideinError),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ev {
    Submit(usize),
    Negotiate,
    Frontend,
    Expire,
    PilotSubmit(PilotId),
    PilotStart(PilotId),
    Advertise(PilotId),
    PilotTick(PilotId),
    Preempt(PilotId),
    StageDone(ClaimId),
    JobDone(ClaimId),
}

struct SiteRt {
    cores_free: u64,
    gpus_free: u64,
    /// Pilots waiting at the CE for capacity, in arrival order.
    waiting: VecDeque<PilotId>,
    rng: ChaCha8Rng,
}

struct PilotRt {
    pilot: Pilot,
    entry: usize,
    site: usize,
    /// Holds site capacity from CE acceptance until death.
    reserved: bool,
    /// Earliest start once the CE queue delay has passed.
    ready_at: SimTime,
}

struct JobRt {
    workload: usize,
    stage: u32,
    runtime: u64,
    gpu_runtime: Option<u64>,
    inputs: Vec<usize>,
}

struct RunRt {
    job: JobId,
    slot: String,
    pilot: PilotId,
    compute: u64,
}

struct WorkloadRt {
    rng: ChaCha8Rng,
    next_job: u64,
    stages: u32,
    remaining: BTreeMap<u32, u64>,
}

#[derive(Default)]
struct Counters {
    negotiations: u64,
    frontend_cycles: u64,
    matches: u64,
    claim_races: u64,
    jobs_started: u64,
    jobs_evicted: u64,
    pilots_requested: u64,
    pilots_submitted: u64,
    pilots_advertised: u64,
    preemptions: u64,
    ads_expired: u64,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    built: Built,
    until: SimTime,
    now: SimTime,
    queue: EventQueue<Ev>,
    records: Vec<Record>,
    pool: Pool,
    entry_index: BTreeMap<String, EntryPoint>,
    entry_ads: Vec<Ad>,
    entry_rngs: Vec<ChaCha8Rng>,
    sites: Vec<SiteRt>,
    pilots: BTreeMap<PilotId, PilotRt>,
    live_pilots: BTreeSet<PilotId>,
    slot_pilot: HashMap<String, PilotId>,
    next_pilot: u64,
    plans: Vec<Option<JobPlan>>,
    jobs: Vec<JobRt>,
    runs: BTreeMap<ClaimId, RunRt>,
    workloads: Vec<WorkloadRt>,
    counters: Counters,
}

/// Runs `scenario` from time 0 through `until` (inclusive) with `seed`.
/// The same inputs always produce the same trace.
pub fn run(scenario: &Scenario, seed: u64, until: SimTime) -> Result<Trace, SimError> {
    let built = scenario.build()?;
    let mut sim = Sim::new(scenario, built, seed, until);
    sim.init()?;
    while let Some((time, _, ev)) = sim.queue.pop() {
        if time > until {
            break;
        }
        sim.now = time;
        sim.dispatch(ev)?;
    }
    sim.now = until;
    let summary = sim.summary();
    Ok(Trace {
        header: TraceHeader {
            scenario: scenario.hash(),
            seed,
            until,
        },
        records: sim.records,
        summary,
    })
}

fn rate_text(x: f64) -> String {
    format!("{x}")
}

impl<'a> Sim<'a> {
    fn new(scenario: &'a Scenario, built: Built, seed: u64, until: SimTime) -> Sim<'a> {
        let iv = &scenario.intervals;
        let mut pool = Pool::new(
            CollectorState::new(iv.collector_update, iv.missed_updates),
            scenario.priority,
        );
        for u in &scenario.users {
            pool.add_user(&u.name, u.priority_factor);
        }
        let sites = scenario
            .sites
            .iter()
            .map(|s| SiteRt {
                cores_free: s.cores,
                gpus_free: s.gpus,
                waiting: VecDeque::new(),
                rng: substream(seed, &format!("site:{}", s.name)),
            })
            .collect();
        let entry_ads = built
            .entries
            .iter()
            .map(|e| synthetic_slot_ad(e, &built.frontend, &e.name))
            .collect();
        let entry_rngs = built
            .entries
            .iter()
            .map(|e| substream(seed, &format!("entry:{}", e.name)))
            .collect();
        let workloads = built
            .workloads
            .iter()
            .map(|w| WorkloadRt {
                rng: substream(seed, &format!("workload:{}", w.spec.name)),
                next_job: 0,
                stages: stage_count(w),
                remaining: BTreeMap::new(),
            })
            .collect();
        Sim {
            scenario,
            entry_index: built.entries.iter().map(|e| (e.name.clone(), e.clone())).collect(),
            built,
            until,
            now: 0,
            queue: EventQueue::new(),
            records: Vec::new(),
            pool,
            entry_ads,
            entry_rngs,
            sites,
            pilots: BTreeMap::new(),
            live_pilots: BTreeSet::new(),
            slot_pilot: HashMap::new(),
            next_pilot: 1,
            plans: Vec::new(),
            jobs: Vec::new(),
            runs: BTreeMap::new(),
            workloads,
            counters: Counters::default(),
        }
    }

    fn emit(&mut self, kind: RecordKind, fields: String) {
        let seq = self.records.len() as u64;
        self.records.push(Record {
            time: self.now,
            seq,
            kind,
            fields,
        });
    }

    fn init(&mut self) -> Result<(), SimError> {
        let sc = self.scenario;
        for s in &sc.sites {
            self.emit(
                RecordKind::Site,
                format!(
                    "name={} cores={} gpus={} lat={} lon={} preemption_rate={}",
                    s.name,
                    s.cores,
                    s.gpus,
                    s.lat,
                    s.lon,
                    rate_text(s.preemption_rate)
                ),
            );
        }
        for e in &sc.entries {
            self.emit(
                RecordKind::Entry,
                format!(
                    "name={} site={} ce_type={} cpus={} gpus={} max_pilots={} max_idle_pilots={} idle_timeout={} max_walltime={}",
                    e.name,
                    e.site,
                    e.ce_type,
                    e.shape.cpus,
                    e.shape.gpus,
                    e.max_pilots,
                    e.max_idle_pilots,
                    e.shape.idle_timeout.as_secs(),
                    e.shape.max_walltime.as_secs()
                ),
            );
        }
        for u in &sc.users {
            self.emit(RecordKind::User, format!("name={} priority_factor={}", u.name, rate_text(u.priority_factor)));
        }
        for c in &sc.caches {
            self.emit(
                RecordKind::Cache,
                format!("name={} capacity={} block_size={} lat={} lon={}", c.name, c.capacity, c.block_size, c.lat, c.lon),
            );
        }

        // Initial submissions go in ahead of housekeeping at the same instant.
        for i in 0..self.built.workloads.len() {
            let spec = &self.built.workloads[i].spec;
            let at = match spec.kind {
                WorkloadKind::Independent => 0,
                WorkloadKind::Iterative => spec.start.map(|d| d.as_secs()).unwrap_or(0),
            };
            for plan in self.plan(i, 0, at) {
                let t = plan.submit_at;
                self.plans.push(Some(plan));
                self.queue.schedule(t, Ev::Submit(self.plans.len() - 1));
            }
        }
        self.queue.schedule(0, Ev::Frontend);
        self.queue.schedule(0, Ev::Negotiate);
        self.queue.schedule(sc.intervals.collector_update.as_secs(), Ev::Expire);
        Ok(())
    }

    fn plan(&mut self, workload: usize, stage: u32, at: SimTime) -> Vec<JobPlan> {
        let w = &self.built.workloads[workload];
        let rt = &mut self.workloads[workload];
        let plans = plan_stage(w, workload, stage, at, &mut rt.next_job, &mut rt.rng);
        rt.remaining.insert(stage, plans.len() as u64);
        plans
    }

    fn dispatch(&mut self, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Submit(i) => {
                let plan = self.plans[i].take().expect("each plan is submitted once");
                self.submit(plan)
            }
            Ev::Negotiate => self.negotiate(),
            Ev::Frontend => self.frontend(),
            Ev::Expire => {
                self.pool.refresh_slot_ads(self.now);
                let removed = self.pool.collector.expire(self.now).len();
                self.counters.ads_expired += removed as u64;
                let ads = self.pool.collector.len();
                self.emit(RecordKind::Expire, format!("removed={removed} ads={ads}"));
                let next = self.now + self.scenario.intervals.collector_update.as_secs();
                self.queue.schedule(next, Ev::Expire);
                Ok(())
            }
            Ev::PilotSubmit(p) => self.pilot_submit(p),
            Ev::PilotStart(p) => self.pilot_start(p),
            Ev::Advertise(p) => self.advertise(p),
            Ev::PilotTick(p) => self.tick(p),
            Ev::Preempt(p) => self.preempt(p),
            Ev::StageDone(c) => {
                if let Some(run) = self.runs.get(&c) {
                    let (job, compute) = (run.job, run.compute);
                    self.emit(RecordKind::JobStageDone, format!("job={} claim={}", job.0, c.0));
                    self.queue.schedule(self.now + compute, Ev::JobDone(c));
                }
                Ok(())
            }
            Ev::JobDone(c) => self.job_done(c),
        }
    }

    fn submit(&mut self, plan: JobPlan) -> Result<(), SimError> {
        let name = plan.ad.name().unwrap_or("").to_string();
        let id = self.pool.submit(plan.ad, &plan.owner, SCHEDD, self.now)?;
        debug_assert_eq!(id.0 as usize, self.jobs.len());
        let workload = &self.built.workloads[plan.workload].spec.name;
        self.emit(
            RecordKind::JobSubmit,
            format!(
                "job={} name={} owner={} workload={} stage={}",
                id.0, name, plan.owner, workload, plan.stage
            ),
        );
        self.jobs.push(JobRt {
            workload: plan.workload,
            stage: plan.stage,
            runtime: plan.runtime,
            gpu_runtime: plan.gpu_runtime,
            inputs: plan.inputs,
        });
        Ok(())
    }

    fn negotiate(&mut self) -> Result<(), SimError> {
        self.counters.negotiations += 1;
        let cycle = self.counters.negotiations;
        self.pool.update_priorities(self.now);
        let idle_jobs = self.pool.idle_job_count();
        if !self.pool.needs_negotiation() {
            self.emit(
                RecordKind::Negotiate,
                format!("cycle={cycle} idle_jobs={idle_jobs} matches=0 skipped=1"),
            );
        } else {
            let matches = self.pool.negotiate(cycle);
            self.emit(
                RecordKind::Negotiate,
                format!("cycle={cycle} idle_jobs={idle_jobs} matches={} skipped=0", matches.len()),
            );
            self.counters.matches += matches.len() as u64;
            for m in matches {
                self.emit(
                    RecordKind::Match,
                    format!("cycle={cycle} job={} slot={} owner={}", m.job.0, m.slot, m.owner),
                );
                match self.pool.claim(&m.slot, m.job, self.now) {
                    Ok(claim) => self.start_job(claim, &m)?,
                    Err(PoolError::ClaimRace { .. }) => {
                        self.counters.claim_races += 1;
                        self.emit(RecordKind::ClaimRace, format!("job={} slot={}", m.job.0, m.slot));
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        let next = self.now + self.scenario.intervals.negotiation.as_secs();
        self.queue.schedule(next, Ev::Negotiate);
        Ok(())
    }

    fn start_job(&mut self, claim_id: ClaimId, m: &Match) -> Result<(), SimError> {
        let slot = self.pool.slot(&m.slot).expect("claimed slot exists");
        let claim = slot.claim().expect("just claimed");
        let (cpus, gpus, slot_gpus) = (claim.cpus, claim.gpus, slot.gpus());
        let pilot = self.slot_pilot[&m.slot];
        let prt = &self.pilots[&pilot];
        let entry = &self.built.entries[prt.entry];
        let geo = entry.geo;
        let site = entry.site.clone();
        let job = &self.jobs[m.job.0 as usize];
        let requested_gpus = self.pool.job(m.job).map(|j| j.request_gpus()).unwrap_or(0);
        let gpu_path = job.gpu_runtime.is_some() && requested_gpus > 0 && slot_gpus >= requested_gpus;
        let compute = if gpu_path {
            job.gpu_runtime.expect("checked")
        } else {
            job.runtime
        };
        let mut fields = format!(
            "job={} claim={} slot={} pilot={} owner={} site={} cpus={} gpus={} gpu_path={} compute={}",
            m.job.0, claim_id.0, m.slot, pilot, m.owner, site, cpus, gpus, gpu_path as u8, compute
        );
        let mut stage_secs = 0;
        if job.inputs.is_empty() {
            fields.push_str(" cache=- stage=0");
        } else {
            let ci = nearest_cache_index(geo, &self.built.caches)?;
            let files: Vec<(FileId, u64)> = job
                .inputs
                .iter()
                .map(|&i| (FileId(i as u32), self.scenario.files[i].size))
                .collect();
            let cache = &mut self.built.caches[ci];
            let t = stage_files(&files, cache);
            stage_secs = t.duration.ceil() as u64;
            fields.push_str(&format!(
                " cache={} stage={} hit_blocks={} miss_blocks={} bytes_from_cache={} bytes_from_origin={}",
                cache.name, stage_secs, t.hit_blocks, t.miss_blocks, t.bytes_from_cache, t.bytes_from_origin
            ));
        }
        self.emit(RecordKind::JobStart, fields);
        self.counters.jobs_started += 1;
        self.runs.insert(
            claim_id,
            RunRt {
                job: m.job,
                slot: m.slot.clone(),
                pilot,
                compute,
            },
        );
        self.queue.schedule(self.now + stage_secs, Ev::StageDone(claim_id));
        Ok(())
    }

    fn job_done(&mut self, c: ClaimId) -> Result<(), SimError> {
        let Some(run) = self.runs.remove(&c) else {
            return Ok(());
        };
        let rel = self.pool.release(c, ReleaseReason::Completed, self.now)?;
        let site = self.pilots[&run.pilot].pilot.site.clone();
        self.emit(
            RecordKind::JobDone,
            format!(
                "job={} claim={} slot={} owner={} site={} cpus={} gpus={} usage={} gpu_usage={}",
                run.job.0, c.0, run.slot, rel.claim.owner, site, rel.claim.cpus, rel.claim.gpus, rel.core_seconds, rel.gpu_seconds
            ),
        );

        // Stage barrier.
        let (w, stage) = {
            let j = &self.jobs[run.job.0 as usize];
            (j.workload, j.stage)
        };
        let barrier = {
            let rt = &mut self.workloads[w];
            let left = rt.remaining.get_mut(&stage).expect("stage was planned");
            *left -= 1;
            *left == 0 && stage + 1 < rt.stages
        };
        if barrier {
            for plan in self.plan(w, stage + 1, self.now) {
                self.submit(plan)?;
            }
        }

        let prt = &self.pilots[&run.pilot];
        if prt.pilot.state() == PilotState::Retiring {
            self.tick(run.pilot)?;
        } else {
            let timeout = self.built.entries[prt.entry].shape.idle_timeout.as_secs();
            self.queue.schedule(self.now + timeout, Ev::PilotTick(run.pilot));
        }
        Ok(())
    }

    fn evict(&mut self, c: ClaimId, cause: DeathCause) -> Result<(), SimError> {
        let Some(run) = self.runs.remove(&c) else {
            return Ok(());
        };
        let rel = self.pool.release(c, ReleaseReason::Preempted, self.now)?;
        let site = self.pilots[&run.pilot].pilot.site.clone();
        self.counters.jobs_evicted += 1;
        self.emit(
            RecordKind::JobEvict,
            format!(
                "job={} claim={} slot={} owner={} site={} cpus={} gpus={} usage={} gpu_usage={} cause={}",
                run.job.0, c.0, run.slot, rel.claim.owner, site, rel.claim.cpus, rel.claim.gpus, rel.core_seconds, rel.gpu_seconds, cause
            ),
        );
        Ok(())
    }

    fn frontend(&mut self) -> Result<(), SimError> {
        self.counters.frontend_cycles += 1;
        let cycle = self.counters.frontend_cycles;
        let (idle_jobs, matchable): (u64, Vec<u64>) = {
            let fe = &self.built.frontend;
            let idle = self.pool.idle_clusters();
            let total = idle.iter().map(|(_, n)| n).sum();
            (total, self.entry_ads.iter().map(|ad| matchable_idle(ad, fe, &idle)).collect())
        };

        // Pilots still waiting at a CE are withdrawn once their entry has no demand.
        let idle_entries: BTreeSet<usize> = (0..matchable.len()).filter(|&i| matchable[i] == 0).collect();
        if !idle_entries.is_empty() {
            let doomed: Vec<PilotId> = self
                .live_pilots
                .iter()
                .copied()
                .filter(|p| {
                    let rt = &self.pilots[p];
                    idle_entries.contains(&rt.entry)
                        && matches!(rt.pilot.state(), PilotState::Requested | PilotState::CeQueued)
                })
                .collect();
            for p in doomed {
                self.remove_queued(p)?;
            }
        }

        let mut counts = vec![PilotCounts::default(); self.built.entries.len()];
        for p in &self.live_pilots {
            let rt = &self.pilots[p];
            let c = &mut counts[rt.entry];
            c.alive += 1;
            if rt.pilot.state().is_queued() {
                c.queued += 1;
            }
        }
        for slot in self.pool.slots().filter(|s| s.status() == SlotStatus::Idle) {
            let rt = &self.pilots[&self.slot_pilot[&slot.name]];
            if rt.pilot.state() == PilotState::Advertised {
                counts[rt.entry].idle += 1;
            }
        }
        let requests: Vec<PilotRequest> = self
            .built
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| PilotRequest {
                entry: e.name.clone(),
                requested: pressure_from_demand(e, &self.built.frontend, matchable[i], counts[i]),
                cycle,
            })
            .collect();
        let total: u64 = requests.iter().map(|r| r.requested as u64).sum();
        self.emit(
            RecordKind::FrontendCycle,
            format!("cycle={cycle} idle_jobs={idle_jobs} requested={total}"),
        );
        for (i, r) in requests.iter().enumerate() {
            if r.requested > 0 {
                let c = counts[i];
                self.emit(
                    RecordKind::PilotRequest,
                    format!(
                        "cycle={cycle} entry={} requested={} matchable={} idle={} queued={} alive={}",
                        r.entry, r.requested, matchable[i], c.idle, c.queued, c.alive
                    ),
                );
            }
        }
        self.counters.pilots_requested += total;

        let alive: BTreeMap<String, u32> = self
            .built
            .entries
            .iter()
            .zip(&counts)
            .map(|(e, c)| (e.name.clone(), c.alive))
            .collect();
        let out = factory_submit(&requests, &self.entry_index, &alive, &mut self.next_pilot, self.now);
        for d in &out.diagnostics {
            let extra = match d {
                crate::glidein::FactoryDiagnostic::Truncated { requested, granted, .. } => {
                    format!(" requested={requested} granted={granted}")
                }
                _ => String::new(),
            };
            self.emit(RecordKind::FactoryDiag, format!("entry={} code={}{extra}", d.entry(), d.code()));
        }
        for pilot in out.pilots {
            let id = pilot.id;
            let entry = self.built.entries.iter().position(|e| e.name == pilot.entry).expect("known entry");
            let site = self.scenario.sites.iter().position(|s| s.name == pilot.site).expect("known site");
            self.pilots.insert(
                id,
                PilotRt {
                    pilot,
                    entry,
                    site,
                    reserved: false,
                    ready_at: self.now,
                },
            );
            self.live_pilots.insert(id);
            self.queue.schedule(self.now, Ev::PilotSubmit(id));
        }
        let next = self.now + self.scenario.intervals.frontend.as_secs();
        self.queue.schedule(next, Ev::Frontend);
        Ok(())
    }

    fn shape(&self, p: PilotId) -> (u64, u64) {
        let e = &self.built.entries[self.pilots[&p].entry];
        (e.shape.cpus as u64, e.shape.gpus as u64)
    }

    fn fits(&self, p: PilotId) -> bool {
        let (cpus, gpus) = self.shape(p);
        let s = &self.sites[self.pilots[&p].site];
        s.cores_free >= cpus && s.gpus_free >= gpus
    }

    fn reserve(&mut self, p: PilotId) {
        let (cpus, gpus) = self.shape(p);
        let rt = self.pilots.get_mut(&p).expect("known pilot");
        rt.reserved = true;
        let s = &mut self.sites[rt.site];
        s.cores_free -= cpus;
        s.gpus_free -= gpus;
        let at = rt.ready_at.max(self.now);
        self.queue.schedule(at, Ev::PilotStart(p));
    }

    /// Returns a dead pilot's capacity and starts whoever is next at its CE.
    fn release_capacity(&mut self, p: PilotId) {
        let (cpus, gpus) = self.shape(p);
        let rt = self.pilots.get_mut(&p).expect("known pilot");
        let site = rt.site;
        if std::mem::take(&mut rt.reserved) {
            let s = &mut self.sites[site];
            s.cores_free += cpus;
            s.gpus_free += gpus;
        }
        while let Some(&next) = self.sites[site].waiting.front() {
            if !self.fits(next) {
                break;
            }
            self.sites[site].waiting.pop_front();
            self.reserve(next);
        }
    }

    fn pilot_submit(&mut self, p: PilotId) -> Result<(), SimError> {
        let rt = self.pilots.get_mut(&p).expect("known pilot");
        if rt.pilot.state() != PilotState::Requested {
            return Ok(());
        }
        rt.pilot.advance(PilotState::CeQueued, self.now)?;
        let site_spec = &self.scenario.sites[rt.site];
        let ce = self.built.entries[rt.entry].ce_type;
        let dist = self.scenario.ce_delay(site_spec, ce);
        let delay = sample(&dist, &mut self.sites[rt.site].rng);
        rt.ready_at = self.now + delay;
        let (entry, site) = (rt.pilot.entry.clone(), rt.pilot.site.clone());
        let site_idx = rt.site;
        self.counters.pilots_submitted += 1;
        let queued = !(self.sites[site_idx].waiting.is_empty() && self.fits(p));
        if queued {
            self.sites[site_idx].waiting.push_back(p);
        } else {
            self.reserve(p);
        }
        self.emit(
            RecordKind::PilotSubmit,
            format!("pilot={p} entry={entry} site={site} delay={delay} queued={}", queued as u8),
        );
        Ok(())
    }

    fn remove_queued(&mut self, p: PilotId) -> Result<(), SimError> {
        let rt = self.pilots.get_mut(&p).expect("known pilot");
        rt.pilot.kill(DeathCause::Removed, self.now)?;
        let site = rt.site;
        self.sites[site].waiting.retain(|&x| x != p);
        self.bury(p, false)
    }

    fn pilot_start(&mut self, p: PilotId) -> Result<(), SimError> {
        let rt = self.pilots.get_mut(&p).expect("known pilot");
        if rt.pilot.state() != PilotState::CeQueued {
            return Ok(());
        }
        rt.pilot.advance(PilotState::Bootstrapping, self.now)?;
        let (entry, site, site_idx) = (rt.pilot.entry.clone(), rt.pilot.site.clone(), rt.site);
        let (cpus, gpus) = self.shape(p);
        self.emit(
            RecordKind::PilotStart,
            format!("pilot={p} entry={entry} site={site} cpus={cpus} gpus={gpus}"),
        );
        let boot = bootstrap_delay(&self.built.factory, &self.built.frontend).as_secs();
        self.queue.schedule(self.now + boot, Ev::Advertise(p));
        let rate = self.scenario.sites[site_idx].preemption_rate;
        if rate > 0.0 {
            let hours = Exp::new(rate).expect("validated rate").sample(&mut self.sites[site_idx].rng);
            let secs = ((hours * 3600.0).ceil() as u64).max(1);
            self.queue.schedule(self.now + secs, Ev::Preempt(p));
        }
        Ok(())
    }

    fn advertise(&mut self, p: PilotId) -> Result<(), SimError> {
        let rt = self.pilots.get_mut(&p).expect("known pilot");
        if rt.pilot.state() != PilotState::Bootstrapping {
            return Ok(());
        }
        let entry = &self.built.entries[rt.entry];
        let roll: f64 = self.entry_rngs[rt.entry].random();
        match pilot_bootstrap(&mut rt.pilot, entry, &self.built.frontend, self.now, roll)? {
            Bootstrap::Advertised(slot) => {
                let name = slot.name.clone();
                let started = rt.pilot.started_at.unwrap_or(self.now);
                let idle_at = (started + entry.shape.idle_timeout.as_secs()).max(self.now);
                let wall_at = (started + entry.shape.max_walltime.as_secs()).max(self.now);
                let site = rt.pilot.site.clone();
                self.pool.insert_slot(*slot, self.now)?;
                self.slot_pilot.insert(name.clone(), p);
                self.counters.pilots_advertised += 1;
                self.emit(RecordKind::Advertise, format!("pilot={p} slot={name} site={site}"));
                self.queue.schedule(idle_at, Ev::PilotTick(p));
                self.queue.schedule(wall_at, Ev::PilotTick(p));
                Ok(())
            }
            Bootstrap::Failed => self.bury(p, true),
        }
    }

    fn tick(&mut self, p: PilotId) -> Result<(), SimError> {
        let rt = self.pilots.get_mut(&p).expect("known pilot");
        if !rt.pilot.is_alive() {
            return Ok(());
        }
        let Some(slot) = rt.pilot.slot_name.as_deref().and_then(|n| self.pool.slot(n)) else {
            return Ok(());
        };
        let claim = slot.claim().map(|c| c.claim_id);
        let shape = self.built.entries[rt.entry].shape;
        match pilot_tick(&mut rt.pilot, slot, &shape, self.built.frontend.grace_period, self.now) {
            TickAction::Nothing => Ok(()),
            TickAction::Drain { deadline } => {
                self.queue.schedule(deadline, Ev::PilotTick(p));
                Ok(())
            }
            TickAction::Die(_) => self.bury(p, true),
            TickAction::EvictAndDie(cause) => {
                if let Some(c) = claim {
                    self.evict(c, cause)?;
                }
                self.bury(p, true)
            }
        }
    }

    fn preempt(&mut self, p: PilotId) -> Result<(), SimError> {
        let rt = &self.pilots[&p];
        if !matches!(
            rt.pilot.state(),
            PilotState::Bootstrapping | PilotState::Advertised | PilotState::Retiring
        ) {
            return Ok(());
        }
        let site = rt.pilot.site.clone();
        let claim = rt
            .pilot
            .slot_name
            .as_deref()
            .and_then(|n| self.pool.slot(n))
            .and_then(|s| s.claim())
            .map(|c| c.claim_id);
        self.counters.preemptions += 1;
        self.emit(RecordKind::Preempt, format!("pilot={p} site={site}"));
        if let Some(c) = claim {
            self.evict(c, DeathCause::Preempted)?;
        }
        self.pilots
            .get_mut(&p)
            .expect("known pilot")
            .pilot
            .kill(DeathCause::Preempted, self.now)?;
        // A preempted pilot cannot say goodbye: its ad lingers until it expires.
        self.bury(p, false)
    }

    /// Bookkeeping for a pilot that just died.
    fn bury(&mut self, p: PilotId, withdraw: bool) -> Result<(), SimError> {
        let rt = &self.pilots[&p];
        debug_assert!(!rt.pilot.is_alive());
        if let Some(name) = rt.pilot.slot_name.clone() {
            if self.pool.slot(&name).is_some() {
                self.pool.remove_slot(&name, withdraw)?;
            }
            self.slot_pilot.remove(&name);
        }
        let rt = &self.pilots[&p];
        let started = rt.pilot.started_at.map_or("-".to_string(), |t| t.to_string());
        let cause = rt.pilot.death_cause.expect("dead pilots have a cause");
        let fields = format!(
            "pilot={p} entry={} site={} cause={cause} started={started}",
            rt.pilot.entry, rt.pilot.site
        );
        self.emit(RecordKind::PilotDead, fields);
        self.live_pilots.remove(&p);
        self.release_capacity(p);
        Ok(())
    }

    /// Footer counters computed from live state rather than from the records.
    fn summary(&self) -> Summary {
        let mut s = Summary::new();
        let c = &self.counters;
        let jobs = self.pool.jobs();
        s.insert("jobs.submitted".into(), jobs.len() as u64);
        s.insert(
            "jobs.completed".into(),
            jobs.iter().filter(|j| j.status() == JobStatus::Completed).count() as u64,
        );
        s.insert("jobs.started".into(), c.jobs_started);
        s.insert("jobs.evicted".into(), c.jobs_evicted);
        s.insert("matches".into(), c.matches);
        s.insert("claim_races".into(), c.claim_races);
        s.insert("cycles.negotiation".into(), c.negotiations);
        s.insert("cycles.frontend".into(), c.frontend_cycles);
        s.insert("pilots.requested".into(), c.pilots_requested);
        s.insert("pilots.submitted".into(), c.pilots_submitted);
        s.insert("pilots.advertised".into(), c.pilots_advertised);
        s.insert("preemptions".into(), c.preemptions);
        s.insert("ads.expired".into(), c.ads_expired);
        let mut started = 0;
        for rt in self.pilots.values() {
            let p = &rt.pilot;
            if let Some(cause) = p.death_cause {
                *s.entry(format!("pilots.dead.{cause}")).or_default() += 1;
            }
            if let Some(life) = p.lifetime(self.until) {
                started += 1;
                let cpus = self.built.entries[rt.entry].shape.cpus as u64;
                *s.entry(format!("pilot_core_seconds.{}", p.site)).or_default() += cpus * life;
            }
        }
        s.insert("pilots.started".into(), started);
        for (name, u) in self.pool.users() {
            s.insert(format!("usage.{name}.core_seconds"), u.usage_core_seconds);
            s.insert(format!("usage.{name}.gpu_seconds"), u.gpu_seconds);
        }
        for run in self.runs.values() {
            let claim = self.pool.slot(&run.slot).and_then(|s| s.claim()).expect("open run holds a claim");
            let open = self.until - claim.since;
            *s.entry(format!("usage.{}.core_seconds", claim.owner)).or_default() += claim.cpus as u64 * open;
            *s.entry(format!("usage.{}.gpu_seconds", claim.owner)).or_default() += claim.gpus as u64 * open;
        }
        for cache in &self.built.caches {
            let st = cache.stats();
            s.insert(format!("cache.{}.hit_blocks", cache.name), st.hit_blocks);
            s.insert(format!("cache.{}.miss_blocks", cache.name), st.miss_blocks);
            s.insert(format!("cache.{}.bytes_from_cache", cache.name), st.bytes_from_cache);
            s.insert(format!("cache.{}.bytes_from_origin", cache.name), st.bytes_from_origin);
        }
        s.retain(|_, v| *v != 0);
        s
    }
}
