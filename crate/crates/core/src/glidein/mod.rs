//! Pilot elasticity: the frontend turns idle demand into pilot requests, the
//! factory submits pilots to entry points, and pilots bootstrap into slots
//! and retire on idle timeout or walltime.

mod pilot;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datacache::GeoPoint;
use crate::matchlang::{evaluate, symmetric_match, Ad, AdKind, Expr, Value};
use crate::pool::SlotState;
use crate::time::{SimDuration, SimTime};

pub use pilot::{DeathCause, Pilot, PilotId, PilotState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GlideinError {
    #[error("entry '{entry}': {reason}")]
    InvalidEntry { entry: String, reason: String },
    #[error("pilot {pilot}: cannot go from {from} to {to}")]
    BadPilotTransition { pilot: PilotId, from: PilotState, to: PilotState },
    #[error("pilot {0} is not bootstrapping")]
    NotBootstrapping(PilotId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CeType {
    HtcondorCe,
    ArcCe,
    CreamCe,
    Cloud,
}

impl CeType {
    /// Queue delay used when a site does not configure its own.
    pub fn default_queue_delay(self) -> SimDuration {
        match self {
            CeType::HtcondorCe => SimDuration::minutes(2),
            CeType::ArcCe | CeType::CreamCe => SimDuration::minutes(5),
            CeType::Cloud => SimDuration::secs(30),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CeType::HtcondorCe => "HTCONDOR_CE",
            CeType::ArcCe => "ARC_CE",
            CeType::CreamCe => "CREAM_CE",
            CeType::Cloud => "CLOUD",
        }
    }
}

impl fmt::Display for CeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotShape {
    pub cpus: u32,
    pub memory_mb: u64,
    pub gpus: u32,
    pub max_walltime: SimDuration,
    pub idle_timeout: SimDuration,
}

impl Default for PilotShape {
    fn default() -> Self {
        PilotShape {
            cpus: 8,
            memory_mb: 16384,
            gpus: 0,
            max_walltime: SimDuration::hours(48),
            idle_timeout: SimDuration::minutes(20),
        }
    }
}

/// A site gateway the factory can submit pilots to.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryPoint {
    pub name: String,
    pub site: String,
    pub ce_type: CeType,
    pub max_pilots: u32,
    pub max_idle_pilots: u32,
    pub shape: PilotShape,
    /// Slot-side requirements: which jobs pilots from this entry accept.
    pub requirements: Expr,
    pub geo: GeoPoint,
    /// Probability that a started pilot fails to bootstrap.
    pub bootstrap_failure: f64,
    pub trusted: bool,
    pub containers: bool,
}

impl EntryPoint {
    pub fn validate(&self) -> Result<(), GlideinError> {
        let bad = |reason: &str| {
            Err(GlideinError::InvalidEntry {
                entry: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if self.max_idle_pilots > self.max_pilots {
            return bad("max_idle_pilots exceeds max_pilots");
        }
        if self.shape.cpus == 0 || self.shape.memory_mb == 0 {
            return bad("pilot shape needs cpus and memory");
        }
        if self.shape.max_walltime <= self.shape.idle_timeout {
            return bad("max_walltime must exceed idle_timeout");
        }
        if !(0.0..=1.0).contains(&self.bootstrap_failure) {
            return bad("bootstrap_failure must be a probability");
        }
        if !self.geo.is_valid() {
            return bad("coordinates out of range");
        }
        Ok(())
    }
}

/// Frontend group settings.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontendParams {
    pub fraction: f64,
    pub min_idle: u32,
    pub grace_period: SimDuration,
    /// Second bootstrap phase: fetching the frontend's configuration.
    pub config_delay: SimDuration,
    /// Extra job-side filter, evaluated with the job as self and the entry's slot ad as target.
    pub match_expr: Expr,
    /// Attributes injected into every pilot's slot ad.
    pub attrs: Vec<(String, Value)>,
}

impl Default for FrontendParams {
    fn default() -> Self {
        FrontendParams {
            fraction: 1.0,
            min_idle: 1,
            grace_period: SimDuration::minutes(10),
            config_delay: SimDuration::secs(30),
            match_expr: Expr::lit(true),
            attrs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FactoryParams {
    /// First bootstrap phase: fetching factory configuration and binaries.
    pub config_delay: SimDuration,
}

impl Default for FactoryParams {
    fn default() -> Self {
        FactoryParams {
            config_delay: SimDuration::secs(60),
        }
    }
}

/// Time from a pilot starting at the site to its slot being advertised.
pub fn bootstrap_delay(factory: &FactoryParams, frontend: &FrontendParams) -> SimDuration {
    SimDuration(factory.config_delay.as_secs() + frontend.config_delay.as_secs())
}

/// The slot ad a pilot from `entry` would advertise (status excluded).
pub fn synthetic_slot_ad(entry: &EntryPoint, frontend: &FrontendParams, name: &str) -> Ad {
    let mut ad = Ad::new(AdKind::Slot)
        .with_value("name", name)
        .with_value("site", entry.site.as_str())
        .with_value("entry", entry.name.as_str())
        .with_value("cetype", entry.ce_type.as_str())
        .with_value("cpus", entry.shape.cpus as i64)
        .with_value("memory", entry.shape.memory_mb as i64)
        .with_value("gpus", entry.shape.gpus as i64)
        .with_value("lat", entry.geo.lat)
        .with_value("lon", entry.geo.lon)
        .with_value("hascontainers", entry.containers)
        .with_value("trusted", entry.trusted);
    for (k, v) in &frontend.attrs {
        ad.set(k, Expr::Literal(v.clone()));
    }
    ad.set("requirements", entry.requirements.clone());
    ad
}

/// Pilots of one entry in the states the frontend cares about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PilotCounts {
    /// Advertised with an unclaimed slot.
    pub idle: u32,
    /// Submitted but not advertising yet.
    pub queued: u32,
    /// Everything not dead.
    pub alive: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PilotRequest {
    pub entry: String,
    pub requested: u32,
    pub cycle: u64,
}

/// Number of idle jobs (given as ad, multiplicity) the entry could serve.
pub fn matchable_idle(entry_ad: &Ad, frontend: &FrontendParams, idle_jobs: &[(&Ad, u64)]) -> u64 {
    idle_jobs
        .iter()
        .filter(|(job, _)| {
            symmetric_match(job, entry_ad) && evaluate(&frontend.match_expr, job, Some(entry_ad)).is_true()
        })
        .map(|(_, n)| n)
        .sum()
}

/// desired = ceil(matchable * fraction) + (min_idle if any demand);
/// request = desired - idle - queued, clamped to [0, min(max_pilots - alive,
/// max_idle_pilots - idle - queued)].
pub fn compute_pressure(
    entry: &EntryPoint,
    frontend: &FrontendParams,
    idle_jobs: &[(&Ad, u64)],
    counts: PilotCounts,
    cycle: u64,
) -> PilotRequest {
    let entry_ad = synthetic_slot_ad(entry, frontend, &entry.name);
    let m = matchable_idle(&entry_ad, frontend, idle_jobs);
    let requested = pressure_from_demand(entry, frontend, m, counts);
    PilotRequest {
        entry: entry.name.clone(),
        requested,
        cycle,
    }
}

pub fn pressure_from_demand(entry: &EntryPoint, frontend: &FrontendParams, matchable: u64, counts: PilotCounts) -> u32 {
    let desired = if matchable == 0 {
        0
    } else {
        (matchable as f64 * frontend.fraction).ceil() as u64 + frontend.min_idle as u64
    };
    let have = counts.idle as u64 + counts.queued as u64;
    let want = desired.saturating_sub(have);
    let cap_total = (entry.max_pilots as u64).saturating_sub(counts.alive as u64);
    let cap_idle = (entry.max_idle_pilots as u64).saturating_sub(have);
    want.min(cap_total).min(cap_idle) as u32
}

/// One request per entry, in the order given. Every idle job is counted at
/// every entry it matches.
pub fn frontend_cycle(
    entries: &[EntryPoint],
    frontend: &FrontendParams,
    idle_jobs: &[(&Ad, u64)],
    counts: &BTreeMap<String, PilotCounts>,
    cycle: u64,
) -> Vec<PilotRequest> {
    entries
        .iter()
        .map(|e| {
            let c = counts.get(&e.name).copied().unwrap_or_default();
            compute_pressure(e, frontend, idle_jobs, c, cycle)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FactoryDiagnostic {
    UnknownEntry(String),
    Untrusted(String),
    Truncated { entry: String, requested: u32, granted: u32 },
}

impl FactoryDiagnostic {
    pub fn entry(&self) -> &str {
        match self {
            FactoryDiagnostic::UnknownEntry(e) | FactoryDiagnostic::Untrusted(e) => e,
            FactoryDiagnostic::Truncated { entry, .. } => entry,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            FactoryDiagnostic::UnknownEntry(_) => "unknown_entry",
            FactoryDiagnostic::Untrusted(_) => "untrusted",
            FactoryDiagnostic::Truncated { .. } => "truncated",
        }
    }
}

impl fmt::Display for FactoryDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FactoryDiagnostic::UnknownEntry(e) => write!(f, "unknown entry '{e}'"),
            FactoryDiagnostic::Untrusted(e) => write!(f, "entry '{e}' is not trusted"),
            FactoryDiagnostic::Truncated { entry, requested, granted } => {
                write!(f, "entry '{entry}': request for {requested} truncated to {granted}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FactoryOutcome {
    pub pilots: Vec<Pilot>,
    pub diagnostics: Vec<FactoryDiagnostic>,
}

/// Creates REQUESTED pilots for each request, never letting an entry exceed
/// `max_pilots` alive. Requests for unknown or untrusted entries are skipped
/// with a diagnostic.
pub fn factory_submit(
    requests: &[PilotRequest],
    entries: &BTreeMap<String, EntryPoint>,
    alive: &BTreeMap<String, u32>,
    next_id: &mut u64,
    now: SimTime,
) -> FactoryOutcome {
    let mut out = FactoryOutcome::default();
    let mut alive = alive.clone();
    for req in requests.iter().filter(|r| r.requested > 0) {
        let Some(entry) = entries.get(&req.entry) else {
            out.diagnostics.push(FactoryDiagnostic::UnknownEntry(req.entry.clone()));
            continue;
        };
        if !entry.trusted {
            out.diagnostics.push(FactoryDiagnostic::Untrusted(req.entry.clone()));
            continue;
        }
        let live = alive.entry(entry.name.clone()).or_default();
        let n = req.requested.min(entry.max_pilots.saturating_sub(*live));
        if n < req.requested {
            out.diagnostics.push(FactoryDiagnostic::Truncated {
                entry: entry.name.clone(),
                requested: req.requested,
                granted: n,
            });
        }
        *live += n;
        for _ in 0..n {
            out.pilots.push(Pilot::new(PilotId(*next_id), &entry.name, &entry.site, now));
            *next_id += 1;
        }
    }
    out
}

/// Name of the slot a pilot advertises.
pub fn slot_name(pilot: PilotId, entry: &str) -> String {
    format!("glidein{pilot}@{entry}")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Bootstrap {
    Advertised(Box<SlotState>),
    Failed,
}

/// Finishes bootstrap for a BOOTSTRAPPING pilot. `roll` is a uniform draw in
/// [0, 1); below the entry's failure probability the pilot dies with
/// CE_FAILURE, otherwise it advertises an idle slot shaped like the entry.
pub fn pilot_bootstrap(
    pilot: &mut Pilot,
    entry: &EntryPoint,
    frontend: &FrontendParams,
    now: SimTime,
    roll: f64,
) -> Result<Bootstrap, GlideinError> {
    if pilot.state() != PilotState::Bootstrapping {
        return Err(GlideinError::NotBootstrapping(pilot.id));
    }
    if roll < entry.bootstrap_failure {
        pilot.kill(DeathCause::CeFailure, now)?;
        return Ok(Bootstrap::Failed);
    }
    let name = slot_name(pilot.id, &entry.name);
    let ad = synthetic_slot_ad(entry, frontend, &name).with_value("pilot", pilot.id.0 as i64);
    // The idle clock starts when the pilot starts, not when it finishes bootstrapping.
    let idle_since = pilot.started_at.unwrap_or(now);
    let slot = SlotState::new(ad, idle_since).expect("synthetic ads are named");
    pilot.advance(PilotState::Advertised, now)?;
    pilot.slot_name = Some(name);
    Ok(Bootstrap::Advertised(Box::new(slot)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TickAction {
    Nothing,
    /// The pilot died; withdraw its (unclaimed) slot.
    Die(DeathCause),
    /// Walltime reached while busy: stop taking work and check again at `deadline`.
    Drain { deadline: SimTime },
    /// Grace exhausted: evict the running job (PREEMPTED), then the pilot is dead.
    EvictAndDie(DeathCause),
}

/// Applies the retirement policy to an advertised or draining pilot.
pub fn pilot_tick(pilot: &mut Pilot, slot: &SlotState, shape: &PilotShape, grace: SimDuration, now: SimTime) -> TickAction {
    let busy = slot.claim().is_some();
    let started = pilot.started_at.unwrap_or(now);
    let walltime_at = started + shape.max_walltime.as_secs();
    match pilot.state() {
        PilotState::Advertised => {
            if now >= walltime_at {
                if !busy {
                    pilot.kill(DeathCause::Walltime, now).expect("alive");
                    return TickAction::Die(DeathCause::Walltime);
                }
                let deadline = walltime_at + grace.as_secs();
                pilot.advance(PilotState::Retiring, now).expect("advertised pilots can retire");
                pilot.drain_deadline = Some(deadline);
                if now >= deadline {
                    pilot.kill(DeathCause::Walltime, now).expect("alive");
                    return TickAction::EvictAndDie(DeathCause::Walltime);
                }
                return TickAction::Drain { deadline };
            }
            if !busy && now.saturating_sub(slot.idle_since) >= shape.idle_timeout.as_secs() {
                pilot.advance(PilotState::Retiring, now).expect("advertised pilots can retire");
                pilot.kill(DeathCause::IdleTimeout, now).expect("alive");
                return TickAction::Die(DeathCause::IdleTimeout);
            }
            TickAction::Nothing
        }
        PilotState::Retiring => {
            let deadline = pilot.drain_deadline.unwrap_or(walltime_at);
            if !busy {
                pilot.kill(DeathCause::Walltime, now).expect("alive");
                TickAction::Die(DeathCause::Walltime)
            } else if now >= deadline {
                pilot.kill(DeathCause::Walltime, now).expect("alive");
                TickAction::EvictAndDie(DeathCause::Walltime)
            } else {
                TickAction::Nothing
            }
        }
        _ => TickAction::Nothing,
    }
}
