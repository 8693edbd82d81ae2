//! Central manager and execution core: the collector, user priorities, job
//! queues, the fair-share negotiator, and the claim protocol.

mod collector;
mod job;
mod negotiator;
mod priority;
mod slot;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::matchlang::{write_ads, Ad, AdKind};
use crate::time::{SimDuration, SimTime};

pub use collector::{CollectorState, DEFAULT_MISSED_UPDATES_LIMIT, DEFAULT_UPDATE_INTERVAL};
pub use job::{ClusterId, JobId, JobState, JobStatus};
pub use negotiator::{largest_remainder, negotiate, Match};
pub use priority::{
    decay_user_priority, PriorityConfig, UserRecord, DEFAULT_HALF_LIFE, DEFAULT_PRIORITY_FLOOR,
};
pub use slot::{Claim, ClaimId, SlotState, SlotStatus};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoolError {
    #[error("{0} ad has no literal name")]
    UnnamedAd(AdKind),
    #[error("invalid job ad: {0}")]
    InvalidJob(String),
    #[error("job {job}: cannot go from {from} to {to}")]
    BadJobTransition { job: JobId, from: JobStatus, to: JobStatus },
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("unknown slot '{0}'")]
    UnknownSlot(String),
    #[error("duplicate slot '{0}'")]
    DuplicateSlot(String),
    #[error("slot '{0}' is still claimed")]
    SlotClaimed(String),
    #[error("claim race: slot '{slot}' is not idle; job {job} requeued")]
    ClaimRace { slot: String, job: JobId },
    #[error("unknown claim {0}")]
    UnknownClaim(ClaimId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ReleaseReason {
    Completed,
    Preempted,
    PilotRetired,
}

impl ReleaseReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ReleaseReason::Completed => "COMPLETED",
            ReleaseReason::Preempted => "PREEMPTED",
            ReleaseReason::PilotRetired => "PILOT_RETIRED",
        }
    }
}

impl fmt::Display for ReleaseReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a finished claim charged to its owner.
#[derive(Debug, Clone, PartialEq)]
pub struct Released {
    pub claim: Claim,
    pub slot: String,
    pub reason: ReleaseReason,
    pub core_seconds: u64,
    pub gpu_seconds: u64,
}

/// Schedd queues, startd slots, collector and accountant of one pool.
#[derive(Debug, Clone)]
pub struct Pool {
    pub collector: CollectorState,
    priority: PriorityConfig,
    jobs: Vec<JobState>,
    slots: BTreeMap<String, SlotState>,
    users: BTreeMap<String, UserRecord>,
    claims: BTreeMap<ClaimId, String>,
    idle: BTreeMap<String, BTreeSet<JobId>>,
    idle_per_cluster: BTreeMap<ClusterId, u64>,
    cluster_ids: HashMap<String, ClusterId>,
    cluster_reps: Vec<JobId>,
    held_slots: BTreeMap<String, u64>,
    held_cpus: BTreeMap<String, u64>,
    next_claim: u64,
    last_priority_update: SimTime,
    dirty: bool,
}

impl Pool {
    pub fn new(collector: CollectorState, priority: PriorityConfig) -> Pool {
        Pool {
            collector,
            priority,
            jobs: Vec::new(),
            slots: BTreeMap::new(),
            users: BTreeMap::new(),
            claims: BTreeMap::new(),
            idle: BTreeMap::new(),
            idle_per_cluster: BTreeMap::new(),
            cluster_ids: HashMap::new(),
            cluster_reps: Vec::new(),
            held_slots: BTreeMap::new(),
            held_cpus: BTreeMap::new(),
            next_claim: 1,
            last_priority_update: 0,
            dirty: false,
        }
    }

    pub fn add_user(&mut self, name: &str, priority_factor: f64) {
        self.users
            .entry(name.to_string())
            .or_insert_with(|| UserRecord::new(name, priority_factor, self.priority));
    }

    pub fn users(&self) -> &BTreeMap<String, UserRecord> {
        &self.users
    }

    pub fn job(&self, id: JobId) -> Option<&JobState> {
        self.jobs.get(id.0 as usize)
    }

    pub fn jobs(&self) -> &[JobState] {
        &self.jobs
    }

    pub fn slot(&self, name: &str) -> Option<&SlotState> {
        self.slots.get(name)
    }

    pub fn slots(&self) -> impl Iterator<Item = &SlotState> {
        self.slots.values()
    }

    pub fn slot_mut(&mut self, name: &str) -> Option<&mut SlotState> {
        self.slots.get_mut(name)
    }

    pub fn idle_job_count(&self) -> usize {
        self.idle.values().map(BTreeSet::len).sum()
    }

    /// One representative ad per cluster with its number of idle jobs, in cluster order.
    pub fn idle_clusters(&self) -> Vec<(&Ad, u64)> {
        self.idle_per_cluster
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|(c, &n)| (&self.jobs[self.cluster_reps[c.0 as usize].0 as usize].ad, n))
            .collect()
    }

    /// Slots currently claimed by each owner.
    pub fn held_slots(&self) -> &BTreeMap<String, u64> {
        &self.held_slots
    }

    /// Queues a job. Its ad needs `requirements`, and `requestcpus`/`requestgpus`
    /// when present must be at least 1 and 0 respectively.
    pub fn submit(&mut self, ad: Ad, owner: &str, schedd: &str, now: SimTime) -> Result<JobId, PoolError> {
        if ad.kind() != AdKind::Job {
            return Err(PoolError::InvalidJob(format!("expected a job ad, got {}", ad.kind())));
        }
        ad.validate().map_err(|e| PoolError::InvalidJob(e.to_string()))?;
        if ad.int_attr("requestcpus").is_some_and(|c| c < 1) {
            return Err(PoolError::InvalidJob("requestcpus must be at least 1".into()));
        }
        if ad.int_attr("requestgpus").is_some_and(|g| g < 0) {
            return Err(PoolError::InvalidJob("requestgpus must not be negative".into()));
        }
        self.add_user(owner, 1.0);
        let id = JobId(self.jobs.len() as u64);
        let cluster = self.cluster_of(&ad, id);
        self.jobs.push(JobState::new(id, ad, owner, schedd, cluster, now));
        self.mark_idle(id);
        Ok(id)
    }

    fn cluster_of(&mut self, ad: &Ad, id: JobId) -> ClusterId {
        let mut key_ad = ad.clone();
        if !ad.iter().any(|(_, e)| e.references("name")) {
            key_ad.remove("name");
        }
        let key = key_ad.to_string();
        let next = ClusterId(self.cluster_reps.len() as u32);
        let c = *self.cluster_ids.entry(key).or_insert(next);
        if c == next {
            self.cluster_reps.push(id);
        }
        c
    }

    fn mark_idle(&mut self, id: JobId) {
        let job = &self.jobs[id.0 as usize];
        self.idle.entry(job.owner.clone()).or_default().insert(id);
        *self.idle_per_cluster.entry(job.cluster).or_default() += 1;
        self.dirty = true;
    }

    fn unmark_idle(&mut self, id: JobId) {
        let job = &self.jobs[id.0 as usize];
        if let Some(set) = self.idle.get_mut(&job.owner) {
            set.remove(&id);
        }
        if let Some(n) = self.idle_per_cluster.get_mut(&job.cluster) {
            *n -= 1;
        }
    }

    /// Puts a held or otherwise stopped job on hold.
    pub fn hold(&mut self, id: JobId) -> Result<(), PoolError> {
        let status = self.job(id).ok_or(PoolError::UnknownJob(id))?.status();
        self.jobs[id.0 as usize].transition(JobStatus::Held)?;
        if status == JobStatus::Idle {
            self.unmark_idle(id);
        }
        Ok(())
    }

    pub fn unhold(&mut self, id: JobId) -> Result<(), PoolError> {
        let job = self.jobs.get_mut(id.0 as usize).ok_or(PoolError::UnknownJob(id))?;
        if job.status() != JobStatus::Held {
            return Err(PoolError::BadJobTransition { job: id, from: job.status(), to: JobStatus::Idle });
        }
        job.transition(JobStatus::Idle)?;
        self.mark_idle(id);
        Ok(())
    }

    /// Registers a new idle slot and advertises it.
    pub fn add_slot(&mut self, ad: Ad, now: SimTime) -> Result<&SlotState, PoolError> {
        let slot = SlotState::new(ad, now).ok_or(PoolError::UnnamedAd(AdKind::Slot))?;
        self.insert_slot(slot, now)
    }

    /// Registers a prepared slot, keeping its idle clock, and advertises it.
    pub fn insert_slot(&mut self, slot: SlotState, now: SimTime) -> Result<&SlotState, PoolError> {
        if self.slots.contains_key(&slot.name) {
            return Err(PoolError::DuplicateSlot(slot.name));
        }
        self.collector.advertise(slot.ad.clone(), now)?;
        let name = slot.name.clone();
        self.slots.insert(name.clone(), slot);
        self.dirty = true;
        Ok(&self.slots[&name])
    }

    /// Drops an unclaimed slot. With `withdraw` its ad leaves the collector
    /// too; otherwise the ad lingers until it expires.
    pub fn remove_slot(&mut self, name: &str, withdraw: bool) -> Result<SlotState, PoolError> {
        let slot = self.slots.get(name).ok_or_else(|| PoolError::UnknownSlot(name.to_string()))?;
        if slot.claim().is_some() {
            return Err(PoolError::SlotClaimed(name.to_string()));
        }
        if withdraw {
            self.collector.withdraw(AdKind::Slot, name);
        }
        Ok(self.slots.remove(name).expect("checked above"))
    }

    /// Marks an idle slot as retiring and re-advertises it.
    pub fn retire_slot(&mut self, name: &str, now: SimTime) -> Result<(), PoolError> {
        let slot = self.slots.get_mut(name).ok_or_else(|| PoolError::UnknownSlot(name.to_string()))?;
        slot.set_retiring();
        let ad = slot.ad.clone();
        self.collector.advertise(ad, now)
    }

    /// Heartbeat from every live slot.
    pub fn refresh_slot_ads(&mut self, now: SimTime) {
        for slot in self.slots.values() {
            if !self.collector.refresh(AdKind::Slot, &slot.name, now) {
                // Expired while alive (cannot happen with a refresh every interval,
                // but a live startd always re-registers).
                let _ = self.collector.advertise(slot.ad.clone(), now);
            }
        }
    }

    /// True when jobs or slots became idle since the last negotiation; a clean
    /// pool cannot produce new matches.
    pub fn needs_negotiation(&self) -> bool {
        self.dirty
    }

    /// Decays every user's real priority toward the cores they hold right now.
    pub fn update_priorities(&mut self, now: SimTime) {
        let dt = now.saturating_sub(self.last_priority_update);
        if dt == 0 {
            return;
        }
        for u in self.users.values_mut() {
            let usage = self.held_cpus.get(&u.user).copied().unwrap_or(0) as f64;
            *u = decay_user_priority(u, usage, SimDuration(dt));
        }
        self.last_priority_update = now;
    }

    /// Runs the negotiator over idle jobs and the collector's idle slot ads and
    /// marks the matched jobs MATCHED. Ads of slots that are gone are still
    /// offered; claiming them loses the race.
    pub fn negotiate(&mut self, cycle: u64) -> Vec<Match> {
        self.dirty = false;
        let matches = {
            let slot_ads: Vec<&Ad> = self.collector.idle_slot_ads().collect();
            if slot_ads.is_empty() {
                return Vec::new();
            }
            let jobs: BTreeMap<String, Vec<&JobState>> = self
                .idle
                .iter()
                .filter(|(_, ids)| !ids.is_empty())
                .map(|(owner, ids)| (owner.clone(), ids.iter().map(|id| &self.jobs[id.0 as usize]).collect()))
                .collect();
            negotiate(cycle, &jobs, &slot_ads, &self.users, &self.held_slots)
        };
        for m in &matches {
            self.unmark_idle(m.job);
            self.jobs[m.job.0 as usize]
                .transition(JobStatus::Matched)
                .expect("idle jobs can be matched");
        }
        matches
    }

    /// Claims `slot` for a MATCHED job, which becomes RUNNING. If the slot is
    /// gone or no longer idle the job goes back to the queue.
    pub fn claim(&mut self, slot_name: &str, job: JobId, now: SimTime) -> Result<ClaimId, PoolError> {
        let state = self.jobs.get(job.0 as usize).ok_or(PoolError::UnknownJob(job))?;
        if state.status() != JobStatus::Matched {
            return Err(PoolError::BadJobTransition { job, from: state.status(), to: JobStatus::Running });
        }
        let free = self
            .slots
            .get(slot_name)
            .is_some_and(|s| s.status() == SlotStatus::Idle);
        if !free {
            self.jobs[job.0 as usize].transition(JobStatus::Idle)?;
            self.mark_idle(job);
            return Err(PoolError::ClaimRace { slot: slot_name.to_string(), job });
        }
        let state = &mut self.jobs[job.0 as usize];
        state.transition(JobStatus::Running)?;
        let claim_id = ClaimId(self.next_claim);
        self.next_claim += 1;
        let claim = Claim {
            claim_id,
            job,
            schedd: state.schedd.clone(),
            owner: state.owner.clone(),
            since: now,
            cpus: state.request_cpus(),
            gpus: state.request_gpus(),
        };
        *self.held_slots.entry(claim.owner.clone()).or_default() += 1;
        *self.held_cpus.entry(claim.owner.clone()).or_default() += claim.cpus as u64;
        let slot = self.slots.get_mut(slot_name).expect("checked above");
        slot.set_claimed(claim);
        slot.set_busy();
        let ad = slot.ad.clone();
        self.collector.advertise(ad, now)?;
        self.claims.insert(claim_id, slot_name.to_string());
        Ok(claim_id)
    }

    pub fn claim_slot(&self, claim: ClaimId) -> Option<&str> {
        self.claims.get(&claim).map(String::as_str)
    }

    /// Ends a claim. The slot becomes idle; the job completes or is requeued;
    /// the owner is charged claimed cpus/gpus times the claim's duration.
    pub fn release(&mut self, claim_id: ClaimId, reason: ReleaseReason, now: SimTime) -> Result<Released, PoolError> {
        let slot_name = self.claims.remove(&claim_id).ok_or(PoolError::UnknownClaim(claim_id))?;
        let slot = self.slots.get_mut(&slot_name).expect("claims point at live slots");
        let claim = slot.take_claim(now).expect("claimed slot holds its claim");
        let ad = slot.ad.clone();
        self.collector.advertise(ad, now)?;
        self.dirty = true;

        let elapsed = now - claim.since;
        let core_seconds = claim.cpus as u64 * elapsed;
        let gpu_seconds = claim.gpus as u64 * elapsed;
        if let Some(user) = self.users.get_mut(&claim.owner) {
            user.usage_core_seconds += core_seconds;
            user.gpu_seconds += gpu_seconds;
        }
        if let Some(n) = self.held_slots.get_mut(&claim.owner) {
            *n -= 1;
        }
        if let Some(n) = self.held_cpus.get_mut(&claim.owner) {
            *n -= claim.cpus as u64;
        }
        let job = &mut self.jobs[claim.job.0 as usize];
        if reason == ReleaseReason::Completed {
            job.transition(JobStatus::Completed)?;
        } else {
            job.transition(JobStatus::Idle)?;
            self.mark_idle(claim.job);
        }
        Ok(Released {
            claim,
            slot: slot_name,
            reason,
            core_seconds,
            gpu_seconds,
        })
    }

    /// The collector's contents in the ad text format.
    pub fn snapshot_text(&self) -> String {
        let ads: Vec<Ad> = self.collector.iter().map(|(ad, _)| ad.clone()).collect();
        write_ads(&ads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn job_ad(owner: &str, i: u32) -> Ad {
        Ad::new(AdKind::Job)
            .with_value("name", format!("{owner}.{i}"))
            .with_value("owner", owner)
            .with_value("requestcpus", 2i64)
            .with_value("requirements", true)
    }

    fn slot_ad(name: &str) -> Ad {
        Ad::new(AdKind::Slot)
            .with_value("name", name)
            .with_value("cpus", 8i64)
            .with_value("requirements", true)
    }

    fn pool() -> Pool {
        Pool::new(CollectorState::default(), PriorityConfig::default())
    }

    #[test]
    fn claim_then_complete_charges_usage() {
        let mut p = pool();
        let j = p.submit(job_ad("alice", 0), "alice", "schedd", 0).unwrap();
        p.add_slot(slot_ad("s1"), 0).unwrap();
        let m = p.negotiate(1);
        assert_eq!(m.len(), 1);
        let c = p.claim("s1", j, 100).unwrap();
        assert_eq!(p.job(j).unwrap().status(), JobStatus::Running);
        assert_eq!(p.slot("s1").unwrap().status(), SlotStatus::Busy);
        let r = p.release(c, ReleaseReason::Completed, 100 + 7200).unwrap();
        assert_eq!(r.core_seconds, 2 * 7200);
        assert_eq!(p.users()["alice"].accumulated_usage(), 4.0);
        assert_eq!(p.job(j).unwrap().status(), JobStatus::Completed);
        assert_eq!(p.slot("s1").unwrap().status(), SlotStatus::Idle);
    }

    #[test]
    fn claim_race_requeues() {
        let mut p = pool();
        let a = p.submit(job_ad("alice", 0), "alice", "schedd", 0).unwrap();
        let b = p.submit(job_ad("alice", 1), "alice", "schedd", 0).unwrap();
        p.add_slot(slot_ad("s1"), 0).unwrap();
        p.negotiate(1);
        p.claim("s1", a, 0).unwrap();
        // Force a second match onto the same slot.
        p.jobs[b.0 as usize].transition(JobStatus::Matched).unwrap();
        p.unmark_idle(b);
        let err = p.claim("s1", b, 0).unwrap_err();
        assert!(matches!(err, PoolError::ClaimRace { .. }));
        assert_eq!(p.job(b).unwrap().status(), JobStatus::Idle);
        assert_eq!(p.idle_job_count(), 1);
    }

    #[test]
    fn preempted_release_requeues() {
        let mut p = pool();
        let j = p.submit(job_ad("bob", 0), "bob", "schedd", 0).unwrap();
        p.add_slot(slot_ad("s1"), 0).unwrap();
        p.negotiate(1);
        let c = p.claim("s1", j, 0).unwrap();
        p.release(c, ReleaseReason::Preempted, 60).unwrap();
        assert_eq!(p.job(j).unwrap().status(), JobStatus::Idle);
        assert!(p.needs_negotiation());
        let m = p.negotiate(2);
        assert_eq!(m[0].job, j);
        assert!(matches!(p.release(c, ReleaseReason::Completed, 61), Err(PoolError::UnknownClaim(_))));
    }

    #[test]
    fn clusters_ignore_name() {
        let mut p = pool();
        for i in 0..5 {
            p.submit(job_ad("alice", i), "alice", "schedd", 0).unwrap();
        }
        p.submit(job_ad("bob", 0), "bob", "schedd", 0).unwrap();
        let c = p.idle_clusters();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].1, 5);
    }

    #[test]
    fn snapshot_round_trips() {
        let mut p = pool();
        p.add_slot(slot_ad("s1"), 0).unwrap();
        p.add_slot(slot_ad("s2"), 0).unwrap();
        let text = p.snapshot_text();
        let ads = crate::matchlang::parse_ads(&text).unwrap();
        assert_eq!(ads.len(), 2);
        assert_eq!(ads[0].text_attr("status"), Some("idle"));
    }
}
