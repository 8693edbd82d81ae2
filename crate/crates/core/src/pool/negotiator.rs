use std::collections::{BTreeMap, HashMap};

use crate::matchlang::{compare_ranked, name_key, rank_value, symmetric_match, Ad};

use super::{ClusterId, JobId, JobState, PriorityConfig, UserRecord};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Match {
    pub job: JobId,
    pub slot: String,
    pub schedd: String,
    pub owner: String,
    pub cycle: u64,
}

/// Splits `pie` into integer parts proportional to `weights`, handing the
/// leftover units to the largest fractional remainders (earlier index wins ties).
pub fn largest_remainder(pie: u64, weights: &[f64]) -> Vec<u64> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || total <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| pie as f64 * w / total).collect();
    let mut parts: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
    let assigned: u64 = parts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(pie.saturating_sub(assigned) as usize) {
        parts[i] += 1;
    }
    parts
}

/// Candidate slots for one job ad, best first, consumed from the front.
struct Candidates {
    slots: Vec<usize>,
    cursor: usize,
}

impl Candidates {
    fn build(job: &Ad, slots: &[&Ad], names: &[String]) -> Candidates {
        let mut keyed: Vec<((f64, String), usize)> = slots
            .iter()
            .enumerate()
            .filter(|(_, s)| symmetric_match(job, s))
            .map(|(i, s)| ((rank_value(job, s), names[i].clone()), i))
            .collect();
        keyed.sort_by(|a, b| compare_ranked(&a.0, &b.0));
        Candidates {
            slots: keyed.into_iter().map(|(_, i)| i).collect(),
            cursor: 0,
        }
    }

    fn next_free(&mut self, taken: &[bool]) -> Option<usize> {
        while let Some(&i) = self.slots.get(self.cursor) {
            if !taken[i] {
                return Some(i);
            }
            self.cursor += 1;
        }
        None
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum CacheKey {
    Cluster(ClusterId),
    Job(JobId),
}

struct Participant<'a> {
    name: &'a str,
    jobs: &'a [&'a JobState],
    next: usize,
    running: u64,
    matched: u64,
    eff: f64,
}

/// One negotiation cycle.
///
/// `jobs` holds each owner's idle jobs in submission order, `slots` the idle
/// slot ads, and `running` the number of slots each owner already holds; the
/// fair-share pie is the idle slots plus what the competing owners hold.
/// Owners are served best (lowest) effective priority first in rounds capped
/// by their share, until nothing changes; slots nobody claimed under quota are
/// then offered to everyone in the same order.
///
/// Jobs with the same cluster id must have ads that differ at most in `name`.
pub fn negotiate(
    cycle: u64,
    jobs: &BTreeMap<String, Vec<&JobState>>,
    slots: &[&Ad],
    users: &BTreeMap<String, UserRecord>,
    running: &BTreeMap<String, u64>,
) -> Vec<Match> {
    let names: Vec<String> = slots.iter().map(|s| name_key(s)).collect();
    // A slot that mentions `name` may treat same-cluster jobs differently.
    let per_job = slots.iter().any(|s| s.iter().any(|(_, e)| e.references("name")));

    let default_cfg = PriorityConfig::default();
    let mut people: Vec<Participant> = jobs
        .iter()
        .filter(|(_, js)| !js.is_empty())
        .map(|(owner, js)| {
            let eff = users
                .get(owner)
                .map(UserRecord::effective_priority)
                .unwrap_or(default_cfg.floor);
            Participant {
                name: owner,
                jobs: js,
                next: 0,
                running: running.get(owner).copied().unwrap_or(0),
                matched: 0,
                eff,
            }
        })
        .collect();
    people.sort_by(|a, b| a.eff.total_cmp(&b.eff).then_with(|| a.name.cmp(b.name)));

    let mut taken = vec![false; slots.len()];
    let mut remaining = slots.len() as u64;
    let mut cache: HashMap<CacheKey, Candidates> = HashMap::new();
    let mut out = Vec::new();

    let mut try_job = |job: &JobState, taken: &mut Vec<bool>, remaining: &mut u64| -> bool {
        let key = if per_job {
            CacheKey::Job(job.id)
        } else {
            CacheKey::Cluster(job.cluster)
        };
        let cands = cache
            .entry(key)
            .or_insert_with(|| Candidates::build(&job.ad, slots, &names));
        match cands.next_free(taken) {
            Some(i) => {
                taken[i] = true;
                *remaining -= 1;
                out.push(Match {
                    job: job.id,
                    slot: names[i].clone(),
                    schedd: job.schedd.clone(),
                    owner: job.owner.clone(),
                    cycle,
                });
                true
            }
            None => false,
        }
    };

    let mut active: Vec<usize> = (0..people.len()).collect();
    while remaining > 0 && !active.is_empty() {
        let pie = remaining + active.iter().map(|&u| people[u].running + people[u].matched).sum::<u64>();
        let weights: Vec<f64> = active.iter().map(|&u| 1.0 / people[u].eff).collect();
        let targets = largest_remainder(pie, &weights);
        let mut progress = false;
        for (k, &u) in active.iter().enumerate() {
            let p = &mut people[u];
            let quota = targets[k].saturating_sub(p.running + p.matched);
            let mut got = 0;
            while got < quota && remaining > 0 && p.next < p.jobs.len() {
                let job = p.jobs[p.next];
                p.next += 1;
                if try_job(job, &mut taken, &mut remaining) {
                    got += 1;
                }
            }
            p.matched += got;
            progress |= got > 0;
        }
        active.retain(|&u| people[u].next < people[u].jobs.len());
        if !progress {
            break;
        }
    }

    for p in people.iter_mut() {
        while remaining > 0 && p.next < p.jobs.len() {
            let job = p.jobs[p.next];
            p.next += 1;
            try_job(job, &mut taken, &mut remaining);
        }
    }
    out
}
