use std::fmt;

use crate::matchlang::Ad;
use crate::time::SimTime;

use super::PoolError;

/// Job identifier; ids are handed out in submission order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JobId(pub u64);

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Jobs whose ads are identical apart from `name` share a cluster and
/// therefore share match results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClusterId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum JobStatus {
    Idle,
    Matched,
    Running,
    Completed,
    Held,
}

impl JobStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            JobStatus::Idle => "IDLE",
            JobStatus::Matched => "MATCHED",
            JobStatus::Running => "RUNNING",
            JobStatus::Completed => "COMPLETED",
            JobStatus::Held => "HELD",
        }
    }

    /// The forward path, holds, and the two ways back to the queue: a lost
    /// claim race (MATCHED) and an eviction (RUNNING).
    pub fn can_become(self, to: JobStatus) -> bool {
        use JobStatus::*;
        matches!(
            (self, to),
            (Idle, Matched)
                | (Matched, Running)
                | (Running, Completed)
                | (Matched, Idle)
                | (Running, Idle)
                | (Held, Idle)
        ) || (to == Held && self != Held)
    }
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobState {
    pub id: JobId,
    pub ad: Ad,
    pub owner: String,
    pub schedd: String,
    pub cluster: ClusterId,
    pub submitted_at: SimTime,
    status: JobStatus,
}

impl JobState {
    pub fn new(id: JobId, ad: Ad, owner: &str, schedd: &str, cluster: ClusterId, now: SimTime) -> Self {
        JobState {
            id,
            ad,
            owner: owner.to_string(),
            schedd: schedd.to_string(),
            cluster,
            submitted_at: now,
            status: JobStatus::Idle,
        }
    }

    pub fn status(&self) -> JobStatus {
        self.status
    }

    pub fn transition(&mut self, to: JobStatus) -> Result<(), PoolError> {
        if !self.status.can_become(to) {
            return Err(PoolError::BadJobTransition {
                job: self.id,
                from: self.status,
                to,
            });
        }
        self.status = to;
        Ok(())
    }

    pub fn request_cpus(&self) -> u32 {
        self.ad.int_attr("requestcpus").unwrap_or(1).max(1) as u32
    }

    pub fn request_gpus(&self) -> u32 {
        self.ad.int_attr("requestgpus").unwrap_or(0).max(0) as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use JobStatus::*;

    #[test]
    fn transition_table() {
        let all = [Idle, Matched, Running, Completed, Held];
        let allowed = [
            (Idle, Matched),
            (Matched, Running),
            (Running, Completed),
            (Matched, Idle),
            (Running, Idle),
            (Held, Idle),
            (Idle, Held),
            (Matched, Held),
            (Running, Held),
            (Completed, Held),
        ];
        for from in all {
            for to in all {
                assert_eq!(from.can_become(to), allowed.contains(&(from, to)), "{from} -> {to}");
            }
        }
    }
}
