use std::fmt;

use crate::time::SimTime;

use super::GlideinError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PilotId(pub u64);

impl fmt::Display for PilotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PilotState {
    Requested,
    CeQueued,
    Bootstrapping,
    Advertised,
    Retiring,
    Dead,
}

impl PilotState {
    pub fn as_str(self) -> &'static str {
        match self {
            PilotState::Requested => "REQUESTED",
            PilotState::CeQueued => "CE_QUEUED",
            PilotState::Bootstrapping => "BOOTSTRAPPING",
            PilotState::Advertised => "ADVERTISED",
            PilotState::Retiring => "RETIRING",
            PilotState::Dead => "DEAD",
        }
    }

    fn next(self) -> Option<PilotState> {
        use PilotState::*;
        match self {
            Requested => Some(CeQueued),
            CeQueued => Some(Bootstrapping),
            Bootstrapping => Some(Advertised),
            Advertised => Some(Retiring),
            Retiring => Some(Dead),
            Dead => None,
        }
    }

    /// Submitted but not yet advertising a slot.
    pub fn is_queued(self) -> bool {
        matches!(self, PilotState::Requested | PilotState::CeQueued | PilotState::Bootstrapping)
    }
}

impl fmt::Display for PilotState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DeathCause {
    Walltime,
    IdleTimeout,
    Preempted,
    CeFailure,
    /// Withdrawn by the factory before it started because demand went away.
    Removed,
}

impl DeathCause {
    pub const ALL: [DeathCause; 5] = [
        DeathCause::Walltime,
        DeathCause::IdleTimeout,
        DeathCause::Preempted,
        DeathCause::CeFailure,
        DeathCause::Removed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DeathCause::Walltime => "WALLTIME",
            DeathCause::IdleTimeout => "IDLE_TIMEOUT",
            DeathCause::Preempted => "PREEMPTED",
            DeathCause::CeFailure => "CE_FAILURE",
            DeathCause::Removed => "REMOVED",
        }
    }

    pub fn parse(s: &str) -> Option<DeathCause> {
        DeathCause::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for DeathCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pilot {
    pub id: PilotId,
    pub entry: String,
    pub site: String,
    state: PilotState,
    pub submitted_at: SimTime,
    pub started_at: Option<SimTime>,
    /// Time of death.
    pub retired_at: Option<SimTime>,
    pub slot_name: Option<String>,
    pub death_cause: Option<DeathCause>,
    /// End of the walltime grace period once draining.
    pub drain_deadline: Option<SimTime>,
}

impl Pilot {
    pub fn new(id: PilotId, entry: &str, site: &str, now: SimTime) -> Pilot {
        Pilot {
            id,
            entry: entry.to_string(),
            site: site.to_string(),
            state: PilotState::Requested,
            submitted_at: now,
            started_at: None,
            retired_at: None,
            slot_name: None,
            death_cause: None,
            drain_deadline: None,
        }
    }

    pub fn state(&self) -> PilotState {
        self.state
    }

    pub fn is_alive(&self) -> bool {
        self.state != PilotState::Dead
    }

    /// Moves one step along the lifecycle.
    pub fn advance(&mut self, to: PilotState, now: SimTime) -> Result<(), GlideinError> {
        if self.state.next() != Some(to) || to == PilotState::Dead {
            return Err(GlideinError::BadPilotTransition {
                pilot: self.id,
                from: self.state,
                to,
            });
        }
        if to == PilotState::Bootstrapping {
            self.started_at = Some(now);
        }
        self.state = to;
        Ok(())
    }

    pub fn kill(&mut self, cause: DeathCause, now: SimTime) -> Result<(), GlideinError> {
        if self.state == PilotState::Dead {
            return Err(GlideinError::BadPilotTransition {
                pilot: self.id,
                from: self.state,
                to: PilotState::Dead,
            });
        }
        self.retired_at = Some(now);
        self.state = PilotState::Dead;
        self.death_cause = Some(cause);
        Ok(())
    }

    /// Time the pilot was (or has been) running at the site.
    pub fn lifetime(&self, now: SimTime) -> Option<u64> {
        let start = self.started_at?;
        let end = if self.state == PilotState::Dead {
            self.retired_at.unwrap_or(now)
        } else {
            now
        };
        Some(end.saturating_sub(start))
    }
}
