use std::fmt;

use crate::matchlang::{Ad, Expr, Value};
use crate::time::SimTime;

use super::JobId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClaimId(pub u64);

impl fmt::Display for ClaimId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SlotStatus {
    Idle,
    Claimed,
    Busy,
    Retiring,
}

impl SlotStatus {
    /// Value of the `status` attribute in the slot's ad.
    pub fn as_str(self) -> &'static str {
        match self {
            SlotStatus::Idle => "idle",
            SlotStatus::Claimed => "claimed",
            SlotStatus::Busy => "busy",
            SlotStatus::Retiring => "retiring",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Claim {
    pub claim_id: ClaimId,
    pub job: JobId,
    pub schedd: String,
    pub owner: String,
    pub since: SimTime,
    /// Resources charged to the owner while the claim is held.
    pub cpus: u32,
    pub gpus: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotState {
    pub name: String,
    pub ad: Ad,
    status: SlotStatus,
    claim: Option<Claim>,
    /// Start of the current idle stretch.
    pub idle_since: SimTime,
}

impl SlotState {
    /// A fresh idle slot; the ad's `status` attribute is kept in sync.
    pub fn new(ad: Ad, now: SimTime) -> Option<SlotState> {
        let name = ad.name()?.to_string();
        let mut slot = SlotState {
            name,
            ad,
            status: SlotStatus::Idle,
            claim: None,
            idle_since: now,
        };
        slot.sync_ad();
        Some(slot)
    }

    pub fn status(&self) -> SlotStatus {
        self.status
    }

    pub fn claim(&self) -> Option<&Claim> {
        self.claim.as_ref()
    }

    pub fn cpus(&self) -> u32 {
        self.ad.int_attr("cpus").unwrap_or(0).max(0) as u32
    }

    pub fn gpus(&self) -> u32 {
        self.ad.int_attr("gpus").unwrap_or(0).max(0) as u32
    }

    pub(crate) fn set_claimed(&mut self, claim: Claim) {
        self.claim = Some(claim);
        self.status = SlotStatus::Claimed;
        self.sync_ad();
    }

    pub(crate) fn set_busy(&mut self) {
        debug_assert!(self.claim.is_some());
        self.status = SlotStatus::Busy;
        self.sync_ad();
    }

    pub(crate) fn take_claim(&mut self, now: SimTime) -> Option<Claim> {
        let c = self.claim.take();
        self.status = SlotStatus::Idle;
        self.idle_since = now;
        self.sync_ad();
        c
    }

    /// Marks an unclaimed slot as going away; it takes no further matches.
    pub fn set_retiring(&mut self) {
        if self.claim.is_none() {
            self.status = SlotStatus::Retiring;
            self.sync_ad();
        }
    }

    fn sync_ad(&mut self) {
        self.ad
            .set("status", Expr::Literal(Value::from(self.status.as_str())));
    }
}
