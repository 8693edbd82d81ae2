use std::collections::{BTreeMap, BTreeSet};

use crate::matchlang::{evaluate, Ad, AdKind, Expr};
use crate::time::{SimDuration, SimTime};

use super::{PoolError, SlotStatus};

pub const DEFAULT_UPDATE_INTERVAL: SimDuration = SimDuration(300);
pub const DEFAULT_MISSED_UPDATES_LIMIT: u32 = 3;

/// Registry of the most recent ad from every pool member.
#[derive(Debug, Clone)]
pub struct CollectorState {
    ads: BTreeMap<AdKind, BTreeMap<String, (Ad, SimTime)>>,
    /// Names of slot ads currently advertising an idle status.
    idle_slots: BTreeSet<String>,
    pub update_interval: SimDuration,
    pub missed_updates_limit: u32,
}

impl Default for CollectorState {
    fn default() -> Self {
        CollectorState::new(DEFAULT_UPDATE_INTERVAL, DEFAULT_MISSED_UPDATES_LIMIT)
    }
}

fn advertises_idle(ad: &Ad) -> bool {
    ad.kind() == AdKind::Slot && ad.text_attr("status") == Some(SlotStatus::Idle.as_str())
}

impl CollectorState {
    pub fn new(update_interval: SimDuration, missed_updates_limit: u32) -> Self {
        CollectorState {
            ads: BTreeMap::new(),
            idle_slots: BTreeSet::new(),
            update_interval,
            missed_updates_limit,
        }
    }

    pub fn len(&self) -> usize {
        self.ads.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Seconds of silence after which an ad is dropped.
    pub fn lifetime(&self) -> u64 {
        self.update_interval.as_secs() * self.missed_updates_limit as u64
    }

    /// Inserts or replaces the ad keyed by its kind and literal `name`.
    pub fn advertise(&mut self, ad: Ad, now: SimTime) -> Result<(), PoolError> {
        let name = ad.name().ok_or(PoolError::UnnamedAd(ad.kind()))?.to_string();
        if ad.kind() == AdKind::Slot {
            if advertises_idle(&ad) {
                self.idle_slots.insert(name.clone());
            } else {
                self.idle_slots.remove(&name);
            }
        }
        self.ads.entry(ad.kind()).or_default().insert(name, (ad, now));
        Ok(())
    }

    /// Refreshes the heartbeat of an existing ad without changing it.
    pub fn refresh(&mut self, kind: AdKind, name: &str, now: SimTime) -> bool {
        match self.ads.get_mut(&kind).and_then(|m| m.get_mut(name)) {
            Some(entry) => {
                entry.1 = now;
                true
            }
            None => false,
        }
    }

    pub fn withdraw(&mut self, kind: AdKind, name: &str) -> Option<Ad> {
        if kind == AdKind::Slot {
            self.idle_slots.remove(name);
        }
        self.ads.get_mut(&kind)?.remove(name).map(|(ad, _)| ad)
    }

    pub fn get(&self, kind: AdKind, name: &str) -> Option<(&Ad, SimTime)> {
        self.ads.get(&kind)?.get(name).map(|(ad, t)| (ad, *t))
    }

    /// Drops every ad silent for longer than `missed_updates_limit` intervals.
    /// Removed ads are returned in (kind, name) order.
    pub fn expire(&mut self, now: SimTime) -> Vec<Ad> {
        let lifetime = self.lifetime();
        let stale: Vec<(AdKind, String)> = self
            .ads
            .iter()
            .flat_map(|(kind, m)| m.iter().map(move |(name, v)| (*kind, name, v)))
            .filter(|(_, _, (_, heard))| now.saturating_sub(*heard) > lifetime)
            .map(|(kind, name, _)| (kind, name.clone()))
            .collect();
        stale
            .into_iter()
            .filter_map(|(kind, name)| self.withdraw(kind, &name))
            .collect()
    }

    /// Ads for which `constraint` evaluates to `true` with the ad as self and
    /// no target, in name order (kind breaks ties).
    pub fn query(&self, constraint: &Expr) -> Vec<&Ad> {
        let mut hits: Vec<(&str, AdKind, &Ad)> = self
            .ads
            .iter()
            .flat_map(|(kind, m)| m.iter().map(move |(name, (ad, _))| (name.as_str(), *kind, ad)))
            .filter(|(_, _, ad)| evaluate(constraint, ad, None).is_true())
            .collect();
        hits.sort_by(|a, b| a.0.cmp(b.0).then(a.1.cmp(&b.1)));
        hits.into_iter().map(|(_, _, ad)| ad).collect()
    }

    /// All ads of one kind in name order.
    pub fn ads_of_kind(&self, kind: AdKind) -> impl Iterator<Item = (&Ad, SimTime)> {
        self.ads.get(&kind).into_iter().flat_map(|m| m.values().map(|(ad, t)| (ad, *t)))
    }

    /// Slot ads whose advertised status is idle, in name order. Stale ads
    /// of vanished slots are included until they expire.
    pub fn idle_slot_ads(&self) -> impl Iterator<Item = &Ad> {
        let slots = self.ads.get(&AdKind::Slot);
        self.idle_slots
            .iter()
            .filter_map(move |n| slots.and_then(|m| m.get(n)).map(|(ad, _)| ad))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Ad, SimTime)> {
        self.ads.values().flat_map(|m| m.values().map(|(ad, t)| (ad, *t)))
    }
}
