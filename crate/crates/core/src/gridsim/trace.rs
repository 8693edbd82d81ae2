use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::time::SimTime;

pub const TRACE_MAGIC: &str = "#glidesim-trace v1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("missing trace header")]
    MissingHeader,
    #[error("record {seq}: missing field '{key}'")]
    MissingField { seq: u64, key: String },
    #[error("record {seq}: field '{key}' is not a number: '{value}'")]
    BadNumber { seq: u64, key: String, value: String },
}

macro_rules! kinds {
    ($($v:ident => $s:literal),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum RecordKind { $($v),* }

        impl RecordKind {
            pub const ALL: &'static [RecordKind] = &[$(RecordKind::$v),*];

            pub fn as_str(self) -> &'static str {
                match self { $(RecordKind::$v => $s),* }
            }
        }

        impl FromStr for RecordKind {
            type Err = ();
            fn from_str(s: &str) -> Result<Self, ()> {
                match s { $($s => Ok(RecordKind::$v),)* _ => Err(()) }
            }
        }
    };
}

kinds! {
    Site => "SITE",
    Entry => "ENTRY",
    User => "USER",
    Cache => "CACHE",
    JobSubmit => "JOB_SUBMIT",
    Negotiate => "NEGOTIATE",
    Match => "MATCH",
    ClaimRace => "CLAIM_RACE",
    JobStart => "JOB_START",
    JobStageDone => "JOB_STAGE_DONE",
    JobDone => "JOB_DONE",
    JobEvict => "JOB_EVICT",
    FrontendCycle => "FRONTEND_CYCLE",
    PilotRequest => "PILOT_REQUEST",
    FactoryDiag => "FACTORY_DIAG",
    PilotSubmit => "PILOT_SUBMIT",
    PilotStart => "PILOT_START",
    Advertise => "ADVERTISE",
    PilotDead => "PILOT_DEAD",
    Preempt => "PREEMPT",
    Expire => "EXPIRE",
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One trace line: `time seq KIND key=value ...`. Fields are kept as raw
/// text and looked up on demand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub time: SimTime,
    pub seq: u64,
    pub kind: RecordKind,
    pub fields: String,
}

impl Record {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.split(' ').find_map(|kv| {
            let (k, v) = kv.split_once('=')?;
            (k == key).then_some(v)
        })
    }

    pub fn field(&self, key: &str) -> Result<&str, TraceError> {
        self.get(key).ok_or_else(|| TraceError::MissingField {
            seq: self.seq,
            key: key.to_string(),
        })
    }

    pub fn num<T: FromStr>(&self, key: &str) -> Result<T, TraceError> {
        let v = self.field(key)?;
        v.parse().map_err(|_| TraceError::BadNumber {
            seq: self.seq,
            key: key.to_string(),
            value: v.to_string(),
        })
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.fields.split(' ').filter_map(|kv| kv.split_once('='))
    }
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.time, self.seq, self.kind)?;
        if !self.fields.is_empty() {
            write!(f, " {}", self.fields)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceHeader {
    /// Short digest of the scenario the trace came from.
    pub scenario: String,
    pub seed: u64,
    pub until: SimTime,
}

/// Integer counters written as the trace footer.
pub type Summary = BTreeMap<String, u64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<Record>,
    pub summary: Summary,
}

impl Trace {
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 64);
        let h = &self.header;
        writeln!(out, "{TRACE_MAGIC} scenario={} seed={} until={}", h.scenario, h.seed, h.until).unwrap();
        for r in &self.records {
            writeln!(out, "{r}").unwrap();
        }
        for (k, v) in &self.summary {
            writeln!(out, "#summary {k}={v}").unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Trace, TraceError> {
        let mut lines = text.lines().enumerate();
        let header = match lines.next() {
            Some((_, l)) if l.starts_with(TRACE_MAGIC) => parse_header(l)?,
            _ => return Err(TraceError::MissingHeader),
        };
        let mut records = Vec::new();
        let mut summary = Summary::new();
        for (i, line) in lines {
            let bad = |msg: &str| TraceError::Malformed { line: i + 1, msg: msg.to_string() };
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#summary ") {
                let (k, v) = rest.split_once('=').ok_or_else(|| bad("summary entry without '='"))?;
                summary.insert(k.to_string(), v.parse().map_err(|_| bad("summary value is not a number"))?);
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(4, ' ');
            let time = parts.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad time"))?;
            let seq = parts.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad sequence number"))?;
            let kind = parts.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("unknown record kind"))?;
            let fields = parts.next().unwrap_or("").to_string();
            records.push(Record { time, seq, kind, fields });
        }
        Ok(Trace { header, records, summary })
    }

    pub fn of_kind(&self, kind: RecordKind) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.kind == kind)
    }
}

fn parse_header(line: &str) -> Result<TraceHeader, TraceError> {
    let mut scenario = None;
    let mut seed = None;
    let mut until = None;
    for kv in line[TRACE_MAGIC.len()..].split_whitespace() {
        match kv.split_once('=') {
            Some(("scenario", v)) => scenario = Some(v.to_string()),
            Some(("seed", v)) => seed = v.parse().ok(),
            Some(("until", v)) => until = v.parse().ok(),
            _ => {}
        }
    }
    match (scenario, seed, until) {
        (Some(scenario), Some(seed), Some(until)) => Ok(TraceHeader { scenario, seed, until }),
        _ => Err(TraceError::Malformed {
            line: 1,
            msg: "header needs scenario, seed and until".into(),
        }),
    }
}

/// Recomputes the footer counters from the records alone. Claims still open
/// at the horizon are charged up to `until`.
pub fn replay_summary(trace: &Trace) -> Result<Summary, TraceError> {
    let until = trace.header.until;
    let mut s = Summary::new();
    let bump = |s: &mut Summary, k: String, n: u64| *s.entry(k).or_default() += n;
    // claim -> (owner, start, cpus, gpus)
    let mut open: BTreeMap<u64, (String, SimTime, u64, u64)> = BTreeMap::new();
    // pilot -> (site, start, cpus)
    let mut live_pilots: BTreeMap<u64, (String, SimTime, u64)> = BTreeMap::new();
    for r in &trace.records {
        match r.kind {
            RecordKind::User => {
                let u = r.field("name")?;
                s.entry(format!("usage.{u}.core_seconds")).or_default();
                s.entry(format!("usage.{u}.gpu_seconds")).or_default();
            }
            RecordKind::Cache => {
                let c = r.field("name")?;
                for k in ["hit_blocks", "miss_blocks", "bytes_from_cache", "bytes_from_origin"] {
                    s.entry(format!("cache.{c}.{k}")).or_default();
                }
            }
            RecordKind::JobSubmit => bump(&mut s, "jobs.submitted".into(), 1),
            RecordKind::Negotiate => bump(&mut s, "cycles.negotiation".into(), 1),
            RecordKind::Match => bump(&mut s, "matches".into(), 1),
            RecordKind::ClaimRace => bump(&mut s, "claim_races".into(), 1),
            RecordKind::JobStart => {
                bump(&mut s, "jobs.started".into(), 1);
                let claim = r.num("claim")?;
                open.insert(claim, (r.field("owner")?.to_string(), r.time, r.num("cpus")?, r.num("gpus")?));
                if let Some(c) = r.get("cache") {
                    if c != "-" {
                        for k in ["hit_blocks", "miss_blocks", "bytes_from_cache", "bytes_from_origin"] {
                            bump(&mut s, format!("cache.{c}.{k}"), r.num(k)?);
                        }
                    }
                }
            }
            RecordKind::JobDone | RecordKind::JobEvict => {
                bump(
                    &mut s,
                    if r.kind == RecordKind::JobDone { "jobs.completed" } else { "jobs.evicted" }.into(),
                    1,
                );
                let claim = r.num("claim")?;
                if let Some((owner, start, cpus, gpus)) = open.remove(&claim) {
                    bump(&mut s, format!("usage.{owner}.core_seconds"), cpus * (r.time - start));
                    bump(&mut s, format!("usage.{owner}.gpu_seconds"), gpus * (r.time - start));
                }
            }
            RecordKind::FrontendCycle => bump(&mut s, "cycles.frontend".into(), 1),
            RecordKind::PilotRequest => bump(&mut s, "pilots.requested".into(), r.num("requested")?),
            RecordKind::PilotSubmit => bump(&mut s, "pilots.submitted".into(), 1),
            RecordKind::PilotStart => {
                bump(&mut s, "pilots.started".into(), 1);
                live_pilots.insert(r.num("pilot")?, (r.field("site")?.to_string(), r.time, r.num("cpus")?));
            }
            RecordKind::Advertise => bump(&mut s, "pilots.advertised".into(), 1),
            RecordKind::PilotDead => {
                bump(&mut s, format!("pilots.dead.{}", r.field("cause")?), 1);
                if let Some((site, start, cpus)) = live_pilots.remove(&r.num("pilot")?) {
                    bump(&mut s, format!("pilot_core_seconds.{site}"), cpus * (r.time - start));
                }
            }
            RecordKind::Preempt => bump(&mut s, "preemptions".into(), 1),
            RecordKind::Expire => bump(&mut s, "ads.expired".into(), r.num("removed")?),
            RecordKind::Site => {
                s.entry(format!("pilot_core_seconds.{}", r.field("name")?)).or_default();
            }
            RecordKind::Entry | RecordKind::FactoryDiag | RecordKind::JobStageDone => {}
        }
    }
    for (owner, start, cpus, gpus) in open.into_values() {
        bump(&mut s, format!("usage.{owner}.core_seconds"), cpus * (until - start));
        bump(&mut s, format!("usage.{owner}.gpu_seconds"), gpus * (until - start));
    }
    for (site, start, cpus) in live_pilots.into_values() {
        bump(&mut s, format!("pilot_core_seconds.{site}"), cpus * (until - start));
    }
    s.retain(|_, v| *v != 0);
    Ok(s)
}
