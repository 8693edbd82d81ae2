use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datacache::{CacheError, CacheNode, GeoPoint, DEFAULT_BLOCK_SIZE};
use crate::glidein::{CeType, EntryPoint, FactoryParams, FrontendParams, PilotShape};
use crate::matchlang::{parse, Expr, ParseError, Value};
use crate::pool::{PriorityConfig, DEFAULT_MISSED_UPDATES_LIMIT, DEFAULT_UPDATE_INTERVAL};
use crate::time::SimDuration;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("{context}: {source}")]
    Expression { context: String, source: ParseError },
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Invalid(msg.into()))
}

/// A bounded duration distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase", deny_unknown_fields)]
pub enum Distribution {
    Degenerate { value: SimDuration },
    Uniform { min: SimDuration, max: SimDuration },
    /// Log-normal around `median` with shape `sigma`, truncated to [min, max].
    Lognormal { median: SimDuration, sigma: f64, min: SimDuration, max: SimDuration },
}

impl Distribution {
    pub fn bounds(&self) -> (u64, u64) {
        match *self {
            Distribution::Degenerate { value } => (value.as_secs(), value.as_secs()),
            Distribution::Uniform { min, max } | Distribution::Lognormal { min, max, .. } => {
                (min.as_secs(), max.as_secs())
            }
        }
    }

    fn validate(&self, what: &str) -> Result<(), ScenarioError> {
        let (lo, hi) = self.bounds();
        if lo > hi {
            return invalid(format!("{what}: min exceeds max"));
        }
        if let Distribution::Lognormal { median, sigma, .. } = *self {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return invalid(format!("{what}: sigma must be positive"));
            }
            if median.as_secs() == 0 {
                return invalid(format!("{what}: median must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Intervals {
    pub negotiation: SimDuration,
    pub frontend: SimDuration,
    pub collector_update: SimDuration,
    pub missed_updates: u32,
}

impl Default for Intervals {
    fn default() -> Self {
        Intervals {
            negotiation: SimDuration::secs(60),
            frontend: SimDuration::secs(300),
            collector_update: DEFAULT_UPDATE_INTERVAL,
            missed_updates: DEFAULT_MISSED_UPDATES_LIMIT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorySpec {
    pub config_delay: SimDuration,
}

impl Default for FactorySpec {
    fn default() -> Self {
        FactorySpec {
            config_delay: FactoryParams::default().config_delay,
        }
    }
}

/// Literal value for an injected slot attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Bool(bool),
    Int(i64),
    Real(f64),
    Text(String),
}

impl AttrValue {
    pub fn to_value(&self) -> Value {
        match self {
            AttrValue::Bool(b) => Value::Boolean(*b),
            AttrValue::Int(i) => Value::Integer(*i),
            AttrValue::Real(r) => Value::Real(*r),
            AttrValue::Text(s) => Value::Text(s.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendSpec {
    pub fraction: f64,
    pub min_idle: u32,
    pub grace_period: SimDuration,
    pub config_delay: SimDuration,
    #[serde(rename = "match")]
    pub match_expr: String,
    pub attrs: BTreeMap<String, AttrValue>,
}

impl Default for FrontendSpec {
    fn default() -> Self {
        let d = FrontendParams::default();
        FrontendSpec {
            fraction: d.fraction,
            min_idle: d.min_idle,
            grace_period: d.grace_period,
            config_delay: d.config_delay,
            match_expr: "true".into(),
            attrs: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSpec {
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    pub cores: u64,
    #[serde(default)]
    pub gpus: u64,
    /// CE queue delay; defaults per CE type of the submitting entry.
    #[serde(default)]
    pub ce_delay: Option<Distribution>,
    /// Poisson preemption rate per pilot-hour; 0 for owned resources.
    #[serde(default)]
    pub preemption_rate: f64,
}

fn yes() -> bool {
    true
}

fn default_true_expr() -> String {
    "true".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntrySpec {
    pub name: String,
    pub site: String,
    pub ce_type: CeType,
    pub max_pilots: u32,
    pub max_idle_pilots: u32,
    #[serde(default)]
    pub shape: PilotShape,
    #[serde(default = "default_true_expr")]
    pub requirements: String,
    #[serde(default)]
    pub bootstrap_failure: f64,
    #[serde(default = "yes")]
    pub trusted: bool,
    #[serde(default = "yes")]
    pub containers: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub name: String,
    #[serde(default = "one")]
    pub priority_factor: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSpec {
    pub name: String,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheSpec {
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    /// Bytes.
    pub capacity: u64,
    #[serde(default = "default_block")]
    pub block_size: u64,
    /// Cache to job, bytes per second.
    pub bandwidth: f64,
    /// Origin to cache, bytes per second.
    pub origin_bandwidth: f64,
}

fn default_block() -> u64 {
    DEFAULT_BLOCK_SIZE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadKind {
    Independent,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "lowercase", deny_unknown_fields)]
pub enum Arrival {
    /// Every job at `at`.
    Burst { at: SimDuration },
    /// Independent uniform arrival times in [start, start + span].
    Uniform { start: SimDuration, span: SimDuration },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStage {
    pub jobs: u32,
    pub runtime: Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub name: String,
    pub user: String,
    pub kind: WorkloadKind,
    // Independent batches.
    #[serde(default)]
    pub count: Option<u32>,
    #[serde(default)]
    pub arrival: Option<Arrival>,
    // Iterative stages.
    #[serde(default)]
    pub stages: Option<u32>,
    #[serde(default)]
    pub jobs_per_stage: Option<u32>,
    #[serde(default)]
    pub start: Option<SimDuration>,
    /// Optional CPU-only stage run once before the first iterative stage.
    #[serde(default)]
    pub initial_cpu_stage: Option<InitialStage>,

    pub runtime: Distribution,
    /// Runtime on a GPU slot; jobs without it never use the GPU path.
    #[serde(default)]
    pub gpu_runtime: Option<Distribution>,
    #[serde(default = "one_u32")]
    pub request_cpus: u32,
    #[serde(default = "default_memory")]
    pub request_memory: u64,
    #[serde(default)]
    pub request_gpus: u32,
    #[serde(default)]
    pub container: Option<String>,
    #[serde(default)]
    pub inputs: Vec<String>,
    /// Each job reads this many of `inputs`, picked at random; all of them when absent.
    #[serde(default)]
    pub inputs_per_job: Option<u32>,
    #[serde(default)]
    pub requirements: Option<String>,
    #[serde(default)]
    pub rank: Option<String>,
}

fn one_u32() -> u32 {
    1
}

fn default_memory() -> u64 {
    2048
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub until: SimDuration,
    #[serde(default)]
    pub intervals: Intervals,
    #[serde(default)]
    pub priority: PriorityConfig,
    #[serde(default)]
    pub factory: FactorySpec,
    #[serde(default)]
    pub frontend: FrontendSpec,
    pub sites: Vec<SiteSpec>,
    pub entries: Vec<EntrySpec>,
    #[serde(default)]
    pub users: Vec<UserSpec>,
    #[serde(default)]
    pub files: Vec<FileSpec>,
    #[serde(default)]
    pub caches: Vec<CacheSpec>,
    #[serde(default)]
    pub workloads: Vec<WorkloadSpec>,
}

/// Names end up as bare trace fields, so they stay within a safe alphabet.
fn check_name(what: &str, name: &str) -> Result<(), ScenarioError> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        invalid(format!("{what} name '{name}' must be non-empty [A-Za-z0-9_.-]"))
    }
}

fn unique<'a>(what: &str, names: impl Iterator<Item = &'a str>) -> Result<BTreeSet<&'a str>, ScenarioError> {
    let mut seen = BTreeSet::new();
    for n in names {
        check_name(what, n)?;
        if !seen.insert(n) {
            return invalid(format!("duplicate {what} '{n}'"));
        }
    }
    Ok(seen)
}

fn parse_expr(context: String, text: &str) -> Result<Expr, ScenarioError> {
    parse(text).map_err(|source| ScenarioError::Expression { context, source })
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Scenario::from_toml(&text)
    }

    /// First 16 hex digits of the SHA-256 of the scenario's JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("scenario serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.build().map(|_| ())
    }

    /// Resolves names and parses expressions.
    pub fn build(&self) -> Result<Built, ScenarioError> {
        if self.until.as_secs() == 0 {
            return invalid("until must be positive");
        }
        let iv = &self.intervals;
        if iv.negotiation.as_secs() == 0 || iv.frontend.as_secs() == 0 || iv.collector_update.as_secs() == 0 {
            return invalid("intervals must be positive");
        }
        if iv.missed_updates == 0 {
            return invalid("missed_updates must be at least 1");
        }
        if !(self.priority.floor > 0.0 && self.priority.floor.is_finite()) {
            return invalid("priority floor must be positive");
        }
        let fe = &self.frontend;
        if !(fe.fraction >= 0.0 && fe.fraction.is_finite()) {
            return invalid("frontend fraction must be non-negative");
        }

        let sites = unique("site", self.sites.iter().map(|s| s.name.as_str()))?;
        unique("entry", self.entries.iter().map(|e| e.name.as_str()))?;
        let users = unique("user", self.users.iter().map(|u| u.name.as_str()))?;
        let files = unique("file", self.files.iter().map(|f| f.name.as_str()))?;
        unique("cache", self.caches.iter().map(|c| c.name.as_str()))?;
        unique("workload", self.workloads.iter().map(|w| w.name.as_str()))?;
        for k in fe.attrs.keys() {
            check_name("frontend attribute", k)?;
        }

        for s in &self.sites {
            if !GeoPoint::new(s.lat, s.lon).is_valid() {
                return invalid(format!("site '{}': coordinates out of range", s.name));
            }
            if !(s.preemption_rate >= 0.0 && s.preemption_rate.is_finite()) {
                return invalid(format!("site '{}': preemption_rate must be non-negative", s.name));
            }
            if let Some(d) = &s.ce_delay {
                d.validate(&format!("site '{}' ce_delay", s.name))?;
            }
        }
        for u in &self.users {
            if !(u.priority_factor >= 1.0 && u.priority_factor.is_finite()) {
                return invalid(format!("user '{}': priority_factor must be at least 1", u.name));
            }
        }

        let frontend = FrontendParams {
            fraction: fe.fraction,
            min_idle: fe.min_idle,
            grace_period: fe.grace_period,
            config_delay: fe.config_delay,
            match_expr: parse_expr("frontend match".into(), &fe.match_expr)?,
            attrs: fe.attrs.iter().map(|(k, v)| (k.to_ascii_lowercase(), v.to_value())).collect(),
        };

        let mut entries = Vec::new();
        for e in &self.entries {
            if !sites.contains(e.site.as_str()) {
                return invalid(format!("entry '{}': unknown site '{}'", e.name, e.site));
            }
            let site = self.sites.iter().find(|s| s.name == e.site).expect("checked");
            let entry = EntryPoint {
                name: e.name.clone(),
                site: e.site.clone(),
                ce_type: e.ce_type,
                max_pilots: e.max_pilots,
                max_idle_pilots: e.max_idle_pilots,
                shape: e.shape,
                requirements: parse_expr(format!("entry '{}' requirements", e.name), &e.requirements)?,
                geo: GeoPoint::new(site.lat, site.lon),
                bootstrap_failure: e.bootstrap_failure,
                trusted: e.trusted,
                containers: e.containers,
            };
            entry
                .validate()
                .map_err(|err| ScenarioError::Invalid(err.to_string()))?;
            if e.shape.cpus as u64 > site.cores || e.shape.gpus as u64 > site.gpus {
                return invalid(format!("entry '{}': pilot shape does not fit site '{}'", e.name, e.site));
            }
            entries.push(entry);
        }

        let mut caches = Vec::new();
        for c in &self.caches {
            let node = CacheNode::new(
                &c.name,
                GeoPoint::new(c.lat, c.lon),
                c.capacity,
                c.block_size,
                c.bandwidth,
                c.origin_bandwidth,
            )
            .map_err(|e: CacheError| ScenarioError::Invalid(e.to_string()))?;
            caches.push(node);
        }

        let mut workloads = Vec::new();
        for w in &self.workloads {
            let ctx = |m: &str| format!("workload '{}': {m}", w.name);
            if !users.contains(w.user.as_str()) {
                return invalid(ctx(&format!("unknown user '{}'", w.user)));
            }
            for f in &w.inputs {
                if !files.contains(f.as_str()) {
                    return invalid(ctx(&format!("unknown input file '{f}'")));
                }
            }
            if !w.inputs.is_empty() && self.caches.is_empty() {
                return invalid(ctx("inputs need at least one cache"));
            }
            if let Some(n) = w.inputs_per_job {
                if n as usize > w.inputs.len() {
                    return invalid(ctx("inputs_per_job exceeds the number of inputs"));
                }
            }
            if w.request_cpus == 0 {
                return invalid(ctx("request_cpus must be at least 1"));
            }
            w.runtime.validate(&ctx("runtime"))?;
            if let Some(g) = &w.gpu_runtime {
                g.validate(&ctx("gpu_runtime"))?;
                if w.request_gpus == 0 {
                    return invalid(ctx("gpu_runtime needs request_gpus >= 1"));
                }
            }
            match w.kind {
                WorkloadKind::Independent => {
                    if w.count.unwrap_or(0) == 0 {
                        return invalid(ctx("independent workloads need count >= 1"));
                    }
                    if w.stages.is_some() || w.jobs_per_stage.is_some() || w.initial_cpu_stage.is_some() {
                        return invalid(ctx("stage settings only apply to iterative workloads"));
                    }
                }
                WorkloadKind::Iterative => {
                    if w.stages.unwrap_or(0) == 0 || w.jobs_per_stage.unwrap_or(0) == 0 {
                        return invalid(ctx("iterative workloads need stages >= 1 and jobs_per_stage >= 1"));
                    }
                    if w.count.is_some() || w.arrival.is_some() {
                        return invalid(ctx("count/arrival only apply to independent workloads"));
                    }
                    if let Some(s0) = &w.initial_cpu_stage {
                        if s0.jobs == 0 {
                            return invalid(ctx("initial_cpu_stage needs jobs >= 1"));
                        }
                        s0.runtime.validate(&ctx("initial_cpu_stage runtime"))?;
                    }
                }
            }
            let requirements = match &w.requirements {
                Some(t) => parse_expr(ctx("requirements"), t)?,
                None => {
                    let mut t = String::from(
                        "TARGET.cpus >= MY.requestcpus && TARGET.memory >= MY.requestmemory && TARGET.gpus >= MY.requestgpus",
                    );
                    if w.container.is_some() {
                        t.push_str(" && TARGET.hascontainers");
                    }
                    parse_expr(ctx("requirements"), &t)?
                }
            };
            let rank = match &w.rank {
                Some(t) => parse_expr(ctx("rank"), t)?,
                // GPU-capable work prefers GPU slots; everything else leaves them alone.
                None if w.gpu_runtime.is_some() => parse_expr(ctx("rank"), "TARGET.gpus")?,
                None => parse_expr(ctx("rank"), "-TARGET.gpus")?,
            };
            let inputs = w
                .inputs
                .iter()
                .map(|f| self.files.iter().position(|x| &x.name == f).expect("checked"))
                .collect();
            workloads.push(BuiltWorkload {
                spec: w.clone(),
                requirements,
                rank,
                inputs,
            });
        }

        Ok(Built {
            entries,
            frontend,
            factory: FactoryParams {
                config_delay: self.factory.config_delay,
            },
            caches,
            workloads,
        })
    }

    /// CE queue delay distribution for `entry`'s submissions.
    pub fn ce_delay(&self, site: &SiteSpec, ce: CeType) -> Distribution {
        site.ce_delay.unwrap_or(Distribution::Degenerate {
            value: ce.default_queue_delay(),
        })
    }
}

/// Scenario with expressions parsed and names resolved.
#[derive(Debug, Clone)]
pub struct Built {
    pub entries: Vec<EntryPoint>,
    pub frontend: FrontendParams,
    pub factory: FactoryParams,
    pub caches: Vec<CacheNode>,
    pub workloads: Vec<BuiltWorkload>,
}

#[derive(Debug, Clone)]
pub struct BuiltWorkload {
    pub spec: WorkloadSpec,
    pub requirements: Expr,
    pub rank: Expr,
    /// Indices into the scenario's file list.
    pub inputs: Vec<usize>,
}
