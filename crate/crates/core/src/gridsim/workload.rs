use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution as _, LogNormal};

use crate::matchlang::{Ad, AdKind, Expr};
use crate::time::SimTime;

use super::scenario::{Arrival, BuiltWorkload, Distribution, WorkloadKind};

/// Lognormal draws outside the bounds are redrawn this many times before clamping.
const MAX_REJECTIONS: usize = 1000;

/// Draws whole seconds from `d`, always within its bounds.
pub fn sample<R: Rng + ?Sized>(d: &Distribution, rng: &mut R) -> u64 {
    match *d {
        Distribution::Degenerate { value } => value.as_secs(),
        Distribution::Uniform { min, max } => rng.random_range(min.as_secs()..=max.as_secs()),
        Distribution::Lognormal { median, sigma, min, max } => {
            let (lo, hi) = (min.as_secs(), max.as_secs());
            let ln = LogNormal::new((median.as_secs() as f64).ln(), sigma).expect("validated");
            let mut x = 0.0;
            for _ in 0..MAX_REJECTIONS {
                x = ln.sample(rng).round();
                if x >= lo as f64 && x <= hi as f64 {
                    return x as u64;
                }
            }
            (x.max(0.0) as u64).clamp(lo, hi)
        }
    }
}

/// A job waiting to be submitted.
#[derive(Debug, Clone, PartialEq)]
pub struct JobPlan {
    pub workload: usize,
    pub stage: u32,
    pub submit_at: SimTime,
    pub ad: Ad,
    pub owner: String,
    pub runtime: u64,
    pub gpu_runtime: Option<u64>,
    /// Indices into the scenario's file list.
    pub inputs: Vec<usize>,
}

/// Number of stages an iterative workload runs, counting the CPU prelude.
pub fn stage_count(w: &BuiltWorkload) -> u32 {
    match w.spec.kind {
        WorkloadKind::Independent => 1,
        WorkloadKind::Iterative => w.spec.stages.unwrap_or(1) + w.spec.initial_cpu_stage.is_some() as u32,
    }
}

fn is_cpu_prelude(w: &BuiltWorkload, stage: u32) -> bool {
    stage == 0 && w.spec.initial_cpu_stage.is_some()
}

/// Jobs making up `stage` of workload `index`; `next_job` numbers them.
pub fn plan_stage<R: Rng + ?Sized>(
    w: &BuiltWorkload,
    index: usize,
    stage: u32,
    at: SimTime,
    next_job: &mut u64,
    rng: &mut R,
) -> Vec<JobPlan> {
    let spec = &w.spec;
    let prelude = is_cpu_prelude(w, stage);
    let n = match spec.kind {
        WorkloadKind::Independent => spec.count.unwrap_or(0),
        WorkloadKind::Iterative if prelude => spec.initial_cpu_stage.map(|s| s.jobs).unwrap_or(0),
        WorkloadKind::Iterative => spec.jobs_per_stage.unwrap_or(0),
    };
    let (runtime_dist, gpu_dist, gpus) = if prelude {
        (spec.initial_cpu_stage.expect("prelude").runtime, None, 0)
    } else {
        (spec.runtime, spec.gpu_runtime, spec.request_gpus)
    };
    let (_, bound) = runtime_dist.bounds();
    (0..n)
        .map(|_| {
            let submit_at = match (spec.kind, spec.arrival) {
                (WorkloadKind::Independent, Some(Arrival::Burst { at })) => at.as_secs(),
                (WorkloadKind::Independent, Some(Arrival::Uniform { start, span })) => {
                    start.as_secs() + rng.random_range(0..=span.as_secs())
                }
                _ => at,
            };
            let runtime = sample(&runtime_dist, rng);
            let gpu_runtime = gpu_dist.map(|d| sample(&d, rng));
            let inputs = match spec.inputs_per_job {
                Some(k) => {
                    let mut picked: Vec<usize> = index::sample(rng, w.inputs.len(), k as usize)
                        .into_iter()
                        .map(|i| w.inputs[i])
                        .collect();
                    picked.sort_unstable();
                    picked
                }
                None => w.inputs.clone(),
            };
            let mut ad = Ad::new(AdKind::Job)
                .with_value("name", format!("{}.{}", spec.name, *next_job))
                .with_value("owner", spec.user.as_str())
                .with_value("workload", spec.name.as_str())
                .with_value("stage", stage as i64)
                .with_value("requestcpus", spec.request_cpus as i64)
                .with_value("requestmemory", spec.request_memory as i64)
                .with_value("requestgpus", gpus as i64)
                // Nominal bound; the realized runtime stays with the simulator.
                .with_value("estimatedruntime", bound as i64)
                .with_value("gpuaccelerated", gpu_runtime.is_some());
            if let Some(c) = &spec.container {
                ad.set("container", Expr::lit(c.as_str()));
            }
            ad.set("requirements", w.requirements.clone());
            ad.set("rank", w.rank.clone());
            *next_job += 1;
            JobPlan {
                workload: index,
                stage,
                submit_at,
                ad,
                owner: spec.user.clone(),
                runtime,
                gpu_runtime,
                inputs,
            }
        })
        .collect()
}
