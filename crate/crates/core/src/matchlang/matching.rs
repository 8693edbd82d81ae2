use std::cmp::Ordering;

use super::ad::Ad;
use super::eval::evaluate;
use super::value::Value;

/// True iff `a.requirements`, evaluated with `a` as self and `b` as target,
/// is exactly `true`. Undefined, error and missing requirements all fold to false.
pub fn requirements_match(a: &Ad, b: &Ad) -> bool {
    match a.requirements() {
        Some(req) => evaluate(req, a, Some(b)).is_true(),
        None => false,
    }
}

pub fn symmetric_match(job: &Ad, slot: &Ad) -> bool {
    requirements_match(job, slot) && requirements_match(slot, job)
}

/// Numeric rank of `candidate` from the job's point of view; anything that is
/// not a finite number counts as 0.
pub fn rank_value(job: &Ad, candidate: &Ad) -> f64 {
    match evaluate(&job.rank(), job, Some(candidate)).as_f64() {
        Some(r) if r.is_finite() => r,
        _ => 0.0,
    }
}

/// Sort key for tie-breaking: the candidate's `name` when it evaluates to text.
pub fn name_key(ad: &Ad) -> String {
    match ad.get("name").map(|e| evaluate(e, ad, None)) {
        Some(Value::Text(s)) => s,
        _ => String::new(),
    }
}

/// Orders rank-descending, then name-ascending.
pub fn compare_ranked(a: &(f64, String), b: &(f64, String)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1))
}

/// Stable sort of candidates by descending job rank, ties by `name` ascending.
pub fn rank_order<'a>(job: &Ad, candidates: &[&'a Ad]) -> Vec<&'a Ad> {
    let mut keyed: Vec<((f64, String), &'a Ad)> = candidates
        .iter()
        .map(|c| ((rank_value(job, c), name_key(c)), *c))
        .collect();
    keyed.sort_by(|a, b| compare_ranked(&a.0, &b.0));
    keyed.into_iter().map(|(_, c)| c).collect()
}
