//! Test-only generators and reference implementations. Nothing here calls
//! into the code paths it is used to check.

#![allow(dead_code)]

use glidesim::matchlang::{Ad, AdKind, BinaryOp, Expr, Func, Scope, UnaryOp, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Random expression trees

const NAMES: [&str; 8] = ["cpus", "memory", "gpus", "site", "a", "b_2", "x", "requestcpus"];

fn random_literal(r: &mut ChaCha8Rng) -> Value {
    match r.random_range(0..7) {
        0 => Value::Integer(r.random_range(-1000..1000)),
        1 => Value::Integer(if r.random_bool(0.5) { i64::MAX } else { i64::MIN }),
        2 => {
            let v: f64 = r.random_range(-1e6..1e6);
            Value::Real(if r.random_bool(0.2) { v * 1e-300 } else { v })
        }
        3 => Value::Boolean(r.random_bool(0.5)),
        4 => {
            let pool = ["", "grid", "a b", "quote\"d", "back\\slash", "new\nline", "tab\t"];
            Value::Text(pool[r.random_range(0..pool.len())].to_string())
        }
        5 => Value::Undefined,
        _ => Value::Error("boom".to_string()),
    }
}

pub fn random_expr(r: &mut ChaCha8Rng, depth: u32) -> Expr {
    let leaf = depth == 0 || r.random_bool(0.3);
    if leaf {
        return if r.random_bool(0.5) {
            Expr::Literal(random_literal(r))
        } else {
            let scope = [Scope::My, Scope::Target, Scope::Unscoped][r.random_range(0..3)];
            Expr::attr(scope, NAMES[r.random_range(0..NAMES.len())])
        };
    }
    match r.random_range(0..4) {
        0 => {
            let op = if r.random_bool(0.5) { UnaryOp::Not } else { UnaryOp::Neg };
            Expr::unary(op, random_expr(r, depth - 1))
        }
        1 => {
            let func = Func::ALL[r.random_range(0..Func::ALL.len())];
            let n = match func.arity() {
                (_, Some(max)) => max,
                (min, None) => r.random_range(min..min + 3),
            };
            let args = (0..n).map(|_| random_expr(r, depth - 1)).collect();
            Expr::call(func, args)
        }
        _ => {
            let op = BinaryOp::ALL[r.random_range(0..BinaryOp::ALL.len())];
            Expr::binary(op, random_expr(r, depth - 1), random_expr(r, depth - 1))
        }
    }
}

/// Structural equality written out by hand, independent of derived `PartialEq`.
pub fn same_tree(a: &Expr, b: &Expr) -> bool {
    match (a, b) {
        (Expr::Literal(x), Expr::Literal(y)) => match (x, y) {
            (Value::Real(p), Value::Real(q)) => p.to_bits() == q.to_bits() || p == q,
            _ => x == y,
        },
        (Expr::AttrRef { scope: s1, name: n1 }, Expr::AttrRef { scope: s2, name: n2 }) => {
            s1 == s2 && n1 == n2
        }
        (Expr::Unary { op: o1, operand: e1 }, Expr::Unary { op: o2, operand: e2 }) => {
            o1 == o2 && same_tree(e1, e2)
        }
        (
            Expr::Binary { op: o1, lhs: l1, rhs: r1 },
            Expr::Binary { op: o2, lhs: l2, rhs: r2 },
        ) => o1 == o2 && same_tree(l1, l2) && same_tree(r1, r2),
        (Expr::Call { func: f1, args: a1 }, Expr::Call { func: f2, args: a2 }) => {
            f1 == f2 && a1.len() == a2.len() && a1.iter().zip(a2).all(|(x, y)| same_tree(x, y))
        }
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// Kleene truth tables, written out explicitly.
// None stands for UNDEFINED.

pub const TRI: [Option<bool>; 3] = [Some(true), Some(false), None];

pub fn kleene_and_table(a: Option<bool>, b: Option<bool>) -> Option<bool> {
    match (a, b) {
        (Some(true), Some(true)) => Some(true),
        (Some(true), Some(false)) => Some(false),
        (Some(true), None) => None,
        (Some(false), Some(true)) => Some(false),
        (Some(false), Some(false)) => Some(false),
        (Some(false), None) => Some(false),
        (None, Some(true)) => None,
        (None, Some(false)) => Some(false),
        (None, None) => None,
    }
}

pub fn kleene_or_table(a: Option<bool>, b: Option<bool>) -> Option<bool> {
    match (a, b) {
        (Some(true), Some(true)) => Some(true),
        (Some(true), Some(false)) => Some(true),
        (Some(true), None) => Some(true),
        (Some(false), Some(true)) => Some(true),
        (Some(false), Some(false)) => Some(false),
        (Some(false), None) => None,
        (None, Some(true)) => Some(true),
        (None, Some(false)) => None,
        (None, None) => None,
    }
}

pub fn tri_value(t: Option<bool>) -> Value {
    match t {
        Some(b) => Value::Boolean(b),
        None => Value::Undefined,
    }
}

// ---------------------------------------------------------------------------
// Requirements oracle: a restricted integer/boolean language evaluated with
// its own rules. Random requirements only use this subset.

#[derive(Debug, Clone)]
pub enum Req {
    Int(i64),
    Bool(bool),
    Ref(Scope, &'static str),
    Add(Box<Req>, Box<Req>),
    Lt(Box<Req>, Box<Req>),
    Ge(Box<Req>, Box<Req>),
    Eq(Box<Req>, Box<Req>),
    Not(Box<Req>),
    And(Box<Req>, Box<Req>),
    Or(Box<Req>, Box<Req>),
}

const REQ_ATTRS: [&str; 4] = ["cpus", "memory", "gpus", "flag"];

pub fn random_req(r: &mut ChaCha8Rng, depth: u32, boolean: bool) -> Req {
    if boolean {
        if depth == 0 || r.random_bool(0.15) {
            return if r.random_bool(0.5) {
                Req::Bool(r.random_bool(0.7))
            } else {
                Req::Ref(random_scope(r), "flag")
            };
        }
        match r.random_range(0..6) {
            0 => Req::Not(Box::new(random_req(r, depth - 1, true))),
            1 => Req::And(Box::new(random_req(r, depth - 1, true)), Box::new(random_req(r, depth - 1, true))),
            2 => Req::Or(Box::new(random_req(r, depth - 1, true)), Box::new(random_req(r, depth - 1, true))),
            3 => Req::Lt(Box::new(random_req(r, depth - 1, false)), Box::new(random_req(r, depth - 1, false))),
            4 => Req::Ge(Box::new(random_req(r, depth - 1, false)), Box::new(random_req(r, depth - 1, false))),
            _ => Req::Eq(Box::new(random_req(r, depth - 1, false)), Box::new(random_req(r, depth - 1, false))),
        }
    } else {
        if depth == 0 || r.random_bool(0.6) {
            return if r.random_bool(0.4) {
                Req::Int(r.random_range(0..10))
            } else {
                Req::Ref(random_scope(r), REQ_ATTRS[r.random_range(0..3)])
            };
        }
        Req::Add(Box::new(random_req(r, depth - 1, false)), Box::new(random_req(r, depth - 1, false)))
    }
}

fn random_scope(r: &mut ChaCha8Rng) -> Scope {
    [Scope::My, Scope::Target, Scope::Unscoped][r.random_range(0..3)]
}

impl Req {
    pub fn to_expr(&self) -> Expr {
        match self {
            Req::Int(i) => Expr::lit(*i),
            Req::Bool(b) => Expr::lit(*b),
            Req::Ref(s, n) => Expr::attr(*s, n),
            Req::Add(a, b) => Expr::binary(BinaryOp::Add, a.to_expr(), b.to_expr()),
            Req::Lt(a, b) => Expr::binary(BinaryOp::Lt, a.to_expr(), b.to_expr()),
            Req::Ge(a, b) => Expr::binary(BinaryOp::Ge, a.to_expr(), b.to_expr()),
            Req::Eq(a, b) => Expr::binary(BinaryOp::Eq, a.to_expr(), b.to_expr()),
            Req::Not(a) => Expr::unary(UnaryOp::Not, a.to_expr()),
            Req::And(a, b) => Expr::binary(BinaryOp::And, a.to_expr(), b.to_expr()),
            Req::Or(a, b) => Expr::binary(BinaryOp::Or, a.to_expr(), b.to_expr()),
        }
    }
}

/// Plain attribute table used by the oracle: every value is a literal.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub ints: Vec<(&'static str, i64)>,
    pub flag: Option<bool>,
}

impl Table {
    fn int(&self, name: &str) -> Option<i64> {
        self.ints.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }

    fn has(&self, name: &str) -> bool {
        if name == "flag" {
            self.flag.is_some()
        } else {
            self.int(name).is_some()
        }
    }
}

pub fn random_table(r: &mut ChaCha8Rng) -> Table {
    let mut ints = Vec::new();
    for name in ["cpus", "memory", "gpus"] {
        if r.random_bool(0.75) {
            ints.push((name, r.random_range(0..8)));
        }
    }
    let flag = if r.random_bool(0.6) { Some(r.random_bool(0.5)) } else { None };
    Table { ints, flag }
}

pub fn table_ad(kind: AdKind, t: &Table, req: &Req) -> Ad {
    let mut ad = Ad::new(kind);
    for (n, v) in &t.ints {
        ad.set(n, Expr::lit(*v));
    }
    if let Some(f) = t.flag {
        ad.set("flag", Expr::lit(f));
    }
    ad.set("requirements", req.to_expr());
    ad
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum OV {
    Int(i64),
    Bool(bool),
    Undef,
    Err,
}

fn oracle_ref(my: &Table, target: &Table, scope: Scope, name: &str) -> OV {
    let from = |t: &Table| {
        if name == "flag" {
            t.flag.map(OV::Bool).unwrap_or(OV::Undef)
        } else {
            t.int(name).map(OV::Int).unwrap_or(OV::Undef)
        }
    };
    match scope {
        Scope::My => from(my),
        Scope::Target => from(target),
        Scope::Unscoped => {
            if my.has(name) {
                from(my)
            } else {
                from(target)
            }
        }
    }
}

fn oracle_eval(req: &Req, my: &Table, target: &Table) -> OV {
    let tri = |v: OV| match v {
        OV::Bool(b) => Ok(Some(b)),
        OV::Undef => Ok(None),
        _ => Err(()),
    };
    match req {
        Req::Int(i) => OV::Int(*i),
        Req::Bool(b) => OV::Bool(*b),
        Req::Ref(s, n) => oracle_ref(my, target, *s, n),
        Req::Add(a, b) => match (oracle_eval(a, my, target), oracle_eval(b, my, target)) {
            (OV::Err, _) | (_, OV::Err) => OV::Err,
            (OV::Undef, _) | (_, OV::Undef) => OV::Undef,
            (OV::Int(x), OV::Int(y)) => OV::Int(x + y),
            _ => OV::Err,
        },
        Req::Lt(a, b) | Req::Ge(a, b) | Req::Eq(a, b) => {
            match (oracle_eval(a, my, target), oracle_eval(b, my, target)) {
                (OV::Err, _) | (_, OV::Err) => OV::Err,
                (OV::Undef, _) | (_, OV::Undef) => OV::Undef,
                (OV::Int(x), OV::Int(y)) => OV::Bool(match req {
                    Req::Lt(..) => x < y,
                    Req::Ge(..) => x >= y,
                    _ => x == y,
                }),
                (OV::Bool(x), OV::Bool(y)) if matches!(req, Req::Eq(..)) => OV::Bool(x == y),
                _ => OV::Err,
            }
        }
        Req::Not(a) => match oracle_eval(a, my, target) {
            OV::Bool(b) => OV::Bool(!b),
            OV::Undef => OV::Undef,
            _ => OV::Err,
        },
        Req::And(a, b) => match tri(oracle_eval(a, my, target)) {
            Err(()) => OV::Err,
            Ok(Some(false)) => OV::Bool(false),
            Ok(l) => match tri(oracle_eval(b, my, target)) {
                Err(()) => OV::Err,
                Ok(r) => kleene_and_table(l, r).map(OV::Bool).unwrap_or(OV::Undef),
            },
        },
        Req::Or(a, b) => match tri(oracle_eval(a, my, target)) {
            Err(()) => OV::Err,
            Ok(Some(true)) => OV::Bool(true),
            Ok(l) => match tri(oracle_eval(b, my, target)) {
                Err(()) => OV::Err,
                Ok(r) => kleene_or_table(l, r).map(OV::Bool).unwrap_or(OV::Undef),
            },
        },
    }
}

/// Oracle for `requirements_match(a, b)`.
pub fn oracle_requirements_match(req: &Req, my: &Table, target: &Table) -> bool {
    oracle_eval(req, my, target) == OV::Bool(true)
}

// ---------------------------------------------------------------------------
// Geometry and caching references

pub fn haversine_km_ref(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = (lat2 - lat1).to_radians();
    let dl = (lon2 - lon1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * 6371.0 * h.sqrt().min(1.0).asin()
}

/// Move-to-front stack LRU over variable-size items, capacity in bytes.
/// Returns per-access hit flags.
pub struct StackLru {
    pub capacity: u64,
    pub stack: Vec<((u64, u64), u64)>,
}

impl StackLru {
    pub fn new(capacity: u64) -> Self {
        StackLru { capacity, stack: Vec::new() }
    }

    pub fn access(&mut self, key: (u64, u64), size: u64) -> bool {
        if let Some(pos) = self.stack.iter().position(|(k, _)| *k == key) {
            let item = self.stack.remove(pos);
            self.stack.insert(0, item);
            return true;
        }
        if size > self.capacity {
            return false;
        }
        self.stack.insert(0, (key, size));
        while self.stack.iter().map(|(_, s)| s).sum::<u64>() > self.capacity {
            self.stack.pop();
        }
        false
    }
}

// ---------------------------------------------------------------------------
// Simulation helpers

pub fn scenario_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn bundled(name: &str) -> glidesim::gridsim::Scenario {
    glidesim::gridsim::Scenario::load(&scenario_dir().join(name)).unwrap()
}

pub const BUNDLED: [&str; 6] = [
    "elasticity.toml",
    "fair-share.toml",
    "fair-share-weighted.toml",
    "iterative.toml",
    "ligo-10k.toml",
    "rift-gpu.toml",
];

pub fn simulate(s: &glidesim::gridsim::Scenario) -> glidesim::gridsim::Trace {
    glidesim::gridsim::run(s, s.seed, s.until.as_secs()).unwrap()
}

pub fn toml_scenario(text: &str) -> glidesim::gridsim::Scenario {
    glidesim::gridsim::Scenario::from_toml(text).unwrap_or_else(|e| panic!("{e}\n{text}"))
}

/// Largest number of cores held by started pilots at any instant, per site,
/// from PILOT_START/PILOT_DEAD pairs.
pub fn peak_pilot_cores(t: &glidesim::gridsim::Trace) -> std::collections::BTreeMap<String, u64> {
    use glidesim::gridsim::RecordKind;
    let mut held = std::collections::BTreeMap::<u64, (String, u64)>::new();
    let mut now = std::collections::BTreeMap::<String, u64>::new();
    let mut peak = std::collections::BTreeMap::<String, u64>::new();
    for r in &t.records {
        match r.kind {
            RecordKind::PilotStart => {
                let site = r.field("site").unwrap().to_string();
                let cpus: u64 = r.num("cpus").unwrap();
                held.insert(r.num("pilot").unwrap(), (site.clone(), cpus));
                let n = now.entry(site.clone()).or_default();
                *n += cpus;
                let p = peak.entry(site).or_default();
                *p = (*p).max(*n);
            }
            RecordKind::PilotDead => {
                if let Some((site, cpus)) = held.remove(&r.num("pilot").unwrap()) {
                    *now.get_mut(&site).unwrap() -= cpus;
                }
            }
            _ => {}
        }
    }
    peak
}

/// Running jobs per owner sampled at each NEGOTIATE record (after the
/// cycle's claims, i.e. just before the next one).
pub fn running_by_owner_at_negotiations(t: &glidesim::gridsim::Trace) -> Vec<(u64, std::collections::BTreeMap<String, i64>)> {
    use glidesim::gridsim::RecordKind;
    let mut running = std::collections::BTreeMap::<String, i64>::new();
    let mut owner_of = std::collections::BTreeMap::<u64, String>::new();
    let mut out = Vec::new();
    for r in &t.records {
        match r.kind {
            RecordKind::Negotiate => out.push((r.time, running.clone())),
            RecordKind::JobStart => {
                let o = r.field("owner").unwrap().to_string();
                owner_of.insert(r.num("claim").unwrap(), o.clone());
                *running.entry(o).or_default() += 1;
            }
            RecordKind::JobDone | RecordKind::JobEvict => {
                if let Some(o) = owner_of.remove(&r.num("claim").unwrap()) {
                    *running.get_mut(&o).unwrap() -= 1;
                }
            }
            _ => {}
        }
    }
    out
}
