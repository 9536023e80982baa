//! Cluster model and the scheduling + autoscaling [`Plan`].
//!
//! A plan is the optimizer's decision variable: one [`ContainerAlloc`] per
//! container, holding the function it serves, its node, its size, and the
//! number of requests routed to it. Plans are immutable values; every
//! operation returns a fresh plan. Allocations are kept sorted by
//! `(fn_idx, node_id)` so structurally equal plans compare equal.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use crate::error::CapacityError;
use crate::workload::{EpochWorkload, FnIdx, FunctionSpec};

/// One compute node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeSpec {
    pub cores: u32,
    pub mem_mb: u64,
    pub p_idle_w: f64,
    pub p_max_w: f64,
}

impl Default for NodeSpec {
    fn default() -> Self {
        NodeSpec {
            cores: 128,
            mem_mb: 262_144,
            p_idle_w: 100.0,
            p_max_w: 500.0,
        }
    }
}

/// Container lifecycle overheads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverheadSpec {
    /// Delay before a newly started container serves, seconds.
    pub cold_start_s: f64,
    /// Residual idle occupancy of a container shut down this epoch, seconds.
    pub shutdown_s: f64,
    /// Energy cost per container start, joules.
    pub startup_energy_j: f64,
}

impl Default for OverheadSpec {
    fn default() -> Self {
        OverheadSpec {
            cold_start_s: 2.0,
            shutdown_s: 0.0,
            startup_energy_j: 500.0,
        }
    }
}

/// Homogeneous cluster of `n_nodes` nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterSpec {
    pub n_nodes: usize,
    pub node: NodeSpec,
    pub overhead: OverheadSpec,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        ClusterSpec {
            n_nodes: 50,
            node: NodeSpec::default(),
            overhead: OverheadSpec::default(),
        }
    }
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<(), crate::error::ConfigError> {
        use crate::error::ConfigError;
        if self.n_nodes == 0 {
            return Err(ConfigError::field("cluster.n_nodes", "must be >= 1"));
        }
        if self.node.cores == 0 {
            return Err(ConfigError::field("cluster.node.cores", "must be >= 1"));
        }
        if !(0.0 < self.node.p_idle_w && self.node.p_idle_w < self.node.p_max_w) {
            return Err(ConfigError::field(
                "cluster.node",
                "need 0 < p_idle_w < p_max_w",
            ));
        }
        if self.overhead.cold_start_s < 0.0
            || self.overhead.shutdown_s < 0.0
            || self.overhead.startup_energy_j < 0.0
        {
            return Err(ConfigError::field("cluster.overhead", "fields must be >= 0"));
        }
        Ok(())
    }
}

/// One container of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContainerAlloc {
    pub fn_idx: FnIdx,
    pub node_id: usize,
    pub cores: u32,
    pub mem_mb: u64,
    pub assigned_requests: u64,
    /// Set by [`diff_new_containers`]: true when the container did not exist
    /// in the previous epoch's plan.
    pub is_new: bool,
}

impl ContainerAlloc {
    /// Parallel request slots: floor((cores - base) / per_request).
    pub fn slots(&self, spec: &FunctionSpec) -> u64 {
        let raw = (self.cores as f64 - spec.cpu_base_cores) / spec.cpu_per_request_cores;
        raw.floor().max(0.0) as u64
    }
}

/// Integer cores needed for `slots` parallel requests of `spec`.
pub fn cores_for_slots(spec: &FunctionSpec, slots: u64) -> u32 {
    (spec.cpu_base_cores + slots as f64 * spec.cpu_per_request_cores).ceil() as u32
}

/// A full scheduling + autoscaling decision for one epoch.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Plan {
    pub allocations: Vec<ContainerAlloc>,
}

impl Plan {
    pub fn empty() -> Self {
        Plan::default()
    }

    pub fn new(mut allocations: Vec<ContainerAlloc>) -> Self {
        allocations.sort_by_key(|c| (c.fn_idx, c.node_id));
        Plan { allocations }
    }

    pub(crate) fn normalize(&mut self) {
        self.allocations.sort_by_key(|c| (c.fn_idx, c.node_id));
    }

    /// (used cores, used mem) per node.
    pub fn node_usage(&self, n_nodes: usize) -> Vec<(u64, u64)> {
        let mut usage = vec![(0u64, 0u64); n_nodes];
        for c in &self.allocations {
            if c.node_id < n_nodes {
                usage[c.node_id].0 += c.cores as u64;
                usage[c.node_id].1 += c.mem_mb;
            }
        }
        usage
    }

    /// Indices of this plan's containers grouped by function, in plan order.
    pub fn groups(&self) -> BTreeMap<FnIdx, Vec<usize>> {
        let mut groups: BTreeMap<FnIdx, Vec<usize>> = BTreeMap::new();
        for (i, c) in self.allocations.iter().enumerate() {
            groups.entry(c.fn_idx).or_default().push(i);
        }
        groups
    }

    /// Multiset of containers per (function, node) pair.
    pub fn pair_counts(&self) -> BTreeMap<(FnIdx, usize), usize> {
        let mut counts = BTreeMap::new();
        for c in &self.allocations {
            *counts.entry((c.fn_idx, c.node_id)).or_insert(0) += 1;
        }
        counts
    }
}

/// One constraint breach found by [`check_feasible`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NodeCoreOverflow { node_id: usize, used: u64, capacity: u32 },
    NodeMemOverflow { node_id: usize, used_mb: u64, capacity_mb: u64 },
    RequestMismatch { fn_idx: FnIdx, assigned: u64, arrivals: u64 },
    UnknownFunction { fn_idx: FnIdx },
    BadNode { node_id: usize, n_nodes: usize },
    TooFewCores { fn_idx: FnIdx, cores: u32 },
    MemMismatch { fn_idx: FnIdx, mem_mb: u64, spec_mem_mb: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NodeCoreOverflow { node_id, used, capacity } => {
                write!(f, "node {node_id}: {used} cores allocated, capacity {capacity}")
            }
            Violation::NodeMemOverflow { node_id, used_mb, capacity_mb } => {
                write!(f, "node {node_id}: {used_mb} MB allocated, capacity {capacity_mb} MB")
            }
            Violation::RequestMismatch { fn_idx, assigned, arrivals } => {
                write!(f, "function #{fn_idx}: {assigned} requests assigned, {arrivals} arrived")
            }
            Violation::UnknownFunction { fn_idx } => write!(f, "unknown function index {fn_idx}"),
            Violation::BadNode { node_id, n_nodes } => {
                write!(f, "node id {node_id} out of range (cluster has {n_nodes})")
            }
            Violation::TooFewCores { fn_idx, cores } => {
                write!(f, "function #{fn_idx}: {cores} cores leave no request slot")
            }
            Violation::MemMismatch { fn_idx, mem_mb, spec_mem_mb } => {
                write!(f, "function #{fn_idx}: container holds {mem_mb} MB, spec says {spec_mem_mb} MB")
            }
        }
    }
}

/// Feasibility verdict plus every violated constraint with context.
#[derive(Debug, Clone, Default)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "feasible");
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

/// Check every plan invariant: node capacities, request conservation, and
/// per-container sanity. Infeasibility is reported, never an error.
pub fn check_feasible(
    plan: &Plan,
    cluster: &ClusterSpec,
    specs: &[FunctionSpec],
    workload: &EpochWorkload,
) -> FeasibilityReport {
    let mut report = FeasibilityReport::default();
    let mut assigned: BTreeMap<FnIdx, u64> = BTreeMap::new();

    for c in &plan.allocations {
        if c.node_id >= cluster.n_nodes {
            report.violations.push(Violation::BadNode {
                node_id: c.node_id,
                n_nodes: cluster.n_nodes,
            });
        }
        match specs.get(c.fn_idx) {
            None => report
                .violations
                .push(Violation::UnknownFunction { fn_idx: c.fn_idx }),
            Some(spec) => {
                if c.slots(spec) < 1 {
                    report.violations.push(Violation::TooFewCores {
                        fn_idx: c.fn_idx,
                        cores: c.cores,
                    });
                }
                if c.mem_mb != spec.mem_mb {
                    report.violations.push(Violation::MemMismatch {
                        fn_idx: c.fn_idx,
                        mem_mb: c.mem_mb,
                        spec_mem_mb: spec.mem_mb,
                    });
                }
            }
        }
        *assigned.entry(c.fn_idx).or_insert(0) += c.assigned_requests;
    }

    for (node_id, (cores, mem)) in plan.node_usage(cluster.n_nodes).into_iter().enumerate() {
        if cores > cluster.node.cores as u64 {
            report.violations.push(Violation::NodeCoreOverflow {
                node_id,
                used: cores,
                capacity: cluster.node.cores,
            });
        }
        if mem > cluster.node.mem_mb {
            report.violations.push(Violation::NodeMemOverflow {
                node_id,
                used_mb: mem,
                capacity_mb: cluster.node.mem_mb,
            });
        }
    }

    for (&fn_idx, &arrivals) in &workload.arrivals {
        let got = assigned.get(&fn_idx).copied().unwrap_or(0);
        if got != arrivals {
            report.violations.push(Violation::RequestMismatch {
                fn_idx,
                assigned: got,
                arrivals,
            });
        }
    }
    for (&fn_idx, &got) in &assigned {
        if !workload.arrivals.contains_key(&fn_idx) && got > 0 {
            report.violations.push(Violation::RequestMismatch {
                fn_idx,
                assigned: got,
                arrivals: 0,
            });
        }
    }
    report
}

/// Split `total` into `parts` counts, remainder to the earliest parts.
pub(crate) fn even_split(total: u64, parts: usize) -> Vec<u64> {
    let parts64 = parts as u64;
    let base = total / parts64;
    let rem = (total % parts64) as usize;
    (0..parts)
        .map(|i| if i < rem { base + 1 } else { base })
        .collect()
}

/// Running per-node core/memory tallies used by plan constructors.
#[derive(Clone)]
pub(crate) struct UsageTracker {
    cores: Vec<u64>,
    mem: Vec<u64>,
    core_cap: u64,
    mem_cap: u64,
}

impl UsageTracker {
    pub(crate) fn new(cluster: &ClusterSpec, plan: &Plan) -> Self {
        let usage = plan.node_usage(cluster.n_nodes);
        UsageTracker {
            cores: usage.iter().map(|u| u.0).collect(),
            mem: usage.iter().map(|u| u.1).collect(),
            core_cap: cluster.node.cores as u64,
            mem_cap: cluster.node.mem_mb,
        }
    }

    pub(crate) fn fits(&self, node: usize, cores: u32, mem: u64) -> bool {
        self.cores[node] + cores as u64 <= self.core_cap && self.mem[node] + mem <= self.mem_cap
    }

    pub(crate) fn spare_cores(&self, node: usize) -> u64 {
        self.core_cap - self.cores[node]
    }

    pub(crate) fn spare_mem(&self, node: usize) -> u64 {
        self.mem_cap - self.mem[node]
    }

    pub(crate) fn add(&mut self, node: usize, cores: u32, mem: u64) {
        self.cores[node] += cores as u64;
        self.mem[node] += mem;
    }
}

/// Build a random feasible plan: per function, a uniform container count in
/// [1, min(arrivals, 8)], an even request split, sizing for a uniform wave
/// count in [1, 4], and first-fit placement over a randomly permuted node
/// order. When the drawn configuration does not fit, slots are halved down
/// to one and then the container count is reduced, so a capacity error only
/// means the workload cannot fit even as one-slot containers.
pub fn random_plan(
    cluster: &ClusterSpec,
    specs: &[FunctionSpec],
    workload: &EpochWorkload,
    seed: u64,
) -> Result<Plan, CapacityError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_plan_rng(cluster, specs, workload, &mut rng)
}

pub fn random_plan_rng(
    cluster: &ClusterSpec,
    specs: &[FunctionSpec],
    workload: &EpochWorkload,
    rng: &mut ChaCha8Rng,
) -> Result<Plan, CapacityError> {
    // draw all sizes first, then one node permutation, then place
    let mut drawn: Vec<(FnIdx, u64, u64, Vec<u64>)> = Vec::new(); // (fn, arrivals, count, waves per container)
    for (&fn_idx, &arrivals) in &workload.arrivals {
        let c = rng.gen_range(1..=arrivals.min(8));
        let waves = (0..c).map(|_| rng.gen_range(1u64..=4)).collect();
        drawn.push((fn_idx, arrivals, c, waves));
    }
    let mut order: Vec<usize> = (0..cluster.n_nodes).collect();
    order.shuffle(rng);

    // whole-plan attempts with shrinking container counts; the final attempt
    // is the minimal configuration (one one-slot container per function), so
    // an error genuinely means the workload cannot fit
    const FINAL_ATTEMPT: u32 = 4;
    for attempt in 0..=FINAL_ATTEMPT {
        let mut plan = Plan::empty();
        let mut usage = UsageTracker::new(cluster, &plan);
        let mut fits = true;
        'functions: for (fn_idx, arrivals, count, waves) in &drawn {
            let (fn_idx, arrivals, count) = (*fn_idx, *arrivals, *count);
            let spec = &specs[fn_idx];
            let count = if attempt == FINAL_ATTEMPT {
                1
            } else {
                (count >> attempt).max(1)
            };
            for (slot_idx, assigned) in even_split(arrivals, count as usize).into_iter().enumerate() {
                let mut slots = if attempt == FINAL_ATTEMPT {
                    1
                } else {
                    assigned.div_ceil(waves[slot_idx]).max(1)
                };
                let placed = loop {
                    let cores = cores_for_slots(spec, slots);
                    match order
                        .iter()
                        .copied()
                        .find(|&n| usage.fits(n, cores, spec.mem_mb))
                    {
                        Some(n) => break Some((n, cores)),
                        None if slots > 1 => slots = slots.div_ceil(2),
                        None => break None,
                    }
                };
                let Some((node_id, cores)) = placed else {
                    if attempt == FINAL_ATTEMPT {
                        return Err(CapacityError {
                            function: spec.id.clone(),
                        });
                    }
                    fits = false;
                    break 'functions;
                };
                usage.add(node_id, cores, spec.mem_mb);
                plan.allocations.push(ContainerAlloc {
                    fn_idx,
                    node_id,
                    cores,
                    mem_mb: spec.mem_mb,
                    assigned_requests: assigned,
                    is_new: false,
                });
            }
        }
        if fits {
            plan.normalize();
            return Ok(plan);
        }
    }
    unreachable!("final attempt either places or errors")
}

/// Recompute `is_new` flags against the previous epoch's plan. Containers
/// match per (function, node) pair with multiplicity: min(previous, current)
/// carry over warm. Within a pair the largest containers stay warm first so
/// the flag assignment does not depend on allocation order.
pub fn diff_new_containers(plan: &Plan, previous: Option<&Plan>) -> Plan {
    let mut result = plan.clone();
    let prev_counts = match previous {
        Some(p) => p.pair_counts(),
        None => BTreeMap::new(),
    };

    let mut by_pair: BTreeMap<(FnIdx, usize), Vec<usize>> = BTreeMap::new();
    for (i, c) in result.allocations.iter().enumerate() {
        by_pair.entry((c.fn_idx, c.node_id)).or_default().push(i);
    }
    for (pair, mut members) in by_pair {
        let warm = prev_counts.get(&pair).copied().unwrap_or(0);
        members.sort_by(|&a, &b| {
            let ca = &result.allocations[a];
            let cb = &result.allocations[b];
            (cb.cores, cb.mem_mb, cb.assigned_requests).cmp(&(
                ca.cores,
                ca.mem_mb,
                ca.assigned_requests,
            ))
        });
        for (rank, idx) in members.into_iter().enumerate() {
            result.allocations[idx].is_new = rank >= warm;
        }
    }
    result
}

// ---------------------------------------------------------------------------
// JSON serialization (documented schema, string function ids)

#[derive(Serialize, Deserialize)]
struct ContainerJson {
    function: String,
    node: usize,
    cores: u32,
    mem_mb: u64,
    requests: u64,
    new: bool,
}

#[derive(Serialize, Deserialize)]
struct PlanJson {
    containers: Vec<ContainerJson>,
}

/// Serialize a plan with string function ids resolved through `specs`.
pub fn plan_to_json(plan: &Plan, specs: &[FunctionSpec]) -> serde_json::Value {
    let containers = plan
        .allocations
        .iter()
        .map(|c| ContainerJson {
            function: specs[c.fn_idx].id.clone(),
            node: c.node_id,
            cores: c.cores,
            mem_mb: c.mem_mb,
            requests: c.assigned_requests,
            new: c.is_new,
        })
        .collect();
    serde_json::to_value(PlanJson { containers }).expect("plan serialization cannot fail")
}

pub fn plan_from_json(value: &serde_json::Value, specs: &[FunctionSpec]) -> Result<Plan, String> {
    let parsed: PlanJson = serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
    let index: BTreeMap<&str, FnIdx> = specs
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let mut allocations = Vec::with_capacity(parsed.containers.len());
    for c in parsed.containers {
        let &fn_idx = index
            .get(c.function.as_str())
            .ok_or_else(|| format!("unknown function id `{}`", c.function))?;
        allocations.push(ContainerAlloc {
            fn_idx,
            node_id: c.node,
            cores: c.cores,
            mem_mb: c.mem_mb,
            assigned_requests: c.requests,
            is_new: c.new,
        });
    }
    Ok(Plan::new(allocations))
}
