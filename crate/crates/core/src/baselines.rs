//! Reference schedulers: SCORE (least-allocated scoring) and HYBRID
//! (persistent allocations for long-running functions, SCORE-style
//! short-lived containers for the rest). Both are deterministic.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::cluster::{
    check_feasible, cores_for_slots, even_split, ClusterSpec, ContainerAlloc, Plan, UsageTracker,
};
use crate::error::CapacityError;
use crate::workload::{EpochWorkload, FnIdx, FunctionSpec};

/// Baseline scheduler knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// Request slots provisioned per container; container count per function
    /// is ceil(arrivals / target_batch).
    pub target_batch: u64,
    /// Functions with runtime at or above this are handled as persistent
    /// allocations by HYBRID.
    pub runtime_threshold_s: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            target_batch: 4,
            runtime_threshold_s: 30.0,
        }
    }
}

/// Node choice: maximize 0.5 * free-core fraction + 0.5 * free-memory
/// fraction after placement, ties to the lowest node index.
fn best_node(usage: &UsageTracker, cluster: &ClusterSpec, cores: u32, mem: u64) -> Option<usize> {
    let core_cap = cluster.node.cores as f64;
    let mem_cap = cluster.node.mem_mb as f64;
    let mut best: Option<(usize, f64)> = None;
    for n in 0..cluster.n_nodes {
        if !usage.fits(n, cores, mem) {
            continue;
        }
        let free_cores = (usage.spare_cores(n) - cores as u64) as f64 / core_cap;
        let free_mem = (usage.spare_mem(n) - mem) as f64 / mem_cap;
        let score = 0.5 * free_cores + 0.5 * free_mem;
        match best {
            Some((_, s)) if score <= s => {}
            _ => best = Some((n, score)),
        }
    }
    best.map(|(n, _)| n)
}

fn place_function(
    plan: &mut Plan,
    usage: &mut UsageTracker,
    fn_idx: FnIdx,
    spec: &FunctionSpec,
    arrivals: u64,
    cluster: &ClusterSpec,
    cfg: &BaselineConfig,
) -> Result<(), CapacityError> {
    let count = arrivals.div_ceil(cfg.target_batch).max(1) as usize;
    let cores = cores_for_slots(spec, cfg.target_batch);
    for assigned in even_split(arrivals, count) {
        let node_id = best_node(usage, cluster, cores, spec.mem_mb).ok_or_else(|| {
            CapacityError {
                function: spec.id.clone(),
            }
        })?;
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
    Ok(())
}

/// Autoscale every function to ceil(arrivals / target_batch) containers of
/// `target_batch` slots and place each on the least-allocated node.
pub fn score_schedule(
    workload: &EpochWorkload,
    specs: &[FunctionSpec],
    cluster: &ClusterSpec,
    _previous: Option<&Plan>,
    cfg: &BaselineConfig,
) -> Result<Plan, CapacityError> {
    let mut plan = Plan::empty();
    let mut usage = UsageTracker::new(cluster, &plan);
    for (&fn_idx, &arrivals) in &workload.arrivals {
        place_function(&mut plan, &mut usage, fn_idx, &specs[fn_idx], arrivals, cluster, cfg)?;
    }
    plan.normalize();
    debug_assert!(check_feasible(&plan, cluster, specs, workload).is_feasible());
    Ok(plan)
}

/// Persistent allocations for long-running functions (carried over from the
/// previous plan and never torn down, scaled up on demand), SCORE-style
/// short-lived containers for short-running ones.
pub fn hybrid_schedule(
    workload: &EpochWorkload,
    specs: &[FunctionSpec],
    cluster: &ClusterSpec,
    previous: Option<&Plan>,
    cfg: &BaselineConfig,
) -> Result<Plan, CapacityError> {
    let is_long = |f: FnIdx| specs[f].runtime_s >= cfg.runtime_threshold_s;

    // carry every long-function container forward, idle until assigned
    let mut plan = Plan::empty();
    let mut carried: BTreeMap<FnIdx, Vec<usize>> = BTreeMap::new();
    if let Some(prev) = previous {
        for c in &prev.allocations {
            if is_long(c.fn_idx) {
                let mut kept = *c;
                kept.assigned_requests = 0;
                carried.entry(c.fn_idx).or_default().push(plan.allocations.len());
                plan.allocations.push(kept);
            }
        }
    }
    let mut usage = UsageTracker::new(cluster, &plan);

    for (&fn_idx, &arrivals) in &workload.arrivals {
        let spec = &specs[fn_idx];
        if !is_long(fn_idx) {
            place_function(&mut plan, &mut usage, fn_idx, spec, arrivals, cluster, cfg)?;
            continue;
        }
        let mut group = carried.remove(&fn_idx).unwrap_or_default();
        let target = arrivals.div_ceil(cfg.target_batch).max(1) as usize;
        let cores = cores_for_slots(spec, cfg.target_batch);
        while group.len() < target {
            let node_id = best_node(&usage, cluster, cores, spec.mem_mb).ok_or_else(|| {
                CapacityError {
                    function: spec.id.clone(),
                }
            })?;
            usage.add(node_id, cores, spec.mem_mb);
            group.push(plan.allocations.len());
            plan.allocations.push(ContainerAlloc {
                fn_idx,
                node_id,
                cores,
                mem_mb: spec.mem_mb,
                assigned_requests: 0,
                is_new: false,
            });
        }
        for (slot, &idx) in group.iter().enumerate() {
            plan.allocations[idx].assigned_requests = even_split(arrivals, group.len())[slot];
        }
    }
    plan.normalize();
    debug_assert!(check_feasible(&plan, cluster, specs, workload).is_feasible());
    Ok(plan)
}
