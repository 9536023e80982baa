//! Test-only oracles and fixtures.
//!
//! Nothing here is used by the shipped library: the enumeration oracle
//! derives true Pareto fronts by brute force, and the request-level
//! simulator recomputes SLO outcomes without the closed-form wave schedule,
//! so tests can check the real implementations against independent routes.

use std::collections::{BTreeMap, BTreeSet};

use sfcm_core::cluster::{cores_for_slots, ClusterSpec, ContainerAlloc, NodeSpec, OverheadSpec, Plan};
use sfcm_core::sustain::{evaluate, EnvironmentState, EvalContext, ObjectiveVector};
use sfcm_core::workload::{EpochWorkload, FunctionSpec};

/// A self-contained single-epoch instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub specs: Vec<FunctionSpec>,
    pub cluster: ClusterSpec,
    pub env: EnvironmentState,
    pub workload: EpochWorkload,
    pub epoch_length_s: f64,
    /// Previous epoch's plan; containers matching its (function, node) pairs
    /// start warm.
    pub previous: Option<Plan>,
}

impl Instance {
    pub fn ctx(&self) -> EvalContext<'_> {
        EvalContext {
            specs: &self.specs,
            cluster: &self.cluster,
            env: &self.env,
            epoch_length_s: self.epoch_length_s,
        }
    }
}

/// The 2-node, 3-function instance used by the enumeration oracle.
///
/// The structure forces real trade-offs:
/// - `f1` (deadline below two service waves) violates one request per
///   missing first-wave slot, and node capacity caps slots per container,
///   so cutting violations competes with everything else for cores.
/// - `f2` meets its deadline only warm (its previous-epoch node) or with a
///   second slot, tying placement to startup energy.
/// - `f3` runs long: with one slot its last wave spills past the epoch end
///   (a violation that saves in-flight energy), so SLO and energy pull in
///   opposite directions.
pub fn oracle_instance() -> Instance {
    let spec = |id: &str, runtime: f64, deadline: f64, per: f64| FunctionSpec {
        id: id.to_string(),
        runtime_s: runtime,
        deadline_s: deadline,
        mem_mb: 256,
        cpu_base_cores: 0.5,
        cpu_per_request_cores: per,
    };
    let mut arrivals = BTreeMap::new();
    arrivals.insert(0usize, 3u64);
    arrivals.insert(1usize, 2u64);
    arrivals.insert(2usize, 3u64);
    let previous = Plan::new(vec![
        ContainerAlloc {
            fn_idx: 1,
            node_id: 0,
            cores: 2,
            mem_mb: 256,
            assigned_requests: 2,
            is_new: false,
        },
        ContainerAlloc {
            fn_idx: 2,
            node_id: 1,
            cores: 2,
            mem_mb: 256,
            assigned_requests: 2,
            is_new: false,
        },
    ]);
    Instance {
        specs: vec![
            spec("f1", 10.0, 15.0, 1.5),
            spec("f2", 6.0, 13.0, 1.0),
            spec("f3", 110.0, 330.0, 1.0),
        ],
        cluster: ClusterSpec {
            n_nodes: 2,
            node: NodeSpec {
                cores: 6,
                mem_mb: 2048,
                p_idle_w: 100.0,
                p_max_w: 500.0,
            },
            overhead: OverheadSpec {
                cold_start_s: 2.0,
                shutdown_s: 0.0,
                startup_energy_j: 6000.0,
            },
        },
        env: EnvironmentState::default(),
        workload: EpochWorkload {
            epoch_index: 0,
            arrivals,
        },
        epoch_length_s: 300.0,
        previous: Some(previous),
    }
}

/// Container shape: (assigned requests, slots, node).
type Shape = (u64, u64, usize);

/// All multisets of containers serving `arrivals` requests of one function:
/// every container holds >= 1 request, slots range over [1, assigned] (larger
/// slot counts change nothing), nodes over the cluster.
fn function_options(arrivals: u64, max_containers: usize, n_nodes: usize) -> Vec<Vec<Shape>> {
    let mut out: BTreeSet<Vec<Shape>> = BTreeSet::new();
    let mut current: Vec<Shape> = Vec::new();
    fn rec(
        remaining: u64,
        max_containers: usize,
        n_nodes: usize,
        current: &mut Vec<Shape>,
        out: &mut BTreeSet<Vec<Shape>>,
    ) {
        if remaining == 0 {
            if !current.is_empty() {
                let mut sorted = current.clone();
                sorted.sort_unstable();
                out.insert(sorted);
            }
            return;
        }
        if current.len() == max_containers {
            return;
        }
        for part in 1..=remaining {
            for slots in 1..=part {
                for node in 0..n_nodes {
                    current.push((part, slots, node));
                    rec(remaining - part, max_containers, n_nodes, current, out);
                    current.pop();
                }
            }
        }
    }
    rec(arrivals, max_containers, n_nodes, &mut current, &mut out);
    out.into_iter().collect()
}

/// Exhaustively enumerate every feasible plan of the instance with at most
/// `max_containers` containers per function. Plans with idle containers or
/// non-minimal cores are omitted: with a positive idle core base they are
/// always weakly dominated, so the objective-vector front is unaffected.
pub fn enumerate_feasible_plans(instance: &Instance, max_containers: usize) -> Vec<Plan> {
    let fns: Vec<(usize, u64)> = instance
        .workload
        .arrivals
        .iter()
        .map(|(&f, &a)| (f, a))
        .collect();
    let per_fn: Vec<Vec<Vec<Shape>>> = fns
        .iter()
        .map(|&(_, a)| function_options(a, max_containers, instance.cluster.n_nodes))
        .collect();

    let mut plans = Vec::new();
    let mut choice = vec![0usize; fns.len()];
    'outer: loop {
        // materialize and capacity-check the current combination
        let mut allocations = Vec::new();
        let mut cores_used = vec![0u64; instance.cluster.n_nodes];
        let mut mem_used = vec![0u64; instance.cluster.n_nodes];
        let mut ok = true;
        for (slot, &(fn_idx, _)) in fns.iter().enumerate() {
            let spec = &instance.specs[fn_idx];
            for &(assigned, slots, node) in &per_fn[slot][choice[slot]] {
                let cores = cores_for_slots(spec, slots);
                cores_used[node] += cores as u64;
                mem_used[node] += spec.mem_mb;
                if cores_used[node] > instance.cluster.node.cores as u64
                    || mem_used[node] > instance.cluster.node.mem_mb
                {
                    ok = false;
                    break;
                }
                allocations.push(ContainerAlloc {
                    fn_idx,
                    node_id: node,
                    cores,
                    mem_mb: spec.mem_mb,
                    assigned_requests: assigned,
                    is_new: false,
                });
            }
            if !ok {
                break;
            }
        }
        if ok {
            plans.push(Plan::new(allocations));
        }

        // next combination
        for slot in (0..fns.len()).rev() {
            choice[slot] += 1;
            if choice[slot] < per_fn[slot].len() {
                continue 'outer;
            }
            choice[slot] = 0;
            if slot == 0 {
                break 'outer;
            }
        }
        if fns.is_empty() {
            break;
        }
    }
    plans
}

/// Minimization dominance, defined locally so archive checks do not depend
/// on the implementation under test.
pub fn dominates_min(a: &ObjectiveVector, b: &ObjectiveVector) -> bool {
    let a = a.as_array();
    let b = b.as_array();
    a.iter().zip(&b).all(|(x, y)| x <= y) && a.iter().zip(&b).any(|(x, y)| x < y)
}

/// Evaluate every enumerated plan and keep the distinct non-dominated
/// objective vectors: the true Pareto front of the instance.
pub fn true_front(instance: &Instance, max_containers: usize) -> Vec<ObjectiveVector> {
    let ctx = instance.ctx();
    let vectors: Vec<ObjectiveVector> = enumerate_feasible_plans(instance, max_containers)
        .iter()
        .map(|plan| {
            evaluate(plan, &instance.workload, &ctx, instance.previous.as_ref())
                .expect("enumerated plans are feasible")
        })
        .collect();
    let mut front: Vec<ObjectiveVector> = Vec::new();
    for v in &vectors {
        if vectors.iter().any(|w| dominates_min(w, v)) {
            continue;
        }
        if !front.iter().any(|w| w == v) {
            front.push(*v);
        }
    }
    front
}

/// Minimum of one objective axis over the whole feasible space.
pub fn enumerated_minimum(instance: &Instance, max_containers: usize, axis: usize) -> f64 {
    let ctx = instance.ctx();
    enumerate_feasible_plans(instance, max_containers)
        .iter()
        .map(|plan| {
            evaluate(plan, &instance.workload, &ctx, instance.previous.as_ref())
                .expect("enumerated plans are feasible")
                .as_array()[axis]
        })
        .fold(f64::INFINITY, f64::min)
}

/// Request-level FIFO simulation: each request is dispatched to the earliest
/// free slot of its container. An independent route to the same service
/// model as the closed-form wave schedule.
pub struct BruteSlo {
    pub violations: u64,
    pub total_requests: u64,
    /// Per container, per request, in dispatch order.
    pub completions: Vec<Vec<f64>>,
}

pub fn brute_force_slo(
    plan: &Plan,
    specs: &[FunctionSpec],
    workload: &EpochWorkload,
    overhead: &OverheadSpec,
    epoch_length_s: f64,
) -> BruteSlo {
    let total_requests: u64 = workload.arrivals.values().sum();
    let mut violations = 0u64;
    let mut completions = Vec::with_capacity(plan.allocations.len());
    for c in &plan.allocations {
        let spec = &specs[c.fn_idx];
        let cold = if c.is_new { overhead.cold_start_s } else { 0.0 };
        let k = (((c.cores as f64 - spec.cpu_base_cores) / spec.cpu_per_request_cores).floor()
            as u64)
            .max(1)
            .min(c.assigned_requests.max(1)) as usize;
        // per-slot completed-request counters; slot clock is cold + count * r
        let mut served = vec![0u64; k];
        let mut per_request = Vec::with_capacity(c.assigned_requests as usize);
        for _ in 0..c.assigned_requests {
            let slot = (0..k)
                .min_by(|&a, &b| {
                    let fa = cold + served[a] as f64 * spec.runtime_s;
                    let fb = cold + served[b] as f64 * spec.runtime_s;
                    fa.total_cmp(&fb).then(a.cmp(&b))
                })
                .expect("k >= 1");
            served[slot] += 1;
            let done = cold + served[slot] as f64 * spec.runtime_s;
            if done > spec.deadline_s || done > epoch_length_s {
                violations += 1;
            }
            per_request.push(done);
        }
        completions.push(per_request);
    }
    BruteSlo {
        violations,
        total_requests,
        completions,
    }
}
