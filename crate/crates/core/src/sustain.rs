//! Plan evaluation: SLO violations, energy, carbon, and wastewater.
//!
//! The service model is a deterministic FIFO batch: a container with `k`
//! slots serving `n` requests of runtime `r` completes request `i` (1-based)
//! at `cold + ceil(i/k) * r`, where `cold` is the cold-start delay for new
//! containers. Energy integrates per-container core occupancy over the
//! epoch; water and carbon are linear in the configured rate factors.
//! Everything here is pure, so whole populations can be evaluated in
//! parallel with no coordination.

use serde::{Deserialize, Serialize};

use crate::cluster::{check_feasible, diff_new_containers, ClusterSpec, OverheadSpec, Plan};
use crate::error::EvalError;
use crate::workload::{EpochWorkload, FunctionSpec};

const J_PER_KWH: f64 = 3_600_000.0;

/// Per-epoch environment factors of the sustainability model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvironmentState {
    /// Grams of CO2 per kWh of grid electricity.
    pub carbon_intensity_g_per_kwh: f64,
    /// Liters of cooling water (cycling + evaporation) per kWh of IT energy.
    pub wue_l_per_kwh: f64,
    /// Liters of indirect water per kWh of total energy.
    pub ewif_l_per_kwh: f64,
    /// Grams of CO2 per liter for potable production + wastewater treatment.
    pub carbon_per_liter_water_g: f64,
    /// Coefficient of performance of the cooling loop.
    pub cop_base: f64,
    /// Node utilization above which the shared cooling degrades.
    pub hotspot_util_threshold: f64,
    /// Multiplicative COP factor applied when any node runs hot.
    pub hotspot_cop_penalty: f64,
}

impl Default for EnvironmentState {
    fn default() -> Self {
        EnvironmentState {
            carbon_intensity_g_per_kwh: 400.0,
            wue_l_per_kwh: 1.8,
            ewif_l_per_kwh: 0.4,
            carbon_per_liter_water_g: 1.2,
            cop_base: 4.0,
            hotspot_util_threshold: 0.9,
            hotspot_cop_penalty: 0.5,
        }
    }
}

impl EnvironmentState {
    pub fn validate(&self) -> Result<(), crate::error::ConfigError> {
        use crate::error::ConfigError;
        let nonneg = [
            ("carbon_intensity_g_per_kwh", self.carbon_intensity_g_per_kwh),
            ("wue_l_per_kwh", self.wue_l_per_kwh),
            ("ewif_l_per_kwh", self.ewif_l_per_kwh),
            ("carbon_per_liter_water_g", self.carbon_per_liter_water_g),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) {
                return Err(ConfigError::field(name, "must be >= 0"));
            }
        }
        if !(self.cop_base > 0.0) {
            return Err(ConfigError::field("cop_base", "must be > 0"));
        }
        if !(self.hotspot_util_threshold > 0.0 && self.hotspot_util_threshold <= 1.0) {
            return Err(ConfigError::field("hotspot_util_threshold", "must lie in (0, 1]"));
        }
        if !(self.hotspot_cop_penalty > 0.0 && self.hotspot_cop_penalty <= 1.0) {
            return Err(ConfigError::field("hotspot_cop_penalty", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// The three minimized objectives of one evaluated plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub slo_violation_rate: f64,
    pub carbon_g: f64,
    pub water_l: f64,
}

impl ObjectiveVector {
    pub fn as_array(&self) -> [f64; 3] {
        [self.slo_violation_rate, self.carbon_g, self.water_l]
    }
}

/// Energy account of one epoch, kWh.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyBreakdown {
    pub it_kwh_per_node: Vec<f64>,
    pub it_kwh: f64,
    pub cooling_kwh: f64,
    pub startup_kwh: f64,
    pub total_kwh: f64,
}

/// Completion schedule and violation counts from [`eval_slo`].
#[derive(Debug, Clone)]
pub struct SloOutcome {
    pub violation_rate: f64,
    pub violations: u64,
    pub total_requests: u64,
    /// Per container (plan order), per request (FIFO order): completion time
    /// in seconds from epoch start.
    pub completions: Vec<Vec<f64>>,
}

/// FIFO wave schedule of one container: (wave index 1.., in-flight count).
fn waves(n: u64, k: u64) -> impl Iterator<Item = (u64, u64)> {
    let k = k.max(1);
    let n_waves = n.div_ceil(k);
    (1..=n_waves).map(move |w| {
        let served = if w == n_waves { n - k * (n_waves - 1) } else { k };
        (w, served)
    })
}

/// Deterministic FIFO batch service model. Requests that miss their deadline
/// or cannot complete within the epoch count as violations.
pub fn eval_slo(
    plan: &Plan,
    specs: &[FunctionSpec],
    workload: &EpochWorkload,
    overhead: &OverheadSpec,
    epoch_length_s: f64,
) -> SloOutcome {
    let total_requests = workload.total_requests();
    let mut violations = 0u64;
    let mut completions = Vec::with_capacity(plan.allocations.len());

    for c in &plan.allocations {
        let spec = &specs[c.fn_idx];
        let cold = if c.is_new { overhead.cold_start_s } else { 0.0 };
        let k = c.slots(spec);
        let cutoff = spec.deadline_s.min(epoch_length_s);
        let mut per_request = Vec::with_capacity(c.assigned_requests as usize);
        for (w, served) in waves(c.assigned_requests, k) {
            let done = cold + w as f64 * spec.runtime_s;
            if done > cutoff {
                violations += served;
            }
            for _ in 0..served {
                per_request.push(done);
            }
        }
        completions.push(per_request);
    }

    let violation_rate = if total_requests == 0 {
        0.0
    } else {
        violations as f64 / total_requests as f64
    };
    SloOutcome {
        violation_rate,
        violations,
        total_requests,
        completions,
    }
}

/// Idle occupancy left behind by containers shut down this epoch.
#[derive(Debug, Clone, Copy)]
pub struct ResidualOccupancy {
    pub node_id: usize,
    pub cores: f64,
}

/// Utilization-linear node power plus cooling and startup terms.
///
/// Per node: `u = busy-core-seconds / (cores * epoch_length)`, with
/// busy-core-seconds integrating the idle base of every container over the
/// whole epoch plus the per-request cores of each in-flight wave (clipped to
/// the epoch, capped at the container's allocation). Node IT energy is
/// `(p_idle + (p_max - p_idle) * u) * epoch_length`. Cooling divides total IT
/// energy by the effective COP, which degrades by the hotspot penalty when
/// any node exceeds the utilization threshold.
pub fn eval_energy(
    plan: &Plan,
    specs: &[FunctionSpec],
    cluster: &ClusterSpec,
    env: &EnvironmentState,
    epoch_length_s: f64,
    residuals: &[ResidualOccupancy],
) -> EnergyBreakdown {
    let len = epoch_length_s;
    let mut busy = vec![0.0f64; cluster.n_nodes];

    for c in &plan.allocations {
        let spec = &specs[c.fn_idx];
        let cold = if c.is_new { cluster.overhead.cold_start_s } else { 0.0 };
        let k = c.slots(spec);
        let mut core_seconds = spec.cpu_base_cores * len;
        for (w, served) in waves(c.assigned_requests, k) {
            let start = (cold + (w - 1) as f64 * spec.runtime_s).min(len);
            let end = (cold + w as f64 * spec.runtime_s).min(len);
            let usage = (spec.cpu_base_cores + served as f64 * spec.cpu_per_request_cores)
                .min(c.cores as f64);
            core_seconds += (usage - spec.cpu_base_cores) * (end - start);
        }
        if c.node_id < busy.len() {
            busy[c.node_id] += core_seconds;
        }
    }
    for r in residuals {
        if r.node_id < busy.len() {
            busy[r.node_id] += r.cores * cluster.overhead.shutdown_s.min(len);
        }
    }

    let node = &cluster.node;
    let denom = node.cores as f64 * len;
    let mut hotspot = false;
    let mut it_kwh_per_node = Vec::with_capacity(cluster.n_nodes);
    for b in &busy {
        let u = (b / denom).min(1.0);
        if u > env.hotspot_util_threshold {
            hotspot = true;
        }
        let watts = node.p_idle_w + (node.p_max_w - node.p_idle_w) * u;
        it_kwh_per_node.push(watts * len / J_PER_KWH);
    }
    let it_kwh: f64 = it_kwh_per_node.iter().sum();

    let cop = if hotspot {
        env.cop_base * env.hotspot_cop_penalty
    } else {
        env.cop_base
    };
    let cooling_kwh = it_kwh / cop;
    let new_containers = plan.allocations.iter().filter(|c| c.is_new).count();
    let startup_kwh = cluster.overhead.startup_energy_j * new_containers as f64 / J_PER_KWH;

    EnergyBreakdown {
        it_kwh_per_node,
        it_kwh,
        cooling_kwh,
        startup_kwh,
        total_kwh: it_kwh + cooling_kwh + startup_kwh,
    }
}

/// Cooling water (cycling + evaporation) plus indirect water of generation.
pub fn eval_water(energy: &EnergyBreakdown, env: &EnvironmentState) -> f64 {
    env.wue_l_per_kwh * energy.it_kwh + env.ewif_l_per_kwh * energy.total_kwh
}

/// Electricity carbon plus the carbon embedded in water production/treatment.
pub fn eval_carbon(energy: &EnergyBreakdown, water_l: f64, env: &EnvironmentState) -> f64 {
    env.carbon_intensity_g_per_kwh * energy.total_kwh + env.carbon_per_liter_water_g * water_l
}

/// Everything needed to evaluate plans for one epoch.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub specs: &'a [FunctionSpec],
    pub cluster: &'a ClusterSpec,
    pub env: &'a EnvironmentState,
    pub epoch_length_s: f64,
}

/// Full evaluation result: objectives plus the intermediate accounts.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub objectives: ObjectiveVector,
    pub energy: EnergyBreakdown,
    pub violations: u64,
    pub total_requests: u64,
    /// The evaluated plan with `is_new` flags resolved against the previous
    /// epoch; carry this forward as the next epoch's previous plan.
    pub plan: Plan,
}

/// Compose diff -> SLO -> energy -> water -> carbon. Errors on an infeasible
/// plan; the optimizer never submits one.
pub fn evaluate_full(
    plan: &Plan,
    workload: &EpochWorkload,
    ctx: &EvalContext<'_>,
    previous: Option<&Plan>,
) -> Result<Evaluation, EvalError> {
    let report = check_feasible(plan, ctx.cluster, ctx.specs, workload);
    if !report.is_feasible() {
        return Err(EvalError::Infeasible(report.to_string()));
    }
    let diffed = diff_new_containers(plan, previous);
    let slo = eval_slo(&diffed, ctx.specs, workload, &ctx.cluster.overhead, ctx.epoch_length_s);
    let residuals = shutdown_residuals(&diffed, previous, ctx);
    let energy = eval_energy(&diffed, ctx.specs, ctx.cluster, ctx.env, ctx.epoch_length_s, &residuals);
    let water_l = eval_water(&energy, ctx.env);
    let carbon_g = eval_carbon(&energy, water_l, ctx.env);
    Ok(Evaluation {
        objectives: ObjectiveVector {
            slo_violation_rate: slo.violation_rate,
            carbon_g,
            water_l,
        },
        energy,
        violations: slo.violations,
        total_requests: slo.total_requests,
        plan: diffed,
    })
}

pub fn evaluate(
    plan: &Plan,
    workload: &EpochWorkload,
    ctx: &EvalContext<'_>,
    previous: Option<&Plan>,
) -> Result<ObjectiveVector, EvalError> {
    evaluate_full(plan, workload, ctx, previous).map(|e| e.objectives)
}

/// Containers present in `previous` but gone from `plan` leave their idle
/// base cores on their node for `shutdown_s` seconds. Inert unless
/// `shutdown_s > 0`.
fn shutdown_residuals(
    plan: &Plan,
    previous: Option<&Plan>,
    ctx: &EvalContext<'_>,
) -> Vec<ResidualOccupancy> {
    let Some(previous) = previous else {
        return Vec::new();
    };
    if ctx.cluster.overhead.shutdown_s <= 0.0 {
        return Vec::new();
    }
    let current = plan.pair_counts();
    let mut residuals = Vec::new();
    for ((fn_idx, node_id), prev_count) in previous.pair_counts() {
        let kept = current.get(&(fn_idx, node_id)).copied().unwrap_or(0);
        for _ in kept..prev_count {
            residuals.push(ResidualOccupancy {
                node_id,
                cores: ctx.specs.get(fn_idx).map_or(0.0, |s| s.cpu_base_cores),
            });
        }
    }
    residuals
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{ContainerAlloc, NodeSpec};
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    fn spec(runtime: f64, deadline: f64) -> FunctionSpec {
        FunctionSpec {
            id: "f1".into(),
            runtime_s: runtime,
            deadline_s: deadline,
            mem_mb: 256,
            cpu_base_cores: 0.5,
            cpu_per_request_cores: 1.0,
        }
    }

    fn workload(count: u64) -> EpochWorkload {
        let mut arrivals = BTreeMap::new();
        if count > 0 {
            arrivals.insert(0, count);
        }
        EpochWorkload {
            epoch_index: 0,
            arrivals,
        }
    }

    fn container(cores: u32, requests: u64, is_new: bool) -> ContainerAlloc {
        ContainerAlloc {
            fn_idx: 0,
            node_id: 0,
            cores,
            mem_mb: 256,
            assigned_requests: requests,
            is_new,
        }
    }

    #[test]
    fn slo_cold_two_slot_batches() {
        // k=2 slots needs ceil(0.5 + 2*1.0) = 3 cores
        let plan = Plan::new(vec![container(3, 5, true)]);
        let overhead = OverheadSpec {
            cold_start_s: 2.0,
            ..OverheadSpec::default()
        };
        let out = eval_slo(&plan, &[spec(10.0, 15.0)], &workload(5), &overhead, 900.0);
        assert_eq!(out.completions[0], vec![12.0, 12.0, 22.0, 22.0, 32.0]);
        assert_eq!(out.violations, 3);
        assert_relative_eq!(out.violation_rate, 0.6);
    }

    #[test]
    fn slo_warm_meets_relaxed_deadline() {
        let plan = Plan::new(vec![container(3, 5, false)]);
        let out = eval_slo(
            &plan,
            &[spec(10.0, 30.0)],
            &workload(5),
            &OverheadSpec::default(),
            900.0,
        );
        assert_eq!(out.completions[0], vec![10.0, 10.0, 20.0, 20.0, 30.0]);
        assert_eq!(out.violations, 0);
    }

    #[test]
    fn slo_zero_arrivals_rate_zero() {
        let out = eval_slo(
            &Plan::empty(),
            &[spec(10.0, 30.0)],
            &workload(0),
            &OverheadSpec::default(),
            900.0,
        );
        assert_eq!(out.violation_rate, 0.0);
        assert_eq!(out.total_requests, 0);
    }

    #[test]
    fn slo_epoch_cutoff_counts_as_violation() {
        // runtime 500 s, deadline 2000 s, epoch 900 s: wave 2 ends at 1000 > epoch
        let plan = Plan::new(vec![container(2, 2, false)]);
        let out = eval_slo(
            &plan,
            &[spec(500.0, 2000.0)],
            &workload(2),
            &OverheadSpec::default(),
            900.0,
        );
        assert_eq!(out.violations, 1);
    }

    fn one_node_cluster() -> ClusterSpec {
        ClusterSpec {
            n_nodes: 1,
            node: NodeSpec {
                cores: 128,
                mem_mb: 262_144,
                p_idle_w: 100.0,
                p_max_w: 500.0,
            },
            overhead: OverheadSpec {
                cold_start_s: 2.0,
                shutdown_s: 0.0,
                startup_energy_j: 0.0,
            },
        }
    }

    #[test]
    fn energy_idle_cluster_closed_form() {
        let env = EnvironmentState::default();
        let out = eval_energy(&Plan::empty(), &[], &one_node_cluster(), &env, 900.0, &[]);
        assert_relative_eq!(out.it_kwh, 0.025, max_relative = 1e-12);
        assert_relative_eq!(out.cooling_kwh, 0.00625, max_relative = 1e-12);
        assert_relative_eq!(out.total_kwh, 0.03125, max_relative = 1e-12);
    }

    #[test]
    fn energy_hotspot_doubles_cooling() {
        let specs = vec![FunctionSpec {
            cpu_base_cores: 128.0,
            cpu_per_request_cores: 1.0,
            ..spec(1.0, 3.0)
        }];
        // u = 1.0 via a container whose base occupies the whole node
        let plan = Plan::new(vec![ContainerAlloc {
            fn_idx: 0,
            node_id: 0,
            cores: 128,
            mem_mb: 256,
            assigned_requests: 0,
            is_new: false,
        }]);
        let mut env = EnvironmentState {
            hotspot_util_threshold: 0.9,
            hotspot_cop_penalty: 0.5,
            ..EnvironmentState::default()
        };
        let hot = eval_energy(&plan, &specs, &one_node_cluster(), &env, 900.0, &[]);
        env.hotspot_cop_penalty = 1.0;
        let free = eval_energy(&plan, &specs, &one_node_cluster(), &env, 900.0, &[]);
        assert_relative_eq!(hot.cooling_kwh, 2.0 * free.cooling_kwh, max_relative = 1e-12);
    }

    #[test]
    fn energy_no_new_containers_no_startup_term() {
        let plan = Plan::new(vec![container(3, 2, false)]);
        let out = eval_energy(
            &plan,
            &[spec(10.0, 30.0)],
            &one_node_cluster(),
            &EnvironmentState::default(),
            900.0,
            &[],
        );
        assert_eq!(out.startup_kwh, 0.0);
    }

    #[test]
    fn energy_total_is_sum_of_parts() {
        let mut cluster = one_node_cluster();
        cluster.overhead.startup_energy_j = 500.0;
        let plan = Plan::new(vec![container(3, 5, true)]);
        let out = eval_energy(
            &plan,
            &[spec(10.0, 30.0)],
            &cluster,
            &EnvironmentState::default(),
            900.0,
            &[],
        );
        assert_relative_eq!(
            out.total_kwh,
            out.it_kwh + out.cooling_kwh + out.startup_kwh,
            max_relative = 1e-9
        );
        assert_relative_eq!(out.it_kwh, out.it_kwh_per_node.iter().sum::<f64>(), max_relative = 1e-12);
    }

    fn energy_fixture(it: f64, total: f64) -> EnergyBreakdown {
        EnergyBreakdown {
            it_kwh_per_node: vec![it],
            it_kwh: it,
            cooling_kwh: total - it,
            startup_kwh: 0.0,
            total_kwh: total,
        }
    }

    #[test]
    fn water_formula() {
        let env = EnvironmentState {
            wue_l_per_kwh: 2.0,
            ewif_l_per_kwh: 0.4,
            ..EnvironmentState::default()
        };
        assert_relative_eq!(eval_water(&energy_fixture(1.0, 1.25), &env), 2.5);

        let dry = EnvironmentState {
            wue_l_per_kwh: 0.0,
            ewif_l_per_kwh: 0.0,
            ..EnvironmentState::default()
        };
        assert_eq!(eval_water(&energy_fixture(1.0, 1.25), &dry), 0.0);

        // homogeneity of degree 1 in energy
        let w1 = eval_water(&energy_fixture(1.0, 1.25), &env);
        let w2 = eval_water(&energy_fixture(2.0, 2.5), &env);
        assert_relative_eq!(w2, 2.0 * w1, max_relative = 1e-12);
    }

    #[test]
    fn carbon_formula() {
        let env = EnvironmentState {
            carbon_intensity_g_per_kwh: 400.0,
            carbon_per_liter_water_g: 1.5,
            ..EnvironmentState::default()
        };
        assert_relative_eq!(eval_carbon(&energy_fixture(0.8, 1.0), 0.0, &env), 400.0);

        let ci_free = EnvironmentState {
            carbon_intensity_g_per_kwh: 0.0,
            carbon_per_liter_water_g: 1.5,
            ..EnvironmentState::default()
        };
        assert_relative_eq!(eval_carbon(&energy_fixture(0.8, 1.0), 10.0, &ci_free), 15.0);

        // additivity of the two terms
        assert_relative_eq!(eval_carbon(&energy_fixture(0.8, 1.0), 10.0, &env), 415.0);
    }

    #[test]
    fn evaluate_empty_workload_idle_energy_only() {
        let cluster = one_node_cluster();
        let env = EnvironmentState::default();
        let ctx = EvalContext {
            specs: &[],
            cluster: &cluster,
            env: &env,
            epoch_length_s: 900.0,
        };
        let eval = evaluate_full(&Plan::empty(), &workload(0), &ctx, None).unwrap();
        let energy = energy_fixture(0.025, 0.03125);
        let water = eval_water(&energy, &env);
        let carbon = eval_carbon(&energy, water, &env);
        assert_eq!(eval.objectives.slo_violation_rate, 0.0);
        assert_relative_eq!(eval.objectives.water_l, water, max_relative = 1e-12);
        assert_relative_eq!(eval.objectives.carbon_g, carbon, max_relative = 1e-12);
    }

    #[test]
    fn evaluate_rejects_infeasible_plan() {
        let cluster = one_node_cluster();
        let env = EnvironmentState::default();
        let specs = vec![spec(10.0, 30.0)];
        let ctx = EvalContext {
            specs: &specs,
            cluster: &cluster,
            env: &env,
            epoch_length_s: 900.0,
        };
        // workload has 5 arrivals, plan assigns none
        let err = evaluate(&Plan::empty(), &workload(5), &ctx, None).unwrap_err();
        assert!(matches!(err, EvalError::Infeasible(_)));
    }

    #[test]
    fn evaluate_electricity_term_linear_in_carbon_intensity() {
        let cluster = one_node_cluster();
        let specs = vec![spec(10.0, 30.0)];
        let plan = Plan::new(vec![container(3, 5, false)]);
        let env1 = EnvironmentState::default();
        let env2 = EnvironmentState {
            carbon_intensity_g_per_kwh: 2.0 * env1.carbon_intensity_g_per_kwh,
            ..env1.clone()
        };
        let ctx1 = EvalContext {
            specs: &specs,
            cluster: &cluster,
            env: &env1,
            epoch_length_s: 900.0,
        };
        let ctx2 = EvalContext { env: &env2, ..ctx1 };
        let e1 = evaluate_full(&plan, &workload(5), &ctx1, None).unwrap();
        let e2 = evaluate_full(&plan, &workload(5), &ctx2, None).unwrap();
        let electricity1 = e1.objectives.carbon_g - env1.carbon_per_liter_water_g * e1.objectives.water_l;
        let electricity2 = e2.objectives.carbon_g - env2.carbon_per_liter_water_g * e2.objectives.water_l;
        assert_relative_eq!(electricity2, 2.0 * electricity1, max_relative = 1e-9);
    }

    #[test]
    fn evaluate_is_referentially_transparent() {
        let cluster = one_node_cluster();
        let env = EnvironmentState::default();
        let specs = vec![spec(10.0, 30.0)];
        let plan = Plan::new(vec![container(3, 5, false)]);
        let ctx = EvalContext {
            specs: &specs,
            cluster: &cluster,
            env: &env,
            epoch_length_s: 900.0,
        };
        let a = evaluate(&plan, &workload(5), &ctx, None).unwrap();
        let b = evaluate(&plan, &workload(5), &ctx, None).unwrap();
        assert_eq!(a.as_array(), b.as_array());
    }

    #[test]
    fn shutdown_residual_adds_energy_when_configured() {
        let mut cluster = one_node_cluster();
        cluster.overhead.shutdown_s = 60.0;
        let env = EnvironmentState::default();
        let specs = vec![spec(10.0, 30.0)];
        let ctx = EvalContext {
            specs: &specs,
            cluster: &cluster,
            env: &env,
            epoch_length_s: 900.0,
        };
        let previous = Plan::new(vec![container(3, 5, false)]);
        let with_prev = evaluate_full(&Plan::empty(), &workload(0), &ctx, Some(&previous)).unwrap();
        let without = evaluate_full(&Plan::empty(), &workload(0), &ctx, None).unwrap();
        assert!(with_prev.objectives.carbon_g > without.objectives.carbon_g);
    }
}
