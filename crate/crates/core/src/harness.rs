//! Horizon simulation: run each policy epoch by epoch over a trace, carrying
//! that policy's previous plan, and aggregate the three objectives.
//!
//! Policies never observe each other's state, so distinct policies run in
//! parallel with results identical to sequential execution. A policy epoch
//! that hits a capacity error is recorded as a failed epoch (all arrivals
//! violated, idle-only energy) and the horizon continues.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{hybrid_schedule, score_schedule, BaselineConfig};
use crate::cluster::{ClusterSpec, Plan};
use crate::error::ConfigError;
use crate::exec;
use crate::optimizer::{optimize_epoch, Norms, ParetoArchive, SearchBudget, Weights};
use crate::sustain::{
    eval_carbon, eval_energy, eval_water, evaluate_full, EnvironmentState, EvalContext,
    ObjectiveVector,
};
use crate::workload::Trace;

/// The scheduling policies the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    Score,
    Hybrid,
    SfcmSlo,
    SfcmCarbon,
    SfcmWater,
    SfcmBalance,
}

impl Policy {
    pub const ALL: [Policy; 6] = [
        Policy::Score,
        Policy::Hybrid,
        Policy::SfcmSlo,
        Policy::SfcmCarbon,
        Policy::SfcmWater,
        Policy::SfcmBalance,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Score => "score",
            Policy::Hybrid => "hybrid",
            Policy::SfcmSlo => "sfcm-slo",
            Policy::SfcmCarbon => "sfcm-carbon",
            Policy::SfcmWater => "sfcm-water",
            Policy::SfcmBalance => "sfcm-balance",
        }
    }

    pub fn parse(name: &str) -> Option<Policy> {
        Policy::ALL.iter().copied().find(|p| p.name() == name)
    }

    /// Stable per-policy tag for seed derivation; independent of the order
    /// policies are requested in.
    fn tag(&self) -> u64 {
        match self {
            Policy::Score => 1,
            Policy::Hybrid => 2,
            Policy::SfcmSlo => 3,
            Policy::SfcmCarbon => 4,
            Policy::SfcmWater => 5,
            Policy::SfcmBalance => 6,
        }
    }

    /// Optimizer weights for SFCM variants; `None` for baselines.
    pub fn weights(&self, balance: &Weights) -> Option<Weights> {
        match self {
            Policy::Score | Policy::Hybrid => None,
            Policy::SfcmSlo => Some(Weights::slo_only()),
            Policy::SfcmCarbon => Some(Weights::carbon_only()),
            Policy::SfcmWater => Some(Weights::water_only()),
            Policy::SfcmBalance => Some(*balance),
        }
    }
}

/// Environment factors per epoch; a single state broadcasts to all epochs.
#[derive(Debug, Clone)]
pub enum EnvSchedule {
    Uniform(EnvironmentState),
    PerEpoch(Vec<EnvironmentState>),
}

impl EnvSchedule {
    pub fn validate(&self, epochs: usize) -> Result<(), ConfigError> {
        match self {
            EnvSchedule::Uniform(env) => env.validate(),
            EnvSchedule::PerEpoch(envs) => {
                if envs.len() < epochs {
                    return Err(ConfigError::EnvScheduleTooShort {
                        have: envs.len(),
                        need: epochs,
                    });
                }
                envs.iter().try_for_each(|e| e.validate())
            }
        }
    }

    pub fn get(&self, epoch: usize) -> &EnvironmentState {
        match self {
            EnvSchedule::Uniform(env) => env,
            EnvSchedule::PerEpoch(envs) => &envs[epoch],
        }
    }
}

/// Everything a horizon run needs besides the trace.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub epoch_length_s: f64,
    pub budget: SearchBudget,
    pub balance_weights: Weights,
    pub baseline: BaselineConfig,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            epoch_length_s: 900.0,
            budget: SearchBudget::default(),
            balance_weights: Weights::balanced(),
            baseline: BaselineConfig::default(),
        }
    }
}

/// One policy-epoch outcome.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub objectives: ObjectiveVector,
    pub violations: u64,
    pub total_requests: u64,
    pub failed: bool,
    /// The executed plan with resolved `is_new` flags (empty on failure).
    pub plan: Plan,
}

/// Request-weighted SLO aggregate plus summed carbon and water.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub slo_rate: f64,
    pub carbon_g: f64,
    pub water_l: f64,
    pub violations: u64,
    pub total_requests: u64,
}

/// Full horizon outcome of one policy.
#[derive(Debug, Clone)]
pub struct PolicyResult {
    pub policy: Policy,
    pub per_epoch: Vec<EpochRecord>,
    /// Per-epoch archive and normalization basis; SFCM policies only.
    pub archives: Vec<Option<(ParetoArchive, Norms)>>,
    pub aggregate: Aggregate,
}

/// Results of all requested policies over the horizon.
#[derive(Debug, Clone)]
pub struct HorizonResult {
    pub policies: Vec<PolicyResult>,
}

/// Number of whole epochs in a horizon; any leftover tail is ignored.
pub fn epoch_count(horizon_s: f64, epoch_length_s: f64) -> usize {
    let n = (horizon_s / epoch_length_s).floor() as usize;
    let tail = horizon_s - n as f64 * epoch_length_s;
    if tail > 0.0 {
        log::info!("horizon tail of {tail} s ignored ({n} whole epochs)");
    }
    n
}

/// Objectives of a failed epoch: every arrival violated, idle-only energy.
fn failed_epoch_record(
    workload_requests: u64,
    ctx: &EvalContext<'_>,
) -> EpochRecord {
    let energy = eval_energy(
        &Plan::empty(),
        ctx.specs,
        ctx.cluster,
        ctx.env,
        ctx.epoch_length_s,
        &[],
    );
    let water_l = eval_water(&energy, ctx.env);
    let carbon_g = eval_carbon(&energy, water_l, ctx.env);
    EpochRecord {
        objectives: ObjectiveVector {
            slo_violation_rate: if workload_requests == 0 { 0.0 } else { 1.0 },
            carbon_g,
            water_l,
        },
        violations: workload_requests,
        total_requests: workload_requests,
        failed: true,
        plan: Plan::empty(),
    }
}

fn run_policy(
    policy: Policy,
    trace: &Trace,
    cluster: &ClusterSpec,
    envs: &EnvSchedule,
    settings: &RunSettings,
) -> PolicyResult {
    let mut previous: Option<Plan> = None;
    let mut per_epoch = Vec::with_capacity(trace.epochs.len());
    let mut archives = Vec::with_capacity(trace.epochs.len());
    // per-policy seed stream, keyed by the policy identity
    let mut seeds = ChaCha8Rng::seed_from_u64(settings.budget.seed ^ (policy.tag() << 32));

    for workload in &trace.epochs {
        let ctx = EvalContext {
            specs: &trace.specs,
            cluster,
            env: envs.get(workload.epoch_index),
            epoch_length_s: settings.epoch_length_s,
        };
        let epoch_seed = seeds.next_u64();

        let planned = match policy.weights(&settings.balance_weights) {
            None => {
                let result = match policy {
                    Policy::Score => {
                        score_schedule(workload, &trace.specs, cluster, previous.as_ref(), &settings.baseline)
                    }
                    _ => hybrid_schedule(workload, &trace.specs, cluster, previous.as_ref(), &settings.baseline),
                };
                archives.push(None);
                result
            }
            Some(weights) => {
                let budget = SearchBudget {
                    seed: epoch_seed,
                    ..settings.budget.clone()
                };
                match optimize_epoch(
                    workload,
                    &ctx,
                    &budget,
                    &[weights],
                    &[weights],
                    previous.as_ref(),
                    &settings.baseline,
                ) {
                    Ok(outcome) => {
                        let plan = outcome.picks[0].plan.clone();
                        archives.push(Some((outcome.archive, outcome.norms)));
                        Ok(plan)
                    }
                    Err(e) => {
                        archives.push(None);
                        Err(e)
                    }
                }
            }
        };

        match planned {
            Ok(plan) => {
                let eval = evaluate_full(&plan, workload, &ctx, previous.as_ref())
                    .expect("policies must emit feasible plans");
                per_epoch.push(EpochRecord {
                    objectives: eval.objectives,
                    violations: eval.violations,
                    total_requests: eval.total_requests,
                    failed: false,
                    plan: eval.plan.clone(),
                });
                previous = Some(eval.plan);
            }
            Err(e) => {
                log::warn!(
                    "policy {} epoch {}: capacity error ({e}); recording failed epoch",
                    policy.name(),
                    workload.epoch_index
                );
                per_epoch.push(failed_epoch_record(workload.total_requests(), &ctx));
                previous = Some(Plan::empty());
            }
        }
    }

    let violations: u64 = per_epoch.iter().map(|r| r.violations).sum();
    let total_requests: u64 = per_epoch.iter().map(|r| r.total_requests).sum();
    let aggregate = Aggregate {
        slo_rate: if total_requests == 0 {
            0.0
        } else {
            violations as f64 / total_requests as f64
        },
        carbon_g: per_epoch.iter().map(|r| r.objectives.carbon_g).sum(),
        water_l: per_epoch.iter().map(|r| r.objectives.water_l).sum(),
        violations,
        total_requests,
    };
    PolicyResult {
        policy,
        per_epoch,
        archives,
        aggregate,
    }
}

/// Run every requested policy over the whole trace. Deterministic for a
/// fixed budget seed; each policy's results are independent of which other
/// policies run alongside it.
pub fn run_horizon(
    trace: &Trace,
    policies: &[Policy],
    cluster: &ClusterSpec,
    envs: &EnvSchedule,
    settings: &RunSettings,
) -> Result<HorizonResult, ConfigError> {
    if trace.epochs.is_empty() {
        return Err(ConfigError::EmptyTrace);
    }
    cluster.validate()?;
    envs.validate(trace.epochs.len())?;
    settings.budget.validate()?;
    settings.balance_weights.validate()?;
    for spec in &trace.specs {
        spec.validate()
            .map_err(|e| ConfigError::field("trace", e.to_string()))?;
    }

    let results = exec::map_vec(policies.to_vec(), |policy| {
        run_policy(policy, trace, cluster, envs, settings)
    });
    Ok(HorizonResult { policies: results })
}

/// Exact non-dominated filtering; input order preserved.
pub fn pareto_front(points: &[ObjectiveVector]) -> Vec<ObjectiveVector> {
    use crate::optimizer::dominates;
    points
        .iter()
        .filter(|p| !points.iter().any(|q| dominates(q, p)))
        .copied()
        .collect()
}

/// Objective axis names used for 2-D projections and CSV columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Slo,
    Carbon,
    Water,
}

impl Axis {
    pub fn parse(name: &str) -> Option<Axis> {
        match name {
            "slo" => Some(Axis::Slo),
            "carbon" => Some(Axis::Carbon),
            "water" => Some(Axis::Water),
            _ => None,
        }
    }

    pub fn column(&self) -> &'static str {
        match self {
            Axis::Slo => "slo_rate",
            Axis::Carbon => "carbon_g",
            Axis::Water => "water_l",
        }
    }

    pub fn of(&self, v: &ObjectiveVector) -> f64 {
        match self {
            Axis::Slo => v.slo_violation_rate,
            Axis::Carbon => v.carbon_g,
            Axis::Water => v.water_l,
        }
    }
}

/// Project onto two axes and re-filter dominance in 2-D (projection can
/// create dominance that the 3-D front did not have). Stable order.
pub fn project_front(points: &[ObjectiveVector], axes: (Axis, Axis)) -> Vec<(f64, f64)> {
    let projected: Vec<(f64, f64)> = points.iter().map(|p| (axes.0.of(p), axes.1.of(p))).collect();
    let dominates2 = |a: (f64, f64), b: (f64, f64)| {
        a.0 <= b.0 && a.1 <= b.1 && (a.0 < b.0 || a.1 < b.1)
    };
    projected
        .iter()
        .filter(|&&p| !projected.iter().any(|&q| dominates2(q, p)))
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{generate_trace, EpochWorkload, TraceConfig};
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    fn obj(slo: f64, carbon: f64, water: f64) -> ObjectiveVector {
        ObjectiveVector {
            slo_violation_rate: slo,
            carbon_g: carbon,
            water_l: water,
        }
    }

    fn small_trace(epochs: usize) -> Trace {
        let cfg = TraceConfig {
            n_function_ids: 16,
            epochs,
            ids_per_epoch: (4, 8),
            arrivals_per_function: (1, 10),
            seed: 3,
            ..TraceConfig::default()
        };
        generate_trace(&cfg).unwrap()
    }

    fn small_settings() -> RunSettings {
        RunSettings {
            budget: SearchBudget {
                rounds: 3,
                local_steps_per_round: 5,
                ..SearchBudget::default()
            },
            ..RunSettings::default()
        }
    }

    #[test]
    fn eight_hour_horizon_is_32_epochs() {
        assert_eq!(epoch_count(8.0 * 3600.0, 900.0), 32);
        assert_eq!(epoch_count(8.0 * 3600.0 + 500.0, 900.0), 32);
    }

    #[test]
    fn single_policy_single_epoch_reduces_to_one_evaluate() {
        let trace = small_trace(1);
        let cluster = ClusterSpec {
            n_nodes: 4,
            ..ClusterSpec::default()
        };
        let settings = small_settings();
        let envs = EnvSchedule::Uniform(EnvironmentState::default());
        let result = run_horizon(&trace, &[Policy::Score], &cluster, &envs, &settings).unwrap();

        let plan = score_schedule(&trace.epochs[0], &trace.specs, &cluster, None, &settings.baseline)
            .unwrap();
        let env = EnvironmentState::default();
        let ctx = EvalContext {
            specs: &trace.specs,
            cluster: &cluster,
            env: &env,
            epoch_length_s: 900.0,
        };
        let eval = evaluate_full(&plan, &trace.epochs[0], &ctx, None).unwrap();
        assert_eq!(
            result.policies[0].per_epoch[0].objectives.as_array(),
            eval.objectives.as_array()
        );
    }

    #[test]
    fn policy_order_does_not_change_results() {
        let trace = small_trace(3);
        let cluster = ClusterSpec {
            n_nodes: 4,
            ..ClusterSpec::default()
        };
        let settings = small_settings();
        let envs = EnvSchedule::Uniform(EnvironmentState::default());
        let forward = run_horizon(
            &trace,
            &[Policy::Score, Policy::Hybrid, Policy::SfcmBalance],
            &cluster,
            &envs,
            &settings,
        )
        .unwrap();
        let backward = run_horizon(
            &trace,
            &[Policy::SfcmBalance, Policy::Hybrid, Policy::Score],
            &cluster,
            &envs,
            &settings,
        )
        .unwrap();
        let find = |r: &HorizonResult, p: Policy| -> Vec<[f64; 3]> {
            r.policies
                .iter()
                .find(|x| x.policy == p)
                .unwrap()
                .per_epoch
                .iter()
                .map(|e| e.objectives.as_array())
                .collect()
        };
        for p in [Policy::Score, Policy::Hybrid, Policy::SfcmBalance] {
            assert_eq!(find(&forward, p), find(&backward, p), "{}", p.name());
        }
    }

    #[test]
    fn aggregate_matches_per_epoch_sums() {
        let trace = small_trace(4);
        let cluster = ClusterSpec {
            n_nodes: 4,
            ..ClusterSpec::default()
        };
        let settings = small_settings();
        let envs = EnvSchedule::Uniform(EnvironmentState::default());
        let result = run_horizon(&trace, &[Policy::Hybrid], &cluster, &envs, &settings).unwrap();
        let r = &result.policies[0];
        let carbon: f64 = r.per_epoch.iter().map(|e| e.objectives.carbon_g).sum();
        let water: f64 = r.per_epoch.iter().map(|e| e.objectives.water_l).sum();
        assert_relative_eq!(r.aggregate.carbon_g, carbon, max_relative = 1e-9);
        assert_relative_eq!(r.aggregate.water_l, water, max_relative = 1e-9);
        let violations: u64 = r.per_epoch.iter().map(|e| e.violations).sum();
        let total: u64 = r.per_epoch.iter().map(|e| e.total_requests).sum();
        assert_eq!(r.aggregate.slo_rate, violations as f64 / total as f64);
    }

    #[test]
    fn failed_epochs_keep_the_horizon_running() {
        // one-core nodes cannot host any container
        let cluster = ClusterSpec {
            n_nodes: 1,
            node: crate::cluster::NodeSpec {
                cores: 1,
                ..crate::cluster::NodeSpec::default()
            },
            ..ClusterSpec::default()
        };
        let mut arrivals = BTreeMap::new();
        arrivals.insert(0usize, 5u64);
        let trace = Trace {
            specs: vec![crate::workload::FunctionSpec {
                id: "f1".into(),
                runtime_s: 10.0,
                deadline_s: 30.0,
                mem_mb: 256,
                cpu_base_cores: 0.5,
                cpu_per_request_cores: 1.0,
            }],
            epochs: vec![
                EpochWorkload {
                    epoch_index: 0,
                    arrivals: arrivals.clone(),
                },
                EpochWorkload {
                    epoch_index: 1,
                    arrivals,
                },
            ],
        };
        let settings = small_settings();
        let envs = EnvSchedule::Uniform(EnvironmentState::default());
        let result = run_horizon(&trace, &[Policy::Score], &cluster, &envs, &settings).unwrap();
        let r = &result.policies[0];
        assert_eq!(r.per_epoch.len(), 2);
        assert!(r.per_epoch.iter().all(|e| e.failed));
        assert_eq!(r.aggregate.slo_rate, 1.0);
        assert!(r.aggregate.carbon_g > 0.0, "idle energy still accounted");
    }

    #[test]
    fn env_schedule_must_cover_all_epochs() {
        let trace = small_trace(3);
        let cluster = ClusterSpec::default();
        let envs = EnvSchedule::PerEpoch(vec![EnvironmentState::default(); 2]);
        let err = run_horizon(&trace, &[Policy::Score], &cluster, &envs, &small_settings());
        assert!(matches!(err, Err(ConfigError::EnvScheduleTooShort { have: 2, need: 3 })));
    }

    #[test]
    fn pareto_front_examples() {
        let single = [obj(1.0, 1.0, 1.0)];
        assert_eq!(pareto_front(&single), vec![obj(1.0, 1.0, 1.0)]);

        let pts = [obj(1.0, 2.0, 3.0), obj(2.0, 1.0, 3.0), obj(2.0, 2.0, 4.0)];
        assert_eq!(pareto_front(&pts), vec![obj(1.0, 2.0, 3.0), obj(2.0, 1.0, 3.0)]);
    }

    #[test]
    fn projection_can_shrink_the_front() {
        // mutually non-dominated in 3-D, but b is dominated once water is dropped
        let a = obj(0.1, 10.0, 9.0);
        let b = obj(0.1, 12.0, 1.0);
        let pts = [a, b];
        assert_eq!(pareto_front(&pts).len(), 2);
        let front2 = project_front(&pts, (Axis::Slo, Axis::Carbon));
        assert_eq!(front2, vec![(0.1, 10.0)]);

        // singleton projects to itself
        assert_eq!(
            project_front(&[a], (Axis::Slo, Axis::Carbon)),
            vec![(0.1, 10.0)]
        );
    }

    #[test]
    fn projection_hand_checked_front() {
        let pts = [
            obj(0.1, 10.0, 1.0),
            obj(0.2, 8.0, 2.0),
            obj(0.3, 9.0, 3.0),
            obj(0.05, 12.0, 4.0),
        ];
        let front = project_front(&pts, (Axis::Slo, Axis::Carbon));
        assert_eq!(front, vec![(0.1, 10.0), (0.2, 8.0), (0.05, 12.0)]);
    }
}
