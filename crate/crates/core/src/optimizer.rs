//! Population-based plan search: history-guided local search hybridized with
//! an evolutionary algorithm.
//!
//! Each population member is a feasible plan. Per round, the members with the
//! highest update frequency undergo greedy local search on a weighted-sum
//! scalarization (moves: add / remove / shuffle containers of one function);
//! the searched members are then crossed with unsearched ones and offspring
//! replace dominated members, resetting their search history. A Pareto
//! archive retains every non-dominated point ever evaluated.
//!
//! Reproducibility contract: one master generator seeded from the budget
//! drives all draws in a fixed order (initial plan seeds; then per round:
//! chain seeds, EA partner indices, pair seeds). Chains and offspring are
//! evaluated in parallel from those pre-drawn seeds, so parallel execution
//! is bit-identical to sequential.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{hybrid_schedule, BaselineConfig};
use crate::cluster::{
    check_feasible, cores_for_slots, even_split, random_plan, ContainerAlloc, Plan, UsageTracker,
};
use crate::error::{CapacityError, ConfigError};
use crate::exec;
use crate::sustain::{evaluate, EvalContext, ObjectiveVector};
use crate::workload::{EpochWorkload, FnIdx};

/// Non-negative objective weights; at least one must be positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Weights {
    pub w_slo: f64,
    pub w_carbon: f64,
    pub w_water: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights::balanced()
    }
}

impl Weights {
    pub fn balanced() -> Self {
        Weights {
            w_slo: 1.0,
            w_carbon: 1.0,
            w_water: 1.0,
        }
    }
    pub fn slo_only() -> Self {
        Weights {
            w_slo: 1.0,
            w_carbon: 0.0,
            w_water: 0.0,
        }
    }
    pub fn carbon_only() -> Self {
        Weights {
            w_slo: 0.0,
            w_carbon: 1.0,
            w_water: 0.0,
        }
    }
    pub fn water_only() -> Self {
        Weights {
            w_slo: 0.0,
            w_carbon: 0.0,
            w_water: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let ws = [self.w_slo, self.w_carbon, self.w_water];
        if ws.iter().any(|w| !(*w >= 0.0)) {
            return Err(ConfigError::field("weights", "must be >= 0"));
        }
        if !ws.iter().any(|w| *w > 0.0) {
            return Err(ConfigError::field("weights", "at least one must be > 0"));
        }
        Ok(())
    }
}

/// Strictly positive normalization divisors for weighted sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    basis: ObjectiveVector,
}

const NORM_EPSILON: f64 = 1e-9;

impl Norms {
    pub fn new(basis: ObjectiveVector) -> Result<Self, ConfigError> {
        for (axis, v) in [
            ("slo", basis.slo_violation_rate),
            ("carbon", basis.carbon_g),
            ("water", basis.water_l),
        ] {
            if !(v > 0.0) {
                return Err(ConfigError::NonPositiveNorm { axis, value: v });
            }
        }
        Ok(Norms { basis })
    }

    /// Build norms from a baseline's objectives, substituting a small epsilon
    /// for any zero axis.
    pub fn from_baseline(basis: ObjectiveVector) -> Self {
        Norms {
            basis: ObjectiveVector {
                slo_violation_rate: basis.slo_violation_rate.max(NORM_EPSILON),
                carbon_g: basis.carbon_g.max(NORM_EPSILON),
                water_l: basis.water_l.max(NORM_EPSILON),
            },
        }
    }

    pub fn basis(&self) -> ObjectiveVector {
        self.basis
    }
}

/// Normalized weighted sum; lower is better.
pub fn weighted_sum(obj: &ObjectiveVector, weights: &Weights, norms: &Norms) -> f64 {
    weights.w_slo * (obj.slo_violation_rate / norms.basis.slo_violation_rate)
        + weights.w_carbon * (obj.carbon_g / norms.basis.carbon_g)
        + weights.w_water * (obj.water_l / norms.basis.water_l)
}

/// Pareto dominance under minimization: `a` no worse everywhere and strictly
/// better somewhere.
pub fn dominates(a: &ObjectiveVector, b: &ObjectiveVector) -> bool {
    let a = a.as_array();
    let b = b.as_array();
    let mut strict = false;
    for i in 0..3 {
        if a[i] > b[i] {
            return false;
        }
        if a[i] < b[i] {
            strict = true;
        }
    }
    strict
}

/// One population slot: a plan, its objectives, and its update frequency.
#[derive(Debug, Clone)]
pub struct PopulationMember {
    pub plan: Plan,
    pub objectives: ObjectiveVector,
    /// Accepted local-search moves since this slot was last replaced.
    pub history_count: u64,
}

/// Search effort knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchBudget {
    pub population_size: usize,
    pub local_steps_per_round: usize,
    pub rounds: usize,
    /// Fraction of the population locally searched per round.
    pub ls_fraction: f64,
    pub seed: u64,
    /// Seed population slot 0 from the previous epoch's plan.
    pub warm_start: bool,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            population_size: 5,
            local_steps_per_round: 50,
            rounds: 40,
            ls_fraction: 0.4,
            seed: 7,
            warm_start: false,
        }
    }
}

impl SearchBudget {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.population_size == 0 {
            return Err(ConfigError::field("budget.population_size", "must be >= 1"));
        }
        if !(self.ls_fraction > 0.0 && self.ls_fraction <= 1.0) {
            return Err(ConfigError::field("budget.ls_fraction", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn start_points(&self) -> usize {
        ((self.ls_fraction * self.population_size as f64).round() as usize)
            .max(1)
            .min(self.population_size)
    }
}

// ---------------------------------------------------------------------------
// local moves

fn rebalance_even(plan: &mut Plan, fn_idx: FnIdx, total: u64) {
    let group: Vec<usize> = plan
        .allocations
        .iter()
        .enumerate()
        .filter(|(_, c)| c.fn_idx == fn_idx)
        .map(|(i, _)| i)
        .collect();
    if group.is_empty() {
        return;
    }
    let splits = even_split(total, group.len());
    for (slot, idx) in group.into_iter().enumerate() {
        plan.allocations[idx].assigned_requests = splits[slot];
    }
}

fn group_indices(plan: &Plan, fn_idx: FnIdx) -> Vec<usize> {
    plan.allocations
        .iter()
        .enumerate()
        .filter(|(_, c)| c.fn_idx == fn_idx)
        .map(|(i, _)| i)
        .collect()
}

/// ADD: insert one container on a random node with spare capacity and
/// rebalance the function's requests evenly. The new container is sized for
/// its post-rebalance share at a uniform wave count in [1, 4], the same
/// sizing rule random plans use, so sizes keep moving during search.
pub(crate) fn try_add(
    plan: &Plan,
    fn_idx: FnIdx,
    ctx: &EvalContext<'_>,
    workload: &EpochWorkload,
    rng: &mut ChaCha8Rng,
) -> Option<Plan> {
    let group = group_indices(plan, fn_idx);
    if group.is_empty() {
        return None;
    }
    let spec = &ctx.specs[fn_idx];
    let total = workload.arrivals[&fn_idx];
    let share = total.div_ceil(group.len() as u64 + 1).max(1);
    let waves = rng.gen_range(1u64..=4);
    let slots = share.div_ceil(waves).max(1);
    let cores = cores_for_slots(spec, slots);
    let usage = UsageTracker::new(ctx.cluster, plan);
    let candidates: Vec<usize> = (0..ctx.cluster.n_nodes)
        .filter(|&n| usage.fits(n, cores, spec.mem_mb))
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let node_id = candidates[rng.gen_range(0..candidates.len())];
    let mut next = plan.clone();
    next.allocations.push(ContainerAlloc {
        fn_idx,
        node_id,
        cores,
        mem_mb: spec.mem_mb,
        assigned_requests: 0,
        is_new: false,
    });
    next.normalize();
    rebalance_even(&mut next, fn_idx, total);
    Some(next)
}

/// REMOVE: drop a random container (if the function has at least two) and
/// hand its requests to the least-loaded siblings one by one. Siblings whose
/// wave count grew are given more cores when their node has room.
pub(crate) fn try_remove(
    plan: &Plan,
    fn_idx: FnIdx,
    ctx: &EvalContext<'_>,
    rng: &mut ChaCha8Rng,
) -> Option<Plan> {
    let group = group_indices(plan, fn_idx);
    if group.len() < 2 {
        return None;
    }
    let victim_pos = group[rng.gen_range(0..group.len())];
    let victim = plan.allocations[victim_pos];
    let spec = &ctx.specs[fn_idx];

    let mut next = plan.clone();
    next.allocations.remove(victim_pos);
    let siblings = group_indices(&next, fn_idx);
    let waves_before: Vec<u64> = siblings
        .iter()
        .map(|&i| {
            let c = &next.allocations[i];
            c.assigned_requests.div_ceil(c.slots(spec).max(1))
        })
        .collect();

    for _ in 0..victim.assigned_requests {
        let &target = siblings
            .iter()
            .min_by_key(|&&i| next.allocations[i].assigned_requests)
            .expect("group has >= 1 sibling");
        next.allocations[target].assigned_requests += 1;
    }

    let mut usage = UsageTracker::new(ctx.cluster, &next);
    for (slot, &i) in siblings.iter().enumerate() {
        let c = next.allocations[i];
        let waves_after = c.assigned_requests.div_ceil(c.slots(spec).max(1));
        if waves_after > waves_before[slot] && waves_before[slot] > 0 {
            let needed = cores_for_slots(spec, c.assigned_requests.div_ceil(waves_before[slot]));
            if needed > c.cores {
                let growth = needed - c.cores;
                if usage.spare_cores(c.node_id) >= growth as u64 {
                    usage.add(c.node_id, growth, 0);
                    next.allocations[i].cores = needed;
                }
            }
        }
    }
    Some(next)
}

/// SHUFFLE: move a random container of the function to a different node with
/// spare capacity.
pub(crate) fn try_shuffle(
    plan: &Plan,
    fn_idx: FnIdx,
    ctx: &EvalContext<'_>,
    rng: &mut ChaCha8Rng,
) -> Option<Plan> {
    let group = group_indices(plan, fn_idx);
    if group.is_empty() {
        return None;
    }
    let pos = group[rng.gen_range(0..group.len())];
    let c = plan.allocations[pos];
    let usage = UsageTracker::new(ctx.cluster, plan);
    let candidates: Vec<usize> = (0..ctx.cluster.n_nodes)
        .filter(|&n| n != c.node_id && usage.fits(n, c.cores, c.mem_mb))
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let node_id = candidates[rng.gen_range(0..candidates.len())];
    let mut next = plan.clone();
    next.allocations[pos].node_id = node_id;
    next.normalize();
    Some(next)
}

/// Produce a feasible neighbor of `plan`: pick a random function present in
/// the workload and a random move among add/remove/shuffle. A move that
/// cannot yield a feasible neighbor falls through to the next move type; if
/// none applies the input plan is returned unchanged.
pub fn local_move(
    plan: &Plan,
    workload: &EpochWorkload,
    ctx: &EvalContext<'_>,
    rng: &mut ChaCha8Rng,
) -> Plan {
    let fns = workload.function_ids();
    if fns.is_empty() {
        return plan.clone();
    }
    let fn_idx = fns[rng.gen_range(0..fns.len())];
    let first = rng.gen_range(0..3u32);
    for step in 0..3 {
        let neighbor = match (first + step) % 3 {
            0 => try_add(plan, fn_idx, ctx, workload, rng),
            1 => try_remove(plan, fn_idx, ctx, rng),
            _ => try_shuffle(plan, fn_idx, ctx, rng),
        };
        if let Some(next) = neighbor {
            debug_assert!(
                check_feasible(&next, ctx.cluster, ctx.specs, workload).is_feasible(),
                "local move produced an infeasible neighbor"
            );
            return next;
        }
    }
    plan.clone()
}

/// Result of one local-search chain.
#[derive(Debug, Clone)]
pub struct LocalSearchOutcome {
    pub member: PopulationMember,
    /// Every neighbor evaluated, in step order (accepted or not).
    pub evaluated: Vec<(Plan, ObjectiveVector)>,
    /// Weighted sums of the accepted sequence; strictly decreasing.
    pub accepted_scores: Vec<f64>,
}

/// Greedy hill descent: up to `steps` neighbors, accepting strict
/// weighted-sum improvements only. Each acceptance bumps the member's
/// history count.
#[allow(clippy::too_many_arguments)]
pub fn local_search(
    member: PopulationMember,
    steps: usize,
    weights: &Weights,
    norms: &Norms,
    workload: &EpochWorkload,
    ctx: &EvalContext<'_>,
    previous: Option<&Plan>,
    rng: &mut ChaCha8Rng,
) -> LocalSearchOutcome {
    let mut member = member;
    let mut evaluated = Vec::new();
    let mut accepted_scores = Vec::new();
    let mut current = weighted_sum(&member.objectives, weights, norms);
    for _ in 0..steps {
        let neighbor = local_move(&member.plan, workload, ctx, rng);
        if neighbor == member.plan {
            continue;
        }
        let objectives = evaluate(&neighbor, workload, ctx, previous)
            .expect("local_move must keep plans feasible");
        evaluated.push((neighbor.clone(), objectives));
        let score = weighted_sum(&objectives, weights, norms);
        if score < current {
            member.plan = neighbor;
            member.objectives = objectives;
            member.history_count += 1;
            current = score;
            accepted_scores.push(score);
        }
    }
    LocalSearchOutcome {
        member,
        evaluated,
        accepted_scores,
    }
}

/// The `k` members with the highest update frequency, ties broken by lower
/// population index.
pub fn select_start_points(population: &[PopulationMember], k: usize) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..population.len()).collect();
    indices.sort_by_key(|&i| std::cmp::Reverse(population[i].history_count));
    indices.truncate(k.min(population.len()));
    indices
}

/// Uniform per-function group inheritance: each function's complete container
/// group (count, sizes, split, placement) comes from one parent. Inherited
/// placements that would overflow a node are repaired by first-fit; an
/// unrepairable offspring is reported as `None`.
pub fn crossover(
    parent_a: &Plan,
    parent_b: &Plan,
    workload: &EpochWorkload,
    ctx: &EvalContext<'_>,
    rng: &mut ChaCha8Rng,
) -> Option<Plan> {
    let groups_a = parent_a.groups();
    let groups_b = parent_b.groups();
    let mut out = Plan::empty();
    let mut usage = UsageTracker::new(ctx.cluster, &out);
    for &fn_idx in workload.arrivals.keys() {
        let (src, groups) = if rng.gen_bool(0.5) {
            (parent_a, &groups_a)
        } else {
            (parent_b, &groups_b)
        };
        let group = groups.get(&fn_idx)?;
        for &i in group {
            let mut c = src.allocations[i];
            if !usage.fits(c.node_id, c.cores, c.mem_mb) {
                c.node_id = (0..ctx.cluster.n_nodes).find(|&n| usage.fits(n, c.cores, c.mem_mb))?;
            }
            usage.add(c.node_id, c.cores, c.mem_mb);
            out.allocations.push(c);
        }
    }
    out.normalize();
    debug_assert!(
        check_feasible(&out, ctx.cluster, ctx.specs, workload).is_feasible(),
        "crossover produced an infeasible offspring"
    );
    Some(out)
}

/// Replace the first population member (index order) dominated by the
/// offspring, resetting that slot's history. Returns the replaced index.
pub(crate) fn place_offspring(
    population: &mut [PopulationMember],
    plan: &Plan,
    objectives: ObjectiveVector,
) -> Option<usize> {
    let slot = (0..population.len()).find(|&i| dominates(&objectives, &population[i].objectives))?;
    population[slot] = PopulationMember {
        plan: plan.clone(),
        objectives,
        history_count: 0,
    };
    Some(slot)
}

/// One EA phase: pair each searched member with a uniformly drawn unsearched
/// member, build and evaluate offspring (in parallel, from pre-drawn seeds),
/// then let each offspring replace the first member it dominates. Returns
/// every evaluated offspring with the slot it replaced, in pairing order.
pub fn ea_round(
    population: &mut [PopulationMember],
    searched: &[usize],
    workload: &EpochWorkload,
    ctx: &EvalContext<'_>,
    previous: Option<&Plan>,
    rng: &mut ChaCha8Rng,
) -> Vec<(Plan, ObjectiveVector, Option<usize>)> {
    let unsearched: Vec<usize> = (0..population.len())
        .filter(|i| !searched.contains(i))
        .collect();

    // pre-draw all randomness so offspring can be evaluated in parallel
    let mut pairs: Vec<(usize, usize, u64)> = Vec::new();
    for &s in searched {
        let partner = if !unsearched.is_empty() {
            Some(unsearched[rng.gen_range(0..unsearched.len())])
        } else {
            let others: Vec<usize> = (0..population.len()).filter(|&i| i != s).collect();
            if others.is_empty() {
                None
            } else {
                Some(others[rng.gen_range(0..others.len())])
            }
        };
        if let Some(p) = partner {
            pairs.push((s, p, rng.next_u64()));
        }
    }

    let snapshot: &[PopulationMember] = population;
    let offspring: Vec<Option<(Plan, ObjectiveVector)>> = exec::map_vec(pairs, |(s, p, seed)| {
        let mut pair_rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = crossover(
            &snapshot[s].plan,
            &snapshot[p].plan,
            workload,
            ctx,
            &mut pair_rng,
        )?;
        let objectives =
            evaluate(&plan, workload, ctx, previous).expect("crossover must keep plans feasible");
        Some((plan, objectives))
    });

    let mut results = Vec::new();
    for entry in offspring.into_iter().flatten() {
        let (plan, objectives) = entry;
        let slot = place_offspring(population, &plan, objectives);
        results.push((plan, objectives, slot));
    }
    results
}

/// Insertion-ordered archive of mutually non-dominated points.
#[derive(Debug, Clone, Default)]
pub struct ParetoArchive {
    entries: Vec<ArchiveEntry>,
}

#[derive(Debug, Clone)]
pub struct ArchiveEntry {
    pub plan: Plan,
    pub objectives: ObjectiveVector,
}

impl ParetoArchive {
    pub fn new() -> Self {
        ParetoArchive::default()
    }

    /// Insert unless dominated by (or equal to) an existing entry; prunes
    /// entries the new point dominates. Returns whether the point was kept.
    pub fn insert(&mut self, plan: Plan, objectives: ObjectiveVector) -> bool {
        if self
            .entries
            .iter()
            .any(|e| e.objectives == objectives || dominates(&e.objectives, &objectives))
        {
            return false;
        }
        self.entries.retain(|e| !dominates(&objectives, &e.objectives));
        self.entries.push(ArchiveEntry { plan, objectives });
        true
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry minimizing the weighted sum; first by insertion order on ties.
    pub fn min_by_weighted_sum(&self, weights: &Weights, norms: &Norms) -> Option<&ArchiveEntry> {
        let mut best: Option<(&ArchiveEntry, f64)> = None;
        for e in &self.entries {
            let score = weighted_sum(&e.objectives, weights, norms);
            match best {
                Some((_, s)) if score >= s => {}
                _ => best = Some((e, score)),
            }
        }
        best.map(|(e, _)| e)
    }
}

/// The plan chosen for one weight variant.
#[derive(Debug, Clone)]
pub struct VariantPick {
    pub weights: Weights,
    pub plan: Plan,
    pub objectives: ObjectiveVector,
}

/// Result of one epoch's optimization.
#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub archive: ParetoArchive,
    pub picks: Vec<VariantPick>,
    pub norms: Norms,
    /// Best archived weighted sum (search weights) after each round.
    pub round_best: Vec<f64>,
}

/// Seed population slot 0 from the previous plan: keep container groups of
/// functions still in the workload, rebalance their requests, and place one
/// minimal container for each new function.
fn warm_plan(
    previous: &Plan,
    workload: &EpochWorkload,
    ctx: &EvalContext<'_>,
) -> Option<Plan> {
    let groups = previous.groups();
    let mut out = Plan::empty();
    for (&fn_idx, &arrivals) in &workload.arrivals {
        match groups.get(&fn_idx) {
            Some(group) => {
                let splits = even_split(arrivals, group.len());
                for (slot, &i) in group.iter().enumerate() {
                    let mut c = previous.allocations[i];
                    c.assigned_requests = splits[slot];
                    out.allocations.push(c);
                }
            }
            None => {
                let spec = &ctx.specs[fn_idx];
                let cores = cores_for_slots(spec, 1);
                let usage = UsageTracker::new(ctx.cluster, &out);
                let node_id =
                    (0..ctx.cluster.n_nodes).find(|&n| usage.fits(n, cores, spec.mem_mb))?;
                out.allocations.push(ContainerAlloc {
                    fn_idx,
                    node_id,
                    cores,
                    mem_mb: spec.mem_mb,
                    assigned_requests: arrivals,
                    is_new: false,
                });
            }
        }
    }
    out.normalize();
    check_feasible(&out, ctx.cluster, ctx.specs, workload)
        .is_feasible()
        .then_some(out)
}

/// Run the full per-epoch search and return the Pareto archive plus, for each
/// requested weight vector, the archived plan minimizing that weighted sum.
/// Deterministic for a fixed budget seed.
///
/// Local-search chains cycle through `search_weights`: a single-objective
/// variant run passes its one weight vector, while a multi-variant run
/// spreads its chains across the requested scalarizations so the archive
/// explores every objective extreme.
pub fn optimize_epoch(
    workload: &EpochWorkload,
    ctx: &EvalContext<'_>,
    budget: &SearchBudget,
    search_weights: &[Weights],
    variants: &[Weights],
    previous: Option<&Plan>,
    baseline_cfg: &BaselineConfig,
) -> Result<OptimizeOutcome, CapacityError> {
    budget
        .validate()
        .unwrap_or_else(|e| panic!("invalid search budget: {e}"));
    let fallback = [Weights::balanced()];
    let search_weights: &[Weights] = if search_weights.is_empty() {
        &fallback
    } else {
        search_weights
    };
    let mut master = ChaCha8Rng::seed_from_u64(budget.seed);

    // normalization basis: the HYBRID baseline on this same epoch
    let norm_basis = hybrid_schedule(workload, ctx.specs, ctx.cluster, previous, baseline_cfg)
        .ok()
        .and_then(|plan| evaluate(&plan, workload, ctx, previous).ok());

    let mut plans: Vec<Plan> = Vec::with_capacity(budget.population_size);
    if budget.warm_start {
        if let Some(prev) = previous {
            if let Some(plan) = warm_plan(prev, workload, ctx) {
                plans.push(plan);
            }
        }
    }
    while plans.len() < budget.population_size {
        let seed = master.next_u64();
        plans.push(random_plan(ctx.cluster, ctx.specs, workload, seed)?);
    }

    let objectives: Vec<ObjectiveVector> = exec::map_vec(plans.clone(), |plan| {
        evaluate(&plan, workload, ctx, previous).expect("random_plan must be feasible")
    });
    let mut population: Vec<PopulationMember> = plans
        .into_iter()
        .zip(objectives)
        .map(|(plan, objectives)| PopulationMember {
            plan,
            objectives,
            history_count: 0,
        })
        .collect();

    let norms = Norms::from_baseline(norm_basis.unwrap_or(population[0].objectives));

    let mut archive = ParetoArchive::new();
    for m in &population {
        archive.insert(m.plan.clone(), m.objectives);
    }

    let k = budget.start_points();
    let mut round_best = Vec::with_capacity(budget.rounds);
    for round in 0..budget.rounds {
        let searched = select_start_points(&population, k);
        let chain_inputs: Vec<(PopulationMember, u64, Weights)> = searched
            .iter()
            .enumerate()
            .map(|(pos, &i)| {
                let weights = search_weights[(round * k + pos) % search_weights.len()];
                (population[i].clone(), master.next_u64(), weights)
            })
            .collect();
        let outcomes: Vec<LocalSearchOutcome> =
            exec::map_vec(chain_inputs, |(member, seed, weights)| {
                let mut chain_rng = ChaCha8Rng::seed_from_u64(seed);
                local_search(
                    member,
                    budget.local_steps_per_round,
                    &weights,
                    &norms,
                    workload,
                    ctx,
                    previous,
                    &mut chain_rng,
                )
            });
        for (pos, outcome) in outcomes.into_iter().enumerate() {
            population[searched[pos]] = outcome.member;
            for (plan, obj) in outcome.evaluated {
                archive.insert(plan, obj);
            }
        }

        let offspring = ea_round(&mut population, &searched, workload, ctx, previous, &mut master);
        for (plan, obj, _) in offspring {
            archive.insert(plan, obj);
        }

        let best = archive
            .min_by_weighted_sum(&search_weights[0], &norms)
            .map(|e| weighted_sum(&e.objectives, &search_weights[0], &norms))
            .unwrap_or(f64::INFINITY);
        round_best.push(best);
    }

    let picks = variants
        .iter()
        .map(|w| {
            let entry = archive
                .min_by_weighted_sum(w, &norms)
                .expect("archive holds at least the initial population");
            VariantPick {
                weights: *w,
                plan: entry.plan.clone(),
                objectives: entry.objectives,
            }
        })
        .collect();

    Ok(OptimizeOutcome {
        archive,
        picks,
        norms,
        round_best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{ClusterSpec, NodeSpec};
    use crate::sustain::EnvironmentState;
    use crate::workload::FunctionSpec;
    use std::collections::BTreeMap;

    fn obj(slo: f64, carbon: f64, water: f64) -> ObjectiveVector {
        ObjectiveVector {
            slo_violation_rate: slo,
            carbon_g: carbon,
            water_l: water,
        }
    }

    #[test]
    fn weighted_sum_single_axis_projection() {
        let norms = Norms::new(obj(0.5, 100.0, 10.0)).unwrap();
        let v = obj(0.25, 77.0, 3.0);
        let s = weighted_sum(&v, &Weights::slo_only(), &norms);
        assert_eq!(s, 0.25 / 0.5);
    }

    #[test]
    fn weighted_sum_normalization_fixed_point() {
        let basis = obj(0.5, 100.0, 10.0);
        let norms = Norms::new(basis).unwrap();
        assert_eq!(weighted_sum(&basis, &Weights::balanced(), &norms), 3.0);
    }

    #[test]
    fn weighted_sum_scaling_preserves_argmin() {
        let norms = Norms::new(obj(1.0, 1.0, 1.0)).unwrap();
        let points = [obj(0.9, 0.2, 0.3), obj(0.1, 0.8, 0.2), obj(0.5, 0.5, 0.5)];
        let w1 = Weights {
            w_slo: 1.0,
            w_carbon: 2.0,
            w_water: 0.5,
        };
        let w2 = Weights {
            w_slo: 2.0,
            w_carbon: 4.0,
            w_water: 1.0,
        };
        let argmin = |w: &Weights| {
            (0..points.len())
                .min_by(|&a, &b| {
                    weighted_sum(&points[a], w, &norms)
                        .total_cmp(&weighted_sum(&points[b], w, &norms))
                })
                .unwrap()
        };
        assert_eq!(argmin(&w1), argmin(&w2));
    }

    #[test]
    fn norms_reject_nonpositive_components() {
        assert!(Norms::new(obj(0.0, 1.0, 1.0)).is_err());
        let norms = Norms::from_baseline(obj(0.0, 1.0, 1.0));
        assert!(norms.basis().slo_violation_rate > 0.0);
    }

    #[test]
    fn dominance_cases() {
        assert!(dominates(&obj(0.1, 5.0, 10.0), &obj(0.2, 6.0, 12.0)));
        assert!(!dominates(&obj(0.1, 7.0, 10.0), &obj(0.2, 6.0, 12.0)));
        let a = obj(0.1, 5.0, 10.0);
        assert!(!dominates(&a, &a));
    }

    #[test]
    fn select_start_points_tie_breaks_by_index() {
        let member = |count: u64| PopulationMember {
            plan: Plan::empty(),
            objectives: obj(0.0, 0.0, 0.0),
            history_count: count,
        };
        let pop = vec![member(2), member(2), member(2)];
        assert_eq!(select_start_points(&pop, 2), vec![0, 1]);

        let pop = vec![member(0), member(5), member(2)];
        assert_eq!(select_start_points(&pop, 1), vec![1]);

        let pop = vec![member(3), member(3), member(1)];
        assert_eq!(select_start_points(&pop, 2), vec![0, 1]);
    }

    // --- instance helpers -------------------------------------------------

    fn small_specs() -> Vec<FunctionSpec> {
        vec![
            FunctionSpec {
                id: "f1".into(),
                runtime_s: 10.0,
                deadline_s: 30.0,
                mem_mb: 256,
                cpu_base_cores: 0.5,
                cpu_per_request_cores: 1.0,
            },
            FunctionSpec {
                id: "f2".into(),
                runtime_s: 5.0,
                deadline_s: 12.0,
                mem_mb: 512,
                cpu_base_cores: 0.25,
                cpu_per_request_cores: 0.5,
            },
        ]
    }

    fn workload_of(pairs: &[(usize, u64)]) -> EpochWorkload {
        let mut arrivals = BTreeMap::new();
        for &(f, n) in pairs {
            arrivals.insert(f, n);
        }
        EpochWorkload {
            epoch_index: 0,
            arrivals,
        }
    }

    fn cluster_of(n_nodes: usize, cores: u32) -> ClusterSpec {
        ClusterSpec {
            n_nodes,
            node: NodeSpec {
                cores,
                ..NodeSpec::default()
            },
            ..ClusterSpec::default()
        }
    }

    #[test]
    fn add_move_splits_requests_evenly() {
        let specs = small_specs();
        let cluster = cluster_of(4, 128);
        let env = EnvironmentState::default();
        let ctx = EvalContext {
            specs: &specs,
            cluster: &cluster,
            env: &env,
            epoch_length_s: 900.0,
        };
        let workload = workload_of(&[(0, 6)]);
        let plan = random_plan(&cluster, &specs, &workload, 1).unwrap();
        // force a two-container start
        let two = {
            let mut p = Plan::new(vec![
                ContainerAlloc {
                    fn_idx: 0,
                    node_id: 0,
                    cores: 4,
                    mem_mb: 256,
                    assigned_requests: 3,
                    is_new: false,
                },
                ContainerAlloc {
                    fn_idx: 0,
                    node_id: 1,
                    cores: 4,
                    mem_mb: 256,
                    assigned_requests: 3,
                    is_new: false,
                },
            ]);
            p.normalize();
            p
        };
        let _ = plan;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let next = try_add(&two, 0, &ctx, &workload, &mut rng).unwrap();
        let split: Vec<u64> = next
            .allocations
            .iter()
            .map(|c| c.assigned_requests)
            .collect();
        assert_eq!(next.allocations.len(), 3);
        assert_eq!(split, vec![2, 2, 2]);
    }

    #[test]
    fn remove_needs_two_containers() {
        let specs = small_specs();
        let cluster = cluster_of(2, 128);
        let env = EnvironmentState::default();
        let ctx = EvalContext {
            specs: &specs,
            cluster: &cluster,
            env: &env,
            epoch_length_s: 900.0,
        };
        let one = Plan::new(vec![ContainerAlloc {
            fn_idx: 0,
            node_id: 0,
            cores: 4,
            mem_mb: 256,
            assigned_requests: 5,
            is_new: false,
        }]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(try_remove(&one, 0, &ctx, &mut rng).is_none());
    }

    #[test]
    fn local_move_returns_input_when_no_move_applies() {
        // one full node, one container: add cannot fit, remove needs two,
        // shuffle has no other node
        let specs = small_specs();
        let cluster = cluster_of(1, 2);
        let env = EnvironmentState::default();
        let ctx = EvalContext {
            specs: &specs,
            cluster: &cluster,
            env: &env,
            epoch_length_s: 900.0,
        };
        let workload = workload_of(&[(0, 4)]);
        let plan = Plan::new(vec![ContainerAlloc {
            fn_idx: 0,
            node_id: 0,
            cores: 2,
            mem_mb: 256,
            assigned_requests: 4,
            is_new: false,
        }]);
        for seed in 0..12 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(local_move(&plan, &workload, &ctx, &mut rng), plan);
        }
    }

    #[test]
    fn local_move_neighbors_stay_feasible() {
        let specs = small_specs();
        let cluster = cluster_of(3, 16);
        let env = EnvironmentState::default();
        let ctx = EvalContext {
            specs: &specs,
            cluster: &cluster,
            env: &env,
            epoch_length_s: 900.0,
        };
        let workload = workload_of(&[(0, 7), (1, 4)]);
        for seed in 0..40u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut plan = random_plan(&cluster, &specs, &workload, seed).unwrap();
            for _ in 0..25 {
                plan = local_move(&plan, &workload, &ctx, &mut rng);
                let report = check_feasible(&plan, &cluster, &specs, &workload);
                assert!(report.is_feasible(), "seed {seed}: {report}");
            }
        }
    }

    #[test]
    fn local_search_zero_steps_is_identity() {
        let specs = small_specs();
        let cluster = cluster_of(2, 32);
        let env = EnvironmentState::default();
        let ctx = EvalContext {
            specs: &specs,
            cluster: &cluster,
            env: &env,
            epoch_length_s: 900.0,
        };
        let workload = workload_of(&[(0, 5)]);
        let plan = random_plan(&cluster, &specs, &workload, 5).unwrap();
        let objectives = evaluate(&plan, &workload, &ctx, None).unwrap();
        let member = PopulationMember {
            plan: plan.clone(),
            objectives,
            history_count: 3,
        };
        let norms = Norms::from_baseline(objectives);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = local_search(
            member,
            0,
            &Weights::balanced(),
            &norms,
            &workload,
            &ctx,
            None,
            &mut rng,
        );
        assert_eq!(out.member.plan, plan);
        assert_eq!(out.member.history_count, 3);
        assert!(out.evaluated.is_empty());
    }

    #[test]
    fn local_search_accepted_scores_strictly_decrease() {
        let specs = small_specs();
        let cluster = cluster_of(3, 16);
        let env = EnvironmentState::default();
        let ctx = EvalContext {
            specs: &specs,
            cluster: &cluster,
            env: &env,
            epoch_length_s: 900.0,
        };
        let workload = workload_of(&[(0, 7), (1, 6)]);
        for seed in 0..10u64 {
            let plan = random_plan(&cluster, &specs, &workload, seed).unwrap();
            let objectives = evaluate(&plan, &workload, &ctx, None).unwrap();
            let norms = Norms::from_baseline(objectives);
            let member = PopulationMember {
                plan,
                objectives,
                history_count: 0,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(100));
            let out = local_search(
                member,
                60,
                &Weights::balanced(),
                &norms,
                &workload,
                &ctx,
                None,
                &mut rng,
            );
            for pair in out.accepted_scores.windows(2) {
                assert!(pair[1] < pair[0], "seed {seed}: {:?}", out.accepted_scores);
            }
            assert_eq!(out.member.history_count, out.accepted_scores.len() as u64);
        }
    }

    #[test]
    fn crossover_identical_parents_is_identity() {
        let specs = small_specs();
        let cluster = cluster_of(3, 32);
        let env = EnvironmentState::default();
        let ctx = EvalContext {
            specs: &specs,
            cluster: &cluster,
            env: &env,
            epoch_length_s: 900.0,
        };
        let workload = workload_of(&[(0, 6), (1, 3)]);
        let parent = random_plan(&cluster, &specs, &workload, 17).unwrap();
        for seed in 0..8 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let child = crossover(&parent, &parent, &workload, &ctx, &mut rng).unwrap();
            assert_eq!(child, parent);
        }
    }

    #[test]
    fn crossover_single_function_yields_one_parent() {
        let specs = small_specs();
        let cluster = cluster_of(3, 32);
        let env = EnvironmentState::default();
        let ctx = EvalContext {
            specs: &specs,
            cluster: &cluster,
            env: &env,
            epoch_length_s: 900.0,
        };
        let workload = workload_of(&[(0, 6)]);
        let a = random_plan(&cluster, &specs, &workload, 1).unwrap();
        let b = random_plan(&cluster, &specs, &workload, 2).unwrap();
        for seed in 0..8 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let child = crossover(&a, &b, &workload, &ctx, &mut rng).unwrap();
            assert!(child == a || child == b);
        }
    }

    #[test]
    fn crossover_two_functions_yields_group_combination() {
        let specs = small_specs();
        let cluster = cluster_of(4, 64);
        let env = EnvironmentState::default();
        let ctx = EvalContext {
            specs: &specs,
            cluster: &cluster,
            env: &env,
            epoch_length_s: 900.0,
        };
        let workload = workload_of(&[(0, 4), (1, 4)]);
        let a = random_plan(&cluster, &specs, &workload, 5).unwrap();
        let b = random_plan(&cluster, &specs, &workload, 11).unwrap();
        let group = |p: &Plan, f: usize| -> Vec<ContainerAlloc> {
            p.allocations
                .iter()
                .copied()
                .filter(|c| c.fn_idx == f)
                .collect()
        };
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..32 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let child = crossover(&a, &b, &workload, &ctx, &mut rng).unwrap();
            let from_a0 = group(&child, 0) == group(&a, 0);
            let from_b0 = group(&child, 0) == group(&b, 0);
            let from_a1 = group(&child, 1) == group(&a, 1);
            let from_b1 = group(&child, 1) == group(&b, 1);
            assert!(from_a0 || from_b0, "group 0 must come from a parent");
            assert!(from_a1 || from_b1, "group 1 must come from a parent");
            seen.insert((from_a0, from_a1));
        }
        assert!(seen.len() >= 2, "expected multiple inheritance patterns");
    }

    #[test]
    fn place_offspring_replaces_first_dominated_and_resets_history() {
        let member = |o: ObjectiveVector, h: u64| PopulationMember {
            plan: Plan::empty(),
            objectives: o,
            history_count: h,
        };
        let mut pop = vec![
            member(obj(0.5, 50.0, 5.0), 4),
            member(obj(0.9, 90.0, 9.0), 2),
            member(obj(0.8, 80.0, 8.0), 7),
        ];
        // dominates members 1 and 2 but not 0
        let slot = place_offspring(&mut pop, &Plan::empty(), obj(0.6, 60.0, 6.0));
        assert_eq!(slot, Some(1));
        assert_eq!(pop[1].history_count, 0);
        assert_eq!(pop[1].objectives, obj(0.6, 60.0, 6.0));
        assert_eq!(pop[2].objectives, obj(0.8, 80.0, 8.0));

        // dominating nothing leaves the population unchanged
        let slot = place_offspring(&mut pop, &Plan::empty(), obj(1.0, 100.0, 10.0));
        assert_eq!(slot, None);
    }

    #[test]
    fn archive_keeps_only_nondominated() {
        let mut archive = ParetoArchive::new();
        assert!(archive.insert(Plan::empty(), obj(0.5, 50.0, 5.0)));
        assert!(!archive.insert(Plan::empty(), obj(0.5, 50.0, 5.0)), "duplicate");
        assert!(!archive.insert(Plan::empty(), obj(0.6, 60.0, 6.0)), "dominated");
        assert!(archive.insert(Plan::empty(), obj(0.4, 60.0, 6.0)), "trade-off");
        assert!(archive.insert(Plan::empty(), obj(0.3, 40.0, 4.0)), "dominates all");
        assert_eq!(archive.len(), 1);
        for a in archive.entries() {
            for b in archive.entries() {
                assert!(!dominates(&a.objectives, &b.objectives));
            }
        }
    }

    fn opt_fixture() -> (Vec<FunctionSpec>, ClusterSpec, EnvironmentState, EpochWorkload) {
        (
            small_specs(),
            cluster_of(3, 16),
            EnvironmentState::default(),
            workload_of(&[(0, 7), (1, 6)]),
        )
    }

    #[test]
    fn optimize_zero_rounds_archives_initial_population() {
        let (specs, cluster, env, workload) = opt_fixture();
        let ctx = EvalContext {
            specs: &specs,
            cluster: &cluster,
            env: &env,
            epoch_length_s: 900.0,
        };
        let budget = SearchBudget {
            rounds: 0,
            ..SearchBudget::default()
        };
        let out = optimize_epoch(
            &workload,
            &ctx,
            &budget,
            &[Weights::balanced()],
            &[Weights::balanced()],
            None,
            &BaselineConfig::default(),
        )
        .unwrap();

        // rebuild the initial population exactly as optimize_epoch does
        let mut master = ChaCha8Rng::seed_from_u64(budget.seed);
        let mut expected = ParetoArchive::new();
        for _ in 0..budget.population_size {
            let plan = random_plan(&cluster, &specs, &workload, master.next_u64()).unwrap();
            let objectives = evaluate(&plan, &workload, &ctx, None).unwrap();
            expected.insert(plan, objectives);
        }
        let got: Vec<_> = out.archive.entries().iter().map(|e| e.objectives).collect();
        let want: Vec<_> = expected.entries().iter().map(|e| e.objectives).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn optimize_archive_is_mutually_nondominated_and_deterministic() {
        let (specs, cluster, env, workload) = opt_fixture();
        let ctx = EvalContext {
            specs: &specs,
            cluster: &cluster,
            env: &env,
            epoch_length_s: 900.0,
        };
        let budget = SearchBudget {
            rounds: 6,
            local_steps_per_round: 10,
            ..SearchBudget::default()
        };
        let run = || {
            optimize_epoch(
                &workload,
                &ctx,
                &budget,
                &[Weights::balanced()],
                &[Weights::slo_only(), Weights::balanced()],
                None,
                &BaselineConfig::default(),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        let objs = |o: &OptimizeOutcome| -> Vec<[f64; 3]> {
            o.archive.entries().iter().map(|e| e.objectives.as_array()).collect()
        };
        assert_eq!(objs(&a), objs(&b));
        assert_eq!(
            a.picks.iter().map(|p| p.plan.clone()).collect::<Vec<_>>(),
            b.picks.iter().map(|p| p.plan.clone()).collect::<Vec<_>>()
        );
        for x in a.archive.entries() {
            for y in a.archive.entries() {
                assert!(!dominates(&x.objectives, &y.objectives));
            }
        }
    }

    #[test]
    fn optimize_round_best_never_increases() {
        let (specs, cluster, env, workload) = opt_fixture();
        let ctx = EvalContext {
            specs: &specs,
            cluster: &cluster,
            env: &env,
            epoch_length_s: 900.0,
        };
        let budget = SearchBudget {
            rounds: 12,
            local_steps_per_round: 8,
            ..SearchBudget::default()
        };
        let out = optimize_epoch(
            &workload,
            &ctx,
            &budget,
            &[Weights::balanced()],
            &[],
            None,
            &BaselineConfig::default(),
        )
        .unwrap();
        for pair in out.round_best.windows(2) {
            assert!(pair[1] <= pair[0], "round best increased: {:?}", out.round_best);
        }
    }
}
