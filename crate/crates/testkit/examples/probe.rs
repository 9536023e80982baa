// scratch probe for oracle-instance tuning (not part of the deliverable)
use sfcm_core::optimizer::{
    dominates, local_search, ea_round, select_start_points, Norms, PopulationMember,
    ParetoArchive, optimize_epoch, SearchBudget, Weights,
};
use sfcm_core::baselines::BaselineConfig;
use sfcm_core::cluster::random_plan;
use sfcm_core::sustain::evaluate;
use sfcm_testkit::{dominates_min, enumerate_feasible_plans, oracle_instance, true_front};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

fn key(v: &sfcm_core::ObjectiveVector) -> (u64, u64, u64) {
    let a = v.as_array();
    (a[0].to_bits(), a[1].to_bits(), a[2].to_bits())
}

// replicate optimize_epoch's loop while recording every evaluated vector
fn instrumented(seed: u64) {
    let instance = oracle_instance();
    let ctx = instance.ctx();
    let workload = &instance.workload;
    let previous = instance.previous.as_ref();
    let budget = SearchBudget { seed, ..SearchBudget::default() };
    let front = true_front(&instance, 3);

    let mut master = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut seen: BTreeSet<(u64, u64, u64)> = BTreeSet::new();
    let mut population = Vec::new();
    let mut archive = ParetoArchive::new();
    for _ in 0..budget.population_size {
        let plan = random_plan(&instance.cluster, &instance.specs, workload, master.next_u64()).unwrap();
        let objectives = evaluate(&plan, workload, &ctx, previous).unwrap();
        seen.insert(key(&objectives));
        archive.insert(plan.clone(), objectives);
        population.push(PopulationMember { plan, objectives, history_count: 0 });
    }
    let norms = Norms::from_baseline(population[0].objectives);
    let weights = [Weights::slo_only(), Weights::carbon_only(), Weights::water_only(), Weights::balanced()];
    let k = budget.start_points();
    let mut accepts = 0usize;
    let mut offspring_total = 0usize;
    let mut replacements = 0usize;
    for round in 0..budget.rounds {
        let searched = select_start_points(&population, k);
        let seeds: Vec<u64> = searched.iter().map(|_| master.next_u64()).collect();
        for (pos, &idx) in searched.iter().enumerate() {
            let w = weights[(round * k + pos) % weights.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(seeds[pos]);
            let out = local_search(
                population[idx].clone(), budget.local_steps_per_round,
                &w, &norms, workload, &ctx, previous, &mut rng,
            );
            accepts += out.accepted_scores.len();
            population[idx] = out.member;
            for (plan, obj) in out.evaluated {
                seen.insert(key(&obj));
                archive.insert(plan, obj);
            }
        }
        let offspring = ea_round(&mut population, &searched, workload, &ctx, previous, &mut master);
        for (plan, obj, slot) in offspring {
            offspring_total += 1;
            if slot.is_some() { replacements += 1; }
            seen.insert(key(&obj));
            archive.insert(plan, obj);
        }
    }
    let covered = front.iter().filter(|f| seen.contains(&key(f))).count();
    let pop_distinct: BTreeSet<_> = population.iter().map(|m| key(&m.objectives)).collect();
    println!(
        "seed {seed}: distinct={} front-eval={}/{} archive={} accepts={} offspring={} replaced={} pop_distinct={}",
        seen.len(), covered, front.len(), archive.len(), accepts, offspring_total, replacements, pop_distinct.len()
    );
}

fn main() {
    let instance = oracle_instance();
    let plans = enumerate_feasible_plans(&instance, 3);
    let front = true_front(&instance, 3);
    println!("feasible plans: {}", plans.len());
    println!("true front size: {}", front.len());
    for v in &front {
        println!("  front: slo={:.4} carbon={:.4} water={:.4}", v.slo_violation_rate, v.carbon_g, v.water_l);
    }

    let ctx = instance.ctx();
    let variants = [Weights::slo_only(), Weights::carbon_only(), Weights::water_only(), Weights::balanced()];
    let mins: Vec<f64> = (0..3)
        .map(|axis| sfcm_testkit::enumerated_minimum(&instance, 3, axis))
        .collect();
    println!("axis minima: slo={:.4} carbon={:.4} water={:.4}", mins[0], mins[1], mins[2]);

    for seed in 0..10u64 {
        let budget = SearchBudget { seed, ..SearchBudget::default() };
        let out = optimize_epoch(
            &instance.workload, &ctx, &budget, &variants, &variants,
            instance.previous.as_ref(), &BaselineConfig::default(),
        )
        .unwrap();
        let archive: Vec<_> = out.archive.entries().iter().map(|e| e.objectives).collect();
        let only_true = archive.iter().all(|v| front.iter().any(|w| w == v));
        let sound = archive.iter().all(|v| !archive.iter().any(|w| dominates_min(w, v)));
        let covered = front.iter().filter(|w| archive.iter().any(|v| v == *w)).count();
        let picks: Vec<f64> = (0..3).map(|i| out.picks[i].objectives.as_array()[i]).collect();
        println!(
            "seed {seed}: archive={} subset_of_front={} sound={} coverage={}/{} | picks slo={:.4} carbon={:.4} water={:.4}",
            archive.len(), only_true, sound, covered, front.len(), picks[0], picks[1], picks[2]
        );
    }

    println!("--- instrumented evaluation diversity ---");
    for seed in 0..10u64 {
        instrumented(seed);
    }
}
