//! Acceptance suite: one PASS/FAIL line per criterion, with the measured
//! values and the wall time. Tolerances are pinned below.
//!
//! `cargo test --test acceptance -- 2 5` runs only criteria 2 and 5.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::{index, SliceRandom};
use rand::Rng;

use mdopt::config::ExperimentConfig;
use mdopt::core::data::{split, MultiDomainDataset, Split, SplitFractions};
use mdopt::core::diagnostics::{
    conflict_on, dn_taylor_residual, dr_identity_check, innergrad_expectation_check, probe_batches, QuadDomain,
    QuadSet,
};
use mdopt::core::eval::{auc, evaluate};
use mdopt::core::model::{self, init_params, ModelSpec};
use mdopt::core::objective::{Counting, NeuralObjective, Objective};
use mdopt::core::optim::OptState;
use mdopt::core::param::{BlockKind, ParamVector};
use mdopt::core::ps::{self, ServerState};
use mdopt::core::rng;
use mdopt::core::strategy::{
    dn_epoch, mamdr_epoch, pcgrad_project, project_conflicting, run_epoch, MdrState, Strategy, TrainConfig,
};
use mdopt::core::synth::{generate, SyntheticSpec};
use mdopt::experiment::{self, pssim_run};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn small_data(n: usize, seed: u64) -> MultiDomainDataset {
    let spec = SyntheticSpec {
        n_domains: n,
        users_per_domain: 60,
        items_per_domain: 40,
        positives_per_user: 4,
        seed,
        ..SyntheticSpec::default()
    };
    split(&generate(&spec).unwrap(), SplitFractions::default(), seed).unwrap()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn quads(n: usize, seed: u64) -> (Vec<QuadDomain>, ParamVector) {
    let mut r = rng::for_purpose(seed, 1000);
    let qs: Vec<QuadDomain> = (0..n).map(|_| QuadDomain::random(8, 0.5, 2.0, &mut r).unwrap()).collect();
    let theta0 = QuadSet::new(qs.clone())
        .unwrap()
        .vector((0..8).map(|_| r.random_range(-2.0..2.0)).collect())
        .unwrap();
    (qs, theta0)
}

/// DN with beta = 1 against an independent per-domain SGD pass.
fn c1() -> Outcome {
    let mut checked = 0;
    for n in [1usize, 2, 6] {
        let data = small_data(n, 10 + n as u64);
        let spec = ModelSpec::new(data.num_users, data.num_items, 8, vec![16]);
        let obj = NeuralObjective::new(&spec, &data).unwrap();
        for seed in 0..3u64 {
            let cfg = TrainConfig {
                alpha: 0.05,
                beta: 1.0,
                batch_size: 32,
                inner_steps_per_domain: 3,
                seed,
                ..TrainConfig::default()
            };
            let mut theta = init_params(&spec, seed).unwrap();
            let mut oracle = theta.clone();
            for epoch in 0..3 {
                let mut r = rng::for_epoch(seed, epoch, 0);
                let mut ro = r.clone();
                theta = dn_epoch(&theta, &OptState::sgd(cfg.alpha), &obj, &cfg, &mut r).unwrap().params;
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut ro);
                for d in order {
                    for _ in 0..cfg.inner_steps_per_domain {
                        let b = obj.draw_batch(d, cfg.batch_size, &mut ro).unwrap();
                        let (_, g) = model::loss_and_grad(&spec, &oracle, &b.batch).unwrap();
                        for (p, gi) in oracle.values_mut().iter_mut().zip(g.values()) {
                            *p -= cfg.alpha * gi;
                        }
                    }
                }
                if !theta.bit_eq(&oracle) {
                    return outcome(false, format!("n={n} seed={seed} epoch={epoch}: not bitwise equal"));
                }
                checked += 1;
            }
        }
    }
    outcome(true, format!("{checked}/27 epochs bitwise identical (n in 1,2,6; 3 seeds)"))
}

/// Second-order DN prediction on 2 and 3 quadratic domains.
fn c2() -> Outcome {
    const TOL: f64 = 1e-10;
    let mut worst = [0.0f64; 2];
    for (slot, n) in [2usize, 3].into_iter().enumerate() {
        for seed in 0..10 {
            let (qs, theta0) = quads(n, seed);
            for alpha in [1e-2, 1e-3] {
                worst[slot] = worst[slot].max(dn_taylor_residual(&qs, &theta0, alpha).unwrap().residual);
            }
        }
    }
    outcome(
        worst.iter().all(|&w| w <= TOL),
        format!("max relative residual n=2 {:.2e}, n=3 {:.2e} (tol {TOL:.0e})", worst[0], worst[1]),
    )
}

fn c3() -> Outcome {
    let worst = (0..20)
        .map(|seed| {
            let (qs, theta0) = quads(2, 100 + seed);
            innergrad_expectation_check(&qs[0], &qs[1], &theta0).unwrap()
        })
        .fold(0.0, f64::max);
    outcome(worst <= 1e-12, format!("max abs discrepancy {worst:.2e} over 20 pairs (tol 1e-12)"))
}

fn c4() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (qs, theta0) = quads(2, 200 + seed);
        for alpha in [1e-2, 1e-3] {
            worst = worst.max(dr_identity_check(&qs[0], &qs[1], &theta0, alpha).unwrap().residual);
        }
    }
    outcome(worst <= 1e-10, format!("max relative residual {worst:.2e} (tol 1e-10)"))
}

fn c5() -> Outcome {
    let flat = |v: Vec<f64>| ParamVector::from_values(&mdopt::core::param::Layout::flat(v.len()), v).unwrap();
    let example = project_conflicting(&flat(vec![1.0, 0.0]), &flat(vec![-1.0, 1.0])).unwrap();
    let example_ok = example.values() == [0.5, 0.5];
    let mut r = rng::for_purpose(5, 500);
    let mut worst = f64::INFINITY;
    let mut pairs = 0;
    while pairs < 100 {
        let dim = r.random_range(2..20);
        let a = flat((0..dim).map(|_| r.random_range(-1.0..1.0)).collect());
        let b = flat((0..dim).map(|_| r.random_range(-1.0..1.0)).collect());
        if a.dot(&b).unwrap() >= 0.0 {
            continue;
        }
        pairs += 1;
        let out = pcgrad_project(&[a.clone(), b.clone()], &mut r).unwrap();
        worst = worst.min(out[0].dot(&b).unwrap()).min(out[1].dot(&a).unwrap());
    }
    outcome(
        example_ok && worst >= -1e-12,
        format!("example -> {:?}; min projected inner product {worst:.2e} over 100 pairs", example.values()),
    )
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, si) in scores.iter().enumerate() {
        for (j, sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

fn c6() -> Outcome {
    let mut r = rng::for_purpose(6, 600);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = r.random_range(2..300);
        let levels = r.random_range(1..20);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 * 0.1).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        worst = worst.max((auc(&scores, &labels).unwrap() - brute_auc(&scores, &labels)).abs());
    }
    let perfect = auc(&[0.1, 0.4, 0.6, 0.9], &[false, false, true, true]).unwrap();
    let constant = auc(&[0.7; 10], &[true, false, false, true, false, false, true, false, false, false]).unwrap();
    outcome(
        worst <= 1e-12 && perfect == 1.0 && constant == 0.5,
        format!("max |rank - pairwise| {worst:.2e} over 200 tied instances; perfect {perfect}; constant {constant}"),
    )
}

fn c7() -> Outcome {
    let cfg = ExperimentConfig::default();
    let data = experiment::load_data(&cfg).unwrap();
    let spec = experiment::model_for(&cfg, &data, 0);
    let params = init_params(&spec, 0).unwrap();
    let d = &data.domains()[0];
    let rows: Vec<usize> = d.rows(Split::Train).into_iter().take(64).collect();
    let batch = d.batch(&rows).unwrap();
    let (_, g) = model::loss_and_grad(&spec, &params, &batch).unwrap();
    let layout = spec.layout();
    // small enough that no ReLU pre-activation of the batch changes sign
    let h = 1e-6;
    let at = |i: usize, dx: f64| {
        let mut p = params.clone();
        p.values_mut()[i] += dx;
        model::batch_loss(&spec, &p, &batch).unwrap()
    };
    let mut r = rng::for_purpose(7, 700);
    let (mut worst, mut count) = (0.0f64, 0);
    for block in layout.blocks() {
        // embedding coordinates come from rows the batch references
        let candidates: Vec<usize> = match block.kind {
            BlockKind::Embedding => {
                let ids = if block.name.starts_with("user") { batch.user_ids() } else { batch.item_ids() };
                ids.iter()
                    .flat_map(|&row| (0..block.cols).map(move |c| block.offset + row * block.cols + c))
                    .collect()
            }
            _ => block.range().collect(),
        };
        let take = candidates.len().min(20);
        for k in index::sample(&mut r, candidates.len(), take) {
            let i = candidates[k];
            let fd = (at(i, h) - at(i, -h)) / (2.0 * h);
            let an = g.values()[i];
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-12));
            count += 1;
        }
    }
    outcome(
        worst <= 1e-5,
        format!("max relative error {worst:.2e} over {count} coordinates in {} blocks", layout.blocks().len()),
    )
}

/// Final-epoch cosine under DN and joint training, and MAMDR vs joint test macro-AUC.
fn c8() -> Outcome {
    let cfg = ExperimentConfig::default();
    let data = experiment::load_data(&cfg).unwrap();
    let (mut cos_dn, mut cos_joint, mut auc_joint, mut auc_mamdr) = (vec![], vec![], vec![], vec![]);
    for seed in SEEDS {
        let spec = experiment::model_for(&cfg, &data, seed);
        let obj = NeuralObjective::new(&spec, &data).unwrap();
        let probes = probe_batches(&obj, cfg.probe_batch_size, seed).unwrap();
        for strategy in [Strategy::Dn, Strategy::Joint, Strategy::Mamdr] {
            let train = TrainConfig { strategy, ..cfg.train_for_seed(seed) };
            let mut state = MdrState::new(init_params(&spec, seed).unwrap(), data.num_domains(), &train);
            for _ in 0..train.epochs {
                state = run_epoch(&state, &obj, &train).unwrap().state;
            }
            let cosine = || conflict_on(&obj, &state.shared, &probes).unwrap().mean_cosine();
            let test = || evaluate(&spec, &state, &data, Split::Test).unwrap().macro_auc;
            match strategy {
                Strategy::Dn => cos_dn.push(cosine()),
                Strategy::Joint => {
                    cos_joint.push(cosine());
                    auc_joint.push(test());
                }
                _ => auc_mamdr.push(test()),
            }
        }
    }
    let (cd, cj, aj, am) = (mean(&cos_dn), mean(&cos_joint), mean(&auc_joint), mean(&auc_mamdr));
    outcome(
        cd > cj && am - aj >= 0.005,
        format!("mean cosine DN {cd:.4} vs joint {cj:.4}; macro-AUC MAMDR {am:.4} vs joint {aj:.4} (margin {:+.4}, need >= 0.005)", am - aj),
    )
}

fn c9() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for (n, k) in [(6usize, 3usize), (10, 5)] {
        let data = small_data(n, 900 + n as u64);
        let spec = ModelSpec::new(data.num_users, data.num_items, 4, vec![8]);
        let obj = NeuralObjective::new(&spec, &data).unwrap();
        let counting = Counting::new(&obj);
        let cfg = TrainConfig {
            k,
            inner_steps_per_domain: 3,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let state = MdrState::new(init_params(&spec, 0).unwrap(), n, &cfg);
        mamdr_epoch(&state, &counting, &cfg, &mut rng::for_epoch(0, 0, 0)).unwrap();
        let expected = n * cfg.inner_steps_per_domain + 2 * n * k;
        let got = counting.gradient_evaluations();
        pass &= got == expected;
        lines.push(format!("(n={n},k={k}) {got} == {expected}"));
    }
    outcome(pass, lines.join("; "))
}

fn c10() -> Outcome {
    let cfg = ExperimentConfig::default();
    let data = experiment::load_data(&cfg).unwrap();

    let train = cfg.train_for_seed(0);
    let spec = experiment::model_for(&cfg, &data, 0);
    let init = MdrState::new(init_params(&spec, 0).unwrap(), data.num_domains(), &train);
    let one = ps::run_round(&ServerState::new(init.clone()), &ps::partition(&data, 1, 0).unwrap(), &spec, &train).unwrap();
    let obj = NeuralObjective::new(&spec, &data).unwrap();
    let single = run_epoch(&init, &obj, &train).unwrap().state;
    let bitwise = one.server.global.bit_eq(&single);

    let four = ps::run_round(&ServerState::new(init), &ps::partition(&data, 4, 0).unwrap(), &spec, &train).unwrap();
    let flat: Vec<Vec<f64>> = four.worker_deltas.iter().map(|d| d.flatten()).collect();
    let delta_gap = four
        .server_delta
        .flatten()
        .iter()
        .enumerate()
        .map(|(i, s)| (s - flat.iter().map(|w| w[i]).sum::<f64>() / 4.0).abs())
        .fold(0.0, f64::max);

    let rounds = cfg.train.epochs;
    let (mut m1, mut m4) = (vec![], vec![]);
    for seed in SEEDS {
        m1.push(pssim_run(&cfg, &data, seed, 1, rounds).unwrap().test.macro_auc);
        m4.push(pssim_run(&cfg, &data, seed, 4, rounds).unwrap().test.macro_auc);
    }
    let gap = (mean(&m4) - mean(&m1)).abs();
    outcome(
        bitwise && delta_gap <= 1e-12 && gap <= 0.02,
        format!(
            "m=1 round bitwise: {bitwise}; max |server - mean worker delta| {delta_gap:.2e}; macro-AUC m=1 {:.4}, m=4 {:.4} (gap {gap:.4}, tol 0.02)",
            mean(&m1),
            mean(&m4)
        ),
    )
}

fn c11() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.sweep.alpha = vec![1e-1, 1e-3];
    cfg.seeds = vec![0, 1];
    let data = experiment::load_data(&cfg).unwrap();
    let rows = experiment::run_sweep(&cfg, &data, None).unwrap();
    let cell = |a: f64| mean(&rows.iter().filter(|r| r.alpha == a).map(|r| r.macro_auc).collect::<Vec<_>>());
    let (hi, lo) = (cell(1e-1), cell(1e-3));
    outcome(
        (hi - 0.5).abs() <= 0.02 && lo > 0.6,
        format!("alpha=1e-1 macro-AUC {hi:.4} (need within 0.02 of 0.5); alpha=1e-3 {lo:.4} (need > 0.6)"),
    )
}

type Criterion = (usize, &'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        (1, "beta=1 degeneracy", Duration::from_secs(10), c1),
        (2, "DN Taylor exactness", Duration::from_secs(1), c2),
        (3, "InnerGrad identity", Duration::from_secs(1), c3),
        (4, "DR identity", Duration::from_secs(1), c4),
        (5, "PCGrad contract", Duration::from_secs(1), c5),
        (6, "AUC oracle", Duration::from_secs(5), c6),
        (7, "gradient exactness", Duration::from_secs(10), c7),
        (8, "conflict mitigation trend", Duration::from_secs(300), c8),
        (9, "MAMDR linear complexity", Duration::from_secs(1), c9),
        (10, "PS-sim equivalences", Duration::from_secs(300), c10),
        (11, "sweep harness shape", Duration::from_secs(300), c11),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, name, budget, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = out.pass && in_time;
        println!(
            "{} criterion {id:>2} {name}: {} [{:.2}s, budget {}s{}]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
        if !pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
