//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::time::{Duration, Instant};

use ckabs::ck::oracle::{
    coupling_block_marginal_check, coupling_diagonal_check, kantorovich_lp_oracle,
    word_distribution,
};
use ckabs::ck::{ck_approx, ck_at_depth, depth_for_epsilon, level_overlap};
use ckabs::dynamics::{
    derive_seed, make_lorentz_system, make_rotation_system, simulate_trace, DynamicalSystem,
};
use ckabs::estimation::{estimate_abstraction, EstimationConfig};
use ckabs::markov::{in_behaviour, random_chain, validate, LabeledMarkovChain};
use ckabs::refine::{refine, split_block, CkMetric, RefineReport};
use ckabs::safety::{
    estimate_ph_curve, grid_abstraction, ground_truth_ph_curve, safe_walk_probabilities,
    SafetyQuery,
};
use ckabs::symbolic::{is_partition_consistent, Partition, TimedWord};
use ckabs::Error;

const SEED: u64 = 20_240_601;
const REFINE_SAMPLES: u64 = 50_000;
const TRUTH_SAMPLES: u64 = 200_000;
const H_MAX: usize = 8;

struct Outcome {
    ok: bool,
    detail: String,
}

impl Outcome {
    fn new(ok: bool, detail: impl Into<String>) -> Self {
        Outcome {
            ok,
            detail: detail.into(),
        }
    }
}

/// Random chain `i` of a reproducible family: 1–4 states, the given
/// alphabet, mixed sparsity.
fn family(i: u64, tag: u64, alphabet: usize) -> LabeledMarkovChain {
    let s = derive_seed(SEED, &[tag, i]);
    let n = 1 + (s % 4) as usize;
    let sparsity = [0.0, 0.3, 0.6][(s / 4 % 3) as usize];
    random_chain(n, alphabet, sparsity, s)
}

fn alphabet_of(i: u64) -> usize {
    2 + (i % 2) as usize
}

fn criterion_1_and_4() -> (Outcome, Outcome) {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut coupling_failures = Vec::new();
    let mut couplings = 0;
    for i in 0..100 {
        let a = alphabet_of(i);
        let c1 = family(i, 1, a);
        let c2 = family(i, 2, a);
        for k in 1..=5 {
            let closed = ck_at_depth(&c1, &c2, k).unwrap().value;
            let (exact, coupling) = kantorovich_lp_oracle(&c1, &c2, k).unwrap();
            worst = worst.max((closed - exact).abs());

            let p1 = word_distribution(&c1, k).unwrap();
            let p2 = word_distribution(&c2, k).unwrap();
            let q1 = word_distribution(&c1, k - 1).unwrap();
            let q2 = word_distribution(&c2, k - 1).unwrap();
            couplings += 1;
            if !coupling.is_coupling_of(&p1, &p2, 1e-9)
                || !coupling_diagonal_check(&coupling, &p1, &p2)
                || !coupling_block_marginal_check(&coupling, &q1, &q2)
            {
                coupling_failures.push((i, k));
            }
        }
    }
    let elapsed = start.elapsed();
    (
        Outcome::new(
            worst <= 1e-9 && elapsed < Duration::from_secs(60),
            format!("100 pairs, k=1..5: max |closed form - transport optimum| = {worst:.2e}, {elapsed:.1?}"),
        ),
        Outcome::new(
            coupling_failures.is_empty(),
            format!("{couplings} optimal couplings checked, failures at (pair, k): {coupling_failures:?}"),
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut problems = Vec::new();
    let mut worst_gap = f64::NEG_INFINITY;
    for i in 0..100 {
        let a = alphabet_of(i);
        let c = [family(i, 3, a), family(i, 4, a), family(i, 5, a)];
        let d = |x: usize, y: usize| ck_approx(&c[x], &c[y], 1e-3).unwrap();
        let ab = d(0, 1);
        assert_eq!(ab.k_used, 11);
        let (ba, bc, ac) = (d(1, 0), d(1, 2), d(0, 2));
        if ab.value < 0.0 || bc.value < 0.0 || ac.value < 0.0 {
            problems.push(format!("negative at {i}"));
        }
        if ab.value != ba.value {
            problems.push(format!("asymmetric at {i}: {} vs {}", ab.value, ba.value));
        }
        for x in 0..3 {
            if d(x, x).value != 0.0 {
                problems.push(format!("nonzero self-distance at {i}"));
            }
        }
        let gap = ac.value - (ab.value + bc.value);
        worst_gap = worst_gap.max(gap);
        if gap > 1e-9 {
            problems.push(format!("triangle violated at {i} by {gap:e}"));
        }
    }
    Outcome::new(
        problems.is_empty(),
        format!(
            "100 triples at eps=1e-3; worst triangle slack {worst_gap:.2e}; problems {problems:?}"
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut problems = Vec::new();
    for i in 0..60 {
        let a = alphabet_of(i);
        let (c1, c2) = (family(i, 6, a), family(i, 7, a));
        let levels = level_overlap(&c1, &c2, 12).unwrap();
        for k in [3usize, 5, 7] {
            let step = levels.kantorovich(k + 5) - levels.kantorovich(k);
            let bound = 2f64.powi(1 - k as i32) * levels.overlap[k - 1];
            if step < -1e-12 || step > bound + 1e-12 {
                problems.push(format!("pair {i} k={k}: increase {step:e} bound {bound:e}"));
            }
        }
        for eps in [1e-1, 1e-2, 1e-3] {
            let r = ck_approx(&c1, &c2, eps).unwrap();
            if r.upper - r.lower > eps || r.k_used != depth_for_epsilon(eps).unwrap() {
                problems.push(format!("pair {i} eps={eps}: width {}", r.upper - r.lower));
            }
        }
    }
    Outcome::new(
        problems.is_empty(),
        format!("60 pairs, k in {{3,5,7}}, eps in {{1e-1,1e-2,1e-3}}; problems {problems:?}"),
    )
}

fn criterion_5() -> Outcome {
    let mut problems = Vec::new();
    for i in 0..60 {
        let a = alphabet_of(i);
        let (c1, c2) = (family(i, 8, a), family(i, 9, a));
        let levels = level_overlap(&c1, &c2, 8).unwrap();
        let mut visited = 0;
        for k in 1..=8 {
            visited += levels.nodes_per_level[k - 1];
            let tree: u64 = (1..=k as u32).map(|l| (a as u64).pow(l)).sum();
            if visited > tree {
                problems.push(format!("pair {i} k={k}: {visited} > {tree}"));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let mut slowest = Duration::ZERO;
    for i in 0..5 {
        let c1 = random_chain(4, 2, 0.0, derive_seed(SEED, &[10, i]));
        let c2 = random_chain(4, 2, 0.0, derive_seed(SEED, &[11, i]));
        let start = Instant::now();
        let levels = pool.install(|| level_overlap(&c1, &c2, 15)).unwrap();
        slowest = slowest.max(start.elapsed());
        let tree: u64 = (1..=15).map(|l| 2u64.pow(l)).sum();
        if levels.nodes_visited > tree {
            problems.push(format!("k=15 chain {i}: {} nodes", levels.nodes_visited));
        }
        if !matches!(
            kantorovich_lp_oracle(&c1, &c2, 15),
            Err(Error::TooLarge {
                words: 32768,
                limit: 4096
            })
        ) {
            problems.push("oracle accepted 2^15 words".into());
        }
    }
    Outcome::new(
        problems.is_empty() && slowest < Duration::from_secs(5),
        format!("node bound on 60 pairs; |A|=2 k=15 slowest {slowest:.2?} on one thread; problems {problems:?}"),
    )
}

/// The intermediate word sets of a report, rebuilt from its choices.
fn replay(report: &RefineReport) -> Vec<(Partition, Vec<TimedWord>)> {
    let mut dropped: Vec<TimedWord> = report
        .dropped
        .iter()
        .filter(|d| d.iteration.is_none())
        .map(|d| d.word.clone())
        .collect();
    let mut p = report.initial_partition.clone();
    let mut out = vec![(p.clone(), dropped.clone())];
    for (n, it) in report.iterations.iter().enumerate() {
        let now: Vec<TimedWord> = report
            .dropped
            .iter()
            .filter(|d| d.iteration == Some(n))
            .map(|d| d.word.clone())
            .collect();
        p = split_block(&p, it.chosen).unwrap().without(&now);
        dropped.extend(now);
        out.push((p.clone(), dropped.clone()));
    }
    out
}

fn criterion_6(lorentz: &[&RefineReport]) -> Outcome {
    let mut problems = Vec::new();
    let rotation = make_rotation_system(0.25).unwrap();
    let cfg = EstimationConfig::new(REFINE_SAMPLES, SEED);
    let rot_report = refine(&rotation, &CkMetric::default(), 4, &cfg).unwrap();
    let memory2 = Partition::new(
        ["00", "01", "10", "11"]
            .iter()
            .map(|w| w.parse().unwrap())
            .collect(),
        2,
    )
    .unwrap();
    let rot_chains = [
        estimate_abstraction(&rotation, &Partition::coarse(2).unwrap(), &cfg).unwrap(),
        estimate_abstraction(&rotation, &memory2, &cfg).unwrap(),
        rot_report.chain.clone(),
    ];
    let lorentz_sys = make_lorentz_system();
    let systems: [(&dyn DynamicalSystem, Vec<(&str, &LabeledMarkovChain)>); 2] = [
        (
            &rotation,
            vec![
                ("memory-1", &rot_chains[0]),
                ("memory-2", &rot_chains[1]),
                ("refined N=4", &rot_chains[2]),
            ],
        ),
        (
            &lorentz_sys,
            lorentz
                .iter()
                .map(|r| {
                    (
                        if r.iterations.len() == 6 {
                            "refined N=6"
                        } else {
                            "refined N=14"
                        },
                        &r.chain,
                    )
                })
                .collect(),
        ),
    ];
    let mut traces_checked = 0;
    for (s, (sys, chains)) in systems.iter().enumerate() {
        for (name, chain) in chains {
            if !validate(chain).is_empty() {
                problems.push(format!("{} {name}: invalid chain", sys.name()));
            }
            let mut outside = 0;
            let mut example = None;
            for j in 0..1000 {
                let t =
                    simulate_trace(*sys, derive_seed(SEED ^ 0xFEED, &[s as u64, j]), 0, 4).unwrap();
                traces_checked += 1;
                if !in_behaviour(chain, &t.labels) {
                    outside += 1;
                    example.get_or_insert(t.labels.clone());
                }
            }
            if let Some(labels) = example {
                problems.push(format!(
                    "{} {name}: {outside}/1000 traces outside, e.g. {labels:?}",
                    sys.name()
                ));
            }
        }
    }
    let mut partitions = 0;
    for report in lorentz.iter().copied().chain([&rot_report]) {
        for (p, dropped) in replay(report) {
            partitions += 1;
            if !is_partition_consistent(&p, &dropped) {
                problems.push(format!("inconsistent word set {:?}", p.words()));
            }
        }
        if replay(report).last().map(|(p, _)| p) != Some(&report.partition) {
            problems.push("replayed word set differs from the reported one".into());
        }
    }
    problems.truncate(10);
    Outcome::new(
        problems.is_empty(),
        format!("{traces_checked} fresh traces, {partitions} intermediate word sets; problems {problems:?}"),
    )
}

fn criterion_7() -> Outcome {
    let rotation = make_rotation_system(0.25).unwrap();
    let cfg = EstimationConfig::new(100_000, SEED);
    let m1 = estimate_abstraction(&rotation, &Partition::coarse(2).unwrap(), &cfg).unwrap();
    let memory2 = Partition::new(
        ["00", "01", "11", "10"]
            .iter()
            .map(|w| w.parse().unwrap())
            .collect(),
        2,
    )
    .unwrap();
    let m2 = estimate_abstraction(&rotation, &memory2, &cfg).unwrap();
    // 00 = [0,¼), 01 = [¼,½), 11 = [½,¾), 10 = [¾,1) and x ↦ x + ¼ cycles them
    let mu1 = [0.5, 0.5];
    let tau1 = [[0.5, 0.5], [0.5, 0.5]];
    let mu2 = [0.25; 4];
    let tau2 = [
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [1.0, 0.0, 0.0, 0.0],
    ];
    let mut worst = 0.0f64;
    for i in 0..2 {
        worst = worst.max((m1.mu()[i] - mu1[i]).abs());
        for j in 0..2 {
            worst = worst.max((m1.tau(i, j) - tau1[i][j]).abs());
        }
    }
    for i in 0..4 {
        worst = worst.max((m2.mu()[i] - mu2[i]).abs());
        for j in 0..4 {
            worst = worst.max((m2.tau(i, j) - tau2[i][j]).abs());
        }
    }
    let ck3 = ck_at_depth(&m1, &m2, 3).unwrap().value;
    Outcome::new(
        worst <= 0.02 && (ck3 - 0.125).abs() <= 0.01,
        format!("max entry error {worst:.4}; K^3 = {ck3:.4}"),
    )
}

fn criterion_8(reports: &[(usize, &RefineReport)]) -> Outcome {
    let mut ok = true;
    let mut details = Vec::new();
    for &(n, report) in reports {
        let target = 3 + 2 * n;
        let states = report.partition.len();
        let drops = report.dropped.len();
        let explained = report
            .dropped
            .iter()
            .all(|d| d.count <= report.config.zero_threshold && !d.reason.is_empty());
        let law = report
            .state_counts()
            .windows(2)
            .zip(&report.iterations)
            .enumerate()
            .all(|(i, (w, _))| {
                let lost = report
                    .dropped
                    .iter()
                    .filter(|d| d.iteration == Some(i))
                    .count();
                w[1] + lost == w[0] + 2
            });
        let pass = if drops == 0 {
            states == target
        } else {
            states <= target && explained && law && states + drops == target
        };
        ok &= pass && report.initial_states == 3;
        let words: Vec<String> = report
            .dropped
            .iter()
            .map(|d| {
                format!(
                    "{}@it{}:{}",
                    d.word,
                    d.iteration.map_or(-1, |i| i as i64),
                    d.count
                )
            })
            .collect();
        details.push(format!(
            "N={n}: {states} states (target {target}), dropped {words:?}"
        ));
    }
    Outcome::new(ok, details.join("; "))
}

fn mean_abs_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn criterion_9(r6: &RefineReport, r14: &RefineReport) -> Outcome {
    let sys = make_lorentz_system();
    let cfg = EstimationConfig::new(REFINE_SAMPLES, SEED);
    let grid3 = grid_abstraction(&sys, 3, 0, &cfg).unwrap();
    let truth =
        ground_truth_ph_curve(&sys, 0, H_MAX, TRUTH_SAMPLES, derive_seed(SEED, &[99])).unwrap();
    let curve = |c: &LabeledMarkovChain, beta| estimate_ph_curve(c, beta, 0, H_MAX).unwrap();
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let e14 = curve(&r14.chain, 0.05);
    let worst14 = e14
        .iter()
        .zip(&truth)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let tracks = worst14 <= 0.1;

    let e6 = curve(&r6.chain, 0.05);
    let g3 = curve(&grid3, 0.05);
    let (mae6, mae_grid) = (mean_abs_error(&e6, &truth), mean_abs_error(&g3, &truth));
    let beats_grid = mae6 <= mae_grid;

    let loose = curve(&r6.chain, 0.25);
    let over = loose.iter().zip(&truth).any(|(e, t)| e > t);

    let strict14 = mean_abs_error(&curve(&r14.chain, 0.01), &truth);
    let strict6 = mean_abs_error(&curve(&r6.chain, 0.01), &truth);
    let more_states_help = strict14 < strict6;

    Outcome::new(
        tracks && beats_grid && over && more_states_help,
        format!(
            "truth [{}]; beta=0.05 N=14 [{}] max err {worst14:.3} (<= 0.1: {tracks}); \
             N=6 mae {mae6:.3} vs 81-cell grid {mae_grid:.3} ({beats_grid}); \
             beta=0.25 N=6 [{}] overestimates: {over}; beta=0.01 mae N=14 {strict14:.3} < N=6 {strict6:.3}: {more_states_help}",
            fmt(&truth),
            fmt(&e14),
            fmt(&loose),
        ),
    )
}

/// Sum over every safe state sequence, written out as nested loops over
/// base-n counters.
fn enumerate_safe_walks(chain: &LabeledMarkovChain, q: &SafetyQuery, s0: usize) -> f64 {
    let n = chain.n_states();
    let h = q.horizon;
    let mut total = 0.0;
    for code in 0..n.pow(h as u32) {
        let mut path = Vec::with_capacity(h);
        let mut rest = code;
        for _ in 0..h {
            path.push(rest % n);
            rest /= n;
        }
        if path.iter().any(|&s| chain.labels()[s] == q.unsafe_label) {
            continue;
        }
        let mut p = 1.0;
        let mut prev = s0;
        for &s in &path {
            p *= chain.tau(prev, s);
            prev = s;
        }
        total += p;
    }
    total
}

fn criterion_10() -> Outcome {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for i in 0..200 {
        let a = alphabet_of(i);
        let chain = family(i, 12, a);
        for h in 0..=4 {
            for bad in 0..a as u8 {
                let q = SafetyQuery::new(h, 0.5, bad).unwrap();
                let v = safe_walk_probabilities(&chain, &q);
                for (s, &vs) in v.iter().enumerate() {
                    worst = worst.max((vs - enumerate_safe_walks(&chain, &q, s)).abs());
                    cases += 1;
                }
            }
        }
    }
    Outcome::new(
        worst <= 1e-12,
        format!("{cases} (chain, H, label, state) cases, max error {worst:.2e}"),
    )
}

fn main() {
    // cargo passes harness flags; listing must not run the suite
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let start = Instant::now();
    let lorentz = make_lorentz_system();
    let cfg = EstimationConfig::new(REFINE_SAMPLES, SEED);
    let r6 = refine(&lorentz, &CkMetric::default(), 6, &cfg).expect("refine N=6");
    let r14 = refine(&lorentz, &CkMetric::default(), 14, &cfg).expect("refine N=14");

    let (c1, c4) = criterion_1_and_4();
    let results = [
        (1, "closed form equals transport optimum", c1),
        (2, "metric axioms", criterion_2()),
        (3, "truncation error bound", criterion_3()),
        (4, "optimal coupling structure", c4),
        (5, "complexity shape", criterion_5()),
        (6, "abstraction soundness", criterion_6(&[&r6, &r14])),
        (7, "rotation abstractions", criterion_7()),
        (
            8,
            "refined state counts",
            criterion_8(&[(6, &r6), (14, &r14)]),
        ),
        (9, "safety trends", criterion_9(&r6, &r14)),
        (10, "safe-walk recursion", criterion_10()),
    ];
    let mut failed = 0;
    for (id, name, outcome) in &results {
        let tag = if outcome.ok { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {tag}  {name}: {}", outcome.detail);
        failed += usize::from(!outcome.ok);
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1?}",
        results.len() - failed,
        start.elapsed()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
