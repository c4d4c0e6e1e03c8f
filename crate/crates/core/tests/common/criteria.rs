//! Acceptance checks. Each returns a one-line detail on success and the
//! first violation on failure.

use std::collections::BTreeMap;
use std::time::Instant;

use cdal_core::ann::min_jsd_exhaustive;
use cdal_core::bench::synthetic_summary;
use cdal_core::io::{
    load_state, read_grid, read_selection, read_summaries, save_state, selection_to_string,
    summarize_grid, write_grid, write_grid_f32, write_selection, write_summaries,
};
use cdal_core::sim::{compare_policies, generate_pool, Metric, PoolSpec, SimCheckpoint, Simulation};
use cdal_core::{
    class_distribution, hellinger_embed, inter_sample_diversity, jsd, per_class_entropy_mass,
    prevalence_weights, robust_normalize, select_batch, select_coreset, select_with_policy,
    AcquisitionConfig, ClassDistribution, CycleState, DivergenceIndex, ExecMode,
    IndexConfig, Policy, PolicyConfig, Retrieval, SampleId, SampleSummary,
};
use rand::Rng;

use super::*;

pub type Outcome = Result<String, String>;

fn fail<T>(msg: impl Into<String>) -> Result<T, String> {
    Err(msg.into())
}

/// Argmax tally, exhaustive min-JSD and entropy/weight kernels against
/// brute-force references on `cases` random instances each.
pub fn math_kernels(cases: usize) -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    for case in 0..cases {
        let k = r.random_range(2..=20);
        let voxels = r.random_range(1..=64);
        let grid = random_grid(&mut r, case as u64, k, voxels);
        let q = class_distribution(&grid).map_err(|e| e.to_string())?;
        let want = oracle_class_distribution(&grid);
        if let Some(c) = (0..k).find(|&c| !close(q.probs()[c], want[c], 1e-9)) {
            return fail(format!("tally case {case}: class {c} {} vs {}", q.probs()[c], want[c]));
        }
    }
    for case in 0..cases {
        let k = r.random_range(2..=20);
        let q = random_dist(&mut r, k, 0.3);
        let set: Vec<ClassDistribution> = (0..r.random_range(1..=30))
            .map(|_| random_dist(&mut r, k, 0.3))
            .collect();
        let got = inter_sample_diversity(&q, &set, None).map_err(|e| e.to_string())?;
        let raw: Vec<Vec<f64>> = set.iter().map(|d| d.probs().to_vec()).collect();
        let want = oracle_min_jsd(q.probs(), &raw);
        if !close(got, want, 1e-9) {
            return fail(format!("min-JSD case {case}: {got} vs {want}"));
        }
    }
    let eps = 1e-6;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for case in 0..cases {
        let k = r.random_range(2..=20);
        let voxels = r.random_range(1..=64);
        let grid = random_grid(&mut r, case as u64, k, voxels);
        let mass = per_class_entropy_mass(&grid).map_err(|e| e.to_string())?;
        let want_mass = oracle_entropy_mass(&grid);
        if let Some(c) = (0..k).find(|&c| !close(mass[c], want_mass[c], 1e-9)) {
            return fail(format!("entropy mass case {case}: class {c} {} vs {}", mass[c], want_mass[c]));
        }
        let want_q = oracle_class_distribution(&grid);
        let q = ClassDistribution::new(want_q.clone()).map_err(|e| e.to_string())?;
        let w = prevalence_weights(&q, eps).map_err(|e| e.to_string())?;
        let want_w = oracle_weights(&want_q, eps);
        if let Some(c) = (0..k).find(|&c| !close(w.weights()[c], want_w[c], 1e-9)) {
            return fail(format!("weights case {case}: class {c}"));
        }
        let s = summarize_grid(&grid).map_err(|e| e.to_string())?;
        let ufw = s.frequency_weighted_uncertainty(eps).map_err(|e| e.to_string())?;
        let want_ufw = oracle_ufw(&want_q, &want_mass, eps);
        if !close(ufw, want_ufw, 1e-9) {
            return fail(format!("U_fw case {case}: {ufw} vs {want_ufw}"));
        }
        // Through f32 storage: same kernels on the decoded grid.
        if case % 5 == 0 {
            let path = dir.path().join(format!("{case}.grid"));
            let payload: Vec<f32> = grid.as_slice().iter().map(|&v| v as f32).collect();
            write_grid_f32(&path, k, &payload).map_err(|e| e.to_string())?;
            let stored = read_grid(&path, grid.sample_id()).map_err(|e| e.to_string())?;
            let s32 = summarize_grid(&stored).map_err(|e| e.to_string())?;
            if let Some(c) = (0..k).find(|&c| !close(s32.entropy_mass[c], want_mass[c], 1e-6)) {
                return fail(format!("f32 entropy mass case {case}: class {c}"));
            }
            let u32_ufw = s32.frequency_weighted_uncertainty(eps).map_err(|e| e.to_string())?;
            let want = oracle_ufw(
                &oracle_class_distribution(&stored),
                &oracle_entropy_mass(&stored),
                eps,
            );
            if !close(u32_ufw, want, 1e-9) {
                return fail(format!("f32 U_fw case {case}: {u32_ufw} vs {want}"));
            }
        }
    }
    Ok(format!("{cases} cases per kernel in {:.2?}", start.elapsed()))
}

/// Symmetry, identity, bounds and disjoint-support saturation of JSD.
pub fn jsd_properties(pairs: usize) -> Outcome {
    let mut r = rng(202);
    let mut checked = 0usize;
    for case in 0..pairs {
        let k = r.random_range(2..=24);
        let p = random_dist(&mut r, k, 0.4);
        let q = random_dist(&mut r, k, 0.4);
        let pq = jsd(&p, &q).map_err(|e| e.to_string())?;
        let qp = jsd(&q, &p).map_err(|e| e.to_string())?;
        if pq.to_bits() != qp.to_bits() {
            return fail(format!("pair {case}: asymmetric {pq} vs {qp}"));
        }
        if !(0.0..=1.0).contains(&pq) {
            return fail(format!("pair {case}: {pq} outside [0, 1]"));
        }
        if jsd(&p, &p).map_err(|e| e.to_string())? != 0.0 {
            return fail(format!("pair {case}: JSD(p, p) != 0"));
        }
        let shared = p.probs().iter().zip(q.probs()).any(|(a, b)| *a > 0.0 && *b > 0.0);
        if shared == (pq == 1.0) {
            return fail(format!("pair {case}: shared support {shared} but JSD {pq}"));
        }

        // Disjoint pair over a random split of the classes.
        let cut = r.random_range(1..k);
        let mut a = random_probs(&mut r, cut, 0.0);
        let mut b = random_probs(&mut r, k - cut, 0.0);
        let mut left = vec![0.0; k - cut];
        let mut right = vec![0.0; cut];
        a.append(&mut left);
        right.append(&mut b);
        if let (Ok(a), Ok(b)) = (ClassDistribution::new(a), ClassDistribution::new(right)) {
            let d = jsd(&a, &b).map_err(|e| e.to_string())?;
            if d != 1.0 {
                return fail(format!("pair {case}: disjoint supports give {d}"));
            }
            checked += 1;
        }
    }
    Ok(format!("{pairs} random pairs and {checked} disjoint pairs, zero violations"))
}

/// Order preservation, agreement with plain min–max ranking and the
/// constant-vector rule.
pub fn normalization_properties(vectors: usize) -> Outcome {
    let mut r = rng(303);
    for case in 0..vectors {
        let n = r.random_range(1..=200);
        let scale = 10f64.powi(r.random_range(-6..=3));
        let mut x: Vec<f64> = (0..n).map(|_| r.random::<f64>() * scale).collect();
        if n > 3 && r.random_bool(0.3) {
            let dup = x[0];
            for v in x.iter_mut().take(n / 3) {
                *v = dup;
            }
        }
        let y = robust_normalize(&x);
        let reference = oracle_normalize(&x);
        if y != reference {
            return fail(format!("vector {case}: differs from sort-based reference"));
        }
        if y.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return fail(format!("vector {case}: value outside [0, 1]"));
        }
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let iqr = oracle_quantile(&x, 0.75) - oracle_quantile(&x, 0.25);
        for i in 0..n {
            for j in 0..n {
                if x[i] < x[j] && y[i] > y[j] {
                    return fail(format!("vector {case}: order broken at ({i}, {j})"));
                }
                if x[i] == x[j] && y[i] != y[j] {
                    return fail(format!("vector {case}: ties split at ({i}, {j})"));
                }
                if iqr > 0.0 && hi > lo {
                    let m = |v: f64| (v - lo) / (hi - lo);
                    if (m(x[i]) < m(x[j])) != (y[i] < y[j]) && (x[j] - x[i]).abs() > 1e-12 * scale {
                        return fail(format!("vector {case}: ranking differs from min-max at ({i}, {j})"));
                    }
                }
            }
        }
    }
    for n in [1usize, 2, 7, 100] {
        for v in [0.0, 0.37, -4.0, 1e9] {
            if robust_normalize(&vec![v; n]) != vec![0.0; n] {
                return fail(format!("constant vector {v} x {n} did not map to zeros"));
            }
        }
    }
    Ok(format!("{vectors} vectors, zero violations"))
}

fn selection_ids(
    state: &CycleState,
    summaries: &BTreeMap<SampleId, SampleSummary>,
    budget: usize,
    exec: ExecMode,
) -> Result<Vec<SampleId>, String> {
    let config = AcquisitionConfig {
        exec,
        retrieval: Retrieval::Exhaustive,
        ..AcquisitionConfig::default()
    };
    Ok(select_batch(state, summaries, budget, &config)
        .map_err(|e| e.to_string())?
        .ids())
}

/// Summaries where some samples share a distribution, to exercise ties.
fn tied_summaries(r: &mut rand_chacha::ChaCha8Rng, n: usize, k: usize) -> BTreeMap<SampleId, SampleSummary> {
    let mut s = random_summaries(r, n, k);
    if n > 1 && r.random_bool(0.5) {
        let src = s[&SampleId(0)].clone();
        let dst = SampleId(r.random_range(1..n as u64));
        let copy = SampleSummary::new(dst, src.voxel_count, src.q.clone(), src.entropy_mass.clone()).unwrap();
        s.insert(dst, copy);
    }
    s
}

/// Engine selection equals the full-recomputation reference on small pools.
pub fn greedy_oracle(instances: usize) -> Outcome {
    let mut r = rng(404);
    for case in 0..instances {
        let candidates = r.random_range(1..=12);
        let labeled = r.random_range(0..=8);
        let k = r.random_range(2..=6);
        let summaries = tied_summaries(&mut r, candidates + labeled, k);
        let state = random_state(&mut r, &summaries, labeled);
        let budget = r.random_range(1..=candidates.min(3));
        let want = reference_greedy(&state, &summaries, budget, 1e-6);
        for exec in [ExecMode::Sequential, ExecMode::Parallel] {
            let got = selection_ids(&state, &summaries, budget, exec)?;
            if got != want {
                return fail(format!("instance {case} ({exec:?}): {got:?} vs reference {want:?}"));
            }
        }
    }
    Ok(format!("{instances} instances, exact id-sequence match"))
}

/// Incremental intra-set updates equal full recomputation on mid-size pools.
pub fn incremental_equivalence(pools: usize, candidates: usize, budget: usize) -> Outcome {
    let start = Instant::now();
    let mut r = rng(505);
    for case in 0..pools {
        let labeled = r.random_range(0..=50);
        let summaries = tied_summaries(&mut r, candidates + labeled, 17);
        let state = random_state(&mut r, &summaries, labeled);
        let want = reference_greedy(&state, &summaries, budget, 1e-6);
        let got = selection_ids(&state, &summaries, budget, ExecMode::Parallel)?;
        if got != want {
            return fail(format!("pool {case}: {got:?} vs reference {want:?}"));
        }
    }
    Ok(format!(
        "{pools} pools of {candidates} candidates, M = {budget}, exact match in {:.2?}",
        start.elapsed()
    ))
}

/// Exactness at full rerank width, then recall and the no-underestimate
/// guarantee at width 64.
pub fn ann_contract(exact_pools: usize, pool: usize, width: usize, queries: usize) -> Outcome {
    let start = Instant::now();
    let mut r = rng(606);
    for case in 0..exact_pools {
        let n = r.random_range(1..=400);
        let k = r.random_range(2..=17);
        let labeled: BTreeMap<SampleId, ClassDistribution> = (0..n as u64)
            .map(|i| (SampleId(i), random_dist(&mut r, k, 0.3)))
            .collect();
        let config = IndexConfig {
            rerank_width: n,
            ..IndexConfig::default()
        };
        let index = DivergenceIndex::build(&labeled, &config).map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let q = random_dist(&mut r, k, 0.3);
            let got = index.min_jsd(&q).map_err(|e| e.to_string())?;
            let (id, d) = min_jsd_exhaustive(q.probs(), labeled.iter().map(|(id, p)| (*id, p.probs())));
            if Some(got.0) != id || got.1.to_bits() != d.to_bits() {
                return fail(format!("pool {case}: index {got:?} vs scan ({id:?}, {d})"));
            }
        }
    }

    let k = 17;
    let seed = 0x0a11;
    let labeled: BTreeMap<SampleId, ClassDistribution> = (0..pool as u64)
        .map(|i| (SampleId(i), synthetic_summary(SampleId(i), k, 32, seed).unwrap().q))
        .collect();
    let config = IndexConfig {
        rerank_width: width,
        ..IndexConfig::default()
    };
    let index = DivergenceIndex::build(&labeled, &config).map_err(|e| e.to_string())?;
    let mut hits = 0;
    for i in 0..queries as u64 {
        let q = synthetic_summary(SampleId(1_000_000 + i), k, 32, seed).unwrap().q;
        let (_, approx) = index.min_jsd(&q).map_err(|e| e.to_string())?;
        let (_, exact) = index.min_jsd_exact(&q).map_err(|e| e.to_string())?;
        if approx < exact {
            return fail(format!("query {i}: reported {approx} below true minimum {exact}"));
        }
        if approx == exact {
            hits += 1;
        }
    }
    let recall = hits as f64 / queries as f64;
    if recall < 0.99 {
        return fail(format!("recall {recall:.4} < 0.99 at pool {pool}, width {width}"));
    }
    Ok(format!(
        "{exact_pools} pools bit-identical at full width; recall {recall:.4} at pool {pool}, width {width}, {queries} queries; {:.2?}",
        start.elapsed()
    ))
}

/// Greedy k-center covering radius within twice the optimum.
pub fn coreset_two_approx(instances: usize) -> Outcome {
    let mut r = rng(909);
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let mut worst: f64 = 0.0;
    for case in 0..instances {
        let k = r.random_range(2..=6);
        let n = r.random_range(1..=10);
        let m = r.random_range(1..=n.min(3));
        let l = r.random_range(0..=3);
        let feats = |r: &mut rand_chacha::ChaCha8Rng| hellinger_embed(&random_dist(r, k, 0.2)).into_inner();
        let pool: Vec<Vec<f64>> = (0..n).map(|_| feats(&mut r)).collect();
        let labeled: Vec<Vec<f64>> = (0..l).map(|_| feats(&mut r)).collect();
        let radius = |centers: &[&[f64]]| -> f64 {
            pool.iter()
                .map(|p| centers.iter().map(|c| dist(p, c)).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        let pool_refs: Vec<(SampleId, &[f64])> = pool
            .iter()
            .enumerate()
            .map(|(i, f)| (SampleId(i as u64), f.as_slice()))
            .collect();
        let labeled_refs: Vec<&[f64]> = labeled.iter().map(Vec::as_slice).collect();
        let picked = select_coreset(&labeled_refs, &pool_refs, m, ExecMode::Sequential)
            .map_err(|e| e.to_string())?
            .ids();
        let mut centers = labeled_refs.clone();
        centers.extend(picked.iter().map(|id| pool[id.0 as usize].as_slice()));
        let greedy = radius(&centers);

        let mut optimum = f64::INFINITY;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != m {
                continue;
            }
            let mut c = labeled_refs.clone();
            c.extend((0..n).filter(|i| mask >> i & 1 == 1).map(|i| pool[i].as_slice()));
            optimum = optimum.min(radius(&c));
        }
        if greedy > 2.0 * optimum + 1e-12 {
            return fail(format!("instance {case}: greedy radius {greedy} > 2 x optimum {optimum}"));
        }
        if optimum > 0.0 {
            worst = worst.max(greedy / optimum);
        }
    }
    Ok(format!("{instances} instances, zero violations, worst ratio {worst:.3}"))
}

/// Lossless round trips of every text format and the grid format.
pub fn format_round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = |name: &str| dir.path().join(name);
    let e = |e: cdal_core::Error| e.to_string();
    let mut r = rng(1010);

    for i in 0..20u64 {
        let (k, voxels) = (r.random_range(2..=17), r.random_range(1..=50));
        let grid = random_grid(&mut r, i, k, voxels);
        let payload: Vec<f32> = grid.as_slice().iter().map(|&v| v as f32).collect();
        write_grid_f32(&path("a.grid"), grid.num_classes(), &payload).map_err(e)?;
        let back = read_grid(&path("a.grid"), grid.sample_id()).map_err(e)?;
        write_grid(&path("b.grid"), &back).map_err(e)?;
        let (a, b) = (std::fs::read(path("a.grid")), std::fs::read(path("b.grid")));
        if a.map_err(|e| e.to_string())? != b.map_err(|e| e.to_string())? {
            return fail(format!("grid {i}: bytes changed across a round trip"));
        }
        let again = read_grid(&path("b.grid"), grid.sample_id()).map_err(e)?;
        if again != back {
            return fail(format!("grid {i}: values changed across a round trip"));
        }
    }

    let summaries = random_summaries(&mut r, 50, 17);
    write_summaries(&path("s.jsonl"), summaries.values()).map_err(e)?;
    if read_summaries(&path("s.jsonl")).map_err(e)? != summaries {
        return fail("summaries changed across a round trip");
    }

    let state = random_state(&mut r, &summaries, 10);
    let config = AcquisitionConfig::default();
    for policy in Policy::ALL {
        let sel = select_with_policy(&state, &summaries, 5, &PolicyConfig::new(policy, 3), &config, None)
            .map_err(e)?;
        write_selection(&sel, &path("sel.jsonl")).map_err(e)?;
        let back = read_selection(&path("sel.jsonl")).map_err(e)?;
        if back != sel {
            return fail(format!("{policy} selection changed across a round trip"));
        }
    }

    save_state(&state, &path("state.json")).map_err(e)?;
    if load_state(&path("state.json")).map_err(e)? != state {
        return fail("state changed across a round trip");
    }
    Ok("grid, summary, selection and state round trips lossless".into())
}

fn run_cycles(
    mut state: CycleState,
    summaries: &BTreeMap<SampleId, SampleSummary>,
    policy: &PolicyConfig,
    cycles: usize,
    budget: usize,
    snapshot: Option<(usize, &std::path::Path)>,
) -> Result<Vec<String>, String> {
    let config = AcquisitionConfig::default();
    let mut out = Vec::new();
    for cycle in 0..cycles {
        if let Some((at, path)) = snapshot {
            if cycle == at {
                save_state(&state, path).map_err(|e| e.to_string())?;
                state = load_state(path).map_err(|e| e.to_string())?;
            }
        }
        let sel = select_with_policy(&state, summaries, budget, policy, &config, None)
            .map_err(|e| e.to_string())?;
        out.push(selection_to_string(&sel).map_err(|e| e.to_string())?);
        state.apply_selection(&sel, summaries).map_err(|e| e.to_string())?;
    }
    Ok(out)
}

/// A 5-cycle run resumed from a snapshot after cycle 2 gives byte-identical
/// selections, for every policy and for the simulator.
pub fn resume_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let snap = dir.path().join("snapshot.json");
    let mut r = rng(1111);
    let summaries = random_summaries(&mut r, 300, 17);
    let start = random_state(&mut r, &summaries, 5);
    for policy in Policy::ALL {
        let config = PolicyConfig::new(policy, 77);
        let straight = run_cycles(start.clone(), &summaries, &config, 5, 20, None)?;
        let resumed = run_cycles(start.clone(), &summaries, &config, 5, 20, Some((2, &snap)))?;
        if straight != resumed {
            return fail(format!("{policy}: resumed run diverged"));
        }
    }

    let mut spec = PoolSpec::long_tail(400, 5);
    spec.voxels_per_sample = 64;
    let pool = generate_pool(&spec).map_err(|e| e.to_string())?;
    let config = AcquisitionConfig::default();
    for policy in Policy::ALL {
        let pc = PolicyConfig::new(policy, 9);
        let mut straight = Simulation::new(&pool, pc.clone(), 20, config.clone()).map_err(|e| e.to_string())?;
        let mut a = Vec::new();
        for _ in 0..5 {
            a.push(selection_to_string(&straight.step().map_err(|e| e.to_string())?.0).map_err(|e| e.to_string())?);
        }
        let mut first = Simulation::new(&pool, pc, 20, config.clone()).map_err(|e| e.to_string())?;
        let mut b = Vec::new();
        for _ in 0..2 {
            b.push(selection_to_string(&first.step().map_err(|e| e.to_string())?.0).map_err(|e| e.to_string())?);
        }
        let text = serde_json::to_string(&first.checkpoint()).map_err(|e| e.to_string())?;
        let checkpoint: SimCheckpoint = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        let mut second = Simulation::resume(&pool, checkpoint, config.clone()).map_err(|e| e.to_string())?;
        for _ in 0..3 {
            b.push(selection_to_string(&second.step().map_err(|e| e.to_string())?.0).map_err(|e| e.to_string())?);
        }
        if a != b {
            return fail(format!("simulated {policy} run diverged after resuming"));
        }
    }
    Ok("5-cycle runs resumed after cycle 2 byte-identical for all policies".into())
}

/// CAS raises rare-class exposure over Random at every cycle from 2 on and
/// covers the class-distribution space better than Entropy at the end.
pub fn simulation_claims(spec: &PoolSpec, cycles: usize, budget: usize, seeds: usize) -> Outcome {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..seeds as u64).collect();
    let report = compare_policies(
        spec,
        &[Policy::Cas, Policy::Random, Policy::Entropy],
        cycles,
        budget,
        &seeds,
        &AcquisitionConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let mut worst_p: f64 = 0.0;
    for cycle in 2..=cycles as u32 {
        let cas = report.mean(Policy::Cas, cycle).unwrap().rare_exposure;
        let random = report.mean(Policy::Random, cycle).unwrap().rare_exposure;
        let t = report.test(Metric::RareExposure, cycle, Policy::Cas, Policy::Random).unwrap();
        if !(cas > random) || t.mean_diff <= 0.0 || t.p_value >= 0.05 {
            return fail(format!(
                "cycle {cycle}: rare exposure CAS {cas:.5} vs Random {random:.5}, sign test {}/{}/{} p = {:.4}",
                t.positive, t.negative, t.ties, t.p_value
            ));
        }
        worst_p = worst_p.max(t.p_value);
    }
    let last = cycles as u32;
    let cas = report.mean(Policy::Cas, last).unwrap().coverage;
    let entropy = report.mean(Policy::Entropy, last).unwrap().coverage;
    if !(cas < entropy) {
        return fail(format!("cycle {last}: coverage CAS {cas:.5} not below Entropy {entropy:.5}"));
    }
    Ok(format!(
        "rare exposure CAS > Random at cycles 2-{cycles} (max p = {worst_p:.2e}); coverage CAS {cas:.5} < Entropy {entropy:.5}; {:.1?}",
        start.elapsed()
    ))
}
