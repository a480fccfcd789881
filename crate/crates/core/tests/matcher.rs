mod common;

use std::collections::BTreeMap;

use ndarray::Array2;
use pidalign_core::matcher::objective::combine;
use pidalign_core::matcher::sinkhorn::sinkhorn_log;
use pidalign_core::matcher::{build_problem, match_graphs_with, Coupling};
use pidalign_core::synth::{permuted_copy, random_attributed_graph};
use pidalign_core::{extract_mapping, match_graphs, AlignmentGraph, MatchConfig, NodeAttribute, Provenance};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check_marginals(c: &Coupling) {
    let (n, m) = c.plan.dim();
    assert!(c.plan.iter().all(|&v| v >= 0.0));
    for row in c.plan.rows() {
        assert!((row.sum() - 1.0 / n as f64).abs() < 1e-6);
    }
    for col in c.plan.columns() {
        assert!((col.sum() - 1.0 / m as f64).abs() < 1e-6);
    }
}

fn check_monotone(c: &Coupling) {
    for w in c.objective_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "trace increases: {:?}", c.objective_trace);
    }
}

#[test]
fn self_alignment_is_identity_on_rigid_graphs() {
    let mut tried = 0;
    for seed in 0..60 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(4..=10);
        let g = random_attributed_graph(&mut rng, n, (0.2, 0.4), 3);
        // graphs with a nontrivial automorphism have no unique answer
        if common::isomorphisms(&g, &g, 2).len() > 1 {
            continue;
        }
        tried += 1;
        let c = match_graphs(&g, &g, &MatchConfig::default()).unwrap();
        let m = extract_mapping(&c);
        for p in &m.pairs {
            assert_eq!(p.source, p.target, "seed {seed}");
        }
        let floor = 0.0; // identical labels: attribute cost and GW both vanish at the identity
        assert!(c.objective_trace.last().unwrap() - floor < 1e-6, "seed {seed}: {:?}", c.objective_trace.last());
        check_marginals(&c);
        check_monotone(&c);
    }
    assert!(tried >= 20, "only {tried} rigid graphs");
}

#[test]
fn permuted_copy_recovers_the_unique_isomorphism() {
    let mut tried = 0;
    for seed in 0..80 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let s = random_attributed_graph(&mut rng, 8, (0.2, 0.35), 3);
        let (f, truth) = permuted_copy(&mut rng, &s);
        let all = common::isomorphisms(&s, &f, 2);
        assert!(all.contains(&truth));
        if all.len() > 1 {
            continue;
        }
        tried += 1;
        let m = extract_mapping(&match_graphs(&s, &f, &MatchConfig::default()).unwrap());
        let got: BTreeMap<String, String> = m.pairs.into_iter().map(|p| (p.source, p.target)).collect();
        assert_eq!(got, truth, "seed {seed}");
    }
    assert!(tried >= 30, "only {tried} uniquely determined instances");
}

#[test]
fn beta_gradient_matches_finite_differences() {
    let cfg = MatchConfig::default();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_attributed_graph(&mut rng, 6, (0.2, 0.5), 3);
        let f = random_attributed_graph(&mut rng, 6, (0.2, 0.5), 3);
        let problem = build_problem(&s, &f, &cfg, &[], None).unwrap();
        let kernel = Array2::from_shape_fn((6, 6), |_| rng.random_range(-2.0..2.0));
        let uniform = ndarray::Array1::from_elem(6, 1.0 / 6.0);
        let plan = sinkhorn_log(&kernel, uniform.view(), uniform.view(), 200, 1e-12).plan;
        let mut beta = |k: usize| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / total).collect::<Vec<_>>()
        };
        let (bs, bf) = (beta(3), beta(3));

        let objective = |bs: &[f64], bf: &[f64]| {
            common::gw_brute(&combine(&problem.source_bases, bs), &combine(&problem.target_bases, bf), &plan)
                + (&problem.linear_cost * &plan).sum()
        };
        let (gs, gf) = problem.beta_gradient(&bs, &bf, &plan);
        let h = 1e-5;
        for k in 0..3 {
            let (mut up, mut down) = (bs.clone(), bs.clone());
            up[k] += h;
            down[k] -= h;
            let fd = (objective(&up, &bf) - objective(&down, &bf)) / (2.0 * h);
            let rel = (gs[k] - fd).abs() / fd.abs().max(gs[k].abs()).max(1e-8);
            assert!(rel < 1e-3, "seed {seed} source basis {k}: analytic {} fd {fd}", gs[k]);

            let (mut up, mut down) = (bf.clone(), bf.clone());
            up[k] += h;
            down[k] -= h;
            let fd = (objective(&bs, &up) - objective(&bs, &down)) / (2.0 * h);
            let rel = (gf[k] - fd).abs() / fd.abs().max(gf[k].abs()).max(1e-8);
            assert!(rel < 1e-3, "seed {seed} target basis {k}: analytic {} fd {fd}", gf[k]);
        }
    }
}

#[test]
fn closed_form_objective_matches_brute_force_sum() {
    let cfg = MatchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s = random_attributed_graph(&mut rng, 5, (0.3, 0.5), 2);
    let f = random_attributed_graph(&mut rng, 7, (0.3, 0.5), 2);
    let c = match_graphs(&s, &f, &cfg).unwrap();
    let problem = build_problem(&s, &f, &cfg, &[], None).unwrap();
    let (cs, cf) = problem.similarity(&c.beta_source, &c.beta_target);
    let brute = common::gw_brute(&cs, &cf, &c.plan) + (&problem.linear_cost * &c.plan).sum();
    assert!((brute - c.objective_trace.last().unwrap()).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn couplings_are_feasible_and_traces_monotone(seed in any::<u64>(), n in 2usize..25, m in 2usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_attributed_graph(&mut rng, n, (0.1, 0.4), 4);
        let f = random_attributed_graph(&mut rng, m, (0.1, 0.4), 4);
        let c = match_graphs(&s, &f, &MatchConfig { seed, ..MatchConfig::default() }).unwrap();
        check_marginals(&c);
        check_monotone(&c);
        let m = extract_mapping(&c);
        prop_assert_eq!(m.pairs.len(), n);
        prop_assert!(m.pairs.iter().all(|p| p.confidence > 0.0 && p.confidence <= 1.0 + 1e-12));
    }
}

#[test]
fn same_seed_gives_bit_identical_couplings() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = random_attributed_graph(&mut rng, 20, (0.1, 0.2), 4);
    let (f, _) = permuted_copy(&mut rng, &s);
    let cfg = MatchConfig { seed: 42, ..MatchConfig::default() };
    let a = match_graphs(&s, &f, &cfg).unwrap();
    let b = match_graphs(&s, &f, &cfg).unwrap();
    assert_eq!(a.to_le_bytes(), b.to_le_bytes());
    assert_eq!(a.objective_trace, b.objective_trace);
}

/// Rows whose best column beats the runner-up by a clear margin.
fn untied_rows(c: &Coupling) -> Vec<usize> {
    (0..c.plan.nrows())
        .filter(|&i| {
            let mut row: Vec<f64> = c.plan.row(i).to_vec();
            row.sort_by(|a, b| b.total_cmp(a));
            row.len() < 2 || row[0] - row[1] > 1e-6 * row[0]
        })
        .collect()
}

#[test]
fn relabeling_the_target_relabels_the_mapping() {
    let cfg = MatchConfig { init_noise: 0.0, ..MatchConfig::default() };
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let s = random_attributed_graph(&mut rng, 15, (0.1, 0.3), 3);
        let f = random_attributed_graph(&mut rng, 17, (0.1, 0.3), 3).with_provenance(Provenance::Functional);
        let (g, sigma) = permuted_copy(&mut rng, &f);
        let c1 = match_graphs(&s, &f, &cfg).unwrap();
        let c2 = match_graphs(&s, &g, &cfg).unwrap();
        let (m1, m2) = (extract_mapping(&c1), extract_mapping(&c2));
        let rows = untied_rows(&c1);
        assert!(!rows.is_empty());
        for i in rows {
            let src = &c1.source_ids[i];
            assert_eq!(m2.target_of(src), Some(sigma[m1.target_of(src).unwrap()].as_str()), "seed {seed} row {src}");
        }
    }
}

#[test]
fn pins_pull_the_coupling() {
    // two symmetric leaves: without a pin the matcher may pick either
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let star = |prov| {
        AlignmentGraph::new(
            prov,
            [("c", "pump"), ("l1", "valve"), ("l2", "valve")]
                .map(|(id, l)| (id.to_string(), NodeAttribute::equipment(l))),
            [("c", "l1"), ("c", "l2")].map(|(a, b)| (a.to_string(), b.to_string())),
        )
        .unwrap()
    };
    let s = star(Provenance::Scene);
    let (f, _) = permuted_copy(&mut rng, &s);
    let leaves: Vec<String> = f.nodes().iter().filter(|n| n.attr.label == "valve").map(|n| n.id.clone()).collect();
    for leaf in &leaves {
        let pins = vec![("l1".to_string(), leaf.clone())];
        let c = match_graphs_with(&s, &f, &MatchConfig::default(), &pins, None, &mut |_| {}).unwrap();
        let m = extract_mapping(&c);
        assert_eq!(m.target_of("l1"), Some(leaf.as_str()));
        assert_ne!(m.target_of("l2"), Some(leaf.as_str()));
    }
}

#[test]
fn progress_reports_every_outer_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = random_attributed_graph(&mut rng, 10, (0.2, 0.3), 3);
    let mut seen = Vec::new();
    let c = match_graphs_with(&s, &s, &MatchConfig::default(), &[], None, &mut |p| seen.push(p.iteration)).unwrap();
    assert_eq!(seen, (1..=c.objective_trace.len()).collect::<Vec<_>>());
}
