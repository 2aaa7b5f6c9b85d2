//! Exact-table oracles for the discrete SCM module: enumeration of all
//! generative paths, adjustment-formula equivalence under full label sets,
//! and empirical checks of the do-calculus rules on small graphs.

use std::collections::BTreeMap;

use cdisent::scm::{
    adjustment_estimate, confounding_gap, d_separated, random_scm, DiscreteScm, RandomScmSpec,
    Role, ScmError, Variable, ZeroCellPolicy,
};

fn var(name: &str, card: usize, role: Role) -> Variable {
    Variable { name: name.to_string(), card, role }
}

/// Brute-force joint for a 3-variable chain a -> b -> c with hand-set CPTs,
/// summing explicit path products; independent of the library's chain-rule
/// evaluation order.
#[test]
fn chain_joint_matches_explicit_enumeration() {
    let pa = [0.25, 0.75];
    let pba = [0.9, 0.1, 0.35, 0.65]; // P(b|a)
    let pcb = [0.2, 0.8, 0.55, 0.45]; // P(c|b)
    let scm = DiscreteScm::new(
        vec![var("a", 2, Role::Other), var("b", 2, Role::Other), var("c", 2, Role::Other)],
        vec![vec![], vec![0], vec![1]],
        vec![pa.to_vec(), pba.to_vec(), pcb.to_vec()],
    )
    .unwrap();
    let joint = scm.joint().unwrap();
    for a in 0..2 {
        for b in 0..2 {
            for c in 0..2 {
                let expected = pa[a] * pba[a * 2 + b] * pcb[b * 2 + c];
                let got = joint.prob(&[a, b, c]);
                assert!((got - expected).abs() < 1e-15, "cell ({a},{b},{c})");
            }
        }
    }
}

/// Classic confounded pair: u -> z1, u -> z2. Observational conditioning
/// and interventional surgery must disagree when the confounder moves both
/// children.
fn confounded_pair() -> DiscreteScm {
    DiscreteScm::new(
        vec![var("u", 2, Role::Confounder), var("z1", 2, Role::Factor), var("z2", 2, Role::Factor)],
        vec![vec![], vec![0], vec![0]],
        vec![
            vec![0.5, 0.5],
            vec![0.9, 0.1, 0.2, 0.8], // strong effect of u on z1
            vec![0.8, 0.2, 0.15, 0.85], // strong effect of u on z2
        ],
    )
    .unwrap()
}

#[test]
fn conditioning_differs_from_intervening_under_confounding() {
    let scm = confounded_pair();
    let joint = scm.joint().unwrap();
    // P(z2 | z1=0) from the observational table.
    let z1z2 = joint.marginal(&["z1", "z2"]).unwrap();
    let pz1_0 = z1z2.prob(&[0, 0]) + z1z2.prob(&[0, 1]);
    let cond0 = z1z2.prob(&[0, 0]) / pz1_0;
    // P(z2=0 | do(z1=0)) must equal the unconditional marginal (no causal path).
    let mut do_map = BTreeMap::new();
    do_map.insert("z1".to_string(), 0);
    let inter = scm.interventional_dist("z2", &do_map).unwrap();
    let pz2 = joint.marginal(&["z2"]).unwrap();
    assert!(inter.max_abs_diff(&pz2) < 1e-12, "no causal path: do() equals marginal");
    assert!(
        (cond0 - inter.probs[0]).abs() > 0.05,
        "confounding should separate conditioning ({cond0}) from intervening ({})",
        inter.probs[0]
    );
}

#[test]
fn intervening_on_root_equals_conditioning_on_it() {
    // Root z1 -> z2; no confounding, so do(z1) = conditioning on z1.
    let scm = DiscreteScm::new(
        vec![var("z1", 3, Role::Other), var("z2", 2, Role::Other)],
        vec![vec![], vec![0]],
        vec![vec![0.2, 0.5, 0.3], vec![0.9, 0.1, 0.4, 0.6, 0.25, 0.75]],
    )
    .unwrap();
    let joint = scm.joint().unwrap();
    for v in 0..3 {
        let mut do_map = BTreeMap::new();
        do_map.insert("z1".to_string(), v);
        let inter = scm.interventional_dist("z2", &do_map).unwrap();
        // Conditional from the observational joint.
        let pz1 = joint.marginal(&["z1"]).unwrap().probs[v];
        for y in 0..2 {
            let cond = joint.prob(&[v, y]) / pz1;
            assert!((inter.probs[y] - cond).abs() < 1e-12);
        }
        // Equivalent statement through the adjustment formula with an empty
        // label set (unconfounded edge).
        let adj = adjustment_estimate(&joint, "z2", "z1", &[], ZeroCellPolicy::Error).unwrap();
        assert!(adj.row(v).max_abs_diff(&inter) < 1e-12);
    }
}

#[test]
fn do_on_disconnected_variable_leaves_target_untouched() {
    // w is disconnected from y: do(w) must not move P(y) (action deletion).
    let scm = DiscreteScm::new(
        vec![var("w", 2, Role::Other), var("y", 3, Role::Other)],
        vec![vec![], vec![]],
        vec![vec![0.6, 0.4], vec![0.5, 0.3, 0.2]],
    )
    .unwrap();
    let py = scm.joint().unwrap().marginal(&["y"]).unwrap();
    for v in 0..2 {
        let mut do_map = BTreeMap::new();
        do_map.insert("w".to_string(), v);
        let inter = scm.interventional_dist("y", &do_map).unwrap();
        assert!(inter.max_abs_diff(&py) < 1e-12);
    }
}

/// Adjustment over the full confounder set reproduces the interventional
/// distribution exactly; the empty label set does not (gap above 0.01 for
/// strong confounders). This is the backdoor-adjustment identity fuzz.
#[test]
fn adjustment_with_full_confounders_matches_surgery() {
    let spec = RandomScmSpec {
        n_confounders: 1,
        n_factors: 2,
        n_extra_roots: 1,
        card_range: (2, 3),
        min_strength: 0.2,
    };
    let mut gaps_empty = Vec::new();
    for seed in 0..100u64 {
        let scm = random_scm(&spec, seed).unwrap();
        let full: Vec<&str> = scm.confounders();
        let gap_full =
            confounding_gap(&scm, "g1", "g0", &full, ZeroCellPolicy::Error).unwrap();
        assert!(gap_full <= 1e-12, "seed {seed}: full-set gap {gap_full}");

        // Superset: the irrelevant root label joins the adjustment set.
        let mut superset = full.clone();
        superset.push("u0");
        let gap_super =
            confounding_gap(&scm, "g1", "g0", &superset, ZeroCellPolicy::Error).unwrap();
        assert!(gap_super <= 1e-12, "seed {seed}: superset gap {gap_super}");

        gaps_empty
            .push(confounding_gap(&scm, "g1", "g0", &[], ZeroCellPolicy::Error).unwrap());
    }
    let confounded = gaps_empty.iter().filter(|&&g| g > 0.01).count();
    assert!(confounded >= 90, "only {confounded}/100 seeds show an empty-set gap > 0.01");
}

/// A label that is a descendant of the treatment breaks the adjustment
/// premise: the gap can stay positive even though the full confounder set
/// is included.
#[test]
fn descendant_in_label_set_breaks_adjustment() {
    // u -> z1, u -> z2, z1 -> d, z2 -> d: d is a collider below both.
    let scm = DiscreteScm::new(
        vec![
            var("u", 2, Role::Confounder),
            var("z1", 2, Role::Factor),
            var("z2", 2, Role::Factor),
            var("d", 2, Role::Other),
        ],
        vec![vec![], vec![0], vec![0], vec![1, 2]],
        vec![
            vec![0.5, 0.5],
            vec![0.9, 0.1, 0.2, 0.8],
            vec![0.8, 0.2, 0.15, 0.85],
            vec![0.95, 0.05, 0.3, 0.7, 0.4, 0.6, 0.1, 0.9],
        ],
    )
    .unwrap();
    let clean = confounding_gap(&scm, "z2", "z1", &["u"], ZeroCellPolicy::Error).unwrap();
    assert!(clean <= 1e-12);
    let broken = confounding_gap(&scm, "z2", "z1", &["u", "d"], ZeroCellPolicy::Error).unwrap();
    assert!(broken > 1e-3, "collider conditioning should bias the estimate, gap {broken}");
}

/// Observation insertion (do-calculus rule 1), checked empirically: in the
/// surgered graph, conditioning on a variable that is d-separated from the
/// target leaves the interventional estimate unchanged.
#[test]
fn rule1_insertion_of_observations_holds_on_small_graphs() {
    for seed in 0..40u64 {
        let spec = RandomScmSpec {
            n_confounders: 1,
            n_factors: 2,
            n_extra_roots: 1,
            card_range: (2, 3),
            min_strength: 0.1,
        };
        let scm = random_scm(&spec, seed).unwrap();
        let ti = scm.index_of_var("g0").unwrap();
        let yi = scm.index_of_var("g1").unwrap();
        let wi = scm.index_of_var("u0").unwrap();
        for t in 0..scm.vars()[ti].card {
            let mut do_map = BTreeMap::new();
            do_map.insert("g0".to_string(), t);
            let surgered = scm.intervene(&do_map).unwrap();
            // u0 is a disconnected root: d-separated from g1 in the
            // surgered graph given the (intervened) treatment.
            assert!(d_separated(&surgered, yi, wi, &[ti]));
            let joint = surgered.joint().unwrap();
            let base = joint.marginal(&["g1"]).unwrap();
            let wtab = joint.marginal(&["u0", "g1"]).unwrap();
            let pw = joint.marginal(&["u0"]).unwrap();
            for w in 0..scm.vars()[wi].card {
                for y in 0..scm.vars()[yi].card {
                    let cond = wtab.prob(&[w, y]) / pw.probs[w];
                    assert!(
                        (cond - base.probs[y]).abs() <= 1e-12,
                        "seed {seed}: P(g1|do,W={w}) deviates by {}",
                        (cond - base.probs[y]).abs()
                    );
                }
            }
        }
    }
}

#[test]
fn zero_support_cell_errors_by_default_and_skips_on_request() {
    // Deterministic z1 = u blocks the (z1=0, u=1) cell.
    let scm = DiscreteScm::new(
        vec![var("u", 2, Role::Confounder), var("z1", 2, Role::Factor), var("z2", 2, Role::Factor)],
        vec![vec![], vec![0], vec![0]],
        vec![
            vec![0.5, 0.5],
            vec![1.0, 0.0, 0.0, 1.0], // z1 == u exactly
            vec![0.8, 0.2, 0.15, 0.85],
        ],
    )
    .unwrap();
    let joint = scm.joint().unwrap();
    let err = adjustment_estimate(&joint, "z2", "z1", &["u"], ZeroCellPolicy::Error).unwrap_err();
    match err {
        ScmError::EmptySupport(msg) => assert!(msg.contains("z1"), "cell named in {msg}"),
        other => panic!("expected EmptySupport, got {other}"),
    }
    let adj =
        adjustment_estimate(&joint, "z2", "z1", &["u"], ZeroCellPolicy::SkipAndRenormalize)
            .unwrap();
    assert!(!adj.skipped.is_empty(), "skips must be reported");
    for row in &adj.rows {
        let s: f64 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-12, "skip policy must renormalize, row sums to {s}");
    }
}

/// All distribution tables normalize.
#[test]
fn tables_normalize_everywhere() {
    for seed in 200..240u64 {
        let scm = random_scm(&RandomScmSpec::default(), seed).unwrap();
        let joint = scm.joint().unwrap();
        let sum: f64 = joint.probs.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
        let marg = joint.marginal(&["g0"]).unwrap();
        assert!((marg.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}
