mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sfp_core::baseline::{brute_force_opt, gw_primal_dual, OracleBudget};
use sfp_core::cells::{assign_cells, check_cell_property, enforce_cell_property, h_function, CellParams};
use sfp_core::decomposition::{make_portal_respecting, Decomposition, DecompositionParams};
use sfp_core::dp::{canonical_partition, extract_solution, run_dp, DpCaps, DpContext, Entry};
use sfp_core::forest::{make_net_respecting, Forest};
use sfp_core::instance::{auxiliary_subinstance, is_feasible, rescale_instance, split_critical, Instance};
use sfp_core::metric::{greedy_net, verify_packing_cover, MetricSpace, NetHierarchy, PointId};

fn hierarchy(m: &MetricSpace) -> NetHierarchy {
    NetHierarchy::build(m, 4, NetHierarchy::auto_num_heights(m, 4)).unwrap()
}

fn small() -> impl Strategy<Value = (MetricSpace, Instance)> {
    (0u64..10_000, 1usize..=3, 0usize..=4).prop_map(|(seed, p, x)| common::instance(seed, p, x, 77))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn greedy_net_is_a_net((m, _) in small(), rho_units in 1i64..12) {
        let z: Vec<PointId> = m.points().collect();
        let rho = rho_units * m.scale();
        prop_assert!(verify_packing_cover(&m, &greedy_net(&m, &z, rho), &z, rho, None));
    }

    #[test]
    fn nets_are_nested((m, _) in small()) {
        let h = hierarchy(&m);
        for i in 1..=h.top() as i64 {
            let lower = h.net(i - 1).unwrap();
            prop_assert!(h.net(i).unwrap().iter().all(|p| lower.contains(p)));
        }
    }

    #[test]
    fn gw_within_twice_optimum((m, inst) in small()) {
        let opt = common::opt_by_subsets(&m, &inst);
        let gw = gw_primal_dual(&m, &inst);
        prop_assert!(is_feasible(&gw, &inst));
        prop_assert!(gw.weight(&m) as f64 <= (2.0 + 1e-9) * opt as f64);
        prop_assert_eq!(brute_force_opt(&m, &inst, None, &OracleBudget::default()).unwrap().weight(&m), opt);
    }

    #[test]
    fn net_respecting_keeps_connectivity((m, inst) in small(), eps in 0.1f64..0.9) {
        let h = hierarchy(&m);
        let f = gw_primal_dual(&m, &inst);
        let g = make_net_respecting(&f, &m, &h, eps);
        let vs: Vec<PointId> = f.vertices().into_iter().collect();
        for &a in &vs {
            for &b in &vs {
                prop_assert_eq!(f.connects(a, b), g.connects(a, b));
            }
        }
    }

    #[test]
    fn rescaled_solutions_lift((m, inst) in small(), eps in 0.1f64..0.9) {
        let r = rescale_instance(&m, &inst, eps).unwrap();
        let f = gw_primal_dual(&r.metric, &r.instance);
        prop_assert!(is_feasible(&r.lift(&f, &inst), &inst));
    }

    #[test]
    fn split_accounts_for_every_pair(
        (m, inst) in small(), pick in 0usize..100, lambda in 0u32..2, hh in 0.0f64..0.5,
    ) {
        let h = hierarchy(&m);
        let i = pick % h.top();
        let net = h.net(i as i64).unwrap();
        let u = net[pick % net.len()];
        let (i1, i2) = split_critical(&m, &h, &inst, i as i64, u, lambda, hh, 0.0625).unwrap();
        prop_assert!(i1.len() + i2.len() >= inst.len());
        prop_assert!(i1.len() + i2.len() <= 2 * inst.len());
        let mut f = brute_force_opt(&m, &i1, None, &OracleBudget::default()).unwrap();
        f.extend(&brute_force_opt(&m, &i2, None, &OracleBudget::default()).unwrap());
        prop_assert!(is_feasible(&f, &inst));
    }

    #[test]
    fn auxiliary_monotone_inside_ball((m, inst) in small(), pick in 0usize..100, t in 1.0f64..6.0) {
        let h = hierarchy(&m);
        let i = pick % h.top();
        let net = h.net(i as i64).unwrap();
        let u = net[pick % net.len()];
        let r = m.pow(4, i as i64) as f64 * t;
        let small = auxiliary_subinstance(&m, &h, &inst, i as i64, u, t, 0.0625).unwrap();
        let large = auxiliary_subinstance(&m, &h, &inst, i as i64, u, t + 1.0, 0.0625).unwrap();
        for p in inst.pairs().iter().filter(|p| small.pairs().contains(p)) {
            if m.d(u, p.a) as f64 <= r && m.d(u, p.b) as f64 <= r {
                prop_assert!(large.pairs().contains(p));
            }
        }
    }

    #[test]
    fn decomposition_partitions((m, _) in small(), seed in 0u64..1000) {
        let h = hierarchy(&m);
        let d = Decomposition::build(&m, &h, &DecompositionParams::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for height in 0..=d.root_height() {
            let mut all: Vec<PointId> = d.at_height(height).flat_map(|c| c.members.clone()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, m.points().collect::<Vec<_>>());
        }
        for c in &d.clusters {
            if !c.children.is_empty() {
                let mut kids: Vec<PointId> = c.children.iter().flat_map(|&k| d.cluster(k).members.clone()).collect();
                kids.sort_unstable();
                let mut own = c.members.clone();
                own.sort_unstable();
                prop_assert_eq!(kids, own);
            }
        }
    }

    #[test]
    fn portal_rerouting_is_strict((m, inst) in small(), seed in 0u64..1000) {
        let h = hierarchy(&m);
        let d = Decomposition::build(&m, &h, &DecompositionParams::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let f = make_portal_respecting(&gw_primal_dual(&m, &inst), &m, &d);
        prop_assert!(d.first_portal_violation(&f).is_none());
        prop_assert!(is_feasible(&f, &inst));
    }

    #[test]
    fn enforcement_clears_violations((m, inst) in small(), seed in 0u64..1000) {
        let h = hierarchy(&m);
        let p = DecompositionParams::default();
        let d = Decomposition::build(&m, &h, &p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let cells = CellParams::from_eps(p.eps, p.k, p.s, h.top()).unwrap();
        let f = gw_primal_dual(&m, &inst);
        let comps = f.components(&m).len();
        let (g, report) = enforce_cell_property(&f, &m, &d, &cells);
        prop_assert!(report.added_edges + 1 <= comps.max(1));
        let a = assign_cells(&g, &m, &d, &cells);
        prop_assert!(check_cell_property(&g, &m, &d, |c| a.clusters[c].bas.clone()).is_empty());
        prop_assert!(check_cell_property(&g, &m, &d, |c| a.clusters[c].eff()).is_empty());
    }

    #[test]
    fn h_sandwich(s in 2u32..9, a1 in 0i64..4, gap in 0i64..7, i in -4i64..12, l in 1i64..1_000_000_000_000) {
        let p = CellParams::with_exponents(s, 12, a1 + gap, a1).unwrap();
        let lo = h_function(i, l, &p, 1_000_000).unwrap();
        let hi = h_function(i + 1, l, &p, 1_000_000).unwrap();
        prop_assert!(hi / num_rational::Ratio::from_integer(s as i128) <= lo);
        prop_assert!(lo <= hi);
    }

    #[test]
    fn canonical_partition_is_idempotent(parts in prop::collection::vec(prop::collection::btree_set(0usize..20, 1..4), 0..5)) {
        let v: Vec<Vec<usize>> = parts.into_iter().map(|s| s.into_iter().collect()).collect();
        let once = canonical_partition(v);
        prop_assert_eq!(canonical_partition(once.clone()), once);
    }

    #[test]
    fn forest_json_roundtrip((m, inst) in small()) {
        let f = gw_primal_dual(&m, &inst);
        prop_assert_eq!(Forest::from_json(&f.to_json()).unwrap(), f);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn dp_value_matches_extraction(seed in 0u64..10_000, d_seed in 0u64..1000) {
        let (m, inst) = common::instance(seed, 2, 2, 78);
        let h = hierarchy(&m);
        let p = DecompositionParams::default();
        let d = Decomposition::build(&m, &h, &p, &mut ChaCha8Rng::seed_from_u64(d_seed)).unwrap();
        let cells = CellParams::from_eps(p.eps, p.k, p.s, h.top()).unwrap();
        let ctx = DpContext::new(&m, &h, &d, &inst, &cells, DpCaps::default());
        let run = run_dp(&ctx, None);
        if let Some(v) = run.value {
            let f = extract_solution(&run, &d).unwrap();
            prop_assert_eq!(f.weight(&m), v);
            prop_assert!(is_feasible(&f, &inst) && f.is_acyclic());
            let fin = Entry::final_entry(d.root);
            prop_assert_eq!(run.eval_value(&fin), run.eval_value(&fin));
            prop_assert!(v >= common::opt_by_subsets(&m, &inst));
        }
    }

    #[test]
    fn raising_structural_caps_never_hurts(seed in 0u64..10_000, d_seed in 0u64..1000) {
        let (m, inst) = common::instance(seed, 2, 1, 79);
        let h = hierarchy(&m);
        let p = DecompositionParams::default();
        let d = Decomposition::build(&m, &h, &p, &mut ChaCha8Rng::seed_from_u64(d_seed)).unwrap();
        let cells = CellParams::from_eps(p.eps, p.k, p.s, h.top()).unwrap();
        let base = DpCaps { r_cap: 3, rho_cap: 8, edge_cap: 4, max_entries: 100_000, max_tuples: 10_000_000 };
        let more = DpCaps { r_cap: 4, rho_cap: 12, edge_cap: 6, ..base };
        let a = run_dp(&DpContext::new(&m, &h, &d, &inst, &cells, base), None);
        let b = run_dp(&DpContext::new(&m, &h, &d, &inst, &cells, more), None);
        let free = |s: &sfp_core::dp::DpStats| s.clusters.iter().all(|c| !c.tuple_cap_hit && !c.beam_cap_hit);
        if free(&a.stats) && free(&b.stats) {
            if let Some(va) = a.value {
                prop_assert!(b.value.is_some_and(|vb| vb <= va));
            }
        }
    }
}
