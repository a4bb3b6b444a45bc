use std::collections::{HashMap, HashSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ktup_core::corpus::{
    balanced_cuts, filter_to_fixpoint, relation_categories, AlignmentMap, InteractionSet, Role, Triple, Vocab,
};
use ktup_core::embedding::{ConstraintPolicy, EmbeddingSpace, Shape, Table};
use ktup_core::eval::{kgc_ranks, top_n, user_metrics};
use ktup_core::grad::Gradients;
use ktup_core::kgc::{kgc_loss, normalize, project, KgcConfig, KgcVariant};
use ktup_core::linalg::{dot, norm2, softmax, softplus};
use ktup_core::optim::{Optimizer, OptimizerKind};
use ktup_core::rec::{gumbel_noise, induce_hard, induce_soft, preference_logits, NoiseKind, PreferenceBasis};

fn raw_pairs() -> impl Strategy<Value = Vec<(String, String)>> {
    prop::collection::vec((0..12u8, 0..15u8), 0..120).prop_map(|v| {
        let set: std::collections::BTreeSet<(String, String)> =
            v.into_iter().map(|(u, i)| (format!("u{u}"), format!("i{i}"))).collect();
        set.into_iter().collect()
    })
}

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, dim)
}

fn counts(pairs: &[(String, String)]) -> (HashMap<&str, usize>, HashMap<&str, usize>) {
    let (mut u, mut i) = (HashMap::new(), HashMap::new());
    for (a, b) in pairs {
        *u.entry(a.as_str()).or_default() += 1;
        *i.entry(b.as_str()).or_default() += 1;
    }
    (u, i)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fixpoint_filter_is_idempotent(pairs in raw_pairs(), mu in 0usize..5, mi in 0usize..5) {
        let once = filter_to_fixpoint(pairs, mu, mi);
        let (uc, ic) = counts(&once);
        prop_assert!(uc.values().all(|&c| c >= mu));
        prop_assert!(ic.values().all(|&c| c >= mi));
        prop_assert_eq!(filter_to_fixpoint(once.clone(), mu, mi), once);
    }

    #[test]
    fn split_partitions_every_user(pairs in raw_pairs(), seed in any::<u64>()) {
        prop_assume!(!pairs.is_empty());
        let set = InteractionSet::from_raw_pairs(pairs.clone(), 0, 0).unwrap().split((7, 1, 2), seed).unwrap();
        let mut seen = HashSet::new();
        for role in [Role::Train, Role::Valid, Role::Test] {
            for p in set.pairs(role) {
                prop_assert!(seen.insert(p), "pair {:?} in two parts", p);
            }
        }
        prop_assert_eq!(seen.len(), pairs.len());
        prop_assert!(set.records().iter().all(|r| r.role.is_some()));
    }

    #[test]
    fn vocab_is_a_bijection(ids in prop::collection::vec("[a-z]{1,4}", 0..40)) {
        let v = Vocab::from_unsorted(ids.iter().map(String::as_str));
        let distinct: HashSet<&String> = ids.iter().collect();
        prop_assert_eq!(v.len(), distinct.len());
        for k in 0..v.len() {
            prop_assert_eq!(v.index(v.name(k)), Some(k));
        }
        for id in &ids {
            prop_assert_eq!(v.name(v.index(id).unwrap()), id.as_str());
        }
    }

    #[test]
    fn alignments_stay_one_to_one(raw in prop::collection::vec((0..10u8, 0..10u8), 0..30)) {
        let items = Vocab::from_unsorted((0..8).map(|i| format!("i{i}")));
        let ents = Vocab::from_unsorted((0..8).map(|e| format!("e{e}")));
        let raw: Vec<(String, String)> = raw.iter().map(|(i, e)| (format!("i{i}"), format!("e{e}"))).collect();
        let (map, _) = AlignmentMap::from_raw(&raw, &items, &ents);
        let mut fwd = HashSet::new();
        let mut back = HashSet::new();
        for &(i, e) in map.pairs() {
            prop_assert!(fwd.insert(i) && back.insert(e));
            prop_assert_eq!(map.entity_of(i), Some(e));
            prop_assert_eq!(map.item_of(e), Some(i));
        }
    }

    #[test]
    fn relation_categories_ignore_triple_order(
        triples in prop::collection::vec((0..6usize, 0..6usize, 0..3usize), 1..40)
            .prop_map(|v| v.into_iter().map(|(h, t, r)| Triple::new(h, t, r)).collect::<Vec<_>>())
            .prop_shuffle(),
        seed in any::<u64>(),
    ) {
        let base = relation_categories(&triples, 3, 1.5);
        let mut shuffled = triples.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(relation_categories(&shuffled, 3, 1.5), base);
    }

    #[test]
    fn projection_is_idempotent_and_orthogonal(v in vector(6), w in vector(6)) {
        prop_assume!(norm2(&w) > 1e-3);
        let (n, _) = normalize(&w);
        let p = project(&v, &n);
        prop_assert!(dot(&p, &n).abs() < 1e-12);
        let pp = project(&p, &n);
        for (a, b) in p.iter().zip(&pp) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hinge_loss_grows_with_margin(seed in any::<u64>(), m1 in 0.01..3.0f64, extra in 0.0..3.0f64) {
        let shape = Shape::new(4)
            .with(Table::Entity, 5)
            .with(Table::Relation, 2)
            .with(Table::RelationNorm, 2);
        let space = EmbeddingSpace::<f64>::init(&shape, seed).unwrap();
        let pos = Triple::new(0, 1, 0);
        let neg = Triple::new(0, 3, 0);
        let lo = KgcConfig::new(KgcVariant::TransH, m1).unwrap();
        let hi = KgcConfig::new(KgcVariant::TransH, m1 + extra).unwrap();
        let (a, _) = kgc_loss(&space, &pos, &neg, &lo);
        let (b, _) = kgc_loss(&space, &pos, &neg, &hi);
        prop_assert!(a >= 0.0 && b >= a);
    }

    #[test]
    fn bpr_loss_falls_as_the_gap_grows(x in -30.0..30.0f64, d in 0.0..10.0f64) {
        prop_assert!(softplus(-(x + d)) <= softplus(-x));
        prop_assert!(softplus(-x) > 0.0);
    }

    #[test]
    fn attention_lies_on_the_simplex(u in vector(5), i in vector(5), prefs in prop::collection::vec(vector(5), 1..6), seed in any::<u64>(), tau in 0.05..5.0f64) {
        let basis = PreferenceBasis { normal: prefs.clone(), translation: prefs };
        let logits = preference_logits(&u, &i, &basis);
        let soft = induce_soft(&logits, &basis);
        prop_assert!((soft.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(soft.weights.iter().all(|&a| (0.0..=1.0).contains(&a)));
        let noise = gumbel_noise(logits.len(), NoiseKind::Uniform, &mut ChaCha8Rng::seed_from_u64(seed));
        let hard = induce_hard(&logits, tau, &noise, &basis);
        prop_assert_eq!(hard.weights.iter().filter(|&&a| a == 1.0).count(), 1);
        prop_assert_eq!(hard.weights.iter().sum::<f64>(), 1.0);
        prop_assert!((hard.surrogate.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let s = softmax(&logits, tau);
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ranking_metrics_are_consistent(
        ranked in Just((0..30usize).collect::<Vec<_>>()).prop_shuffle(),
        relevant in prop::collection::hash_set(0..30usize, 1..10),
        n in 1usize..15,
    ) {
        let top: Vec<usize> = ranked[..n].to_vec();
        let m = user_metrics(&top, &relevant, n);
        for x in [m.precision, m.recall, m.f1, m.hit, m.ndcg] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&x));
        }
        let any_hit = if m.precision > 0.0 { 1.0 } else { 0.0 };
        prop_assert!(m.hit >= any_hit);
        let f1 = if m.precision + m.recall > 0.0 { 2.0 * m.precision * m.recall / (m.precision + m.recall) } else { 0.0 };
        prop_assert!((m.f1 - f1).abs() < 1e-12);
        let hits = top.iter().filter(|i| relevant.contains(i)).count();
        prop_assert!((m.precision - hits as f64 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn top_n_is_a_sorted_prefix_and_order_preserving(
        keys in prop::collection::vec(-5i32..5, 1..40),
        excluded in prop::collection::hash_set(0..40usize, 0..10),
        n in 0usize..20,
    ) {
        let keys: Vec<f64> = keys.into_iter().map(f64::from).collect();
        let got = top_n(&keys, |i| excluded.contains(&i), n);
        let mut all: Vec<usize> = (0..keys.len()).filter(|i| !excluded.contains(i)).collect();
        all.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
        all.truncate(n);
        prop_assert_eq!(&got, &all);
        let shifted: Vec<f64> = keys.iter().map(|k| 3.0 * k + 7.0).collect();
        prop_assert_eq!(top_n(&shifted, |i| excluded.contains(&i), n), got);
    }

    #[test]
    fn filtered_rank_never_exceeds_raw(seed in any::<u64>(), facts in prop::collection::hash_set((0..6usize, 0..6usize, 0..2usize), 1..20)) {
        let shape = Shape::new(4)
            .with(Table::Entity, 6)
            .with(Table::Relation, 2)
            .with(Table::RelationNorm, 2);
        let space = EmbeddingSpace::<f32>::init(&shape, seed).unwrap();
        let triples: Vec<Triple> = facts.into_iter().map(|(h, t, r)| Triple::new(h, t, r)).collect();
        let known: HashSet<Triple> = triples.iter().copied().collect();
        for r in kgc_ranks(&space, &KgcConfig::default(), &triples, &known) {
            prop_assert!(r.filtered >= 1 && r.filtered <= r.raw && r.raw <= 6);
        }
    }

    #[test]
    fn optimizer_leaves_untouched_rows_bitwise(
        seed in any::<u64>(),
        rows in prop::collection::btree_set(0..8usize, 0..8),
        kind in prop_oneof![Just(OptimizerKind::Sgd), Just(OptimizerKind::Adagrad), Just(OptimizerKind::Adam)],
    ) {
        let shape = Shape::new(3).with(Table::User, 8).with(Table::PrefNorm, 8);
        let mut space = EmbeddingSpace::<f32>::init(&shape, seed).unwrap();
        let before = space.clone();
        let mut g = Gradients::new();
        for &r in &rows {
            g.add(Table::User, r, 1.0, &[0.3, -0.1, 0.2]);
        }
        let mut opt = Optimizer::new(kind, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..3 {
            opt.step(&mut space, &g);
            for (t, r) in g.touched() {
                space.enforce_row(t, r, ConstraintPolicy::FULL, &mut rng);
            }
        }
        for r in 0..8 {
            if !rows.contains(&r) {
                prop_assert_eq!(space.table(Table::User).row(r), before.table(Table::User).row(r));
            }
            prop_assert_eq!(space.table(Table::PrefNorm).row(r), before.table(Table::PrefNorm).row(r));
        }
    }

    #[test]
    fn constraints_bound_norms(seed in any::<u64>(), scale in 0.1..10.0f64) {
        let shape = Shape::new(5).with(Table::Entity, 6).with(Table::RelationNorm, 3);
        let mut space = EmbeddingSpace::<f64>::init(&shape, seed).unwrap();
        for t in [Table::Entity, Table::RelationNorm] {
            for r in 0..space.table(t).rows() {
                let v: Vec<f64> = space.row_f64(t, r).iter().map(|x| x * scale).collect();
                space.table_mut(t).set_row_f64(r, &v);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        space.enforce_constraints(ConstraintPolicy::FULL, &mut rng);
        for r in 0..6 {
            prop_assert!(norm2(&space.row_f64(Table::Entity, r)) <= 1.0 + 1e-12);
        }
        for r in 0..3 {
            prop_assert!((norm2(&space.row_f64(Table::RelationNorm, r)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn balanced_cuts_match_brute_force(mut c in prop::collection::vec(1u64..=20, 4..11)) {
        c.sort_unstable_by(|a, b| b.cmp(a));
        let k = 4;
        let cost = |cuts: &[usize]| {
            let mut bounds = vec![0];
            bounds.extend_from_slice(cuts);
            bounds.push(c.len());
            bounds.windows(2).map(|w| {
                let s: u64 = c[w[0]..w[1]].iter().sum();
                (s * s) as u128
            }).sum::<u128>()
        };
        let mut best = u128::MAX;
        let n = c.len();
        for a in 1..n {
            for b in a + 1..n {
                for d in b + 1..n {
                    best = best.min(cost(&[a, b, d]));
                }
            }
        }
        let cuts = balanced_cuts(&c, k);
        prop_assert_eq!(cuts.len(), k - 1);
        prop_assert!(cuts.windows(2).all(|w| w[0] < w[1]) && cuts[0] > 0 && cuts[k - 2] < n);
        prop_assert_eq!(cost(&cuts), best);
    }
}
