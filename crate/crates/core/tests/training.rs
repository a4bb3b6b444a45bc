use std::collections::HashSet;

use ktup_core::corpus::{
    filter_to_fixpoint, sparsity_buckets, AlignmentMap, Interaction, InteractionSet, Role, Vocab,
};
use ktup_core::embedding::{EmbeddingSpace, Table};
use ktup_core::eval::{eval_by_sparsity, eval_rec, eval_rec_per_user, recommend, RecMetrics};
use ktup_core::explain::{aggregate_attention, explain_user};
use ktup_core::optim::OptimizerKind;
use ktup_core::rec::{PreferenceInduction, RecConfig, RecKind};
use ktup_core::synthetic::{planted, PlantedSpec};
use ktup_core::{fit, Dataset, Error, ModelKind, TrainConfig};

fn small() -> Dataset {
    planted(PlantedSpec {
        users_per_group: 10,
        pool: 20,
        items: 60,
        per_user: 10,
        ..PlantedSpec::default()
    })
    .unwrap()
    .dataset()
    .unwrap()
}

fn config(model: ModelKind) -> TrainConfig {
    TrainConfig {
        dim: 16,
        lr: 0.01,
        optimizer: OptimizerKind::Adam,
        max_epochs: 10,
        eval_every: 10,
        num_prefs: 3,
        ..TrainConfig::defaults_for(model)
    }
}

fn train(d: &Dataset, c: &TrainConfig) -> EmbeddingSpace<f32> {
    let shape = c.model.shape(c.dim, &d.counts(), c.num_prefs).unwrap();
    let space = EmbeddingSpace::init(&shape, c.seed).unwrap();
    fit(d, space, c, None).unwrap().space
}

fn soft(kind: RecKind) -> RecConfig {
    RecConfig {
        kind,
        induction: PreferenceInduction::soft(),
    }
}

#[test]
fn loss_falls_on_a_small_corpus() {
    let d = small();
    let c = config(ModelKind::Tup);
    let shape = c.model.shape(c.dim, &d.counts(), c.num_prefs).unwrap();
    let r = fit(&d, EmbeddingSpace::init(&shape, 1).unwrap(), &c, None).unwrap();
    assert_eq!(r.logs.len(), 10);
    assert!(r.logs[9].loss < r.logs[0].loss, "{} vs {}", r.logs[9].loss, r.logs[0].loss);
}

#[test]
fn zero_patience_stops_after_first_evaluation() {
    let d = small();
    let c = TrainConfig {
        patience: 0,
        eval_every: 2,
        max_epochs: 20,
        ..config(ModelKind::TransH)
    };
    let shape = c.model.shape(c.dim, &d.counts(), c.num_prefs).unwrap();
    let mut log = Vec::new();
    let r = fit(&d, EmbeddingSpace::init(&shape, 1).unwrap(), &c, Some(&mut log)).unwrap();
    assert_eq!(r.logs.len(), 2);
    assert_eq!(r.best_epoch, 2);
    assert_eq!(String::from_utf8(log).unwrap().lines().count(), 2);
}

#[test]
fn ktup_needs_alignments() {
    let mut d = small();
    d.alignments = AlignmentMap::default();
    let c = config(ModelKind::Ktup);
    let shape = c.model.shape(c.dim, &d.counts(), c.num_prefs).unwrap();
    let err = fit(&d, EmbeddingSpace::init(&shape, 1).unwrap(), &c, None).err().expect("ktup without alignments");
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn mismatched_parameter_file_is_rejected() {
    let d = small();
    let c = config(ModelKind::Tup);
    let other = ModelKind::Tup.shape(8, &d.counts(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.bin");
    EmbeddingSpace::<f32>::init(&other, 1).unwrap().save(&path).unwrap();
    let loaded = EmbeddingSpace::<f32>::load(&path).unwrap();
    let expected = c.model.shape(c.dim, &d.counts(), c.num_prefs).unwrap();
    assert!(matches!(loaded.check_shape(&expected), Err(Error::Format(_))));
    assert!(fit(&d, loaded, &c, None).is_err());
}

#[test]
fn single_sparsity_bucket_equals_overall() {
    let d = small();
    let space = train(&d, &config(ModelKind::Tup));
    let cfg = soft(RecKind::Tup);
    let per_user = eval_rec_per_user(&space, cfg, &d, Role::Test, 10);
    let b = sparsity_buckets(&d.interactions, 1).unwrap();
    let rows = eval_by_sparsity(&per_user, &b, 10);
    let all = eval_rec(&space, cfg, &d, Role::Test, 10);
    assert_eq!(rows.len(), 1);
    let close = |a: &RecMetrics, b: &RecMetrics| {
        a.users == b.users
            && [(a.precision, b.precision), (a.recall, b.recall), (a.f1, b.f1), (a.hit, b.hit), (a.ndcg, b.ndcg)]
                .iter()
                .all(|(x, y)| (x - y).abs() < 1e-12)
    };
    assert!(close(&rows[0], &all), "{:?} vs {all:?}", rows[0]);
}

#[test]
fn recommendations_skip_known_positives() {
    let d = small();
    let space = train(&d, &config(ModelKind::Tup));
    let train_items = d.interactions.items_by_user(Role::Train);
    let valid_items = d.interactions.items_by_user(Role::Valid);
    for u in 0..d.interactions.num_users() {
        let recs = recommend(&space, soft(RecKind::Tup), &d, u, 10);
        assert_eq!(recs.len(), 10);
        for (i, _) in recs {
            assert!(!train_items[u].contains(&i) && !valid_items[u].contains(&i));
        }
    }
}

#[test]
fn explain_follows_the_ranking_and_names_relations() {
    let d = small();
    let space = train(&d, &config(ModelKind::Ktup));
    let cfg = soft(RecKind::Ktup);
    let relations: Vec<String> = d.relation_vocab().unwrap().names().to_vec();
    for u in [0, 13, 29] {
        let alpha = aggregate_attention(&space, cfg, &d, u).unwrap();
        assert_eq!(alpha.len(), relations.len());
        assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let rationales = explain_user(&space, cfg, &d, u, relations.len(), 6, 4).unwrap();
        let order: Vec<usize> = recommend(&space, cfg, &d, u, 6).into_iter().map(|(i, _)| i).collect();
        let explained: Vec<usize> = rationales.iter().map(|r| d.interactions.items().index(&r.item).unwrap()).collect();
        assert_eq!(explained, order);
        for r in &rationales {
            let names: HashSet<&str> = r.preferences.iter().map(|p| p.name.as_str()).collect();
            assert_eq!(names, relations.iter().map(String::as_str).collect());
            for p in &r.preferences {
                assert_eq!(relations[p.index], p.name);
                assert_eq!(p.weight, alpha[p.index]);
            }
            assert!(r.preferences.windows(2).all(|w| w[0].weight >= w[1].weight));
            assert!(r.support.len() <= 4);
        }
    }
}

#[test]
fn explain_rejects_empty_history_and_plain_factorisation() {
    let users = Vocab::from_ordered(vec!["a".into(), "b".into()]);
    let items = Vocab::from_ordered(vec!["x".into(), "y".into(), "z".into()]);
    let rec = |user, item, role| Interaction {
        user,
        item,
        role: Some(role),
    };
    let interactions = InteractionSet::from_parts(
        vec![rec(0, 0, Role::Train), rec(0, 1, Role::Train), rec(1, 2, Role::Test)],
        users,
        items,
    )
    .unwrap();
    let d = Dataset {
        interactions,
        triples: None,
        alignments: AlignmentMap::default(),
    };
    let shape = ModelKind::Tup.shape(4, &d.counts(), 2).unwrap();
    let space = EmbeddingSpace::<f32>::init(&shape, 1).unwrap();
    let err = explain_user(&space, soft(RecKind::Tup), &d, 1, 2, 2, 2).unwrap_err();
    assert!(err.to_string().contains("no train interactions"), "{err}");

    let anon = explain_user(&space, soft(RecKind::Tup), &d, 0, 2, 1, 2).unwrap();
    assert!(anon[0].preferences[0].name.starts_with("pref-"));

    let mf = ModelKind::Bprmf.shape(4, &d.counts(), 0).unwrap();
    let space = EmbeddingSpace::<f32>::init(&mf, 1).unwrap();
    assert!(matches!(aggregate_attention(&space, soft(RecKind::Bprmf), &d, 0), Err(Error::Config(_))));
    assert_eq!(space.table(Table::Pref).rows(), 0);
}

#[test]
fn frequency_filter_cascades() {
    let pairs: Vec<(String, String)> = [
        ("u1", "a"),
        ("u1", "b"),
        ("u2", "a"),
        ("u2", "b"),
        ("u3", "a"),
        ("u3", "c"),
        ("u4", "d"),
        ("u4", "e"),
    ]
    .iter()
    .map(|(u, i)| (u.to_string(), i.to_string()))
    .collect();
    let mut kept = filter_to_fixpoint(pairs, 2, 2);
    kept.sort();
    let expected: Vec<(String, String)> = [("u1", "a"), ("u1", "b"), ("u2", "a"), ("u2", "b")]
        .iter()
        .map(|(u, i)| (u.to_string(), i.to_string()))
        .collect();
    assert_eq!(kept, expected);
}
