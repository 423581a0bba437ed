use vfgl_core::graph::{split_features, synth_sbm, FeatureSplit, Graph, SbmSpec};
use vfgl_core::manipulation::{na2_pipeline, Na2Run, ShadowConfig, ShadowLoss};
use vfgl_core::protocol::{train_vfgl, ManipulationKind, TrainConfig};

fn benchmark(seed: u64) -> (Graph, FeatureSplit) {
    let graph = synth_sbm(SbmSpec::BENCHMARK, seed).unwrap();
    let split = split_features(&graph, 2, seed).unwrap();
    (graph, split)
}

fn na2_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        malicious: Some(0),
        manipulation: ManipulationKind::Na2,
        ..TrainConfig::default()
    }
}

fn pipeline(seed: u64, config: TrainConfig) -> Na2Run {
    let (graph, split) = benchmark(seed);
    na2_pipeline(
        &graph,
        &split,
        config,
        &ShadowConfig {
            seed,
            ..ShadowConfig::default()
        },
    )
    .unwrap()
}

#[test]
fn pipeline_issues_exactly_one_query() {
    let run = pipeline(0, na2_config(0));
    assert_eq!(run.federation.server.query_counter, vec![1, 0]);
    assert!(!run.plan.is_noop());
}

#[test]
fn manipulation_touches_only_candidates_and_chosen_columns() {
    let run = pipeline(1, na2_config(1));
    let record = run.federation.manipulation.as_ref().unwrap();
    let now = &run.federation.clients[0].features;
    let candidates = run.plan.candidates();
    let features = run.plan.target_features();
    let mut changed = 0;
    for ((r, c), &v) in now.indexed_iter() {
        if v != record.original[[r, c]] {
            assert!(candidates.contains(&r) && features.contains(&c), "({r}, {c})");
            changed += 1;
        }
    }
    assert!(changed > 0 && changed <= candidates.len() * features.len());
    assert!(candidates.iter().all(|c| run.federation.train_nodes.contains(c)));
    assert_eq!(record.epoch, 15);
}

#[test]
fn zero_gamma_degenerates_to_clean_training() {
    let run = pipeline(
        2,
        TrainConfig {
            gamma: 0.0,
            ..na2_config(2)
        },
    );
    assert!(run.plan.is_noop());
    let (graph, split) = benchmark(2);
    let clean = train_vfgl(
        &graph,
        &split,
        TrainConfig {
            seed: 2,
            malicious: Some(0),
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert_eq!(run.federation.clients[0].features, clean.clients[0].features);
    assert_eq!(run.federation.server.mlp, clean.server.mlp);
    assert_eq!(run.federation.server.query_counter, vec![1, 0]);
}

#[test]
fn late_or_missing_hooks_are_rejected() {
    let (graph, split) = benchmark(0);
    let shadow = ShadowConfig::default();
    let late = TrainConfig {
        tau: 200,
        ..na2_config(0)
    };
    assert!(na2_pipeline(&graph, &split, late, &shadow).is_err());
    let clean = TrainConfig {
        manipulation: ManipulationKind::None,
        ..na2_config(0)
    };
    assert!(na2_pipeline(&graph, &split, clean, &shadow).is_err());
}

#[test]
fn shadow_fidelity_across_seeds() {
    let mut fidelity = 0;
    for seed in 0..5 {
        let s = pipeline(seed, na2_config(seed)).shadow;
        if s.final_mse <= 0.5 * s.initial_mse && s.final_agreement >= s.initial_agreement {
            fidelity += 1;
        }
    }
    assert!(fidelity >= 4, "shadow fidelity held in {fidelity}/5 seeds");
}

#[test]
fn plan_path_is_the_modal_path_at_the_hook() {
    let run = pipeline(4, na2_config(4));
    let record = run.federation.manipulation.as_ref().unwrap();
    let total: usize = run.plan.path_counts.iter().map(|p| p.per_class.iter().sum::<usize>()).sum();
    assert_eq!(total, run.federation.train_nodes.len());
    let top = run
        .plan
        .path_counts
        .iter()
        .map(|p| p.per_class.iter().sum::<usize>())
        .max()
        .unwrap();
    let chosen = run.plan.path_counts.iter().find(|p| &p.path == run.plan.target_path()).unwrap();
    assert_eq!(chosen.per_class.iter().sum::<usize>(), top);
    assert_eq!(record.plan, run.plan);
}

#[test]
fn cross_entropy_shadow_uses_training_labels() {
    let (graph, split) = benchmark(3);
    let run = na2_pipeline(
        &graph,
        &split,
        na2_config(3),
        &ShadowConfig {
            loss: ShadowLoss::Ce,
            seed: 3,
            ..ShadowConfig::default()
        },
    )
    .unwrap();
    let curve = &run.shadow.loss_curve;
    assert_eq!(curve.len(), 201);
    assert!(curve.last().unwrap() < &curve[0]);
    assert_eq!(run.federation.server.query_counter[0], 1);
}
