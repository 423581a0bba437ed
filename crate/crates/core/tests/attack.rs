use ndarray::Array2;
use rand::Rng as _;
use vfgl_core::attack::{
    apply_flips, check_perturbation, evaluate_attack, fga_attack, genetic_attack, gradargmax_attack, run_attack,
    select_targets, AttackBudget, AttackKind, AttackSetup, FlipScope, GeneticConfig, Surrogate,
};
use vfgl_core::graph::{split_features, synth_sbm, SbmSpec};
use vfgl_core::manipulation::{build_shadow, ShadowConfig, ShadowModel};
use vfgl_core::metrics::aq;
use vfgl_core::models::gradcheck::random_instance;
use vfgl_core::models::{argmax, softmax_rows, Adjacency, ModelKind, Parameters};
use vfgl_core::protocol::{train_vfgl, Federation, TrainConfig};
use vfgl_core::rng::stream;

/// A shadow fitted to random soft targets on a small random graph.
fn tiny_shadow(nodes: usize, seed: u64) -> (ShadowModel, Adjacency, Array2<f64>) {
    let inst = random_instance(ModelKind::Gcn, nodes, 5, seed);
    let adj = Adjacency::new(inst.adjacency);
    let mut rng = stream(seed, 77);
    let logits = Array2::from_shape_simple_fn((nodes, 3), || rng.random_range(-2.0..2.0));
    let rows: Vec<usize> = (0..nodes).collect();
    let shadow = build_shadow(
        &inst.model,
        &adj,
        &inst.features,
        &rows,
        &softmax_rows(&logits),
        &vec![0; nodes],
        &ShadowConfig {
            epochs: 30,
            seed,
            ..ShadowConfig::default()
        },
    )
    .unwrap();
    (shadow, adj, inst.features)
}

fn loss_at(s: &ShadowModel, raw: &Array2<f64>, x: &Array2<f64>, t: usize, label: usize) -> f64 {
    s.loss_gradient(&Adjacency::new(raw.clone()), x, t, label).unwrap().0
}

/// First-order gain of flipping each pair, from a symmetric central
/// difference of the loss along `e_ij + e_ji`, best first.
fn directional_ranking(s: &ShadowModel, adj: &Adjacency, x: &Array2<f64>, t: usize) -> Vec<(f64, (usize, usize))> {
    let label = s.predict(adj, x, t).unwrap();
    let n = adj.len();
    let h = 1e-6;
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let mut up = adj.raw().clone();
            let mut down = adj.raw().clone();
            for (a, b) in [(i, j), (j, i)] {
                up[[a, b]] += h;
                down[[a, b]] -= h;
            }
            let d = (loss_at(s, &up, x, t, label) - loss_at(s, &down, x, t, label)) / (2.0 * h);
            let gain = if adj.raw()[[i, j]] == 0.0 { d } else { -d };
            if gain > 0.0 {
                out.push((gain, (i, j)));
            }
        }
    }
    out.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    out
}

/// Exact loss after each single flip, best first.
fn exact_ranking(s: &ShadowModel, adj: &Adjacency, x: &Array2<f64>, t: usize) -> Vec<(f64, (usize, usize))> {
    let label = s.predict(adj, x, t).unwrap();
    let n = adj.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let flipped = apply_flips(adj.raw(), &[(i, j)]);
            out.push((loss_at(s, &flipped, x, t, label), (i, j)));
        }
    }
    out.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    out
}

#[test]
fn fga_matches_directional_oracle_on_small_graphs() {
    for seed in 0..12u64 {
        let n = 4 + seed as usize % 7;
        let (s, adj, x) = tiny_shadow(n, seed);
        for t in 0..n {
            let oracle = directional_ranking(&s, &adj, &x, t);
            let flips = fga_attack(&s, &adj, &x, t, 1, FlipScope::Full).unwrap();
            match oracle.first() {
                Some(&(_, best)) => assert_eq!(flips, vec![best], "seed {seed} target {t}"),
                None => assert!(flips.is_empty()),
            }
        }
    }
}

#[test]
fn crafted_four_node_graph_picks_the_loss_maximizing_flip() {
    // Path 0-1-2-3 with the target at one end.
    let mut raw = Array2::zeros((4, 4));
    for i in 0..3 {
        raw[[i, i + 1]] = 1.0;
        raw[[i + 1, i]] = 1.0;
    }
    let adj = Adjacency::new(raw);
    let inst = random_instance(ModelKind::Gcn, 4, 3, 11);
    let x = ndarray::array![[1.0, 0.0, 0.0], [0.9, 0.1, 0.0], [0.0, 1.0, 0.2], [0.0, 0.1, 1.0]];
    let targets = softmax_rows(&ndarray::array![
        [3.0, 0.0, 0.0],
        [2.0, 0.5, 0.0],
        [0.0, 3.0, 0.0],
        [0.0, 0.0, 3.0]
    ]);
    let s = build_shadow(
        &inst.model,
        &adj,
        &x,
        &[0, 1, 2, 3],
        &targets,
        &[0; 4],
        &ShadowConfig::default(),
    )
    .unwrap();
    let exact = exact_ranking(&s, &adj, &x, 0);
    assert_eq!(fga_attack(&s, &adj, &x, 0, 1, FlipScope::Full).unwrap(), vec![exact[0].1]);
    let top2: Vec<_> = exact[..2].iter().map(|e| e.1).collect();
    assert_eq!(gradargmax_attack(&s, &adj, &x, 0, 2, FlipScope::Full).unwrap(), top2);
}

#[test]
fn gradargmax_takes_the_top_of_one_gradient() {
    for seed in 0..6u64 {
        let (s, adj, x) = tiny_shadow(7, 50 + seed);
        for t in [0, 3, 6] {
            let oracle = directional_ranking(&s, &adj, &x, t);
            let two = gradargmax_attack(&s, &adj, &x, t, 2, FlipScope::Full).unwrap();
            let expected: Vec<_> = oracle.iter().take(2).map(|e| e.1).collect();
            assert_eq!(two, expected);
            let one = gradargmax_attack(&s, &adj, &x, t, 1, FlipScope::Full).unwrap();
            assert_eq!(one, fga_attack(&s, &adj, &x, t, 1, FlipScope::Full).unwrap());
        }
    }
}

#[test]
fn budgets_bound_the_perturbation() {
    let (s, adj, x) = tiny_shadow(8, 3);
    assert!(fga_attack(&s, &adj, &x, 2, 0, FlipScope::Full).unwrap().is_empty());
    for delta in 1..4 {
        for t in 0..8 {
            for flips in [
                fga_attack(&s, &adj, &x, t, delta, FlipScope::Full).unwrap(),
                gradargmax_attack(&s, &adj, &x, t, delta, FlipScope::Full).unwrap(),
                fga_attack(&s, &adj, &x, t, delta, FlipScope::Incident).unwrap(),
            ] {
                assert!(flips.len() <= delta);
                let pert = apply_flips(adj.raw(), &flips);
                check_perturbation(adj.raw(), &pert, delta).unwrap();
                let l0 = (&pert - adj.raw()).iter().filter(|v| **v != 0.0).count();
                assert_eq!(l0, 2 * flips.len());
            }
        }
    }
    let incident = fga_attack(&s, &adj, &x, 5, 3, FlipScope::Incident).unwrap();
    assert!(incident.iter().all(|&(i, j)| i == 5 || j == 5));
}

#[test]
fn flat_surrogate_yields_no_flips() {
    let (mut s, adj, x) = tiny_shadow(6, 9);
    for t in s.head.tensors_mut() {
        t.fill(0.0);
    }
    assert!(fga_attack(&s, &adj, &x, 1, 1, FlipScope::Full).unwrap().is_empty());
    assert!(gradargmax_attack(&s, &adj, &x, 1, 3, FlipScope::Full).unwrap().is_empty());
}

#[test]
fn perturbation_checks_reject_bad_matrices() {
    let a = Array2::zeros((3, 3));
    let mut asym = a.clone();
    asym[[0, 1]] = 1.0;
    assert!(check_perturbation(&a, &asym, 5).is_err());
    let mut diag = a.clone();
    diag[[1, 1]] = 1.0;
    assert!(check_perturbation(&a, &diag, 5).is_err());
    let two = apply_flips(&a, &[(0, 1), (1, 2)]);
    assert!(check_perturbation(&a, &two, 1).is_err());
    assert!(check_perturbation(&a, &two, 2).is_ok());
}

fn trained(seed: u64) -> Federation {
    let graph = synth_sbm(SbmSpec::BENCHMARK, seed).unwrap();
    let split = split_features(&graph, 2, seed).unwrap();
    train_vfgl(
        &graph,
        &split,
        TrainConfig {
            seed,
            malicious: Some(0),
            ..TrainConfig::default()
        },
    )
    .unwrap()
}

#[test]
fn genetic_accounting_and_determinism() {
    let mut fed = trained(1);
    let targets = select_targets(&mut fed, 6, 1).unwrap();
    let x = fed.clients[0].features.clone();
    let budget = AttackBudget::default();
    let config = GeneticConfig::default();
    let mut entries = Vec::new();
    let mut issued = 0;
    for &t in &targets {
        let before = fed.server.query_counter[0];
        let r = genetic_attack(&mut fed, &x, t, &budget, &config, 1).unwrap();
        let used = fed.server.query_counter[0] - before;
        assert!(r.queries <= budget.queries);
        if r.success {
            assert_eq!(used, r.queries);
            assert_eq!(r.flips.len(), 1);
            let pert = apply_flips(fed.adjacency.raw(), &r.flips);
            assert!(evaluate_attack(&mut fed, t, &Adjacency::new(pert), &x).unwrap());
            entries.push(Some(r.queries));
        } else {
            assert_eq!(r.queries, 200);
            assert_eq!(used, (config.population * config.generations) as u64);
            assert!(r.flips.is_empty());
            entries.push(None);
        }
        issued += used;
        let again = genetic_attack(&mut fed, &x, t, &budget, &config, 1).unwrap();
        assert_eq!((again.flips, again.queries, again.success), (r.flips, r.queries, r.success));
        issued += fed.server.query_counter[0] - before - used;
    }
    assert_eq!(fed.server.query_counter[0], issued);
    if entries.iter().all(Option::is_none) {
        assert_eq!(aq(&entries, 200).unwrap(), 200.0);
    }
    assert!(aq(&[None; 5], 200).unwrap() == 200.0);
}

#[test]
fn genetic_rejects_oversized_search_and_empty_budget() {
    let mut fed = trained(0);
    let x = fed.clients[0].features.clone();
    let t = fed.test_nodes[0];
    let big = GeneticConfig {
        population: 30,
        ..GeneticConfig::default()
    };
    assert!(genetic_attack(&mut fed, &x, t, &AttackBudget::default(), &big, 0).is_err());
    let none = AttackBudget { delta: 0, queries: 200 };
    let r = genetic_attack(&mut fed, &x, t, &none, &GeneticConfig::default(), 0).unwrap();
    assert_eq!((r.success, r.queries), (false, 200));
    assert_eq!(fed.server.query_counter[0], 0);
}

fn direct_misclassified(fed: &Federation, pert: &Adjacency, x: &Array2<f64>, t: usize) -> bool {
    let mut blocks = fed.embeddings().unwrap();
    blocks[0] = fed.clients[0].model.forward(pert, x).unwrap().embeddings;
    let wide = ndarray::concatenate(ndarray::Axis(1), &[blocks[0].view(), blocks[1].view()]).unwrap();
    let (_, probs, _) = fed.server.mlp.forward(&wide).unwrap();
    argmax(probs.row(t)) != fed.labels[t]
}

#[test]
fn evaluation_agrees_with_direct_server_prediction() {
    let mut fed = trained(2);
    let targets = select_targets(&mut fed, 10, 2).unwrap();
    let x = fed.clients[0].features.clone();
    let clean = fed.adjacency.clone();
    for &t in &targets {
        assert!(!evaluate_attack(&mut fed, t, &clean, &x).unwrap());
    }
    let n = clean.len();
    let t = targets[0];
    // Cut every edge of the target and wire it to a whole other class.
    let other = (fed.labels[t] + 1) % fed.num_classes;
    let flips: Vec<(usize, usize)> = (0..n)
        .filter(|&j| j != t && ((clean.raw()[[t, j]] == 1.0) != (fed.labels[j] == other)))
        .map(|j| (t.min(j), t.max(j)))
        .collect();
    let pert = Adjacency::new(apply_flips(clean.raw(), &flips));
    assert!(direct_misclassified(&fed, &pert, &x, t));
    assert!(evaluate_attack(&mut fed, t, &pert, &x).unwrap());
    for (k, &t) in targets.iter().enumerate() {
        let j = (t + 17 * (k + 1)) % n;
        if j == t {
            continue;
        }
        let pert = Adjacency::new(apply_flips(clean.raw(), &[(t.min(j), t.max(j))]));
        assert_eq!(evaluate_attack(&mut fed, t, &pert, &x).unwrap(), direct_misclassified(&fed, &pert, &x, t));
    }
    assert_eq!(fed.server.query_counter.iter().sum::<u64>(), 0);
}

#[test]
fn run_attack_validates_and_reports() {
    let mut fed = trained(3);
    let targets = select_targets(&mut fed, 5, 3).unwrap();
    let setup = AttackSetup {
        kind: AttackKind::Genetic,
        budget: AttackBudget::default(),
        scope: FlipScope::Auto,
        surrogate: None,
        genetic: GeneticConfig::default(),
        seed: 3,
    };
    for &t in &targets {
        let o = run_attack(&mut fed, &setup, t).unwrap();
        assert!(o.queries <= 200 && o.flips.len() <= 1);
        let json: serde_json::Value = serde_json::from_str(&o.to_json()).unwrap();
        for key in ["target", "attack", "success", "queries", "flips", "ms"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["attack"], "genetic");
    }
    let fga = AttackSetup {
        kind: AttackKind::Fga,
        ..setup
    };
    assert!(run_attack(&mut fed, &fga, targets[0]).is_err());
}
