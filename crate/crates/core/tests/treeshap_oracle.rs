use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tsxplain::explain::{cover_weighted_shapley, treeshap};
use tsxplain::seed;
use tsxplain::trees::{fit_gbt, GbtParams, Node, Tree, TreeEnsemble};

fn random_tree(rng: &mut ChaCha8Rng, depth: usize, features: &[usize]) -> Tree<f64> {
    fn grow(rng: &mut ChaCha8Rng, nodes: &mut Vec<Node<f64>>, depth: usize, features: &[usize]) -> usize {
        let at = nodes.len();
        if depth == 0 || rng.random_bool(0.2) {
            nodes.push(Node::Leaf { weight: rng.random_range(-2.0..2.0), cover: rng.random_range(0.5..5.0) });
            return at;
        }
        nodes.push(Node::Leaf { weight: 0.0, cover: 0.0 });
        let left = grow(rng, nodes, depth - 1, features);
        let right = grow(rng, nodes, depth - 1, features);
        let cover = nodes[left].cover() + nodes[right].cover();
        nodes[at] = Node::Split {
            feature: features[rng.random_range(0..features.len())],
            threshold: rng.random_range(-1.0..1.0),
            left,
            right,
            cover,
            gain: 1.0,
        };
        at
    }
    let mut nodes = Vec::new();
    grow(rng, &mut nodes, depth, features);
    Tree { nodes }
}

fn random_ensemble(seed: u64) -> (TreeEnsemble<f64>, Vec<usize>) {
    let mut rng = seed::rng(seed);
    let p = rng.random_range(2..=10);
    let k = rng.random_range(2..=3);
    // A few features are never used so dummy behaviour is exercised; a small
    // pool makes repeated features along a path common.
    let pool: Vec<usize> = (0..p).filter(|_| rng.random_bool(0.7)).collect();
    let pool = if pool.is_empty() { vec![0] } else { pool };
    let rounds = rng.random_range(1..=4);
    let trees = (0..rounds)
        .map(|_| {
            (0..k)
                .map(|_| {
                    let d = rng.random_range(0..=3);
                    random_tree(&mut rng, d, &pool)
                })
                .collect()
        })
        .collect();
    let e = TreeEnsemble {
        n_classes: k,
        n_features: p,
        trees,
        base_score: rng.random_range(-0.5..0.5),
        eta: 0.3,
        lambda: 1.0,
        gamma: 0.0,
        max_depth: 3,
        train_loss: vec![],
    };
    (e, pool)
}

#[test]
fn matches_cover_weighted_enumeration_on_random_ensembles() {
    for s in 0..50 {
        let (e, pool) = random_ensemble(s);
        let mut rng = seed::rng(1000 + s);
        for _ in 0..4 {
            let x: Vec<f64> = (0..e.n_features).map(|_| rng.random_range(-1.2..1.2)).collect();
            for class in 0..e.n_classes {
                let fast = treeshap(&e, &x, class).unwrap();
                let slow = cover_weighted_shapley(&e, &x, class).unwrap();
                assert!((fast.base_value - slow.base_value).abs() <= 1e-8);
                for (i, (a, b)) in fast.values.iter().zip(&slow.values).enumerate() {
                    assert!((a - b).abs() <= 1e-8, "ensemble {s} class {class} feature {i}: {a} vs {b}");
                    if !pool.contains(&i) {
                        assert_eq!(*a, 0.0);
                    }
                }
                let margin = e.margins(&x).unwrap()[class];
                assert!((fast.total() - margin).abs() <= 1e-8);
            }
        }
    }
}

#[test]
fn local_accuracy_on_fitted_ensembles() {
    let mut rng = seed::rng(77);
    for _ in 0..5 {
        let x: Vec<Vec<f64>> = (0..40).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<usize> = x.iter().map(|r| usize::from(r[0] + r[2] > 0.0) + usize::from(r[4] > 0.5)).collect();
        let e = fit_gbt(&x, &y, &GbtParams { rounds: 10, max_depth: 3, ..GbtParams::default() }, 0).unwrap();
        for r in &x {
            for class in 0..e.n_classes {
                let a = treeshap(&e, r, class).unwrap();
                assert!((a.total() - e.margins(r).unwrap()[class]).abs() <= 1e-8);
            }
        }
        let slow = cover_weighted_shapley(&e, &x[0], 1).unwrap();
        let fast = treeshap(&e, &x[0], 1).unwrap();
        for (a, b) in fast.values.iter().zip(&slow.values) {
            assert!((a - b).abs() <= 1e-8);
        }
    }
}
