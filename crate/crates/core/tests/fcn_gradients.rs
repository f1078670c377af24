use rand::Rng;
use tsxplain::neural::{FcnArchitecture, FcnModel, Standardizer};
use tsxplain::seed;

const STEP: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn loss(m: &FcnModel<f64>, x: &[f64], y: usize) -> f64 {
    let p = m.predict_proba(x).unwrap();
    -p[y].ln()
}

/// Smallest |pre-activation| over every conv unit, including under every
/// perturbation used by the check. Finite differences are only valid away from
/// ReLU kinks.
fn kink_margin(m: &FcnModel<f64>, x: &[f64]) -> f64 {
    m.forward(x).unwrap().pre.iter().flatten().fold(f64::INFINITY, |a, v| a.min(v.abs()))
}

fn random_case(seed: u64) -> Option<(FcnModel<f64>, Vec<f64>, usize)> {
    let mut rng = seed::rng(seed);
    let arch = FcnArchitecture::custom(vec![3, 3], vec![3, 5], 3).unwrap();
    let mut m = FcnModel::init(arch, seed);
    let x: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
    if seed.is_multiple_of(2) {
        let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..12).map(|_| rng.random_range(-1.0..3.0)).collect()).collect();
        m.standardizer = Some(Standardizer::fit(&rows, 9).unwrap());
    }
    let y = rng.random_range(0..3);
    (kink_margin(&m, &x) > 50.0 * STEP).then_some((m, x, y))
}

#[test]
fn parameter_and_input_gradients_match_finite_differences() {
    let mut checked = 0;
    let mut seed = 0;
    while checked < 24 {
        seed += 1;
        let Some((m, x, y)) = random_case(seed) else { continue };
        let (_, g) = m.loss_and_gradients(&x, y).unwrap();
        for i in 0..m.params.len() {
            let mut up = m.clone();
            let mut dn = m.clone();
            up.params[i] += STEP;
            dn.params[i] -= STEP;
            let fd = (loss(&up, &x, y) - loss(&dn, &x, y)) / (2.0 * STEP);
            assert!(rel_err(g.params[i], fd) <= 1e-4, "seed {seed} param {i}: {} vs {fd}", g.params[i]);
        }
        for t in 0..x.len() {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[t] += STEP;
            dn[t] -= STEP;
            let fd = (loss(&m, &up, y) - loss(&m, &dn, y)) / (2.0 * STEP);
            assert!(rel_err(g.input[t], fd) <= 1e-4, "seed {seed} input {t}: {} vs {fd}", g.input[t]);
        }
        for k in 0..3 {
            let gi = m.class_input_gradient(&x, k).unwrap();
            for t in 0..x.len() {
                let mut up = x.clone();
                let mut dn = x.clone();
                up[t] += STEP;
                dn[t] -= STEP;
                let fd = (m.logits(&up).unwrap()[k] - m.logits(&dn).unwrap()[k]) / (2.0 * STEP);
                assert!(rel_err(gi[t], fd) <= 1e-4);
            }
        }
        let s: f64 = m.predict_proba(&x).unwrap().iter().sum();
        assert!((s - 1.0).abs() <= 1e-9);
        checked += 1;
    }
}

#[test]
fn summed_logit_gradient_is_constant_when_dense_columns_balance() {
    // With one conv layer of identity-like kernels the GAP makes every position
    // contribute 1/L of the pooled value; if the dense rows sum to a constant
    // vector the summed-logit gradient is the same at every interior position.
    let arch = FcnArchitecture::custom(vec![2], vec![1], 3).unwrap();
    let mut m = FcnModel::<f64>::zeros(arch);
    let (w, b) = m.conv_mut(0);
    w.copy_from_slice(&[1.0, 2.0]);
    b.copy_from_slice(&[5.0, 5.0]);
    m.dense_weights_mut().copy_from_slice(&[0.5, 0.1, 0.25, 0.6, 0.25, 0.3]);
    let x = [0.3, -1.0, 2.0, 0.7];
    let mut total = vec![0.0; 4];
    for k in 0..3 {
        for (a, g) in total.iter_mut().zip(m.class_input_gradient(&x, k).unwrap()) {
            *a += g;
        }
    }
    for &v in &total {
        assert!((v - (1.0 * 1.0 + 2.0 * 1.0) / 4.0).abs() < 1e-12);
    }
}
