use approx::assert_abs_diff_eq;
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::Features;

fn single_layer(d_in: usize, d_out: usize, rank: usize, alpha: f64) -> NetworkSpec {
    NetworkSpec {
        input: InputSpec::Dense { dim: d_in },
        layers: vec![DenseLayerSpec {
            d_in,
            d_out,
            activation: Activation::Identity,
            adapted: true,
        }],
        rank,
        alpha,
        num_classes: d_out,
    }
}

fn random_theta(net: &LoraNetwork, seed: u64, scale: f64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array1::from_shape_fn(net.adapter_dim(), |_| scale * rng.random_range(-1.0..1.0))
}

fn random_inputs(n: usize, d: usize, seed: u64) -> Features {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Features::Dense(Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0)))
}

fn mlp(seed: u64) -> LoraNetwork {
    let spec = NetworkSpec::mlp(3, &[12, 10], 4);
    let base = BaseWeights::random(&spec, seed).unwrap();
    LoraNetwork::new(spec, base).unwrap()
}

fn attention_net(seed: u64) -> LoraNetwork {
    let spec = NetworkSpec::attention(4, 5, 8, &[10], 3).with_rank(4, 8.0);
    let base = BaseWeights::random(&spec, seed).unwrap();
    LoraNetwork::new(spec, base).unwrap()
}

#[test]
fn zero_update_leaves_base_weights() {
    let net = mlp(1);
    let w = net.materialize(&Array1::zeros(net.adapter_dim())).unwrap();
    for (got, base) in w.dense.iter().zip(&net.base().dense) {
        assert_eq!(got, &base.weight);
    }
    // B = 0 with arbitrary A
    let layout = net.layout();
    let mut factors = layout.unflatten(&random_theta(&net, 3, 1.0)).unwrap();
    for f in &mut factors {
        f.b.fill(0.0);
    }
    let w = net.materialize(&layout.flatten(&factors).unwrap()).unwrap();
    for (got, base) in w.dense.iter().zip(&net.base().dense) {
        assert_eq!(got, &base.weight);
    }
}

#[test]
fn rank_one_update_is_outer_product() {
    let spec = single_layer(3, 2, 1, 1.0);
    let base = BaseWeights::random(&spec, 5).unwrap();
    let net = LoraNetwork::new(spec, base.clone()).unwrap();
    let factors = vec![LoraFactors {
        a: array![[0.0, 1.0, 0.0]],
        b: array![[1.0], [0.0]],
    }];
    let theta = net.layout().flatten(&factors).unwrap();
    let w = net.materialize(&theta).unwrap();
    let mut want = base.dense[0].weight.clone();
    want[[0, 1]] += 1.0;
    assert_eq!(w.dense[0], want);
}

#[test]
fn linear_softmax_matches_closed_form() {
    let spec = single_layer(2, 3, 1, 1.0);
    let base = BaseWeights {
        attention: None,
        dense: vec![DenseWeights {
            weight: array![[1.0, 0.0], [0.0, 2.0], [-1.0, 1.0]],
            bias: array![0.5, 0.0, -0.5],
        }],
    };
    let net = LoraNetwork::new(spec, base).unwrap();
    let x = Features::Dense(array![[1.0, 2.0], [-1.0, 0.5]]);
    let probs = net.predict(&Array1::zeros(net.adapter_dim()), &x).unwrap();
    let logits = [[1.5, 4.0, 0.5], [-0.5, 1.0, 1.0]];
    for (row, z) in logits.iter().enumerate() {
        let denom: f64 = z.iter().map(|v: &f64| v.exp()).sum();
        for c in 0..3 {
            assert_abs_diff_eq!(probs[[row, c]], z[c].exp() / denom, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(probs.row(row).sum(), 1.0, epsilon = 1e-12);
    }
}

#[test]
fn zero_adapter_matches_base_model_and_duplicates_agree() {
    let net = mlp(2);
    let x = random_inputs(5, 3, 9);
    let zero = Array1::zeros(net.adapter_dim());
    let base_only = net
        .forward(
            &EffectiveWeights {
                query: None,
                value: None,
                dense: net.base().dense.iter().map(|d| d.weight.clone()).collect(),
            },
            &x,
        )
        .unwrap();
    let adapted = net.forward(&net.materialize(&zero).unwrap(), &x).unwrap();
    assert_eq!(base_only.logits, adapted.logits);

    let Features::Dense(m) = &x else { unreachable!() };
    let dup = Features::Dense(ndarray::concatenate![ndarray::Axis(0), m.view(), m.view()]);
    let probs = net.predict(&random_theta(&net, 4, 0.3), &dup).unwrap();
    for i in 0..5 {
        assert_eq!(probs.row(i), probs.row(i + 5));
        assert!(probs.row(i).iter().all(|&p| p > 0.0));
    }
}

fn check_gradient(net: &LoraNetwork, theta: &Array1<f64>, x: &Features, labels: &[usize], probes: usize) {
    let lg = net.loss_and_gradient(theta, x, labels, None).unwrap();
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    // probe every site at least `probes` times
    let sites = net.layout().sites().len();
    let mut checked = vec![0usize; sites];
    let mut tries = 0;
    while checked.iter().any(|&c| c < probes) && tries < 100_000 {
        tries += 1;
        let idx = rng.random_range(0..theta.len());
        let site = net.layout().locate(idx).unwrap().site;
        if checked[site] >= probes {
            continue;
        }
        checked[site] += 1;
        let mut plus = theta.clone();
        plus[idx] += h;
        let mut minus = theta.clone();
        minus[idx] -= h;
        let fp = net.loss_and_gradient(&plus, x, labels, None).unwrap().loss;
        let fm = net.loss_and_gradient(&minus, x, labels, None).unwrap().loss;
        let fd = (fp - fm) / (2.0 * h);
        let g = lg.gradient[idx];
        let err = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-4);
        assert!(err < 1e-5, "coordinate {idx}: analytic {g} vs fd {fd} (rel {err})");
    }
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let net = mlp(3);
    let theta = random_theta(&net, 5, 0.5);
    let x = random_inputs(7, 3, 1);
    check_gradient(&net, &theta, &x, &[0, 1, 2, 3, 0, 1, 2], 20);
}

#[test]
fn attention_gradient_matches_finite_differences() {
    let net = attention_net(4);
    let theta = random_theta(&net, 6, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Features::Tokens(Array2::from_shape_simple_fn((6, 5), || rng.random_range(0..4)));
    check_gradient(&net, &theta, &x, &[0, 1, 2, 0, 1, 2], 20);
}

#[test]
fn confident_correct_prediction_has_vanishing_gradient() {
    let spec = single_layer(2, 2, 1, 1.0);
    let base = BaseWeights {
        attention: None,
        dense: vec![DenseWeights {
            weight: array![[40.0, 0.0], [-40.0, 0.0]],
            bias: array![0.0, 0.0],
        }],
    };
    let net = LoraNetwork::new(spec, base).unwrap();
    let theta = Array1::from(vec![0.3, -0.2, 0.1, 0.4]);
    let x = Features::Dense(array![[1.0, 0.0], [-1.0, 0.0]]);
    let lg = net.loss_and_gradient(&theta, &x, &[0, 1], None).unwrap();
    assert!(lg.gradient.dot(&lg.gradient).sqrt() < 1e-9);
}

#[test]
fn duplicated_batch_gives_same_gradient() {
    let net = mlp(6);
    let theta = random_theta(&net, 1, 0.4);
    let Features::Dense(m) = random_inputs(4, 3, 2) else { unreachable!() };
    let labels = [1, 3, 0, 2];
    let single = net
        .loss_and_gradient(&theta, &Features::Dense(m.clone()), &labels, None)
        .unwrap();
    let doubled = net
        .loss_and_gradient(
            &theta,
            &Features::Dense(ndarray::concatenate![ndarray::Axis(0), m.view(), m.view()]),
            &[labels, labels].concat(),
            None,
        )
        .unwrap();
    assert_abs_diff_eq!(single.loss, doubled.loss, epsilon = 1e-14);
    for (a, b) in single.gradient.iter().zip(&doubled.gradient) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-14);
    }
}

#[test]
fn rejects_bad_inputs() {
    let net = mlp(1);
    let theta = Array1::zeros(net.adapter_dim());
    assert!(net.predict(&theta, &random_inputs(0, 3, 0)).is_err());
    assert!(net.predict(&theta, &random_inputs(2, 4, 0)).is_err());
    assert!(net.loss_and_gradient(&theta, &random_inputs(2, 3, 0), &[0, 9], None).is_err());
    assert!(net.predict(&Array1::zeros(3), &random_inputs(2, 3, 0)).is_err());
    let huge = Array1::from_elem(net.adapter_dim(), 1e200);
    assert!(matches!(
        net.predict(&huge, &random_inputs(2, 3, 0)),
        Err(crate::Error::NonFinite { .. })
    ));
}

#[test]
fn forward_is_deterministic() {
    let a = attention_net(8);
    let b = attention_net(8);
    let theta = random_theta(&a, 2, 0.3);
    let x = Features::Tokens(array![[0, 1, 2, 3, 0], [3, 3, 1, 0, 2]]);
    assert_eq!(a.predict(&theta, &x).unwrap(), b.predict(&theta, &x).unwrap());
}

#[test]
fn zero_rho_gives_zero_noise() {
    let net = mlp(2);
    let w = net.materialize(&random_theta(&net, 3, 0.2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for eps in sample_flat_noise(&net, &w, 0.0, &mut rng).unwrap() {
        assert!(eps.iter().all(|&x| x == 0.0));
    }
    assert!(sample_flat_noise(&net, &w, -1.0, &mut rng).is_err());
}

#[test]
fn noise_variance_follows_row_norm() {
    let spec = single_layer(16, 2, 1, 1.0);
    let base = BaseWeights {
        attention: None,
        dense: vec![DenseWeights {
            // row 0 has squared norm 16 * 0.25 = 4, row 1 is zero
            weight: Array2::from_shape_fn((2, 16), |(i, _)| if i == 0 { 0.5 } else { 0.0 }),
            bias: Array1::zeros(2),
        }],
    };
    let net = LoraNetwork::new(spec, base).unwrap();
    let w = net.materialize(&Array1::zeros(net.adapter_dim())).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    while count < 100_000 {
        let eps = sample_flat_noise(&net, &w, 0.25, &mut rng).unwrap();
        assert!(eps[0].row(1).iter().all(|&x| x == 0.0));
        for &x in eps[0].row(0) {
            sum_sq += x * x;
        }
        count += 16;
    }
    let var = sum_sq / count as f64;
    // 0.25 / 16 * 4
    assert!((var - 0.0625).abs() / 0.0625 < 0.05, "empirical variance {var}");
}
