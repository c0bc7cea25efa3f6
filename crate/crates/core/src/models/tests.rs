use super::*;
use crate::autodiff::Tensor;

fn x_batch(b: usize, len: usize, seed: u64) -> Tensor {
    let mut r = RngStream::new(seed, 5);
    Tensor::new(&[b, len], (0..b * len).map(|_| r.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

fn zeroed(mut m: Model) -> Model {
    for p in &mut m.params {
        p.value.data_mut().fill(0.0);
    }
    m
}

#[test]
fn param_counts_follow_the_closed_forms() {
    assert_eq!(param_count(&ModelSpec::logistic()), 410);
    assert_eq!(param_count(&ModelSpec::mlp(&[100, 100])), 15_210);
    for h in [1, 2, 78, 400] {
        assert_eq!(param_count(&ModelSpec::mlp(&[h])), 51 * h + 10);
    }
    assert_eq!(param_count(&ModelSpec::mlp(&[78])), 3_988);
}

#[test]
fn param_count_matches_enumerated_tensors() {
    let mut grid = vec![
        ModelSpec::logistic(),
        ModelSpec::mlp(&[100, 100]),
        ModelSpec::mlp(&[3]),
        ModelSpec::cnn(),
        ModelSpec::gru(32),
        ModelSpec::gru(5),
        ModelSpec::scalar_net(16),
    ];
    grid.extend(Pooling::ALL.iter().map(|&p| ModelSpec::pooled_cnn(p)));
    for spec in grid {
        let m = init_model(&spec).unwrap();
        assert_eq!(m.param_count(), param_count(&spec), "{spec:?}");
    }
}

#[test]
fn invalid_specs_are_configuration_errors() {
    let mut s = ModelSpec::logistic();
    s.hidden_sizes = vec![4];
    assert!(matches!(init_model(&s), Err(Error::Config(_))));
    let mut s = ModelSpec::cnn();
    s.conv = None;
    assert!(matches!(init_model(&s), Err(Error::Config(_))));
    let mut s = ModelSpec::scalar_net(4);
    s.num_classes = 2;
    assert!(init_model(&s).is_err());
    let s = ModelSpec::gru(4).with_activation(Activation::Learned(Box::new(ModelSpec::scalar_net(3))));
    assert!(init_model(&s).is_err());
}

#[test]
fn init_is_deterministic_and_fan_in_bounded() {
    let spec = ModelSpec::mlp(&[100, 100]).with_seed(11);
    let a = init_model(&spec).unwrap();
    assert_eq!(a, init_model(&spec).unwrap());
    assert_ne!(a, init_model(&spec.clone().with_seed(12)).unwrap());
    let w = a.param("fc0.weight").unwrap();
    let bound = (1.0f64 / 40.0).sqrt();
    assert!(w.data().iter().all(|v| v.abs() <= bound));
    assert!(a.param("fc0.bias").unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_logistic_gives_uniform_softmax() {
    let m = zeroed(init_model(&ModelSpec::logistic()).unwrap());
    let logits = m.forward(&x_batch(4, 40, 1)).unwrap();
    assert!(logits.data().iter().all(|&v| v == 0.0));
    let p = logits.softmax().unwrap();
    assert!(p.data().iter().all(|v| (v - 0.1).abs() < 1e-15));
}

#[test]
fn output_shapes() {
    for spec in [ModelSpec::cnn(), ModelSpec::gru(8), ModelSpec::pooled_cnn(Pooling::L2), ModelSpec::mlp(&[7])] {
        let m = init_model(&spec).unwrap();
        assert_eq!(m.forward(&x_batch(7, 40, 2)).unwrap().shape(), &[7, 10]);
    }
    let m = init_model(&ModelSpec::cnn()).unwrap();
    assert!(matches!(m.forward(&x_batch(3, 39, 2)), Err(Error::Dimension { .. })));
}

#[test]
fn forward_is_deterministic() {
    let m = init_model(&ModelSpec::cnn().with_seed(3)).unwrap();
    let x = x_batch(5, 40, 3);
    assert_eq!(m.forward(&x).unwrap().data(), m.forward(&x).unwrap().data());
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Scalar-by-scalar GRU recurrence written out with explicit loops.
fn gru_oracle(m: &Model, x: &[f64]) -> Vec<f64> {
    let h_dim = m.spec.hidden_sizes[0];
    let w_ih = m.param("gru.w_ih").unwrap().data();
    let w_hh = m.param("gru.w_hh").unwrap().data();
    let b_ih = m.param("gru.b_ih").unwrap().data();
    let b_hh = m.param("gru.b_hh").unwrap().data();
    let mut h = vec![0.0; h_dim];
    for &xt in x {
        let gate = |g: usize, j: usize, h: &[f64]| -> (f64, f64) {
            let row = g * h_dim + j;
            let hx: f64 = (0..h_dim).map(|k| w_hh[row * h_dim + k] * h[k]).sum::<f64>() + b_hh[row];
            (w_ih[row] * xt + b_ih[row], hx)
        };
        let mut next = vec![0.0; h_dim];
        for j in 0..h_dim {
            let (rx, rh) = gate(0, j, &h);
            let (zx, zh) = gate(1, j, &h);
            let (nx, nh) = gate(2, j, &h);
            let r = sigmoid(rx + rh);
            let z = sigmoid(zx + zh);
            let n = (nx + r * nh).tanh();
            next[j] = (1.0 - z) * n + z * h[j];
        }
        h = next;
    }
    let w = m.param("head.weight").unwrap().data();
    let b = m.param("head.bias").unwrap().data();
    (0..10).map(|c| b[c] + (0..h_dim).map(|k| w[c * h_dim + k] * h[k]).sum::<f64>()).collect()
}

#[test]
fn gru_matches_recurrence_oracle() {
    let mut m = init_model(&ModelSpec::gru(6).with_seed(4)).unwrap();
    let mut r = RngStream::new(8, 8);
    for p in &mut m.params {
        p.value.data_mut().iter_mut().for_each(|v| *v = r.uniform_range(-0.8, 0.8));
    }
    let x = x_batch(3, 40, 5);
    let got = m.forward(&x).unwrap();
    for b in 0..3 {
        let want = gru_oracle(&m, &x.data()[b * 40..(b + 1) * 40]);
        for (g, w) in got.data()[b * 10..(b + 1) * 10].iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }
}

#[test]
fn gru_with_zero_gates_follows_fixed_recursion() {
    // Zero recurrent weights and biases: r = z = 1/2 every step and
    // n_t = tanh(w_n x_t), so h_t = (n_t + h_{t-1}) / 2.
    let mut m = zeroed(init_model(&ModelSpec::gru(3)).unwrap());
    let w_n = [0.5, -1.0, 2.0];
    m.params[0].value.data_mut()[6..9].copy_from_slice(&w_n);
    for c in 0..10 {
        m.params[4].value.data_mut()[c * 3 + c % 3] = 1.0;
    }
    let x = x_batch(1, 40, 6);
    let mut h = [0.0; 3];
    for &xt in x.data() {
        for j in 0..3 {
            h[j] = ((w_n[j] * xt).tanh() + h[j]) / 2.0;
        }
    }
    let got = m.forward(&x).unwrap();
    for c in 0..10 {
        assert!((got.data()[c] - h[c % 3]).abs() < 1e-12);
    }
}

#[test]
fn pooling_definitions() {
    let x = Tensor::new(&[1, 1, 4], vec![1.0, 3.0, 2.0, 4.0]).unwrap();
    assert_eq!(pool(&x, Pooling::Max, 2, 2).unwrap().data(), &[3.0, 4.0]);
    assert_eq!(pool(&x, Pooling::Mean, 2, 2).unwrap().data(), &[2.0, 3.0]);
    assert_eq!(pool(&x, Pooling::None, 2, 2).unwrap().data(), x.data());
    let y = Tensor::new(&[1, 1, 2], vec![3.0, 4.0]).unwrap();
    assert!((pool(&y, Pooling::L2, 2, 2).unwrap().data()[0] - 5.0).abs() < 1e-12);
    let c = Tensor::full(&[2, 3, 9], 0.7);
    let m = pool(&c, Pooling::Mean, 3, 1).unwrap();
    assert_eq!(m.shape(), &[2, 3, 7]);
    assert!(m.data().iter().all(|v| (v - 0.7).abs() < 1e-15));
    assert!(matches!(pool(&y, Pooling::Max, 3, 1), Err(Error::Dimension { .. })));
}

#[test]
fn pooling_keeps_channels_separate() {
    let x = Tensor::new(&[1, 2, 4], vec![1.0, 2.0, 3.0, 4.0, -1.0, -5.0, 0.0, 9.0]).unwrap();
    let p = pool(&x, Pooling::Max, 2, 2).unwrap();
    assert_eq!(p.shape(), &[1, 2, 2]);
    assert_eq!(p.data(), &[2.0, 4.0, -1.0, 9.0]);
}

fn ones_like(m: &Model) -> Vec<Array> {
    m.params.iter().map(|p| Array::full(p.value.shape(), 1.0)).collect()
}

#[test]
fn masks() {
    let base = init_model(&ModelSpec::mlp(&[5])).unwrap();
    let mut m = base.clone();
    m.set_mask(ones_like(&m)).unwrap();
    assert_eq!(m.params, base.params);

    let mut masks = ones_like(&base);
    masks[0] = Array::zeros(masks[0].shape());
    let mut m = base.clone();
    m.set_mask(masks).unwrap();
    assert!(m.param("fc0.weight").unwrap().data().iter().all(|&v| v == 0.0));

    let mut bad = ones_like(&base);
    bad[1] = Array::zeros(&[4]);
    assert!(matches!(base.clone().set_mask(bad), Err(Error::Dimension { .. })));
    let mut nonbinary = ones_like(&base);
    nonbinary[0].data_mut()[0] = 0.5;
    assert!(base.clone().set_mask(nonbinary).is_err());
}

#[test]
fn zero_first_layer_mask_leaves_only_bias() {
    let mut m = init_model(&ModelSpec::mlp(&[5])).unwrap();
    m.params[1].value.data_mut().copy_from_slice(&[0.1, -0.2, 0.3, 0.0, 2.0]);
    let mut masks = ones_like(&m);
    masks[0] = Array::zeros(masks[0].shape());
    m.set_mask(masks).unwrap();
    let x = x_batch(4, 40, 9);
    let pre = x.matmul_t(&Tensor::from_array(m.param("fc0.weight").unwrap()), false, true).unwrap()
        .add(&Tensor::from_array(m.param("fc0.bias").unwrap())).unwrap();
    for row in pre.data().chunks(5) {
        assert_eq!(row, &[0.1, -0.2, 0.3, 0.0, 2.0]);
    }
}

#[test]
fn learned_activation_applies_scalar_net_elementwise() {
    let phi_spec = ModelSpec::scalar_net(4).with_seed(2);
    let spec = ModelSpec::mlp(&[6]).with_activation(Activation::Learned(Box::new(phi_spec)));
    let m = init_model(&spec).unwrap();
    let phi = m.phi.as_ref().unwrap();
    let x = x_batch(2, 40, 10);
    let got = m.forward(&x).unwrap();

    let w0 = Tensor::from_array(&m.params[0].value);
    let pre = x.matmul_t(&w0, false, true).unwrap().add(&Tensor::from_array(&m.params[1].value)).unwrap();
    let hidden: Vec<f64> = pre.data().iter().map(|&v| phi.forward_array(&Array::new(vec![1, 1], vec![v]).unwrap()).unwrap().data()[0]).collect();
    let h = Tensor::new(&[2, 6], hidden).unwrap();
    let want = h
        .matmul_t(&Tensor::from_array(&m.params[2].value), false, true).unwrap()
        .add(&Tensor::from_array(&m.params[3].value)).unwrap();
    for (g, w) in got.data().iter().zip(want.data()) {
        assert!((g - w).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let mut m = init_model(&ModelSpec::cnn().with_seed(21)).unwrap();
    let mut masks = ones_like(&m);
    masks[0].data_mut()[3] = 0.0;
    m.set_mask(masks).unwrap();
    save_checkpoint(&path, &m).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), m);

    let phi = ModelSpec::scalar_net(3);
    let learned = init_model(&ModelSpec::mlp(&[4]).with_activation(Activation::Learned(Box::new(phi)))).unwrap();
    save_checkpoint(&path, &learned).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), learned);

    std::fs::write(&path, b"{\"format\":\"other\",\"model\":null}").unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn spec_json_is_strict() {
    let s = serde_json::to_string(&ModelSpec::cnn()).unwrap();
    let back: ModelSpec = serde_json::from_str(&s).unwrap();
    assert_eq!(back, ModelSpec::cnn());
    let typo = s.replace("\"pooling\"", "\"poolng\"");
    assert!(serde_json::from_str::<ModelSpec>(&typo).is_err());
}
