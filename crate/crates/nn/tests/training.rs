use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use webrpg_nn::checkpoint;
use webrpg_nn::layers::{sinusoidal_table, Linear, Mlp};
use webrpg_nn::{AdamW, Graph, NnError, OptimizerConfig, ParamStore, Tensor};

#[test]
fn adamw_zero_gradient_without_decay_is_identity() {
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let mut s = ParamStore::<f32>::new();
    let a = s.randn("a", 3, 3, 1.0, &mut r);
    let before = s.get(a).clone();
    let cfg = OptimizerConfig {
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut opt = AdamW::new(cfg, &s).unwrap();
    for _ in 0..10 {
        let grads = {
            let mut g = Graph::new(&s);
            let p = g.param(a);
            let z = g.scale(p, 0.0).unwrap();
            let z = g.sum(z).unwrap();
            g.backward(z).unwrap()
        };
        opt.step(&mut s, &grads).unwrap();
    }
    assert_eq!(s.get(a), &before);
}

#[test]
fn adamw_minimizes_a_quadratic() {
    let mut s = ParamStore::<f32>::new();
    let x = s.add("x", Tensor::from_f64(1, 2, &[3.0, -2.0]));
    let target = Tensor::from_f64(1, 2, &[0.5, 1.5]);
    let cfg = OptimizerConfig {
        learning_rate: 1e-2,
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut opt = AdamW::new(cfg, &s).unwrap();
    let mut steps = 0;
    while s.get(x).max_abs_diff(&target) > 1e-3 && steps < 5000 {
        let grads = {
            let mut g = Graph::new(&s);
            let p = g.param(x);
            let t = g.constant(target.clone());
            let l = g.squared_error(p, t).unwrap();
            g.backward(l).unwrap()
        };
        opt.step(&mut s, &grads).unwrap();
        steps += 1;
    }
    assert!(steps < 5000, "did not converge: {:?}", s.get(x));
}

#[test]
fn frozen_parameters_do_not_move() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut s = ParamStore::<f32>::new();
    let lin = Linear::new(&mut s, &mut r, "lin", 3, 2);
    s.set_frozen(lin.w, true);
    let w0 = s.get(lin.w).clone();
    let mut opt = AdamW::new(OptimizerConfig::default(), &s).unwrap();
    let x = Tensor::randn(4, 3, 1.0, &mut r);
    let grads = {
        let mut g = Graph::new(&s);
        let xv = g.constant(x);
        let y = lin.forward(&mut g, xv).unwrap();
        let l = g.cross_entropy(y, &[0, 1, 1, 0]).unwrap();
        g.backward(l).unwrap()
    };
    opt.step(&mut s, &grads).unwrap();
    assert_eq!(s.get(lin.w), &w0);
    assert!(s.get(lin.b).data().iter().any(|&b| b != 0.0));
}

fn train_mlp(seed: u64) -> ParamStore<f32> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::<f32>::new();
    let mlp = Mlp::new(&mut s, &mut r, "mlp", &[4, 8, 3]);
    let x = Tensor::randn(6, 4, 1.0, &mut r);
    let mut opt = AdamW::new(OptimizerConfig { learning_rate: 1e-2, ..Default::default() }, &s).unwrap();
    for _ in 0..50 {
        let grads = {
            let mut g = Graph::new(&s);
            let xv = g.constant(x.clone());
            let y = mlp.forward(&mut g, xv).unwrap();
            let l = g.cross_entropy(y, &[0, 1, 2, 0, 1, 2]).unwrap();
            g.backward(l).unwrap()
        };
        opt.step(&mut s, &grads).unwrap();
    }
    s
}

#[test]
fn training_is_deterministic() {
    let a = checkpoint::encode(&train_mlp(7));
    let b = checkpoint::encode(&train_mlp(7));
    assert_eq!(a, b);
    assert_ne!(a, checkpoint::encode(&train_mlp(8)));
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let trained = train_mlp(3);
    let config = serde_json::json!({"dims": [4, 8, 3]});
    checkpoint::save(&path, &trained, &config).unwrap();
    assert_eq!(checkpoint::load_config(&path).unwrap(), config);

    let mut fresh = {
        let mut r = ChaCha8Rng::seed_from_u64(99);
        let mut s = ParamStore::<f32>::new();
        Mlp::new(&mut s, &mut r, "mlp", &[4, 8, 3]);
        s
    };
    checkpoint::load_into(&path, &mut fresh).unwrap();
    assert_eq!(checkpoint::encode(&fresh), checkpoint::encode(&trained));

    let mut wrong = ParamStore::<f32>::new();
    Mlp::new(&mut wrong, &mut ChaCha8Rng::seed_from_u64(0), "mlp", &[4, 9, 3]);
    assert!(matches!(checkpoint::load_into(&path, &mut wrong), Err(NnError::Checkpoint(_))));
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = checkpoint::encode(&train_mlp(3));
    assert!(checkpoint::decode::<f32>(&bytes[..bytes.len() - 1]).is_err());
    assert!(checkpoint::decode::<f32>(&bytes[..5]).is_err());
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(checkpoint::decode::<f32>(&bad_magic).is_err());
    let widened = checkpoint::decode::<f64>(&bytes).unwrap();
    let narrow = checkpoint::decode::<f32>(&bytes).unwrap();
    for ((_, w), (_, n)) in widened.iter().zip(&narrow) {
        assert_eq!(w, &n.cast::<f64>());
    }
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(checkpoint::decode::<f32>(&trailing).is_err());
    assert_eq!(checkpoint::decode::<f32>(&bytes).unwrap().len(), 4);
}

#[test]
fn shape_errors_and_nan_guard() {
    let s = ParamStore::<f32>::new();
    let mut g = Graph::new(&s);
    let a = g.constant(Tensor::zeros(2, 3));
    let b = g.constant(Tensor::zeros(2, 3));
    assert!(matches!(g.matmul(a, b), Err(NnError::ShapeMismatch { .. })));
    let big = g.constant(Tensor::full(1, 1, 100.0));
    assert!(matches!(g.exp(big), Err(NnError::NonFinite { .. })));
    g.set_checked(false);
    let inf = g.exp(big).unwrap();
    assert!(!g.value(inf).is_finite());
}

#[test]
fn softmax_probabilities_sum_to_one() {
    // cross entropy of uniform logits over n classes is ln n per row
    let s = ParamStore::<f64>::new();
    let mut g = Graph::new(&s);
    let l = g.constant(Tensor::full(3, 5, 2.5));
    let ce = g.cross_entropy(l, &[0, 1, 4]).unwrap();
    assert!((g.value(ce).item() - 3.0 * 5f64.ln()).abs() < 1e-12);
}

#[test]
fn gaussian_sample_collapses_to_mean() {
    let s = ParamStore::<f64>::new();
    let mut g = Graph::new(&s);
    let mu = g.constant(Tensor::from_f64(1, 3, &[1.0, -2.0, 0.5]));
    let lv = g.constant(Tensor::full(1, 3, -60.0));
    let z = g.gaussian_sample(mu, lv, Tensor::full(1, 3, 1.0)).unwrap();
    assert!(g.value(z).max_abs_diff(g.value(mu)) < 1e-12);
    let zero_lv = g.constant(Tensor::zeros(1, 3));
    let zero_mu = g.constant(Tensor::zeros(1, 3));
    let kl = g.kl_normal(zero_mu, zero_lv).unwrap();
    assert_eq!(g.value(kl).item(), 0.0);
}

#[test]
fn linear_with_identity_weights() {
    let mut s = ParamStore::<f64>::new();
    let lin = Linear::zeros(&mut s, "lin", 3, 3);
    s.set(lin.w, Tensor::identity(3)).unwrap();
    let x = Tensor::from_f64(2, 3, &[1., 2., 3., 4., 5., 6.]);
    let mut g = Graph::new(&s);
    let xv = g.constant(x.clone());
    let y = lin.forward(&mut g, xv).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn sinusoidal_rows_are_distinct() {
    let t = sinusoidal_table::<f64>(64, 16);
    assert_eq!(t.row(0)[0], 0.0);
    assert_eq!(t.row(0)[1], 1.0);
    for i in 0..64 {
        for j in 0..i {
            let d: f64 = t.row(i).iter().zip(t.row(j)).map(|(a, b)| (a - b).abs()).sum();
            assert!(d > 1e-3);
        }
    }
}
