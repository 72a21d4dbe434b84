use mulink_autodiff::ops::{mul, sum_all};
use mulink_autodiff::{adam_step, AdamState, Tensor};

#[test]
fn first_step_matches_hand_formula() {
    // grad = 1 everywhere: bias-corrected m_hat = 1, v_hat = 1, so the
    // update is -lr / (1 + eps) per element.
    let p = Tensor::param(vec![3], vec![0.5, -0.2, 1.0]);
    let loss = sum_all(&p);
    loss.backward().unwrap();
    let mut state = AdamState::new(&[p.clone()], 1e-3);
    adam_step(&[p.clone()], &mut state);
    let expected_delta = -1e-3 / (1.0 + 1e-8);
    for (after, before) in p.value().iter().zip([0.5, -0.2, 1.0]) {
        assert!((after - (before + expected_delta)).abs() < 1e-15);
    }
    assert_eq!(state.step_count, 1);
}

#[test]
fn zero_grad_leaves_params_unchanged() {
    let p = Tensor::param(vec![2], vec![1.0, 2.0]);
    let mut state = AdamState::new(&[p.clone()], 1e-3);
    adam_step(&[p.clone()], &mut state);
    assert_eq!(p.value(), vec![1.0, 2.0]);
    assert_eq!(state.step_count, 1);
}

#[test]
fn non_finite_grad_skips_step() {
    let p = Tensor::param(vec![1], vec![1.0]);
    let bad = Tensor::constant(vec![1], vec![f64::NAN]);
    let loss = sum_all(&mul(&p, &bad));
    loss.backward().unwrap();
    let mut state = AdamState::new(&[p.clone()], 1e-3);
    adam_step(&[p.clone()], &mut state);
    assert_eq!(p.value(), vec![1.0]);
    assert_eq!(state.step_count, 0);
}

#[test]
fn deterministic_trajectories() {
    let run = || -> Vec<f64> {
        let p = Tensor::param(vec![2], vec![0.4, -0.6]);
        let mut state = AdamState::new(&[p.clone()], 1e-2);
        for _ in 0..25 {
            let sq = mul(&p, &p);
            sum_all(&sq).backward().unwrap();
            adam_step(&[p.clone()], &mut state);
        }
        p.value()
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_roundtrip() {
    let dir = std::env::temp_dir().join(format!("mulink_ckpt_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("params.bin");
    let a = Tensor::param(vec![2, 2], vec![1.0, -2.0, 3.0, -4.0]);
    let b = Tensor::param(vec![3], vec![0.1, 0.2, 0.3]);
    let mut state = AdamState::new(&[a.clone(), b.clone()], 5e-4);
    sum_all(&mul(&a, &a)).backward().unwrap();
    adam_step(&[a.clone()], &mut AdamState::new(&[a.clone()], 1e-3));
    state.step_count = 17;
    state.m[0][1] = 0.25;
    state.v[1][2] = 0.5;
    let named = vec![("a".to_string(), a.clone()), ("b".to_string(), b.clone())];
    mulink_autodiff::checkpoint::save(&path, &named, Some(&state), serde_json::json!({"x": 1}))
        .unwrap();
    let loaded = mulink_autodiff::checkpoint::load(&path).unwrap();
    assert_eq!(loaded.params.len(), 2);
    assert_eq!(loaded.params[0].0, "a");
    assert_eq!(loaded.params[0].1.value(), a.value());
    assert_eq!(loaded.params[1].1.value(), b.value());
    let opt = loaded.optimizer.unwrap();
    assert_eq!(opt.step_count, 17);
    assert_eq!(opt.learning_rate, 5e-4);
    assert_eq!(opt.m[0][1], 0.25);
    assert_eq!(opt.v[1][2], 0.5);
    std::fs::remove_dir_all(&dir).ok();
}
