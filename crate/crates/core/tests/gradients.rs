mod common;

use common::{grad_check, random_matrix, weighted_sum};
use grube::layers::{init_adapters, orthogonality_penalty, AdapterMask, EnsembleLinear, InitScheme};
use grube::losses::{ensemble_loss, gaussian_nll_terms, member_losses};
use grube::params::ParamSet;
use grube::recurrent::{unroll, GateMask, GrubeCell};
use grube::{Rng, Tape, Tensor};
use proptest::prelude::*;

fn be_layer(k: usize, p: usize, q: usize, seed: u64) -> (ParamSet, EnsembleLinear) {
    let mut ps = ParamSet::new();
    let mut rng = Rng::new(seed);
    let layer = EnsembleLinear::new(&mut ps, "be", p, q, k, AdapterMask::ALL, &rng.fork("layer")).unwrap();
    init_adapters(&mut ps, &layer, InitScheme::RandomSign, &mut rng.fork("init")).unwrap();
    let b = random_matrix(k, q, 0.5, &mut rng);
    ps.get_mut(layer.b.unwrap()).data_mut().copy_from_slice(b.data());
    (ps, layer)
}

#[test]
fn member_loss_routes_only_to_its_adapters() {
    let (k, n, p, q) = (4, 3, 5, 2);
    let (ps, layer) = be_layer(k, p, q, 9);
    let mut rng = Rng::new(10);
    let x = random_matrix(n * k, p, 1.0, &mut rng);
    for target in 0..k {
        // Weight 1 on member `target`'s rows (row i*k + member), 0 elsewhere.
        let mut w = Tensor::zeros(&[n * k, q]);
        for i in 0..n {
            for j in 0..q {
                w.set(i * k + target, j, 1.0);
            }
        }
        let tape = Tape::new();
        let g = ps.bind(&tape);
        let out = layer.forward(&g, tape.constant(x.clone())).unwrap();
        let loss = weighted_sum(&g, tape.tanh(out), &w).unwrap();
        tape.backward(loss).unwrap();
        let mut grads = ps.clone();
        grads.zero_grad();
        grads.accumulate_grads(&g).unwrap();
        for id in [layer.r.unwrap(), layer.s.unwrap(), layer.b.unwrap()] {
            let t = grads.get(id);
            let cols = t.cols();
            let grad = t.grad().unwrap();
            for member in 0..k {
                let row = &grad[member * cols..(member + 1) * cols];
                let norm: f64 = row.iter().map(|v| v.abs()).sum();
                if member == target {
                    assert!(norm > 0.0, "{} row {member} should receive gradient", grads.name(id));
                } else {
                    assert_eq!(norm, 0.0, "{} row {member} leaked gradient", grads.name(id));
                }
            }
        }
        let wn: f64 = grads.get(layer.weight).grad().unwrap().iter().map(|v| v.abs()).sum();
        assert!(wn > 0.0);
    }
}

#[test]
fn shared_weight_gradient_sums_members() {
    let (k, n, p, q) = (3, 2, 4, 3);
    let (ps, layer) = be_layer(k, p, q, 4);
    let x = random_matrix(n * k, p, 1.0, &mut Rng::new(5));
    let grad_for = |members: &[usize]| {
        let mut w = Tensor::zeros(&[n * k, q]);
        for &m in members {
            for i in 0..n {
                for j in 0..q {
                    w.set(i * k + m, j, 1.0);
                }
            }
        }
        let tape = Tape::new();
        let g = ps.bind(&tape);
        let out = layer.forward(&g, tape.constant(x.clone())).unwrap();
        tape.backward(weighted_sum(&g, tape.tanh(out), &w).unwrap()).unwrap();
        let mut grads = ps.clone();
        grads.zero_grad();
        grads.accumulate_grads(&g).unwrap();
        grads.get(layer.weight).grad().unwrap().to_vec()
    };
    let all = grad_for(&[0, 1, 2]);
    let parts: Vec<Vec<f64>> = (0..k).map(|m| grad_for(&[m])).collect();
    for (i, a) in all.iter().enumerate() {
        let s: f64 = parts.iter().map(|p| p[i]).sum();
        assert!((a - s).abs() < 1e-12);
    }
}

#[test]
fn ensemble_loss_gradient_matches_finite_differences() {
    let mut rng = Rng::new(12);
    let (k, n) = (3, 4);
    let mut ps = ParamSet::new();
    let mu = ps.add("mu", random_matrix(n * k, 1, 1.0, &mut rng));
    let lv = ps.add("lv", random_matrix(n * k, 1, 1.0, &mut rng));
    let a = ps.add("A", random_matrix(k, 6, 1.0, &mut rng));
    let y = random_matrix(n * k, 1, 1.0, &mut rng);
    let err = grad_check(&ps, |g| {
        let t = g.tape;
        let terms = gaussian_nll_terms(t, g.var(mu), g.var(lv), t.constant(y.clone()))?;
        let members = member_losses(t, terms, k)?;
        let pen = orthogonality_penalty(t, g.var(a), 0.01)?;
        Ok(ensemble_loss(t, &members, &[pen])?.total)
    })
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn be_forward_gradients(k in 1usize..5, n in 1usize..4, p in 1usize..5, q in 1usize..5, seed in 0u64..1000) {
        let (mut ps, layer) = be_layer(k, p, q, seed);
        let mut rng = Rng::new(seed + 1);
        let x = ps.add("x", random_matrix(n * k, p, 1.0, &mut rng));
        let w = random_matrix(n * k, q, 1.0, &mut rng);
        let err = grad_check(&ps, |g| {
            let y = layer.forward(g, g.var(x))?;
            weighted_sum(g, g.tape.sigmoid(y), &w)
        }).unwrap();
        prop_assert!(err < 1e-6, "relative error {}", err);
    }

    #[test]
    fn grube_bptt_gradients(k in 1usize..4, steps in 1usize..5, mask in 0usize..7, seed in 0u64..1000) {
        let mut ps = ParamSet::new();
        let mut rng = Rng::new(seed);
        let cell = GrubeCell::new(&mut ps, "g", 1, 3, k, GateMask::ablation_grid()[mask], AdapterMask::ALL, &rng.fork("c")).unwrap();
        for l in cell.ensemble_gates() {
            init_adapters(&mut ps, l, InitScheme::RandomSign, &mut rng.fork("a")).unwrap();
        }
        let n = 2;
        let h0 = ps.add("h0", random_matrix(n * k, 3, 0.5, &mut rng));
        let seq = Tensor::new(&[n, steps, 1], (0..n * steps).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
        let w = random_matrix(n * k, 3, 1.0, &mut rng);
        let err = grad_check(&ps, |g| {
            let states = unroll(&cell, g, &seq, g.var(h0))?;
            weighted_sum(g, *states.last().unwrap(), &w)
        }).unwrap();
        prop_assert!(err < 1e-6, "relative error {}", err);
    }
}
