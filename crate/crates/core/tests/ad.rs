use chartformer::ad::{adamw_step, AdamState, AdamW, Array, ParamId, ParamStore, Real, Tape, Var};
use chartformer::error::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build<F> = dyn Fn(&mut Tape<'_, F>, &[Var]) -> Var;
type Case<F> = (&'static str, Vec<Vec<usize>>, Box<Build<F>>);

fn random_store<F: Real>(shapes: &[&[usize]], seed: u64) -> (ParamStore<F>, Vec<ParamId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let n: usize = s.iter().product();
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            store.add(format!("x{i}"), Array::from_f64(s, &v).unwrap())
        })
        .collect();
    (store, ids)
}

/// Scalar loss `Σ r ⊙ out` with fixed random `r`, so every output entry
/// receives a distinct upstream gradient.
fn project<F: Real>(tape: &mut Tape<'_, F>, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).shape().to_vec();
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r = tape.constant(Array::from_f64(&shape, &r).unwrap());
    let prod = tape.mul(out, r).unwrap();
    tape.sum(prod)
}

/// Same projection as `project`, but reduced in f64 so harness rounding does
/// not swamp the primitive's own error.
fn loss_value<F: Real>(store: &ParamStore<F>, ids: &[ParamId], build: &Build<F>, seed: u64) -> f64 {
    let mut tape = Tape::new(store);
    let xs: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
    let out = build(&mut tape, &xs);
    let out = tape.value(out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    out.data().iter().map(|v| v.to_f64().unwrap() * rng.gen_range(-1.0..1.0)).sum()
}

/// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
fn max_rel_error<F: Real>(shapes: &[&[usize]], build: &Build<F>, seed: u64, eps: f64, floor: f64) -> f64 {
    let (mut store, ids) = random_store::<F>(shapes, seed);
    let analytic = {
        let mut tape = Tape::new(&store);
        let xs: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
        let out = build(&mut tape, &xs);
        let l = project(&mut tape, out, seed);
        tape.backward(l).unwrap().into_params()
    };
    let mut worst = 0.0f64;
    for (p, &id) in ids.iter().enumerate() {
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + F::from_f64(eps).unwrap();
            let up = loss_value(&store, &ids, build, seed);
            store.get_mut(id).data_mut()[i] = orig - F::from_f64(eps).unwrap();
            let down = loss_value(&store, &ids, build, seed);
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[p].data()[i].to_f64().unwrap();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    worst
}

fn primitives<F: Real>() -> Vec<Case<F>> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], Box::new(|t, x| t.matmul(x[0], x[1]).unwrap())),
        ("matmul_vec", vec![vec![4], vec![4, 3]], Box::new(|t, x| t.matmul(x[0], x[1]).unwrap())),
        ("linear", vec![vec![2, 3], vec![3, 4], vec![4]], Box::new(|t, x| t.linear(x[0], x[1], Some(x[2])).unwrap())),
        ("linear_t", vec![vec![3], vec![5, 3], vec![5]], Box::new(|t, x| t.linear_t(x[0], x[1], Some(x[2])).unwrap())),
        ("add", vec![vec![2, 3], vec![2, 3]], Box::new(|t, x| t.add(x[0], x[1]).unwrap())),
        ("mul", vec![vec![5], vec![5]], Box::new(|t, x| t.mul(x[0], x[1]).unwrap())),
        ("scale", vec![vec![4]], Box::new(|t, x| t.scale(x[0], F::from_f64(-1.7).unwrap()))),
        ("gelu", vec![vec![6]], Box::new(|t, x| t.gelu(x[0]))),
        ("sigmoid", vec![vec![4]], Box::new(|t, x| t.sigmoid(x[0]))),
        ("log_sigmoid", vec![vec![4]], Box::new(|t, x| t.log_sigmoid(x[0]))),
        (
            "layer_norm",
            vec![vec![3, 5], vec![5], vec![5]],
            Box::new(|t, x| t.layer_norm(x[0], x[1], x[2]).unwrap()),
        ),
        (
            "attention",
            vec![vec![4, 6], vec![4, 6], vec![4, 6]],
            Box::new(|t, x| t.attention(x[0], x[1], x[2], 2).unwrap()),
        ),
        ("softmax", vec![vec![2, 5]], Box::new(|t, x| t.softmax(x[0]).unwrap())),
        ("log_softmax", vec![vec![7]], Box::new(|t, x| t.log_softmax(x[0]).unwrap())),
        ("stack", vec![vec![3], vec![3], vec![3]], Box::new(|t, x| t.stack(&[x[0], x[2], x[1]]).unwrap())),
        ("rows", vec![vec![4, 3]], Box::new(|t, x| t.rows(x[0], 1, 2).unwrap())),
        ("row", vec![vec![4, 3]], Box::new(|t, x| t.row(x[0], 3).unwrap())),
        ("reshape", vec![vec![2, 3]], Box::new(|t, x| t.reshape(x[0], &[3, 2]).unwrap())),
        (
            "sum",
            vec![vec![2, 2]],
            Box::new(|t, x| {
                let s = t.sum(x[0]);
                t.mul(s, s).unwrap()
            }),
        ),
        ("pick", vec![vec![5]], Box::new(|t, x| t.pick(x[0], 2).unwrap())),
        (
            "st_mix_fixed",
            vec![vec![4], vec![4], vec![4], vec![3]],
            Box::new(|t, x| {
                let soft = chartformer::ad::kernels::softmax(t.value(x[3]).data());
                t.st_mix(&x[..3], x[3], soft, 1, false).unwrap()
            }),
        ),
    ]
}

#[test]
fn every_primitive_matches_finite_differences_in_f64() {
    for (k, (name, shapes, build)) in primitives::<f64>().into_iter().enumerate() {
        let shapes: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        let err = max_rel_error(&shapes, &*build, 100 + k as u64, 1e-5, 1e-6);
        assert!(err < 1e-6, "{name}: relative error {err:e}");
    }
}

#[test]
fn every_primitive_matches_finite_differences_in_f32() {
    // eps = 1e-3 in single precision; tiny gradients are compared absolutely
    for (k, (name, shapes, build)) in primitives::<f32>().into_iter().enumerate() {
        let shapes: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        let err = max_rel_error(&shapes, &*build, 200 + k as u64, 1e-3, 1e-1);
        assert!(err < 1e-3, "{name}: relative error {err:e}");
    }
}

#[test]
fn straight_through_logit_gradient_is_the_soft_mixture_gradient() {
    // backward through st_mix w.r.t. the logits equals d/dlogits of Σ softmax(l)_k ⟨r, c_k⟩
    let (store, ids) = random_store::<f64>(&[&[4], &[4], &[4], &[3]], 7);
    let mut tape = Tape::new(&store);
    let xs: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
    let soft = chartformer::ad::kernels::softmax(tape.value(xs[3]).data());
    let e = tape.st_mix(&xs[..3], xs[3], soft, 0, true).unwrap();
    assert_eq!(tape.value(e), store.get(ids[0]));
    let l = project(&mut tape, e, 7);
    let st = tape.backward(l).unwrap().param(ids[3]).clone();

    let soft_loss: Box<Build<f64>> = Box::new(|t, x| {
        let w = t.softmax(x[3]).unwrap();
        let c = t.stack(&x[..3]).unwrap();
        t.matmul(w, c).unwrap()
    });
    let mut tape = Tape::new(&store);
    let xs: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
    let m = soft_loss(&mut tape, &xs);
    let l = project(&mut tape, m, 7);
    let relaxed = tape.backward(l).unwrap().param(ids[3]).clone();
    for (a, b) in st.data().iter().zip(relaxed.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn store_with(values: &[(&[usize], &[f64])]) -> (ParamStore<f64>, Vec<ParamId>) {
    let mut store = ParamStore::new();
    let ids = values
        .iter()
        .enumerate()
        .map(|(i, (s, v))| store.add(format!("v{i}"), Array::from_f64(s, v).unwrap()))
        .collect();
    (store, ids)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn matmul_examples() {
    let (s, ids) = store_with(&[(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), (&[2, 2], &[1.0, 2.0, 3.0, 4.0])]);
    let mut t = Tape::new(&s);
    let (a, b) = (t.param(ids[0]), t.param(ids[1]));
    let c = t.matmul(a, b).unwrap();
    assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);

    let (s, ids) = store_with(&[(&[1, 2], &[1.0, 0.0]), (&[2, 1], &[0.0, 5.0])]);
    let mut t = Tape::new(&s);
    let (a, b) = (t.param(ids[0]), t.param(ids[1]));
    let c = t.matmul(a, b).unwrap();
    assert_eq!(t.value(c).shape(), &[1, 1]);
    assert_eq!(t.value(c).data(), &[0.0]);

    let (s, ids) = store_with(&[(&[2, 3], &[0.0; 6]), (&[2, 2], &[0.0; 4])]);
    let mut t = Tape::new(&s);
    let (a, b) = (t.param(ids[0]), t.param(ids[1]));
    assert!(matches!(t.matmul(a, b), Err(Error::Dimension(_))));
}

#[test]
fn softmax_examples() {
    let cases: [(&[f64], &[f64]); 3] = [
        (&[0.0, 0.0], &[0.5, 0.5]),
        (&[1000.0, 0.0], &[1.0, 0.0]),
        (&[0.0, 3f64.ln()], &[0.25, 0.75]),
    ];
    for (x, want) in cases {
        let (s, ids) = store_with(&[(&[2], x)]);
        let mut t = Tape::new(&s);
        let v = t.param(ids[0]);
        let y = t.softmax(v).unwrap();
        assert!(close(t.value(y).data(), want, 1e-12), "{x:?}");
        assert!((t.value(y).data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    // empty vectors cannot be built, so softmax never sees one
    assert!(matches!(Array::<f64>::new(vec![0], vec![]), Err(Error::Dimension(_))));
}

#[test]
fn sigmoid_examples() {
    let (s, ids) = store_with(&[(&[3], &[0.0, 1e4, 3f64.ln()])]);
    let mut t = Tape::new(&s);
    let v = t.param(ids[0]);
    let y = t.sigmoid(v);
    let y = t.value(y).data().to_vec();
    assert_eq!(y[0], 0.5);
    assert!((y[1] - 1.0).abs() < 1e-12 && y[1].is_finite());
    assert!((y[2] - 0.75).abs() < 1e-12);

    let (s, ids) = store_with(&[(&[2], &[-1e4, 1e4])]);
    let mut t = Tape::new(&s);
    let v = t.param(ids[0]);
    let y = t.sigmoid(v);
    assert!(t.value(y).is_finite());
}

#[test]
fn layer_norm_examples() {
    let norm = |x: &[f64]| {
        let d = x.len();
        let (s, ids) = store_with(&[(&[d], x), (&[d], &vec![1.0; d]), (&[d], &vec![0.0; d])]);
        let mut t = Tape::new(&s);
        let v: Vec<Var> = ids.iter().map(|&i| t.param(i)).collect();
        let y = t.layer_norm(v[0], v[1], v[2]).unwrap();
        t.value(y).data().to_vec()
    };
    assert!(close(&norm(&[1.0, 1.0, 1.0, 1.0]), &[0.0; 4], 1e-6));
    assert!(close(&norm(&[1.0, -1.0]), &[1.0, -1.0], 1e-6));
    let y = norm(&[0.3, -2.0, 5.0, 1.1, 0.0]);
    let mean = y.iter().sum::<f64>() / 5.0;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
    assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-5);
}

#[test]
fn backward_trivial_cases() {
    let (s, ids) = store_with(&[(&[3], &[1.0, 2.0, 3.0]), (&[2, 2], &[4.0; 4]), (&[2], &[0.0; 2])]);
    let mut t = Tape::new(&s);
    let a = t.param(ids[0]);
    let b = t.param(ids[1]);
    let (sa, sb) = (t.sum(a), t.sum(b));
    let loss = t.add(sa, sb).unwrap();
    let g = t.backward(loss).unwrap();
    assert!(g.param(ids[0]).data().iter().all(|&v| v == 1.0));
    assert!(g.param(ids[1]).data().iter().all(|&v| v == 1.0));
    // never touched: zero gradient
    assert!(g.param(ids[2]).data().iter().all(|&v| v == 0.0));

    let mut t = Tape::new(&s);
    let _ = t.param(ids[0]);
    let c = t.constant(Array::scalar(2.5));
    let g = t.backward(c).unwrap();
    assert!(g.params().iter().all(|p| p.data().iter().all(|&v| v == 0.0)));

    let mut t = Tape::new(&s);
    let a = t.param(ids[0]);
    assert!(matches!(t.backward(a), Err(Error::Contract(_))));
}

#[test]
fn backward_twice_is_identical() {
    let (s, ids) = random_store::<f64>(&[&[4, 6], &[4, 6], &[4, 6]], 3);
    let mut t = Tape::new(&s);
    let x: Vec<Var> = ids.iter().map(|&i| t.param(i)).collect();
    let y = t.attention(x[0], x[1], x[2], 3).unwrap();
    let l = project(&mut t, y, 3);
    let a = t.backward(l).unwrap().into_params();
    let b = t.backward(l).unwrap().into_params();
    assert_eq!(a, b);
}

#[test]
fn adamw_examples() {
    let scalar = |p: f64| {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("p", Array::scalar(p));
        (s, id)
    };
    // zero gradient and no decay leave parameters unchanged
    let (mut s, id) = scalar(0.7);
    let mut st = AdamState::new(&s);
    let hp = AdamW { lr: 0.1, weight_decay: 0.0, ..AdamW::default() };
    adamw_step(&mut s, &[Array::scalar(0.0)], &mut st, &hp);
    assert_eq!(s.get(id).item(), 0.7);

    // bias-corrected first step moves by lr·g/(|g|+eps)
    let (mut s, id) = scalar(1.0);
    let mut st = AdamState::new(&s);
    adamw_step(&mut s, &[Array::scalar(1.0)], &mut st, &hp);
    assert!((s.get(id).item() - 0.9).abs() < 1e-6);

    // decay only: p ← p − lr·wd·p
    let (mut s, id) = scalar(1.0);
    let mut st = AdamState::new(&s);
    let hp = AdamW { lr: 0.1, weight_decay: 0.1, ..AdamW::default() };
    adamw_step(&mut s, &[Array::scalar(0.0)], &mut st, &hp);
    assert!((s.get(id).item() - 0.99).abs() < 1e-12);
}

#[test]
fn non_finite_values_are_detected() {
    let (s, ids) = store_with(&[(&[2], &[f64::NAN, 1.0])]);
    assert!(!s.get(ids[0]).is_finite());
    assert!(Array::<f64>::from_f64(&[2], &[1.0]).is_err());
}
