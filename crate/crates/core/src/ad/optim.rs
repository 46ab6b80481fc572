use super::{Array, ParamStore, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub step: u64,
    pub m: Vec<Array<F>>,
    pub v: Vec<Array<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &ParamStore<F>) -> Self {
        Self { step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }
}

/// One AdamW update with bias correction and decoupled weight decay:
/// `p ← p − lr·(m̂/(√v̂ + ε) + wd·p)`.
pub fn adamw_step<F: Real>(
    params: &mut ParamStore<F>,
    grads: &[Array<F>],
    state: &mut AdamState<F>,
    hp: &AdamW,
) {
    assert_eq!(grads.len(), params.len(), "one gradient per parameter tensor");
    state.step += 1;
    let t = state.step as i32;
    let c = |x: f64| F::from_f64(x).unwrap();
    let (b1, b2) = (c(hp.beta1), c(hp.beta2));
    let bc1 = c(1.0 - hp.beta1.powi(t));
    let bc2 = c(1.0 - hp.beta2.powi(t));
    let (lr, eps, wd) = (c(hp.lr), c(hp.eps), c(hp.weight_decay));
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let i = id.index();
        let p = params.get_mut(id).data_mut();
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (F::one() - b1) * g[j];
            v[j] = b2 * v[j] + (F::one() - b2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] = p[j] - lr * (mhat / (vhat.sqrt() + eps) + wd * p[j]);
        }
    }
}
