//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::model::NetworkParams;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update of a flat parameter slice at step `t >= 1`.
///
/// Returns an error, leaving `params` partially updated, if any new value
/// is non-finite; callers are expected to restore a snapshot.
pub fn adam_update<T: Real>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    hyper: &AdamHyper,
    t: u64,
) -> Result<()> {
    assert!(t >= 1, "adam step index starts at 1");
    assert!(
        params.len() == grads.len() && params.len() == m.len() && params.len() == v.len(),
        "adam buffers must match the parameter length"
    );
    let b1 = T::from_f64_lossy(hyper.beta1);
    let b2 = T::from_f64_lossy(hyper.beta2);
    let one = T::one();
    let correct1 = 1.0 - hyper.beta1.powi(t.min(i32::MAX as u64) as i32);
    let correct2 = 1.0 - hyper.beta2.powi(t.min(i32::MAX as u64) as i32);
    // lr * m_hat / (sqrt(v_hat) + eps) with the corrections folded in
    let step = T::from_f64_lossy(hyper.lr / correct1);
    let inv_c2 = T::from_f64_lossy(1.0 / correct2);
    let eps = T::from_f64_lossy(hyper.eps);
    let mut finite = true;
    for (((p, &g), mi), vi) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = b1 * *mi + (one - b1) * g;
        *vi = b2 * *vi + (one - b2) * g * g;
        *p = *p - step * *mi / ((*vi * inv_c2).sqrt() + eps);
        finite &= p.is_finite();
    }
    if finite {
        Ok(())
    } else {
        Err(Error::Diverged("non-finite parameter after Adam update".into()))
    }
}

/// First and second moment estimates shaped like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: NetworkParams<T>,
    pub v: NetworkParams<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(widths: &[usize]) -> Self {
        AdamState {
            m: NetworkParams::zeros_like(widths),
            v: NetworkParams::zeros_like(widths),
            t: 0,
        }
    }

    pub fn for_params(params: &NetworkParams<T>) -> Self {
        let mut widths: Vec<usize> = params.layers.iter().map(|l| l.fan_in).collect();
        widths.extend(params.layers.last().map(|l| l.fan_out));
        Self::new(&widths)
    }

    /// Advances the step counter and updates every layer.
    pub fn step(&mut self, params: &mut NetworkParams<T>, grads: &NetworkParams<T>, hyper: &AdamHyper) -> Result<()> {
        assert!(
            params.same_shape(grads) && params.same_shape(&self.m),
            "adam state, gradients and parameters must share a shape"
        );
        self.t += 1;
        let mut result = Ok(());
        for (((p, g), m), v) in params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m.layers)
            .zip(&mut self.v.layers)
        {
            let r1 = adam_update(&mut p.weights, &g.weights, &mut m.weights, &mut v.weights, hyper, self.t);
            let r2 = adam_update(&mut p.biases, &g.biases, &mut m.biases, &mut v.biases, hyper, self.t);
            if result.is_ok() {
                result = r1.and(r2);
            }
        }
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain scalar Adam written out term by term.
    fn reference_adam(theta0: f64, grad: impl Fn(f64) -> f64, hyper: &AdamHyper, steps: usize) -> Vec<f64> {
        let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
        let mut path = Vec::new();
        for t in 1..=steps {
            let g = grad(theta);
            m = hyper.beta1 * m + (1.0 - hyper.beta1) * g;
            v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g;
            let mh = m / (1.0 - hyper.beta1.powi(t as i32));
            let vh = v / (1.0 - hyper.beta2.powi(t as i32));
            theta -= hyper.lr * mh / (vh.sqrt() + hyper.eps);
            path.push(theta);
        }
        path
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.5f64, -2.0, 3.0];
        let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
        adam_update(&mut p, &[0.0; 3], &mut m, &mut v, &AdamHyper::default(), 1).unwrap();
        assert_eq!(p, vec![0.5, -2.0, 3.0]);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let hyper = AdamHyper { lr: 0.01, ..Default::default() };
        let mut p = vec![1.0f64, 1.0, 1.0];
        let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
        adam_update(&mut p, &[3.0, -1e-3, 250.0], &mut m, &mut v, &hyper, 1).unwrap();
        assert!((p[0] - 0.99).abs() < 1e-8);
        assert!((p[1] - 1.01).abs() < 1e-6);
        assert!((p[2] - 0.99).abs() < 1e-8);
    }

    #[test]
    fn quadratic_converges_like_reference() {
        let hyper = AdamHyper { lr: 0.1, ..Default::default() };
        let reference = reference_adam(1.0, |th| 2.0 * th, &hyper, 200);
        assert!(reference.last().unwrap().abs() < 0.05);
        let mut p = vec![1.0f64];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        for (t, expected) in (1..=200).zip(&reference) {
            let g = [2.0 * p[0]];
            adam_update(&mut p, &g, &mut m, &mut v, &hyper, t).unwrap();
            assert!((p[0] - expected).abs() < 1e-12);
        }
        assert!(p[0].abs() < 0.05);
    }

    #[test]
    fn non_finite_update_is_reported() {
        let mut p = vec![1.0f32];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        let r = adam_update(&mut p, &[f32::NAN], &mut m, &mut v, &AdamHyper::default(), 1);
        assert!(matches!(r, Err(Error::Diverged(_))));
    }

    #[test]
    fn state_matches_param_shapes() {
        let params = NetworkParams::<f32>::zeros_like(&[8, 5, 5, 2]);
        let state = AdamState::for_params(&params);
        assert!(state.m.same_shape(&params));
        assert!(state.v.same_shape(&params));
    }
}
