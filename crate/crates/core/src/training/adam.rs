use crate::networks::ParamSet;
use crate::tensor::Real;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
}

/// First and second moment estimates for one network, plus its step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update of `params` along `grads`.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>, hyper: &AdamHyper) {
        self.t += 1;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let b1 = T::from_f64_lossy(hyper.beta1);
        let b2 = T::from_f64_lossy(hyper.beta2);
        let one = T::one();
        let c1 = T::from_f64_lossy(1.0 - hyper.beta1.powi(t));
        let c2 = T::from_f64_lossy(1.0 - hyper.beta2.powi(t));
        let lr = T::from_f64_lossy(hyper.learning_rate);
        let eps = T::from_f64_lossy(ADAM_EPS);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            debug_assert_eq!(p.name, g.name);
            for (((pv, &gv), mv), vv) in p
                .data
                .iter_mut()
                .zip(&g.data)
                .zip(m.data.iter_mut())
                .zip(v.data.iter_mut())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("w", &[1], vec![v]);
        p
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // with bias correction the first step is lr * sign(g) (up to eps)
        let hyper = AdamHyper {
            learning_rate: 0.1,
            beta1: 0.5,
            beta2: 0.999,
        };
        let mut p = one_param(1.0);
        let mut st = AdamState::new(&p);
        st.step(&mut p, &one_param(-3.0), &hyper);
        assert!((p.scalar(0) - 1.1).abs() < 1e-9);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_rate_leaves_params_bitwise() {
        let hyper = AdamHyper {
            learning_rate: 0.0,
            beta1: 0.5,
            beta2: 0.999,
        };
        let mut p = one_param(0.123);
        let mut st = AdamState::new(&p);
        for g in [0.0, 5.0, -1.0] {
            st.step(&mut p, &one_param(g), &hyper);
        }
        assert_eq!(p.scalar(0).to_bits(), 0.123f64.to_bits());
    }
}
