use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::PogarsParams;
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments per parameter, keyed like the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<S> {
    pub step: u64,
    pub m: BTreeMap<String, Vec<S>>,
    pub v: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    /// Zero moments shaped like `params`.
    pub fn new(params: &PogarsParams<S>) -> Self {
        let zeros: BTreeMap<String, Vec<S>> = params
            .iter()
            .map(|(k, t)| (k.clone(), vec![S::zero(); t.len()]))
            .collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Checks that moment arrays mirror the parameter shapes.
    pub fn check(&self, params: &PogarsParams<S>) -> Result<(), TrainError> {
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(TrainError::OptimizerMismatch(format!(
                "{} parameters, {} / {} moment arrays",
                params.len(),
                self.m.len(),
                self.v.len()
            )));
        }
        for (name, t) in params.iter() {
            let ok = self.m.get(name).map(Vec::len) == Some(t.len())
                && self.v.get(name).map(Vec::len) == Some(t.len());
            if !ok {
                return Err(TrainError::OptimizerMismatch(format!(
                    "moments of {name} do not match its shape"
                )));
            }
        }
        Ok(())
    }

    /// One update of every parameter from its accumulated gradient.
    pub fn step(&mut self, params: &mut PogarsParams<S>, lr: f64) -> Result<(), TrainError> {
        self.check(params)?;
        if let Some((name, _)) = params.iter().find(|(_, t)| t.grad().is_none()) {
            return Err(TrainError::MissingGradient(name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = S::from_f64_lossy(BETA1);
        let b2 = S::from_f64_lossy(BETA2);
        let one = S::one();
        let c1 = S::from_f64_lossy(1.0 - BETA1.powi(t));
        let c2 = S::from_f64_lossy(1.0 - BETA2.powi(t));
        let lr = S::from_f64_lossy(lr);
        let eps = S::from_f64_lossy(EPSILON);
        for (name, tensor) in params.iter_mut() {
            let g = tensor.grad().expect("checked above").to_vec();
            let m = self.m.get_mut(name).expect("checked above");
            let v = self.v.get_mut(name).expect("checked above");
            let theta = tensor.values_mut();
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            if !theta.iter().all(|x| x.is_finite()) {
                return Err(TrainError::NonFinite(name.clone()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PogarsConfig;
    use crate::tensor::Tensor;

    fn one_param(theta: f64, g: Option<f64>) -> PogarsParams<f64> {
        let mut t = Tensor::<f64>::from_f64([1], &[theta]).unwrap();
        if let Some(g) = g {
            t.accumulate_grad(&[g]).unwrap();
        }
        PogarsParams::from_tensors([("w".to_string(), t)].into_iter().collect())
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = one_param(1.0, Some(1.0));
        let mut s = AdamState::new(&p);
        s.step(&mut p, 0.1).unwrap();
        let want = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.get("w").unwrap().values()[0] - want).abs() < 1e-15);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let cfg = PogarsConfig::tiny();
        let mut p = PogarsParams::<f64>::init(&cfg, 3).unwrap();
        let before = p.clone();
        for (_, t) in p.iter_mut() {
            let zeros = vec![0.0; t.len()];
            t.accumulate_grad(&zeros).unwrap();
        }
        let mut s = AdamState::new(&p);
        s.step(&mut p, 1e-3).unwrap();
        for ((_, a), (_, b)) in p.iter().zip(before.iter()) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = one_param(1.0, None);
        let mut s = AdamState::new(&p);
        assert!(matches!(s.step(&mut p, 0.1), Err(TrainError::MissingGradient(n)) if n == "w"));
        assert_eq!(s.step, 0);
    }
}
