//! Solver hyper-parameters.

use serde::{Deserialize, Serialize};

/// Hyper-parameters of the transport solver, consistency kernels and the
/// confidence loop. `Default` carries the reference values used throughout
/// the test suite and CLI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Entropic temperature of the transport problem (> 0).
    pub tau: f64,
    /// Semantic prior weight in the affinity kernel (>= 0).
    pub lambda: f64,
    /// Geometric RBF scale, inverse squared scene units (> 0).
    pub alpha_g: f64,
    /// Semantic RBF scale, dimensionless (> 0).
    pub alpha_f: f64,
    /// Stability constant inside the semantic log term (> 0).
    pub eps_sem: f64,
    /// Sinkhorn iterations per solve (>= 1).
    pub sinkhorn_iters: usize,
    /// Outer refinement passes after the fine phase (>= 0).
    pub refine_iters: usize,
    /// Confidence fixed-point iterations per phase (>= 1).
    pub conf_iters: usize,
    /// Loss weights for the diagnostic total.
    pub gamma_cycl: f64,
    pub gamma_pose: f64,
    pub gamma_sem: f64,
    pub gamma_conf: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            tau: 0.01,
            lambda: 3.0,
            alpha_g: 60.0,
            alpha_f: 4.0,
            eps_sem: 1e-6,
            sinkhorn_iters: 2,
            refine_iters: 1,
            conf_iters: 3,
            gamma_cycl: 0.5,
            gamma_pose: 1.0,
            gamma_sem: 1.0,
            gamma_conf: 10.0,
        }
    }
}

impl HyperParams {
    /// Basic range validation; returns the offending field name.
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err("tau");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err("lambda");
        }
        if !(self.alpha_g > 0.0 && self.alpha_g.is_finite()) {
            return Err("alpha_g");
        }
        if !(self.alpha_f > 0.0 && self.alpha_f.is_finite()) {
            return Err("alpha_f");
        }
        if !(self.eps_sem > 0.0 && self.eps_sem.is_finite()) {
            return Err("eps_sem");
        }
        if self.sinkhorn_iters < 1 {
            return Err("sinkhorn_iters");
        }
        if self.conf_iters < 1 {
            return Err("conf_iters");
        }
        for (g, name) in [
            (self.gamma_cycl, "gamma_cycl"),
            (self.gamma_pose, "gamma_pose"),
            (self.gamma_sem, "gamma_sem"),
            (self.gamma_conf, "gamma_conf"),
        ] {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(name);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_reference_values() {
        let hp = HyperParams::default();
        assert_eq!(hp.tau, 0.01);
        assert_eq!(hp.lambda, 3.0);
        assert_eq!(hp.alpha_g, 60.0);
        assert_eq!(hp.alpha_f, 4.0);
        assert_eq!(hp.sinkhorn_iters, 2);
        assert_eq!(hp.refine_iters, 1);
        assert_eq!(hp.gamma_cycl, 0.5);
        assert_eq!(hp.gamma_pose, 1.0);
        assert_eq!(hp.gamma_sem, 1.0);
        assert_eq!(hp.gamma_conf, 10.0);
        assert!(hp.validate().is_ok());
    }

    #[test]
    fn validate_flags_bad_field() {
        let hp = HyperParams {
            tau: 0.0,
            ..Default::default()
        };
        assert_eq!(hp.validate(), Err("tau"));
    }

    #[test]
    fn json_round_trip_with_partial_fields() {
        let hp: HyperParams = serde_json::from_str(r#"{"tau": 0.5}"#).unwrap();
        assert_eq!(hp.tau, 0.5);
        assert_eq!(hp.lambda, 3.0);
        assert!(serde_json::from_str::<HyperParams>(r#"{"tua": 0.5}"#).is_err());
    }
}
