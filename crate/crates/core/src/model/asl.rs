//! Asymmetric loss for sigmoid outputs.
//!
//! Positives: `(1 - p)^gamma_pos * -ln p`.
//! Negatives: `p_m^gamma_neg * -ln(1 - p_m)` with the shifted probability
//! `p_m = max(p - margin, 0)`.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[P_MIN, 1 - P_MIN]` before any logarithm.
pub const P_MIN: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AslConfig {
    pub gamma_pos: f64,
    pub gamma_neg: f64,
    pub margin: f64,
}

impl Default for AslConfig {
    fn default() -> Self {
        Self {
            gamma_pos: 0.0,
            gamma_neg: 4.0,
            margin: 0.05,
        }
    }
}

impl AslConfig {
    /// Plain binary cross-entropy.
    pub fn bce() -> Self {
        Self {
            gamma_pos: 0.0,
            gamma_neg: 0.0,
            margin: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_pos >= 0.0 && self.gamma_neg >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ASL exponents must be non-negative, got {} / {}",
                self.gamma_pos, self.gamma_neg
            )));
        }
        if !(0.0..1.0).contains(&self.margin) {
            return Err(Error::InvalidArgument(format!(
                "ASL margin {} outside [0, 1)",
                self.margin
            )));
        }
        Ok(())
    }

    pub fn cell_loss(&self, p: f64, y: u8) -> f64 {
        let p = p.clamp(P_MIN, 1.0 - P_MIN);
        if y == 1 {
            (1.0 - p).powf(self.gamma_pos) * -p.ln()
        } else {
            let pm = (p - self.margin).max(0.0);
            if pm == 0.0 {
                return 0.0;
            }
            pm.powf(self.gamma_neg) * -(1.0 - pm).ln()
        }
    }

    /// Derivative of [`cell_loss`](Self::cell_loss) with respect to the
    /// pre-sigmoid logit. Zero inside the clamp region.
    pub fn cell_logit_grad(&self, p: f64, y: u8) -> f64 {
        if !(P_MIN..=1.0 - P_MIN).contains(&p) {
            return 0.0;
        }
        let dp_dz = p * (1.0 - p);
        if y == 1 {
            let g = self.gamma_pos;
            let q = 1.0 - p;
            // d/dp [q^g * -ln p] = g q^(g-1) ln p - q^g / p
            let focus = if g == 0.0 { 0.0 } else { g * q.powf(g - 1.0) * p.ln() };
            (focus - q.powf(g) / p) * dp_dz
        } else {
            let pm = p - self.margin;
            if pm <= 0.0 {
                return 0.0;
            }
            let g = self.gamma_neg;
            let nll = -(1.0 - pm).ln();
            let focus = if g == 0.0 { 0.0 } else { g * pm.powf(g - 1.0) * nll };
            (focus + pm.powf(g) / (1.0 - pm)) * dp_dz
        }
    }
}

/// Per-cell loss matrix.
pub fn asl_loss(p: ArrayView2<'_, f64>, y: ArrayView2<'_, u8>, cfg: &AslConfig) -> Result<Array2<f64>> {
    if p.dim() != y.dim() {
        return Err(Error::Shape(format!(
            "probabilities {:?} vs labels {:?}",
            p.dim(),
            y.dim()
        )));
    }
    Ok(Zip::from(p).and(y).map_collect(|&p, &y| cfg.cell_loss(p, y)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn bce(p: f64, y: u8) -> f64 {
        if y == 1 {
            -p.ln()
        } else {
            -(1.0 - p).ln()
        }
    }

    #[test]
    fn zero_exponents_reduce_to_bce() {
        let cfg = AslConfig::bce();
        for &p in &[0.01, 0.2, 0.5, 0.77, 0.999] {
            for y in [0, 1] {
                assert_relative_eq!(cfg.cell_loss(p, y), bce(p, y), max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn perfect_positive_is_near_zero() {
        let l = AslConfig::default().cell_loss(1.0 - 1e-7, 1);
        assert!(l.abs() < 1e-6, "{l}");
    }

    #[test]
    fn shifted_negative_by_hand() {
        let cfg = AslConfig {
            gamma_pos: 0.0,
            gamma_neg: 4.0,
            margin: 0.05,
        };
        let expected = 0.25f64.powi(4) * -(0.75f64).ln();
        assert_relative_eq!(cfg.cell_loss(0.3, 0), expected, max_relative = 1e-12);
        assert_relative_eq!(expected, 1.1237e-3, max_relative = 1e-4);
        // inside the margin the negative loss vanishes
        assert_eq!(cfg.cell_loss(0.04, 0), 0.0);
    }

    #[test]
    fn matrix_form_and_shape_check() {
        let p = array![[0.3, 0.9], [0.5, 0.1]];
        let y = array![[0u8, 1], [1, 0]];
        let cfg = AslConfig::default();
        let l = asl_loss(p.view(), y.view(), &cfg).unwrap();
        assert_eq!(l[[0, 0]], cfg.cell_loss(0.3, 0));
        assert_eq!(l[[1, 0]], cfg.cell_loss(0.5, 1));
        assert!(asl_loss(p.view(), array![[0u8]].view(), &cfg).is_err());
    }

    #[test]
    fn logit_grad_matches_finite_difference() {
        let sigmoid = |z: f64| 1.0 / (1.0 + (-z).exp());
        let configs = [
            AslConfig::bce(),
            AslConfig::default(),
            AslConfig { gamma_pos: 1.0, gamma_neg: 2.0, margin: 0.2 },
        ];
        for cfg in configs {
            for &z in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
                for y in [0, 1] {
                    let h = 1e-6;
                    let fd = (cfg.cell_loss(sigmoid(z + h), y) - cfg.cell_loss(sigmoid(z - h), y)) / (2.0 * h);
                    let an = cfg.cell_logit_grad(sigmoid(z), y);
                    assert!((fd - an).abs() <= 1e-7 + 1e-6 * an.abs(), "{cfg:?} z={z} y={y}: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn monotone_in_probability() {
        let cfg = AslConfig::default();
        let grid: Vec<f64> = (1..1000).map(|k| k as f64 / 1000.0).collect();
        for w in grid.windows(2) {
            assert!(cfg.cell_loss(w[1], 1) <= cfg.cell_loss(w[0], 1));
            assert!(cfg.cell_loss(w[1], 0) >= cfg.cell_loss(w[0], 0));
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(AslConfig { gamma_pos: -1.0, ..Default::default() }.validate().is_err());
        assert!(AslConfig { margin: 1.0, ..Default::default() }.validate().is_err());
        assert!(AslConfig::default().validate().is_ok());
    }
}
