use serde::{Deserialize, Serialize};

/// Operating direction of a converter, seen from its AC side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConverterDirection {
    /// Absorbs active power from the AC grid.
    Rectifier,
    /// Injects active power into the AC grid.
    Inverter,
}

impl ConverterDirection {
    /// Direction for an AC-side active-power injection `p_s` (positive into the grid).
    pub fn from_injection(p_s: f64) -> Self {
        if p_s < 0.0 {
            ConverterDirection::Rectifier
        } else {
            ConverterDirection::Inverter
        }
    }
}

/// Quadratic converter loss model `a + b*i + c*i^2` on the converter base,
/// with `c` depending on the power direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConverterLossModel {
    pub a: f64,
    pub b: f64,
    pub c_rectifier: f64,
    pub c_inverter: f64,
}

impl ConverterLossModel {
    pub const LOSSLESS: ConverterLossModel = ConverterLossModel {
        a: 0.0,
        b: 0.0,
        c_rectifier: 0.0,
        c_inverter: 0.0,
    };

    /// Losses (pu) at current magnitude `i_s` (pu).
    pub fn losses(&self, i_s: f64, direction: ConverterDirection) -> f64 {
        let c = match direction {
            ConverterDirection::Rectifier => self.c_rectifier,
            ConverterDirection::Inverter => self.c_inverter,
        };
        self.a + self.b * i_s + c * i_s * i_s
    }

    /// Derivative of the losses with respect to the current magnitude.
    pub fn d_losses(&self, i_s: f64, direction: ConverterDirection) -> f64 {
        let c = match direction {
            ConverterDirection::Rectifier => self.c_rectifier,
            ConverterDirection::Inverter => self.c_inverter,
        };
        self.b + 2.0 * c * i_s
    }

    pub fn validate(&self) -> crate::Result<()> {
        let all = [self.a, self.b, self.c_rectifier, self.c_inverter];
        if all.iter().any(|v| !v.is_finite()) || self.a < 0.0 {
            return Err(crate::Error::data("converter loss coefficients must be finite with a >= 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE: ConverterLossModel = ConverterLossModel {
        a: 5.25e-3,
        b: 1.65e-3,
        c_rectifier: 2.10e-3,
        c_inverter: 3.14e-3,
    };

    #[test]
    fn no_load_losses() {
        assert_eq!(TABLE.losses(0.0, ConverterDirection::Inverter), 5.25e-3);
        assert_eq!(TABLE.losses(0.0, ConverterDirection::Rectifier), 5.25e-3);
    }

    #[test]
    fn rated_current_inverter() {
        assert!((TABLE.losses(1.0, ConverterDirection::Inverter) - 1.004e-2).abs() < 1e-15);
        assert!((TABLE.losses(1.0, ConverterDirection::Rectifier) - 9.0e-3).abs() < 1e-15);
    }

    #[test]
    fn continuous_at_zero_current() {
        for dir in [ConverterDirection::Inverter, ConverterDirection::Rectifier] {
            let mut prev = f64::INFINITY;
            for k in 1..12 {
                let i = 10f64.powi(-k);
                let d = TABLE.losses(i, dir) - TABLE.losses(0.0, dir);
                assert!(d >= 0.0 && d < prev);
                prev = d;
            }
            assert!(prev < 1e-13);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let h = 1e-6;
        let fd = (TABLE.losses(0.7 + h, ConverterDirection::Inverter) - TABLE.losses(0.7 - h, ConverterDirection::Inverter))
            / (2.0 * h);
        assert!((fd - TABLE.d_losses(0.7, ConverterDirection::Inverter)).abs() < 1e-9);
    }
}
