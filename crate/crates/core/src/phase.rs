//! Wall-clock time to phase input.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    /// `x = t / T`, one input.
    Linear,
    /// `x = [sin(2πt/T), cos(2πt/T)]`, two inputs, periodic in `T`.
    Rhythmic,
}

impl PhaseMode {
    pub fn width(self) -> usize {
        match self {
            PhaseMode::Linear => 1,
            PhaseMode::Rhythmic => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PhaseMode::Linear => "linear",
            PhaseMode::Rhythmic => "rhythmic",
        }
    }
}

impl std::str::FromStr for PhaseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(PhaseMode::Linear),
            "rhythmic" => Ok(PhaseMode::Rhythmic),
            other => Err(Error::arg(format!("unknown phase mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub mode: PhaseMode,
    pub duration: f64,
}

impl PhaseSpec {
    pub fn new(mode: PhaseMode, duration: f64) -> Result<Self> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(Error::arg(format!("duration must be positive, got {duration}")));
        }
        Ok(PhaseSpec { mode, duration })
    }

    pub fn phase(&self, t: f64) -> Result<Vec<f64>> {
        match self.mode {
            PhaseMode::Linear => Ok(vec![linear_phase(t, self.duration)?]),
            PhaseMode::Rhythmic => Ok(rhythmic_phase(t, self.duration)?.to_vec()),
        }
    }
}

pub fn linear_phase(t: f64, duration: f64) -> Result<f64> {
    if !(duration > 0.0) {
        return Err(Error::arg(format!("duration must be positive, got {duration}")));
    }
    if !(0.0..=duration).contains(&t) {
        return Err(Error::arg(format!("time {t} outside [0, {duration}]")));
    }
    Ok(t / duration)
}

/// Periodic encoding; `t` may run past `duration`.
pub fn rhythmic_phase(t: f64, duration: f64) -> Result<[f64; 2]> {
    if !(duration > 0.0) {
        return Err(Error::arg(format!("duration must be positive, got {duration}")));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::arg(format!("time {t} must be non-negative")));
    }
    // Reducing to one period first makes t and t + kT land on the same input,
    // and puts the quarter points on exact values.
    let cycles = t / duration;
    let frac = cycles - cycles.floor();
    let quarter = frac * 4.0;
    if quarter == quarter.round() {
        return Ok(match quarter as u8 {
            0 | 4 => [0.0, 1.0],
            1 => [1.0, 0.0],
            2 => [0.0, -1.0],
            _ => [-1.0, 0.0],
        });
    }
    let angle = TAU * frac;
    Ok([angle.sin(), angle.cos()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_examples() {
        assert_eq!(linear_phase(0.0, 2.0).unwrap(), 0.0);
        assert_eq!(linear_phase(2.0, 2.0).unwrap(), 1.0);
        assert_eq!(linear_phase(1.0, 2.0).unwrap(), 0.5);
        assert!(linear_phase(2.5, 2.0).is_err());
        assert!(linear_phase(-0.1, 2.0).is_err());
    }

    #[test]
    fn rhythmic_examples() {
        let t = 3.0;
        assert_eq!(rhythmic_phase(0.0, t).unwrap(), [0.0, 1.0]);
        assert_eq!(rhythmic_phase(t / 4.0, t).unwrap(), [1.0, 0.0]);
        assert_eq!(rhythmic_phase(t, t).unwrap(), rhythmic_phase(0.0, t).unwrap());
        assert!(rhythmic_phase(1.0, 0.0).is_err());
        assert!(rhythmic_phase(1.0, -2.0).is_err());
    }

    #[test]
    fn spec_widths() {
        let lin = PhaseSpec::new(PhaseMode::Linear, 1.0).unwrap();
        let rhy = PhaseSpec::new(PhaseMode::Rhythmic, 1.0).unwrap();
        assert_eq!(lin.phase(0.5).unwrap().len(), PhaseMode::Linear.width());
        assert_eq!(rhy.phase(0.5).unwrap().len(), PhaseMode::Rhythmic.width());
        assert!(PhaseSpec::new(PhaseMode::Linear, 0.0).is_err());
        assert_eq!("rhythmic".parse::<PhaseMode>().unwrap(), PhaseMode::Rhythmic);
    }

    proptest! {
        #[test]
        fn on_unit_circle(t in 0.0f64..100.0, period in 0.1f64..10.0) {
            let [s, c] = rhythmic_phase(t, period).unwrap();
            prop_assert!(((s * s + c * c).sqrt() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn periodic(t in 0.0f64..50.0, period in 0.1f64..10.0) {
            let a = rhythmic_phase(t, period).unwrap();
            let b = rhythmic_phase(t + period, period).unwrap();
            prop_assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }
}
