//! Device energy accounting.

use crate::error::{Error, Result};
use crate::model::QuantLevel;

/// Per-inference energy by arithmetic precision, in joules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceEnergy {
    pub q8: f64,
    pub q32: f64,
}

impl InferenceEnergy {
    pub fn get(&self, quant: QuantLevel) -> f64 {
        match quant {
            QuantLevel::Q8 => self.q8,
            QuantLevel::Q32 => self.q32,
        }
    }
}

impl Default for InferenceEnergy {
    fn default() -> Self {
        Self {
            q8: 1.4e-6,
            q32: 6.6e-6,
        }
    }
}

/// Radio and compute constants plus the budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyParams {
    /// Transmit power, W.
    pub tx_power: f64,
    /// Receive power, W.
    pub rx_power: f64,
    pub inference: InferenceEnergy,
    /// Total budget `E_th`, J.
    pub budget: f64,
    /// Reference rate for target latencies, bit/s.
    pub reference_rate: f64,
    /// Reference energy for target latencies, J.
    pub reference_energy: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            tx_power: 0.79,
            rx_power: 0.33,
            inference: InferenceEnergy::default(),
            budget: 60.0,
            reference_rate: 1e6,
            reference_energy: 60.0,
        }
    }
}

fn check_duration(name: &str, t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("{name} must be a non-negative duration, got {t}")));
    }
    Ok(())
}

/// `t_ul * xi_tx + t_dl * xi_rx`.
pub fn comm_energy(t_ul: f64, t_dl: f64, params: &EnergyParams) -> Result<f64> {
    check_duration("uplink time", t_ul)?;
    check_duration("downlink time", t_dl)?;
    Ok(t_ul * params.tx_power + t_dl * params.rx_power)
}

/// `E_inf[q] * inferences`.
pub fn comp_energy(inferences: u64, quant: QuantLevel, params: &EnergyParams) -> f64 {
    params.inference.get(quant) * inferences as f64
}

/// One row of the ledger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerEntry {
    pub round: usize,
    pub comm: f64,
    pub comp: f64,
    /// Running total after this round.
    pub total: f64,
}

/// Running sum of consumed energy.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    budget: f64,
    total: f64,
    entries: Vec<LedgerEntry>,
}

impl EnergyLedger {
    pub fn new(budget: f64) -> Self {
        Self {
            budget,
            total: 0.0,
            entries: Vec::new(),
        }
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn remaining(&self) -> f64 {
        self.budget - self.total
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Adds a round's energy. Negative components are rejected.
    pub fn accrue_round(&mut self, round: usize, comm: f64, comp: f64) -> Result<f64> {
        if !(comm >= 0.0) || !(comp >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "negative energy: comm {comm}, comp {comp}"
            )));
        }
        self.total += comm + comp;
        self.entries.push(LedgerEntry {
            round,
            comm,
            comp,
            total: self.total,
        });
        Ok(self.total)
    }

    /// Whether spending `projected` more would break the budget.
    pub fn would_exceed(&self, projected: f64) -> bool {
        self.total + projected > self.budget
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn comm_energy_examples() {
        let p = EnergyParams::default();
        assert!((comm_energy(1.0, 0.0, &p).unwrap() - 0.79).abs() < 1e-15);
        assert!((comm_energy(0.0, 2.0, &p).unwrap() - 0.66).abs() < 1e-15);
        assert_eq!(comm_energy(0.0, 0.0, &p).unwrap(), 0.0);
        assert!(comm_energy(-1.0, 0.0, &p).is_err());
        assert!(comm_energy(0.0, f64::NAN, &p).is_err());
    }

    #[test]
    fn comp_energy_examples() {
        let p = EnergyParams::default();
        assert!((comp_energy(1_000_000, QuantLevel::Q8, &p) - 1.4).abs() < 1e-12);
        assert!((comp_energy(1_000_000, QuantLevel::Q32, &p) - 6.6).abs() < 1e-12);
        assert_eq!(comp_energy(0, QuantLevel::Q32, &p), 0.0);
    }

    #[test]
    fn ledger_sums_and_guards() {
        let mut l = EnergyLedger::new(60.0);
        assert_eq!(l.accrue_round(1, 10.0, 0.5).unwrap(), 10.5);
        assert!(l.accrue_round(2, -1.0, 0.0).is_err());
        assert_eq!(l.total(), 10.5);
        assert!(!l.would_exceed(49.5));
        assert!(l.would_exceed(49.6));
        assert_eq!(l.entries().len(), 1);
    }

    #[test]
    fn zero_budget_blocks_everything() {
        let l = EnergyLedger::new(0.0);
        assert!(l.would_exceed(1e-12));
        assert!(!l.would_exceed(0.0));
    }

    proptest! {
        #[test]
        fn total_is_monotone(rounds in proptest::collection::vec((0.0f64..5.0, 0.0f64..1.0), 0..50)) {
            let mut l = EnergyLedger::new(f64::INFINITY);
            let mut prev = 0.0;
            for (i, (c, p)) in rounds.into_iter().enumerate() {
                let t = l.accrue_round(i + 1, c, p).unwrap();
                prop_assert!(t >= prev);
                prev = t;
            }
        }
    }
}
