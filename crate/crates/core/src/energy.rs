//! Per-node energy accounting.
//!
//! A node pays `wake` for every generated sample (measure and decide),
//! `tx` for every transmitted packet and `rx` for every feedback reception.
//! Units are abstract; the defaults are placeholders, not measured values.

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EnergyParams {
    pub wake: f64,
    pub tx: f64,
    pub rx: f64,
    pub battery_capacity: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            wake: 1.0,
            tx: 50.0,
            rx: 20.0,
            battery_capacity: f64::INFINITY,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = |v: f64| v >= 0.0 && !v.is_nan();
        if ok(self.wake) && ok(self.tx) && ok(self.rx) && ok(self.battery_capacity) {
            Ok(())
        } else {
            Err(crate::Error::InvalidConfig(
                "energy parameters must be non-negative".into(),
            ))
        }
    }
}

/// Event counts of one node. Consumption is derived from the counts, so
/// `consumed = wake·e_wake + tx·e_tx + rx·e_rx` holds by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyLedger {
    params: EnergyParams,
    pub wakes: u64,
    pub transmissions: u64,
    pub receptions: u64,
}

impl EnergyLedger {
    pub fn new(params: EnergyParams) -> Self {
        Self {
            params,
            wakes: 0,
            transmissions: 0,
            receptions: 0,
        }
    }

    pub fn params(&self) -> &EnergyParams {
        &self.params
    }

    pub fn consumed(&self) -> f64 {
        self.wakes as f64 * self.params.wake
            + self.transmissions as f64 * self.params.tx
            + self.receptions as f64 * self.params.rx
    }

    pub fn remaining(&self) -> f64 {
        self.params.battery_capacity - self.consumed()
    }

    /// True once the battery cannot pay for another wakeup.
    pub fn depleted(&self) -> bool {
        self.remaining() < self.params.wake || self.remaining() <= 0.0
    }

    pub fn charge_wake(&mut self) {
        self.wakes += 1;
    }

    pub fn charge_tx(&mut self) {
        self.transmissions += 1;
    }

    pub fn charge_rx(&mut self) {
        self.receptions += 1;
    }
}

/// How long a battery lasts at an observed consumption rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Longevity {
    Intervals(f64),
    /// Nothing was consumed, so the battery never runs out.
    Unbounded,
}

/// Battery capacity divided by the mean per-interval consumption observed
/// over `intervals` intervals.
pub fn longevity(ledger: &EnergyLedger, intervals: u64) -> Longevity {
    let capacity = ledger.params.battery_capacity;
    if capacity == 0.0 {
        return Longevity::Intervals(0.0);
    }
    let consumed = ledger.consumed();
    if consumed == 0.0 || intervals == 0 {
        return Longevity::Unbounded;
    }
    Longevity::Intervals(capacity / (consumed / intervals as f64))
}
