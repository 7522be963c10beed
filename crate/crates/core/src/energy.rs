//! Memory traffic, power and real-time-factor estimates.
//!
//! Weights are re-read from their tier on every invocation, so a component
//! moves `stored_bytes * hz` bytes per second. Memory power is that traffic
//! times the per-byte energy of the tier; compute power is the operation
//! rate divided by the accelerator efficiency.

use serde::Serialize;
use thiserror::Error;

use crate::model::{ComponentName, ComponentState, MemoryConfig, ModelState};
use crate::placement::{Placement, TierSplit};
use crate::scalar::Scalar;
use crate::workload::InvocationProfile;

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("{component}: placement holds {placed} bytes but the component stores {stored}")]
    ByteMismatch {
        component: String,
        placed: f64,
        stored: f64,
    },
    #[error("placement has no entry for `{0}`")]
    MissingPlacement(String),
}

/// Bytes per second read from each tier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Traffic<T> {
    pub local_bps: T,
    pub offchip_bps: T,
}

impl<T: Scalar> Traffic<T> {
    pub fn zero() -> Self {
        Traffic {
            local_bps: T::zero(),
            offchip_bps: T::zero(),
        }
    }

    pub fn total(&self) -> T {
        self.local_bps + self.offchip_bps
    }
}

impl<T: Scalar> std::ops::Add for Traffic<T> {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Traffic {
            local_bps: self.local_bps + rhs.local_bps,
            offchip_bps: self.offchip_bps + rhs.offchip_bps,
        }
    }
}

/// Invocation rate of a component under a profile. Components without a
/// role are never invoked.
pub fn component_hz<T: Scalar>(c: &ComponentState, profile: &InvocationProfile<T>) -> T {
    c.spec.role().map_or(T::zero(), |r| profile.hz_for(r))
}

pub fn memory_traffic<T: Scalar>(c: &ComponentState, hz: T, split: &TierSplit<T>) -> Result<Traffic<T>, EnergyError> {
    let stored: T = c.stored_bytes();
    if !split.total().close_to(stored) {
        return Err(EnergyError::ByteMismatch {
            component: c.name().to_string(),
            placed: split.total().as_f64(),
            stored: stored.as_f64(),
        });
    }
    Ok(Traffic {
        local_bps: split.local_bytes * hz,
        offchip_bps: split.offchip_bytes * hz,
    })
}

/// mW = calibration * (local B/s * local pJ/B + off-chip B/s * off-chip pJ/B) * 1e-9
pub fn memory_power<T: Scalar>(traffic: &Traffic<T>, m: &MemoryConfig) -> T {
    let pj_per_s = traffic.local_bps * T::lit(m.local_energy_pj_per_byte)
        + traffic.offchip_bps * T::lit(m.offchip_energy_pj_per_byte);
    T::lit(m.energy_calibration) * pj_per_s / T::lit(1e9)
}

/// Operations per second of a component.
pub fn ops_per_second<T: Scalar>(c: &ComponentState, hz: T) -> T {
    T::lit(c.spec.ops_factor) * T::lit(2.0) * T::from_count(c.live_params) * hz
}

pub fn compute_power<T: Scalar>(c: &ComponentState, hz: T, m: &MemoryConfig) -> T {
    ops_per_second(c, hz) / (T::lit(m.compute_efficiency_gops_per_mw) * T::lit(1e9))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComponentPower<T> {
    pub name: ComponentName,
    pub hz: T,
    pub memory_mw: T,
    pub compute_mw: T,
    pub traffic: Traffic<T>,
}

impl<T: Scalar> ComponentPower<T> {
    pub fn total_mw(&self) -> T {
        self.memory_mw + self.compute_mw
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PowerBreakdown<T> {
    pub components: Vec<ComponentPower<T>>,
    pub memory_mw: T,
    pub compute_mw: T,
    pub total_mw: T,
    pub traffic: Traffic<T>,
}

impl<T: Scalar> PowerBreakdown<T> {
    pub fn get(&self, name: &ComponentName) -> Option<&ComponentPower<T>> {
        self.components.iter().find(|c| &c.name == name)
    }

    pub fn compute_share(&self) -> T {
        if self.total_mw.is_zero() {
            T::zero()
        } else {
            self.compute_mw / self.total_mw
        }
    }

    /// The memory-dominated regime: compute under 1% of the total.
    pub fn compute_share_below_one_percent(&self) -> bool {
        self.compute_share() < T::lit(0.01)
    }
}

impl PowerBreakdown<f64> {
    /// `component,memory_mw,compute_mw,local_Bps,offchip_Bps` with fixed
    /// precision, plus a `total` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,memory_mw,compute_mw,local_Bps,offchip_Bps\n");
        for c in &self.components {
            out.push_str(&format!(
                "{},{:.2},{:.2},{:.0},{:.0}\n",
                c.name, c.memory_mw, c.compute_mw, c.traffic.local_bps, c.traffic.offchip_bps
            ));
        }
        out.push_str(&format!(
            "total,{:.2},{:.2},{:.0},{:.0}\n",
            self.memory_mw, self.compute_mw, self.traffic.local_bps, self.traffic.offchip_bps
        ));
        out
    }
}

fn split_for<'a, T>(placement: &'a Placement<T>, name: &ComponentName) -> Result<&'a TierSplit<T>, EnergyError> {
    placement
        .components
        .iter()
        .find(|s| &s.name == name)
        .ok_or_else(|| EnergyError::MissingPlacement(name.to_string()))
}

pub fn total_power<T: Scalar>(
    state: &ModelState,
    profile: &InvocationProfile<T>,
    placement: &Placement<T>,
    m: &MemoryConfig,
) -> Result<PowerBreakdown<T>, EnergyError> {
    let mut components = Vec::with_capacity(state.components.len());
    let (mut memory_mw, mut compute_mw, mut traffic) = (T::zero(), T::zero(), Traffic::zero());
    for c in &state.components {
        let hz = component_hz(c, profile);
        let t = memory_traffic(c, hz, split_for(placement, c.name())?)?;
        let mem = memory_power(&t, m);
        let cmp = compute_power(c, hz, m);
        memory_mw = memory_mw + mem;
        compute_mw = compute_mw + cmp;
        traffic = traffic + t;
        components.push(ComponentPower {
            name: c.name().clone(),
            hz,
            memory_mw: mem,
            compute_mw: cmp,
            traffic: t,
        });
    }
    Ok(PowerBreakdown {
        components,
        memory_mw,
        compute_mw,
        total_mw: memory_mw + compute_mw,
        traffic,
    })
}

pub fn memory_power_of_placement<T: Scalar>(
    state: &ModelState,
    profile: &InvocationProfile<T>,
    placement: &Placement<T>,
    m: &MemoryConfig,
) -> Result<T, EnergyError> {
    total_power(state, profile, placement, m).map(|b| b.memory_mw)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RtfEstimate<T> {
    pub memory_term: T,
    pub compute_term: T,
    pub rtf: T,
}

/// Memory and compute time per second of audio, serialized.
pub fn estimate_rtf<T: Scalar>(
    state: &ModelState,
    profile: &InvocationProfile<T>,
    placement: &Placement<T>,
    m: &MemoryConfig,
) -> Result<RtfEstimate<T>, EnergyError> {
    let per_byte = |ns_per_64b: f64| T::lit(ns_per_64b) / T::lit(64.0) / T::lit(1e9);
    let (local_s, offchip_s) = (per_byte(m.local_latency_ns_per_64b), per_byte(m.offchip_latency_ns_per_64b));
    let peak_ops = T::lit(m.peak_compute_gops) * T::lit(1e9);
    let (mut memory_term, mut ops) = (T::zero(), T::zero());
    for c in &state.components {
        let hz = component_hz(c, profile);
        let t = memory_traffic(c, hz, split_for(placement, c.name())?)?;
        memory_term = memory_term + t.local_bps * local_s + t.offchip_bps * offchip_s;
        ops = ops + ops_per_second(c, hz);
    }
    let compute_term = ops / peak_ops;
    Ok(RtfEstimate {
        memory_term,
        compute_term,
        rtf: memory_term + compute_term,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ComponentSpec;
    use crate::placement::{placement_items, Placement, PlacementMode};

    fn state(name: &str, params: u64) -> ComponentState {
        ComponentState::dense(ComponentSpec::new(name, params))
    }

    fn offchip(bytes: f64) -> TierSplit<f64> {
        TierSplit {
            name: "x".into(),
            local_bytes: 0.0,
            offchip_bytes: bytes,
        }
    }

    #[test]
    fn encoder_offchip_traffic() {
        let t = memory_traffic(&state("Encoder", 60_700_000), 6.25, &offchip(60.7e6)).unwrap();
        assert_eq!(t.local_bps, 0.0);
        assert!((t.offchip_bps - 379.375e6).abs() < 1e-3);
    }

    #[test]
    fn local_joiner_traffic() {
        let split: TierSplit<f64> = TierSplit {
            name: "Joiner".into(),
            local_bytes: 0.8e6,
            offchip_bytes: 0.0,
        };
        let t = memory_traffic(&state("Joiner", 800_000), 113.5, &split).unwrap();
        assert!((t.local_bps - 90.8e6).abs() < 1e-3);
        assert_eq!(t.offchip_bps, 0.0);
    }

    #[test]
    fn zero_parameter_component_moves_nothing() {
        let spec = ComponentSpec::new("Joiner", 1000).with_min_params(0);
        let c = ComponentState::new(spec, 0).unwrap();
        let t = memory_traffic(&c, 113.5, &offchip(0.0)).unwrap();
        assert_eq!(t, Traffic::zero());
    }

    #[test]
    fn mismatched_split_is_an_error() {
        let err = memory_traffic(&state("Joiner", 4_000_000), 113.5, &offchip(1.0e6)).unwrap_err();
        assert!(matches!(err, EnergyError::ByteMismatch { .. }));
    }

    #[test]
    fn encoder_memory_power() {
        let t: Traffic<f64> = Traffic {
            local_bps: 0.0,
            offchip_bps: 60.7e6 * 6.25,
        };
        let m = MemoryConfig::default();
        let p = memory_power(&t, &m);
        assert!((p - 60.7e6 * 6.25 * 120e-12 * 1e3).abs() < 1e-9);
        assert!((p - 45.525).abs() < 1e-9);
        let p = memory_power(&t, &m.with_calibration(1.049));
        assert!((p - 47.755725).abs() < 1e-9, "{p}");
        assert!((p - 47.78).abs() / 47.78 < 0.005);
    }

    #[test]
    fn joiner_memory_power() {
        let m = MemoryConfig::default().with_calibration(1.049);
        let off: Traffic<f64> = Traffic {
            local_bps: 0.0,
            offchip_bps: 4.0e6 * 113.5,
        };
        assert!((memory_power(&off, &m) - 57.13).abs() < 0.05);
        let local: Traffic<f64> = Traffic {
            local_bps: 0.8e6 * 113.5,
            offchip_bps: 0.0,
        };
        let p = memory_power(&local, &MemoryConfig::default());
        assert!((p - 0.8e6 * 113.5 * 1.5e-9).abs() < 1e-12);
        assert!((p - 0.14).abs() < 0.005);
    }

    #[test]
    fn compute_power_examples() {
        let m = MemoryConfig::default();
        let joiner = state("Joiner", 4_000_000);
        let p = compute_power(&joiner, 113.5_f64, &m);
        assert!((p - 2.0 * 4e6 * 113.5 / 5e9).abs() < 1e-12);
        assert!((p - 0.18).abs() < 0.005);
        let enc = ComponentState::dense(ComponentSpec::new("Encoder", 60_700_000).with_ops_factor(5.3));
        assert!((compute_power(&enc, 6.25_f64, &m) - 0.80).abs() < 0.01);
        assert_eq!(compute_power(&enc, 0.0, &m), 0.0);
    }

    #[test]
    fn breakdown_totals_are_sums() {
        let st = ModelState {
            components: vec![state("Encoder", 60_700_000), state("Joiner", 1_000_000)],
        };
        let profile = InvocationProfile {
            encoder_hz: 6.25,
            predictor_hz: 11.53,
            joiner_hz: 113.5,
            frame_rate_hz: 25.0,
        };
        let m = MemoryConfig::default();
        let placement = crate::placement::allocate_for_state(&st, &profile, &m, PlacementMode::Fractional);
        let b = total_power(&st, &profile, &placement, &m).unwrap();
        let mem: f64 = b.components.iter().map(|c| c.memory_mw).sum();
        let cmp: f64 = b.components.iter().map(|c| c.compute_mw).sum();
        assert!((b.memory_mw - mem).abs() < 1e-12);
        assert!((b.compute_mw - cmp).abs() < 1e-12);
        assert!((b.total_mw - mem - cmp).abs() < 1e-12);
        assert!(b.compute_share_below_one_percent());
        let csv = b.to_csv();
        assert!(csv.starts_with("component,memory_mw,compute_mw,local_Bps,offchip_Bps\nEncoder,"));
    }

    #[test]
    fn zero_size_model_has_zero_rtf() {
        let spec = ComponentSpec::new("Joiner", 10).with_min_params(0);
        let st = ModelState {
            components: vec![ComponentState::new(spec, 0).unwrap()],
        };
        let profile = InvocationProfile {
            encoder_hz: 6.25,
            predictor_hz: 11.53,
            joiner_hz: 113.5,
            frame_rate_hz: 25.0,
        };
        let items = placement_items(&st, &profile);
        let p = Placement::all_offchip(&items, PlacementMode::Fractional);
        let r = estimate_rtf(&st, &profile, &p, &MemoryConfig::default()).unwrap();
        assert_eq!(r.rtf, 0.0);
    }

    #[test]
    fn missing_placement_entry() {
        let st = ModelState {
            components: vec![state("Joiner", 10)],
        };
        let profile = InvocationProfile {
            encoder_hz: 1.0,
            predictor_hz: 1.0,
            joiner_hz: 1.0,
            frame_rate_hz: 1.0,
        };
        let p: Placement<f64> = Placement {
            components: vec![],
            mode: PlacementMode::Fractional,
        };
        assert_eq!(
            total_power(&st, &profile, &p, &MemoryConfig::default()).unwrap_err(),
            EnergyError::MissingPlacement("Joiner".into())
        );
    }
}
