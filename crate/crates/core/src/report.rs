//! Whole-model analysis and its text/JSON rendering.

use serde::Serialize;

use crate::energy::{estimate_rtf, total_power, EnergyError, PowerBreakdown, RtfEstimate};
use crate::model::{ModelSpec, ModelState};
use crate::placement::{allocate_for_state, Placement, PlacementMode};
use crate::workload::{invocation_profile, InvocationProfile};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Analysis {
    pub profile: InvocationProfile<f64>,
    pub placement: Placement<f64>,
    pub power: PowerBreakdown<f64>,
    pub rtf: RtfEstimate<f64>,
    pub compute_share: f64,
    pub compute_share_below_one_percent: bool,
}

/// Places `state` under `mode` and evaluates power and RTF.
pub fn analyze(spec: &ModelSpec, state: &ModelState, mode: PlacementMode) -> Result<Analysis, EnergyError> {
    let profile = invocation_profile(&spec.streaming);
    let placement = allocate_for_state(state, &profile, &spec.memory, mode);
    let power = total_power(state, &profile, &placement, &spec.memory)?;
    let rtf = estimate_rtf(state, &profile, &placement, &spec.memory)?;
    Ok(Analysis {
        compute_share: power.compute_share(),
        compute_share_below_one_percent: power.compute_share_below_one_percent(),
        profile,
        placement,
        power,
        rtf,
    })
}

/// Fixed-precision summary table.
pub fn render_analysis(a: &Analysis) -> String {
    let mut out = String::new();
    out.push_str("component      hz   memory_mw  compute_mw   local_MB  offchip_MB\n");
    for (c, s) in a.power.components.iter().zip(&a.placement.components) {
        out.push_str(&format!(
            "{:<10} {:>7.2} {:>10.2} {:>11.2} {:>10.2} {:>11.2}\n",
            c.name.as_str(),
            c.hz,
            c.memory_mw,
            c.compute_mw,
            s.local_bytes / 1e6,
            s.offchip_bytes / 1e6
        ));
    }
    out.push_str(&format!(
        "total      {:>7} {:>10.2} {:>11.2}\n",
        "", a.power.memory_mw, a.power.compute_mw
    ));
    out.push_str(&format!("total power: {:.2} mW\n", a.power.total_mw));
    out.push_str(&format!(
        "compute share: {:.2}%{}\n",
        a.compute_share * 100.0,
        if a.compute_share_below_one_percent { " (memory-dominated)" } else { "" }
    ));
    out.push_str(&format!(
        "RTF estimate: {:.3} (memory {:.3}, compute {:.3})\n",
        a.rtf.rtf, a.rtf.memory_term, a.rtf.compute_term
    ));
    out
}
