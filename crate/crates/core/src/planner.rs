//! Sensitivity-ratio compression planning.
//!
//! Power sensitivity is the power saved per million parameters removed,
//! taken at the memory tier the next removed bytes would come from.
//! Accuracy sensitivity is the slope of a component's accuracy curve at its
//! current size. The planner repeatedly shrinks the component with the
//! highest power/accuracy ratio, re-optimizing placement after every step,
//! until the requested power reduction is reached or every component sits at
//! its floor.

use std::cmp::Ordering;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::curvefit::AccuracyCurve;
use crate::energy::{self, EnergyError};
use crate::model::{ComponentName, ComponentState, MemoryConfig, ModelSpec, ModelState};
use crate::placement::{allocate_for_state, Placement, PlacementMode, TierSplit};
use crate::scalar::Real;
use crate::workload::{invocation_profile, InvocationProfile};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("no accuracy curve for `{0}`")]
    MissingCurve(String),
    #[error("invalid planner settings: {0}")]
    InvalidSettings(String),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetCurve<T> {
    pub dataset: String,
    pub curve: AccuracyCurve<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum AccuracyModel<T> {
    /// Curves per evaluation set; the first ranks components.
    Fitted(Vec<DatasetCurve<T>>),
    /// Declared to have no accuracy cost.
    Insensitive,
}

/// Accuracy models keyed by component.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CurveBook<T> {
    entries: Vec<(ComponentName, AccuracyModel<T>)>,
}

impl<T: Real> CurveBook<T> {
    pub fn new() -> Self {
        CurveBook { entries: Vec::new() }
    }

    pub fn insert(&mut self, component: ComponentName, dataset: impl Into<String>, curve: AccuracyCurve<T>) {
        let entry = DatasetCurve {
            dataset: dataset.into(),
            curve,
        };
        match self.entries.iter_mut().find(|(n, _)| n == &component) {
            Some((_, AccuracyModel::Fitted(v))) => match v.iter_mut().find(|d| d.dataset == entry.dataset) {
                Some(existing) => *existing = entry,
                None => v.push(entry),
            },
            Some((_, model)) => *model = AccuracyModel::Fitted(vec![entry]),
            None => self.entries.push((component, AccuracyModel::Fitted(vec![entry]))),
        }
    }

    pub fn with(mut self, component: impl Into<ComponentName>, curve: AccuracyCurve<T>) -> Self {
        self.insert(component.into(), crate::curvefit::DEFAULT_DATASET, curve);
        self
    }

    pub fn mark_insensitive(&mut self, component: ComponentName) {
        match self.entries.iter_mut().find(|(n, _)| n == &component) {
            Some((_, model)) => *model = AccuracyModel::Insensitive,
            None => self.entries.push((component, AccuracyModel::Insensitive)),
        }
    }

    pub fn get(&self, component: &ComponentName) -> Option<&AccuracyModel<T>> {
        self.entries.iter().find(|(n, _)| n == component).map(|(_, m)| m)
    }

    /// Dataset tags in order of first appearance.
    pub fn datasets(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (_, m) in &self.entries {
            if let AccuracyModel::Fitted(v) = m {
                for d in v {
                    if !out.contains(&d.dataset) {
                        out.push(d.dataset.clone());
                    }
                }
            }
        }
        out
    }

    /// Every curve's slope multiplied by `k`.
    pub fn scaled(&self, k: T) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|(n, m)| {
                let m = match m {
                    AccuracyModel::Fitted(v) => AccuracyModel::Fitted(
                        v.iter()
                            .map(|d| DatasetCurve {
                                dataset: d.dataset.clone(),
                                curve: d.curve.with_scaled_sensitivity(k),
                            })
                            .collect(),
                    ),
                    AccuracyModel::Insensitive => AccuracyModel::Insensitive,
                };
                (n.clone(), m)
            })
            .collect();
        CurveBook { entries }
    }
}

/// Everything besides the model state and curves that the planner reads.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanContext<T> {
    pub profile: InvocationProfile<T>,
    pub memory: MemoryConfig,
    pub mode: PlacementMode,
}

impl<T: Real> PlanContext<T> {
    pub fn from_spec(spec: &ModelSpec, mode: PlacementMode) -> Self {
        PlanContext {
            profile: invocation_profile(&spec.streaming),
            memory: spec.memory.clone(),
            mode,
        }
    }

    pub fn place(&self, state: &ModelState) -> Placement<T> {
        allocate_for_state(state, &self.profile, &self.memory, self.mode)
    }

    pub fn total_mw(&self, state: &ModelState) -> Result<T, EnergyError> {
        let placement = self.place(state);
        energy::total_power(state, &self.profile, &placement, &self.memory).map(|b| b.total_mw)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Local,
    Offchip,
}

/// mW saved per million parameters removed, priced at the tier the next
/// removed bytes would be freed from.
pub fn power_sensitivity<T: Real>(c: &ComponentState, hz: T, split: &TierSplit<T>, m: &MemoryConfig) -> (T, Tier) {
    let (tier, unit) = if split.offchip_bytes > T::zero() {
        (Tier::Offchip, m.offchip_energy_pj_per_byte)
    } else {
        (Tier::Local, m.local_energy_pj_per_byte)
    };
    let bytes_per_param = T::lit(c.spec.bytes_per_param * c.spec.sparse_overhead);
    let mw = hz * T::lit(unit) * bytes_per_param * T::lit(1e6) * T::lit(m.energy_calibration) / T::lit(1e9);
    (mw, tier)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sensitivity<T> {
    pub component: ComponentName,
    pub power_sensitivity: T,
    pub accuracy_sensitivity: T,
    /// `+inf` when `accuracy_sensitivity` is zero; see `infinite_ratio`.
    pub ratio: T,
    pub infinite_ratio: bool,
    pub marginal_tier: Tier,
}

impl<T: Real> Sensitivity<T> {
    /// Infinite ratios first, then larger ratio, then larger power
    /// sensitivity, then name.
    pub fn priority_cmp(&self, other: &Self) -> Ordering {
        other
            .infinite_ratio
            .cmp(&self.infinite_ratio)
            .then_with(|| other.ratio.partial_cmp(&self.ratio).unwrap_or(Ordering::Equal))
            .then_with(|| other.power_sensitivity.partial_cmp(&self.power_sensitivity).unwrap_or(Ordering::Equal))
            .then_with(|| self.component.cmp(&other.component))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityReport<T> {
    pub entries: Vec<Sensitivity<T>>,
    pub placement: Placement<T>,
}

impl<T: Real> SensitivityReport<T> {
    pub fn get(&self, name: &ComponentName) -> Option<&Sensitivity<T>> {
        self.entries.iter().find(|e| &e.component == name)
    }
}

/// Power-to-accuracy sensitivity of one component at its current size.
pub fn sensitivity_ratio<T: Real>(
    component: &ComponentName,
    curves: &CurveBook<T>,
    state: &ModelState,
    profile: &InvocationProfile<T>,
    placement: &Placement<T>,
    m: &MemoryConfig,
) -> Result<Sensitivity<T>, PlanError> {
    let c = state
        .get(component)
        .ok_or_else(|| PlanError::InvalidSettings(format!("unknown component `{component}`")))?;
    let split = placement
        .get(component)
        .ok_or_else(|| EnergyError::MissingPlacement(component.to_string()))?;
    let hz = energy::component_hz(c, profile);
    let (power, tier) = power_sensitivity(c, hz, split, m);
    let accuracy = match curves.get(component) {
        Some(AccuracyModel::Fitted(v)) if !v.is_empty() => v[0].curve.accuracy_sensitivity(T::lit(c.live_millions())),
        Some(AccuracyModel::Insensitive) => T::zero(),
        _ => return Err(PlanError::MissingCurve(component.to_string())),
    };
    let infinite = accuracy.is_zero();
    let ratio = if infinite { T::infinity() } else { power / accuracy };
    Ok(Sensitivity {
        component: component.clone(),
        power_sensitivity: power,
        accuracy_sensitivity: accuracy,
        ratio,
        infinite_ratio: infinite,
        marginal_tier: tier,
    })
}

/// Sensitivities of every component under the context's placement.
pub fn sensitivity_report<T: Real>(state: &ModelState, curves: &CurveBook<T>, ctx: &PlanContext<T>) -> Result<SensitivityReport<T>, PlanError> {
    let placement = ctx.place(state);
    let entries = state
        .components
        .iter()
        .map(|c| sensitivity_ratio(c.name(), curves, state, &ctx.profile, &placement, &ctx.memory))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SensitivityReport { entries, placement })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TargetReached,
    /// Every component is at its floor.
    FloorReached,
    /// Some components can still shrink but none of those steps lowers power.
    NoPowerReducingStep,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::TargetReached => "target reached",
            Termination::FloorReached => "floor reached",
            Termination::NoPowerReducingStep => "no power-reducing step",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlanStep<T> {
    pub component: ComponentName,
    pub params_removed: u64,
    pub live_params: u64,
    pub total_mw: T,
    /// (dataset, predicted WER %) in dataset order.
    pub predicted_wer: Vec<(String, T)>,
    pub ratio: T,
    pub placement: Placement<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompressionPlan<T> {
    pub initial_mw: T,
    pub initial_wer: Vec<(String, T)>,
    pub steps: Vec<PlanStep<T>>,
    pub target_mw_reduction: T,
    pub achieved_mw_reduction: T,
    pub termination: Termination,
    pub final_state: ModelState,
}

impl<T: Real> CompressionPlan<T> {
    /// Components in the order they were first compressed.
    pub fn first_touched(&self) -> Vec<ComponentName> {
        let mut out: Vec<ComponentName> = Vec::new();
        for s in &self.steps {
            if !out.contains(&s.component) {
                out.push(s.component.clone());
            }
        }
        out
    }

    /// Maximal runs of consecutive steps on the same component.
    pub fn phases(&self) -> Vec<(ComponentName, usize)> {
        let mut out: Vec<(ComponentName, usize)> = Vec::new();
        for s in &self.steps {
            match out.last_mut() {
                Some((c, n)) if c == &s.component => *n += 1,
                _ => out.push((s.component.clone(), 1)),
            }
        }
        out
    }

    pub fn datasets(&self) -> Vec<String> {
        self.initial_wer.iter().map(|(d, _)| d.clone()).collect()
    }

    /// `step,component,params_removed,live_params,total_mw,reduction_mw,wer_<dataset>...`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,component,params_removed,live_params,total_mw,reduction_mw");
        for d in self.datasets() {
            out.push_str(&format!(",wer_{d}"));
        }
        out.push('\n');
        for (i, s) in self.steps.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{:.2},{:.2}",
                i + 1,
                s.component,
                s.params_removed,
                s.live_params,
                s.total_mw,
                self.initial_mw - s.total_mw
            ));
            for (_, w) in &s.predicted_wer {
                out.push_str(&format!(",{w:.3}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanSettings<T> {
    /// Requested reduction in mW (> 0).
    pub target_mw: T,
    /// Parameters removed per step, in millions (> 0).
    pub step_millions: T,
}

fn dense_reference_wer<T: Real>(state: &ModelState, curves: &CurveBook<T>, dataset: &str) -> T {
    let mut sum = T::zero();
    let mut n = 0usize;
    for c in &state.components {
        if let Some(AccuracyModel::Fitted(v)) = curves.get(c.name()) {
            if let Some(d) = v.iter().find(|d| d.dataset == dataset) {
                sum = sum + d.curve.predict_wer(T::lit(c.spec.dense_params as f64 / 1e6));
                n += 1;
            }
        }
    }
    if n == 0 {
        T::zero()
    } else {
        sum / T::from_usize(n).unwrap()
    }
}

/// WER per dataset, assuming component-wise deltas from the dense model add
/// up independently.
pub fn predicted_wer<T: Real>(state: &ModelState, curves: &CurveBook<T>) -> Vec<(String, T)> {
    curves
        .datasets()
        .into_iter()
        .map(|dataset| {
            let mut wer = dense_reference_wer(state, curves, &dataset);
            for c in &state.components {
                if let Some(AccuracyModel::Fitted(v)) = curves.get(c.name()) {
                    if let Some(d) = v.iter().find(|d| d.dataset == dataset) {
                        let dense = T::lit(c.spec.dense_params as f64 / 1e6);
                        wer = wer + d.curve.predict_wer(T::lit(c.live_millions())) - d.curve.predict_wer(dense);
                    }
                }
            }
            (dataset, wer)
        })
        .collect()
}

pub fn plan_compression<T: Real>(
    state: &ModelState,
    curves: &CurveBook<T>,
    ctx: &PlanContext<T>,
    settings: PlanSettings<T>,
) -> Result<CompressionPlan<T>, PlanError> {
    if !(settings.target_mw > T::zero()) {
        return Err(PlanError::InvalidSettings("target_mw must be > 0".into()));
    }
    if !(settings.step_millions > T::zero()) || !settings.step_millions.is_finite() {
        return Err(PlanError::InvalidSettings("step_millions must be > 0".into()));
    }
    let step_params = (settings.step_millions * T::lit(1e6)).round().to_u64().unwrap_or(u64::MAX).max(1);
    for c in &state.components {
        if c.live_params > c.spec.min_params && curves.get(c.name()).is_none() {
            return Err(PlanError::MissingCurve(c.name().to_string()));
        }
    }

    let initial_mw = ctx.total_mw(state)?;
    let mut current = state.clone();
    let mut current_mw = initial_mw;
    let mut steps = Vec::new();
    let termination = loop {
        if initial_mw - current_mw >= settings.target_mw {
            break Termination::TargetReached;
        }
        let placement = ctx.place(&current);
        let mut candidates = current
            .components
            .iter()
            .filter(|c| c.live_params > c.spec.min_params)
            .map(|c| sensitivity_ratio(c.name(), curves, &current, &ctx.profile, &placement, &ctx.memory))
            .collect::<Result<Vec<_>, _>>()?;
        if candidates.is_empty() {
            break Termination::FloorReached;
        }
        candidates.sort_by(|a, b| a.priority_cmp(b));

        let mut taken = None;
        for cand in &candidates {
            let c = current.get(&cand.component).expect("candidate comes from state");
            let live = c.live_params.saturating_sub(step_params).max(c.spec.min_params);
            let next = current
                .with_live(&cand.component, live)
                .expect("live stays within [min, dense]");
            let next_mw = ctx.total_mw(&next)?;
            if next_mw < current_mw {
                taken = Some((cand.clone(), c.live_params - live, live, next, next_mw));
                break;
            }
        }
        let Some((cand, removed, live, next, next_mw)) = taken else {
            break Termination::NoPowerReducingStep;
        };
        steps.push(PlanStep {
            component: cand.component,
            params_removed: removed,
            live_params: live,
            total_mw: next_mw,
            predicted_wer: predicted_wer(&next, curves),
            ratio: cand.ratio,
            placement: ctx.place(&next),
        });
        current = next;
        current_mw = next_mw;
    };

    Ok(CompressionPlan {
        initial_mw,
        initial_wer: predicted_wer(state, curves),
        steps,
        target_mw_reduction: settings.target_mw,
        achieved_mw_reduction: initial_mw - current_mw,
        termination,
        final_state: current,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ComponentSpec, StreamingParams};

    fn baseline_spec() -> ModelSpec {
        ModelSpec {
            components: vec![
                ComponentSpec::new("Encoder", 60_700_000).with_ops_factor(5.3),
                ComponentSpec::new("Predictor", 8_500_000).with_ops_factor(0.77),
                ComponentSpec::new("Joiner", 4_000_000),
            ],
            streaming: StreamingParams {
                input_stride_ms: 40,
                chunk_ms: 160,
                token_rate_hz: 11.53,
                joiner_beta: 88.5 / 11.53,
            },
            memory: MemoryConfig::default().with_calibration(1.049),
        }
    }

    fn split(local: f64, offchip: f64) -> TierSplit<f64> {
        TierSplit {
            name: "Joiner".into(),
            local_bytes: local,
            offchip_bytes: offchip,
        }
    }

    #[test]
    fn joiner_power_sensitivity_by_tier() {
        let m = MemoryConfig::default().with_calibration(1.049);
        let j = ComponentState::dense(ComponentSpec::new("Joiner", 4_000_000));
        let (off, tier) = power_sensitivity(&j, 113.5, &split(0.0, 4e6), &m);
        assert_eq!(tier, Tier::Offchip);
        assert!((off - 113.5 * 120e-12 * 1e6 * 1.049 * 1e3).abs() < 1e-9);
        assert!((off - 14.3).abs() < 0.05);
        let (local, tier) = power_sensitivity(&j, 113.5, &split(4e6, 0.0), &m);
        assert_eq!(tier, Tier::Local);
        assert!((local - 0.18).abs() < 0.005);
        assert_eq!(power_sensitivity(&j, 0.0, &split(0.0, 4e6), &m).0, 0.0);
    }

    #[test]
    fn insensitive_component_ranks_first() {
        let spec = baseline_spec();
        let ctx = PlanContext::<f64>::from_spec(&spec, PlacementMode::Fractional);
        let mut curves = CurveBook::new()
            .with("Encoder", AccuracyCurve::new(-0.08, 0.474, 3.2))
            .with("Joiner", AccuracyCurve::new(-0.392, -6.01, 3.2));
        curves.mark_insensitive("Predictor".into());
        let state = ModelState::dense(&spec);
        let report = sensitivity_report(&state, &curves, &ctx).unwrap();
        let p = report.get(&"Predictor".into()).unwrap();
        assert!(p.infinite_ratio && p.ratio.is_infinite());
        let plan = plan_compression(&state, &curves, &ctx, PlanSettings {
            target_mw: 0.1,
            step_millions: 0.4,
        })
        .unwrap();
        assert_eq!(plan.steps.len(), 1);
        assert_eq!(plan.steps[0].component, ComponentName::Predictor);
    }

    #[test]
    fn missing_curve_is_an_error() {
        let spec = baseline_spec();
        let ctx = PlanContext::<f64>::from_spec(&spec, PlacementMode::Fractional);
        let curves = CurveBook::new().with("Encoder", AccuracyCurve::new(-0.08, 0.474, 3.2));
        let err = plan_compression(&ModelState::dense(&spec), &curves, &ctx, PlanSettings {
            target_mw: 1.0,
            step_millions: 0.4,
        })
        .unwrap_err();
        assert_eq!(err, PlanError::MissingCurve("Predictor".into()));
    }

    #[test]
    fn floor_reached_on_fully_compressed_model() {
        let spec = baseline_spec();
        let ctx = PlanContext::<f64>::from_spec(&spec, PlacementMode::Fractional);
        let mut state = ModelState::dense(&spec);
        for c in &mut state.components {
            c.live_params = c.spec.min_params;
        }
        let plan = plan_compression(&state, &CurveBook::new(), &ctx, PlanSettings {
            target_mw: 60.0,
            step_millions: 0.4,
        })
        .unwrap();
        assert!(plan.steps.is_empty());
        assert_eq!(plan.termination, Termination::FloorReached);
        assert_eq!(plan.termination.to_string(), "floor reached");
    }

    #[test]
    fn rejects_bad_settings() {
        let spec = baseline_spec();
        let ctx = PlanContext::<f64>::from_spec(&spec, PlacementMode::Fractional);
        let state = ModelState::dense(&spec);
        for (t, s) in [(0.0, 0.4), (10.0, 0.0), (-1.0, 1.0)] {
            let r = plan_compression(&state, &CurveBook::new(), &ctx, PlanSettings {
                target_mw: t,
                step_millions: s,
            });
            assert!(matches!(r, Err(PlanError::InvalidSettings(_))));
        }
    }

    #[test]
    fn predicted_wer_adds_component_deltas() {
        let spec = baseline_spec();
        let enc = AccuracyCurve::new(-0.08_f64, 0.474, 3.2);
        let joi = AccuracyCurve::new(-0.392, -6.01, 3.2);
        let curves = CurveBook::new().with("Encoder", enc.clone()).with("Joiner", joi.clone());
        let dense = ModelState::dense(&spec);
        let reference = (enc.predict_wer(60.7) + joi.predict_wer(4.0)) / 2.0;
        assert!((predicted_wer(&dense, &curves)[0].1 - reference).abs() < 1e-12);
        let pruned = dense.with_live(&"Joiner".into(), 1_000_000).unwrap();
        let expect = reference + joi.predict_wer(1.0) - joi.predict_wer(4.0);
        assert!((predicted_wer(&pruned, &curves)[0].1 - expect).abs() < 1e-12);
    }
}
