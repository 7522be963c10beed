//! Power, memory-traffic and real-time-factor model for on-device streaming
//! neural-transducer speech recognition, with a sensitivity-driven
//! compression planner.
//!
//! The arithmetic modules are generic over [`Scalar`] (or [`Real`] where
//! exponentials are needed); the aliases below fix the common choices.

pub mod curvefit;
pub mod energy;
pub mod model;
pub mod placement;
pub mod planner;
pub mod pruner;
pub mod report;
pub mod scalar;
pub mod workload;

pub use model::{
    parse_config_document, parse_model_spec, serialize_model_spec, validate, ComponentName, ComponentSpec,
    ComponentState, ConfigDocument, InvocationRole, MemoryConfig, ModelSpec, ModelState, SpecError, StreamingParams,
    ValidationReport,
};
pub use placement::PlacementMode;
pub use scalar::{Real, Scalar};

/// Exact scalar for oracle comparisons.
pub type Rational = num_rational::Ratio<i128>;

pub type InvocationProfileF64 = workload::InvocationProfile<f64>;
pub type PlacementF64 = placement::Placement<f64>;
pub type PlacementExact = placement::Placement<Rational>;
pub type PowerBreakdownF64 = energy::PowerBreakdown<f64>;
pub type PowerBreakdownF32 = energy::PowerBreakdown<f32>;
pub type AccuracyCurveF64 = curvefit::AccuracyCurve<f64>;
pub type AccuracyCurveF32 = curvefit::AccuracyCurve<f32>;
pub type CurveBookF64 = planner::CurveBook<f64>;
pub type CompressionPlanF64 = planner::CompressionPlan<f64>;
pub type PruneStateF64 = pruner::PruneState<f64>;
