use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use serde::Serialize;

use asr_power::curvefit::{fit_exponential, group_points, read_points_csv, AccuracyCurve};
use asr_power::model::serialize_document;
use asr_power::planner::{plan_compression, CurveBook, PlanContext, PlanError, PlanSettings};
use asr_power::report::{analyze as analyze_model, render_analysis};
use asr_power::workload::{
    invocation_profile, simulate_decode_with, InvocationProfile, JoinerExpansion, TokenProcess, UtteranceProfile,
    UtteranceSpec,
};
use asr_power::{parse_config_document, validate, ComponentName, ConfigDocument, ModelState, PlacementMode};

use crate::output::{write_all, Report};
use crate::{AnalyzeArgs, FitArgs, Failure, ModelArgs, PlanArgs, SimulateArgs};

fn input(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Input(e.into())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Input)
}

fn mode_name(mode: PlacementMode) -> &'static str {
    match mode {
        PlacementMode::Fractional => "fractional",
        PlacementMode::WholeComponent => "whole",
    }
}

#[derive(Serialize)]
struct ModelSettings<'a> {
    config: &'a Path,
    placement: &'static str,
    calibration: f64,
}

fn load_model(args: &ModelArgs) -> Result<ConfigDocument, Failure> {
    let text = read(&args.config)?;
    let mut doc = parse_config_document(&text)
        .with_context(|| args.config.display().to_string())
        .map_err(Failure::Input)?;
    if let Some(cal) = args.calibration {
        doc.model.memory.energy_calibration = cal;
        let report = validate(&doc.model);
        if !report.is_valid() {
            return Err(input(anyhow!("--calibration {cal}: {report}")));
        }
    }
    Ok(doc)
}

fn header(out: &mut String, args: &ModelArgs, doc: &ConfigDocument) {
    let _ = writeln!(out, "config: {}", args.config.display());
    let _ = writeln!(
        out,
        "placement: {}, calibration: {:.3}",
        mode_name(args.placement.into()),
        doc.model.memory.energy_calibration
    );
}

pub fn analyze(args: AnalyzeArgs) -> Result<String, Failure> {
    let doc = load_model(&args.model)?;
    let mode: PlacementMode = args.model.placement.into();
    let state = ModelState::dense(&doc.model);
    let analysis = analyze_model(&doc.model, &state, mode).map_err(|e| Failure::Internal(e.into()))?;
    let items = asr_power::placement::placement_items(&state, &analysis.profile);
    if !analysis.placement.satisfies(&items, doc.model.memory.local_weight_capacity_bytes) {
        return Err(Failure::Internal(anyhow!("placement violates capacity or byte conservation")));
    }

    let mut text = String::new();
    header(&mut text, &args.model, &doc);
    text.push_str(&render_analysis(&analysis));

    let resolved = serialize_document(&doc.model, doc.utterance.as_ref());
    let settings = ModelSettings {
        config: &args.model.config,
        placement: mode_name(mode),
        calibration: doc.model.memory.energy_calibration,
    };
    let json = Report::new("analyze", &settings, Some(&resolved), &analysis).to_json()?;
    write_all(args.out.as_deref(), &[("report.json", json), ("power.csv", analysis.power.to_csv())])?;
    Ok(text)
}

#[derive(Serialize)]
struct FittedCurve {
    component: ComponentName,
    dataset: String,
    curve: AccuracyCurve<f64>,
    /// Smallest and largest fitted size.
    span: (f64, f64),
}

fn fit_points(path: &Path) -> Result<Vec<FittedCurve>, Failure> {
    let text = read(path)?;
    let points = read_points_csv(&text)
        .with_context(|| path.display().to_string())
        .map_err(Failure::Input)?;
    if points.is_empty() {
        return Err(input(anyhow!("{}: no points", path.display())));
    }
    group_points(&points)
        .into_iter()
        .map(|(component, dataset, pts)| {
            let curve = fit_exponential(&pts)
                .with_context(|| format!("fitting {component} [{dataset}]"))
                .map_err(Failure::Input)?;
            let span = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.size), hi.max(p.size)));
            Ok(FittedCurve {
                component,
                dataset,
                curve,
                span,
            })
        })
        .collect()
}

fn describe_fits(fits: &[FittedCurve]) -> String {
    let mut out = String::new();
    for f in fits {
        let _ = writeln!(out, "{} [{}]: {}", f.component, f.dataset, f.curve);
        if !f.curve.converged {
            let _ = writeln!(out, "  warning: not converged after {} iterations", f.curve.iterations);
        }
    }
    out
}

pub fn fit(args: FitArgs) -> Result<String, Failure> {
    let fits = fit_points(&args.points)?;
    let text = describe_fits(&fits);

    let mut table = String::from("component,dataset,a,b,c,adj_r2,n_points,converged,iterations\n");
    let mut predictions = String::from("component,dataset,size_millions,wer_percent\n");
    for f in &fits {
        let c = &f.curve;
        let r2 = c.adj_r2.map_or(String::new(), |r| format!("{r:.6}"));
        let _ = writeln!(
            table,
            "{},{},{:.8},{:.8},{:.8},{r2},{},{},{}",
            f.component, f.dataset, c.a, c.b, c.c, c.n_points, c.converged, c.iterations
        );
        // 25 evenly spaced sizes over the fitted span.
        let (lo, hi) = f.span;
        for i in 0..25 {
            let s = lo + (hi - lo) * i as f64 / 24.0;
            let _ = writeln!(predictions, "{},{},{s:.4},{:.4}", f.component, f.dataset, c.predict_wer(s));
        }
    }
    #[derive(Serialize)]
    struct Settings<'a> {
        points: &'a Path,
    }
    let json = Report::new("fit", &Settings { points: &args.points }, None, &fits).to_json()?;
    write_all(args.out.as_deref(), &[
        ("report.json", json),
        ("fit.csv", table),
        ("predictions.csv", predictions),
    ])?;
    Ok(text)
}

pub fn plan(args: PlanArgs) -> Result<String, Failure> {
    let doc = load_model(&args.model)?;
    let mode: PlacementMode = args.model.placement.into();
    let fits = fit_points(&args.points)?;
    let mut curves = CurveBook::new();
    for f in &fits {
        if doc.model.component(&f.component).is_none() {
            return Err(input(anyhow!("points given for `{}`, which the config does not define", f.component)));
        }
        curves.insert(f.component.clone(), f.dataset.clone(), f.curve.clone());
    }
    for name in &args.insensitive {
        let name = ComponentName::from(name.as_str());
        if doc.model.component(&name).is_none() {
            return Err(input(anyhow!("--insensitive `{name}` is not a component of the config")));
        }
        curves.mark_insensitive(name);
    }

    let ctx = PlanContext::<f64>::from_spec(&doc.model, mode);
    let settings = PlanSettings {
        target_mw: args.target_mw,
        step_millions: args.step_m,
    };
    let plan = plan_compression(&ModelState::dense(&doc.model), &curves, &ctx, settings).map_err(|e| match e {
        PlanError::Energy(_) => Failure::Internal(e.into()),
        other => input(other),
    })?;
    let mut prev = plan.initial_mw;
    for s in &plan.steps {
        if !(s.total_mw < prev) {
            return Err(Failure::Internal(anyhow!("plan step on {} does not lower power", s.component)));
        }
        prev = s.total_mw;
    }

    let mut text = String::new();
    header(&mut text, &args.model, &doc);
    let _ = writeln!(text, "target reduction: {:.2} mW, step: {:.3} M params", args.target_mw, args.step_m);
    text.push_str(&describe_fits(&fits));
    let _ = writeln!(text, "initial power: {:.2} mW", plan.initial_mw);
    let _ = write!(text, "{:>4}  {:<10} {:>9} {:>9} {:>10}", "step", "component", "live_M", "total_mW", "saved_mW");
    for d in plan.datasets() {
        let _ = write!(text, " {:>10}", format!("wer_{d}"));
    }
    text.push('\n');
    for (i, s) in plan.steps.iter().enumerate() {
        let _ = write!(
            text,
            "{:>4}  {:<10} {:>9.3} {:>9.2} {:>10.2}",
            i + 1,
            s.component.as_str(),
            s.live_params as f64 / 1e6,
            s.total_mw,
            plan.initial_mw - s.total_mw
        );
        for (_, w) in &s.predicted_wer {
            let _ = write!(text, " {w:>10.3}");
        }
        text.push('\n');
    }
    let order = plan.phases().iter().map(|(c, _)| c.to_string()).collect::<Vec<_>>().join(" -> ");
    let _ = writeln!(text, "compression order: {}", if order.is_empty() { "(none)" } else { &order });
    let _ = writeln!(
        text,
        "achieved reduction: {:.2} of {:.2} mW ({})",
        plan.achieved_mw_reduction, plan.target_mw_reduction, plan.termination
    );

    #[derive(Serialize)]
    struct Settings<'a> {
        #[serde(flatten)]
        model: ModelSettings<'a>,
        points: &'a Path,
        target_mw: f64,
        step_millions: f64,
        insensitive: &'a [String],
    }
    let settings = Settings {
        model: ModelSettings {
            config: &args.model.config,
            placement: mode_name(mode),
            calibration: doc.model.memory.energy_calibration,
        },
        points: &args.points,
        target_mw: args.target_mw,
        step_millions: args.step_m,
        insensitive: &args.insensitive,
    };
    #[derive(Serialize)]
    struct PlanResult<'a> {
        curves: &'a [FittedCurve],
        plan: &'a asr_power::CompressionPlanF64,
    }
    let resolved = serialize_document(&doc.model, doc.utterance.as_ref());
    let json = Report::new("plan", &settings, Some(&resolved), &PlanResult { curves: &fits, plan: &plan }).to_json()?;
    write_all(args.out.as_deref(), &[("report.json", json), ("plan.csv", plan.to_csv())])?;
    Ok(text)
}

#[derive(Serialize)]
struct RateComparison {
    component: &'static str,
    count: u64,
    simulated_hz: f64,
    analytic_hz: f64,
    /// `None` when the analytic rate is zero.
    relative_error: Option<f64>,
}

pub fn simulate(args: SimulateArgs) -> Result<String, Failure> {
    let doc = load_model(&args.model)?;
    let streaming = &doc.model.streaming;
    let seed = args.seed.or(doc.utterance.as_ref().map(|u| u.seed)).unwrap_or(0);

    let (utterance, generated) = match (&args.utterance, &doc.utterance) {
        (Some(path), _) => {
            let duration = args
                .duration_s
                .ok_or_else(|| input(anyhow!("--utterance needs --duration-s")))?;
            let u = UtteranceProfile::from_csv(&read(path)?, duration)
                .with_context(|| path.display().to_string())
                .map_err(Failure::Input)?;
            (u, None)
        }
        (None, from_config) => {
            let base = from_config.clone().unwrap_or(UtteranceSpec {
                duration_s: 160.0,
                token_rate_hz: streaming.token_rate_hz,
                process: TokenProcess::Regular,
                seed,
            });
            let spec = UtteranceSpec {
                duration_s: args.duration_s.unwrap_or(base.duration_s),
                process: args.process.map_or(base.process, Into::into),
                seed,
                ..base
            };
            let u = UtteranceProfile::generate(&spec).map_err(input)?;
            (u, Some(spec))
        }
    };
    let expansion: JoinerExpansion = args.expansion.into();
    let counts = simulate_decode_with(streaming, &utterance, seed, expansion).map_err(input)?;
    let decoded_s = counts.encoder as f64 * f64::from(streaming.chunk_ms) / 1000.0;
    let sim = counts.rates(decoded_s);
    let analytic: InvocationProfile<f64> = invocation_profile(streaming);

    let rel = |s: f64, a: f64| (a != 0.0).then(|| (s - a) / a).or((s == 0.0).then_some(0.0));
    let rows = [
        ("encoder", counts.encoder, sim.encoder_hz, analytic.encoder_hz),
        ("predictor", counts.predictor, sim.predictor_hz, analytic.predictor_hz),
        ("joiner", counts.joiner, sim.joiner_hz, analytic.joiner_hz),
    ]
    .map(|(component, count, s, a)| RateComparison {
        component,
        count,
        simulated_hz: s,
        analytic_hz: a,
        relative_error: rel(s, a),
    });

    let mut text = String::new();
    header(&mut text, &args.model, &doc);
    let _ = writeln!(
        text,
        "utterance: {:.2} s, {} tokens, decoded {:.2} s ({} frames), seed {seed}",
        utterance.duration_s(),
        utterance.token_times().len(),
        decoded_s,
        counts.frames
    );
    let _ = writeln!(text, "{:<10} {:>8} {:>12} {:>12} {:>9}", "component", "count", "simulated_hz", "analytic_hz", "error_%");
    let mut csv = String::from("component,count,simulated_hz,analytic_hz,relative_error\n");
    for r in &rows {
        let err = r.relative_error.map_or("n/a".to_string(), |e| format!("{:.2}", e * 100.0));
        let _ = writeln!(
            text,
            "{:<10} {:>8} {:>12.2} {:>12.2} {:>9}",
            r.component, r.count, r.simulated_hz, r.analytic_hz, err
        );
        let _ = writeln!(
            csv,
            "{},{},{:.4},{:.4},{}",
            r.component,
            r.count,
            r.simulated_hz,
            r.analytic_hz,
            r.relative_error.map_or(String::new(), |e| format!("{e:.6}"))
        );
    }

    #[derive(Serialize)]
    struct Settings<'a> {
        #[serde(flatten)]
        model: ModelSettings<'a>,
        utterance_file: Option<&'a Path>,
        duration_s: f64,
        expansion: JoinerExpansion,
        seed: u64,
    }
    let settings = Settings {
        model: ModelSettings {
            config: &args.model.config,
            placement: mode_name(args.model.placement.into()),
            calibration: doc.model.memory.energy_calibration,
        },
        utterance_file: args.utterance.as_deref(),
        duration_s: utterance.duration_s(),
        expansion,
        seed,
    };
    #[derive(Serialize)]
    struct SimResult<'a> {
        counts: asr_power::workload::InvocationCounts,
        decoded_s: f64,
        rates: &'a [RateComparison],
    }
    let resolved = serialize_document(&doc.model, generated.as_ref());
    let result = SimResult {
        counts,
        decoded_s,
        rates: &rows,
    };
    let json = Report::new("simulate", &settings, Some(&resolved), &result).to_json()?;
    write_all(args.out.as_deref(), &[("report.json", json), ("invocations.csv", csv)])?;
    Ok(text)
}
