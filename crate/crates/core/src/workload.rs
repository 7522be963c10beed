//! Invocation frequencies of the transducer components.
//!
//! The encoder runs once per chunk, the joiner once per frame plus a number
//! of extra calls for every emitted token, and the predictor once per
//! emitted token. [`invocation_profile`] gives the analytic rates and
//! [`simulate_decode`] replays the same loop event by event.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{InvocationRole, StreamingParams};
use crate::scalar::Scalar;

/// Calls per second of audio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InvocationProfile<T> {
    pub encoder_hz: T,
    pub predictor_hz: T,
    pub joiner_hz: T,
    pub frame_rate_hz: T,
}

impl<T: Scalar> InvocationProfile<T> {
    pub fn hz_for(&self, role: InvocationRole) -> T {
        match role {
            InvocationRole::Encoder => self.encoder_hz,
            InvocationRole::Predictor => self.predictor_hz,
            InvocationRole::Joiner => self.joiner_hz,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("no joiner_beta reproduces {observed} Hz with zero token rate and frame rate {frame_rate} Hz")]
    NoSolution { observed: f64, frame_rate: f64 },
    #[error("observed joiner rate {observed} Hz is below the frame rate {frame_rate} Hz")]
    BelowFrameRate { observed: f64, frame_rate: f64 },
    #[error("token timestamps must be strictly increasing and within [0, {duration_s}] s (offending index {index})")]
    BadTimestamps { index: usize, duration_s: f64 },
    #[error("utterance of {duration_s} s is shorter than one {chunk_ms} ms chunk")]
    TooShort { duration_s: f64, chunk_ms: u32 },
    #[error("invalid utterance: {0}")]
    InvalidUtterance(String),
}

/// Analytic per-component invocation rates.
pub fn invocation_profile<T: Scalar>(p: &StreamingParams) -> InvocationProfile<T> {
    let thousand = T::lit(1000.0);
    let frame_rate_hz = thousand / T::from_count(p.input_stride_ms.into());
    let token_rate = T::lit(p.token_rate_hz);
    InvocationProfile {
        encoder_hz: thousand / T::from_count(p.chunk_ms.into()),
        predictor_hz: token_rate,
        joiner_hz: frame_rate_hz + T::lit(p.joiner_beta) * token_rate,
        frame_rate_hz,
    }
}

/// Inverts the joiner-rate formula for `joiner_beta`.
pub fn calibrate_joiner_beta<T: Scalar>(observed_joiner_hz: T, frame_rate_hz: T, token_rate_hz: T) -> Result<T, WorkloadError> {
    if observed_joiner_hz < frame_rate_hz {
        return Err(WorkloadError::BelowFrameRate {
            observed: observed_joiner_hz.as_f64(),
            frame_rate: frame_rate_hz.as_f64(),
        });
    }
    if token_rate_hz.is_zero() {
        if observed_joiner_hz == frame_rate_hz {
            return Ok(T::zero());
        }
        return Err(WorkloadError::NoSolution {
            observed: observed_joiner_hz.as_f64(),
            frame_rate: frame_rate_hz.as_f64(),
        });
    }
    Ok((observed_joiner_hz - frame_rate_hz) / token_rate_hz)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenProcess {
    /// Evenly spaced emissions.
    #[default]
    Regular,
    /// Poisson arrivals.
    Poisson,
}

/// Generative utterance description, as written in a config document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceSpec {
    pub duration_s: f64,
    pub token_rate_hz: f64,
    #[serde(default)]
    pub process: TokenProcess,
    #[serde(default)]
    pub seed: u64,
}

/// An utterance with concrete token emission times.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceProfile {
    duration_s: f64,
    token_times: Vec<f64>,
}

impl UtteranceProfile {
    pub fn new(duration_s: f64, token_times: Vec<f64>) -> Result<Self, WorkloadError> {
        if !(duration_s > 0.0 && duration_s.is_finite()) {
            return Err(WorkloadError::InvalidUtterance(format!("duration_s must be positive, got {duration_s}")));
        }
        let mut prev = f64::NEG_INFINITY;
        for (index, &t) in token_times.iter().enumerate() {
            if !(t > prev && (0.0..=duration_s).contains(&t)) {
                return Err(WorkloadError::BadTimestamps { index, duration_s });
            }
            prev = t;
        }
        Ok(UtteranceProfile { duration_s, token_times })
    }

    pub fn blank(duration_s: f64) -> Result<Self, WorkloadError> {
        Self::new(duration_s, Vec::new())
    }

    pub fn generate(spec: &UtteranceSpec) -> Result<Self, WorkloadError> {
        let UtteranceSpec {
            duration_s,
            token_rate_hz,
            process,
            seed,
        } = *spec;
        if !(token_rate_hz >= 0.0 && token_rate_hz.is_finite()) {
            return Err(WorkloadError::InvalidUtterance(format!("token_rate_hz must be >= 0, got {token_rate_hz}")));
        }
        let mut times = Vec::new();
        if token_rate_hz > 0.0 {
            match process {
                TokenProcess::Regular => {
                    let mut k = 0u64;
                    loop {
                        let t = k as f64 / token_rate_hz;
                        if t > duration_s {
                            break;
                        }
                        times.push(t);
                        k += 1;
                    }
                }
                TokenProcess::Poisson => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let gap = Exp::new(token_rate_hz).expect("positive rate");
                    let mut t = gap.sample(&mut rng);
                    while t <= duration_s {
                        times.push(t);
                        t += gap.sample(&mut rng);
                    }
                }
            }
        }
        Self::new(duration_s, times)
    }

    /// Reads a CSV with one timestamp (seconds) per row under a `time_s`
    /// header.
    pub fn from_csv(text: &str, duration_s: f64) -> Result<Self, WorkloadError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| WorkloadError::InvalidUtterance(e.to_string()))?
            .clone();
        let col = headers
            .iter()
            .position(|h| h == "time_s")
            .ok_or_else(|| WorkloadError::InvalidUtterance("missing `time_s` column".into()))?;
        let mut times = Vec::new();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| WorkloadError::InvalidUtterance(e.to_string()))?;
            let field = rec.get(col).unwrap_or("");
            let t: f64 = field
                .parse()
                .map_err(|_| WorkloadError::InvalidUtterance(format!("row {}: `{field}` is not a number", row + 1)))?;
            times.push(t);
        }
        Self::new(duration_s, times)
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    pub fn token_times(&self) -> &[f64] {
        &self.token_times
    }
}

/// How the joiner calls spent per emitted token are drawn. Both have mean
/// `joiner_beta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JoinerExpansion {
    /// `floor(beta)` calls plus one more with probability `frac(beta)`.
    #[default]
    Rounded,
    /// Geometric count of calls on `{0, 1, ...}`.
    Geometric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct InvocationCounts {
    pub encoder: u64,
    pub predictor: u64,
    pub joiner: u64,
    pub frames: u64,
}

impl InvocationCounts {
    pub fn rates(&self, duration_s: f64) -> InvocationProfile<f64> {
        InvocationProfile {
            encoder_hz: self.encoder as f64 / duration_s,
            predictor_hz: self.predictor as f64 / duration_s,
            joiner_hz: self.joiner as f64 / duration_s,
            frame_rate_hz: self.frames as f64 / duration_s,
        }
    }
}

pub fn simulate_decode(p: &StreamingParams, u: &UtteranceProfile, seed: u64) -> Result<InvocationCounts, WorkloadError> {
    simulate_decode_with(p, u, seed, JoinerExpansion::default())
}

/// Greedy streaming decode loop: one encoder call per complete chunk; for
/// each frame, one predictor call per emitted token and joiner calls until a
/// blank closes the frame. Audio after the last complete chunk is not
/// decoded.
pub fn simulate_decode_with(
    p: &StreamingParams,
    u: &UtteranceProfile,
    seed: u64,
    expansion: JoinerExpansion,
) -> Result<InvocationCounts, WorkloadError> {
    let duration_ms = u.duration_s * 1000.0;
    let chunks = (duration_ms / f64::from(p.chunk_ms) + 1e-9).floor() as u64;
    if chunks == 0 {
        return Err(WorkloadError::TooShort {
            duration_s: u.duration_s,
            chunk_ms: p.chunk_ms,
        });
    }
    let frames_per_chunk = u64::from(p.frames_per_chunk());
    let frames = chunks * frames_per_chunk;

    let mut per_frame = vec![0u32; frames as usize];
    let stride_s = f64::from(p.input_stride_ms) / 1000.0;
    for &t in &u.token_times {
        let f = (t / stride_s + 1e-9).floor() as u64;
        if f < frames {
            per_frame[f as usize] += 1;
        }
    }

    let beta = p.joiner_beta.max(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geometric = Geometric::new(1.0 / (1.0 + beta)).expect("probability in (0, 1]");
    let whole = beta.floor();
    let frac = beta - whole;

    let mut counts = InvocationCounts {
        encoder: 0,
        predictor: 0,
        joiner: 0,
        frames,
    };
    for chunk in 0..chunks {
        counts.encoder += 1;
        for f in chunk * frames_per_chunk..(chunk + 1) * frames_per_chunk {
            let tokens = per_frame[f as usize];
            // The closing blank.
            counts.joiner += 1;
            for _ in 0..tokens {
                counts.predictor += 1;
                counts.joiner += match expansion {
                    JoinerExpansion::Rounded => whole as u64 + u64::from(rng.random_bool(frac)),
                    JoinerExpansion::Geometric => geometric.sample(&mut rng),
                };
            }
        }
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rational;

    fn params(stride: u32, chunk: u32) -> StreamingParams {
        StreamingParams {
            input_stride_ms: stride,
            chunk_ms: chunk,
            token_rate_hz: 11.53,
            joiner_beta: 7.676,
        }
    }

    #[test]
    fn baseline_profile() {
        let prof: InvocationProfile<f64> = invocation_profile(&params(40, 160));
        assert_eq!(prof.encoder_hz, 6.25);
        assert_eq!(prof.predictor_hz, 11.53);
        assert_eq!(prof.frame_rate_hz, 25.0);
        assert!((prof.joiner_hz - 113.5).abs() < 0.01, "{}", prof.joiner_hz);
    }

    #[test]
    fn stride_20_profile() {
        let prof: InvocationProfile<f64> = invocation_profile(&params(20, 160));
        assert_eq!(prof.frame_rate_hz, 50.0);
        let oracle = 50.0 + 7.676 * 11.53;
        assert!((prof.joiner_hz - oracle).abs() < 1e-12);
        assert!((prof.joiner_hz - 138.5).abs() < 0.01);
    }

    #[test]
    fn blank_only_stream_runs_joiner_at_frame_rate() {
        let mut p = params(40, 160);
        p.token_rate_hz = 0.0;
        let prof: InvocationProfile<f64> = invocation_profile(&p);
        assert_eq!(prof.joiner_hz, prof.frame_rate_hz);
    }

    #[test]
    fn exact_profile_with_rationals() {
        let mut p = params(40, 160);
        p.joiner_beta = 0.5;
        p.token_rate_hz = 10.0;
        let prof: InvocationProfile<Rational> = invocation_profile(&p);
        assert_eq!(prof.joiner_hz, Rational::from_integer(30));
        assert_eq!(prof.encoder_hz, Rational::new(25, 4));
    }

    #[test]
    fn calibration_inverts_baseline_rate() {
        let beta = calibrate_joiner_beta(113.5_f64, 25.0, 11.53).unwrap();
        assert!((beta - 88.5 / 11.53).abs() < 1e-12);
        assert!((beta - 7.676).abs() < 5e-4);
        let mut p = params(40, 160);
        p.joiner_beta = beta;
        let prof: InvocationProfile<f64> = invocation_profile(&p);
        assert!((prof.joiner_hz - 113.5).abs() < 1e-12);
    }

    #[test]
    fn calibration_edge_cases() {
        assert_eq!(calibrate_joiner_beta(25.0, 25.0, 11.53).unwrap(), 0.0);
        assert!(matches!(calibrate_joiner_beta(113.5, 25.0, 0.0), Err(WorkloadError::NoSolution { .. })));
        assert_eq!(calibrate_joiner_beta(25.0, 25.0, 0.0).unwrap(), 0.0);
        assert!(matches!(calibrate_joiner_beta(20.0, 25.0, 11.53), Err(WorkloadError::BelowFrameRate { .. })));
    }

    #[test]
    fn blank_utterance_counts_are_exact() {
        let u = UtteranceProfile::blank(16.0).unwrap();
        let c = simulate_decode(&params(40, 160), &u, 1).unwrap();
        assert_eq!((c.encoder, c.predictor, c.joiner, c.frames), (100, 0, 400, 400));
    }

    #[test]
    fn single_chunk_utterance() {
        let u = UtteranceProfile::blank(0.16).unwrap();
        let c = simulate_decode(&params(40, 160), &u, 1).unwrap();
        assert_eq!(c.encoder, 1);
        assert_eq!(c.joiner, 4);
        let short = UtteranceProfile::blank(0.1).unwrap();
        assert!(matches!(simulate_decode(&params(40, 160), &short, 1), Err(WorkloadError::TooShort { .. })));
    }

    #[test]
    fn integer_beta_is_deterministic_under_rounding() {
        let mut p = params(40, 160);
        p.joiner_beta = 3.0;
        let u = UtteranceProfile::new(1.6, vec![0.01, 0.5, 1.0]).unwrap();
        let c = simulate_decode(&p, &u, 99).unwrap();
        assert_eq!(c.predictor, 3);
        assert_eq!(c.joiner, 40 + 9);
    }

    #[test]
    fn tokens_after_last_full_chunk_are_ignored() {
        let u = UtteranceProfile::new(0.3, vec![0.05, 0.2]).unwrap();
        let c = simulate_decode(&params(40, 160), &u, 0).unwrap();
        assert_eq!(c.encoder, 1);
        assert_eq!(c.predictor, 1);
    }

    #[test]
    fn timestamps_are_validated() {
        assert!(UtteranceProfile::new(1.0, vec![0.2, 0.1]).is_err());
        assert!(UtteranceProfile::new(1.0, vec![0.2, 0.2]).is_err());
        assert!(UtteranceProfile::new(1.0, vec![1.5]).is_err());
        assert!(UtteranceProfile::new(1.0, vec![-0.1]).is_err());
        assert!(UtteranceProfile::new(1.0, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn csv_timestamps() {
        let u = UtteranceProfile::from_csv("time_s\n0.1\n0.25\n", 1.0).unwrap();
        assert_eq!(u.token_times(), &[0.1, 0.25]);
        assert!(UtteranceProfile::from_csv("t\n0.1\n", 1.0).is_err());
        assert!(UtteranceProfile::from_csv("time_s\nabc\n", 1.0).is_err());
    }

    #[test]
    fn regular_generator_matches_rate() {
        let spec = UtteranceSpec {
            duration_s: 160.0,
            token_rate_hz: 11.53,
            process: TokenProcess::Regular,
            seed: 0,
        };
        let u = UtteranceProfile::generate(&spec).unwrap();
        assert_eq!(u.token_times().len(), (160.0_f64 * 11.53).floor() as usize + 1);
    }

    #[test]
    fn poisson_generator_is_seeded() {
        let spec = UtteranceSpec {
            duration_s: 30.0,
            token_rate_hz: 5.0,
            process: TokenProcess::Poisson,
            seed: 4,
        };
        assert_eq!(UtteranceProfile::generate(&spec).unwrap(), UtteranceProfile::generate(&spec).unwrap());
    }

    #[test]
    fn simulation_is_deterministic_given_seed() {
        let spec = UtteranceSpec {
            duration_s: 20.0,
            token_rate_hz: 11.53,
            process: TokenProcess::Poisson,
            seed: 3,
        };
        let u = UtteranceProfile::generate(&spec).unwrap();
        for exp in [JoinerExpansion::Rounded, JoinerExpansion::Geometric] {
            let a = simulate_decode_with(&params(40, 160), &u, 11, exp).unwrap();
            let b = simulate_decode_with(&params(40, 160), &u, 11, exp).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.encoder, 125);
        }
    }
}
