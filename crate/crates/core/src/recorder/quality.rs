use super::{FrequencyReport, RawRecording, RecorderError, StreamSpec, StreamStats};

/// Check each stream's mean sampling rate and inter-arrival jitter against its spec.
///
/// `mean_hz = (n - 1) / ((t_last - t_first) / 1e9)`; `period_std_ns` is the
/// population standard deviation of successive gaps.
pub fn validate_frequencies(
    rec: &RawRecording,
    specs: &[StreamSpec],
) -> Result<FrequencyReport, RecorderError> {
    let mut streams = Vec::with_capacity(specs.len());
    for spec in specs {
        spec.validate()?;
        let frames = rec.streams.get(&spec.topic).map(Vec::as_slice).unwrap_or(&[]);
        let n = frames.len();
        if n < 2 {
            return Err(RecorderError::InsufficientFrames { topic: spec.topic.to_string(), n });
        }
        let span_ns = (frames[n - 1].t_ns - frames[0].t_ns) as f64;
        // all frames at one instant: no measurable rate
        let mean_hz = if span_ns > 0.0 { (n - 1) as f64 / (span_ns / 1e9) } else { 0.0 };
        let gaps: Vec<f64> = frames.windows(2).map(|w| (w[1].t_ns - w[0].t_ns) as f64).collect();
        let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let var = gaps.iter().map(|g| (g - mean_gap).powi(2)).sum::<f64>() / gaps.len() as f64;
        let period_std_ns = var.sqrt();

        let mut reasons = Vec::new();
        let rate_limit = spec.rate_tolerance_frac * spec.nominal_hz;
        if !((mean_hz - spec.nominal_hz).abs() <= rate_limit) {
            reasons.push(format!(
                "mean rate {mean_hz:.3} Hz deviates from nominal {} Hz by more than {rate_limit:.3} Hz",
                spec.nominal_hz
            ));
        }
        let std_limit = spec.max_period_std_frac * spec.nominal_period_ns();
        if period_std_ns > std_limit {
            reasons.push(format!(
                "period std {period_std_ns:.0} ns exceeds {std_limit:.0} ns"
            ));
        }
        streams.push(StreamStats {
            topic: spec.topic.clone(),
            role: spec.role,
            nominal_hz: spec.nominal_hz,
            rate_tolerance_frac: spec.rate_tolerance_frac,
            max_period_std_frac: spec.max_period_std_frac,
            n_frames: n,
            mean_hz,
            period_std_ns,
            pass: reasons.is_empty(),
            reasons,
        });
    }
    Ok(FrequencyReport { streams })
}
