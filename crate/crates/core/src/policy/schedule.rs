use serde::{Deserialize, Serialize};

use super::PolicyError;

pub const DEFAULT_T: usize = 100;
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.02;

/// Parameters from which a schedule is rebuilt; this is what checkpoints store.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    #[serde(rename = "T")]
    pub t_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec { t_steps: DEFAULT_T, beta_min: DEFAULT_BETA_MIN, beta_max: DEFAULT_BETA_MAX }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule, PolicyError> {
        make_schedule(self.t_steps, self.beta_min, self.beta_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub spec: ScheduleSpec,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }
}

/// Error-free product: `a * b == p + e` exactly.
fn two_product(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Running product of `xs` carried as an unevaluated sum `hi + lo`, so the
/// rounding error of each multiplication is kept instead of accumulated.
fn compensated_cumprod(xs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let (mut hi, mut lo) = (1.0f64, 0.0f64);
    for &x in xs {
        let (p, e) = two_product(hi, x);
        let l = e + lo * x;
        hi = p + l;
        lo = l - (hi - p);
        out.push(hi);
    }
    out
}

/// Linear beta schedule.
pub fn make_schedule(t_steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule, PolicyError> {
    if t_steps == 0 || !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
        return Err(PolicyError::BadRange(format!(
            "need T >= 1 and 0 < beta_min <= beta_max < 1, got T={t_steps}, [{beta_min}, {beta_max}]"
        )));
    }
    let beta: Vec<f64> = if t_steps == 1 {
        vec![beta_min]
    } else {
        (0..t_steps)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (t_steps - 1) as f64)
            .collect()
    };
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let alpha_bar = compensated_cumprod(&alpha);
    Ok(NoiseSchedule { spec: ScheduleSpec { t_steps, beta_min, beta_max }, beta, alpha, alpha_bar })
}

/// `x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`
pub fn forward_noise(x0: &[f32], t: usize, eps: &[f32], sched: &NoiseSchedule) -> Result<Vec<f32>, PolicyError> {
    let ab = *sched
        .alpha_bar
        .get(t)
        .ok_or_else(|| PolicyError::BadTimestep(format!("t={t} outside [0, {})", sched.len())))?;
    if eps.len() != x0.len() {
        return Err(PolicyError::BadTimestep(format!("eps has {} values, x0 has {}", eps.len(), x0.len())));
    }
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(&x, &e)| (a * x as f64 + b * e as f64) as f32).collect())
}

/// The clean-sample estimate implied by a noise prediction (before clipping).
pub fn predict_x0(x_t: &[f32], eps_hat: &[f32], t: usize, sched: &NoiseSchedule) -> Vec<f32> {
    let ab = sched.alpha_bar[t];
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x_t.iter().zip(eps_hat).map(|(&x, &e)| ((x as f64 - b * e as f64) / a) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use proptest::prelude::*;

    /// Exact value of a finite positive double as `m * 2^e`.
    fn dyadic(x: f64) -> (BigUint, i64) {
        let bits = x.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        if exp == 0 {
            (BigUint::from(frac), -1074)
        } else {
            (BigUint::from(frac | (1u64 << 52)), exp - 1075)
        }
    }

    /// Exact product of the given doubles, rounded once to f64.
    fn exact_product(xs: &[f64]) -> f64 {
        let mut m = BigUint::from(1u32);
        let mut e = 0i64;
        for &x in xs {
            let (mx, ex) = dyadic(x);
            m *= mx;
            e += ex;
        }
        // keep the top 64 bits; the discarded tail is below f64 resolution
        let shift = (m.bits() as i64 - 64).max(0);
        let top: u64 = (&m >> shift as usize).try_into().unwrap();
        top as f64 * 2f64.powi((e + shift) as i32)
    }

    #[test]
    fn single_step_schedule() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar, vec![0.5]);
    }

    #[test]
    fn bad_ranges() {
        assert!(matches!(make_schedule(10, 0.02, 1e-4), Err(PolicyError::BadRange(_))));
        assert!(matches!(make_schedule(0, 1e-4, 0.02), Err(PolicyError::BadRange(_))));
        assert!(matches!(make_schedule(10, 0.0, 0.02), Err(PolicyError::BadRange(_))));
        assert!(matches!(make_schedule(10, 1e-4, 1.0), Err(PolicyError::BadRange(_))));
    }

    #[test]
    fn default_schedule_matches_exact_product() {
        let s = make_schedule(100, 1e-4, 0.02).unwrap();
        assert_eq!(s.alpha_bar[0], s.alpha[0]);
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        for t in [0, 1, 10, 50, 99] {
            let oracle = exact_product(&s.alpha[..=t]);
            assert!((s.alpha_bar[t] - oracle).abs() <= 1e-12 * oracle, "t={t}");
        }
        let log_sum: f64 = s.alpha.iter().map(|a| a.ln()).sum();
        assert!((s.alpha_bar[99] - log_sum.exp()).abs() < 1e-12);
    }

    #[test]
    fn forward_noise_hand_values() {
        let s = make_schedule(1, 0.75, 0.75).unwrap();
        // alpha_bar = 0.25: x_t = 0.5 * x0 + sqrt(0.75) * eps
        let x = forward_noise(&[1.0], 0, &[1.0], &s).unwrap();
        assert!((x[0] - 1.3660254).abs() < 1e-6);
        let x = forward_noise(&[0.8, -0.4], 0, &[0.0, 0.0], &s).unwrap();
        assert_eq!(x, vec![0.4, -0.2]);
        let tiny = make_schedule(10, 1e-9, 1e-3).unwrap();
        let x = forward_noise(&[0.3], 0, &[2.0], &tiny).unwrap();
        assert!((x[0] - 0.3).abs() < 1e-4);
        assert!(matches!(forward_noise(&[0.3], 10, &[2.0], &tiny), Err(PolicyError::BadTimestep(_))));
    }

    proptest! {
        #[test]
        fn random_schedules_are_monotone(t in 1usize..300, lo in 1e-6f64..0.1, span in 0f64..0.5) {
            let hi = (lo + span).min(0.999);
            let s = make_schedule(t, lo, hi).unwrap();
            prop_assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
            prop_assert!(s.alpha_bar.iter().all(|&a| 0.0 < a && a < 1.0));
        }

        #[test]
        fn x0_inversion_with_true_noise(
            x0 in prop::collection::vec(-1f32..1.0, 1..48),
            seed in any::<u64>(),
            t in 0usize..100,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let eps: Vec<f32> = x0.iter().map(|_| rng.random_range(-3.0f32..3.0)).collect();
            let s = make_schedule(100, 1e-4, 0.02).unwrap();
            let xt = forward_noise(&x0, t, &eps, &s).unwrap();
            let back = predict_x0(&xt, &eps, t, &s);
            for (a, b) in back.iter().zip(&x0) {
                prop_assert!((a - b).abs() <= 1e-6, "t={} {} vs {}", t, a, b);
            }
        }
    }
}
