//! Central finite-difference gradient checking.
//!
//! Max routing (pooling argmaxes, region-to-pixel winners) makes the loss
//! piecewise linear in places; a perturbation that flips a routing decision
//! invalidates the central difference at that coordinate. Probes therefore
//! report a routing signature and the harness skips coordinates whose
//! signature differs between the two perturbed evaluations.

use crate::tensor::Tensor;

/// One probe of the function under test: scalar output plus a hash of every
/// discrete routing decision taken during evaluation.
#[derive(Clone, Copy, Debug)]
pub struct Probe {
    pub loss: f64,
    pub routing: u64,
}

impl Probe {
    pub fn smooth(loss: f64) -> Self {
        Probe { loss, routing: 0 }
    }
}

/// FNV-1a accumulator for routing decisions.
#[derive(Clone, Copy, Debug)]
pub struct RoutingHash(u64);

impl RoutingHash {
    pub fn new() -> Self {
        RoutingHash(0xcbf2_9ce4_8422_2325)
    }

    #[inline]
    pub fn mix(&mut self, v: u64) {
        let mut h = self.0;
        for byte in v.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.0 = h;
    }

    #[inline]
    pub fn mix_i64(&mut self, v: i64) {
        self.mix(v as u64);
    }

    pub fn mix_slice_u32(&mut self, vs: &[u32]) {
        for &v in vs {
            self.mix(v as u64);
        }
    }

    /// Positivity pattern of an activation tensor (relu routing).
    pub fn mix_sign_pattern(&mut self, t: &Tensor) {
        let mut word = 0u64;
        let mut bits = 0;
        for &v in t.data() {
            word = (word << 1) | (v > 0.0) as u64;
            bits += 1;
            if bits == 64 {
                self.mix(word);
                word = 0;
                bits = 0;
            }
        }
        if bits > 0 {
            self.mix(word);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for RoutingHash {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Checks `analytic` against central differences of `probe` at every
/// coordinate of `input`.
pub fn check_gradient<F>(probe: F, input: &Tensor, analytic: &Tensor, eps: f64) -> GradReport
where
    F: FnMut(&Tensor) -> Probe,
{
    let coords: Vec<usize> = (0..input.len()).collect();
    check_gradient_at(probe, input, analytic, eps, &coords)
}

/// Same as [`check_gradient`] but restricted to a coordinate subset, for
/// whole-model checks over sampled weights.
pub fn check_gradient_at<F>(
    mut probe: F,
    input: &Tensor,
    analytic: &Tensor,
    eps: f64,
    coords: &[usize],
) -> GradReport
where
    F: FnMut(&Tensor) -> Probe,
{
    assert_eq!(input.shape(), analytic.shape(), "analytic grad shape mismatch");
    let mut report = GradReport::default();
    let mut work = input.clone();
    for &i in coords {
        let orig = work.data()[i];
        work.data_mut()[i] = orig + eps;
        let plus = probe(&work);
        work.data_mut()[i] = orig - eps;
        let minus = probe(&work);
        work.data_mut()[i] = orig;
        if plus.routing != minus.routing {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus.loss - minus.loss) / (2.0 * eps);
        let err = rel_error(analytic.data()[i], numeric);
        if err > report.max_rel_err {
            report.max_rel_err = err;
        }
        report.checked += 1;
    }
    report
}
