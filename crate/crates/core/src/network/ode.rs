//! Dormand–Prince 5(4) with embedded error control and FSAL reuse.

use nalgebra::DVector;

// Butcher tableau.

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Fifth-order weights minus embedded fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            rtol: 1e-7,
            atol: 1e-9,
            h_init: 1e-3,
            h_max: 0.5,
            h_min: 1e-12,
            max_steps: 1_000_000,
        }
    }
}

/// What the observer wants after an accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OdeOutcome {
    /// Reached `t_end` or the observer asked to stop.
    Finished { t: f64 },
    StepUnderflow { t: f64, h: f64 },
    NonFinite { t: f64 },
    TooManySteps { t: f64 },
}

/// Integrates `y' = f(y)` (autonomous) from `t0` to `t_end`.
///
/// `stops` are times the integrator must land on exactly (sorted, inside
/// `(t0, t_end]`). After every accepted step `observe(t, y, f(y), on_stop)`
/// is called; `on_stop` tells whether `t` is one of `stops`.
pub fn dormand_prince<F, O>(
    mut f: F,
    t0: f64,
    y0: &DVector<f64>,
    t_end: f64,
    stops: &[f64],
    ctl: &StepControl,
    mut observe: O,
) -> OdeOutcome
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>),
    O: FnMut(f64, &DVector<f64>, &DVector<f64>, bool) -> Flow,
{
    let n = y0.len();
    let mut y = y0.clone();
    let mut t = t0;
    let mut h = ctl.h_init.min(ctl.h_max);
    let mut k1 = DVector::zeros(n);
    let mut k2 = DVector::zeros(n);
    let mut k3 = DVector::zeros(n);
    let mut k4 = DVector::zeros(n);
    let mut k5 = DVector::zeros(n);
    let mut k6 = DVector::zeros(n);
    let mut k7 = DVector::zeros(n);
    let mut tmp = DVector::zeros(n);
    let mut y_new = DVector::zeros(n);
    f(&y, &mut k1);

    let mut stop_idx = 0;
    let mut steps = 0;
    while t < t_end {
        if steps >= ctl.max_steps {
            return OdeOutcome::TooManySteps { t };
        }
        let next_stop = stops.get(stop_idx).copied().unwrap_or(t_end).min(t_end);
        let mut h_try = h.min(next_stop - t);
        let landing = h_try >= next_stop - t;
        if landing {
            h_try = next_stop - t;
        }

        tmp.copy_from(&y);
        tmp.axpy(h_try * A21, &k1, 1.0);
        f(&tmp, &mut k2);

        tmp.copy_from(&y);
        tmp.axpy(h_try * A31, &k1, 1.0);
        tmp.axpy(h_try * A32, &k2, 1.0);
        f(&tmp, &mut k3);

        tmp.copy_from(&y);
        tmp.axpy(h_try * A41, &k1, 1.0);
        tmp.axpy(h_try * A42, &k2, 1.0);
        tmp.axpy(h_try * A43, &k3, 1.0);
        f(&tmp, &mut k4);

        tmp.copy_from(&y);
        tmp.axpy(h_try * A51, &k1, 1.0);
        tmp.axpy(h_try * A52, &k2, 1.0);
        tmp.axpy(h_try * A53, &k3, 1.0);
        tmp.axpy(h_try * A54, &k4, 1.0);
        f(&tmp, &mut k5);

        tmp.copy_from(&y);
        tmp.axpy(h_try * A61, &k1, 1.0);
        tmp.axpy(h_try * A62, &k2, 1.0);
        tmp.axpy(h_try * A63, &k3, 1.0);
        tmp.axpy(h_try * A64, &k4, 1.0);
        tmp.axpy(h_try * A65, &k5, 1.0);
        f(&tmp, &mut k6);

        y_new.copy_from(&y);
        y_new.axpy(h_try * A71, &k1, 1.0);
        y_new.axpy(h_try * A73, &k3, 1.0);
        y_new.axpy(h_try * A74, &k4, 1.0);
        y_new.axpy(h_try * A75, &k5, 1.0);
        y_new.axpy(h_try * A76, &k6, 1.0);
        f(&y_new, &mut k7);

        let mut err_sq = 0.0;
        for i in 0..n {
            let e = h_try * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = ctl.atol + ctl.rtol * y[i].abs().max(y_new[i].abs());
            err_sq += (e / sc) * (e / sc);
        }
        let err = (err_sq / n.max(1) as f64).sqrt();
        if !err.is_finite() {
            if y_new.iter().all(|v| v.is_finite()) {
                h = h_try * 0.2;
            } else {
                return OdeOutcome::NonFinite { t };
            }
            if h < ctl.h_min {
                return OdeOutcome::StepUnderflow { t, h };
            }
            continue;
        }

        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        if err <= 1.0 {
            steps += 1;
            t = if landing { next_stop } else { t + h_try };
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            let on_stop = landing && stop_idx < stops.len() && next_stop == stops[stop_idx];
            if on_stop {
                stop_idx += 1;
            }
            // A step shortened to land on a stop does not shrink the
            // proposal for the next one.
            let proposal = h_try * factor;
            h = if landing { h.max(proposal) } else { proposal }.min(ctl.h_max);
            if observe(t, &y, &k1, on_stop) == Flow::Stop {
                return OdeOutcome::Finished { t };
            }
        } else {
            h = h_try * factor;
            if h < ctl.h_min {
                return OdeOutcome::StepUnderflow { t, h };
            }
        }
    }
    OdeOutcome::Finished { t }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let y0 = DVector::from_vec(vec![1.0, 2.0]);
        let mut last = (0.0, y0.clone());
        let out = dormand_prince(
            |y, dy| dy.copy_from(&(-y)),
            0.0,
            &y0,
            5.0,
            &[],
            &StepControl::default(),
            |t, y, _, _| {
                last = (t, y.clone());
                Flow::Continue
            },
        );
        assert_eq!(out, OdeOutcome::Finished { t: 5.0 });
        assert_eq!(last.0, 5.0);
        assert!((last.1[0] - (-5.0f64).exp()).abs() < 1e-8);
        assert!((last.1[1] - 2.0 * (-5.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn lands_on_stops() {
        let y0 = DVector::from_vec(vec![0.0]);
        let stops = [0.1, 0.25, 1.0, 3.5];
        let mut hit = Vec::new();
        dormand_prince(
            |_, dy| dy[0] = 1.0,
            0.0,
            &y0,
            4.0,
            &stops,
            &StepControl::default(),
            |t, y, _, on_stop| {
                if on_stop {
                    hit.push((t, y[0]));
                }
                Flow::Continue
            },
        );
        assert_eq!(hit.iter().map(|h| h.0).collect::<Vec<_>>(), stops.to_vec());
        for (t, y) in hit {
            assert!((t - y).abs() < 1e-12);
        }
    }

    #[test]
    fn harmonic_oscillator_accuracy() {
        let y0 = DVector::from_vec(vec![1.0, 0.0]);
        let mut end = y0.clone();
        let ctl = StepControl { rtol: 1e-10, atol: 1e-12, ..Default::default() };
        dormand_prince(
            |y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            0.0,
            &y0,
            2.0 * std::f64::consts::PI,
            &[],
            &ctl,
            |_, y, _, _| {
                end = y.clone();
                Flow::Continue
            },
        );
        assert!((end[0] - 1.0).abs() < 1e-8 && end[1].abs() < 1e-8);
    }

    #[test]
    fn blow_up_fails() {
        let y0 = DVector::from_vec(vec![1.0]);
        let out = dormand_prince(
            |y, dy| dy[0] = y[0] * y[0],
            0.0,
            &y0,
            2.0,
            &[],
            &StepControl::default(),
            |_, _, _, _| Flow::Continue,
        );
        assert!(matches!(out, OdeOutcome::StepUnderflow { .. } | OdeOutcome::NonFinite { .. }));
    }
}
