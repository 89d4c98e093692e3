//! Embedded Dormand-Prince 5(4) integrator with continuous (dense) output
//! and a streaming step handler, so event scans never need to retain the
//! whole trajectory.

/// One accepted step with its interpolation coefficients. `eval` is the
/// order-5 continuous extension on [s0, s1] (s1 < s0 when integrating
/// backwards).
#[derive(Debug, Clone)]
pub struct DenseStep {
    pub s0: f64,
    pub s1: f64,
    rcont: [Vec<f64>; 5],
}

impl DenseStep {
    pub fn eval(&self, s: f64) -> Vec<f64> {
        let theta = (s - self.s0) / (self.s1 - self.s0);
        let th1 = 1.0 - theta;
        let n = self.rcont[0].len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let r = &self.rcont;
            out.push(
                r[0][i] + theta * (r[1][i] + th1 * (r[2][i] + theta * (r[3][i] + th1 * r[4][i]))),
            );
        }
        out
    }

    pub fn start(&self) -> Vec<f64> {
        self.rcont[0].clone()
    }

    pub fn end(&self) -> Vec<f64> {
        self.eval(self.s1)
    }
}

/// Handler decision after each accepted step.
pub enum StepOutcome {
    Continue,
    /// Stop the integration at the given in-step parameter value.
    Stop(f64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IntegrationStatus {
    /// Reached the requested endpoint.
    Completed,
    /// A handler requested a stop.
    Stopped,
    /// Step size underflow or persistent stage failure.
    StepFailure,
}

#[derive(Debug, Clone)]
pub struct Integration {
    pub status: IntegrationStatus,
    pub s_end: f64,
    pub y_end: Vec<f64>,
    /// Cumulative wrap counts per coordinate (periodic identifications).
    pub wraps: Vec<i64>,
    pub steps: usize,
}

const SAFETY: f64 = 0.9;
const MIN_SCALE: f64 = 0.2;
const MAX_SCALE: f64 = 10.0;
const MAX_STEPS: usize = 4_000_000;

/// Integrate dy/ds = f(y) from y0 to s = target (signed), calling `on_step`
/// after every accepted step. Periodic coordinates are wrapped into
/// [0, period) between steps; dense output within a step stays unwrapped.
pub fn integrate<F>(
    mut f: F,
    y0: &[f64],
    target: f64,
    tol: f64,
    h_max: f64,
    periods: &[Option<f64>],
    mut on_step: impl FnMut(&DenseStep) -> StepOutcome,
) -> Integration
where
    F: FnMut(&[f64], &mut [f64]) -> Result<(), ()>,
{
    let n = y0.len();
    let dir = if target >= 0.0 { 1.0 } else { -1.0 };
    let mut wraps = vec![0i64; n];
    let mut y = y0.to_vec();
    let mut s = 0.0_f64;
    if target == 0.0 {
        return Integration {
            status: IntegrationStatus::Completed,
            s_end: 0.0,
            y_end: y,
            wraps,
            steps: 0,
        };
    }

    let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; n]).collect();
    if f(&y, &mut k[0]).is_err() {
        return Integration {
            status: IntegrationStatus::StepFailure,
            s_end: s,
            y_end: y,
            wraps,
            steps: 0,
        };
    }

    // Modest initial step; the controller expands it quickly.
    let f_scale = k[0].iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-8);
    let mut h = dir * (0.01 / f_scale).min(h_max).min(target.abs());

    let mut steps = 0usize;
    let mut stage = vec![0.0; n];
    loop {
        if steps >= MAX_STEPS {
            return Integration {
                status: IntegrationStatus::StepFailure,
                s_end: s,
                y_end: y,
                wraps,
                steps,
            };
        }
        let remaining = target - s;
        if remaining.abs() <= 1e-14 * (1.0 + s.abs()) {
            return Integration {
                status: IntegrationStatus::Completed,
                s_end: s,
                y_end: y,
                wraps,
                steps,
            };
        }
        if h.abs() > remaining.abs() {
            h = remaining;
        }
        if h.abs() < 1e-14 * (1.0 + s.abs()) {
            return Integration {
                status: IntegrationStatus::StepFailure,
                s_end: s,
                y_end: y,
                wraps,
                steps,
            };
        }

        match try_step(&mut f, &y, h, &mut k, &mut stage) {
            StageResult::Ok { y_new, err } => {
                let err_norm = error_norm(&y, &y_new, &err, tol);
                if err_norm <= 1.0 {
                    steps += 1;
                    let dense = dense_coeffs(&y, &y_new, h, &k);
                    let step = DenseStep { s0: s, s1: s + h, rcont: dense };
                    let outcome = on_step(&step);
                    if let StepOutcome::Stop(s_stop) = outcome {
                        let mut y_stop = step.eval(s_stop);
                        apply_wrap(&mut y_stop, periods, &mut wraps);
                        return Integration {
                            status: IntegrationStatus::Stopped,
                            s_end: s_stop,
                            y_end: y_stop,
                            wraps,
                            steps,
                        };
                    }
                    s += h;
                    y = y_new;
                    let wrapped = apply_wrap(&mut y, periods, &mut wraps);
                    if wrapped {
                        if f(&y, &mut k[0]).is_err() {
                            return Integration {
                                status: IntegrationStatus::StepFailure,
                                s_end: s,
                                y_end: y,
                                wraps,
                                steps,
                            };
                        }
                    } else {
                        k.swap(0, 6); // FSAL
                    }
                    let scale = SAFETY * err_norm.powf(-0.2);
                    h *= scale.clamp(MIN_SCALE, MAX_SCALE);
                    if h.abs() > h_max {
                        h = dir * h_max;
                    }
                } else {
                    let scale = SAFETY * err_norm.powf(-0.2);
                    h *= scale.clamp(MIN_SCALE, 1.0);
                }
            }
            StageResult::EvalFailed => {
                // A stage left the field's domain of definition; shrink.
                h *= 0.5;
            }
        }
    }
}

fn apply_wrap(y: &mut [f64], periods: &[Option<f64>], wraps: &mut [i64]) -> bool {
    let mut changed = false;
    for (i, p) in periods.iter().enumerate() {
        if let Some(period) = p {
            let w = (y[i] / period).floor();
            if w != 0.0 {
                y[i] -= w * period;
                wraps[i] += w as i64;
                changed = true;
            }
        }
    }
    changed
}

enum StageResult {
    Ok { y_new: Vec<f64>, err: Vec<f64> },
    EvalFailed,
}

#[rustfmt::skip]
fn try_step<F>(f: &mut F, y: &[f64], h: f64, k: &mut [Vec<f64>], stage: &mut [f64]) -> StageResult
where
    F: FnMut(&[f64], &mut [f64]) -> Result<(), ()>,
{
    let n = y.len();
    const A2: [f64; 1] = [0.2];
    const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
    const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
    const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
    const A6: [f64; 5] = [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0];
    const B: [f64; 6] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0];
    const E: [f64; 7] = [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];

    let rows: [&[f64]; 5] = [&A2, &A3, &A4, &A5, &A6];
    for (si, row) in rows.iter().enumerate() {
        for i in 0..n {
            let mut acc = 0.0;
            for (j, a) in row.iter().enumerate() {
                acc += a * k[j][i];
            }
            stage[i] = y[i] + h * acc;
        }
        if f(stage, &mut k[si + 1]).is_err() {
            return StageResult::EvalFailed;
        }
    }
    let mut y_new = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..6 {
            acc += B[j] * k[j][i];
        }
        y_new[i] = y[i] + h * acc;
    }
    if f(&y_new, &mut k[6]).is_err() {
        return StageResult::EvalFailed;
    }
    let mut err = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..7 {
            acc += E[j] * k[j][i];
        }
        err[i] = h * acc;
    }
    StageResult::Ok { y_new, err }
}

fn error_norm(y0: &[f64], y1: &[f64], err: &[f64], tol: f64) -> f64 {
    let n = y0.len() as f64;
    let mut acc = 0.0;
    for i in 0..y0.len() {
        let sk = tol + tol * y0[i].abs().max(y1[i].abs());
        let e = err[i] / sk;
        acc += e * e;
    }
    (acc / n).sqrt()
}

#[rustfmt::skip]
fn dense_coeffs(y0: &[f64], y1: &[f64], h: f64, k: &[Vec<f64>]) -> [Vec<f64>; 5] {
    const D: [f64; 7] = [
        -12715105075.0 / 11282082432.0,
        0.0,
        87487479700.0 / 32700410799.0,
        -10690763975.0 / 1880347072.0,
        701980252875.0 / 199316789632.0,
        -1453857185.0 / 822651844.0,
        69997945.0 / 29380423.0,
    ];
    let n = y0.len();
    let mut r1 = vec![0.0; n];
    let mut r2 = vec![0.0; n];
    let mut r3 = vec![0.0; n];
    let mut r4 = vec![0.0; n];
    let mut r5 = vec![0.0; n];
    for i in 0..n {
        let dy = y1[i] - y0[i];
        let bspl = h * k[0][i] - dy;
        r1[i] = y0[i];
        r2[i] = dy;
        r3[i] = bspl;
        r4[i] = dy - h * k[6][i] - bspl;
        let mut acc = 0.0;
        for j in 0..7 {
            acc += D[j] * k[j][i];
        }
        r5[i] = h * acc;
    }
    [r1, r2, r3, r4, r5]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_flow_quarter_turn() {
        let f = |y: &[f64], dy: &mut [f64]| -> Result<(), ()> {
            dy[0] = -y[1];
            dy[1] = y[0];
            Ok(())
        };
        let out = integrate(
            f,
            &[1.0, 0.0],
            std::f64::consts::FRAC_PI_2,
            1e-9,
            1.0,
            &[None, None],
            |_| StepOutcome::Continue,
        );
        assert_eq!(out.status, IntegrationStatus::Completed);
        assert!(out.y_end[0].abs() < 1e-8);
        assert!((out.y_end[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn dense_output_matches_endpoints_and_midpoint() {
        let f = |y: &[f64], dy: &mut [f64]| -> Result<(), ()> {
            dy[0] = y[0];
            Ok(())
        };
        let mut max_err: f64 = 0.0;
        let out = integrate(f, &[1.0], 1.0, 1e-10, 0.2, &[None], |step| {
            for q in 0..=8 {
                let s = step.s0 + (step.s1 - step.s0) * q as f64 / 8.0;
                let v = step.eval(s)[0];
                max_err = max_err.max((v - s.exp()).abs());
            }
            StepOutcome::Continue
        });
        assert_eq!(out.status, IntegrationStatus::Completed);
        assert!((out.y_end[0] - 1.0_f64.exp()).abs() < 1e-9);
        assert!(max_err < 1e-8, "dense error {max_err}");
    }

    #[test]
    fn wrapping_counts_turns() {
        let f = |_: &[f64], dy: &mut [f64]| -> Result<(), ()> {
            dy[0] = 1.0;
            dy[1] = 0.5;
            Ok(())
        };
        let out = integrate(
            f,
            &[0.25, 0.0],
            10.1,
            1e-9,
            0.5,
            &[Some(1.0), Some(1.0)],
            |_| StepOutcome::Continue,
        );
        assert_eq!(out.status, IntegrationStatus::Completed);
        assert_eq!(out.wraps[0], 10);
        assert_eq!(out.wraps[1], 5);
        assert!((out.y_end[0] - 0.35).abs() < 1e-7);
        assert!((out.y_end[1] - 0.05).abs() < 1e-7);
    }

    #[test]
    fn handler_stop_uses_dense_interpolation() {
        let f = |_: &[f64], dy: &mut [f64]| -> Result<(), ()> {
            dy[0] = 2.0;
            Ok(())
        };
        let out = integrate(f, &[0.0], 5.0, 1e-9, 10.0, &[None], |step| {
            // Stop where y = 1, i.e. s = 0.5.
            let (a, b) = (step.start()[0], step.end()[0]);
            if (a - 1.0) * (b - 1.0) <= 0.0 {
                let s = step.s0 + (1.0 - a) / (b - a) * (step.s1 - step.s0);
                StepOutcome::Stop(s)
            } else {
                StepOutcome::Continue
            }
        });
        assert_eq!(out.status, IntegrationStatus::Stopped);
        assert!((out.s_end - 0.5).abs() < 1e-12);
        assert!((out.y_end[0] - 1.0).abs() < 1e-10);
    }
}
