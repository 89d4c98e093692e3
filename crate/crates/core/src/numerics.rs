//! Small numerical utilities shared across the crate: deterministic
//! low-discrepancy sampling, adaptive quadrature, scalar root/minimum
//! refinement, monotone cubic interpolation, and dense linear solves for
//! the tiny systems (dim <= 4) that chart Jacobians produce.

/// Deterministic low-discrepancy point sequence on the unit cube.
///
/// Additive Kronecker recurrence with the generalized golden ratio per
/// dimension; the seed only shifts the starting phase, so two runs with the
/// same seed enumerate identical points.
pub struct KroneckerSeq {
    alpha: Vec<f64>,
    state: Vec<f64>,
}

impl KroneckerSeq {
    pub fn new(dim: usize, seed: u64) -> Self {
        // Unique positive root of x^(d+1) = x + 1.
        let mut phi = 1.5_f64;
        for _ in 0..64 {
            phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
        }
        let alpha: Vec<f64> = (1..=dim).map(|j| (1.0 / phi.powi(j as i32)).fract()).collect();
        // Splitmix the seed into per-axis phases.
        let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let state = (0..dim)
            .map(|_| {
                z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
                let mut x = z;
                x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
                x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
                x ^= x >> 31;
                (x as f64 / u64::MAX as f64).fract()
            })
            .collect();
        KroneckerSeq { alpha, state }
    }

    /// Next point in the open unit cube (0,1)^dim.
    pub fn next_point(&mut self) -> Vec<f64> {
        for (s, a) in self.state.iter_mut().zip(&self.alpha) {
            *s = (*s + a).fract();
        }
        self.state.clone()
    }

    /// Next point scaled into the given box.
    pub fn next_in_box(&mut self, lo_hi: &[(f64, f64)]) -> Vec<f64> {
        self.next_point()
            .iter()
            .zip(lo_hi)
            .map(|(t, (lo, hi))| lo + t * (hi - lo))
            .collect()
    }
}

/// Adaptive Simpson quadrature. Returns an error when the recursion budget
/// is exhausted before the tolerance is met.
pub fn adaptive_simpson<F>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64, QuadratureError>
where
    F: Fn(f64) -> Result<f64, QuadratureError>,
{
    let fa = f(a)?;
    let fb = f(b)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fb, fm, whole, tol, 48)
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum QuadratureError {
    #[error("quadrature did not converge to the requested tolerance")]
    NoConvergence,
    #[error("integrand evaluation failed: {0}")]
    Integrand(String),
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, QuadratureError>
where
    F: Fn(f64) -> Result<f64, QuadratureError>,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || (b - a).abs() < 1e-14 {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(QuadratureError::NoConvergence);
    }
    let l = simpson_rec(f, a, m, fa, fm, flm, left, 0.5 * tol, depth - 1)?;
    let r = simpson_rec(f, m, b, fm, fb, frm, right, 0.5 * tol, depth - 1)?;
    Ok(l + r)
}

/// Bisection on a bracketing interval; `fa` and `f(b)` must have opposite
/// signs. Converges to `tol` in the abscissa.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, mut fa: f64, tol: f64) -> f64 {
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Golden-section minimization of a unimodal scalar function on [a, b].
pub fn golden_min<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let m = 0.5 * (a + b);
    let fm = f(m);
    if fm <= fc && fm <= fd {
        (m, fm)
    } else if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Fritsch-Carlson slopes for a monotone cubic Hermite interpolant.
pub fn pchip_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    assert!(n >= 2 && ys.len() == n);
    let h: Vec<f64> = (0..n - 1).map(|i| xs[i + 1] - xs[i]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
    let mut m = vec![0.0; n];
    m[0] = delta[0];
    m[n - 1] = delta[n - 2];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] <= 0.0 {
            m[i] = 0.0;
        } else {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            m[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    // Clamp endpoint slopes to keep monotonicity.
    for (i, d) in [(0usize, 0usize), (n - 1, n - 2)] {
        if m[i] * delta[d] < 0.0 {
            m[i] = 0.0;
        } else if m[i].abs() > 3.0 * delta[d].abs() {
            m[i] = 3.0 * delta[d];
        }
    }
    m
}

/// Evaluate the monotone cubic Hermite interpolant at `x`.
pub fn pchip_eval(xs: &[f64], ys: &[f64], slopes: &[f64], x: f64) -> f64 {
    let n = xs.len();
    let i = match xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
        Ok(i) => i.min(n - 2),
        Err(0) => 0,
        Err(i) if i >= n => n - 2,
        Err(i) => i - 1,
    };
    let h = xs[i + 1] - xs[i];
    let t = (x - xs[i]) / h;
    let (t2, t3) = (t * t, t * t * t);
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * ys[i] + h10 * h * slopes[i] + h01 * ys[i + 1] + h11 * h * slopes[i + 1]
}

/// Solve A x = b by Gaussian elimination with partial pivoting.
/// Returns None when the pivot falls below `1e-13 * scale`.
pub fn solve_linear(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().cloned().collect();
    let mut rhs = b.to_vec();
    let scale = m
        .iter()
        .flat_map(|r| r.iter().map(|v| v.abs()))
        .fold(0.0_f64, f64::max)
        .max(1.0);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())?;
        if m[piv][col].abs() < 1e-13 * scale {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = rhs[row];
        for k in row + 1..n {
            s -= m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    Some(x)
}

/// Determinant by LU with partial pivoting.
pub fn determinant(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        if m[piv][col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            m.swap(col, piv);
            det = -det;
        }
        det *= m[col][col];
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    det
}

/// Invert a small matrix; None when singular.
pub fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cols.push(solve_linear(a, &e)?);
    }
    // cols[j] is the j-th column of the inverse.
    let mut inv = vec![vec![0.0; n]; n];
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            inv[i][j] = *v;
        }
    }
    Some(inv)
}

pub fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(r, v)| r * v).sum()).collect()
}

/// Max-norm of a difference.
pub fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_matches_atan() {
        let f = |u: f64| Ok(1.0 / (1.0 + u * u));
        for x in [0.25_f64, 1.0, 2.5, -1.75] {
            let (a, b) = if x >= 0.0 { (0.0, x) } else { (x, 0.0) };
            let v = adaptive_simpson(&f, a, b, 1e-12).unwrap();
            let v = if x >= 0.0 { v } else { -v };
            assert!((v - x.atan()).abs() < 1e-10, "x={x} got {v}");
        }
    }

    #[test]
    fn kronecker_is_deterministic_and_in_cube() {
        let mut a = KroneckerSeq::new(3, 7);
        let mut b = KroneckerSeq::new(3, 7);
        for _ in 0..100 {
            let p = a.next_point();
            assert_eq!(p, b.next_point());
            assert!(p.iter().all(|v| (0.0..1.0).contains(v)));
        }
    }

    #[test]
    fn linear_solve_roundtrip() {
        let a = vec![vec![2.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 4.0]];
        let b = vec![1.0, 2.0, 3.0];
        let x = solve_linear(&a, &b).unwrap();
        let back = mat_vec(&a, &x);
        assert!(inf_dist(&back, &b) < 1e-12);
        assert!((determinant(&a) - 18.0).abs() < 1e-12);
    }

    #[test]
    fn pchip_preserves_monotonicity() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.atan()).collect();
        let m = pchip_slopes(&xs, &ys);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..200 {
            let x = 2.7 * k as f64 / 199.0;
            let y = pchip_eval(&xs, &ys, &m, x);
            assert!(y >= prev - 1e-12);
            prev = y;
        }
    }

    #[test]
    fn bisect_finds_root() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, -2.0, 1e-12);
        assert!((r - 2.0_f64.sqrt()).abs() < 1e-11);
    }
}
