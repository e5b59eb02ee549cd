//! One-dimensional search helpers shared by the numeric bound search and the oracle.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section minimization of `f` on `[a, b]`; stops when the bracket is narrower than `tol`.
/// Returns the best abscissa seen and its value.
pub fn golden_min(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
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
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && lo > 0.0 && hi > lo);
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / (n - 1) as f64;
    let mut out: Vec<f64> = (0..n).map(|i| (a + step * i as f64).exp()).collect();
    out[0] = lo;
    out[n - 1] = hi;
    out
}

/// Aitken's delta-squared extrapolation of three successive terms.
pub fn aitken(a0: f64, a1: f64, a2: f64) -> f64 {
    let d1 = a2 - a1;
    let den = d1 - (a1 - a0);
    if den == 0.0 || !den.is_finite() {
        return a2;
    }
    let x = a2 - d1 * d1 / den;
    if x.is_finite() {
        x
    } else {
        a2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_vertex() {
        let (x, fx) = golden_min(|x| (x - 1.3).powi(2), -4.0, 9.0, 1e-10);
        assert!((x - 1.3).abs() < 1e-9);
        assert!(fx < 1e-18);
    }

    #[test]
    fn golden_respects_boundary_minimum() {
        let (x, _) = golden_min(|x| x, 0.0, 1.0, 1e-12);
        assert!(x < 1e-11);
    }

    #[test]
    fn grid_endpoints_exact() {
        let g = log_grid(1e-8, 1e8, 4096);
        assert_eq!(g.len(), 4096);
        assert_eq!(g[0], 1e-8);
        assert_eq!(g[4095], 1e8);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn aitken_accelerates_geometric_tail() {
        let s = |n: i32| 2.0 - 0.5f64.powi(n);
        assert!((aitken(s(3), s(4), s(5)) - 2.0).abs() < 1e-14);
        assert_eq!(aitken(1.0, 1.0, 1.0), 1.0);
    }
}
