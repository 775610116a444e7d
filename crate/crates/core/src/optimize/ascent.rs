//! Box-constrained L-BFGS ascent, used for kernel hyperparameters and for
//! refining acquisition maxima.

const MEMORY: usize = 8;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Maximises `f` over the box `[lo, hi]` starting from `x0`.
///
/// `f` returns the value and gradient, or `None` where it is undefined.
/// `first_step` bounds the infinity-norm of the first move. Returns the
/// best point found and its value (`-inf` if `x0` itself is undefined).
pub(crate) fn maximize_box<F>(
    mut f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    max_iter: usize,
    first_step: f64,
) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let clamp = |x: &mut Vec<f64>| {
        for ((v, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
            *v = v.clamp(l, h);
        }
    };
    let mut x = x0.to_vec();
    clamp(&mut x);
    let Some((mut fx, mut g)) = f(&x) else {
        return (x, f64::NEG_INFINITY);
    };
    let mut hist: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();

    for _ in 0..max_iter {
        // Free gradient: drop components pushing out of the box.
        let mut pg = g.clone();
        for i in 0..x.len() {
            if (x[i] <= lo[i] && pg[i] < 0.0) || (x[i] >= hi[i] && pg[i] > 0.0) {
                pg[i] = 0.0;
            }
        }
        let gn = norm_inf(&pg);
        if gn == 0.0 || !gn.is_finite() {
            break;
        }

        let mut d = pg.clone();
        if hist.is_empty() {
            d.iter_mut().for_each(|v| *v *= first_step / gn);
        } else {
            // Two-loop recursion on the minimisation problem of -f.
            let mut alpha = Vec::with_capacity(hist.len());
            for (s, y) in hist.iter().rev() {
                let a = dot(s, &d) / dot(y, s);
                d.iter_mut().zip(y).for_each(|(v, yi)| *v -= a * yi);
                alpha.push(a);
            }
            let (s, y) = hist.last().unwrap();
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
            for ((s, y), a) in hist.iter().zip(alpha.into_iter().rev()) {
                let b = dot(y, &d) / dot(y, s);
                d.iter_mut().zip(s).for_each(|(v, si)| *v += (a - b) * si);
            }
            for i in 0..x.len() {
                if pg[i] == 0.0 {
                    d[i] = 0.0;
                }
            }
            if dot(&d, &pg) <= 0.0 || !d.iter().all(|v| v.is_finite()) {
                d = pg.iter().map(|v| v * first_step / gn).collect();
                hist.clear();
            }
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            clamp(&mut xn);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            if norm_inf(&step) == 0.0 {
                break;
            }
            if let Some((fxn, gnew)) = f(&xn) {
                if fxn.is_finite() && fxn >= fx + 1e-4 * dot(&g, &step) {
                    accepted = Some((xn, fxn, gnew, step));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fxn, gnew, s)) = accepted else {
            break;
        };
        let y: Vec<f64> = g.iter().zip(&gnew).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            hist.push((s.clone(), y));
            if hist.len() > MEMORY {
                hist.remove(0);
            }
        }
        let gain = fxn - fx;
        x = xn;
        fx = fxn;
        g = gnew;
        if gain <= 1e-12 * (1.0 + fx.abs()) && norm_inf(&s) < 1e-9 {
            break;
        }
    }
    (x, fx)
}
