//! Nelder–Mead simplex minimization with dimension-adaptive coefficients
//! (Gao & Han, 2012) and restarts from the best vertex.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Stop when `f_max - f_min <= ftol (1 + |f_min|)`, ...
    pub ftol: f64,
    /// ... or when every vertex is within `xtol (1 + |x|)` of the best, per
    /// coordinate. The value test alone decides on flat ridges, where the
    /// simplex never collapses along the unidentified directions.
    pub xtol: f64,
    /// Iteration budget over all restarts.
    pub max_iter: usize,
    /// Edge length of each fresh simplex.
    pub step: f64,
    pub max_restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            ftol: 1e-10,
            xtol: 1e-8,
            max_iter: 10_000,
            step: 0.5,
            max_restarts: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// All vertices of the first simplex had the same value.
    pub flat: bool,
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

fn simplex_run<F: FnMut(&[f64]) -> f64>(
    f: &mut Counted<F>,
    x0: &[f64],
    f0: f64,
    opts: &NelderMeadOptions,
    budget: usize,
) -> (Vec<f64>, f64, usize, bool, bool) {
    let d = x0.len();
    let df = d as f64;
    let (alpha, beta, gamma, delta) = if d >= 2 {
        (1.0, 1.0 + 2.0 / df, 0.75 - 1.0 / (2.0 * df), 1.0 - 1.0 / df)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    let mut vals = vec![f0];
    for i in 0..d {
        let mut p = x0.to_vec();
        p[i] += opts.step;
        vals.push(f.call(&p));
        pts.push(p);
    }
    let flat = vals.iter().all(|v| *v == f0);
    if flat {
        return (x0.to_vec(), f0, 0, true, true);
    }
    let mut order: Vec<usize> = (0..=d).collect();
    let mut iter = 0;
    let mut centroid = vec![0.0; d];
    let mut trial = vec![0.0; d];
    let mut trial2 = vec![0.0; d];
    loop {
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
        let best = order[0];
        let worst = order[d];
        let fspread = vals[worst] - vals[best];
        let fconv = fspread <= opts.ftol * (1.0 + vals[best].abs());
        let xconv = pts.iter().all(|p| {
            p.iter()
                .zip(&pts[best])
                .all(|(a, b)| (a - b).abs() <= opts.xtol * (1.0 + b.abs()))
        });
        if fconv || xconv {
            return (pts[best].clone(), vals[best], iter, true, false);
        }
        if iter >= budget {
            return (pts[best].clone(), vals[best], iter, false, false);
        }
        iter += 1;
        let second = order[d - 1];
        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &i in &order[..d] {
            for (c, v) in centroid.iter_mut().zip(&pts[i]) {
                *c += v / df;
            }
        }
        let toward = |coef: f64, out: &mut Vec<f64>, pts: &Vec<Vec<f64>>| {
            for k in 0..d {
                out[k] = centroid[k] + coef * (pts[worst][k] - centroid[k]);
            }
        };
        toward(-alpha, &mut trial, &pts);
        let fr = f.call(&trial);
        if fr < vals[best] {
            toward(-alpha * beta, &mut trial2, &pts);
            let fe = f.call(&trial2);
            if fe < fr {
                pts[worst].copy_from_slice(&trial2);
                vals[worst] = fe;
            } else {
                pts[worst].copy_from_slice(&trial);
                vals[worst] = fr;
            }
            continue;
        }
        if fr < vals[second] {
            pts[worst].copy_from_slice(&trial);
            vals[worst] = fr;
            continue;
        }
        // contraction, outside or inside
        let (coef, reference) = if fr < vals[worst] { (-alpha * gamma, fr) } else { (gamma, vals[worst]) };
        toward(coef, &mut trial2, &pts);
        let fc = f.call(&trial2);
        if fc <= reference {
            pts[worst].copy_from_slice(&trial2);
            vals[worst] = fc;
            continue;
        }
        let anchor = pts[best].clone();
        for &i in &order[1..] {
            for (p, a) in pts[i].iter_mut().zip(&anchor) {
                *p = a + delta * (*p - a);
            }
            vals[i] = f.call(&pts[i]);
        }
    }
}

/// Minimizes `f` from `x0`, restarting at the best point until a restart
/// improves the value by less than `ftol (1 + |f|)`.
pub fn minimize<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum {
    let mut f = Counted { f, evals: 0 };
    let mut x = x0.to_vec();
    let mut value = f.call(&x);
    let mut iterations = 0;
    let mut converged = false;
    let mut flat = false;
    for restart in 0..=opts.max_restarts {
        let budget = opts.max_iter.saturating_sub(iterations);
        let (nx, nv, it, conv, fl) = simplex_run(&mut f, &x, value, opts, budget);
        iterations += it;
        if restart == 0 {
            flat = fl;
        }
        let improvement = value - nv;
        if nv <= value {
            x = nx;
            value = nv;
        }
        converged = conv;
        if !conv || fl || improvement <= opts.ftol * (1.0 + value.abs()) {
            break;
        }
    }
    Minimum {
        x,
        value,
        iterations,
        evaluations: f.evals,
        converged,
        flat,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = minimize(f, &[-1.2, 1.0], &NelderMeadOptions::default());
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m.x);
    }

    #[test]
    fn quadratic_many_dims() {
        let f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * (v - 0.5).powi(2)).sum();
        let m = minimize(f, &[0.0; 8], &NelderMeadOptions::default());
        assert!(m.converged);
        assert!(m.x.iter().all(|v| (v - 0.5).abs() < 1e-5));
    }

    #[test]
    fn flat_objective_returns_start() {
        let m = minimize(|_| 3.0, &[1.0, 2.0], &NelderMeadOptions::default());
        assert!(m.flat && m.converged);
        assert_eq!(m.x, vec![1.0, 2.0]);
        assert_eq!(m.value, 3.0);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions {
            max_iter: 5,
            ..Default::default()
        };
        assert!(!minimize(f, &[-1.2, 1.0], &opts).converged);
    }
}
