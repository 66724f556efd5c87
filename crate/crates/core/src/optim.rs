//! Derivative-free simplex minimization (Nelder–Mead).
//!
//! Used for refitting expression constants and for scaling-law parameter
//! fits. The objective may return non-finite values; such points are treated
//! as infinitely bad, which doubles as constraint handling by rejection.

/// Result of a simplex minimization.
#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

const ALPHA: f64 = 1.0; // reflection
const GAMMA: f64 = 2.0; // expansion
const RHO: f64 = 0.5; // contraction
const SIGMA: f64 = 0.5; // shrink

fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Minimizes `f` starting from `x0`, using at most `max_evals` objective
/// evaluations. `step` sets the initial simplex size per coordinate.
pub fn nelder_mead(
    f: &mut impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_evals: usize,
) -> SimplexResult {
    let n = x0.len();
    assert!(n >= 1, "cannot optimize zero parameters");
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        sanitize(f(x))
    };

    // Initial simplex: x0 plus one step along each axis.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), v0));
    for i in 0..n {
        let mut p = x0.to_vec();
        let delta = if p[i].abs() > 1e-8 {
            step * p[i].abs()
        } else {
            step.max(1e-3)
        };
        p[i] += delta;
        let v = eval(&p, &mut evals);
        simplex.push((p, v));
    }

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        // Converged: the simplex is numerically flat.
        if worst.is_finite() && (worst - best).abs() <= 1e-14 * (1.0 + best.abs()) {
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; n];
        for (p, _) in simplex.iter().take(n) {
            for (c, x) in centroid.iter_mut().zip(p.iter()) {
                *c += x / n as f64;
            }
        }

        let reflect = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(simplex[n].0.iter())
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let xr = reflect(ALPHA);
        let vr = eval(&xr, &mut evals);

        if vr < simplex[0].1 {
            // Try to expand past the reflection point.
            let xe = reflect(GAMMA);
            let ve = eval(&xe, &mut evals);
            simplex[n] = if ve < vr { (xe, ve) } else { (xr, vr) };
            continue;
        }
        if vr < simplex[n - 1].1 {
            simplex[n] = (xr, vr);
            continue;
        }
        // Contract toward the centroid.
        let xc: Vec<f64> = centroid
            .iter()
            .zip(simplex[n].0.iter())
            .map(|(c, w)| c + RHO * (w - c))
            .collect();
        let vc = eval(&xc, &mut evals);
        if vc < simplex[n].1 {
            simplex[n] = (xc, vc);
            continue;
        }
        // Shrink everything toward the best vertex.
        let best_point = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            for (x, b) in vertex.0.iter_mut().zip(best_point.iter()) {
                *x = b + SIGMA * (*x - b);
            }
            vertex.1 = eval(&vertex.0.clone(), &mut evals);
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    SimplexResult {
        x,
        value,
        evaluations: evals,
    }
}
