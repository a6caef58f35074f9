//! Derivative-free minimization: Nelder-Mead simplex search plus a Halton
//! sequence for multi-start points.
//!
//! The objective may return `+inf` (or NaN, treated as `+inf`) to encode hard
//! bounds; the simplex simply moves away. Everything is deterministic: the
//! same objective and start produce bit-identical traces.

/// Standard simplex coefficients: reflection 1, expansion 2, contraction
/// 1/2, shrink 1/2.
#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Convergence threshold on the simplex diameter (max distance of any
    /// vertex from the best one).
    pub tol: f64,
    /// Convergence threshold on the relative value spread across the
    /// simplex. On a plateau (or at rounding-noise resolution) the diameter
    /// never collapses, but once every vertex agrees to this tolerance no
    /// comparison the algorithm makes carries information, so it stops.
    pub ftol: f64,
    /// Offset added per coordinate to form the initial simplex.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_iter: 2000, tol: 1e-9, ftol: 1e-12, initial_step: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub simplex_diameter: f64,
}

pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> MinimizeResult {
    let n = x0.len();
    assert!(n > 0, "cannot optimize a zero-dimensional objective");
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(x0, &mut evaluations);
    simplex.push((x0.to_vec(), v0));
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += opts.initial_step;
        let fv = eval(&v, &mut evaluations);
        simplex.push((v, fv));
    }

    let diameter = |simplex: &[(Vec<f64>, f64)]| -> f64 {
        let best = &simplex[0].0;
        simplex[1..]
            .iter()
            .map(|(v, _)| {
                v.iter().zip(best).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max)
    };

    let mut iterations = 0usize;
    loop {
        // stable sort keeps the outcome deterministic under ties
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let diam = diameter(&simplex);
        // value spread is NaN when the whole simplex is infinite, and the
        // comparison below is then false; gated past the first iteration so
        // a symmetric start on an even function cannot stop at a tie
        let spread = simplex[n].1 - simplex[0].1;
        let flat = iterations >= 1 && spread <= opts.ftol * (1.0 + simplex[0].1.abs());
        if diam <= opts.tol || flat || iterations >= opts.max_iter {
            return MinimizeResult {
                x: simplex[0].0.clone(),
                value: simplex[0].1,
                iterations,
                evaluations,
                converged: diam <= opts.tol || flat,
                simplex_diameter: diam,
            };
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x;
            }
        }
        for c in &mut centroid {
            *c /= n as f64;
        }
        let worst = simplex[n].clone();
        let second_worst = simplex[n - 1].1;
        let best = simplex[0].1;

        let blend = |a: f64, b: f64| -> Vec<f64> {
            centroid.iter().zip(&worst.0).map(|(c, w)| a * c + b * w).collect()
        };
        let reflected = blend(2.0, -1.0);
        let fr = eval(&reflected, &mut evaluations);
        if fr < best {
            let expanded = blend(3.0, -2.0);
            let fe = eval(&expanded, &mut evaluations);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < second_worst {
            simplex[n] = (reflected, fr);
        } else {
            let (contracted, threshold) = if fr < worst.1 {
                (blend(1.5, -0.5), fr) // outside
            } else {
                (blend(0.5, 0.5), worst.1) // inside
            };
            let fc = eval(&contracted, &mut evaluations);
            if fc <= threshold {
                simplex[n] = (contracted, fc);
            } else {
                let best_point = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<f64> = entry
                        .0
                        .iter()
                        .zip(&best_point)
                        .map(|(x, b)| 0.5 * (x + b))
                        .collect();
                    let fs = eval(&shrunk, &mut evaluations);
                    *entry = (shrunk, fs);
                }
            }
        }
    }
}

/// Halton radical-inverse value for a 1-based index.
pub fn halton(mut index: usize, base: usize) -> f64 {
    assert!(base >= 2, "Halton base must be at least 2");
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

const HALTON_BASES: [usize; 5] = [2, 3, 5, 7, 11];

/// Point `index` (1-based) of the Halton sequence in up to 5 dimensions,
/// each coordinate in (0, 1).
pub fn halton_point(index: usize, dims: usize) -> Vec<f64> {
    assert!(dims <= HALTON_BASES.len(), "at most 5 dimensions supported");
    HALTON_BASES[..dims].iter().map(|&b| halton(index, b)).collect()
}
