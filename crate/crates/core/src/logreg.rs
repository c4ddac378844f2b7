//! L2-regularized multinomial logistic regression, fitted by L-BFGS with
//! backtracking line search. Intercepts are not penalized.

/// Fitted softmax classifier. `weights[c]` holds the feature weights for
/// class `c`; `intercepts[c]` the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Softmax {
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
}

impl Softmax {
    /// Class probabilities for one feature vector; sums to 1.
    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.intercepts)
            .map(|(w, &b)| b + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        softmax(&logits)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / total).collect()
}

/// Parameter layout: all class weight rows concatenated, then intercepts.
fn unpack(params: &[f64], classes: usize, dim: usize) -> Softmax {
    let weights = (0..classes)
        .map(|c| params[c * dim..(c + 1) * dim].to_vec())
        .collect();
    let intercepts = params[classes * dim..].to_vec();
    Softmax { weights, intercepts }
}

/// Penalized negative log-likelihood and its gradient:
/// sum of per-sample cross-entropies plus (l2/2) * sum of squared feature
/// weights. Intercepts carry no penalty.
pub fn value_grad(
    params: &[f64],
    x: &[Vec<f64>],
    y: &[usize],
    classes: usize,
    l2: f64,
) -> (f64, Vec<f64>) {
    let dim = x[0].len();
    let model = unpack(params, classes, dim);
    let mut value = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (xi, &yi) in x.iter().zip(y) {
        let p = model.probabilities(xi);
        value -= p[yi].max(f64::MIN_POSITIVE).ln();
        for c in 0..classes {
            let delta = p[c] - if c == yi { 1.0 } else { 0.0 };
            for (j, &xij) in xi.iter().enumerate() {
                grad[c * dim + j] += delta * xij;
            }
            grad[classes * dim + c] += delta;
        }
    }
    for c in 0..classes {
        for j in 0..dim {
            let w = params[c * dim + j];
            value += 0.5 * l2 * w * w;
            grad[c * dim + j] += l2 * w;
        }
    }
    (value, grad)
}

const LBFGS_HISTORY: usize = 10;
const LBFGS_MAX_ITERS: usize = 5000;
const GRAD_TOL: f64 = 1e-6;

/// Fits the classifier from a zero start. Deterministic; converges to
/// gradient norm below 1e-6 (the objective is smooth and convex, flat only
/// along the common intercept shift, where the gradient vanishes anyway).
pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, l2: f64) -> Softmax {
    assert!(!x.is_empty() && classes >= 2);
    let dim = x[0].len();
    let n = classes * dim + classes;
    let mut params = vec![0.0; n];
    let (mut value, mut grad) = value_grad(&params, x, y, classes, l2);

    // L-BFGS history of parameter and gradient displacements.
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();

    for _ in 0..LBFGS_MAX_ITERS {
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < GRAD_TOL {
            break;
        }

        // Two-loop recursion for the search direction.
        let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alphas = vec![0.0; s_hist.len()];
        for i in (0..s_hist.len()).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let alpha = rho * dot(&s_hist[i], &dir);
            alphas[i] = alpha;
            for (d, &yv) in dir.iter_mut().zip(&y_hist[i]) {
                *d -= alpha * yv;
            }
        }
        if let Some(i) = s_hist.len().checked_sub(1) {
            let scale = dot(&s_hist[i], &y_hist[i]) / dot(&y_hist[i], &y_hist[i]);
            for d in dir.iter_mut() {
                *d *= scale;
            }
        }
        for i in 0..s_hist.len() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &dir);
            for (d, &sv) in dir.iter_mut().zip(&s_hist[i]) {
                *d += (alphas[i] - beta) * sv;
            }
        }

        // Backtracking Armijo line search; fall back to steepest descent if
        // the L-BFGS direction is not a descent direction.
        let mut slope = dot(&grad, &dir);
        if slope >= 0.0 {
            dir = grad.iter().map(|g| -g).collect();
            slope = -dot(&grad, &grad);
        }
        let mut step = 1.0;
        let (next_params, next_value) = loop {
            let candidate: Vec<f64> =
                params.iter().zip(&dir).map(|(p, d)| p + step * d).collect();
            let (v, _) = value_grad(&candidate, x, y, classes, l2);
            if v <= value + 1e-4 * step * slope {
                break (candidate, v);
            }
            step *= 0.5;
            if step < 1e-20 {
                break (params.clone(), value);
            }
        };
        if next_params == params {
            break;
        }
        let (_, next_grad) = value_grad(&next_params, x, y, classes, l2);

        let s: Vec<f64> = next_params.iter().zip(&params).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = next_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        if dot(&s, &yv) > 1e-12 {
            s_hist.push(s);
            y_hist.push(yv);
            if s_hist.len() > LBFGS_HISTORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        params = next_params;
        value = next_value;
        grad = next_grad;
    }
    unpack(&params, classes, dim)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
