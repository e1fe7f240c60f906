//! Linear mixed model with crossed random intercepts for news items and
//! persona conditions, fitted by REML.
//!
//! Model: `y = b0 + b1*image + b2*false + b3*image*false + u_news + u_cond + e`.
//!
//! The residual variance is profiled out, leaving a criterion in the two
//! variance ratios `theta = (var_news, var_cond) / var_resid`. Each evaluation
//! works on cross-products only (`Z'Z`, `Z'X`, `X'X`, ...), so the cost depends
//! on the number of random-effect levels rather than on the number of rows:
//!
//! ```text
//! M      = L L' = Lambda Z'Z Lambda + I          (q x q)
//! RZX    = L^-1 Lambda Z'X
//! X'V^-1X = X'X - RZX' RZX
//! dev    = log|M| + log|X'V^-1X| + (n-p) (1 + log(2 pi PRSS / (n-p)))
//! ```
//!
//! with `Lambda = diag(sqrt(theta))` and PRSS the penalized residual sum of
//! squares. The gradient in `theta` is `tr(P Z_k Z_k') - (n-p) |Z_k' P y|^2 / PRSS`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::{normal_two_sided, StatsError};

const N_FIXED: usize = 4;
const MAX_ITER: usize = 200;
/// Target for the projected gradient norm.
const GRAD_TOL: f64 = 1e-9;
/// Acceptable gradient norm when the line search can no longer improve.
const GRAD_ACCEPT: f64 = 1e-6;

/// One aggregated observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmmObs {
    pub y: f64,
    pub image: bool,
    pub false_news: bool,
    pub news: usize,
    pub condition: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Coefs {
    pub intercept: f64,
    pub modality: f64,
    pub veracity: f64,
    pub interaction: f64,
}

impl Coefs {
    fn from_slice(v: &[f64]) -> Coefs {
        Coefs {
            intercept: v[0],
            modality: v[1],
            veracity: v[2],
            interaction: v[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.intercept, self.modality, self.veracity, self.interaction]
    }

    fn map(self, f: impl Fn(f64) -> f64) -> Coefs {
        Coefs::from_slice(&self.to_array().map(f))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub beta: Coefs,
    pub se: Coefs,
    pub p_wald: Coefs,
    pub var_news: f64,
    pub var_condition: f64,
    pub var_resid: f64,
    pub reml_deviance: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Gradient of the profiled criterion w.r.t. the two variance ratios.
    pub gradient: [f64; 2],
    /// Gradient norm ignoring components pushing against a zero bound.
    pub projected_gradient_norm: f64,
    /// Criterion value after each accepted step, starting point first.
    /// Non-increasing up to rounding noise of the criterion.
    pub deviance_trace: Vec<f64>,
    /// Outcome had no residual variation; every variance component is zero.
    pub degenerate: bool,
    pub n_obs: usize,
}

/// Fixed effects and standard errors at given variance components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlsEstimate {
    pub beta: Coefs,
    pub se: Coefs,
}

pub struct LmmData {
    y: Vec<f64>,
    x: Vec<[f64; N_FIXED]>,
    news: Vec<usize>,
    cond: Vec<usize>,
    n_news: usize,
    n_cond: usize,
    ztz: DMatrix<f64>,
    ztx: DMatrix<f64>,
    xtx: DMatrix<f64>,
    zty: DVector<f64>,
    xty: DVector<f64>,
}

struct Eval {
    dev: f64,
    beta: DVector<f64>,
    xtvx: DMatrix<f64>,
    prss: f64,
    grad: Option<[f64; 2]>,
}

impl LmmData {
    /// Builds the design. Level indices must be dense from zero.
    pub fn new(obs: &[LmmObs]) -> Result<LmmData, StatsError> {
        let n_news = obs.iter().map(|o| o.news + 1).max().unwrap_or(0);
        let n_cond = obs.iter().map(|o| o.condition + 1).max().unwrap_or(0);
        if n_news < 2 || n_cond < 2 {
            return Err(StatsError::SingularDesign(
                "need at least two news items and two conditions",
            ));
        }
        let has = |f: &dyn Fn(&LmmObs) -> bool| obs.iter().any(f);
        if !(has(&|o| o.image) && has(&|o| !o.image) && has(&|o| o.false_news) && has(&|o| !o.false_news)) {
            return Err(StatsError::SingularDesign(
                "design needs both modalities and both veracity levels",
            ));
        }
        let q = n_news + n_cond;
        let mut ztz = DMatrix::zeros(q, q);
        let mut ztx = DMatrix::zeros(q, N_FIXED);
        let mut xtx = DMatrix::zeros(N_FIXED, N_FIXED);
        let mut zty = DVector::zeros(q);
        let mut xty = DVector::zeros(N_FIXED);
        let mut x = Vec::with_capacity(obs.len());
        for o in obs {
            let img = if o.image { 1.0 } else { 0.0 };
            let fal = if o.false_news { 1.0 } else { 0.0 };
            let row = [1.0, img, fal, img * fal];
            let (a, b) = (o.news, n_news + o.condition);
            ztz[(a, a)] += 1.0;
            ztz[(b, b)] += 1.0;
            ztz[(a, b)] += 1.0;
            ztz[(b, a)] += 1.0;
            for i in 0..N_FIXED {
                ztx[(a, i)] += row[i];
                ztx[(b, i)] += row[i];
                xty[i] += row[i] * o.y;
                for j in 0..N_FIXED {
                    xtx[(i, j)] += row[i] * row[j];
                }
            }
            zty[a] += o.y;
            zty[b] += o.y;
            x.push(row);
        }
        if Cholesky::new(xtx.clone()).is_none() {
            return Err(StatsError::SingularDesign("fixed-effect design is rank deficient"));
        }
        Ok(LmmData {
            y: obs.iter().map(|o| o.y).collect(),
            x,
            news: obs.iter().map(|o| o.news).collect(),
            cond: obs.iter().map(|o| o.condition).collect(),
            n_news,
            n_cond,
            ztz,
            ztx,
            xtx,
            zty,
            xty,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    fn q(&self) -> usize {
        self.n_news + self.n_cond
    }

    fn lambda(&self, theta: [f64; 2]) -> DVector<f64> {
        let (a, b) = (theta[0].max(0.0).sqrt(), theta[1].max(0.0).sqrt());
        DVector::from_fn(self.q(), |j, _| if j < self.n_news { a } else { b })
    }

    fn evaluate(&self, theta: [f64; 2], want_grad: bool) -> Result<Eval, StatsError> {
        let q = self.q();
        let lam = self.lambda(theta);
        // Lambda Z'Z, reused for M and (when needed) for the gradient.
        let lztz = DMatrix::from_fn(q, q, |i, j| lam[i] * self.ztz[(i, j)]);
        let mut m = DMatrix::from_fn(q, q, |i, j| lztz[(i, j)] * lam[j]);
        for i in 0..q {
            m[(i, i)] += 1.0;
        }
        let chol = Cholesky::new(m).ok_or(StatsError::SingularDesign("random-effect system"))?;
        let l = chol.l();
        let lzty = l
            .solve_lower_triangular(&self.zty.component_mul(&lam))
            .expect("Cholesky factor has a positive diagonal");
        let lztx = DMatrix::from_fn(q, N_FIXED, |i, j| lam[i] * self.ztx[(i, j)]);
        let rzx = l.solve_lower_triangular(&lztx).expect("positive diagonal");
        let xtvx = &self.xtx - rzx.transpose() * &rzx;
        let xtvy = &self.xty - rzx.transpose() * &lzty;
        let xchol: Cholesky<f64, Dyn> = Cholesky::new(xtvx.clone())
            .ok_or(StatsError::SingularDesign("fixed-effect design is rank deficient"))?;
        let beta = xchol.solve(&xtvy);
        let u = l
            .transpose()
            .solve_upper_triangular(&(&lzty - &rzx * &beta))
            .expect("positive diagonal");
        let b = u.component_mul(&lam);

        let mut rss = 0.0;
        let mut zte = DVector::<f64>::zeros(q);
        for (i, row) in self.x.iter().enumerate() {
            let (a, c) = (self.news[i], self.n_news + self.cond[i]);
            let fit: f64 = (0..N_FIXED).map(|j| row[j] * beta[j]).sum::<f64>() + b[a] + b[c];
            let e = self.y[i] - fit;
            rss += e * e;
            zte[a] += e;
            zte[c] += e;
        }
        let prss = rss + u.norm_squared();
        let nmp = (self.n_obs() - N_FIXED) as f64;
        let logdet_m: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let logdet_x: f64 = 2.0 * xchol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let dev = logdet_m
            + logdet_x
            + nmp * (1.0 + (2.0 * std::f64::consts::PI * prss / nmp).ln());

        let grad = if want_grad {
            let bmat = l.solve_lower_triangular(&lztz).expect("positive diagonal");
            let ztvx = &self.ztx - bmat.transpose() * &rzx;
            let cmat = xchol
                .l()
                .solve_lower_triangular(&ztvx.transpose())
                .expect("positive diagonal");
            let mut g = [0.0; 2];
            for j in 0..q {
                let k = usize::from(j >= self.n_news);
                let diag = self.ztz[(j, j)]
                    - bmat.column(j).norm_squared()
                    - cmat.column(j).norm_squared();
                g[k] += diag - nmp * zte[j] * zte[j] / prss;
            }
            Some(g)
        } else {
            None
        };
        Ok(Eval {
            dev,
            beta,
            xtvx,
            prss,
            grad,
        })
    }

    /// Profiled REML criterion at the given variance ratios.
    pub fn criterion(&self, theta: [f64; 2]) -> Result<f64, StatsError> {
        Ok(self.evaluate(theta, false)?.dev)
    }

    /// Analytic gradient of [`criterion`](Self::criterion).
    pub fn gradient(&self, theta: [f64; 2]) -> Result<[f64; 2], StatsError> {
        Ok(self.evaluate(theta, true)?.grad.unwrap())
    }

    /// Generalized least squares at fixed variance components.
    pub fn gls_at(&self, var_news: f64, var_cond: f64, var_resid: f64) -> Result<GlsEstimate, StatsError> {
        if var_resid <= 0.0 || var_news < 0.0 || var_cond < 0.0 {
            return Err(StatsError::InvalidArgument("variance components out of range"));
        }
        let ev = self.evaluate([var_news / var_resid, var_cond / var_resid], false)?;
        let cov = inverse_spd(&ev.xtvx)? * var_resid;
        Ok(GlsEstimate {
            beta: Coefs::from_slice(ev.beta.as_slice()),
            se: Coefs::from_slice(cov.diagonal().map(f64::sqrt).as_slice()),
        })
    }
}

fn inverse_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, StatsError> {
    Cholesky::new(m.clone())
        .map(|c| c.inverse())
        .ok_or(StatsError::SingularDesign("fixed-effect covariance"))
}

fn projected(theta: [f64; 2], g: [f64; 2]) -> [f64; 2] {
    let mut pg = g;
    for k in 0..2 {
        if theta[k] <= 0.0 && g[k] > 0.0 {
            pg[k] = 0.0;
        }
    }
    pg
}

fn norm(v: [f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

/// Fits the model by REML: variance ratios by projected Newton on the profiled
/// criterion, fixed effects by GLS at the optimum, Wald tests from the normal.
pub fn fit_lmm(data: &LmmData) -> Result<LmmFit, StatsError> {
    let n = data.n_obs();
    if n <= N_FIXED + 1 {
        return Err(StatsError::TooFew {
            needed: N_FIXED + 2,
            got: n,
        });
    }
    let ols = data.evaluate([0.0, 0.0], false)?;
    let ss: f64 = data.y.iter().map(|y| y * y).sum();
    if ols.prss <= 1e-24 * (1.0 + ss) {
        return Ok(degenerate_fit(data, &ols));
    }

    // Coarse start over a small grid.
    let grid = [0.0, 0.05, 0.3, 1.0, 4.0];
    let mut theta = [1.0, 1.0];
    let mut best = f64::INFINITY;
    for a in grid {
        for b in grid {
            let d = data.criterion([a, b])?;
            if d < best {
                best = d;
                theta = [a, b];
            }
        }
    }

    let mut ev = data.evaluate(theta, true)?;
    let mut trace = vec![ev.dev];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        let g = ev.grad.unwrap();
        let pg = projected(theta, g);
        if norm(pg) < GRAD_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let dir = newton_direction(data, theta, g)?;
        let slope = dir[0] * g[0] + dir[1] * g[1];
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = [
                (theta[0] + step * dir[0]).max(0.0),
                (theta[1] + step * dir[1]).max(0.0),
            ];
            let next = data.evaluate(cand, true)?;
            let moved = [cand[0] - theta[0], cand[1] - theta[1]];
            let decrease = moved[0] * g[0] + moved[1] * g[1];
            if next.dev <= ev.dev + 1e-4 * decrease.min(0.0) && next.dev <= ev.dev {
                accepted = Some((cand, next));
                break;
            }
            // Near the optimum the remaining decrease is below the rounding
            // noise of the criterion; fall back to asking for a smaller gradient.
            let noise = 64.0 * f64::EPSILON * ev.dev.abs().max(1.0);
            if (next.dev - ev.dev).abs() <= noise && norm(projected(cand, next.grad.unwrap())) < norm(pg) {
                accepted = Some((cand, next));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, next)) if cand != theta => {
                theta = cand;
                ev = next;
                trace.push(ev.dev);
            }
            _ => {
                // No representable improvement left.
                converged = norm(pg) < GRAD_ACCEPT;
                let _ = slope;
                break;
            }
        }
    }
    let g = ev.grad.unwrap();
    let pg = projected(theta, g);
    if !converged {
        converged = norm(pg) < GRAD_ACCEPT;
    }

    let nmp = (n - N_FIXED) as f64;
    let var_resid = ev.prss / nmp;
    let cov = inverse_spd(&ev.xtvx)? * var_resid;
    let beta = Coefs::from_slice(ev.beta.as_slice());
    let se = Coefs::from_slice(cov.diagonal().map(f64::sqrt).as_slice());
    let z = Coefs::from_slice(
        &beta
            .to_array()
            .iter()
            .zip(se.to_array())
            .map(|(b, s)| b / s)
            .collect::<Vec<_>>(),
    );
    Ok(LmmFit {
        beta,
        se,
        p_wald: z.map(|z| normal_two_sided(z).clamp(f64::MIN_POSITIVE, 1.0)),
        var_news: theta[0] * var_resid,
        var_condition: theta[1] * var_resid,
        var_resid,
        reml_deviance: ev.dev,
        converged,
        iterations,
        gradient: g,
        projected_gradient_norm: norm(pg),
        deviance_trace: trace,
        degenerate: false,
        n_obs: n,
    })
}

/// Newton step on the free coordinates with a finite-difference Hessian of
/// the analytic gradient; falls back to a scaled gradient step.
fn newton_direction(data: &LmmData, theta: [f64; 2], g: [f64; 2]) -> Result<[f64; 2], StatsError> {
    let free: Vec<usize> = (0..2).filter(|&k| !(theta[k] <= 0.0 && g[k] > 0.0)).collect();
    let mut h = [[0.0; 2]; 2];
    for &k in &free {
        let step = 1e-5 * theta[k].max(1e-2);
        let mut up = theta;
        up[k] += step;
        let gu = data.gradient(up)?;
        let col = if theta[k] > step {
            let mut dn = theta;
            dn[k] -= step;
            let gd = data.gradient(dn)?;
            [(gu[0] - gd[0]) / (2.0 * step), (gu[1] - gd[1]) / (2.0 * step)]
        } else {
            [(gu[0] - g[0]) / step, (gu[1] - g[1]) / step]
        };
        h[0][k] = col[0];
        h[1][k] = col[1];
    }
    let mut dir = [0.0; 2];
    let newton = match free.as_slice() {
        [k] => (h[*k][*k] > 0.0).then(|| {
            let mut d = [0.0; 2];
            d[*k] = -g[*k] / h[*k][*k];
            d
        }),
        [_, _] => {
            let (a, b, c) = (h[0][0], 0.5 * (h[0][1] + h[1][0]), h[1][1]);
            let det = a * c - b * b;
            (a > 0.0 && det > 0.0).then(|| {
                [
                    -(c * g[0] - b * g[1]) / det,
                    -(a * g[1] - b * g[0]) / det,
                ]
            })
        }
        _ => Some([0.0; 2]),
    };
    match newton {
        Some(d) if d[0] * g[0] + d[1] * g[1] < 0.0 => dir = d,
        _ => {
            for &k in &free {
                let scale = h[k][k].abs().max(1.0);
                dir[k] = -g[k] / scale;
            }
        }
    }
    // Keep steps proportionate to the current scale.
    for k in 0..2 {
        let cap = 10.0 * (theta[k] + 1.0);
        dir[k] = dir[k].clamp(-cap, cap);
    }
    Ok(dir)
}

fn degenerate_fit(data: &LmmData, ols: &Eval) -> LmmFit {
    let beta = Coefs::from_slice(ols.beta.as_slice()).map(|b| if b.abs() < 1e-12 { 0.0 } else { b });
    LmmFit {
        beta,
        se: Coefs::default(),
        p_wald: Coefs::default().map(|_| 1.0),
        var_news: 0.0,
        var_condition: 0.0,
        var_resid: 0.0,
        reml_deviance: f64::NEG_INFINITY,
        converged: true,
        iterations: 0,
        gradient: [0.0; 2],
        projected_gradient_norm: 0.0,
        deviance_trace: Vec::new(),
        degenerate: true,
        n_obs: data.n_obs(),
    }
}
