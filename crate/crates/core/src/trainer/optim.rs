//! L-BFGS with a strong-Wolfe line search, and Adam.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::diff::{DiffError, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    pub history: usize,
    /// Iterations per step.
    pub max_iter: usize,
    /// Objective evaluations per step, line search included.
    pub max_eval: usize,
    pub c1: f64,
    pub c2: f64,
    pub lr: f64,
    pub tolerance_grad: f64,
    pub tolerance_change: f64,
    pub max_ls: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            history: 10,
            max_iter: 20,
            max_eval: 20,
            c1: 1e-4,
            c2: 0.9,
            lr: 1.0,
            tolerance_grad: 1e-9,
            tolerance_change: 1e-16,
            max_ls: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Lbfgs(LbfgsConfig),
    Adam(AdamConfig),
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Lbfgs(LbfgsConfig::default())
    }
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Loss at the parameters held after the step.
    pub loss: f64,
    pub evals: usize,
    /// The line search failed and a backtracking gradient step was taken.
    pub fallback: bool,
}

/// Stateful optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Lbfgs(Lbfgs),
    Adam(Adam),
}

impl Optimizer {
    pub fn new(cfg: &OptimizerConfig, dim: usize) -> Self {
        match cfg {
            OptimizerConfig::Lbfgs(c) => Optimizer::Lbfgs(Lbfgs::new(*c)),
            OptimizerConfig::Adam(c) => Optimizer::Adam(Adam::new(*c, dim)),
        }
    }

    pub fn step<O: Objective + ?Sized>(&mut self, obj: &O, p: &mut [f64]) -> Result<StepInfo, DiffError> {
        match self {
            Optimizer::Lbfgs(o) => o.step(obj, p),
            Optimizer::Adam(o) => o.step(obj, p),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Evaluation that maps non-finite losses to `+∞` so the line search can
/// back away from them.
fn eval_at<O: Objective + ?Sized>(obj: &O, p: &[f64], g: &mut [f64]) -> Result<f64, DiffError> {
    match obj.value_and_gradient(p, g) {
        Ok(f) if f.is_finite() => Ok(f),
        Ok(_) | Err(DiffError::NonFiniteLoss(_)) => {
            g.fill(f64::NAN);
            Ok(f64::INFINITY)
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone)]
pub struct Lbfgs {
    cfg: LbfgsConfig,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    d: Vec<f64>,
    t: f64,
    h_diag: f64,
    prev_g: Vec<f64>,
    n_iter: usize,
    /// Loss and gradient at the parameters returned by the last step.
    cached: Option<(Vec<f64>, f64, Vec<f64>)>,
}

impl Lbfgs {
    pub fn new(cfg: LbfgsConfig) -> Self {
        Self {
            cfg,
            s: VecDeque::new(),
            y: VecDeque::new(),
            d: Vec::new(),
            t: 0.0,
            h_diag: 1.0,
            prev_g: Vec::new(),
            n_iter: 0,
            cached: None,
        }
    }

    pub fn reset_history(&mut self) {
        self.s.clear();
        self.y.clear();
        self.h_diag = 1.0;
    }

    fn two_loop(&self, g: &[f64]) -> Vec<f64> {
        let k = self.s.len();
        let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&self.y[i], &self.s[i]);
            alpha[i] = rho * dot(&self.s[i], &q);
            for (qj, yj) in q.iter_mut().zip(&self.y[i]) {
                *qj -= alpha[i] * yj;
            }
        }
        for v in q.iter_mut() {
            *v *= self.h_diag;
        }
        for i in 0..k {
            let rho = 1.0 / dot(&self.y[i], &self.s[i]);
            let beta = rho * dot(&self.y[i], &q);
            for (qj, sj) in q.iter_mut().zip(&self.s[i]) {
                *qj += (alpha[i] - beta) * sj;
            }
        }
        q
    }

    pub fn step<O: Objective + ?Sized>(&mut self, obj: &O, p: &mut [f64]) -> Result<StepInfo, DiffError> {
        let cfg = self.cfg;
        let n = p.len();
        let mut evals = 0;
        let mut fallback = false;
        let (mut loss, mut g) = match self.cached.take() {
            Some((cp, f, g)) if cp == p => (f, g),
            _ => {
                let mut g = vec![0.0; n];
                let f = obj.value_and_gradient(p, &mut g)?;
                if !f.is_finite() {
                    return Err(DiffError::NonFiniteLoss(f));
                }
                evals += 1;
                (f, g)
            }
        };
        if max_abs(&g) <= cfg.tolerance_grad {
            self.cached = Some((p.to_vec(), loss, g));
            return Ok(StepInfo { loss, evals, fallback });
        }

        let mut iters = 0;
        while iters < cfg.max_iter && evals < cfg.max_eval {
            iters += 1;
            self.n_iter += 1;
            if self.n_iter == 1 {
                self.d = g.iter().map(|v| -v).collect();
                self.reset_history();
            } else {
                let y: Vec<f64> = g.iter().zip(&self.prev_g).map(|(a, b)| a - b).collect();
                let s: Vec<f64> = self.d.iter().map(|v| v * self.t).collect();
                let ys = dot(&y, &s);
                if ys > 1e-10 {
                    if self.s.len() == cfg.history {
                        self.s.pop_front();
                        self.y.pop_front();
                    }
                    self.h_diag = ys / dot(&y, &y);
                    self.s.push_back(s);
                    self.y.push_back(y);
                }
                self.d = self.two_loop(&g);
            }
            self.prev_g.clone_from(&g);
            let prev_loss = loss;

            let mut gtd = dot(&g, &self.d);
            if !(gtd < 0.0) {
                // Not a descent direction: restart from the gradient.
                self.reset_history();
                self.d = g.iter().map(|v| -v).collect();
                gtd = dot(&g, &self.d);
            }
            if gtd > -cfg.tolerance_change {
                break;
            }
            let l1: f64 = g.iter().map(|v| v.abs()).sum();
            let t0 = if self.n_iter == 1 { (1.0f64).min(1.0 / l1) * cfg.lr } else { cfg.lr };

            let budget = cfg.max_ls.min(cfg.max_eval - evals);
            let ls = strong_wolfe(obj, p, &self.d, t0, loss, &g, gtd, cfg, budget)?;
            evals += ls.evals;
            let accepted = ls.t > 0.0 && ls.f.is_finite() && ls.f <= loss + cfg.c1 * ls.t * gtd;
            if accepted {
                self.t = ls.t;
                for (pi, di) in p.iter_mut().zip(&self.d) {
                    *pi += ls.t * di;
                }
                loss = ls.f;
                g = ls.g;
            } else if evals >= cfg.max_eval {
                // Budget spent inside the line search; resume next step.
                break;
            } else {
                log::warn!("line search failed (t = {:e}); taking a backtracking gradient step", ls.t);
                fallback = true;
                self.reset_history();
                self.n_iter = 0;
                let remaining = cfg.max_eval - evals;
                if remaining == 0 {
                    break;
                }
                match armijo_backtrack(obj, p, loss, &g, cfg.c1, remaining)? {
                    Some((t, f, gn, k)) => {
                        evals += k;
                        self.t = t;
                        self.d = g.iter().map(|v| -v).collect();
                        for (pi, di) in p.iter_mut().zip(&self.d) {
                            *pi += t * di;
                        }
                        loss = f;
                        g = gn;
                    }
                    None => break,
                }
            }

            if max_abs(&g) <= cfg.tolerance_grad {
                break;
            }
            if max_abs(&self.d) * self.t <= cfg.tolerance_change {
                break;
            }
            if (loss - prev_loss).abs() < cfg.tolerance_change {
                break;
            }
        }
        self.cached = Some((p.to_vec(), loss, g));
        Ok(StepInfo { loss, evals, fallback })
    }
}

struct LineSearch {
    t: f64,
    f: f64,
    g: Vec<f64>,
    evals: usize,
}

/// Cubic interpolation of the minimizer between two points with slopes,
/// clamped to `bounds`; falls back to bisection when ill-defined.
fn cubic_interpolate(x1: f64, f1: f64, g1: f64, x2: f64, f2: f64, g2: f64, bounds: Option<(f64, f64)>) -> f64 {
    let (lo, hi) = bounds.unwrap_or(if x1 <= x2 { (x1, x2) } else { (x2, x1) });
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= 0.0 {
        let d2 = d2_sq.sqrt();
        let min_pos = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if min_pos.is_finite() {
            return min_pos.max(lo).min(hi);
        }
    }
    0.5 * (lo + hi)
}

#[allow(clippy::too_many_arguments)]
fn strong_wolfe<O: Objective + ?Sized>(
    obj: &O,
    x: &[f64],
    d: &[f64],
    mut t: f64,
    f: f64,
    g: &[f64],
    gtd: f64,
    cfg: LbfgsConfig,
    max_ls: usize,
) -> Result<LineSearch, DiffError> {
    let n = x.len();
    let d_norm = max_abs(d);
    let mut xt = vec![0.0; n];
    let mut eval = |t: f64, g_out: &mut Vec<f64>| -> Result<f64, DiffError> {
        for i in 0..n {
            xt[i] = x[i] + t * d[i];
        }
        eval_at(obj, &xt, g_out)
    };
    if max_ls == 0 {
        return Ok(LineSearch { t: 0.0, f, g: g.to_vec(), evals: 0 });
    }

    let mut g_new = vec![0.0; n];
    let mut f_new = eval(t, &mut g_new)?;
    let mut evals = 1;
    let mut gtd_new = dot(&g_new, d);

    let (mut t_prev, mut f_prev, mut g_prev, mut gtd_prev) = (0.0, f, g.to_vec(), gtd);
    let mut done = false;
    let mut ls_iter = 0;
    // bracket entries: (t, f, g, gtd)
    let mut bracket: Vec<(f64, f64, Vec<f64>, f64)>;
    loop {
        if !f_new.is_finite() || f_new > f + cfg.c1 * t * gtd || (ls_iter > 1 && f_new >= f_prev) {
            bracket = vec![(t_prev, f_prev, g_prev, gtd_prev), (t, f_new, g_new.clone(), gtd_new)];
            break;
        }
        if gtd_new.abs() <= -cfg.c2 * gtd {
            bracket = vec![(t, f_new, g_new.clone(), gtd_new)];
            done = true;
            break;
        }
        if gtd_new >= 0.0 {
            bracket = vec![(t_prev, f_prev, g_prev, gtd_prev), (t, f_new, g_new.clone(), gtd_new)];
            break;
        }
        if evals >= max_ls {
            bracket = vec![(0.0, f, g.to_vec(), gtd), (t, f_new, g_new.clone(), gtd_new)];
            break;
        }
        let min_step = t + 0.01 * (t - t_prev);
        let max_step = t * 10.0;
        let tmp = t;
        t = cubic_interpolate(t_prev, f_prev, gtd_prev, t, f_new, gtd_new, Some((min_step, max_step)));
        t_prev = tmp;
        f_prev = f_new;
        g_prev = g_new.clone();
        gtd_prev = gtd_new;
        f_new = eval(t, &mut g_new)?;
        evals += 1;
        gtd_new = dot(&g_new, d);
        ls_iter += 1;
    }
    let _ = ls_iter;

    if bracket.len() == 1 {
        let (t, f, g, _) = bracket.pop().expect("one entry");
        return Ok(LineSearch { t, f, g, evals });
    }

    // Zoom.
    let mut insuf_progress = false;
    let order = |b: &[(f64, f64, Vec<f64>, f64)]| if b[0].1 <= b[1].1 { (0, 1) } else { (1, 0) };
    let (mut low, mut high) = order(&bracket);
    while !done && evals < max_ls {
        let (b0, b1) = (bracket[0].0, bracket[1].0);
        if (b1 - b0).abs() * d_norm < cfg.tolerance_change {
            break;
        }
        let (bmin, bmax) = (b0.min(b1), b0.max(b1));
        t = if bracket[high].1.is_finite() {
            cubic_interpolate(b0, bracket[0].1, bracket[0].3, b1, bracket[1].1, bracket[1].3, None)
        } else {
            0.5 * (b0 + b1)
        };
        let eps = 0.1 * (bmax - bmin);
        if (bmax - t).min(t - bmin) < eps {
            if insuf_progress || t >= bmax || t <= bmin {
                t = if (t - bmax).abs() < (t - bmin).abs() { bmax - eps } else { bmin + eps };
                insuf_progress = false;
            } else {
                insuf_progress = true;
            }
        } else {
            insuf_progress = false;
        }
        f_new = eval(t, &mut g_new)?;
        evals += 1;
        gtd_new = dot(&g_new, d);

        if !f_new.is_finite() || f_new > f + cfg.c1 * t * gtd || f_new >= bracket[low].1 {
            bracket[high] = (t, f_new, g_new.clone(), gtd_new);
            (low, high) = order(&bracket);
        } else {
            if gtd_new.abs() <= -cfg.c2 * gtd {
                done = true;
            } else if gtd_new * (bracket[high].0 - bracket[low].0) >= 0.0 {
                bracket[high] = bracket[low].clone();
            }
            bracket[low] = (t, f_new, g_new.clone(), gtd_new);
        }
    }
    let (t, f, g, _) = bracket.swap_remove(low);
    Ok(LineSearch { t, f, g, evals })
}

/// Gradient step `p − t ∇f` with `t` halved until the Armijo condition
/// holds. Returns `(t, f, ∇f, evals)`, or `None` if no decrease is found.
fn armijo_backtrack<O: Objective + ?Sized>(
    obj: &O,
    p: &[f64],
    f0: f64,
    g0: &[f64],
    c1: f64,
    max_evals: usize,
) -> Result<Option<(f64, f64, Vec<f64>, usize)>, DiffError> {
    let gg = dot(g0, g0);
    let l1: f64 = g0.iter().map(|v| v.abs()).sum();
    let mut t = (1.0f64).min(1.0 / l1);
    let mut trial = vec![0.0; p.len()];
    let mut g = vec![0.0; p.len()];
    for k in 1..=max_evals {
        for i in 0..p.len() {
            trial[i] = p[i] - t * g0[i];
        }
        let f = eval_at(obj, &trial, &mut g)?;
        if f.is_finite() && f <= f0 - c1 * t * gg {
            return Ok(Some((t, f, g, k)));
        }
        t *= 0.5;
    }
    Ok(None)
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    k: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, dim: usize) -> Self {
        Self { cfg, m: vec![0.0; dim], v: vec![0.0; dim], k: 0 }
    }

    /// One update; the reported loss is the one evaluated before the update.
    pub fn step<O: Objective + ?Sized>(&mut self, obj: &O, p: &mut [f64]) -> Result<StepInfo, DiffError> {
        let mut g = vec![0.0; p.len()];
        let f = obj.value_and_gradient(p, &mut g)?;
        if !f.is_finite() {
            return Err(DiffError::NonFiniteLoss(f));
        }
        self.apply(&g, p);
        Ok(StepInfo { loss: f, evals: 1, fallback: false })
    }

    pub fn apply(&mut self, g: &[f64], p: &mut [f64]) {
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        self.k += 1;
        let bc1 = 1.0 - beta1.powi(self.k);
        let bc2 = 1.0 - beta2.powi(self.k);
        for i in 0..p.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}
