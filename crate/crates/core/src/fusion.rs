//! Optimal-transport alignment of patch/genomic features to the four text
//! slots, followed by text-queried decoding.
//!
//! The alignment solves an entropic OT problem between the `N` source
//! features and the 4 text features with cost `1 − cos` of learned
//! projections and uniform marginals. Each text slot then receives the
//! convex combination of source features given by its (renormalized) plan
//! column, so bags of any length reduce to 4 rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{l2_normalize_rows, AttentionBlock, Linear, ParamBuilder};
use crate::tensor::{log_sum_exp, Graph, ParamStore, Tensor, Var};

/// Entropic OT solver settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            epsilon: 0.1,
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

impl SinkhornConfig {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::invalid(format!("invalid Sinkhorn settings {self:?}")));
        }
        Ok(())
    }
}

/// A coupling with its marginals and solver diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub plan: Tensor,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub marginal_violation: f64,
}

fn check_marginal(name: &str, m: &[f64], len: usize) -> Result<()> {
    if m.len() != len {
        return Err(Error::Shape {
            op: "sinkhorn marginal",
            lhs: vec![len],
            rhs: vec![m.len()],
        });
    }
    if m.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::invalid(format!("{name} must be strictly positive")));
    }
    let s: f64 = m.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// Largest absolute deviation of the plan's row and column sums from μ, ν.
pub fn marginal_violation(plan: &[f64], n: usize, m: usize, mu: &[f64], nu: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let s: f64 = plan[i * m..(i + 1) * m].iter().sum();
        worst = worst.max((s - mu[i]).abs());
    }
    for j in 0..m {
        let s: f64 = (0..n).map(|i| plan[i * m + j]).sum();
        worst = worst.max((s - nu[j]).abs());
    }
    worst
}

/// Log-domain Sinkhorn–Knopp scaling of `exp(−cost/ε)`.
///
/// Non-convergence is not an error: the returned plan carries
/// `converged = false` and the final violation.
pub fn sinkhorn(cost: &Tensor, mu: &[f64], nu: &[f64], cfg: SinkhornConfig) -> Result<TransportPlan> {
    cfg.validate()?;
    let (n, m) = cost.dims2();
    check_marginal("mu", mu, n)?;
    check_marginal("nu", nu, m)?;
    if !cost.is_finite() {
        return Err(Error::invalid("cost matrix has non-finite entries"));
    }
    let log_k: Vec<f64> = cost.data().iter().map(|c| -c / cfg.epsilon).collect();
    let log_mu: Vec<f64> = mu.iter().map(|x| x.ln()).collect();
    let log_nu: Vec<f64> = nu.iter().map(|x| x.ln()).collect();
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    let mut buf = vec![0.0; n.max(m)];
    let mut plan = vec![0.0; n * m];
    let mut violation = f64::INFINITY;
    let mut iterations = 0;
    let fill = |plan: &mut [f64], u: &[f64], v: &[f64]| {
        for i in 0..n {
            for j in 0..m {
                plan[i * m + j] = (log_k[i * m + j] + u[i] + v[j]).exp();
            }
        }
    };
    while iterations < cfg.max_iter {
        iterations += 1;
        for i in 0..n {
            for j in 0..m {
                buf[j] = log_k[i * m + j] + v[j];
            }
            u[i] = log_mu[i] - log_sum_exp(&buf[..m]);
        }
        for j in 0..m {
            for i in 0..n {
                buf[i] = log_k[i * m + j] + u[i];
            }
            v[j] = log_nu[j] - log_sum_exp(&buf[..n]);
        }
        fill(&mut plan, &u, &v);
        violation = marginal_violation(&plan, n, m, mu, nu);
        if violation <= cfg.tol {
            break;
        }
    }
    Ok(TransportPlan {
        plan: Tensor::matrix(n, m, plan)?,
        mu: mu.to_vec(),
        nu: nu.to_vec(),
        converged: violation <= cfg.tol,
        iterations,
        marginal_violation: violation,
    })
}

/// Diagnostics of a differentiable Sinkhorn run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornStats {
    pub converged: bool,
    pub iterations: usize,
    pub marginal_violation: f64,
}

/// Sinkhorn recorded on the graph, so the plan is differentiable in the cost
/// by backpropagating through the unrolled iterations. The iteration count
/// is decided by the forward values.
pub fn sinkhorn_graph(g: &mut Graph, cost: Var, mu: &[f64], nu: &[f64], cfg: SinkhornConfig) -> Result<(Var, SinkhornStats)> {
    cfg.validate()?;
    let (n, m) = g.shape(cost);
    check_marginal("mu", mu, n)?;
    check_marginal("nu", nu, m)?;
    let log_k = g.scale(cost, -1.0 / cfg.epsilon);
    let log_mu = g.constant(n, 1, mu.iter().map(|x| x.ln()).collect());
    let log_nu = g.constant(1, m, nu.iter().map(|x| x.ln()).collect());
    let mut v = g.constant(1, m, vec![0.0; m]);
    let mut u;
    let plan;
    let mut iterations = 0;
    let mut violation;
    loop {
        iterations += 1;
        let x = g.add(log_k, v)?;
        let lse = g.log_sum_exp(x, 1)?;
        u = g.sub(log_mu, lse)?;
        let y = g.add(log_k, u)?;
        let lse = g.log_sum_exp(y, 0)?;
        v = g.sub(log_nu, lse)?;
        let lk = g.value(log_k);
        let uv = g.value(u);
        let vv = g.value(v);
        let vals: Vec<f64> = (0..n * m).map(|k| (lk[k] + uv[k / m] + vv[k % m]).exp()).collect();
        violation = marginal_violation(&vals, n, m, mu, nu);
        if violation <= cfg.tol || iterations >= cfg.max_iter {
            let s = g.add(log_k, u)?;
            let s = g.add(s, v)?;
            plan = g.exp(s);
            break;
        }
    }
    Ok((
        plan,
        SinkhornStats {
            converged: violation <= cfg.tol,
            iterations,
            marginal_violation: violation,
        },
    ))
}

/// Parameters of one modality's OT attention and text-guided decoder.
#[derive(Clone, Copy, Debug)]
pub struct FusionParams {
    pub project_src: Linear,
    pub project_txt: Linear,
    pub decoder: AttentionBlock,
}

impl FusionParams {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, d_model: usize, heads: usize, hidden: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(FusionParams {
                project_src: Linear::no_bias(b, "cost_src", d_model, d_model)?,
                project_txt: Linear::no_bias(b, "cost_txt", d_model, d_model)?,
                decoder: AttentionBlock::new(b, "decoder", d_model, heads, hidden)?,
            })
        })
    }
}

/// Result of [`ot_align`].
#[derive(Clone, Copy, Debug)]
pub struct Alignment {
    /// `n_txt × d` aligned source features.
    pub aligned: Var,
    /// `n_src × n_txt` transport plan.
    pub plan: Var,
    pub stats: SinkhornStats,
}

/// Aligns a bag of source features to the text slots through an OT plan.
pub fn ot_align(g: &mut Graph, p: &ParamStore, src: Var, txt: Var, params: &FusionParams, cfg: SinkhornConfig) -> Result<Alignment> {
    let (n_src, d) = g.shape(src);
    let (n_txt, dt) = g.shape(txt);
    if d != dt {
        return Err(Error::Shape {
            op: "ot_align",
            lhs: vec![n_src, d],
            rhs: vec![n_txt, dt],
        });
    }
    if n_src == 0 {
        return Err(Error::invalid("OT alignment needs at least one source feature"));
    }
    let s = params.project_src.forward(g, p, src)?;
    let s = l2_normalize_rows(g, s)?;
    let t = params.project_txt.forward(g, p, txt)?;
    let t = l2_normalize_rows(g, t)?;
    let tt = g.transpose(t);
    let sim = g.matmul(s, tt)?;
    let neg = g.scale(sim, -1.0);
    let cost = g.add_scalar(neg, 1.0);
    let mu = vec![1.0 / n_src as f64; n_src];
    let nu = vec![1.0 / n_txt as f64; n_txt];
    let (plan, stats) = sinkhorn_graph(g, cost, &mu, &nu, cfg)?;
    let pt = g.transpose(plan);
    let mixed = g.matmul(pt, src)?;
    let aligned = g.scale(mixed, n_txt as f64);
    Ok(Alignment { aligned, plan, stats })
}

/// One cross-attention decoder layer with text rows as queries.
pub fn text_guided_decode(g: &mut Graph, p: &ParamStore, queries: Var, kv: Var, params: &FusionParams) -> Result<Var> {
    let (nq, dq) = g.shape(queries);
    let (nk, dk) = g.shape(kv);
    if dq != dk {
        return Err(Error::Shape {
            op: "text_guided_decode",
            lhs: vec![nq, dq],
            rhs: vec![nk, dk],
        });
    }
    params.decoder.forward(g, p, queries, kv, None)
}
