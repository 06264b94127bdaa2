//! Text-guided soft mixture of experts and the cancer-type agent head.
//!
//! Each expert decodes the text rows against the 8 fused rows, pools, and
//! emits per-bin hazard logits. The gate turns the cancer and diagnosis
//! sentence embeddings into a softmax over experts, and the mixture is taken
//! on logits before the per-bin sigmoid.

use crate::error::{Error, Result};
use crate::nn::{AttentionBlock, Linear, ParamBuilder};
use crate::tensor::{Graph, ParamStore, Var};

#[derive(Clone, Copy, Debug)]
pub struct ExpertParams {
    pub layers: [AttentionBlock; 2],
    pub head: Linear,
}

impl ExpertParams {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, d_model: usize, heads: usize, hidden: usize, n_bins: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(ExpertParams {
                layers: [
                    AttentionBlock::new(b, "dec0", d_model, heads, hidden)?,
                    AttentionBlock::new(b, "dec1", d_model, heads, hidden)?,
                ],
                head: Linear::new(b, "head", d_model, n_bins)?,
            })
        })
    }
}

/// Affine map from the concatenated cancer/diagnosis embeddings to expert
/// logits, zero-initialized so training starts from a uniform mixture.
#[derive(Clone, Copy, Debug)]
pub struct GateParams {
    pub linear: Linear,
}

impl GateParams {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, d_model: usize, n_experts: usize) -> Result<Self> {
        Ok(GateParams {
            linear: Linear::zeroed(b, name, 2 * d_model, n_experts)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AgentParams {
    pub head: Linear,
}

impl AgentParams {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, d_model: usize, n_cancers: usize) -> Result<Self> {
        Ok(AgentParams {
            head: Linear::new(b, name, d_model, n_cancers)?,
        })
    }
}

fn same_width(g: &Graph, op: &'static str, vars: &[Var]) -> Result<()> {
    let d = g.shape(vars[0]).1;
    for &v in &vars[1..] {
        if g.shape(v).1 != d {
            return Err(Error::Shape {
                op,
                lhs: vec![g.shape(vars[0]).0, d],
                rhs: vec![g.shape(v).0, g.shape(v).1],
            });
        }
    }
    Ok(())
}

/// Hazard logits (`1 × n_bins`) of one expert.
pub fn expert_forward(g: &mut Graph, p: &ParamStore, fused_p: Var, fused_g: Var, txt: Var, e: &ExpertParams) -> Result<Var> {
    same_width(g, "expert_forward", &[fused_p, fused_g, txt])?;
    let kv = g.concat(&[fused_p, fused_g], 0)?;
    let h = e.layers[0].forward(g, p, txt, kv, None)?;
    let h = e.layers[1].forward(g, p, h, kv, None)?;
    let pooled = g.mean(h, Some(0));
    e.head.forward(g, p, pooled)
}

/// Softmax mixture weights (`1 × N_e`).
pub fn gate_weights(g: &mut Graph, p: &ParamStore, cancer_emb: Var, diag_emb: Var, gate: &GateParams) -> Result<Var> {
    let x = g.concat(&[cancer_emb, diag_emb], 1)?;
    let z = gate.linear.forward(g, p, x)?;
    Ok(g.softmax(z, 1))
}

/// Graph nodes produced by [`gmoe_hazard`].
#[derive(Clone, Copy, Debug)]
pub struct GmoeOutput {
    pub weights: Var,
    pub expert_logits: Var,
    pub logits: Var,
    pub hazards: Var,
    pub survival: Var,
}

/// Mixes the experts' logits with the gate weights, then applies the
/// per-bin sigmoid and the running survival product.
#[allow(clippy::too_many_arguments)]
pub fn gmoe_hazard(
    g: &mut Graph,
    p: &ParamStore,
    fused_p: Var,
    fused_g: Var,
    txt: Var,
    cancer_emb: Var,
    diag_emb: Var,
    experts: &[ExpertParams],
    gate: &GateParams,
) -> Result<GmoeOutput> {
    if experts.is_empty() {
        return Err(Error::invalid("mixture needs at least one expert"));
    }
    let per_expert = experts
        .iter()
        .map(|e| expert_forward(g, p, fused_p, fused_g, txt, e))
        .collect::<Result<Vec<_>>>()?;
    let expert_logits = g.concat(&per_expert, 0)?;
    let weights = gate_weights(g, p, cancer_emb, diag_emb, gate)?;
    let logits = g.matmul(weights, expert_logits)?;
    let hazards = g.sigmoid(logits);
    let survival = survival_graph(g, hazards)?;
    Ok(GmoeOutput {
        weights,
        expert_logits,
        logits,
        hazards,
        survival,
    })
}

/// Cancer-type logits from the fused image and genomic rows only.
pub fn agent_logits(g: &mut Graph, p: &ParamStore, fused_p: Var, fused_g: Var, agent: &AgentParams) -> Result<Var> {
    let rows = g.concat(&[fused_p, fused_g], 0)?;
    let pooled = g.mean(rows, Some(0));
    agent.head.forward(g, p, pooled)
}

/// Running product of `1 − h` over a `1 × n` hazard row, built from the
/// same sequence of multiplications as [`crate::stats::cumulative_survival`].
pub fn survival_graph(g: &mut Graph, hazards: Var) -> Result<Var> {
    let (_, n) = g.shape(hazards);
    let neg = g.scale(hazards, -1.0);
    let one_minus = g.add_scalar(neg, 1.0);
    let mut cols = Vec::with_capacity(n);
    let mut s = g.slice_cols(one_minus, 0, 1)?;
    cols.push(s);
    for k in 1..n {
        let f = g.slice_cols(one_minus, k, k + 1)?;
        s = g.mul(s, f)?;
        cols.push(s);
    }
    g.concat(&cols, 1)
}

/// Survival NLL of one patient on the graph; see
/// [`crate::stats::nll_survival_loss`].
pub fn nll_graph(g: &mut Graph, hazards: Var, survival: Var, censored: bool, bin: usize) -> Result<Var> {
    let (_, n) = g.shape(hazards);
    if bin >= n {
        return Err(Error::invalid(format!("time bin {bin} outside 0..{n}")));
    }
    if censored {
        let s = g.slice_cols(survival, bin, bin + 1)?;
        let l = g.log(s);
        return Ok(g.scale(l, -1.0));
    }
    let h = g.slice_cols(hazards, bin, bin + 1)?;
    let mut ll = g.log(h);
    if bin > 0 {
        let s = g.slice_cols(survival, bin - 1, bin)?;
        let ls = g.log(s);
        ll = g.add(ll, ls)?;
    }
    Ok(g.scale(ll, -1.0))
}

/// Cross-entropy of a `1 × C` logit row against `label`.
pub fn cross_entropy_graph(g: &mut Graph, logits: Var, label: usize) -> Result<Var> {
    let (_, c) = g.shape(logits);
    if label >= c {
        return Err(Error::invalid(format!("class {label} outside 0..{c}")));
    }
    let lse = g.log_sum_exp(logits, 1)?;
    let z = g.slice_cols(logits, label, label + 1)?;
    g.sub(lse, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{cumulative_survival, nll_survival_loss, HazardCurve};
    use crate::tensor::sigmoid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const D: usize = 4;

    fn rows(rng: &mut ChaCha8Rng, g: &mut Graph, n: usize) -> Var {
        let data = (0..n * D).map(|_| rng.random_range(-1.0..1.0)).collect();
        g.constant(n, D, data)
    }

    fn experts(store: &mut ParamStore, n: usize, seed: u64) -> (Vec<ExpertParams>, GateParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ParamBuilder::new(store, &mut rng);
        let ex = (0..n).map(|i| ExpertParams::new(&mut b, &format!("e{i}"), D, 2, 8, 4).unwrap()).collect();
        let gate = GateParams::new(&mut b, "gate", D, n).unwrap();
        (ex, gate)
    }

    struct Inputs {
        fp: Var,
        fg: Var,
        txt: Var,
        can: Var,
        dia: Var,
    }

    fn inputs(g: &mut Graph, seed: u64) -> Inputs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Inputs {
            fp: rows(&mut rng, g, 4),
            fg: rows(&mut rng, g, 4),
            txt: rows(&mut rng, g, 4),
            can: rows(&mut rng, g, 1),
            dia: rows(&mut rng, g, 1),
        }
    }

    #[test]
    fn zeroed_head_gives_half_hazards() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let mut e = ExpertParams::new(&mut b, "e", D, 2, 8, 4).unwrap();
        e.head = Linear::zeroed(&mut b, "zero_head", D, 4).unwrap();
        let mut g = Graph::new();
        let x = inputs(&mut g, 2);
        let z = expert_forward(&mut g, &store, x.fp, x.fg, x.txt, &e).unwrap();
        assert_eq!(g.value(z), &[0.0; 4]);
        let h = g.sigmoid(z);
        assert_eq!(g.value(h), &[0.5; 4]);
        let bad = g.constant(4, 3, vec![0.0; 12]);
        assert!(expert_forward(&mut g, &store, x.fp, x.fg, bad, &e).is_err());
    }

    #[test]
    fn zeroed_gate_is_uniform() {
        let mut store = ParamStore::new();
        let (_, gate) = experts(&mut store, 7, 3);
        let mut g = Graph::new();
        let x = inputs(&mut g, 4);
        let w = gate_weights(&mut g, &store, x.can, x.dia, &gate).unwrap();
        for &v in g.value(w) {
            assert!((v - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_expert_is_bit_identical() {
        let mut store = ParamStore::new();
        let (ex, gate) = experts(&mut store, 1, 5);
        // a non-trivial gate must not matter with one expert
        let w = store.get_mut(gate.linear.weight);
        w.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.3 - 1.0);
        let mut g = Graph::new();
        let x = inputs(&mut g, 6);
        let out = gmoe_hazard(&mut g, &store, x.fp, x.fg, x.txt, x.can, x.dia, &ex, &gate).unwrap();
        let z = expert_forward(&mut g, &store, x.fp, x.fg, x.txt, &ex[0]).unwrap();
        let h: Vec<f64> = g.value(z).iter().map(|&v| sigmoid(v)).collect();
        assert_eq!(g.value(out.hazards), h.as_slice());
        assert_eq!(g.value(out.survival), cumulative_survival(&h).unwrap().as_slice());
    }

    #[test]
    fn identical_experts_ignore_the_gate() {
        let mut store = ParamStore::new();
        let (ex, gate) = experts(&mut store, 3, 7);
        // copy expert 0's tensors into experts 1 and 2
        let names: Vec<String> = store.ids().filter_map(|id| store.name(id).strip_prefix("e0.").map(str::to_string)).collect();
        for n in &names {
            let src = store.by_name(&format!("e0.{n}")).unwrap().clone();
            for e in 1..3 {
                let id = store.id(&format!("e{e}.{n}")).unwrap();
                *store.get_mut(id) = src.clone();
            }
        }
        let mut results = Vec::new();
        for scale in [0.0, 1.0, -3.0] {
            let w = store.get_mut(gate.linear.weight);
            w.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = scale * (i % 5) as f64);
            let mut g = Graph::new();
            let x = inputs(&mut g, 8);
            let out = gmoe_hazard(&mut g, &store, x.fp, x.fg, x.txt, x.can, x.dia, &ex, &gate).unwrap();
            results.push(g.value(out.hazards).to_vec());
        }
        for r in &results[1..] {
            for (a, b) in r.iter().zip(&results[0]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn three_experts_match_manual_mixture() {
        let mut store = ParamStore::new();
        let (ex, gate) = experts(&mut store, 3, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        store.get_mut(gate.linear.weight).data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let mut g = Graph::new();
        let x = inputs(&mut g, 11);
        let out = gmoe_hazard(&mut g, &store, x.fp, x.fg, x.txt, x.can, x.dia, &ex, &gate).unwrap();
        // recompute the gate by hand from the parameter tensors
        let mut cat = g.value(x.can).to_vec();
        cat.extend_from_slice(g.value(x.dia));
        let w = store.get(gate.linear.weight);
        let z: Vec<f64> = (0..3).map(|k| (0..2 * D).map(|i| cat[i] * w.get(i, k)).sum()).collect();
        let zmax = z.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
        let sum: f64 = e.iter().sum();
        let weights: Vec<f64> = e.iter().map(|v| v / sum).collect();
        let per: Vec<Vec<f64>> = ex
            .iter()
            .map(|p| {
                let v = expert_forward(&mut g, &store, x.fp, x.fg, x.txt, p).unwrap();
                g.value(v).to_vec()
            })
            .collect();
        for bin in 0..4 {
            let mixed: f64 = (0..3).map(|k| weights[k] * per[k][bin]).sum();
            assert!((g.value(out.hazards)[bin] - sigmoid(mixed)).abs() < 1e-14);
        }
        let total: f64 = g.value(out.weights).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(gmoe_hazard(&mut g, &store, x.fp, x.fg, x.txt, x.can, x.dia, &[], &gate).is_err());
    }

    #[test]
    fn agent_ignores_row_order() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let agent = AgentParams::new(&mut ParamBuilder::new(&mut store, &mut rng), "agent", D, 5).unwrap();
        let mut g = Graph::new();
        let x = inputs(&mut g, 13);
        let a = agent_logits(&mut g, &store, x.fp, x.fg, &agent).unwrap();
        assert_eq!(g.shape(a), (1, 5));
        let swapped_p = g.gather_rows(x.fg, &[3, 1, 0, 2]).unwrap();
        let swapped_g = g.gather_rows(x.fp, &[2, 0, 3, 1]).unwrap();
        let b = agent_logits(&mut g, &store, swapped_p, swapped_g, &agent).unwrap();
        for (u, v) in g.value(a).iter().zip(g.value(b)) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn graph_losses_match_plain_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..50 {
            let h: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            let curve = HazardCurve::from_hazards(h.clone()).unwrap();
            let mut g = Graph::new();
            let hv = g.constant(1, 4, h);
            let s = survival_graph(&mut g, hv).unwrap();
            assert_eq!(g.value(s), curve.survival.as_slice());
            for bin in 0..4 {
                for censored in [false, true] {
                    let l = nll_graph(&mut g, hv, s, censored, bin).unwrap();
                    assert!((g.item(l) - nll_survival_loss(&curve, censored, bin).unwrap()).abs() < 1e-14);
                }
            }
            let logits: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let lv = g.constant(1, 5, logits.clone());
            let ce = cross_entropy_graph(&mut g, lv, 2).unwrap();
            assert!((g.item(ce) - crate::stats::cross_entropy(&logits, 2).unwrap()).abs() < 1e-14);
        }
    }
}
