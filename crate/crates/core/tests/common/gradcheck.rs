//! Central finite-difference checks of every differentiable operation, the
//! fused modules, and the full training loss.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use umps::fusion::{ot_align, sinkhorn_graph, text_guided_decode, FusionParams, SinkhornConfig};
use umps::gmoe::{cross_entropy_graph, gmoe_hazard, nll_graph, survival_graph, ExpertParams, GateParams};
use umps::model::{Model, Probe, TrainConfig};
use umps::nn::{l2_normalize_rows, AttentionBlock, ParamBuilder};
use umps::synth::{generate_cohort, CohortSpec};
use umps::tensor::{Graph, ParamId, ParamStore, Var};

pub const ELEMENTWISE_TOL: f64 = 1e-5;
pub const FUSED_TOL: f64 = 1e-4;
pub const FULL_TOL: f64 = 1e-3;
/// Gradients smaller than this are compared absolutely.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

const H: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: String,
    pub tol: f64,
    pub max_err: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_err < self.tol
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub cases: Vec<CaseResult>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn failures(&self) -> Vec<&CaseResult> {
        self.cases.iter().filter(|c| !c.passed()).collect()
    }

    pub fn worst(&self, tol: f64) -> f64 {
        self.cases.iter().filter(|c| c.tol == tol).map(|c| c.max_err).fold(0.0, f64::max)
    }
}

type Input = (usize, usize, Vec<f64>);
type Build<'a> = &'a dyn Fn(&mut Graph, &[Var]) -> Var;

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Values bounded away from zero, for kinked or singular operations.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize, min: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.sample(StandardNormal);
            if v.abs() < min {
                min.copysign(v) + v
            } else {
                v
            }
        })
        .collect()
}

fn positive(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.2..2.0)).collect()
}

/// Reduces `out` to a scalar with fixed random weights.
fn project(g: &mut Graph, out: Var, weights: &[f64]) -> Var {
    let (r, c) = g.shape(out);
    let w = g.constant(r, c, weights.to_vec());
    let m = g.mul(out, w).unwrap();
    g.sum(m, None)
}

/// Largest relative error between backprop and central differences over
/// every input element.
fn check_vars(weight_seed: u64, inputs: &[Input], f: Build<'_>) -> f64 {
    let eval = |vals: &[Input], weights: Option<&[f64]>| -> (Graph, Vec<Var>, Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|(r, c, d)| g.variable(*r, *c, d.clone())).collect();
        let out = f(&mut g, &vars);
        let out = match weights {
            Some(w) => project(&mut g, out, w),
            None => out,
        };
        (g, vars, out)
    };
    let (g0, _, out0) = eval(inputs, None);
    let (r, c) = g0.shape(out0);
    let weights = randn(&mut ChaCha8Rng::seed_from_u64(weight_seed), r * c);
    let (g, vars, loss) = eval(inputs, Some(&weights));
    let grads = g.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (i, (rows, cols, data)) in inputs.iter().enumerate() {
        let zero = vec![0.0; rows * cols];
        let analytic = grads.wrt(vars[i]).unwrap_or(&zero).to_vec();
        for k in 0..data.len() {
            let at = |delta: f64| {
                let mut vals = inputs.to_vec();
                vals[i].2[k] += delta;
                let (g, _, l) = eval(&vals, Some(&weights));
                g.item(l)
            };
            let numeric = (at(H) - at(-H)) / (2.0 * H);
            worst = worst.max(rel_err(analytic[k], numeric));
        }
    }
    worst
}

/// Same as [`check_vars`] for selected parameter elements.
fn check_params(store: &mut ParamStore, picks: &[(ParamId, usize)], h: f64, f: &dyn Fn(&mut Graph, &ParamStore) -> Var) -> f64 {
    let mut g = Graph::new();
    let loss = f(&mut g, store);
    let grads = g.backward(loss).unwrap();
    let pg = g.param_grads(&grads, store);
    let mut worst = 0.0f64;
    for &(id, k) in picks {
        let analytic = pg[id.index()].data()[k];
        let orig = store.get(id).data()[k];
        let mut at = |v: f64| {
            store.get_mut(id).data_mut()[k] = v;
            let mut g = Graph::new();
            let l = f(&mut g, store);
            g.item(l)
        };
        let numeric = (at(orig + h) - at(orig - h)) / (2.0 * h);
        store.get_mut(id).data_mut()[k] = orig;
        worst = worst.max(rel_err(analytic, numeric));
    }
    worst
}

fn random_picks(rng: &mut ChaCha8Rng, store: &ParamStore, n: usize) -> Vec<(ParamId, usize)> {
    let ids: Vec<ParamId> = store.ids().collect();
    (0..n)
        .map(|_| {
            let id = ids[rng.random_range(0..ids.len())];
            (id, rng.random_range(0..store.get(id).len()))
        })
        .collect()
}

fn fd_sinkhorn() -> SinkhornConfig {
    SinkhornConfig {
        epsilon: 0.1,
        max_iter: 20,
        tol: 1e-300,
    }
}

fn elementwise_case(name: &str, rng: &mut ChaCha8Rng) -> f64 {
    let (r, c) = (rng.random_range(1..4), rng.random_range(1..5));
    let n = r * c;
    let x: Input = (r, c, randn(rng, n));
    match name {
        "matmul" => {
            let k = rng.random_range(1..4);
            check_vars(rng.random(), &[x, (c, k, randn(rng, c * k))], &|g, v| g.matmul(v[0], v[1]).unwrap())
        }
        "add_broadcast_row" => check_vars(rng.random(), &[x, (1, c, randn(rng, c))], &|g, v| g.add(v[0], v[1]).unwrap()),
        "sub_broadcast_col" => check_vars(rng.random(), &[x, (r, 1, randn(rng, r))], &|g, v| g.sub(v[0], v[1]).unwrap()),
        "mul" => check_vars(rng.random(), &[x, (r, c, randn(rng, n))], &|g, v| g.mul(v[0], v[1]).unwrap()),
        "mul_broadcast_scalar" => check_vars(rng.random(), &[x, (1, 1, randn(rng, 1))], &|g, v| g.mul(v[0], v[1]).unwrap()),
        "scale" => check_vars(rng.random(), &[x], &|g, v| g.scale(v[0], -1.7)),
        "add_scalar" => check_vars(rng.random(), &[x], &|g, v| g.add_scalar(v[0], 0.3)),
        "powf" => {
            let p = rng.random_range(-1.5..2.5);
            check_vars(rng.random(), &[(r, c, positive(rng, n))], &move |g, v| g.powf(v[0], p))
        }
        "transpose" => check_vars(rng.random(), &[x], &|g, v| g.transpose(v[0])),
        "concat_rows" => check_vars(rng.random(), &[x, (2, c, randn(rng, 2 * c))], &|g, v| g.concat(&[v[0], v[1]], 0).unwrap()),
        "concat_cols" => check_vars(rng.random(), &[x, (r, 2, randn(rng, 2 * r))], &|g, v| g.concat(&[v[0], v[1]], 1).unwrap()),
        "slice_rows" => check_vars(rng.random(), &[(r + 2, c, randn(rng, (r + 2) * c))], &move |g, v| g.slice_rows(v[0], 1, r + 1).unwrap()),
        "slice_cols" => check_vars(rng.random(), &[(r, c + 2, randn(rng, r * (c + 2)))], &move |g, v| g.slice_cols(v[0], 1, c + 1).unwrap()),
        "gather_rows" => {
            let rows: Vec<usize> = (0..r + 2).map(|_| rng.random_range(0..r)).collect();
            check_vars(rng.random(), &[x], &move |g, v| g.gather_rows(v[0], &rows).unwrap())
        }
        "sum_all" => check_vars(rng.random(), &[x], &|g, v| g.sum(v[0], None)),
        "sum_rows" => check_vars(rng.random(), &[x], &|g, v| g.sum(v[0], Some(0))),
        "sum_cols" => check_vars(rng.random(), &[x], &|g, v| g.sum(v[0], Some(1))),
        "mean_all" => check_vars(rng.random(), &[x], &|g, v| g.mean(v[0], None)),
        "mean_rows" => check_vars(rng.random(), &[x], &|g, v| g.mean(v[0], Some(0))),
        "mean_cols" => check_vars(rng.random(), &[x], &|g, v| g.mean(v[0], Some(1))),
        "log" => check_vars(rng.random(), &[(r, c, positive(rng, n))], &|g, v| g.log(v[0])),
        "exp" => check_vars(rng.random(), &[x], &|g, v| g.exp(v[0])),
        "sigmoid" => check_vars(rng.random(), &[x], &|g, v| g.sigmoid(v[0])),
        "relu" => check_vars(rng.random(), &[(r, c, away_from_zero(rng, n, 0.05))], &|g, v| g.relu(v[0])),
        "softmax_rows" => check_vars(rng.random(), &[x], &|g, v| g.softmax(v[0], 1)),
        "softmax_cols" => check_vars(rng.random(), &[x], &|g, v| g.softmax(v[0], 0)),
        "log_sum_exp_rows" => check_vars(rng.random(), &[x], &|g, v| g.log_sum_exp(v[0], 1).unwrap()),
        "log_sum_exp_cols" => check_vars(rng.random(), &[x], &|g, v| g.log_sum_exp(v[0], 0).unwrap()),
        "layer_norm" => {
            let c = c + 1;
            check_vars(rng.random(), &[(r, c, randn(rng, r * c))], &|g, v| g.layer_norm(v[0]))
        }
        "attention_masked" => {
            let (nq, nk, d) = (rng.random_range(1..4), rng.random_range(2..5), 4);
            let mut mask = vec![true; nk];
            mask[rng.random_range(0..nk)] = false;
            let ins = [(nq, d, randn(rng, nq * d)), (nk, d, randn(rng, nk * d)), (nk, d, randn(rng, nk * d))];
            check_vars(rng.random(), &ins, &move |g, v| g.attention(v[0], v[1], v[2], 2, Some(&mask)).unwrap())
        }
        other => panic!("unknown case {other}"),
    }
}

pub const ELEMENTWISE_CASES: [&str; 30] = [
    "matmul",
    "add_broadcast_row",
    "sub_broadcast_col",
    "mul",
    "mul_broadcast_scalar",
    "scale",
    "add_scalar",
    "powf",
    "transpose",
    "concat_rows",
    "concat_cols",
    "slice_rows",
    "slice_cols",
    "gather_rows",
    "sum_all",
    "sum_rows",
    "sum_cols",
    "mean_all",
    "mean_rows",
    "mean_cols",
    "log",
    "exp",
    "sigmoid",
    "relu",
    "softmax_rows",
    "softmax_cols",
    "log_sum_exp_rows",
    "log_sum_exp_cols",
    "layer_norm",
    "attention_masked",
];

pub const FUSED_CASES: [&str; 10] = [
    "sinkhorn_plan",
    "ot_align",
    "text_guided_decode",
    "attention_block",
    "l2_normalize_rows",
    "survival_product",
    "nll_uncensored",
    "nll_censored",
    "cross_entropy",
    "gmoe_hazard",
];

fn fused_case(name: &str, rng: &mut ChaCha8Rng) -> f64 {
    let d = 4;
    let mut store = ParamStore::new();
    let mut prng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut b = ParamBuilder::new(&mut store, &mut prng);
    match name {
        "sinkhorn_plan" => {
            let (n, m) = (rng.random_range(1..5), rng.random_range(1..5));
            let mu = vec![1.0 / n as f64; n];
            let nu = vec![1.0 / m as f64; m];
            let cost: Vec<f64> = (0..n * m).map(|_| rng.random_range(0.0..2.0)).collect();
            check_vars(rng.random(), &[(n, m, cost)], &move |g, v| sinkhorn_graph(g, v[0], &mu, &nu, fd_sinkhorn()).unwrap().0)
        }
        "ot_align" | "text_guided_decode" => {
            let fp = FusionParams::new(&mut b, "f", d, 2, 6).unwrap();
            let ns = rng.random_range(1..6);
            let ins = [(ns, d, randn(rng, ns * d)), (4, d, randn(rng, 4 * d))];
            let s = &store;
            if name == "ot_align" {
                check_vars(rng.random(), &ins, &|g, v| ot_align(g, s, v[0], v[1], &fp, fd_sinkhorn()).unwrap().aligned)
            } else {
                check_vars(rng.random(), &ins, &|g, v| text_guided_decode(g, s, v[1], v[0], &fp).unwrap())
            }
        }
        "attention_block" => {
            let blk = AttentionBlock::new(&mut b, "blk", d, 2, 6).unwrap();
            let nk = rng.random_range(2..5);
            let mut mask = vec![true; nk];
            mask[0] = false;
            let ins = [(3, d, randn(rng, 3 * d)), (nk, d, randn(rng, nk * d))];
            let s = &store;
            check_vars(rng.random(), &ins, &|g, v| blk.forward(g, s, v[0], v[1], Some(&mask)).unwrap())
        }
        "l2_normalize_rows" => check_vars(rng.random(), &[(3, d, randn(rng, 3 * d))], &|g, v| l2_normalize_rows(g, v[0]).unwrap()),
        "survival_product" => check_vars(rng.random(), &[(1, 4, randn(rng, 4))], &|g, v| {
            let h = g.sigmoid(v[0]);
            survival_graph(g, h).unwrap()
        }),
        "nll_uncensored" | "nll_censored" => {
            let censored = name == "nll_censored";
            let bin = rng.random_range(0..4);
            check_vars(rng.random(), &[(1, 4, randn(rng, 4))], &move |g, v| {
                let h = g.sigmoid(v[0]);
                let s = survival_graph(g, h).unwrap();
                nll_graph(g, h, s, censored, bin).unwrap()
            })
        }
        "cross_entropy" => {
            let label = rng.random_range(0..5);
            check_vars(rng.random(), &[(1, 5, randn(rng, 5))], &move |g, v| cross_entropy_graph(g, v[0], label).unwrap())
        }
        "gmoe_hazard" => {
            let experts: Vec<ExpertParams> = (0..3).map(|i| ExpertParams::new(&mut b, &format!("e{i}"), d, 2, 6, 4).unwrap()).collect();
            let gate = GateParams::new(&mut b, "gate", d, 3).unwrap();
            // A zeroed gate has no gradient path into the gate inputs worth testing.
            for t in [gate.linear.weight].into_iter().chain(gate.linear.bias) {
                store.get_mut(t).data_mut().iter_mut().for_each(|x| *x = prng.sample::<f64, _>(StandardNormal) * 0.5);
            }
            let ins = [
                (4, d, randn(rng, 4 * d)),
                (6, d, randn(rng, 6 * d)),
                (4, d, randn(rng, 4 * d)),
                (1, d, randn(rng, d)),
                (1, d, randn(rng, d)),
            ];
            let s = &store;
            check_vars(rng.random(), &ins, &|g, v| gmoe_hazard(g, s, v[0], v[1], v[2], v[3], v[4], &experts, &gate).unwrap().survival)
        }
        other => panic!("unknown case {other}"),
    }
}

/// Joint loss of a small model on one synthetic patient, checked at five
/// random parameter elements.
fn full_graph_case(rng: &mut ChaCha8Rng, seed: u64) -> f64 {
    let mut spec = CohortSpec::default();
    spec.cancers.truncate(2);
    spec.cancers.iter_mut().for_each(|c| c.cases = 10);
    spec.seed = seed;
    spec.missing_group_rate = 0.2;
    let cohort = generate_cohort(&spec).unwrap();
    let patient = cohort.patients[rng.random_range(0..cohort.patients.len())].clone();
    let config = TrainConfig {
        d_model: 8,
        heads: 2,
        ffn_hidden: 8,
        n_experts: 2,
        sinkhorn_max_iter: 20,
        sinkhorn_tol: 1e-300,
        seed,
        ..TrainConfig::default()
    };
    let cancers = spec.cancers.iter().map(|c| c.cancer_type).collect();
    let mut model = Model::new(config, spec.patch_dim, cancers, vec![8.0, 20.0, 45.0]).unwrap();
    // Perturb the zero-initialized gate so its gradient is exercised.
    let gw = model.params.gate.linear.weight;
    model.store.get_mut(gw).data_mut().iter_mut().for_each(|x| *x = rng.sample::<f64, _>(StandardNormal) * 0.3);
    let picks = random_picks(rng, &model.store, 5);
    let mut store = std::mem::take(&mut model.store);
    let f = |g: &mut Graph, s: &ParamStore| {
        let mut m = model.clone();
        m.store = s.clone();
        let fw = m.forward(g, &patient, Probe::default()).unwrap();
        m.loss(g, &fw, &patient).unwrap()
    };
    check_params(&mut store, &picks, 1e-6, &f)
}

/// Runs the whole suite: 2 trials per primitive, 3 per fused module and 10
/// full-graph spot checks (100 trials).
pub fn run_suite(seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    for name in ELEMENTWISE_CASES {
        for t in 0..2 {
            cases.push(CaseResult {
                name: format!("{name}#{t}"),
                tol: ELEMENTWISE_TOL,
                max_err: elementwise_case(name, &mut rng),
            });
        }
    }
    for name in FUSED_CASES {
        for t in 0..3 {
            cases.push(CaseResult {
                name: format!("{name}#{t}"),
                tol: FUSED_TOL,
                max_err: fused_case(name, &mut rng),
            });
        }
    }
    for t in 0..10 {
        let s = rng.random();
        cases.push(CaseResult {
            name: format!("full_graph#{t}"),
            tol: FULL_TOL,
            max_err: full_graph_case(&mut rng, s),
        });
    }
    SuiteReport {
        cases,
        elapsed: start.elapsed(),
    }
}
