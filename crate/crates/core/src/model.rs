//! The full network: encoders, two OT fusion branches, the expert mixture
//! and the agent classifier, with a per-patient forward pass and loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bags::{CancerType, PatientRecord, TextKind};
use crate::encoders::{embed_text_bag, encode_genomic, project_patches, EncoderParams, GenomicFeatures, TextEmbedder, TokenScale};
use crate::error::{Error, Result};
use crate::fusion::{ot_align, text_guided_decode, FusionParams, SinkhornConfig, SinkhornStats};
use crate::gmoe::{agent_logits, cross_entropy_graph, gmoe_hazard, nll_graph, AgentParams, ExpertParams, GateParams};
use crate::nn::ParamBuilder;
use crate::stats::{risk_score, HazardCurve};
use crate::tensor::{AdamW, Graph, ParamStore, Var};

/// Architecture and optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub n_bins: usize,
    pub n_experts: usize,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_max_iter: usize,
    pub sinkhorn_tol: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub accumulation_steps: usize,
    pub seed: u64,
    pub folds: usize,
    /// Rows of the frozen hashed word-embedding table.
    pub text_table_rows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamW::default();
        let ot = SinkhornConfig::default();
        TrainConfig {
            d_model: 128,
            heads: 4,
            ffn_hidden: 256,
            n_bins: 4,
            n_experts: 10,
            sinkhorn_epsilon: ot.epsilon,
            sinkhorn_max_iter: ot.max_iter,
            sinkhorn_tol: ot.tol,
            lr: adam.lr,
            weight_decay: adam.weight_decay,
            epochs: 20,
            accumulation_steps: 32,
            seed: 0,
            folds: 5,
            text_table_rows: 4096,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("ffn_hidden", self.ffn_hidden),
            ("n_bins", self.n_bins),
            ("n_experts", self.n_experts),
            ("sinkhorn_max_iter", self.sinkhorn_max_iter),
            ("epochs", self.epochs),
            ("accumulation_steps", self.accumulation_steps),
            ("folds", self.folds),
            ("text_table_rows", self.text_table_rows),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.d_model % self.heads != 0 || self.d_model % 2 != 0 {
            return Err(Error::invalid(format!(
                "d_model {} must be even and divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if !(self.sinkhorn_epsilon > 0.0) || !(self.sinkhorn_tol > 0.0) {
            return Err(Error::invalid("Sinkhorn epsilon and tolerance must be positive"));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("lr and weight_decay must be nonnegative"));
        }
        Ok(())
    }

    pub fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig {
            epsilon: self.sinkhorn_epsilon,
            max_iter: self.sinkhorn_max_iter,
            tol: self.sinkhorn_tol,
        }
    }

    pub fn adamw(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamW::default()
        }
    }
}

/// Parameter handles of every submodule; the tensors live in `Model::store`.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub encoders: EncoderParams,
    pub fusion_patch: FusionParams,
    pub fusion_genomic: FusionParams,
    pub experts: Vec<ExpertParams>,
    pub gate: GateParams,
    pub agent: AgentParams,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: TrainConfig,
    pub d_patch: usize,
    pub cancer_types: Vec<CancerType>,
    pub bin_edges: Vec<f64>,
    pub store: ParamStore,
    pub params: ModelParams,
    pub text: TextEmbedder,
}

/// Optional multiplicative perturbations of intermediate tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Probe {
    pub gene: Option<TokenScale>,
    /// `(patch index, factor)` applied to a projected patch token.
    pub patch: Option<(usize, f64)>,
}

/// Graph nodes of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub hazards: Var,
    pub survival: Var,
    pub agent_logits: Var,
    pub gate_weights: Var,
    pub text: Var,
    pub patches: Var,
    pub genomic: GenomicFeatures,
    pub ot_patch: SinkhornStats,
    pub ot_genomic: SinkhornStats,
}

/// Plain-value outputs for one patient.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub curve: HazardCurve,
    pub agent_logits: Vec<f64>,
    pub gate_weights: Vec<f64>,
    pub risk: f64,
}

const TEXT_SEED_SALT: u64 = 0x7e57_5eed;

impl Model {
    /// Builds freshly initialized parameters, deterministic in `config.seed`.
    pub fn new(config: TrainConfig, d_patch: usize, cancer_types: Vec<CancerType>, bin_edges: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if d_patch == 0 {
            return Err(Error::invalid("patch feature dimension must be positive"));
        }
        if cancer_types.is_empty() {
            return Err(Error::invalid("model needs at least one cancer type"));
        }
        if bin_edges.len() + 1 != config.n_bins || bin_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "{} increasing bin edges required for {} bins",
                config.n_bins - 1,
                config.n_bins
            )));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, h, f) = (config.d_model, config.heads, config.ffn_hidden);
        let params = {
            let mut b = ParamBuilder::new(&mut store, &mut rng);
            ModelParams {
                encoders: EncoderParams::new(&mut b, d_patch, d, h, f)?,
                fusion_patch: FusionParams::new(&mut b, "fuse_patch", d, h, f)?,
                fusion_genomic: FusionParams::new(&mut b, "fuse_genomic", d, h, f)?,
                experts: (0..config.n_experts)
                    .map(|i| ExpertParams::new(&mut b, &format!("expert{i:02}"), d, h, f, config.n_bins))
                    .collect::<Result<_>>()?,
                gate: GateParams::new(&mut b, "gate", d, config.n_experts)?,
                agent: AgentParams::new(&mut b, "agent", d, cancer_types.len())?,
            }
        };
        let text = TextEmbedder::new(config.seed ^ TEXT_SEED_SALT, config.text_table_rows, d);
        Ok(Model {
            config,
            d_patch,
            cancer_types,
            bin_edges,
            store,
            params,
            text,
        })
    }

    pub fn cancer_index(&self, c: CancerType) -> Result<usize> {
        self.cancer_types
            .iter()
            .position(|&x| x == c)
            .ok_or_else(|| Error::invalid(format!("cancer type {c} is not known to this model")))
    }

    /// Records the forward pass of one patient on `g`.
    pub fn forward(&self, g: &mut Graph, patient: &PatientRecord, probe: Probe) -> Result<Forward> {
        let p = &self.store;
        let mp = &self.params;
        let ot = self.config.sinkhorn();
        let text = embed_text_bag(g, p, &self.text, &mp.encoders, &patient.text_bag()?)?;
        // The fused rows feed the agent head, which must not train the text
        // adapter, so fusion sees the text rows as constants.
        let text_const = g.detach(text);

        let mut patches = project_patches(g, p, &patient.wsi, &mp.encoders)?;
        if let Some((idx, factor)) = probe.patch {
            let n = patient.wsi.patch_count();
            if idx >= n {
                return Err(Error::invalid(format!("patch {idx} out of {n}")));
            }
            let mut col = vec![1.0; n];
            col[idx] = factor;
            let c = g.constant(n, 1, col);
            patches = g.mul(patches, c)?;
        }
        let aligned_p = ot_align(g, p, patches, text_const, &mp.fusion_patch, ot)?;
        let fused_p = text_guided_decode(g, p, text_const, aligned_p.aligned, &mp.fusion_patch)?;

        let genomic = encode_genomic(g, p, &patient.genomic, &mp.encoders, probe.gene)?;
        // Absent groups only join the transport source when nothing was
        // observed; their rows are zero, so the genomic branch is uninformative.
        let present = genomic.present_rows();
        let src_g = if present.is_empty() {
            genomic.features
        } else {
            g.gather_rows(genomic.features, &present)?
        };
        let aligned_g = ot_align(g, p, src_g, text_const, &mp.fusion_genomic, ot)?;
        let fused_g = text_guided_decode(g, p, text_const, aligned_g.aligned, &mp.fusion_genomic)?;

        let cancer = g.slice_rows(text, TextKind::Cancer as usize, TextKind::Cancer as usize + 1)?;
        let diagnosis = g.slice_rows(text, TextKind::Diagnosis as usize, TextKind::Diagnosis as usize + 1)?;
        let mix = gmoe_hazard(g, p, fused_p, fused_g, text, cancer, diagnosis, &mp.experts, &mp.gate)?;
        let agent = agent_logits(g, p, fused_p, fused_g, &mp.agent)?;
        Ok(Forward {
            hazards: mix.hazards,
            survival: mix.survival,
            agent_logits: agent,
            gate_weights: mix.weights,
            text,
            patches,
            genomic,
            ot_patch: aligned_p.stats,
            ot_genomic: aligned_g.stats,
        })
    }

    /// Joint loss (cancer cross-entropy plus survival NLL) of one patient.
    pub fn loss(&self, g: &mut Graph, f: &Forward, patient: &PatientRecord) -> Result<Var> {
        let label = patient.label(&self.bin_edges)?;
        let nll = nll_graph(g, f.hazards, f.survival, label.censored, label.time_bin)?;
        let ce = cross_entropy_graph(g, f.agent_logits, self.cancer_index(patient.cancer_type())?)?;
        g.add(ce, nll)
    }

    /// Risk node `−Σ S` of a forward pass.
    pub fn risk(&self, g: &mut Graph, f: &Forward) -> Var {
        let s = g.sum(f.survival, None);
        g.scale(s, -1.0)
    }

    pub fn predict(&self, patient: &PatientRecord) -> Result<Prediction> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, patient, Probe::default())?;
        let curve = HazardCurve {
            hazards: g.value(f.hazards).to_vec(),
            survival: g.value(f.survival).to_vec(),
        };
        let risk = risk_score(&curve);
        Ok(Prediction {
            curve,
            agent_logits: g.value(f.agent_logits).to_vec(),
            gate_weights: g.value(f.gate_weights).to_vec(),
            risk,
        })
    }

    /// Fails with the name of the first parameter holding NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.store.first_non_finite() {
            Some(name) => Err(Error::NonFinite(format!("parameter {name}"))),
            None => Ok(()),
        }
    }
}
