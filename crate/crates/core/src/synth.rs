//! Synthetic multi-cancer cohorts with a known discrete-time hazard model.
//!
//! Per cancer `c`, the monthly log-hazard of a patient is
//! `baseline_c + Σ_g Σ_j w_c · s_{c,g,j} · z_{g,j} + w_p · cluster`, where
//! `z_{g,j}` are the z-scores of the three planted genes of group `g`,
//! `s_{c,g,j} = ±1` are per-cancer signs and `cluster` marks patients whose
//! slide carries the planted high-risk patch cluster. Event months are
//! geometric draws from that hazard with sub-month jitter, then censored at
//! random and at the end of follow-up.
//!
//! A latent standard-normal severity `r` ties the modalities together:
//! planted genes are drawn as `N(shift_c · s_{c,g,j} · r, 1)` and the patch
//! cluster appears when `r` exceeds a threshold. All other genes and patches
//! are pure noise.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bags::{
    write_cohort, CancerType, GenomicBag, GenomicGroup, GenomicSchema, PatientMeta, PatientRecord, Race, Sex, Treatment,
    WsiBag,
};
use crate::error::{Error, Result};
use crate::stats::concordance_index;
use crate::tensor::Tensor;

pub const PLANTED_PER_GROUP: usize = 3;

/// Ground-truth model of one cancer type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CancerSpec {
    pub cancer_type: CancerType,
    pub cases: usize,
    /// Monthly log-hazard of a patient with zero risk.
    pub baseline_log_hazard: f64,
    pub gene_weight: f64,
    /// Mean shift of the planted genes per unit of latent severity.
    pub gene_shift: f64,
    /// Sign of each planted gene's effect, per group.
    pub gene_signs: [[f64; PLANTED_PER_GROUP]; 6],
    pub patch_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub cancers: Vec<CancerSpec>,
    pub patch_dim: usize,
    pub patch_count_min: usize,
    pub patch_count_max: usize,
    pub group_sizes: [usize; 6],
    /// Fraction of a cluster-positive slide's patches that are shifted.
    pub cluster_fraction: f64,
    pub cluster_shift: f64,
    /// Latent severity above which a slide carries the patch cluster.
    pub cluster_threshold: f64,
    pub censoring_rate: f64,
    /// Administrative end of follow-up; later event times are censored here.
    pub follow_up_months: Option<f64>,
    /// Probability that a whole genomic group is unobserved.
    pub missing_group_rate: f64,
    pub n_bins: usize,
    pub seed: u64,
}

/// Group sizes of the reference gene lists divided by 32, at least 8.
pub const DESK_GROUP_SIZES: [usize; 6] = [8, 10, 16, 14, 48, 14];

impl Default for CohortSpec {
    fn default() -> Self {
        let params = [
            (CancerType::Blca, -3.4, 0.3, 0.8),
            (CancerType::Brca, -4.2, 0.25, 0.8),
            (CancerType::Gbmlgg, -2.9, 0.25, 0.8),
            (CancerType::Luad, -3.5, 0.25, 0.8),
            (CancerType::Ucec, -4.1, 0.25, 0.8),
        ];
        let cancers = params
            .iter()
            .enumerate()
            .map(|(c, &(cancer_type, baseline_log_hazard, gene_weight, patch_weight))| CancerSpec {
                cancer_type,
                cases: 100,
                baseline_log_hazard,
                gene_weight,
                gene_shift: 1.5,
                gene_signs: default_signs(c),
                patch_weight,
            })
            .collect();
        CohortSpec {
            cancers,
            patch_dim: 16,
            patch_count_min: 8,
            patch_count_max: 24,
            group_sizes: DESK_GROUP_SIZES,
            cluster_fraction: 0.3,
            cluster_shift: 2.0,
            cluster_threshold: 0.0,
            censoring_rate: 0.3,
            follow_up_months: Some(240.0),
            missing_group_rate: 0.0,
            n_bins: 4,
            seed: 7,
        }
    }
}

/// The first three groups push risk up for every cancer; the last three flip
/// sign between alternate cancers, so a single shared head must compromise.
fn default_signs(cancer: usize) -> [[f64; PLANTED_PER_GROUP]; 6] {
    let flip = if cancer % 2 == 0 { 1.0 } else { -1.0 };
    std::array::from_fn(|g| [if g < 3 { 1.0 } else { flip }; PLANTED_PER_GROUP])
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cancers.is_empty() {
            return Err(Error::invalid("cohort spec lists no cancer types"));
        }
        let mut seen = Vec::new();
        for c in &self.cancers {
            if c.cases < 10 {
                return Err(Error::invalid(format!("{}: {} cases, need at least 10", c.cancer_type, c.cases)));
            }
            if seen.contains(&c.cancer_type) {
                return Err(Error::invalid(format!("{} listed twice", c.cancer_type)));
            }
            seen.push(c.cancer_type);
            let finite = [c.baseline_log_hazard, c.gene_weight, c.gene_shift, c.patch_weight]
                .iter()
                .chain(c.gene_signs.iter().flatten())
                .all(|v| v.is_finite());
            if !finite {
                return Err(Error::invalid(format!("{}: non-finite risk parameters", c.cancer_type)));
            }
        }
        if !(0.0..1.0).contains(&self.censoring_rate) {
            return Err(Error::invalid(format!("censoring rate {} outside [0, 1)", self.censoring_rate)));
        }
        if self.follow_up_months.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::invalid("follow-up must be positive and finite"));
        }
        for (name, v) in [
            ("cluster_fraction", self.cluster_fraction),
            ("missing_group_rate", self.missing_group_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.missing_group_rate >= 1.0 {
            return Err(Error::invalid("every genomic group would be missing"));
        }
        if self.patch_dim == 0 || self.patch_count_min == 0 || self.patch_count_min > self.patch_count_max {
            return Err(Error::invalid("invalid patch dimension or count range"));
        }
        if self.group_sizes.iter().any(|&n| n < PLANTED_PER_GROUP) {
            return Err(Error::invalid(format!("each genomic group needs at least {PLANTED_PER_GROUP} genes")));
        }
        if self.n_bins == 0 {
            return Err(Error::invalid("n_bins must be positive"));
        }
        Ok(())
    }

    /// Positions of the planted genes inside each group, evenly spread.
    pub fn planted_positions(&self) -> [[usize; PLANTED_PER_GROUP]; 6] {
        self.group_sizes.map(|n| std::array::from_fn(|j| (2 * j + 1) * n / (2 * PLANTED_PER_GROUP)))
    }

    /// Cancer with the largest total genomic effect; ties go to the first listed.
    pub fn dominant_cancer(&self) -> CancerType {
        let strength = |c: &CancerSpec| c.gene_weight.abs() * c.gene_signs.iter().flatten().map(|s| s.abs()).sum::<f64>();
        let mut best = &self.cancers[0];
        for c in &self.cancers[1..] {
            if strength(c) > strength(best) {
                best = c;
            }
        }
        best.cancer_type
    }
}

/// Latent quantities of one generated patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub id: String,
    pub cancer_type: CancerType,
    pub latent: f64,
    pub log_hazard: f64,
    pub risk: f64,
    pub cluster: bool,
    pub cluster_patches: Vec<usize>,
    pub event_months: f64,
}

/// Sidecar describing the generating model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub seed: u64,
    pub dominant_cancer: CancerType,
    /// Planted gene names per group abbreviation.
    pub planted_genes: BTreeMap<String, Vec<String>>,
    pub planted_positions: [[usize; PLANTED_PER_GROUP]; 6],
    pub cluster_direction: Vec<f64>,
    pub spec: CohortSpec,
    pub patients: Vec<PatientTruth>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCohort {
    pub patients: Vec<PatientRecord>,
    pub truth: Truth,
}

impl SyntheticCohort {
    /// C-index of the true risk against the generated outcomes.
    pub fn oracle_cindex(&self) -> Result<f64> {
        let risks: Vec<f64> = self.truth.patients.iter().map(|t| t.risk).collect();
        let times: Vec<f64> = self.patients.iter().map(|p| p.survival_months).collect();
        let cens: Vec<bool> = self.patients.iter().map(|p| p.censored).collect();
        concordance_index(&risks, &times, &cens)
    }
}

const DIAGNOSES: [(CancerType, &[&str]); 5] = [
    (CancerType::Blca, &["Papillary transitional cell carcinoma", "Transitional cell carcinoma"]),
    (CancerType::Brca, &["Infiltrating duct carcinoma", "Lobular carcinoma"]),
    (CancerType::Gbmlgg, &["Glioblastoma", "Astrocytoma", "Oligodendroglioma"]),
    (CancerType::Luad, &["Adenocarcinoma", "Mucinous adenocarcinoma"]),
    (CancerType::Ucec, &["Endometrioid adenocarcinoma", "Serous cystadenocarcinoma"]),
];
const STAGES: [&str; 4] = ["Stage I", "Stage II", "Stage III", "Stage IV"];

fn sample_meta(rng: &mut ChaCha8Rng, cancer: CancerType) -> PatientMeta {
    let sex = match cancer {
        CancerType::Ucec => Sex::Female,
        CancerType::Brca if rng.random_bool(0.99) => Sex::Female,
        _ if rng.random_bool(0.5) => Sex::Female,
        _ => Sex::Male,
    };
    let race = *[Race::White, Race::White, Race::White, Race::Black, Race::Asian, Race::NotReported]
        .choose(rng)
        .expect("nonempty");
    let diagnoses = DIAGNOSES.iter().find(|(c, _)| *c == cancer).expect("all cancers listed").1;
    let treatments = [Treatment::None, Treatment::Radiation, Treatment::Pharmaceutical, Treatment::Both];
    PatientMeta {
        sex,
        age: rng.random_range(30..=85),
        race,
        cancer_type: cancer,
        primary_diagnosis: diagnoses.choose(rng).expect("nonempty").to_string(),
        stage: STAGES.choose(rng).expect("nonempty").to_string(),
        t_stage: format!("T{}", rng.random_range(1..=4)),
        n_stage: format!("N{}", rng.random_range(0..=2)),
        m_stage: format!("M{}", rng.random_range(0..=1)),
        treatments: *treatments.choose(rng).expect("nonempty"),
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Generates the cohort and its truth sidecar. Each patient draws from its
/// own ChaCha stream, so output depends only on the `CohortSpec` and its seed.
pub fn generate_cohort(spec: &CohortSpec) -> Result<SyntheticCohort> {
    spec.validate()?;
    let schema = GenomicSchema::with_sizes(spec.group_sizes)?;
    let planted = spec.planted_positions();
    let mut dir_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut direction: Vec<f64> = (0..spec.patch_dim).map(|_| normal(&mut dir_rng)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|v| *v /= norm);

    let mut patients = Vec::new();
    let mut truths = Vec::new();
    let mut serial: u64 = 0;
    for c in &spec.cancers {
        for k in 0..c.cases {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(serial + 1);
            serial += 1;
            let id = format!("{}-{:04}", c.cancer_type.code(), k + 1);
            let meta = sample_meta(&mut rng, c.cancer_type);
            let latent = normal(&mut rng);

            let mut values = Vec::with_capacity(6);
            let mut observed = [true; 6];
            let mut risk = 0.0;
            for (g, &n) in spec.group_sizes.iter().enumerate() {
                let mut z: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
                observed[g] = !(spec.missing_group_rate > 0.0 && rng.random_bool(spec.missing_group_rate));
                for (j, &pos) in planted[g].iter().enumerate() {
                    z[pos] += c.gene_shift * c.gene_signs[g][j] * latent;
                    risk += c.gene_weight * c.gene_signs[g][j] * z[pos];
                }
                values.push(z);
            }
            // keep at least one group observed
            if observed.iter().all(|o| !o) {
                observed[rng.random_range(0..6)] = true;
            }
            let mask: Vec<Vec<bool>> = (0..6).map(|g| vec![observed[g]; spec.group_sizes[g]]).collect();
            for (v, &o) in values.iter_mut().zip(&observed) {
                if !o {
                    v.iter_mut().for_each(|x| *x = 0.0);
                }
            }

            let n_patches = rng.random_range(spec.patch_count_min..=spec.patch_count_max);
            let cluster = latent > spec.cluster_threshold;
            let mut rows: Vec<Vec<f64>> = (0..n_patches)
                .map(|_| (0..spec.patch_dim).map(|_| normal(&mut rng)).collect())
                .collect();
            let mut cluster_patches = Vec::new();
            if cluster {
                let n_cluster = ((n_patches as f64 * spec.cluster_fraction).round() as usize).max(1);
                let mut idx: Vec<usize> = (0..n_patches).collect();
                idx.shuffle(&mut rng);
                cluster_patches = idx[..n_cluster].to_vec();
                cluster_patches.sort_unstable();
                for &i in &cluster_patches {
                    for (v, d) in rows[i].iter_mut().zip(&direction) {
                        *v += spec.cluster_shift * d;
                    }
                }
                risk += c.patch_weight;
            }

            let log_hazard = c.baseline_log_hazard + risk;
            let p = -(-log_hazard.exp()).exp_m1();
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let months_whole = if p >= 1.0 { 1.0 } else { (u.ln() / (-p).ln_1p()).ceil().max(1.0) };
            let event_months = months_whole - rng.random_range(0.0..1.0);
            let (survival_months, censored) = if rng.random_bool(spec.censoring_rate) {
                (event_months * rng.random_range(0.0..1.0), true)
            } else {
                (event_months, false)
            };
            let (survival_months, censored) = match spec.follow_up_months {
                Some(end) if survival_months > end => (end, true),
                _ => (survival_months, censored),
            };

            patients.push(PatientRecord {
                id: id.clone(),
                meta,
                wsi: WsiBag::new(Tensor::matrix(n_patches, spec.patch_dim, rows.concat())?)?,
                genomic: GenomicBag::new(values, mask)?,
                survival_months,
                censored,
            });
            truths.push(PatientTruth {
                id,
                cancer_type: c.cancer_type,
                latent,
                log_hazard,
                risk,
                cluster,
                cluster_patches,
                event_months,
            });
        }
    }
    let planted_genes = GenomicGroup::ALL
        .iter()
        .map(|&g| {
            let names = schema.genes(g);
            (g.abbrev().to_string(), planted[g.index()].iter().map(|&p| names[p].clone()).collect())
        })
        .collect();
    Ok(SyntheticCohort {
        patients,
        truth: Truth {
            seed: spec.seed,
            dominant_cancer: spec.dominant_cancer(),
            planted_genes,
            planted_positions: planted,
            cluster_direction: direction,
            spec: spec.clone(),
            patients: truths,
        },
    })
}

/// Writes `cohort.jsonl` and `truth.json` into `dir`.
pub fn write_synthetic(dir: &Path, cohort: &SyntheticCohort) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_cohort(&dir.join("cohort.jsonl"), &cohort.patients)?;
    let path = dir.join("truth.json");
    let json = serde_json::to_string_pretty(&cohort.truth).map_err(|e| Error::Json {
        context: "truth sidecar".into(),
        source: e,
    })?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_truth(path: &Path) -> Result<Truth> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        context: format!("{}", path.display()),
        source: e,
    })
}

/// Stratified k-fold partition: the validation indices of each fold.
///
/// Each cancer's patients are shuffled with the seed and dealt round-robin,
/// so every fold holds `⌊n_c/k⌋` or `⌈n_c/k⌉` patients of cancer `c`.
pub fn kfold_split(cancers: &[CancerType], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    let mut by_cancer: BTreeMap<CancerType, Vec<usize>> = BTreeMap::new();
    for (i, &c) in cancers.iter().enumerate() {
        by_cancer.entry(c).or_default().push(i);
    }
    let mut folds = vec![Vec::new(); k];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offset = 0;
    for (c, mut idx) in by_cancer {
        if idx.len() < k {
            return Err(Error::invalid(format!("{c} has {} cases, fewer than {k} folds", idx.len())));
        }
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            folds[(j + offset) % k].push(i);
        }
        offset += 1;
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}
