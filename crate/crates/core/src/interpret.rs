//! Gradient-times-activation attributions of the risk score to gene and
//! patch tokens, and cohort-level gene rankings.
//!
//! For a token `e` the score is `relu(Σ_k ∂risk/∂e_k · e_k)`, where `risk` is
//! the negated sum of the predicted survival curve. Gene tokens are the
//! post-lift embeddings of the genomic encoder; patch tokens are the projected
//! patch features.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bags::{CancerType, GenomicGroup, GenomicSchema, PatientRecord};
use crate::error::{Error, Result};
use crate::model::{Model, Probe};
use crate::tensor::{Gradients, Graph, Var};

/// Attributions of one patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamReport {
    pub patient_id: String,
    pub cancer_type: CancerType,
    pub risk: f64,
    /// Per-gene scores keyed by group abbreviation, in schema order.
    pub genes: BTreeMap<String, Vec<f64>>,
    pub patches: Vec<f64>,
}

/// One row of the flat CAM export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamRecord {
    pub patient_id: String,
    pub modality: Modality,
    pub group: Option<String>,
    pub index: usize,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Gene,
    Patch,
}

impl CamReport {
    pub fn gene_scores(&self, group: GenomicGroup) -> &[f64] {
        self.genes.get(group.abbrev()).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Flattens the report to one record per scored position.
    pub fn records(&self) -> Vec<CamRecord> {
        let mut out = Vec::new();
        for g in GenomicGroup::ALL {
            for (index, &score) in self.gene_scores(g).iter().enumerate() {
                out.push(CamRecord {
                    patient_id: self.patient_id.clone(),
                    modality: Modality::Gene,
                    group: Some(g.abbrev().to_string()),
                    index,
                    score,
                });
            }
        }
        out.extend(self.patches.iter().enumerate().map(|(index, &score)| CamRecord {
            patient_id: self.patient_id.clone(),
            modality: Modality::Patch,
            group: None,
            index,
            score,
        }));
        out
    }
}

fn token_scores(g: &Graph, grads: &Gradients, token: Var) -> Vec<f64> {
    let (rows, cols) = g.shape(token);
    let value = g.value(token);
    let zero = vec![0.0; rows * cols];
    let grad = grads.wrt(token).unwrap_or(&zero);
    (0..rows)
        .map(|r| {
            let s: f64 = (r * cols..(r + 1) * cols).map(|i| grad[i] * value[i]).sum();
            s.max(0.0)
        })
        .collect()
}

/// Gene and patch attributions from a single forward and backward pass.
pub fn explain(model: &Model, patient: &PatientRecord) -> Result<CamReport> {
    model.check_finite()?;
    let mut g = Graph::new();
    let f = model.forward(&mut g, patient, Probe::default())?;
    let risk = model.risk(&mut g, &f);
    let risk_value = g.item(risk);
    if !risk_value.is_finite() {
        return Err(Error::NonFinite(format!("risk of patient {}", patient.id)));
    }
    let grads = g.backward(risk)?;
    let mut genes = BTreeMap::new();
    for grp in GenomicGroup::ALL {
        let mask = patient.genomic.mask(grp);
        let scores = match f.genomic.tokens[grp.index()] {
            Some(t) => token_scores(&g, &grads, t)
                .into_iter()
                .zip(mask)
                .map(|(s, &m)| if m { s } else { 0.0 })
                .collect(),
            None => vec![0.0; mask.len()],
        };
        genes.insert(grp.abbrev().to_string(), scores);
    }
    let patches = token_scores(&g, &grads, f.patches);
    Ok(CamReport {
        patient_id: patient.id.clone(),
        cancer_type: patient.cancer_type(),
        risk: risk_value,
        genes,
        patches,
    })
}

/// Per-gene scores of the six groups.
pub fn gene_cam(model: &Model, patient: &PatientRecord) -> Result<[Vec<f64>; 6]> {
    let r = explain(model, patient)?;
    Ok(GenomicGroup::ALL.map(|g| r.gene_scores(g).to_vec()))
}

pub fn patch_cam(model: &Model, patient: &PatientRecord) -> Result<Vec<f64>> {
    Ok(explain(model, patient)?.patches)
}

/// [`explain`] over many patients, split across up to `threads` workers.
/// The output order follows `patients`.
pub fn explain_cohort(model: &Model, patients: &[PatientRecord], threads: usize) -> Result<Vec<CamReport>> {
    let threads = threads.max(1).min(patients.len().max(1));
    if threads == 1 {
        return patients.iter().map(|p| explain(model, p)).collect();
    }
    let chunk = patients.len().div_ceil(threads);
    let parts: Vec<Result<Vec<CamReport>>> = std::thread::scope(|s| {
        let handles: Vec<_> = patients
            .chunks(chunk)
            .map(|ps| s.spawn(move || ps.iter().map(|p| explain(model, p)).collect::<Result<Vec<_>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::invalid("attribution worker panicked"))))
            .collect()
    });
    let mut out = Vec::with_capacity(patients.len());
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedGene {
    pub gene: String,
    pub position: usize,
    pub mean_score: f64,
}

/// Highest mean-attribution genes of one cancer cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopGenes {
    pub cancer_type: CancerType,
    pub patients: usize,
    pub k: usize,
    /// Ranked genes keyed by group abbreviation.
    pub groups: BTreeMap<String, Vec<RankedGene>>,
}

pub const DEFAULT_TOP_K: usize = 3;

/// Averages gene scores over `reports` and keeps the `k` best genes of each
/// group. Equal means rank by gene name.
pub fn top_genes(reports: &[CamReport], schema: &GenomicSchema, k: usize) -> Result<TopGenes> {
    let first = reports
        .first()
        .ok_or_else(|| Error::invalid("top genes need at least one patient"))?;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if let Some(r) = reports.iter().find(|r| r.cancer_type != first.cancer_type) {
        return Err(Error::invalid(format!(
            "top genes expect one cancer type, got {} and {}",
            first.cancer_type, r.cancer_type
        )));
    }
    let mut groups = BTreeMap::new();
    for grp in GenomicGroup::ALL {
        let names = schema.genes(grp);
        let mut sums = vec![0.0; names.len()];
        for r in reports {
            let s = r.gene_scores(grp);
            if s.len() != names.len() {
                return Err(Error::Shape {
                    op: "top_genes",
                    lhs: vec![s.len()],
                    rhs: vec![names.len()],
                });
            }
            sums.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        }
        let n = reports.len() as f64;
        let mut ranked: Vec<RankedGene> = names
            .iter()
            .zip(sums)
            .enumerate()
            .map(|(position, (gene, s))| RankedGene {
                gene: gene.clone(),
                position,
                mean_score: s / n,
            })
            .collect();
        ranked.sort_by(|a, b| b.mean_score.total_cmp(&a.mean_score).then_with(|| a.gene.cmp(&b.gene)));
        ranked.truncate(k);
        groups.insert(grp.abbrev().to_string(), ranked);
    }
    Ok(TopGenes {
        cancer_type: first.cancer_type,
        patients: reports.len(),
        k,
        groups,
    })
}
