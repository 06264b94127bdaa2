use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Functional gene groups, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GenomicGroup {
    #[serde(rename = "TSG")]
    TumorSuppressor,
    #[serde(rename = "ONC")]
    Oncogene,
    #[serde(rename = "PK")]
    ProteinKinase,
    #[serde(rename = "CDM")]
    DifferentiationMarker,
    #[serde(rename = "TF")]
    TranscriptionFactor,
    #[serde(rename = "CGF")]
    CytokineGrowthFactor,
}

/// Gene counts per group in the reference pan-cancer schema.
pub const TCGA_GROUP_SIZES: [usize; 6] = [82, 328, 513, 443, 1536, 452];

impl GenomicGroup {
    pub const ALL: [GenomicGroup; 6] = [
        GenomicGroup::TumorSuppressor,
        GenomicGroup::Oncogene,
        GenomicGroup::ProteinKinase,
        GenomicGroup::DifferentiationMarker,
        GenomicGroup::TranscriptionFactor,
        GenomicGroup::CytokineGrowthFactor,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn abbrev(self) -> &'static str {
        match self {
            GenomicGroup::TumorSuppressor => "TSG",
            GenomicGroup::Oncogene => "ONC",
            GenomicGroup::ProteinKinase => "PK",
            GenomicGroup::DifferentiationMarker => "CDM",
            GenomicGroup::TranscriptionFactor => "TF",
            GenomicGroup::CytokineGrowthFactor => "CGF",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GenomicGroup::TumorSuppressor => "tumor suppressor genes",
            GenomicGroup::Oncogene => "oncogenes",
            GenomicGroup::ProteinKinase => "protein kinases",
            GenomicGroup::DifferentiationMarker => "cell differentiation markers",
            GenomicGroup::TranscriptionFactor => "transcription factors",
            GenomicGroup::CytokineGrowthFactor => "cytokines and growth factors",
        }
    }

    pub fn from_abbrev(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.abbrev().eq_ignore_ascii_case(s))
    }
}

/// Ordered gene names for each of the six groups.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenomicSchema {
    groups: BTreeMap<GenomicGroup, Vec<String>>,
}

impl GenomicSchema {
    pub fn new(groups: BTreeMap<GenomicGroup, Vec<String>>) -> Result<Self> {
        for g in GenomicGroup::ALL {
            let genes = groups
                .get(&g)
                .ok_or_else(|| Error::Schema(format!("group {} missing", g.abbrev())))?;
            if genes.is_empty() {
                return Err(Error::Schema(format!("group {} has no genes", g.abbrev())));
            }
            let mut seen = std::collections::HashSet::new();
            if let Some(dup) = genes.iter().find(|n| !seen.insert(n.as_str())) {
                return Err(Error::Schema(format!("duplicate gene {dup} in {}", g.abbrev())));
            }
        }
        Ok(GenomicSchema { groups })
    }

    /// Placeholder gene names (`TSG0001`, ...) with the given group sizes.
    pub fn with_sizes(sizes: [usize; 6]) -> Result<Self> {
        let groups = GenomicGroup::ALL
            .into_iter()
            .zip(sizes)
            .map(|(g, n)| (g, (1..=n).map(|i| format!("{}{i:04}", g.abbrev())).collect()))
            .collect();
        Self::new(groups)
    }

    /// Reference schema sized like the pan-cancer gene lists.
    pub fn tcga_default() -> Self {
        Self::with_sizes(TCGA_GROUP_SIZES).expect("static sizes are valid")
    }

    pub fn genes(&self, group: GenomicGroup) -> &[String] {
        &self.groups[&group]
    }

    pub fn sizes(&self) -> [usize; 6] {
        GenomicGroup::ALL.map(|g| self.groups[&g].len())
    }

    pub fn position(&self, group: GenomicGroup, gene: &str) -> Option<usize> {
        self.groups[&group].iter().position(|n| n == gene)
    }
}

/// Zero-padded z-scores of the six groups with a per-position observation mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenomicBag {
    values: Vec<Vec<f64>>,
    mask: Vec<Vec<bool>>,
}

impl GenomicBag {
    pub fn new(values: Vec<Vec<f64>>, mask: Vec<Vec<bool>>) -> Result<Self> {
        if values.len() != 6 || mask.len() != 6 {
            return Err(Error::Schema(format!(
                "expected 6 genomic groups, got {} values / {} masks",
                values.len(),
                mask.len()
            )));
        }
        for (g, (v, m)) in GenomicGroup::ALL.iter().zip(values.iter().zip(&mask)) {
            if v.len() != m.len() || v.is_empty() {
                return Err(Error::Schema(format!(
                    "group {}: {} values vs {} mask entries",
                    g.abbrev(),
                    v.len(),
                    m.len()
                )));
            }
            if v.iter().zip(m).any(|(x, &keep)| !x.is_finite() || (!keep && *x != 0.0)) {
                return Err(Error::Schema(format!(
                    "group {}: padded positions must hold 0 and values must be finite",
                    g.abbrev()
                )));
            }
        }
        Ok(GenomicBag { values, mask })
    }

    pub fn values(&self, group: GenomicGroup) -> &[f64] {
        &self.values[group.index()]
    }

    pub fn mask(&self, group: GenomicGroup) -> &[bool] {
        &self.mask[group.index()]
    }

    pub fn is_present(&self, group: GenomicGroup) -> bool {
        self.mask(group).iter().any(|&m| m)
    }

    pub fn sizes(&self) -> [usize; 6] {
        GenomicGroup::ALL.map(|g| self.values[g.index()].len())
    }

    pub fn fits(&self, schema: &GenomicSchema) -> bool {
        self.sizes() == schema.sizes()
    }
}

/// Places observed values at their schema positions; everything else is
/// zero with mask 0.
pub fn build_genomic_bag(
    observed: &BTreeMap<GenomicGroup, BTreeMap<String, f64>>,
    schema: &GenomicSchema,
) -> Result<GenomicBag> {
    let mut values = Vec::with_capacity(6);
    let mut mask = Vec::with_capacity(6);
    for g in GenomicGroup::ALL {
        let n = schema.genes(g).len();
        let mut v = vec![0.0; n];
        let mut m = vec![false; n];
        if let Some(obs) = observed.get(&g) {
            for (gene, &z) in obs {
                let pos = schema.position(g, gene).ok_or_else(|| {
                    Error::Schema(format!("unknown gene `{gene}` in group {}", g.abbrev()))
                })?;
                if !z.is_finite() {
                    return Err(Error::Schema(format!("non-finite z-score for `{gene}`")));
                }
                v[pos] = z;
                m[pos] = true;
            }
        }
        values.push(v);
        mask.push(m);
    }
    GenomicBag::new(values, mask)
}
