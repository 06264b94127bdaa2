//! Per-patient data bags: the WSI patch bag, the six-group genomic bag and
//! the four-sentence text bag, plus survival labels and time binning.

mod bins;
mod cohort;
mod genomic;
mod otsu;
mod text;

pub use bins::{assign_time_bin, compute_bin_edges};
pub use cohort::{read_cohort, read_patch_matrix, write_cohort, write_patch_matrix, PatchSource, RawPatient};
pub use genomic::{build_genomic_bag, GenomicBag, GenomicGroup, GenomicSchema, TCGA_GROUP_SIZES};
pub use otsu::otsu_threshold;
pub use text::{render_text_bag, TextBag, TextKind};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Race {
    #[serde(rename = "White")]
    White,
    #[serde(rename = "Black or African American")]
    Black,
    #[serde(rename = "Asian")]
    Asian,
    #[serde(rename = "American Indian or Alaska Native")]
    AmericanIndian,
    #[serde(rename = "Native Hawaiian or Other Pacific Islander")]
    PacificIslander,
    #[serde(rename = "Not Reported")]
    NotReported,
}

impl Race {
    pub const ALL: [Race; 6] = [
        Race::White,
        Race::Black,
        Race::Asian,
        Race::AmericanIndian,
        Race::PacificIslander,
        Race::NotReported,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Race::White => "White",
            Race::Black => "Black or African American",
            Race::Asian => "Asian",
            Race::AmericanIndian => "American Indian or Alaska Native",
            Race::PacificIslander => "Native Hawaiian or Other Pacific Islander",
            Race::NotReported => "Not Reported",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CancerType {
    #[serde(rename = "BLCA")]
    Blca,
    #[serde(rename = "BRCA")]
    Brca,
    #[serde(rename = "GBMLGG")]
    Gbmlgg,
    #[serde(rename = "LUAD")]
    Luad,
    #[serde(rename = "UCEC")]
    Ucec,
}

impl CancerType {
    pub const ALL: [CancerType; 5] = [
        CancerType::Blca,
        CancerType::Brca,
        CancerType::Gbmlgg,
        CancerType::Luad,
        CancerType::Ucec,
    ];

    pub fn code(self) -> &'static str {
        match self {
            CancerType::Blca => "BLCA",
            CancerType::Brca => "BRCA",
            CancerType::Gbmlgg => "GBMLGG",
            CancerType::Luad => "LUAD",
            CancerType::Ucec => "UCEC",
        }
    }

    pub fn full_name(self) -> &'static str {
        match self {
            CancerType::Blca => "Bladder Urothelial Carcinoma",
            CancerType::Brca => "Breast Invasive Carcinoma",
            CancerType::Gbmlgg => "Glioblastoma Multiforme and Brain Lower Grade Glioma",
            CancerType::Luad => "Lung Adenocarcinoma",
            CancerType::Ucec => "Uterine Corpus Endometrial Carcinoma",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.code().eq_ignore_ascii_case(code))
    }
}

impl std::fmt::Display for CancerType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Treatment {
    None,
    Radiation,
    Pharmaceutical,
    Both,
}

/// Clinical metadata feeding the text templates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientMeta {
    pub sex: Sex,
    pub age: u32,
    pub race: Race,
    pub cancer_type: CancerType,
    pub primary_diagnosis: String,
    pub stage: String,
    pub t_stage: String,
    pub n_stage: String,
    pub m_stage: String,
    pub treatments: Treatment,
}

/// Patch features of one slide, one row per patch.
#[derive(Clone, Debug, PartialEq)]
pub struct WsiBag {
    features: Tensor,
}

impl WsiBag {
    pub fn new(features: Tensor) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::invalid("patch features must be a matrix"));
        }
        Ok(WsiBag { features })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("WSI bag needs at least one patch"));
        }
        Self::new(Tensor::from_rows(rows)?)
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn patch_count(&self) -> usize {
        self.features.dims2().0
    }

    pub fn patch_dim(&self) -> usize {
        self.features.dims2().1
    }
}

/// Survival outcome. `censored == true` means the event was not observed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalLabel {
    pub survival_months: f64,
    pub censored: bool,
    pub time_bin: usize,
}

impl SurvivalLabel {
    pub fn new(survival_months: f64, censored: bool, edges: &[f64]) -> Result<Self> {
        if !(survival_months >= 0.0) {
            return Err(Error::invalid(format!("survival months {survival_months} must be >= 0")));
        }
        Ok(SurvivalLabel {
            survival_months,
            censored,
            time_bin: assign_time_bin(survival_months, edges),
        })
    }
}

/// One patient's three bags and outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub meta: PatientMeta,
    pub wsi: WsiBag,
    pub genomic: GenomicBag,
    pub survival_months: f64,
    pub censored: bool,
}

impl PatientRecord {
    pub fn cancer_type(&self) -> CancerType {
        self.meta.cancer_type
    }

    pub fn text_bag(&self) -> Result<TextBag> {
        render_text_bag(&self.meta)
    }

    pub fn label(&self, edges: &[f64]) -> Result<SurvivalLabel> {
        SurvivalLabel::new(self.survival_months, self.censored, edges)
    }
}
