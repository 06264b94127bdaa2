use serde::{Deserialize, Serialize};

use super::{PatientMeta, Sex, Treatment};
use crate::error::{Error, Result};

/// Slot of a sentence inside the text bag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TextKind {
    Demographic = 0,
    Cancer = 1,
    Diagnosis = 2,
    Treatment = 3,
}

/// The four rendered sentences, in demographic, cancer, diagnosis,
/// treatment order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextBag {
    sentences: [String; 4],
}

impl TextBag {
    pub fn sentences(&self) -> &[String; 4] {
        &self.sentences
    }

    pub fn get(&self, kind: TextKind) -> &str {
        &self.sentences[kind as usize]
    }
}

fn require<'a>(field: &'static str, value: &'a str) -> Result<&'a str> {
    let v = value.trim();
    if v.is_empty() {
        Err(Error::Template { field })
    } else {
        Ok(v)
    }
}

fn treatment_sentence(t: Treatment) -> &'static str {
    match t {
        Treatment::None => "No treatment is applied.",
        Treatment::Radiation => "Radiation is applied.",
        Treatment::Pharmaceutical => "Pharmaceutical therapy is applied.",
        Treatment::Both => "Radiation and pharmaceutical therapy is applied.",
    }
}

/// Instantiates the four clinical text templates for one patient.
pub fn render_text_bag(meta: &PatientMeta) -> Result<TextBag> {
    if meta.age == 0 {
        return Err(Error::Template { field: "age" });
    }
    let (pronoun, noun) = match meta.sex {
        Sex::Male => ("He", "Man"),
        Sex::Female => ("She", "Woman"),
    };
    let demographic = format!(
        "{pronoun} is a {}-year-old {} race {noun}.",
        meta.age,
        meta.race.label()
    );
    let cancer = format!("This is a patient who has {}.", meta.cancer_type.full_name());
    let diagnosis = format!(
        "{pronoun} has {} at {}. {}, {}, {}.",
        require("primary_diagnosis", &meta.primary_diagnosis)?,
        require("stage", &meta.stage)?,
        require("t_stage", &meta.t_stage)?,
        require("n_stage", &meta.n_stage)?,
        require("m_stage", &meta.m_stage)?,
    );
    Ok(TextBag {
        sentences: [
            demographic,
            cancer,
            diagnosis,
            treatment_sentence(meta.treatments).to_string(),
        ],
    })
}
