//! Joint training, evaluation and k-fold cross-validation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bags::{compute_bin_edges, CancerType, PatientRecord};
use crate::error::{Error, Result};
use crate::model::{Model, Probe, TrainConfig};
use crate::stats::{concordance_index, logrank_test, mean_defined, median_risk_split, FoldMetrics, Metrics, Observation};
use crate::synth::kfold_split;
use crate::tensor::{GradAccumulator, Graph, OptimizerState, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_cindex: Option<f64>,
}

/// Loss and per-parameter gradients of one patient.
pub fn patient_gradients(model: &Model, patient: &PatientRecord) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let f = model.forward(&mut g, patient, Probe::default())?;
    let loss = model.loss(&mut g, &f, patient)?;
    let value = g.item(loss);
    if !value.is_finite() {
        let node = g.first_non_finite().map_or("none".to_string(), |n| format!("graph node {n}"));
        return Err(Error::NonFinite(format!(
            "loss {value} for patient {}; first non-finite tensor: {node}",
            patient.id
        )));
    }
    let grads = g.backward(loss)?;
    Ok((value, g.param_grads(&grads, &model.store)))
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Trains in place for `config.epochs` epochs with batch size 1, averaging
/// gradients over `accumulation_steps` patients per AdamW step. The last
/// partial group of an epoch is also applied.
pub fn train(
    model: &mut Model,
    train_set: &[PatientRecord],
    val_set: &[PatientRecord],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    model.check_finite()?;
    let cfg = model.config.clone();
    let mut opt = OptimizerState::new(cfg.adamw(), &model.store);
    let mut acc = GradAccumulator::new(&model.store);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for (k, &i) in epoch_order(cfg.seed, epoch, train_set.len()).iter().enumerate() {
            let (loss, grads) = patient_gradients(model, &train_set[i])?;
            total += loss;
            acc.add(&grads);
            if acc.count() == cfg.accumulation_steps || k + 1 == train_set.len() {
                opt.step(&mut model.store, &acc.take_mean())?;
                model.check_finite()?;
            }
        }
        let val_cindex = if val_set.is_empty() {
            None
        } else {
            evaluate(model, val_set, 0)?.0.overall_mean_cindex
        };
        let log = EpochLog {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_cindex,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// Out-of-sample prediction of one patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientPrediction {
    pub id: String,
    pub cancer_type: CancerType,
    pub fold: usize,
    pub risk: f64,
    pub survival_months: f64,
    pub censored: bool,
    pub gate_weights: Vec<f64>,
}

/// Median split and logrank test of one set of predictions.
pub fn split_logrank(preds: &[&PatientPrediction]) -> Result<f64> {
    let risks: Vec<f64> = preds.iter().map(|p| p.risk).collect();
    let (lo, hi) = median_risk_split(&risks)?;
    let obs = |idx: &[usize]| -> Vec<Observation> {
        idx.iter()
            .map(|&i| Observation {
                time: preds[i].survival_months,
                event: !preds[i].censored,
            })
            .collect()
    };
    Ok(logrank_test(&obs(&lo), &obs(&hi))?.p_value)
}

/// Per-cancer C-index and median-split logrank p of one validation set.
/// Cancers without comparable pairs (or events) report `None` and a warning.
/// Patients are predicted on all available cores.
pub fn evaluate(model: &Model, patients: &[PatientRecord], fold: usize) -> Result<(FoldMetrics, Vec<PatientPrediction>)> {
    let predict = |p: &PatientRecord| -> Result<PatientPrediction> {
        let pr = model.predict(p)?;
        Ok(PatientPrediction {
            id: p.id.clone(),
            cancer_type: p.cancer_type(),
            fold,
            risk: pr.risk,
            survival_months: p.survival_months,
            censored: p.censored,
            gate_weights: pr.gate_weights,
        })
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let chunk = patients.len().div_ceil(threads).max(1);
    let parts: Vec<Result<Vec<PatientPrediction>>> = std::thread::scope(|s| {
        let handles: Vec<_> = patients
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(predict).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation thread panicked")).collect()
    });
    let mut preds = Vec::with_capacity(patients.len());
    for part in parts {
        preds.extend(part?);
    }
    Ok((metrics_of(&preds, fold), preds))
}

fn metrics_of(preds: &[PatientPrediction], fold: usize) -> FoldMetrics {
    let mut per_cancer_cindex = BTreeMap::new();
    let mut logrank_p = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut cancers: Vec<CancerType> = preds.iter().map(|p| p.cancer_type).collect();
    cancers.sort();
    cancers.dedup();
    for c in cancers {
        let sub: Vec<&PatientPrediction> = preds.iter().filter(|p| p.cancer_type == c).collect();
        let risks: Vec<f64> = sub.iter().map(|p| p.risk).collect();
        let times: Vec<f64> = sub.iter().map(|p| p.survival_months).collect();
        let cens: Vec<bool> = sub.iter().map(|p| p.censored).collect();
        let ci = match concordance_index(&risks, &times, &cens) {
            Ok(v) => Some(v),
            Err(e) => {
                warnings.push(format!("{c}: C-index undefined ({e})"));
                None
            }
        };
        let p = match split_logrank(&sub) {
            Ok(v) => Some(v),
            Err(e) => {
                warnings.push(format!("{c}: logrank undefined ({e})"));
                None
            }
        };
        per_cancer_cindex.insert(c.code().to_string(), ci);
        logrank_p.insert(c.code().to_string(), p);
    }
    FoldMetrics {
        fold,
        n_validation: preds.len(),
        overall_mean_cindex: mean_defined(per_cancer_cindex.values()),
        per_cancer_cindex,
        logrank_p,
        warnings,
    }
}

/// Everything produced for one fold.
#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub fold: usize,
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub metrics: FoldMetrics,
    pub predictions: Vec<PatientPrediction>,
}

#[derive(Clone, Debug)]
pub struct CvOutcome {
    pub folds: Vec<FoldOutcome>,
    pub metrics: Metrics,
}

/// Cancer types present in a cohort, in canonical order.
pub fn cohort_cancers(cohort: &[PatientRecord]) -> Vec<CancerType> {
    let mut c: Vec<CancerType> = cohort.iter().map(PatientRecord::cancer_type).collect();
    c.sort();
    c.dedup();
    c
}

/// Builds an untrained model whose bin edges come from `train_set`.
pub fn init_model(config: &TrainConfig, train_set: &[PatientRecord], cancers: Vec<CancerType>) -> Result<Model> {
    let d_patch = train_set
        .first()
        .ok_or_else(|| Error::invalid("training set is empty"))?
        .wsi
        .patch_dim();
    let times: Vec<f64> = train_set.iter().filter(|p| !p.censored).map(|p| p.survival_months).collect();
    let edges = compute_bin_edges(&times, config.n_bins)?;
    Model::new(config.clone(), d_patch, cancers, edges)
}

/// Trains and evaluates fold `fold` of the stratified split.
pub fn run_fold(
    cohort: &[PatientRecord],
    config: &TrainConfig,
    validation: &[usize],
    fold: usize,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<FoldOutcome> {
    let mut is_val = vec![false; cohort.len()];
    validation.iter().for_each(|&i| is_val[i] = true);
    let train_set: Vec<PatientRecord> = cohort.iter().zip(&is_val).filter(|(_, v)| !**v).map(|(p, _)| p.clone()).collect();
    let val_set: Vec<PatientRecord> = validation.iter().map(|&i| cohort[i].clone()).collect();
    let mut model = init_model(config, &train_set, cohort_cancers(cohort))?;
    let log = train(&mut model, &train_set, &val_set, on_epoch)?;
    let (metrics, predictions) = evaluate(&model, &val_set, fold)?;
    Ok(FoldOutcome {
        fold,
        model,
        log,
        metrics,
        predictions,
    })
}

/// Pools fold results: per-cancer C-index and overall are fold means; the
/// logrank p of a cancer tests the union of the per-fold median splits.
pub fn pool_metrics(folds: &[FoldOutcome]) -> Metrics {
    let mut per_cancer_cindex = BTreeMap::new();
    let mut logrank_p = BTreeMap::new();
    let mut cancers: Vec<CancerType> = folds.iter().flat_map(|f| f.predictions.iter().map(|p| p.cancer_type)).collect();
    cancers.sort();
    cancers.dedup();
    for c in cancers {
        let key = c.code().to_string();
        per_cancer_cindex.insert(key.clone(), mean_defined(folds.iter().filter_map(|f| f.metrics.per_cancer_cindex.get(&key))));
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for f in folds {
            let sub: Vec<&PatientPrediction> = f.predictions.iter().filter(|p| p.cancer_type == c).collect();
            let risks: Vec<f64> = sub.iter().map(|p| p.risk).collect();
            if let Ok((l, h)) = median_risk_split(&risks) {
                let obs = |i: usize| Observation {
                    time: sub[i].survival_months,
                    event: !sub[i].censored,
                };
                lo.extend(l.into_iter().map(obs));
                hi.extend(h.into_iter().map(obs));
            }
        }
        logrank_p.insert(key, logrank_test(&lo, &hi).ok().map(|r| r.p_value));
    }
    Metrics {
        per_cancer_cindex,
        overall_mean_cindex: mean_defined(folds.iter().map(|f| &f.metrics.overall_mean_cindex)),
        logrank_p,
        fold_details: folds.iter().map(|f| f.metrics.clone()).collect(),
    }
}

/// Stratified k-fold cross-validation. Folds are independent, so up to
/// `parallel` of them run on separate threads with identical results.
pub fn cross_validate(cohort: &[PatientRecord], config: &TrainConfig, parallel: usize) -> Result<CvOutcome> {
    config.validate()?;
    let cancers: Vec<CancerType> = cohort.iter().map(PatientRecord::cancer_type).collect();
    let splits = kfold_split(&cancers, config.folds, config.seed)?;
    let fold_config = |k: usize| TrainConfig {
        seed: config.seed.wrapping_add(k as u64),
        ..config.clone()
    };
    let mut folds: Vec<FoldOutcome> = Vec::with_capacity(splits.len());
    if parallel <= 1 {
        for (k, val) in splits.iter().enumerate() {
            folds.push(run_fold(cohort, &fold_config(k), val, k, |_| {})?);
        }
    } else {
        for chunk in splits.iter().enumerate().collect::<Vec<_>>().chunks(parallel) {
            let results: Vec<Result<FoldOutcome>> = std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&(k, val)| {
                        let cfg = fold_config(k);
                        s.spawn(move || run_fold(cohort, &cfg, val, k, |_| {}))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(Error::invalid("fold thread panicked"))))
                    .collect()
            });
            for r in results {
                folds.push(r?);
            }
        }
    }
    let metrics = pool_metrics(&folds);
    Ok(CvOutcome { folds, metrics })
}
