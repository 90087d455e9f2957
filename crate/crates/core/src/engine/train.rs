//! Prefix training: clamped binary cross-entropy on the aggregated user
//! score, minimized over the per-user embedding rows and the shared
//! reparametrizing MLP only — backend parameters stay frozen.
//!
//! Optimization is mini-batch (users) first-order with adaptive
//! per-parameter step sizes, a global gradient-norm clip, and early stopping
//! on validation F1. Validation users are scored through the unseen-user
//! path, so the early-stopping signal measures generalization, not row
//! memorization. Reduction orders are fixed, making training bitwise
//! deterministic for a given seed regardless of worker count.

use ndarray::{Array1, Array2, Dimension};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::UserRecord;
use crate::error::{Error, Result};
use crate::ontology::Verbalizer;
use crate::prefix::{MlpGrads, PrefixBlock, PrefixStore};
use crate::prompt::{ComposedPrompt, EnsembledPrompt};
use crate::util::derive_rng;

use super::{aggregate, calibrate_threshold, f1_at, Engine, Threshold};

/// Numerical clamp for the cross-entropy probability argument.
const CLAMP: f64 = 1e-6;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One epoch's telemetry.
#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: f64,
    pub tau: f64,
}

/// Full training telemetry.
#[derive(Debug, Clone, Serialize)]
pub struct TrainLog {
    /// Mean train loss before any update.
    pub initial_loss: f64,
    /// Mean train loss of the returned (final) parameters.
    pub final_loss: f64,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub stopped_early: bool,
}

fn bce(prob: f64, label: f64) -> f64 {
    let p = prob.clamp(CLAMP, 1.0 - CLAMP);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

fn bce_grad(prob: f64, label: f64) -> f64 {
    let p = prob.clamp(CLAMP, 1.0 - CLAMP);
    (p - label) / (p * (1.0 - p))
}

/// One Adam update; mutates the moment estimates and returns the (negative)
/// parameter delta to add.
fn adam_update<D: Dimension>(
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    t: u64,
    lr: f64,
) -> ndarray::Array<f64, D> {
    *m = &*m * BETA1 + &(grad * (1.0 - BETA1));
    *v = &*v * BETA2 + &(grad.mapv(|g| g * g) * (1.0 - BETA2));
    let bc1 = 1.0 - BETA1.powi(t as i32);
    let bc2 = 1.0 - BETA2.powi(t as i32);
    let m_hat = m.mapv(|x| x / bc1);
    let v_hat = v.mapv(|x| (x / bc2).sqrt() + ADAM_EPS);
    -(m_hat / v_hat) * lr
}

struct RowAdam {
    m: Array2<f64>,
    v: Array2<f64>,
    /// Per-row step counters: a row's bias correction advances only when
    /// that row is actually updated, so updating one user never perturbs
    /// another user's optimizer state.
    t: Vec<u64>,
}

impl RowAdam {
    fn new(rows: usize, width: usize) -> Self {
        RowAdam {
            m: Array2::zeros((rows, width)),
            v: Array2::zeros((rows, width)),
            t: vec![0; rows],
        }
    }

    fn step(&mut self, idx: usize, grad: &Array1<f64>, lr: f64) -> Array1<f64> {
        self.t[idx] += 1;
        let mut m_row = self.m.row(idx).to_owned();
        let mut v_row = self.v.row(idx).to_owned();
        let delta = adam_update(&mut m_row, &mut v_row, grad, self.t[idx], lr);
        self.m.row_mut(idx).assign(&m_row);
        self.v.row_mut(idx).assign(&v_row);
        delta
    }
}

struct MlpAdam {
    m: MlpGrads,
    v: MlpGrads,
    t: u64,
}

impl MlpAdam {
    fn new(template: &MlpGrads) -> Self {
        MlpAdam {
            m: template.clone(),
            v: template.clone(),
            t: 0,
        }
    }

    fn step(&mut self, grad: &MlpGrads, lr: f64) -> MlpGrads {
        self.t += 1;
        MlpGrads {
            w1: adam_update(&mut self.m.w1, &mut self.v.w1, &grad.w1, self.t, lr),
            b1: adam_update(&mut self.m.b1, &mut self.v.b1, &grad.b1, self.t, lr),
            w2: adam_update(&mut self.m.w2, &mut self.v.w2, &grad.w2, self.t, lr),
            b2: adam_update(&mut self.m.b2, &mut self.v.b2, &grad.b2, self.t, lr),
        }
    }
}

struct UserTrainData {
    user_id: String,
    row_idx: usize,
    label: f64,
    prompts: Vec<ComposedPrompt>,
}

/// Score one training user through their own row and return
/// (loss, row gradient, MLP gradient).
fn user_loss_and_grads(
    engine: &Engine<'_>,
    store: &PrefixStore,
    data: &UserTrainData,
    verbalizers: &[Verbalizer],
) -> Result<(f64, Array1<f64>, MlpGrads)> {
    let row = store.row(data.row_idx).to_owned();
    let (states, cache) = store.forward_row(row.view());
    let prompts: Vec<EnsembledPrompt> = data
        .prompts
        .iter()
        .map(|c| EnsembledPrompt {
            composed: c.clone(),
            prefix: Some(PrefixBlock {
                states: states.clone(),
                owner: data.user_id.clone(),
            }),
        })
        .collect();

    let backend = engine.backend;
    let per_window = prompts
        .iter()
        .map(|p| backend.score(p, verbalizers))
        .collect::<Result<Vec<_>>>()?;
    let m = per_window.len() as f64;
    let lambda = engine.lambda();
    let score = aggregate(&per_window, lambda)?;

    let loss = bce(score, data.label);
    let upstream = bce_grad(score, data.label) / (lambda * m);

    let mut d_states = Array2::<f64>::zeros(states.dim());
    for prompt in &prompts {
        d_states += &backend.grad_prefix(prompt, verbalizers, upstream)?;
    }
    let (d_row, d_mlp) = store.backward_row(row.view(), &cache, &d_states);
    Ok((loss, d_row, d_mlp))
}

/// Mean training loss under the current store state (no updates).
fn mean_train_loss(
    engine: &Engine<'_>,
    store: &PrefixStore,
    data: &[UserTrainData],
    verbalizers: &[Verbalizer],
) -> Result<f64> {
    let losses = data
        .par_iter()
        .map(|d| {
            let block = store.user_prefix(&d.user_id)?;
            let per_window = d
                .prompts
                .iter()
                .map(|c| {
                    engine.backend.score(
                        &EnsembledPrompt {
                            composed: c.clone(),
                            prefix: Some(block.clone()),
                        },
                        verbalizers,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(bce(aggregate(&per_window, engine.lambda())?, d.label))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Validation F1 through the unseen-user path, at the configured or
/// per-epoch calibrated threshold. Returns (f1, tau).
fn validation_f1(
    engine: &Engine<'_>,
    store: &PrefixStore,
    val_users: &[&UserRecord],
    labels: &[u8],
) -> Result<(f64, f64)> {
    let scores = engine.score_users_unseen(val_users, store, 0.5)?;
    let pairs: Vec<(f64, u8)> = scores
        .iter()
        .zip(labels)
        .map(|(s, y)| (s.score, *y))
        .collect();
    let tau = match engine.config.threshold {
        Threshold::Fixed(t) => t,
        Threshold::Calibrate => calibrate_threshold(&pairs)?,
    };
    Ok((f1_at(&pairs, tau), tau))
}

/// Train the prefix store on labeled users. Backend parameters are never
/// touched; only per-user rows and the shared MLP receive updates.
pub fn train(
    engine: &Engine<'_>,
    store: &mut PrefixStore,
    train_users: &[&UserRecord],
    val_users: &[&UserRecord],
) -> Result<TrainLog> {
    let descriptor = engine.backend.descriptor();
    if !descriptor.differentiable {
        return Err(Error::NotDifferentiable(descriptor.name.into()));
    }
    if !engine.prefix_enabled {
        return Err(Error::NoPrefix(
            "training requires the prefix pathway, which is disabled in this engine variant".into(),
        ));
    }
    if descriptor.block_shape != Some(store.block_shape) {
        return Err(Error::Shape(format!(
            "prefix store produces {}x{} blocks but backend `{}` expects {:?}",
            store.block_shape.positions,
            store.block_shape.width,
            descriptor.name,
            descriptor.block_shape
        )));
    }
    let disease = &engine.ontology.disease_id;
    let labels_of = |users: &[&UserRecord]| -> Result<Vec<u8>> {
        users
            .iter()
            .map(|u| {
                u.label(disease).ok_or_else(|| {
                    Error::NoTrain(format!(
                        "user `{}` has no label for disease `{disease}`",
                        u.user_id
                    ))
                })
            })
            .collect()
    };
    let train_labels = labels_of(train_users)?;
    if !train_labels.contains(&1) || !train_labels.contains(&0) {
        return Err(Error::NoTrain(
            "training requires at least one positive and one negative user".into(),
        ));
    }
    if val_users.is_empty() {
        return Err(Error::NoTrain(
            "early stopping requires a non-empty validation set".into(),
        ));
    }
    let val_labels = labels_of(val_users)?;

    let data: Vec<UserTrainData> = train_users
        .iter()
        .zip(&train_labels)
        .map(|(u, y)| {
            let row_idx = store.row_index(&u.user_id).ok_or_else(|| {
                Error::BadParameter(format!(
                    "prefix store has no row for training user `{}`",
                    u.user_id
                ))
            })?;
            Ok(UserTrainData {
                user_id: u.user_id.clone(),
                row_idx,
                label: f64::from(*y),
                prompts: engine.prompts_for_user(u)?,
            })
        })
        .collect::<Result<_>>()?;

    let config = &engine.config;
    let verbalizers = engine.verbalizers.clone();
    let mut row_adam = RowAdam::new(store.num_users(), store.k_e);
    let mut mlp_adam = MlpAdam::new(&MlpGrads::zeros_like(store.mlp()));

    let initial_loss = mean_train_loss(engine, store, &data, &verbalizers)?;
    let mut epochs = Vec::new();
    let mut best_val_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut derive_rng(config.seed, "epoch-shuffle", epoch as u64));

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results = {
                let frozen: &PrefixStore = store;
                batch
                    .par_iter()
                    .map(|&ui| user_loss_and_grads(engine, frozen, &data[ui], &verbalizers))
                    .collect::<Result<Vec<_>>>()?
            };

            // Mean over the batch, in batch order.
            let scale = 1.0 / results.len() as f64;
            let mut row_grads: Vec<(usize, Array1<f64>)> = Vec::with_capacity(results.len());
            let mut mlp_grad = MlpGrads::zeros_like(store.mlp());
            for (&ui, (loss, d_row, d_mlp)) in batch.iter().zip(&results) {
                loss_sum += *loss;
                row_grads.push((data[ui].row_idx, d_row * scale));
                mlp_grad.add(&d_mlp.scaled(scale));
            }

            // Global norm clip across every parameter gradient in the batch.
            let total_sq: f64 = row_grads
                .iter()
                .map(|(_, g)| g.iter().map(|x| x * x).sum::<f64>())
                .sum::<f64>()
                + mlp_grad.squared_norm();
            let norm = total_sq.sqrt();
            if norm > config.clip_norm {
                let shrink = config.clip_norm / norm;
                for (_, g) in &mut row_grads {
                    *g *= shrink;
                }
                mlp_grad = mlp_grad.scaled(shrink);
            }

            let mlp_delta = mlp_adam.step(&mlp_grad, config.learning_rate);
            store.add_to_mlp(&mlp_delta);
            for (idx, g) in &row_grads {
                let delta = row_adam.step(*idx, g, config.learning_rate);
                store.add_to_row(*idx, &delta);
            }
        }
        if !store.all_finite() {
            return Err(Error::Degenerate(format!(
                "training diverged to non-finite parameters at epoch {epoch}"
            )));
        }

        let train_loss = loss_sum / data.len() as f64;
        let (val_f1, tau) = validation_f1(engine, store, val_users, &val_labels)?;
        epochs.push(EpochLog {
            epoch,
            train_loss,
            val_f1,
            tau,
        });

        if val_f1 > best_val_f1 {
            best_val_f1 = val_f1;
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let final_loss = mean_train_loss(engine, store, &data, &verbalizers)?;
    Ok(TrainLog {
        initial_loss,
        final_loss,
        epochs,
        best_epoch,
        best_val_f1,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockBackend, TinyBackend};
    use crate::corpus::Post;
    use crate::engine::TrainConfig;
    use crate::ontology::{default_negatives, parse_ontology, Ontology};
    use crate::prefix::{init_store, BlockShape};
    use chrono::{TimeZone, Utc};
    use std::collections::BTreeMap;

    fn onto() -> Ontology {
        parse_ontology(
            "anxiety\tsymptom\ninsomnia\tsymptom\ndivorce\tlife_event\nabilify\ttreatment\n",
            "depression",
        )
        .unwrap()
    }

    fn user(id: &str, label: u8, texts: &[&str]) -> UserRecord {
        UserRecord {
            user_id: id.to_owned(),
            labels: BTreeMap::from([("depression".to_owned(), label)]),
            onset: None,
            posts: texts
                .iter()
                .enumerate()
                .map(|(i, t)| Post {
                    timestamp: Utc.with_ymd_and_hms(2020, 1, 1 + i as u32, 0, 0, 0).unwrap(),
                    text: (*t).to_owned(),
                })
                .collect(),
        }
    }

    fn tiny_fixture() -> (Ontology, Vec<UserRecord>, Vec<UserRecord>) {
        let o = onto();
        let train = vec![
            user("t1", 1, &["anxiety insomnia all night", "divorce papers and abilify"]),
            user("t2", 1, &["anxiety again today", "started abilify yesterday"]),
            user("t3", 0, &["lovely walk in the park", "coffee with friends"]),
            user("t4", 0, &["watched a film tonight", "baked fresh bread"]),
        ];
        let val = vec![
            user("v1", 1, &["insomnia and anxiety for weeks", "divorce hearing soon"]),
            user("v2", 0, &["gardening all afternoon", "quiet evening reading"]),
        ];
        (o, train, val)
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            window: 16,
            k: 4,
            k_e: 8,
            batch_size: 2,
            ..TrainConfig::default()
        }
    }

    fn tiny_backend_for(o: &Ontology, users: &[&UserRecord], config: &TrainConfig) -> TinyBackend {
        let mut texts: Vec<String> = users
            .iter()
            .flat_map(|u| u.posts.iter().map(|p| p.text.clone()))
            .collect();
        texts.push("is a of depression symptom. life event. treatment.; <sep>".into());
        for c in &o.concepts {
            texts.push(c.surface.clone());
        }
        texts.extend(default_negatives());
        TinyBackend::from_texts(texts.iter().map(String::as_str), config.k, 11).unwrap()
    }

    #[test]
    fn mock_backend_cannot_train() {
        let o = onto();
        let backend = MockBackend::new(&o);
        let engine = Engine::new(&backend, &o, &default_negatives(), small_config()).unwrap();
        let (_, train_users, val_users) = tiny_fixture();
        let t: Vec<&UserRecord> = train_users.iter().collect();
        let v: Vec<&UserRecord> = val_users.iter().collect();
        let mut store = init_store(
            &["t1".into(), "t2".into(), "t3".into(), "t4".into()],
            4,
            8,
            BlockShape::new(4, 32),
            1,
        )
        .unwrap();
        let err = train(&engine, &mut store, &t, &v).unwrap_err();
        assert_eq!(err.code(), "E-NODIFF");
    }

    #[test]
    fn single_class_training_is_rejected() {
        let (o, train_users, val_users) = tiny_fixture();
        let config = small_config();
        let all: Vec<&UserRecord> = train_users.iter().collect();
        let backend = tiny_backend_for(&o, &all, &config);
        let engine = Engine::new(&backend, &o, &default_negatives(), config.clone()).unwrap();
        let positives: Vec<&UserRecord> = train_users.iter().filter(|u| u.label("depression") == Some(1)).collect();
        let v: Vec<&UserRecord> = val_users.iter().collect();
        let mut store = init_store(
            &positives.iter().map(|u| u.user_id.clone()).collect::<Vec<_>>(),
            config.k,
            config.k_e,
            BlockShape::new(config.k, 32),
            1,
        )
        .unwrap();
        let err = train(&engine, &mut store, &positives, &v).unwrap_err();
        assert_eq!(err.code(), "E-NOTRAIN");
    }

    #[test]
    fn training_runs_and_leaves_backend_frozen() {
        let (o, train_users, val_users) = tiny_fixture();
        let config = small_config();
        let t: Vec<&UserRecord> = train_users.iter().collect();
        let v: Vec<&UserRecord> = val_users.iter().collect();
        let backend = tiny_backend_for(&o, &t, &config);
        let hash_before = backend.params_hash();
        let engine = Engine::new(&backend, &o, &default_negatives(), config.clone()).unwrap();
        let ids: Vec<String> = t.iter().map(|u| u.user_id.clone()).collect();
        let mut store =
            init_store(&ids, config.k, config.k_e, BlockShape::new(config.k, 32), 1).unwrap();
        let before = store.clone();

        let log = train(&engine, &mut store, &t, &v).unwrap();
        assert_eq!(backend.params_hash(), hash_before);
        assert!(log.initial_loss.is_finite() && log.final_loss.is_finite());
        assert!(!log.epochs.is_empty() && log.epochs.len() <= config.epochs);
        assert!(store.all_finite());
        assert_ne!(&before, &store, "training must move the prefix parameters");
    }

    #[test]
    fn training_is_deterministic() {
        let (o, train_users, val_users) = tiny_fixture();
        let config = small_config();
        let t: Vec<&UserRecord> = train_users.iter().collect();
        let v: Vec<&UserRecord> = val_users.iter().collect();
        let backend = tiny_backend_for(&o, &t, &config);
        let engine = Engine::new(&backend, &o, &default_negatives(), config.clone()).unwrap();
        let ids: Vec<String> = t.iter().map(|u| u.user_id.clone()).collect();

        let run = || {
            let mut store =
                init_store(&ids, config.k, config.k_e, BlockShape::new(config.k, 32), 1).unwrap();
            let log = train(&engine, &mut store, &t, &v).unwrap();
            (store, log.final_loss)
        };
        let (s1, l1) = run();
        let (s2, l2) = run();
        assert_eq!(s1, s2);
        assert_eq!(l1, l2);
    }

    #[test]
    fn loss_decreases_on_a_tiny_fixture() {
        let (o, train_users, val_users) = tiny_fixture();
        let config = TrainConfig {
            epochs: 30,
            patience: 30,
            ..small_config()
        };
        let t: Vec<&UserRecord> = train_users.iter().collect();
        let v: Vec<&UserRecord> = val_users.iter().collect();
        let backend = tiny_backend_for(&o, &t, &config);
        let engine = Engine::new(&backend, &o, &default_negatives(), config.clone()).unwrap();
        let ids: Vec<String> = t.iter().map(|u| u.user_id.clone()).collect();
        let mut store =
            init_store(&ids, config.k, config.k_e, BlockShape::new(config.k, 32), 1).unwrap();
        let log = train(&engine, &mut store, &t, &v).unwrap();
        assert!(
            log.final_loss < log.initial_loss,
            "loss should go down: {} -> {}",
            log.initial_loss,
            log.final_loss
        );
    }
}
