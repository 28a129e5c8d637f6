//! Attribute inference by posterior maximization and model inversion through
//! a trained inverse network.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AttributeSchema, ImageDataset, PriorTable, Subset, TabularDataset};
use crate::defenses::{perturb_label, DefenseError, LabelPerturbConfig};
use crate::metrics::{argmax, mean_std};
use crate::models::{build_inverse_net, epoch_batches, ModelError, TabularClassifier, SHUFFLE_STREAM};
use crate::nn::{l2_recon_loss, NnError, Optimizer, Sequential, Tensor, TrainConfig};
use crate::seed;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("unknown attribute {0}")]
    UnknownAttribute(String),
    #[error("attribute '{0}' is not flagged sensitive")]
    NotSensitive(String),
    #[error("no prior for attribute '{0}' covering all its levels")]
    MissingPrior(String),
    #[error("observed label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{0}")]
    InvalidInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
}

/// Black-box record access: class probabilities for each record.
pub trait RecordOracle: Sync {
    fn query(&self, records: &[Vec<usize>]) -> Result<Vec<Vec<f64>>, AttackError>;
}

impl RecordOracle for TabularClassifier {
    fn query(&self, records: &[Vec<usize>]) -> Result<Vec<Vec<f64>>, AttackError> {
        if records.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.probabilities(records)?)
    }
}

impl<F> RecordOracle for F
where
    F: Fn(&[usize]) -> Vec<f64> + Sync,
{
    fn query(&self, records: &[Vec<usize>]) -> Result<Vec<Vec<f64>>, AttackError> {
        Ok(records.iter().map(|r| self(r)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringMode {
    /// `L(v)` is the model's confidence in the observed label.
    #[default]
    Soft,
    /// `L(v)` is 1 when the model's top class is the observed label, else 0.
    Hard,
}

/// Which attribute to infer and how to score candidates. Ties go to the
/// lowest level index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttrAttackConfig {
    pub target_attr: usize,
    pub mode: ScoringMode,
}

fn check_target<'a>(
    schema: &AttributeSchema,
    priors: &'a PriorTable,
    cfg: &AttrAttackConfig,
) -> Result<&'a [f64], AttackError> {
    let attr = schema
        .attributes
        .get(cfg.target_attr)
        .ok_or_else(|| AttackError::UnknownAttribute(cfg.target_attr.to_string()))?;
    if !attr.sensitive {
        return Err(AttackError::NotSensitive(attr.name.clone()));
    }
    match priors.get(cfg.target_attr) {
        Some(p) if p.len() == attr.level_count() => Ok(p),
        _ => Err(AttackError::MissingPrior(attr.name.clone())),
    }
}

/// `score(v) = prior(v) * L(v)` from the model outputs for each candidate.
fn score(candidate_probs: &[Vec<f64>], observed: usize, prior: &[f64], mode: ScoringMode) -> Vec<f64> {
    candidate_probs
        .iter()
        .zip(prior)
        .map(|(probs, p)| {
            let l = match mode {
                ScoringMode::Soft => probs[observed],
                ScoringMode::Hard => f64::from(argmax(probs) == observed),
            };
            p * l
        })
        .collect()
}

/// `record` with the target slot set to each level in turn.
fn candidates(record: &[usize], target: usize, levels: usize) -> Vec<Vec<usize>> {
    (0..levels)
        .map(|v| {
            let mut r = record.to_vec();
            r[target] = v;
            r
        })
        .collect()
}

/// Infer the target attribute of `record` from the other attributes and the
/// label the model released for it. The value in the target slot of `record`
/// is ignored. Returns the chosen level and the unnormalized scores.
pub fn infer_attribute<O: RecordOracle + ?Sized>(
    access: &O,
    schema: &AttributeSchema,
    record: &[usize],
    observed_label: usize,
    priors: &PriorTable,
    cfg: &AttrAttackConfig,
) -> Result<(usize, Vec<f64>), AttackError> {
    let prior = check_target(schema, priors, cfg)?;
    if observed_label >= schema.classes {
        return Err(AttackError::LabelOutOfRange { label: observed_label, classes: schema.classes });
    }
    if record.len() != schema.attributes.len() {
        return Err(AttackError::InvalidInput(format!(
            "record has {} attributes, schema has {}",
            record.len(),
            schema.attributes.len()
        )));
    }
    let probs = access.query(&candidates(record, cfg.target_attr, prior.len()))?;
    let scores = score(&probs, observed_label, prior, cfg.mode);
    Ok((argmax(&scores), scores))
}

/// Per-repetition and aggregate results of an attribute attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttrAttackReport {
    pub target_attr: String,
    pub flip_p: f64,
    pub attack_acc: Vec<f64>,
    pub test_acc: Vec<f64>,
    pub attack_mean: f64,
    pub attack_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
}

/// Attack every test record `repetitions` times.
///
/// Each repetition takes the model's top-1 label for each record, passes it
/// through the label defense when one is configured, and infers the target
/// from the released label. Counterfactual queries go to the undefended
/// model and are deterministic, so they are computed once. Test accuracy is
/// that of the released labels.
pub fn eval_attr_attack<O: RecordOracle + ?Sized>(
    model: &O,
    test: &TabularDataset,
    priors: &PriorTable,
    cfg: &AttrAttackConfig,
    defense: Option<&LabelPerturbConfig>,
    repetitions: usize,
    seed: u64,
) -> Result<AttrAttackReport, AttackError> {
    let schema = test.schema();
    let prior = check_target(schema, priors, cfg)?;
    if test.is_empty() || repetitions == 0 {
        return Err(AttackError::InvalidInput("need a nonempty test set and at least one repetition".into()));
    }
    let levels = prior.len();
    let released = model.query(test.records())?.iter().map(|p| argmax(p)).collect::<Vec<_>>();
    let cand: Vec<Vec<usize>> =
        test.records().iter().flat_map(|r| candidates(r, cfg.target_attr, levels)).collect();
    let cand_probs = model.query(&cand)?;
    let truth: Vec<usize> = test.records().iter().map(|r| r[cfg.target_attr]).collect();

    let trials: Vec<(f64, f64)> = (0..repetitions)
        .into_par_iter()
        .map(|rep| {
            let mut rng = seed::stream(seed, &format!("rep{rep}"));
            let (mut hits, mut correct) = (0usize, 0usize);
            for (i, &y_hat) in released.iter().enumerate() {
                let observed = match defense {
                    Some(d) => perturb_label(y_hat, d, &mut rng)?,
                    None => y_hat,
                };
                let scores = score(&cand_probs[i * levels..(i + 1) * levels], observed, prior, cfg.mode);
                hits += usize::from(argmax(&scores) == truth[i]);
                correct += usize::from(observed == test.labels()[i]);
            }
            let n = test.len() as f64;
            Ok((hits as f64 / n, correct as f64 / n))
        })
        .collect::<Result<_, AttackError>>()?;
    let attack_acc: Vec<f64> = trials.iter().map(|t| t.0).collect();
    let test_acc: Vec<f64> = trials.iter().map(|t| t.1).collect();
    let (attack_mean, attack_std) = mean_std(&attack_acc).expect("nonempty");
    let (test_mean, test_std) = mean_std(&test_acc).expect("nonempty");
    Ok(AttrAttackReport {
        target_attr: schema.attributes[cfg.target_attr].name.clone(),
        flip_p: defense.map_or(0.0, |d| d.flip_p),
        attack_acc,
        test_acc,
        attack_mean,
        attack_std,
        test_mean,
        test_std,
    })
}

/// Black-box access to party A's half: image batch to cut activations as
/// they appear on the wire.
pub trait ActivationOracle {
    fn input_shape(&self) -> &[usize];
    fn activations(&self, x: &Tensor) -> Result<Tensor, AttackError>;
}

/// A deployed front half whose outputs leave the party in single precision.
pub struct WireFront<'a>(pub &'a Sequential);

impl ActivationOracle for WireFront<'_> {
    fn input_shape(&self) -> &[usize] {
        self.0.input_shape()
    }

    fn activations(&self, x: &Tensor) -> Result<Tensor, AttackError> {
        Ok(self.0.predict(x)?.round_to_f32())
    }
}

const QUERY_CHUNK: usize = 64;

/// Query the oracle with every image of `x`; row `i` of the result pairs with
/// image `i`.
pub fn collect_queries<O: ActivationOracle + ?Sized>(access: &O, x: &ImageDataset) -> Result<Tensor, AttackError> {
    if x.is_empty() {
        return Err(AttackError::InvalidInput("empty query set".into()));
    }
    let expected = [1, x.side(), x.side()];
    if access.input_shape() != expected {
        return Err(AttackError::InvalidInput(format!(
            "oracle expects {:?}, query images are {expected:?}",
            access.input_shape()
        )));
    }
    let idx: Vec<usize> = (0..x.len()).collect();
    let parts = idx
        .chunks(QUERY_CHUNK)
        .map(|c| access.activations(&x.batch(c)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut shape = parts[0].shape().to_vec();
    shape[0] = x.len();
    let data: Vec<f64> = parts.into_iter().flat_map(Tensor::into_data).collect();
    Ok(Tensor::new(shape, data)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionAttackConfig {
    pub train: TrainConfig,
    /// Seed for the inverse network's initial weights.
    pub init_seed: u64,
}

/// Minimize the mean per-image squared pixel error of `g(V)` against `X` by
/// minibatch optimization. Returns the mean loss of each epoch.
pub fn train_inverse_net(g: &mut Sequential, v: &Tensor, x: &Tensor, config: &TrainConfig) -> Result<Vec<f64>, AttackError> {
    let n = v.batch_len();
    if n != x.batch_len() {
        return Err(AttackError::InvalidInput(format!("{n} activations but {} images", x.batch_len())));
    }
    config.validate(n)?;
    let mut opt = Optimizer::new(config);
    let mut rng = seed::stream(config.seed, SHUFFLE_STREAM);
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut total = 0.0;
        for batch in epoch_batches(n, config.batch_size, &mut rng) {
            let pred = g.forward(&v.select(&batch))?;
            let loss = l2_recon_loss(&pred, &x.select(&batch))?;
            total += loss.value() * batch.len() as f64;
            g.backward(&loss)?;
            opt.step(g)?;
        }
        trace.push(total / n as f64);
    }
    Ok(trace)
}

/// Build an inverse network for `V`'s activation shape and train it to map
/// `V` back to `X`.
pub fn train_inverse(v: &Tensor, x: &Tensor, cfg: &InversionAttackConfig) -> Result<(Sequential, Vec<f64>), AttackError> {
    if x.shape().len() != 4 || x.shape()[1] != 1 || x.shape()[2] != x.shape()[3] {
        return Err(AttackError::InvalidInput(format!("images must be (N, 1, S, S), got {:?}", x.shape())));
    }
    let mut g = build_inverse_net(v.sample_shape(), x.shape()[2], cfg.init_seed)?;
    let trace = train_inverse_net(&mut g, v, x, &cfg.train)?;
    Ok((g, trace))
}

/// Recover images from intercepted activations (batched or a single sample).
pub fn invert(g: &Sequential, v0: &Tensor) -> Result<Tensor, AttackError> {
    if v0.shape() == g.input_shape() {
        let mut shape = vec![1];
        shape.extend_from_slice(v0.shape());
        return Ok(g.predict(&v0.clone().reshape(shape)?)?.sample_tensor(0));
    }
    Ok(g.predict(v0)?)
}

/// Draw a random record index set of size `k` without replacement, for
/// spot-checking the attack on a sample.
pub fn sample_indices<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    rand::seq::index::sample(rng, n, k.min(n)).into_vec()
}
