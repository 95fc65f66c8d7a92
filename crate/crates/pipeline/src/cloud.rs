//! Cloud-model training data, the training adapter, and rollout into
//! forecast frames.

use std::collections::BTreeMap;

use cloudcast_core::cells::{CloudArchitecture, CloudNet};
use cloudcast_core::losses::{ssim, ssim_loss};
use cloudcast_core::training::{train_loop, TrainConfig, TrainOutcome, Trainable};
use cloudcast_core::{Bound, Graph, ParamSet, Tensor, TensorError, Var};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{HISTORY, HORIZON};
use crate::error::PipelineError;
use crate::fleet::{CloudFrame, Fleet};

/// Input frames `t-5 ..= t` and target frames `t+1 ..= t+6`, scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CloudSequence {
    pub origin: usize,
    pub inputs: Vec<Tensor<f64>>,
    pub targets: Vec<Tensor<f64>>,
}

pub fn cloud_sequences(fleet: &Fleet, origins: &[usize]) -> Result<Vec<CloudSequence>, PipelineError> {
    origins
        .iter()
        .map(|&t| {
            if t + 1 < HISTORY || t + HORIZON >= fleet.len() {
                return Err(PipelineError::TooSmall(format!("origin {t} has no full window")));
            }
            Ok(CloudSequence {
                origin: t,
                inputs: fleet.frames[t + 1 - HISTORY..=t].iter().map(CloudFrame::to_tensor).collect(),
                targets: fleet.frames[t + 1..=t + HORIZON].iter().map(CloudFrame::to_tensor).collect(),
            })
        })
        .collect()
}

/// `count` origins spread evenly over `origins`, first and last included.
pub fn spread(origins: &[usize], count: usize) -> Vec<usize> {
    let n = origins.len();
    if count >= n {
        return origins.to_vec();
    }
    if count <= 1 {
        return origins.first().copied().into_iter().take(count).collect();
    }
    (0..count).map(|i| origins[i * (n - 1) / (count - 1)]).collect()
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n.max(1) as f64
}

/// Mean SSIM of a frame list against its targets.
fn mean_ssim(preds: &[Tensor<f64>], targets: &[Tensor<f64>]) -> Result<f64, TensorError> {
    let mut scores = Vec::with_capacity(preds.len());
    for (p, t) in preds.iter().zip(targets) {
        scores.push(ssim(p, t, 1.0)?);
    }
    Ok(mean(scores))
}

/// Which predictions the training loss scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudObjective {
    /// Each target frame predicted from the true preceding frames.
    #[default]
    TeacherForced,
    /// The six frames of an autoregressive rollout, as used when forecasting.
    Rollout,
}

/// Trains a [`CloudNet`] by minimizing the mean `1 - SSIM` of its
/// predictions of the six target frames.
pub struct CloudTrainer {
    pub net: CloudNet<f64>,
    pub objective: CloudObjective,
}

impl CloudTrainer {
    /// Equal-weight mean of teacher-forced and free-running `1 - SSIM`.
    pub fn sequence_val_loss(&self, seq: &CloudSequence) -> Result<f64, TensorError> {
        let forced = self.net.predict_teacher_forced(&seq.inputs, &seq.targets)?;
        let rolled = self.net.predict(&seq.inputs, seq.targets.len())?;
        let forced = 1.0 - mean_ssim(&forced, &seq.targets)?;
        let rolled = 1.0 - mean_ssim(&rolled, &seq.targets)?;
        Ok(0.5 * (forced + rolled))
    }
}

impl Trainable<f64> for CloudTrainer {
    type Sample = CloudSequence;

    fn params(&self) -> &ParamSet<f64> {
        self.net.params()
    }

    fn params_mut(&mut self) -> &mut ParamSet<f64> {
        self.net.params_mut()
    }

    fn batch_loss(
        &self,
        g: &mut Graph<f64>,
        bound: &Bound,
        batch: &[&CloudSequence],
        _rng: &mut ChaCha8Rng,
    ) -> Result<Var, TensorError> {
        let mut terms = Vec::new();
        for seq in batch {
            let (_, h, w) = frame_hw(&seq.inputs[0])?;
            let mut state = self.net.begin_bound(g, bound.clone(), h, w);
            let xs: Vec<Var> = seq.inputs.iter().map(|t| g.constant(t.clone())).collect();
            let ys: Vec<Var> = seq.targets.iter().map(|t| g.constant(t.clone())).collect();
            let preds = match self.objective {
                CloudObjective::TeacherForced => self.net.teacher_forced(g, &mut state, &xs, &ys)?,
                CloudObjective::Rollout => self.net.rollout(g, &mut state, &xs, ys.len())?,
            };
            for (p, y) in preds.into_iter().zip(ys) {
                let l = ssim_loss(g, p, y)?;
                terms.push(g.reshape(l, [1])?);
            }
        }
        let all = g.concat(&terms)?;
        Ok(g.mean(all))
    }

    fn validation_loss(&self, samples: &[CloudSequence]) -> Result<f64, TensorError> {
        let mut losses = Vec::with_capacity(samples.len());
        for seq in samples {
            losses.push(self.sequence_val_loss(seq)?);
        }
        Ok(mean(losses))
    }
}

fn frame_hw(t: &Tensor<f64>) -> Result<(usize, usize, usize), TensorError> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(TensorError::Invalid {
            op: "cloud_sequence",
            detail: format!("frame {:?} is not [C, H, W]", t.shape()),
        }),
    }
}

/// Mean one-step SSIM of the model and of frame persistence over `seqs`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OneStepSsim {
    pub model: f64,
    pub persistence: f64,
    pub sequences: usize,
}

pub fn one_step_ssim(net: &CloudNet<f64>, seqs: &[CloudSequence]) -> Result<OneStepSsim, TensorError> {
    let mut model = Vec::with_capacity(seqs.len());
    let mut persistence = Vec::with_capacity(seqs.len());
    for seq in seqs {
        let pred = net.predict(&seq.inputs, 1)?;
        model.push(ssim(&pred[0], &seq.targets[0], 1.0)?);
        persistence.push(ssim(seq.inputs.last().expect("inputs"), &seq.targets[0], 1.0)?);
    }
    Ok(OneStepSsim {
        model: mean(model),
        persistence: mean(persistence),
        sequences: seqs.len(),
    })
}

/// Predicted frames `t+1 ..= t+6` per forecast origin for one cloud model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CloudForecasts {
    pub model_id: String,
    pub frames: BTreeMap<usize, Vec<CloudFrame>>,
}

/// Rolls `net` out from every origin in `origins`.
pub fn forecast_frames(
    net: &CloudNet<f64>,
    model_id: &str,
    fleet: &Fleet,
    origins: &[usize],
) -> Result<CloudForecasts, PipelineError> {
    let mut frames = BTreeMap::new();
    for &t in origins {
        if t + 1 < HISTORY || t + HORIZON >= fleet.len() {
            return Err(PipelineError::TooSmall(format!("origin {t} has no full window")));
        }
        let inputs: Vec<Tensor<f64>> = fleet.frames[t + 1 - HISTORY..=t].iter().map(CloudFrame::to_tensor).collect();
        let preds = net.predict(&inputs, HORIZON)?;
        let out = preds
            .iter()
            .enumerate()
            .map(|(k, p)| CloudFrame::from_tensor(fleet.timestamp(t + 1 + k), p))
            .collect::<Result<Vec<_>, _>>()?;
        frames.insert(t, out);
    }
    Ok(CloudForecasts {
        model_id: model_id.to_string(),
        frames,
    })
}

/// Architecture plus training budget for one cloud model. Sequence counts
/// cap how many origins, spread evenly over each split, are used.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CloudTrainSpec {
    pub arch: CloudArchitecture,
    #[serde(default)]
    pub objective: CloudObjective,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub train_sequences: usize,
    pub val_sequences: usize,
}

impl CloudTrainSpec {
    pub fn id(&self) -> String {
        self.arch.cell.as_str().to_string()
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            max_epochs: self.max_epochs,
            lr_init: self.learning_rate,
            batch_size: self.batch_size,
            seed,
            ..TrainConfig::default()
        }
    }
}

pub fn train_cloud_model(
    spec: &CloudTrainSpec,
    fleet: &Fleet,
    train_origins: &[usize],
    val_origins: &[usize],
    seed: u64,
) -> Result<(CloudNet<f64>, TrainOutcome<f64>), PipelineError> {
    let context = || format!("cloud model {}", spec.id());
    let train = cloud_sequences(fleet, &spread(train_origins, spec.train_sequences))?;
    let val = cloud_sequences(fleet, &spread(val_origins, spec.val_sequences))?;
    let net = CloudNet::new(spec.arch.clone(), seed)?;
    let mut trainer = CloudTrainer {
        net,
        objective: spec.objective,
    };
    let outcome = train_loop(&mut trainer, &train, &val, &spec.train_config(seed)).map_err(|source| {
        PipelineError::Training {
            context: context(),
            source,
        }
    })?;
    Ok((trainer.net, outcome))
}
