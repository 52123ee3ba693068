//! Seeded dataset generation and plain mini-batch SGD on cross-entropy.

mod dataset;

pub use dataset::{
    dataset_mean, export_dataset, generate_dataset, generate_image, import_dataset, LabeledImage,
    BACKGROUND_MAX, MANIFEST, NUM_CLASSES,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autonet::{backprop, forward, softmax, Model, ParamGrads};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// The first `train_count` images of the dataset are trained on; the next
    /// `test_count` are held out.
    pub train_count: usize,
    pub test_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 12,
            learning_rate: 0.1,
            batch_size: 16,
            train_count: 2000,
            test_count: 300,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.train_count == 0 || self.test_count == 0 {
            return Err(Error::invalid("epochs, batch size and split counts must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("bad learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: Model,
    /// Mean training cross-entropy of each epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
    pub test_accuracy: f64,
}

/// `-ln softmax(logits)[label]`, via log-sum-exp.
pub fn cross_entropy(logits: &Tensor, label: usize) -> f64 {
    let max = logits.max();
    let lse = max + logits.data().iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits.data()[label]
}

pub fn predict(model: &Model, image: &Tensor) -> Result<(usize, f64)> {
    let (logits, _) = forward(model, image)?;
    let p = softmax(&logits);
    let class = p.argmax();
    Ok((class, p.data()[class]))
}

pub fn accuracy(model: &Model, images: &[LabeledImage]) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let mut correct = 0;
    for li in images {
        if predict(model, &li.image)?.0 == li.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / images.len() as f64)
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::InvalidArgument(message) => Error::Training { epoch, message },
        other => other,
    }
}

/// Trains `model` in place order-deterministically: the epoch shuffles come
/// from a generator seeded with `config.seed` and nothing else.
pub fn train(mut model: Model, dataset: &[LabeledImage], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let needed = config.train_count + config.test_count;
    if dataset.len() < needed {
        return Err(Error::invalid(format!(
            "dataset has {} images, split needs {needed}",
            dataset.len()
        )));
    }
    let (train_set, rest) = dataset.split_at(config.train_count);
    let test_set = &rest[..config.test_count];

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let k = model.num_classes();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads: ParamGrads = crate::autonet::zero_grads(&model);
            for &i in batch {
                let li = &train_set[i];
                let (logits, tape) = forward(&model, &li.image).map_err(diverged(epoch))?;
                let loss = cross_entropy(&logits, li.label);
                if !loss.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        message: format!("non-finite loss {loss}"),
                    });
                }
                total += loss;
                let mut g = softmax(&logits);
                g.data_mut()[li.label] -= 1.0;
                debug_assert_eq!(g.len(), k);
                backprop(&model, &tape, &g, 0, Some(&mut grads)).map_err(diverged(epoch))?;
            }
            let step = config.learning_rate / batch.len() as f64;
            for (p, g) in model.params_mut().iter_mut().zip(&grads) {
                if let (Some(p), Some(g)) = (p, g) {
                    for (w, d) in p.weight.data_mut().iter_mut().zip(g.weight.data()) {
                        *w -= step * d;
                    }
                    for (b, d) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
                        *b -= step * d;
                    }
                }
            }
            let finite = model
                .params()
                .iter()
                .flatten()
                .all(|p| p.weight.data().iter().chain(p.bias.data()).all(|v| v.is_finite()));
            if !finite {
                return Err(Error::Training {
                    epoch,
                    message: "non-finite parameter after update".into(),
                });
            }
        }
        let mean = total / train_set.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("non-finite epoch loss {mean}"),
            });
        }
        log_epoch(epoch, mean);
        epoch_losses.push(mean);
    }
    let test_accuracy = accuracy(&model, test_set).map_err(diverged(config.epochs))?;
    Ok(TrainReport {
        model,
        epoch_losses,
        test_accuracy,
    })
}

fn log_epoch(epoch: usize, loss: f64) {
    if std::env::var_os("GRADEX_TRACE").is_some() {
        eprintln!("epoch {epoch}: loss {loss:.6}");
    }
}
