use crate::error::{Error, Result};
use crate::harness::Dataset;
use crate::model::config::TrainConfig;
use crate::model::network::PolicyModel;
use crate::model::optim::Optimizer;
use crate::numerics::ParameterSet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Standard deviation the stem affine targets when calibrated.
pub const STEM_TARGET_STD: f64 = 0.1;

/// Largest number of images pushed through the network at once when only
/// the loss is needed.
const EVAL_CHUNK: usize = 16;

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: PolicyModel,
    /// Training-set MSE before the first update.
    pub initial_loss: f64,
    /// Training-set MSE after each epoch.
    pub loss_trace: Vec<f64>,
    pub updates: u64,
}

/// Mean squared error of `model` over the whole dataset.
pub fn dataset_loss(model: &PolicyModel, data: &Dataset) -> Result<f64> {
    let labels = data.labels();
    let mut total = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let images = data.image_batch(chunk)?;
        let picked: Vec<_> = chunk.iter().map(|&i| labels[i]).collect();
        total += model.batch_loss(&images, &picked)? * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Mini-batch training on the MSE loss. Deterministic given `cfg.seed`.
pub fn train_policy(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if (data.height, data.width) != (cfg.model.image_height, cfg.model.image_width) {
        return Err(Error::invalid(format!(
            "dataset images are {}x{}, model expects {}x{}",
            data.height, data.width, cfg.model.image_height, cfg.model.image_width
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = PolicyModel::new(cfg.model.clone(), &mut rng)?;
    if cfg.calibrate_stem {
        model.stem.calibrate(&data.all_images()?, STEM_TARGET_STD)?;
    }
    let initial_loss = dataset_loss(&model, data)?;
    if !initial_loss.is_finite() {
        return Err(Error::Divergence {
            epoch: 0,
            last_finite_loss: None,
        });
    }
    log::info!("initial training loss {initial_loss:.6e}");
    let labels = data.labels();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut last_finite = initial_loss;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let images = data.image_batch(batch)?;
            let targets: Vec<_> = batch.iter().map(|&i| labels[i]).collect();
            model.zero_grad();
            let loss = match model.loss_and_backward(&images, &targets) {
                Ok(l) if l.is_finite() => l,
                Ok(_) | Err(Error::NonFinite(_)) => {
                    return Err(Error::Divergence {
                        epoch,
                        last_finite_loss: Some(last_finite),
                    })
                }
                Err(e) => return Err(e),
            };
            log::trace!("epoch {epoch} batch loss {loss:.6e}");
            opt.step(&mut model);
        }
        let loss = match dataset_loss(&model, data) {
            Ok(l) if l.is_finite() => l,
            Ok(_) | Err(Error::NonFinite(_)) => {
                return Err(Error::Divergence {
                    epoch,
                    last_finite_loss: Some(last_finite),
                })
            }
            Err(e) => return Err(e),
        };
        log::info!("epoch {epoch}/{} training loss {loss:.6e}", cfg.epochs);
        last_finite = loss;
        trace.push(loss);
    }
    Ok(TrainOutcome {
        model,
        initial_loss,
        loss_trace: trace,
        updates: opt.steps(),
    })
}
