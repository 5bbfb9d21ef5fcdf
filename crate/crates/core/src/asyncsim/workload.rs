use crate::error::{Error, Result};
use crate::learner::{self, BatchNoise, Dataset, ModelSpec, TrainConfig};
use crate::params::ParamVector;
use crate::rng::{role, Stream};

/// Node-local streams used during training.
#[derive(Debug, Clone)]
pub struct TrainStreams {
    pub shuffle: Stream,
    pub batch_noise: Stream,
}

impl TrainStreams {
    pub fn for_node(master: u64, node: usize) -> Self {
        Self {
            shuffle: Stream::derive(master, role::SHUFFLE, node as u64),
            batch_noise: Stream::derive(master, role::BATCH_NOISE, node as u64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainContext {
    pub train: TrainConfig,
    /// Standard deviation of per-batch noise, when enabled.
    pub batch_noise_std: Option<f64>,
}

/// What the nodes train and how the cloud scores a model.
pub trait Workload: Sync {
    /// Tag recorded in metrics, e.g. `"classifier"` or `"quadratic"`.
    fn name(&self) -> &'static str;

    fn num_nodes(&self) -> usize;

    fn initial_model(&self) -> ParamVector;

    fn train(
        &self,
        node: usize,
        start: &ParamVector,
        ctx: &TrainContext,
        streams: &mut TrainStreams,
    ) -> Result<ParamVector>;

    /// Global objective value reported in metrics.
    fn loss(&self, model: &ParamVector) -> Result<f64>;

    /// Accuracy on the cloud test set, if the workload has one.
    fn accuracy(&self, model: &ParamVector) -> Result<Option<f64>>;
}

/// Classifier nodes each holding one data shard; the cloud holds a test set.
#[derive(Debug, Clone)]
pub struct ClassifierWorkload {
    pub spec: ModelSpec,
    pub shards: Vec<Dataset>,
    pub test: Dataset,
    pub init: ParamVector,
}

impl ClassifierWorkload {
    pub fn new(spec: ModelSpec, shards: Vec<Dataset>, test: Dataset) -> Result<Self> {
        spec.validate()?;
        if shards.is_empty() {
            return Err(Error::Empty("node shards"));
        }
        Ok(Self {
            init: learner::init_model(&spec),
            spec,
            shards,
            test,
        })
    }
}

impl Workload for ClassifierWorkload {
    fn name(&self) -> &'static str {
        "classifier"
    }

    fn num_nodes(&self) -> usize {
        self.shards.len()
    }

    fn initial_model(&self) -> ParamVector {
        self.init.clone()
    }

    fn train(
        &self,
        node: usize,
        start: &ParamVector,
        ctx: &TrainContext,
        streams: &mut TrainStreams,
    ) -> Result<ParamVector> {
        let noise = ctx.batch_noise_std.map(|std| BatchNoise {
            std,
            stream: &mut streams.batch_noise,
        });
        learner::local_train(start, &self.spec, &self.shards[node], &ctx.train, noise, &mut streams.shuffle)
    }

    fn loss(&self, model: &ParamVector) -> Result<f64> {
        learner::loss(model, &self.spec, &self.test)
    }

    fn accuracy(&self, model: &ParamVector) -> Result<Option<f64>> {
        learner::evaluate(model, &self.spec, &self.test).map(Some)
    }
}
