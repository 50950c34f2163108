//! Minibatch SGD, evaluation, and the XOR / MNIST experiment builders.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MNIST_CLASSES};
use crate::error::{Error, Result};
use crate::layers::{
    Activation, AdditiveConv, AdditiveDense, ClassicConv, ClassicDense, ConvGeometry, GradMode,
    MaxPool2,
};
use crate::network::{Flatten, Layer, LossKind, Network, Operator};
use crate::ops::{self, OpCounter};
use crate::tensor::{Rng, Vector};

/// Mixed into the run seed for the shuffle stream so that it differs from
/// the initialization stream.
const SHUFFLE_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

pub const DEFAULT_BATCH_SIZE: usize = 150;
pub const XOR_EPOCHS: usize = 1000;
pub const XOR_HIDDEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub grad_mode: GradMode,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.005,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: 5,
            seed: 1,
            grad_mode: GradMode::PaperLiteral,
        }
    }
}

impl SgdConfig {
    /// A zero learning rate is accepted and leaves parameters untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param(format!(
                "learning rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs must be at least 1"));
        }
        Ok(())
    }
}

/// Per-epoch record. Op counts are cumulative over the training passes of
/// the run (evaluation is not counted).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub mult_count: u64,
    pub add_count: u64,
}

pub trait MetricsSink {
    fn record(&mut self, m: &EpochMetrics) -> Result<()>;
}

impl MetricsSink for Vec<EpochMetrics> {
    fn record(&mut self, m: &EpochMetrics) -> Result<()> {
        self.push(*m);
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _: &EpochMetrics) -> Result<()> {
        Ok(())
    }
}

impl<F: FnMut(&EpochMetrics)> MetricsSink for F {
    fn record(&mut self, m: &EpochMetrics) -> Result<()> {
        self(m);
        Ok(())
    }
}

/// Class predicted from a network output: a 0.5 threshold for a single
/// output, the argmax otherwise.
pub fn predicted_class(output: &Vector) -> usize {
    if output.len() == 1 {
        usize::from(output[0] > 0.5)
    } else {
        output.argmax().unwrap_or(0)
    }
}

fn check_compatible(net: &Network, data: &Dataset, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset(format!("{what} set has no samples")));
    }
    if data.dim() != net.input_len() {
        return Err(Error::shape(format!(
            "{what} samples have {} features, network expects {}",
            data.dim(),
            net.input_len()
        )));
    }
    let out = net.output_len();
    let ok = if out == 1 {
        data.n_classes <= 2
    } else {
        out >= data.n_classes
    };
    if !ok {
        return Err(Error::shape(format!(
            "network has {out} outputs for a {}-class {what} set",
            data.n_classes
        )));
    }
    Ok(())
}

/// Fraction of samples whose predicted class equals the label.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<f64> {
    Ok(confusion(net, data)?.accuracy())
}

/// `counts[label][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.counts.len()).map(|k| self.counts[k][k]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total() as f64
    }
}

pub fn confusion(net: &Network, data: &Dataset) -> Result<Confusion> {
    check_compatible(net, data, "evaluation")?;
    let k = data.n_classes.max(net.output_len()).max(2);
    let mut counts = vec![vec![0usize; k]; k];
    ops::uncounted(|| -> Result<()> {
        for i in 0..data.len() {
            let out = net.predict(&data.sample(i))?;
            counts[data.labels[i]][predicted_class(&out)] += 1;
        }
        Ok(())
    })?;
    Ok(Confusion { counts })
}

/// Average gradient of the loss over `indices`, plus the summed loss.
pub fn batch_gradient(
    net: &Network,
    data: &Dataset,
    indices: &[usize],
    mode: GradMode,
) -> Result<(crate::network::Gradients, f64)> {
    let mut grads = net.zero_gradients();
    let mut loss = 0.0;
    for &i in indices {
        let target = data.target(i, net.output_len())?;
        loss += net
            .accumulate_sample(&data.sample(i), &target, mode, &mut grads)?
            .0;
    }
    grads.scale(1.0 / indices.len() as f64);
    Ok((grads, loss))
}

/// Minibatch SGD with a seeded reshuffle every epoch. The update is
/// `p <- p - lr * mean_batch(grad)`. Identical inputs give bitwise
/// identical parameters and metrics.
pub fn sgd_train(
    mut net: Network,
    train: &Dataset,
    test: &Dataset,
    cfg: &SgdConfig,
    sink: &mut dyn MetricsSink,
) -> Result<(Network, Vec<EpochMetrics>)> {
    cfg.validate()?;
    check_compatible(&net, train, "training")?;
    check_compatible(&net, test, "test")?;

    let outputs = net.output_len();
    let mut rng = Rng::new(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grads = net.zero_gradients();
    let mut totals = OpCounter::default();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (res, counted) = ops::scoped_count(|| -> Result<f64> {
                grads.clear();
                let mut batch_loss = 0.0;
                for &i in batch {
                    let target = train.target(i, outputs)?;
                    let (loss, out) = net.accumulate_sample(
                        &train.sample(i),
                        &target,
                        cfg.grad_mode,
                        &mut grads,
                    )?;
                    batch_loss += loss;
                    if predicted_class(&out) == train.labels[i] {
                        correct += 1;
                    }
                }
                if !batch_loss.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        batch: batch_no,
                        loss: batch_loss,
                    });
                }
                grads.scale(1.0 / batch.len() as f64);
                net.apply_update(&grads, cfg.learning_rate)?;
                Ok(batch_loss)
            });
            totals += counted;
            loss_sum += res?;
        }
        let test_acc = evaluate(&net, test)?;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            test_acc,
            mult_count: totals.mults,
            add_count: totals.adds,
        };
        sink.record(&m)?;
        history.push(m);
    }
    Ok((net, history))
}

fn dense(op: Operator, inputs: usize, outputs: usize, act: Activation, rng: &mut Rng) -> Layer {
    match op {
        Operator::Ef => Layer::AdditiveDense(AdditiveDense::init(inputs, outputs, act, rng)),
        Operator::Classic => Layer::ClassicDense(ClassicDense::init(inputs, outputs, act, rng)),
    }
}

fn conv(
    op: Operator,
    g: ConvGeometry,
    filters: usize,
    act: Activation,
    rng: &mut Rng,
) -> Result<Layer> {
    Ok(match op {
        Operator::Ef => Layer::AdditiveConv(AdditiveConv::init(g, filters, act, rng)?),
        Operator::Classic => Layer::ClassicConv(ClassicConv::init(g, filters, act, rng)?),
    })
}

/// 2-10-1 network (ReLU hidden layer using `op`, classic linear output,
/// MSE) and the XOR truth table.
pub fn build_xor_experiment(op: Operator, seed: u64) -> (Network, Dataset) {
    let mut rng = Rng::new(seed);
    let net = Network {
        layers: vec![
            dense(op, 2, XOR_HIDDEN, Activation::Relu, &mut rng),
            Layer::ClassicDense(ClassicDense::init(
                XOR_HIDDEN,
                1,
                Activation::Identity,
                &mut rng,
            )),
        ],
        loss: LossKind::Mse,
    };
    (net, Dataset::xor())
}

pub const MLP2_WIDTHS: [usize; 2] = [300, 100];
pub const MLP3_WIDTHS: [usize; 3] = [300, 150, 60];
pub const MNIST_INPUTS: usize = 784;

/// 784-input MLP with hidden widths 300-100 or 300-150-60 using `op`, and
/// a classic 10-way output trained with softmax cross-entropy.
pub fn build_mnist_mlp(
    op: Operator,
    hidden_layers: usize,
    activation: Activation,
    seed: u64,
) -> Result<Network> {
    let widths: &[usize] = match hidden_layers {
        2 => &MLP2_WIDTHS,
        3 => &MLP3_WIDTHS,
        n => {
            return Err(Error::param(format!(
                "MNIST MLP has 2 or 3 hidden layers, not {n}"
            )))
        }
    };
    let mut rng = Rng::new(seed);
    let mut layers = Vec::new();
    let mut prev = MNIST_INPUTS;
    for &w in widths {
        layers.push(dense(op, prev, w, activation, &mut rng));
        prev = w;
    }
    layers.push(Layer::ClassicDense(ClassicDense::init(
        prev,
        MNIST_CLASSES,
        Activation::Identity,
        &mut rng,
    )));
    Network::new(layers, LossKind::CrossEntropy)
}

/// conv(6 filters, 5x5) → pool → conv(16 filters, 5x5) → pool → flatten →
/// classic dense to 10 logits. Convolutions use `op`.
pub fn build_lenet(op: Operator, activation: Activation, seed: u64) -> Result<Network> {
    let mut rng = Rng::new(seed);
    let c1 = ConvGeometry::new(1, 28, 28, 5, 1)?;
    let c2 = ConvGeometry::new(6, 12, 12, 5, 1)?;
    let layers = vec![
        conv(op, c1, 6, activation, &mut rng)?,
        Layer::MaxPool2(MaxPool2::new(6, 24, 24)?),
        conv(op, c2, 16, activation, &mut rng)?,
        Layer::MaxPool2(MaxPool2::new(16, 8, 8)?),
        Layer::Flatten(Flatten { len: 16 * 4 * 4 }),
        Layer::ClassicDense(ClassicDense::init(
            256,
            MNIST_CLASSES,
            Activation::Identity,
            &mut rng,
        )),
    ];
    Network::new(layers, LossKind::CrossEntropy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Xor,
    Mlp2,
    Mlp3,
    Lenet,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Xor => "xor",
            Arch::Mlp2 => "mlp2",
            Arch::Mlp3 => "mlp3",
            Arch::Lenet => "lenet",
        }
    }

    pub fn uses_mnist(self) -> bool {
        self != Arch::Xor
    }

    /// Builds the network. XOR always uses a ReLU hidden layer.
    pub fn build(self, op: Operator, activation: Activation, seed: u64) -> Result<Network> {
        match self {
            Arch::Xor => Ok(build_xor_experiment(op, seed).0),
            Arch::Mlp2 => build_mnist_mlp(op, 2, activation, seed),
            Arch::Mlp3 => build_mnist_mlp(op, 3, activation, seed),
            Arch::Lenet => build_lenet(op, activation, seed),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xor" => Ok(Arch::Xor),
            "mlp2" => Ok(Arch::Mlp2),
            "mlp3" => Ok(Arch::Mlp3),
            "lenet" | "lenet5" => Ok(Arch::Lenet),
            other => Err(Error::param(format!("unknown architecture `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    #[test]
    fn xor_dataset_and_shape() {
        let (net, data) = build_xor_experiment(Operator::Ef, 1);
        assert_eq!(
            data.samples,
            Matrix::from_rows(&[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        );
        assert_eq!(data.labels, vec![0, 1, 1, 0]);
        assert_eq!(net.layers[0].output_len(), 10);
        assert!(matches!(net.layers[0], Layer::AdditiveDense(_)));
        assert!(matches!(net.layers[1], Layer::ClassicDense(_)));
        assert_eq!(net.loss, LossKind::Mse);
    }

    #[test]
    fn mlp_shapes_and_param_delta() {
        for hidden in [2, 3] {
            let ef = build_mnist_mlp(Operator::Ef, hidden, Activation::Relu, 4).unwrap();
            let c = build_mnist_mlp(Operator::Classic, hidden, Activation::Relu, 4).unwrap();
            assert_eq!(ef.input_len(), 784);
            assert_eq!(ef.output_len(), 10);
            let shapes = |n: &Network| {
                n.layers
                    .iter()
                    .map(|l| (l.input_len(), l.output_len()))
                    .collect::<Vec<_>>()
            };
            assert_eq!(shapes(&ef), shapes(&c));
            let extra: usize = ef
                .layers
                .iter()
                .filter(|l| matches!(l, Layer::AdditiveDense(_)))
                .map(Layer::output_len)
                .sum();
            assert_eq!(ef.param_count(), c.param_count() + extra);
            assert!(matches!(ef.layers.last(), Some(Layer::ClassicDense(_))));
        }
        assert!(build_mnist_mlp(Operator::Ef, 4, Activation::Relu, 0).is_err());
    }

    #[test]
    fn lenet_output_layer_is_classic() {
        let net = build_lenet(Operator::Ef, Activation::Relu, 3).unwrap();
        assert_eq!(net.input_len(), 784);
        assert_eq!(net.output_len(), 10);
        assert!(matches!(net.layers.last(), Some(Layer::ClassicDense(_))));
        assert_eq!(net.hidden_operator(), Some(Operator::Ef));
    }

    #[test]
    fn zero_learning_rate_is_a_null_update() {
        let (net, data) = build_xor_experiment(Operator::Ef, 5);
        let cfg = SgdConfig {
            learning_rate: 0.0,
            batch_size: 4,
            epochs: 3,
            seed: 5,
            grad_mode: GradMode::PaperLiteral,
        };
        let (trained, hist) = sgd_train(net.clone(), &data, &data, &cfg, &mut NullSink).unwrap();
        assert_eq!(trained, net);
        assert_eq!(hist.len(), 3);
    }

    #[test]
    fn single_step_matches_hand_gradient() {
        // y = w*x + b, loss = (y - t)^2, one sample.
        let l = ClassicDense::new(
            Matrix::from_rows(&[[0.5]]),
            [0.25].into(),
            Activation::Identity,
        )
        .unwrap();
        let net = Network::new(vec![Layer::ClassicDense(l)], LossKind::Mse).unwrap();
        let data = Dataset::new(Matrix::from_rows(&[[2.0]]), vec![1], 2).unwrap();
        let cfg = SgdConfig {
            learning_rate: 0.1,
            batch_size: 1,
            epochs: 1,
            seed: 0,
            grad_mode: GradMode::PaperLiteral,
        };
        let (trained, _) = sgd_train(net, &data, &data, &cfg, &mut NullSink).unwrap();
        let (x, t, w, b): (f64, f64, f64, f64) = (2.0, 1.0, 0.5, 0.25);
        let r = w * x + b - t;
        let expected = vec![w - 0.1 * 2.0 * r * x, b - 0.1 * 2.0 * r];
        assert_eq!(trained.flat_params(), expected);
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let mut rng = Rng::new(6);
        let net = build_mnist_mlp(Operator::Ef, 2, Activation::Tanh, 6).unwrap();
        let samples = crate::tensor::uniform_init(5, 784, 0.0, 1.0, &mut rng).unwrap();
        let data = Dataset::new(samples, vec![0, 3, 9, 3, 1], 10).unwrap();
        let all: Vec<usize> = (0..5).collect();
        let (full, _) = batch_gradient(&net, &data, &all, GradMode::PaperLiteral).unwrap();
        let mut mean = vec![0.0; full.flat().len()];
        for i in 0..5 {
            let (g, _) = batch_gradient(&net, &data, &[i], GradMode::PaperLiteral).unwrap();
            for (m, v) in mean.iter_mut().zip(g.flat()) {
                *m += v / 5.0;
            }
        }
        for (a, b) in full.flat().iter().zip(&mean) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = SgdConfig {
            learning_rate: 0.05,
            batch_size: 4,
            epochs: 50,
            seed: 2,
            grad_mode: GradMode::PaperLiteral,
        };
        let run = || {
            let (net, data) = build_xor_experiment(Operator::Ef, 2);
            sgd_train(net, &data, &data, &cfg, &mut NullSink).unwrap()
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert!(ha.windows(2).all(|w| w[0].mult_count <= w[1].mult_count));
    }

    #[test]
    fn evaluate_edge_cases() {
        // Perfect XOR predictor built by hand: out = relu(x0 - x1) + relu(x1 - x0).
        let h = ClassicDense::new(
            Matrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]),
            Vector::zeros(2),
            Activation::Relu,
        )
        .unwrap();
        let o = ClassicDense::new(
            Matrix::from_rows(&[[1.0], [1.0]]),
            Vector::zeros(1),
            Activation::Identity,
        )
        .unwrap();
        let net = Network::new(
            vec![Layer::ClassicDense(h), Layer::ClassicDense(o)],
            LossKind::Mse,
        )
        .unwrap();
        assert_eq!(evaluate(&net, &Dataset::xor()).unwrap(), 1.0);

        // Constant predictor on balanced 10-class data.
        let c = ClassicDense::new(
            Matrix::zeros(1, 10),
            Vector::zeros(10),
            Activation::Identity,
        )
        .unwrap();
        let net = Network::new(vec![Layer::ClassicDense(c)], LossKind::CrossEntropy).unwrap();
        let data = Dataset::new(
            Matrix::zeros(100, 1),
            (0..100).map(|i| i % 10).collect(),
            10,
        )
        .unwrap();
        assert!((evaluate(&net, &data).unwrap() - 0.1).abs() < 1e-12);

        let empty = Dataset::new(Matrix::zeros(0, 1), vec![], 10).unwrap();
        assert!(matches!(
            evaluate(&net, &empty),
            Err(Error::EmptyDataset(_))
        ));
        let wrong = Dataset::new(Matrix::zeros(2, 3), vec![0, 1], 10).unwrap();
        assert!(matches!(evaluate(&net, &wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let l = ClassicDense::new(
            Matrix::from_rows(&[[1.0]]),
            [0.0].into(),
            Activation::Identity,
        )
        .unwrap();
        let net = Network::new(vec![Layer::ClassicDense(l)], LossKind::Mse).unwrap();
        let data = Dataset::new(Matrix::from_rows(&[[1e200]]), vec![1], 2).unwrap();
        let cfg = SgdConfig {
            learning_rate: 1.0,
            batch_size: 1,
            epochs: 2,
            seed: 0,
            grad_mode: GradMode::PaperLiteral,
        };
        match sgd_train(net, &data, &data, &cfg, &mut NullSink) {
            Err(Error::Divergence { epoch, batch, .. }) => assert_eq!((epoch, batch), (1, 0)),
            other => panic!("{other:?}"),
        }
    }
}
