//! Affine layers, MLPs, and normalization on top of the tensor ops.
//!
//! An [`Mlp`] is a stack of affine layers; every layer except the last is
//! followed by norm -> activation -> dropout in that order. Dropout masks
//! are keyed by (run seed, layer name, step) through the session.

use crate::tensor::ops;
use crate::tensor::{Mode, ParamSet, Parameter, Scalar, Session, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    PRelu,
}

impl Activation {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "leaky_relu" => Some(Activation::LeakyRelu),
            "prelu" => Some(Activation::PRelu),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::PRelu => "prelu",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    None,
    Batch,
    Layer,
}

impl Norm {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Norm::None),
            "batch" => Some(Norm::Batch),
            "layer" => Some(Norm::Layer),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Norm::None => "none",
            Norm::Batch => "batch",
            Norm::Layer => "layer",
        }
    }
}

/// Per-hidden-layer settings shared by a whole MLP.
#[derive(Debug, Clone, Copy)]
pub struct FcSettings {
    pub dropout: f64,
    pub norm: Norm,
    pub activation: Activation,
}

impl Default for FcSettings {
    fn default() -> Self {
        FcSettings {
            dropout: 0.0,
            norm: Norm::None,
            activation: Activation::LeakyRelu,
        }
    }
}

const LEAKY_SLOPE: f64 = 0.2;
const PRELU_INIT: f64 = 0.25;
const BN_MOMENTUM: f64 = 0.1;
const NORM_EPS: f64 = 1e-5;

pub struct Linear<S: Scalar> {
    pub w: Parameter<S>,
    pub b: Option<Parameter<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(ps: &mut ParamSet<S>, name: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        let w = ps.uniform(&format!("{name}.w"), &[d_in, d_out], d_in);
        let b = bias.then(|| ps.constant_init(&format!("{name}.b"), &[1, d_out], 0.0));
        Linear { w, b }
    }

    pub fn forward(&self, sess: &Session<S>, x: &Tensor<S>) -> Tensor<S> {
        let y = ops::matmul(x, &sess.bind(&self.w));
        match &self.b {
            Some(b) => ops::bcast_add(&y, &sess.bind(b)),
            None => y,
        }
    }

    pub fn d_out(&self) -> usize {
        self.w.shape()[1]
    }
}

pub struct BatchNorm<S: Scalar> {
    gamma: Parameter<S>,
    beta: Parameter<S>,
    running_mean: Parameter<S>,
    running_var: Parameter<S>,
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(ps: &mut ParamSet<S>, name: &str, d: usize) -> Self {
        BatchNorm {
            gamma: ps.constant_init(&format!("{name}.gamma"), &[1, d], 1.0),
            beta: ps.constant_init(&format!("{name}.beta"), &[1, d], 0.0),
            running_mean: ps.buffer(&format!("{name}.running_mean"), &[1, d], 0.0),
            running_var: ps.buffer(&format!("{name}.running_var"), &[1, d], 1.0),
        }
    }

    pub fn forward(&self, sess: &Session<S>, x: &Tensor<S>) -> Tensor<S> {
        let (mu, var) = if sess.is_train() {
            let mu = ops::mean_rows(x);
            let var = ops::mean_rows(&ops::square(&ops::bcast_sub(x, &mu)));
            // running <- (1 - momentum) * running + momentum * batch
            let m = S::from_f64(BN_MOMENTUM);
            let one_m = S::one() - m;
            let (mv, vv) = (mu.values().to_vec(), var.values().to_vec());
            self.running_mean.update(|i, v| *v = one_m * *v + m * mv[i]);
            self.running_var.update(|i, v| *v = one_m * *v + m * vv[i]);
            (mu, var)
        } else {
            (
                Tensor::constant(self.running_mean.shape(), self.running_mean.values()),
                Tensor::constant(self.running_var.shape(), self.running_var.values()),
            )
        };
        let xhat = ops::bcast_div(
            &ops::bcast_sub(x, &mu),
            &ops::sqrt(&ops::add_const(&var, NORM_EPS)),
        );
        ops::bcast_add(&ops::bcast_mul(&xhat, &sess.bind(&self.gamma)), &sess.bind(&self.beta))
    }
}

pub struct LayerNorm<S: Scalar> {
    gamma: Parameter<S>,
    beta: Parameter<S>,
}

impl<S: Scalar> LayerNorm<S> {
    pub fn new(ps: &mut ParamSet<S>, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: ps.constant_init(&format!("{name}.gamma"), &[1, d], 1.0),
            beta: ps.constant_init(&format!("{name}.beta"), &[1, d], 0.0),
        }
    }

    pub fn forward(&self, sess: &Session<S>, x: &Tensor<S>) -> Tensor<S> {
        let mu = ops::mean_cols(x);
        let xc = ops::bcast_sub(x, &mu);
        let var = ops::mean_cols(&ops::square(&xc));
        let xhat = ops::bcast_div(&xc, &ops::sqrt(&ops::add_const(&var, NORM_EPS)));
        ops::bcast_add(&ops::bcast_mul(&xhat, &sess.bind(&self.gamma)), &sess.bind(&self.beta))
    }
}

enum NormLayer<S: Scalar> {
    None,
    Batch(BatchNorm<S>),
    Layer(LayerNorm<S>),
}

struct MlpLayer<S: Scalar> {
    name: String,
    linear: Linear<S>,
    norm: NormLayer<S>,
    prelu_alpha: Option<Parameter<S>>,
    activation: Option<Activation>,
    dropout: f64,
}

/// Stack of affine layers with norm/activation/dropout between them.
/// The final affine is left linear.
pub struct Mlp<S: Scalar> {
    layers: Vec<MlpLayer<S>>,
}

impl<S: Scalar> Mlp<S> {
    pub fn new(
        ps: &mut ParamSet<S>,
        name: &str,
        dims: &[usize],
        settings: FcSettings,
    ) -> Self {
        assert!(dims.len() >= 2, "mlp {name}: need at least one affine layer");
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let lname = format!("{name}.fc{i}");
            let last = i == dims.len() - 2;
            let linear = Linear::new(ps, &lname, dims[i], dims[i + 1], true);
            let (norm, prelu_alpha, activation, dropout) = if last {
                (NormLayer::None, None, None, 0.0)
            } else {
                let norm = match settings.norm {
                    Norm::None => NormLayer::None,
                    Norm::Batch => NormLayer::Batch(BatchNorm::new(ps, &format!("{lname}.bn"), dims[i + 1])),
                    Norm::Layer => NormLayer::Layer(LayerNorm::new(ps, &format!("{lname}.ln"), dims[i + 1])),
                };
                let alpha = (settings.activation == Activation::PRelu)
                    .then(|| ps.constant_init(&format!("{lname}.alpha"), &[1], PRELU_INIT));
                (norm, alpha, Some(settings.activation), settings.dropout)
            };
            layers.push(MlpLayer {
                name: lname,
                linear,
                norm,
                prelu_alpha,
                activation,
                dropout,
            });
        }
        Mlp { layers }
    }

    pub fn forward(&self, sess: &Session<S>, x: &Tensor<S>) -> Tensor<S> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.linear.forward(sess, &h);
            h = match &layer.norm {
                NormLayer::None => h,
                NormLayer::Batch(bn) => bn.forward(sess, &h),
                NormLayer::Layer(ln) => ln.forward(sess, &h),
            };
            h = match layer.activation {
                None => h,
                Some(Activation::Relu) => ops::relu(&h),
                Some(Activation::LeakyRelu) => ops::leaky_relu(&h, LEAKY_SLOPE),
                Some(Activation::PRelu) => {
                    ops::prelu(&h, &sess.bind(layer.prelu_alpha.as_ref().unwrap()))
                }
            };
            if layer.dropout > 0.0 {
                h = ops::dropout(
                    &h,
                    layer.dropout,
                    sess.dropout_key(&layer.name),
                    sess.mode == Mode::Train,
                );
            }
        }
        h
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().unwrap().linear.d_out()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::central_diff;
    use crate::rng::Rng;
    use crate::tensor::{backward, ops, Mode};

    fn settings(norm: Norm, act: Activation) -> FcSettings {
        FcSettings {
            dropout: 0.0,
            norm,
            activation: act,
        }
    }

    /// Numeric-vs-analytic gradient for every trainable parameter of a model.
    fn param_gradcheck<F>(ps: &ParamSet<f64>, forward: F) -> f64
    where
        F: Fn(&Session<f64>) -> Tensor<f64>,
    {
        let sess = Session::new(Mode::Train, 3, 0);
        let loss = forward(&sess);
        backward(&loss).unwrap();
        let grads = sess.grads_for(ps);
        let mut worst = 0.0f64;
        for (p, analytic) in grads {
            let base = p.values();
            let numeric = central_diff(
                &|vals: &[f64]| {
                    p.set_values(vals);
                    let sess = Session::new(Mode::Train, 3, 0);
                    let out = forward(&sess).item();
                    p.set_values(&base);
                    out
                },
                &base,
                1e-5,
            );
            p.set_values(&base);
            let err = crate::gradcheck::max_rel_err(&analytic, &numeric);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn mlp_param_grads_match_finite_differences() {
        let mut rng = Rng::new(17);
        for (norm, act) in [
            (Norm::None, Activation::Relu),
            (Norm::Batch, Activation::LeakyRelu),
            (Norm::Layer, Activation::PRelu),
        ] {
            let mut ps = ParamSet::<f64>::new(5);
            let mlp = Mlp::new(&mut ps, "m", &[3, 5, 2], settings(norm, act));
            let xv: Vec<f64> = (0..12).map(|_| rng.range_f64(-1.0, 1.0)).collect();
            let x = Tensor::constant(&[4, 3], xv);
            let err = param_gradcheck(&ps, |sess| ops::sum_all(&ops::square(&mlp.forward(sess, &x))));
            assert!(err <= 1e-5, "{:?}/{:?}: rel err {err}", norm, act);
        }
    }

    #[test]
    fn mlp_with_dropout_grads_still_match() {
        let mut ps = ParamSet::<f64>::new(7);
        let mlp = Mlp::new(
            &mut ps,
            "m",
            &[3, 6, 2],
            FcSettings {
                dropout: 0.3,
                norm: Norm::None,
                activation: Activation::LeakyRelu,
            },
        );
        let x = Tensor::constant(&[5, 3], vec![0.3; 15]);
        // fixed (seed, step) -> fixed mask -> differentiable path
        let sess = Session::new(Mode::Train, 11, 4);
        let loss = ops::sum_all(&mlp.forward(&sess, &x));
        backward(&loss).unwrap();
        let grads = sess.grads_for(&ps);
        assert!(grads.iter().any(|(_, g)| g.iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn batchnorm_train_normalizes_eval_uses_running() {
        let mut ps = ParamSet::<f64>::new(1);
        let bn = BatchNorm::new(&mut ps, "bn", 2);
        let x = Tensor::constant(&[4, 2], vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]);
        let sess = Session::new(Mode::Train, 0, 0);
        let y = bn.forward(&sess, &x);
        // batch-normalized columns have mean ~0
        let m0: f64 = (0..4).map(|r| y.values()[r * 2]).sum::<f64>() / 4.0;
        assert!(m0.abs() < 1e-9);
        // eval output differs (running stats only partially updated)
        let sess_e = Session::eval(0);
        let ye = bn.forward(&sess_e, &x);
        assert_ne!(y.values()[0], ye.values()[0]);
    }

    #[test]
    fn layernorm_rows_have_zero_mean_unit_var() {
        let mut ps = ParamSet::<f64>::new(1);
        let ln = LayerNorm::new(&mut ps, "ln", 4);
        let x = Tensor::constant(&[2, 4], vec![1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 10.0]);
        let sess = Session::eval(0);
        let y = ln.forward(&sess, &x);
        for r in 0..2 {
            let row = &y.values()[r * 4..(r + 1) * 4];
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn eval_mode_is_deterministic_across_sessions() {
        let mut ps = ParamSet::<f64>::new(2);
        let mlp = Mlp::new(
            &mut ps,
            "m",
            &[3, 8, 1],
            FcSettings {
                dropout: 0.5,
                norm: Norm::None,
                activation: Activation::Relu,
            },
        );
        let x = Tensor::constant(&[2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let a = mlp.forward(&Session::eval(0), &x);
        let b = mlp.forward(&Session::eval(99), &x);
        assert_eq!(a.values(), b.values());
    }
}
