//! Named parameters and per-forward-pass sessions.
//!
//! Parameters live outside any tape; a [`Session`] binds them to leaf tensors
//! for one forward pass. Binding the same parameter twice returns the same
//! leaf, so shared weights accumulate gradients correctly. Frozen sessions
//! bind constants instead, which keeps adversarial passes from wasting
//! backward work on the opponent's weights.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::scalar::Scalar;
use super::Tensor;
use crate::rng::Rng;

struct ParamInner<S: Scalar> {
    name: String,
    shape: Vec<usize>,
    data: RefCell<Vec<S>>,
    trainable: bool,
}

/// A named, mutable model weight (or non-trainable buffer).
#[derive(Clone)]
pub struct Parameter<S: Scalar>(Rc<ParamInner<S>>);

impl<S: Scalar> Parameter<S> {
    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn len(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn trainable(&self) -> bool {
        self.0.trainable
    }

    pub fn values(&self) -> Vec<S> {
        self.0.data.borrow().clone()
    }

    pub fn set_values(&self, vals: &[S]) {
        assert_eq!(vals.len(), self.len(), "set_values: {}", self.name());
        self.0.data.borrow_mut().copy_from_slice(vals);
    }

    /// In-place update used by optimizers.
    pub fn update(&self, f: impl FnMut(usize, &mut S)) {
        let mut data = self.0.data.borrow_mut();
        let mut f = f;
        for (i, v) in data.iter_mut().enumerate() {
            f(i, v);
        }
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }
}

/// Registry of a model's parameters with unique names.
pub struct ParamSet<S: Scalar> {
    params: Vec<Parameter<S>>,
    by_name: HashMap<String, usize>,
    seed: u64,
}

impl<S: Scalar> ParamSet<S> {
    /// `seed` drives parameter initialization; each parameter derives its own
    /// stream from its name, so init is independent of registration order.
    pub fn new(seed: u64) -> Self {
        ParamSet {
            params: Vec::new(),
            by_name: HashMap::new(),
            seed,
        }
    }

    fn register(&mut self, name: &str, shape: &[usize], data: Vec<S>, trainable: bool) -> Parameter<S> {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name: {name}"
        );
        let p = Parameter(Rc::new(ParamInner {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: RefCell::new(data),
            trainable,
        }));
        self.by_name.insert(name.to_string(), self.params.len());
        self.params.push(p.clone());
        p
    }

    /// Zero-mean uniform init with half-width 1/sqrt(fan_in).
    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Parameter<S> {
        let half = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = Rng::labeled(self.seed, &format!("init/{name}"));
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| S::from_f64(rng.range_f64(-half, half)))
            .collect();
        self.register(name, shape, data, true)
    }

    pub fn constant_init(&mut self, name: &str, shape: &[usize], value: f64) -> Parameter<S> {
        let n: usize = shape.iter().product();
        self.register(name, shape, vec![S::from_f64(value); n], true)
    }

    /// Non-trainable state that still belongs in checkpoints (e.g. running
    /// batch-norm statistics).
    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Parameter<S> {
        let n: usize = shape.iter().product();
        self.register(name, shape, vec![S::from_f64(value); n], false)
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<S>> {
        self.by_name.get(name).map(|&i| &self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<S>> {
        self.params.iter()
    }

    pub fn trainable(&self) -> impl Iterator<Item = &Parameter<S>> {
        self.params.iter().filter(|p| p.trainable())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Order- and value-sensitive checksum over all entries (params and
    /// buffers), for parameter-partition assertions.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            h = h.wrapping_mul(0x100_0000_01b3) ^ crate::rng::fnv1a64(p.name().as_bytes());
            for v in p.0.data.borrow().iter() {
                h = h.wrapping_mul(0x100_0000_01b3) ^ v.as_f64().to_bits();
            }
        }
        h
    }
}

/// Whether dropout masks apply and batch-norm uses batch statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: binds parameters to tape leaves and carries the
/// train/eval mode plus the (seed, step) pair that keys dropout masks.
type Bindings<S> = HashMap<usize, (Parameter<S>, Tensor<S>)>;

pub struct Session<S: Scalar> {
    pub mode: Mode,
    pub seed: u64,
    pub step: u64,
    bindings: RefCell<Bindings<S>>,
    frozen: bool,
}

impl<S: Scalar> Session<S> {
    pub fn new(mode: Mode, seed: u64, step: u64) -> Self {
        Session {
            mode,
            seed,
            step,
            bindings: RefCell::new(HashMap::new()),
            frozen: false,
        }
    }

    pub fn eval(seed: u64) -> Self {
        Session::new(Mode::Eval, seed, 0)
    }

    /// A session whose bound parameters are constants: values flow forward,
    /// gradients do not accumulate on them.
    pub fn frozen(mode: Mode, seed: u64, step: u64) -> Self {
        Session {
            mode,
            seed,
            step,
            bindings: RefCell::new(HashMap::new()),
            frozen: true,
        }
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    /// Leaf (or constant, if frozen) for a parameter; cached per session.
    pub fn bind(&self, p: &Parameter<S>) -> Tensor<S> {
        let mut map = self.bindings.borrow_mut();
        if let Some((_, t)) = map.get(&p.key()) {
            return t.clone();
        }
        let t = if self.frozen {
            Tensor::constant(p.shape(), p.values())
        } else {
            Tensor::leaf(p.shape(), p.values())
        };
        map.insert(p.key(), (p.clone(), t.clone()));
        t
    }

    /// Dropout mask key for a layer at this session's step.
    pub fn dropout_key(&self, layer: &str) -> u64 {
        crate::rng::stream(self.seed, &format!("dropout/{layer}/{}", self.step))
    }

    /// Gradients accumulated on bound trainable parameters by a backward
    /// pass, as (parameter, grad) pairs. Parameters the loss never touched
    /// report zero-filled grads.
    pub fn grads_for(&self, set: &ParamSet<S>) -> Vec<(Parameter<S>, Vec<S>)> {
        let map = self.bindings.borrow();
        set.trainable()
            .map(|p| {
                let g = map
                    .get(&p.key())
                    .and_then(|(_, t)| t.grad())
                    .unwrap_or_else(|| vec![S::zero(); p.len()]);
                (p.clone(), g)
            })
            .collect()
    }
}
