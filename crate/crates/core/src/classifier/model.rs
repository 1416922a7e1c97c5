use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabelSet, Utterance, Vocabulary};
use crate::energy::{energy, softmax_temp, EnergyScore, Logits};
use crate::nn::{add_assign, add_outer, add_transpose_mul, affine, init_uniform};
use crate::scalar::Scalar;

/// Layer sizes of the MLP head. `hidden = None` gives a linear (logistic) head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadShape {
    pub input: usize,
    pub hidden: Option<usize>,
    pub output: usize,
}

impl HeadShape {
    pub fn num_params(&self) -> usize {
        match self.hidden {
            Some(h) => h * self.input + h + self.output * h + self.output,
            None => self.output * self.input + self.output,
        }
    }
}

/// Multi-layer perceptron head: `tanh` hidden layer (optional) then a linear
/// output layer. Parameters live in one flat vector:
/// `[w1 (h×in), b1 (h), w2 (out×h), b2 (out)]`, or `[w (out×in), b (out)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpHead<S> {
    pub shape: HeadShape,
    pub data: Vec<S>,
}

/// Activations kept from a head forward pass.
#[derive(Clone, Debug)]
pub struct HeadCache<S> {
    pub hidden: Vec<S>,
    pub logits: Vec<S>,
}

impl<S: Scalar> MlpHead<S> {
    pub fn zeros(shape: HeadShape) -> Self {
        MlpHead { shape, data: vec![S::zero(); shape.num_params()] }
    }

    pub fn init(shape: HeadShape, rng: &mut ChaCha8Rng) -> Self {
        let mut head = Self::zeros(shape);
        match shape.hidden {
            Some(h) => {
                let (w1, rest) = head.data.split_at_mut(h * shape.input);
                init_uniform(w1, shape.input, rng);
                let w2 = &mut rest[h..h + shape.output * h];
                init_uniform(w2, h, rng);
            }
            None => {
                let w = &mut head.data[..shape.output * shape.input];
                init_uniform(w, shape.input, rng);
            }
        }
        head
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T) -> MlpHead<T> {
        MlpHead { shape: self.shape, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn forward(&self, x: &[S]) -> HeadCache<S> {
        let s = self.shape;
        let mut logits = vec![S::zero(); s.output];
        match s.hidden {
            Some(h) => {
                let (w1, rest) = self.data.split_at(h * s.input);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(s.output * h);
                let mut hidden = vec![S::zero(); h];
                affine(w1, b1, x, &mut hidden);
                for v in hidden.iter_mut() {
                    *v = v.tanh();
                }
                affine(w2, b2, &hidden, &mut logits);
                HeadCache { hidden, logits }
            }
            None => {
                let (w, b) = self.data.split_at(s.output * s.input);
                affine(w, b, x, &mut logits);
                HeadCache { hidden: Vec::new(), logits }
            }
        }
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂logits`; if `dx` is given,
    /// also accumulates `∂L/∂x`.
    pub fn backward(&self, x: &[S], cache: &HeadCache<S>, dlogits: &[S], grad: &mut [S], dx: Option<&mut [S]>) {
        let s = self.shape;
        match s.hidden {
            Some(h) => {
                let (w1, rest) = self.data.split_at(h * s.input);
                let w2 = &rest[h..h + s.output * h];
                let (gw1, grest) = grad.split_at_mut(h * s.input);
                let (gb1, grest) = grest.split_at_mut(h);
                let (gw2, gb2) = grest.split_at_mut(s.output * h);
                add_outer(gw2, dlogits, &cache.hidden);
                add_assign(gb2, dlogits);
                let mut dh = vec![S::zero(); h];
                add_transpose_mul(w2, dlogits, &mut dh);
                for (d, &a) in dh.iter_mut().zip(&cache.hidden) {
                    *d = *d * (S::one() - a * a);
                }
                add_outer(gw1, &dh, x);
                add_assign(gb1, &dh);
                if let Some(dx) = dx {
                    add_transpose_mul(w1, &dh, dx);
                }
            }
            None => {
                let w = &self.data[..s.output * s.input];
                let (gw, gb) = grad.split_at_mut(s.output * s.input);
                add_outer(gw, dlogits, x);
                add_assign(gb, dlogits);
                if let Some(dx) = dx {
                    add_transpose_mul(w, dlogits, dx);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierShape {
    pub embed_dim: usize,
    /// Hidden width of the MLP head; `None` (written as `0`) for a linear head.
    #[serde(with = "zero_is_none")]
    pub hidden: Option<usize>,
}

impl Default for ClassifierShape {
    fn default() -> Self {
        ClassifierShape { embed_dim: 32, hidden: Some(32) }
    }
}

mod zero_is_none {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(v.unwrap_or(0) as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        Ok(Some(usize::deserialize(d)?).filter(|&h| h > 0))
    }
}

/// Mean-pooled token embeddings followed by an MLP head.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams<S> {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub embeddings: Vec<S>,
    pub head: MlpHead<S>,
}

/// Gradient with the same layout as [`ClassifierParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierGrad<S> {
    pub embeddings: Vec<S>,
    pub head: Vec<S>,
}

impl<S: Scalar> ClassifierGrad<S> {
    pub fn zeros_like(p: &ClassifierParams<S>) -> Self {
        ClassifierGrad { embeddings: vec![S::zero(); p.embeddings.len()], head: vec![S::zero(); p.head.data.len()] }
    }

    pub fn flat(&self) -> Vec<S> {
        self.embeddings.iter().chain(&self.head).copied().collect()
    }
}

impl<S: Scalar> ClassifierParams<S> {
    pub fn init(vocab_size: usize, num_classes: usize, shape: &ClassifierShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut embeddings = vec![S::zero(); vocab_size * shape.embed_dim];
        // Embedding rows behave like inputs, so use unit-scale initialization.
        init_uniform(&mut embeddings, 1, &mut rng);
        let head = MlpHead::init(
            HeadShape { input: shape.embed_dim, hidden: shape.hidden, output: num_classes },
            &mut rng,
        );
        ClassifierParams { vocab_size, embed_dim: shape.embed_dim, embeddings, head }
    }

    pub fn num_classes(&self) -> usize {
        self.head.shape.output
    }

    /// Mean of the embedding rows of `ids`.
    pub fn pool(&self, ids: &[u32]) -> Vec<S> {
        let d = self.embed_dim;
        let mut x = vec![S::zero(); d];
        for &id in ids {
            add_assign(&mut x, &self.embeddings[id as usize * d..(id as usize + 1) * d]);
        }
        let n = S::lit(ids.len().max(1) as f64);
        for v in x.iter_mut() {
            *v = *v / n;
        }
        x
    }

    pub fn logits_ids(&self, ids: &[u32]) -> Vec<S> {
        self.head.forward(&self.pool(ids)).logits
    }

    /// Backpropagates `dlogits` for one example into `grad`. When
    /// `head_only` is set, embedding gradients are skipped.
    pub(crate) fn backward_example(
        &self,
        ids: &[u32],
        x: &[S],
        cache: &HeadCache<S>,
        dlogits: &[S],
        grad: &mut ClassifierGrad<S>,
        head_only: bool,
    ) {
        if head_only {
            self.head.backward(x, cache, dlogits, &mut grad.head, None);
            return;
        }
        let d = self.embed_dim;
        let mut dx = vec![S::zero(); d];
        self.head.backward(x, cache, dlogits, &mut grad.head, Some(&mut dx));
        let n = S::lit(ids.len().max(1) as f64);
        for &id in ids {
            let row = &mut grad.embeddings[id as usize * d..(id as usize + 1) * d];
            for (g, &v) in row.iter_mut().zip(&dx) {
                *g = *g + v / n;
            }
        }
    }

    pub fn flat(&self) -> Vec<S> {
        self.embeddings.iter().chain(&self.head.data).copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[S]) {
        let n = self.embeddings.len();
        self.embeddings.copy_from_slice(&flat[..n]);
        self.head.data.copy_from_slice(&flat[n..]);
    }
}

/// An intent classifier bound to its vocabulary and label set.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier<S> {
    pub vocab: Arc<Vocabulary>,
    pub labels: LabelSet,
    pub shape: ClassifierShape,
    pub params: ClassifierParams<S>,
}

impl<S: Scalar> Classifier<S> {
    pub fn new(vocab: Arc<Vocabulary>, labels: LabelSet, shape: ClassifierShape, seed: u64) -> Self {
        let params = ClassifierParams::init(vocab.len(), labels.len(), &shape, seed);
        Classifier { vocab, labels, shape, params }
    }

    pub fn encode(&self, u: &Utterance) -> Vec<u32> {
        self.vocab.encode(u)
    }

    /// `f(u)`: one real score per intent. Out-of-vocabulary tokens map to UNK.
    pub fn forward(&self, u: &Utterance) -> Logits<S> {
        Logits::new(self.params.logits_ids(&self.encode(u))).expect("finite parameters give finite logits")
    }

    pub fn energy(&self, u: &Utterance, t: S) -> EnergyScore<S> {
        energy(&self.forward(u), t)
    }

    pub fn predict(&self, u: &Utterance) -> usize {
        self.forward(u).argmax()
    }

    /// Maximum softmax probability at temperature 1.
    pub fn max_softmax(&self, u: &Utterance) -> S {
        softmax_temp(&self.forward(u), S::one()).into_iter().fold(S::zero(), S::max)
    }
}
