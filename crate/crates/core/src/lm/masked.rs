use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::scalar::{log_softmax, logsumexp, softmax, Scalar};

use super::causal::load_tensor;
use super::dist::{MaskedDistribution, TokenDistribution};
use super::rnn::{Linear, RnnCell};
use super::train::{fit, LmExample, LmTrainConfig, SequenceModel};
use super::MaskedLm;

const KIND: &str = "masked_lm";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedLmShape {
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

/// Bidirectional recurrent model of `p(w_t | w_<t, w_>t)`.
///
/// A forward cell reads `BOS w_0 .. w_{t-1}`, a backward cell reads
/// `EOS w_{n-1} .. w_{t+1}`, and a dense layer maps the concatenated final
/// states to vocabulary logits. The word at `t` is never seen, so the model
/// is trained on every position of every utterance at once.
#[derive(Clone, Debug, PartialEq)]
pub struct BiRnnMaskedLm<S> {
    vocab: Arc<Vocabulary>,
    shape: MaskedLmShape,
    fwd: RnnCell<S>,
    bwd: RnnCell<S>,
    out: Linear<S>,
}

impl<S: Scalar> BiRnnMaskedLm<S> {
    pub fn init(vocab: Arc<Vocabulary>, cfg: &LmTrainConfig) -> Self {
        let shape = MaskedLmShape { embed_dim: cfg.embed_dim, hidden_dim: cfg.hidden_dim };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let fwd = RnnCell::init(vocab.len(), shape.embed_dim, shape.hidden_dim, &mut rng);
        let bwd = RnnCell::init(vocab.len(), shape.embed_dim, shape.hidden_dim, &mut rng);
        let out = Linear::init(2 * shape.hidden_dim, vocab.len(), &mut rng);
        BiRnnMaskedLm { vocab, shape, fwd, bwd, out }
    }

    pub fn train(vocab: Arc<Vocabulary>, corpus: &[Utterance], cfg: &LmTrainConfig) -> Result<(Self, Vec<f64>)> {
        let mut model = Self::init(vocab, cfg);
        let examples: Vec<LmExample> =
            corpus.iter().map(|u| LmExample { ids: model.vocab.encode(u), label: 0 }).collect();
        let history = fit(&mut model, &examples, cfg, "masked LM training")?;
        Ok((model, history))
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn shape(&self) -> MaskedLmShape {
        self.shape
    }

    /// Forward inputs `BOS w_0 .. w_{n-2}` and backward inputs
    /// `EOS w_{n-1} .. w_1`; position `t` reads forward state `t` and
    /// backward state `n-1-t`.
    fn io(ids: &[u32]) -> (Vec<u32>, Vec<u32>) {
        let n = ids.len();
        let mut f = Vec::with_capacity(n);
        f.push(Vocabulary::BOS_ID);
        f.extend_from_slice(&ids[..n - 1]);
        let mut b = Vec::with_capacity(n);
        b.push(Vocabulary::EOS_ID);
        b.extend(ids[1..].iter().rev());
        (f, b)
    }

    fn features(hf: &[S], hb: &[S]) -> Vec<S> {
        let mut z = hf.to_vec();
        z.extend_from_slice(hb);
        z
    }

    /// Mean NLL of the held-out word over every position of `corpus`.
    pub fn mean_nll(&self, corpus: &[Utterance]) -> f64 {
        let (mut nll, mut n) = (0.0, 0usize);
        for u in corpus {
            let (l, c) = self.forward_example(&LmExample { ids: self.vocab.encode(u), label: 0 }, None);
            nll += l.as_f64();
            n += c;
        }
        nll / n.max(1) as f64
    }

    fn forward_example(&self, ex: &LmExample, grads: Option<&mut [Vec<S>]>) -> (S, usize) {
        let n = ex.ids.len();
        let (fi, bi) = Self::io(&ex.ids);
        let fs = self.fwd.forward(&fi);
        let bs = self.bwd.forward(&bi);
        let mut nll = S::zero();
        let Some(grads) = grads else {
            for t in 0..n {
                let logits = self.out.forward(&Self::features(&fs[t], &bs[n - 1 - t]));
                nll = nll - (logits[ex.ids[t] as usize] - logsumexp(&logits));
            }
            return (nll, n);
        };
        let h = self.shape.hidden_dim;
        let (g_f, rest) = grads.split_at_mut(1);
        let (g_b, g_out) = rest.split_at_mut(1);
        let mut df = vec![vec![S::zero(); h]; n];
        let mut db = vec![vec![S::zero(); h]; n];
        for t in 0..n {
            let z = Self::features(&fs[t], &bs[n - 1 - t]);
            let logits = self.out.forward(&z);
            let target = ex.ids[t] as usize;
            nll = nll - (logits[target] - logsumexp(&logits));
            let mut dlogits = softmax(&logits);
            dlogits[target] = dlogits[target] - S::one();
            let dz = self.out.backward(&z, &dlogits, &mut g_out[0]);
            df[t] = dz[..h].to_vec();
            db[n - 1 - t] = dz[h..].to_vec();
        }
        self.fwd.backward(&fi, &fs, &df, &mut g_f[0]);
        self.bwd.backward(&bi, &bs, &db, &mut g_b[0]);
        (nll, n)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({ "shape": self.shape });
        let mut ck = Checkpoint::new(KIND, &self.vocab, Vec::new(), meta);
        let f = |v: &[S]| v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
        ck.push("forward", &[self.fwd.data.len()], f(&self.fwd.data));
        ck.push("backward", &[self.bwd.data.len()], f(&self.bwd.data));
        ck.push("output", &[self.out.data.len()], f(&self.out.data));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(KIND)?;
        let shape: MaskedLmShape = serde_json::from_value(ck.meta["shape"].clone())?;
        let cfg = LmTrainConfig { embed_dim: shape.embed_dim, hidden_dim: shape.hidden_dim, ..LmTrainConfig::default() };
        let mut model = Self::init(Arc::new(ck.vocab.clone()), &cfg);
        load_tensor(&mut model.fwd.data, ck.tensor("forward")?)?;
        load_tensor(&mut model.bwd.data, ck.tensor("backward")?)?;
        load_tensor(&mut model.out.data, ck.tensor("output")?)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl<S: Scalar> SequenceModel<S> for BiRnnMaskedLm<S> {
    fn tensor_lens(&self) -> Vec<usize> {
        vec![self.fwd.data.len(), self.bwd.data.len(), self.out.data.len()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Vec<S>> {
        vec![&mut self.fwd.data, &mut self.bwd.data, &mut self.out.data]
    }

    fn example_grad(&self, ex: &LmExample, grads: &mut [Vec<S>]) -> (S, usize) {
        self.forward_example(ex, Some(grads))
    }
}

impl<S: Scalar> MaskedLm for BiRnnMaskedLm<S> {
    fn masked_distribution(&self, utterance: &Utterance, position: usize) -> Result<MaskedDistribution> {
        let n = utterance.len();
        if position >= n {
            return Err(Error::Precondition(format!("mask position {position} outside utterance of length {n}")));
        }
        let ids = self.vocab.encode(utterance);
        let hf = self.fwd.forward(&[&[Vocabulary::BOS_ID], &ids[..position]].concat()).pop().expect("nonempty");
        let mut back = vec![Vocabulary::EOS_ID];
        back.extend(ids[position + 1..].iter().rev());
        let hb = self.bwd.forward(&back).pop().expect("nonempty");
        let lp = log_softmax(&self.out.forward(&Self::features(&hf, &hb)));
        Ok(TokenDistribution::dense(self.vocab.clone(), lp.into_iter().map(S::as_f64).collect()))
    }
}
