use std::path::Path;
use std::sync::{Arc, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{IntentLabel, LabelSet, LabeledUtterance, Token, Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::{add_assign, init_uniform};
use crate::scalar::{log_softmax, logsumexp, softmax, Scalar};

use super::dist::{LabelPrior, PrefixDistribution, TokenDistribution};
use super::rnn::{Linear, RnnCell};
use super::train::{fit, LmExample, LmTrainConfig, SequenceModel};
use super::{CausalLm, ClassConditionalLm};

const KIND: &str = "causal_lm";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RnnLmShape {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// `0` for the label-free background model.
    pub label_dim: usize,
    pub num_labels: usize,
}

/// Recurrent next-word model. With labels it is class-conditional: the
/// hidden state `h_j` is concatenated with the intent embedding `E_y` and a
/// fully-connected layer maps `[h_j; E_y]` to vocabulary logits. Without
/// labels it is a plain causal LM over the same architecture.
///
/// Every sequence starts from BOS and predicts EOS after the last word.
#[derive(Clone, Debug)]
pub struct RnnLm<S> {
    vocab: Arc<Vocabulary>,
    labels: Option<LabelSet>,
    shape: RnnLmShape,
    cell: RnnCell<S>,
    /// `[K x L]`, empty for the background model.
    label_emb: Vec<S>,
    out: Linear<S>,
    label_bias: OnceLock<Vec<Vec<S>>>,
}

impl<S: Scalar> PartialEq for RnnLm<S> {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab
            && self.labels == other.labels
            && self.shape == other.shape
            && self.cell == other.cell
            && self.label_emb == other.label_emb
            && self.out == other.out
    }
}

impl<S: Scalar> RnnLm<S> {
    /// Randomly initialized model; `labels = None` gives a background LM.
    pub fn init(vocab: Arc<Vocabulary>, labels: Option<LabelSet>, cfg: &LmTrainConfig) -> Self {
        let num_labels = labels.as_ref().map_or(0, LabelSet::len);
        let label_dim = if num_labels == 0 { 0 } else { cfg.label_dim };
        let shape = RnnLmShape { embed_dim: cfg.embed_dim, hidden_dim: cfg.hidden_dim, label_dim, num_labels };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let cell = RnnCell::init(vocab.len(), shape.embed_dim, shape.hidden_dim, &mut rng);
        let mut label_emb = vec![S::zero(); num_labels * label_dim];
        init_uniform(&mut label_emb, 1, &mut rng);
        let out = Linear::init(shape.hidden_dim + label_dim, vocab.len(), &mut rng);
        RnnLm { vocab, labels, shape, cell, label_emb, out, label_bias: OnceLock::new() }
    }

    /// Trains a class-conditional model on labeled utterances.
    pub fn train_conditional(
        vocab: Arc<Vocabulary>,
        labels: LabelSet,
        train: &[LabeledUtterance],
        cfg: &LmTrainConfig,
    ) -> Result<(Self, Vec<f64>)> {
        for row in train {
            if row.label.index >= labels.len() {
                return Err(Error::UnknownIntent(row.label.name.clone()));
            }
        }
        let mut model = Self::init(vocab, Some(labels), cfg);
        let examples: Vec<LmExample> =
            train.iter().map(|r| LmExample { ids: model.vocab.encode(&r.utterance), label: r.label.index }).collect();
        let history = fit(&mut model, &examples, cfg, "class-conditional LM training")?;
        Ok((model, history))
    }

    /// Trains a label-free model on raw utterances.
    pub fn train_background(vocab: Arc<Vocabulary>, corpus: &[Utterance], cfg: &LmTrainConfig) -> Result<(Self, Vec<f64>)> {
        let mut model = Self::init(vocab, None, cfg);
        let examples: Vec<LmExample> =
            corpus.iter().map(|u| LmExample { ids: model.vocab.encode(u), label: 0 }).collect();
        let history = fit(&mut model, &examples, cfg, "background LM training")?;
        Ok((model, history))
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn shape(&self) -> RnnLmShape {
        self.shape
    }

    pub fn is_conditional(&self) -> bool {
        self.labels.is_some()
    }

    fn check_label(&self, label: &IntentLabel) -> Result<usize> {
        match &self.labels {
            Some(ls) if label.index < ls.len() => Ok(label.index),
            Some(_) => Err(Error::UnknownIntent(label.name.clone())),
            None => Err(Error::Precondition("background LM has no intent labels".into())),
        }
    }

    fn require_background(&self) -> Result<()> {
        if self.is_conditional() {
            return Err(Error::Precondition("class-conditional LM needs an intent label".into()));
        }
        Ok(())
    }

    fn inputs(&self, tokens: &[Token]) -> Vec<u32> {
        let mut ids = Vec::with_capacity(tokens.len() + 1);
        ids.push(Vocabulary::BOS_ID);
        ids.extend(self.vocab.encode_tokens(tokens));
        ids
    }

    fn features(&self, h: &[S], label: Option<usize>) -> Vec<S> {
        let mut z = h.to_vec();
        if let Some(y) = label {
            let l = self.shape.label_dim;
            z.extend_from_slice(&self.label_emb[y * l..(y + 1) * l]);
        }
        z
    }

    fn log_probs_at(&self, h: &[S], label: Option<usize>) -> Vec<S> {
        log_softmax(&self.out.forward(&self.features(h, label)))
    }

    fn last_state(&self, prefix: &[Token]) -> Vec<S> {
        self.cell.forward(&self.inputs(prefix)).pop().expect("BOS is always present")
    }

    /// Next-token distribution; `label` must be given iff the model is conditional.
    fn distribution(&self, prefix: &[Token], label: Option<usize>) -> PrefixDistribution {
        let lp = self.log_probs_at(&self.last_state(prefix), label);
        TokenDistribution::dense(self.vocab.clone(), lp.into_iter().map(S::as_f64).collect())
    }

    fn sequence(&self, utterance: &Utterance, label: Option<usize>) -> Vec<f64> {
        let tokens = utterance.tokens();
        let inputs = self.inputs(&tokens[..tokens.len() - 1]);
        let states = self.cell.forward(&inputs);
        let targets = self.vocab.encode(utterance);
        states
            .iter()
            .zip(targets)
            .map(|(h, t)| self.log_probs_at(h, label)[t as usize].as_f64())
            .collect()
    }

    /// Mean per-token NLL (including EOS) over a labeled corpus, or over
    /// unlabeled utterances for a background model.
    pub fn mean_nll(&self, data: &[(Utterance, Option<usize>)]) -> f64 {
        let mut nll = 0.0;
        let mut n = 0usize;
        for (u, y) in data {
            let ex = LmExample { ids: self.vocab.encode(u), label: y.unwrap_or(0) };
            let (l, c) = self.forward_example(&ex, None);
            nll += l.as_f64();
            n += c;
        }
        nll / n.max(1) as f64
    }

    fn label_bias(&self) -> &Vec<Vec<S>> {
        self.label_bias.get_or_init(|| {
            let (h, l) = (self.shape.hidden_dim, self.shape.label_dim);
            (0..self.shape.num_labels).map(|y| self.out.partial(h..h + l, &self.label_emb[y * l..(y + 1) * l])).collect()
        })
    }

    /// Summed NLL of one example; accumulates gradients when `grads` is given.
    fn forward_example(&self, ex: &LmExample, grads: Option<&mut [Vec<S>]>) -> (S, usize) {
        let mut inputs = Vec::with_capacity(ex.ids.len() + 1);
        inputs.push(Vocabulary::BOS_ID);
        inputs.extend_from_slice(&ex.ids);
        let mut targets = ex.ids.clone();
        targets.push(Vocabulary::EOS_ID);
        let label = self.is_conditional().then_some(ex.label);
        let states = self.cell.forward(&inputs);
        let mut nll = S::zero();
        let Some(grads) = grads else {
            for (h, &t) in states.iter().zip(&targets) {
                nll = nll - self.log_probs_at(h, label)[t as usize];
            }
            return (nll, targets.len());
        };
        let (hd, l) = (self.shape.hidden_dim, self.shape.label_dim);
        let (g_cell, rest) = grads.split_at_mut(1);
        let (g_label, g_out) = rest.split_at_mut(1);
        let mut dstates = Vec::with_capacity(states.len());
        for (h, &t) in states.iter().zip(&targets) {
            let z = self.features(h, label);
            let logits = self.out.forward(&z);
            nll = nll - (logits[t as usize] - logsumexp(&logits));
            let mut dlogits = softmax(&logits);
            dlogits[t as usize] = dlogits[t as usize] - S::one();
            let dz = self.out.backward(&z, &dlogits, &mut g_out[0]);
            if let Some(y) = label {
                add_assign(&mut g_label[0][y * l..(y + 1) * l], &dz[hd..]);
            }
            dstates.push(dz[..hd].to_vec());
        }
        self.cell.backward(&inputs, &states, &dstates, &mut g_cell[0]);
        (nll, targets.len())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let names = self.labels.as_ref().map(|l| l.names().to_vec()).unwrap_or_default();
        let meta = serde_json::json!({ "shape": self.shape });
        let mut ck = Checkpoint::new(KIND, &self.vocab, names, meta);
        let f = |v: &[S]| v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
        ck.push("cell", &[self.cell.data.len()], f(&self.cell.data));
        ck.push("label_embeddings", &[self.shape.num_labels, self.shape.label_dim], f(&self.label_emb));
        ck.push("output", &[self.out.data.len()], f(&self.out.data));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(KIND)?;
        let shape: RnnLmShape = serde_json::from_value(ck.meta["shape"].clone())?;
        let labels = if ck.labels.is_empty() { None } else { Some(LabelSet::ordered(ck.labels.clone())?) };
        if labels.as_ref().map_or(0, LabelSet::len) != shape.num_labels {
            return Err(Error::Checkpoint("label count does not match the stored shape".into()));
        }
        let cfg = LmTrainConfig {
            embed_dim: shape.embed_dim,
            hidden_dim: shape.hidden_dim,
            label_dim: shape.label_dim,
            ..LmTrainConfig::default()
        };
        let mut model = Self::init(Arc::new(ck.vocab.clone()), labels, &cfg);
        load_tensor(&mut model.cell.data, ck.tensor("cell")?)?;
        load_tensor(&mut model.label_emb, ck.tensor("label_embeddings")?)?;
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

pub(crate) fn load_tensor<S: Scalar>(dst: &mut [S], src: &[f64]) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::Checkpoint(format!("tensor has {} values, expected {}", src.len(), dst.len())));
    }
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = S::lit(s);
    }
    Ok(())
}

impl<S: Scalar> SequenceModel<S> for RnnLm<S> {
    fn tensor_lens(&self) -> Vec<usize> {
        vec![self.cell.data.len(), self.label_emb.len(), self.out.data.len()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Vec<S>> {
        self.label_bias = OnceLock::new();
        vec![&mut self.cell.data, &mut self.label_emb, &mut self.out.data]
    }

    fn example_grad(&self, ex: &LmExample, grads: &mut [Vec<S>]) -> (S, usize) {
        self.forward_example(ex, Some(grads))
    }
}

impl<S: Scalar> ClassConditionalLm for RnnLm<S> {
    fn labels(&self) -> &LabelSet {
        static EMPTY: OnceLock<LabelSet> = OnceLock::new();
        self.labels.as_ref().unwrap_or_else(|| EMPTY.get_or_init(|| LabelSet::new(std::iter::empty())))
    }

    fn prefix_distribution(&self, prefix: &[Token], label: &IntentLabel) -> Result<PrefixDistribution> {
        let y = self.check_label(label)?;
        Ok(self.distribution(prefix, Some(y)))
    }

    fn token_log_probs(&self, utterance: &Utterance, label: &IntentLabel) -> Result<Vec<f64>> {
        let y = self.check_label(label)?;
        Ok(self.sequence(utterance, Some(y)))
    }

    fn mixture_distribution(&self, prefix: &[Token], prior: &LabelPrior) -> Result<PrefixDistribution> {
        if !self.is_conditional() {
            return Err(Error::Precondition("background LM has no intent labels".into()));
        }
        if prior.len() != self.shape.num_labels {
            return Err(Error::Precondition("label prior does not match the model labels".into()));
        }
        let h = self.last_state(prefix);
        let hd = self.shape.hidden_dim;
        let base: Vec<S> =
            self.out.partial(0..hd, &h).iter().zip(self.out.bias()).map(|(&a, &b)| a + b).collect();
        let v = self.vocab.len();
        let mut acc = vec![f64::NEG_INFINITY; v];
        let mut logits = vec![S::zero(); v];
        for (y, bias) in self.label_bias().iter().enumerate() {
            let p = prior.prob(y);
            if p <= 0.0 {
                continue;
            }
            for ((o, &a), &b) in logits.iter_mut().zip(&base).zip(bias) {
                *o = a + b;
            }
            let lse = logsumexp(&logits).as_f64();
            let lp = p.ln();
            for (a, &z) in acc.iter_mut().zip(&logits) {
                let term = lp + z.as_f64() - lse;
                *a = logsumexp(&[*a, term]);
            }
        }
        Ok(TokenDistribution::dense(self.vocab.clone(), acc))
    }
}

impl<S: Scalar> CausalLm for RnnLm<S> {
    fn prefix_distribution(&self, prefix: &[Token]) -> Result<PrefixDistribution> {
        self.require_background()?;
        Ok(self.distribution(prefix, None))
    }

    fn token_log_probs(&self, utterance: &Utterance) -> Result<Vec<f64>> {
        self.require_background()?;
        Ok(self.sequence(utterance, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tokenize;

    fn vocab_of(texts: &[&str]) -> Arc<Vocabulary> {
        let us: Vec<Utterance> = texts.iter().map(|t| tokenize(t).unwrap()).collect();
        Arc::new(Vocabulary::from_utterances(&us, 1))
    }

    fn small_cfg() -> LmTrainConfig {
        LmTrainConfig { embed_dim: 8, hidden_dim: 12, label_dim: 4, epochs: 2, batch_size: 4, seed: 1, ..Default::default() }
    }

    fn loss_of(m: &RnnLm<f64>, ex: &LmExample) -> f64 {
        m.forward_example(ex, None).0
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let vocab = vocab_of(&["a b c", "c a"]);
        let labels = LabelSet::new(["x".to_string(), "y".to_string()]);
        let m: RnnLm<f64> = RnnLm::init(vocab.clone(), Some(labels), &small_cfg());
        let ex = LmExample { ids: vocab.encode(&tokenize("a c b").unwrap()), label: 1 };
        let mut grads: Vec<Vec<f64>> = m.tensor_lens().iter().map(|&n| vec![0.0; n]).collect();
        let (l, n) = m.forward_example(&ex, Some(&mut grads));
        assert_eq!(n, 4);
        assert!((l - loss_of(&m, &ex)).abs() < 1e-12);
        let h = 1e-6;
        for (ti, g) in grads.iter().enumerate() {
            for i in (0..g.len()).step_by(7) {
                let mut p = m.clone();
                let mut q = m.clone();
                p.tensors_mut()[ti][i] += h;
                q.tensors_mut()[ti][i] -= h;
                let fd = (loss_of(&p, &ex) - loss_of(&q, &ex)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "tensor {ti} idx {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn distributions_normalize_and_fast_paths_agree() {
        let vocab = vocab_of(&["set an alarm", "play some music"]);
        let labels = LabelSet::new(["alarm".to_string(), "music".to_string()]);
        let m: RnnLm<f64> = RnnLm::init(vocab, Some(labels.clone()), &small_cfg());
        let u = tokenize("play an unknownword alarm").unwrap();
        let y = labels.by_name("music").unwrap();
        let fast = ClassConditionalLm::token_log_probs(&m, &u, &y).unwrap();
        for (j, &v) in fast.iter().enumerate() {
            let d = ClassConditionalLm::prefix_distribution(&m, &u.tokens()[..j], &y).unwrap();
            assert!((d.total_mass() - 1.0).abs() < 1e-9);
            assert!((d.log_prob(&u.tokens()[j]) - v).abs() < 1e-12);
        }
        let prior = LabelPrior::new(labels.clone(), vec![0.25, 0.75]).unwrap();
        let prefix = &u.tokens()[..2];
        let mix = m.mixture_distribution(prefix, &prior).unwrap();
        assert!((mix.total_mass() - 1.0).abs() < 1e-9);
        let tok = Token::new("alarm").unwrap();
        let slow = super::super::mixture_log_prob(&m, prefix, &tok, &prior).unwrap();
        assert!((mix.log_prob(&tok) - slow).abs() < 1e-12);
    }

    #[test]
    fn background_and_conditional_roles_are_enforced() {
        let vocab = vocab_of(&["a b"]);
        let bg: RnnLm<f64> = RnnLm::init(vocab.clone(), None, &small_cfg());
        let label = IntentLabel::new("x", 0);
        assert!(ClassConditionalLm::prefix_distribution(&bg, &[], &label).is_err());
        assert!((CausalLm::prefix_distribution(&bg, &[]).unwrap().total_mass() - 1.0).abs() < 1e-9);
        let cc: RnnLm<f64> = RnnLm::init(vocab, Some(LabelSet::new(["x".to_string()])), &small_cfg());
        assert!(CausalLm::prefix_distribution(&cc, &[]).is_err());
        assert!(ClassConditionalLm::prefix_distribution(&cc, &[], &IntentLabel::new("z", 3)).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let vocab = vocab_of(&["a b"]);
        let m: RnnLm<f64> = RnnLm::init(vocab, Some(LabelSet::new(["x".to_string(), "y".to_string()])), &small_cfg());
        let back = RnnLm::<f64>::from_checkpoint(&Checkpoint::from_bytes(&m.to_checkpoint().to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(m, back);
    }
}
