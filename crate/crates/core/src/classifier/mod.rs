//! Intent classifier: logits, energy, detector and training objectives.

mod loss;
mod model;
mod train;

use std::path::Path;
use std::sync::Arc;

pub use loss::{
    cross_entropy_term, hinge_in_term, hinge_out_term, kl_uniform_term, objective, EncodedInd, EncodedOod,
    LossSpec,
};
pub use model::{Classifier, ClassifierGrad, ClassifierParams, ClassifierShape, HeadCache, HeadShape, MlpHead};
pub use train::{evaluate, select_delta, train, EpochStats, Selection, TrainObjective, TrainOutcome, TrainSchedule};

use crate::checkpoint::Checkpoint;
use crate::data::LabelSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const KIND: &str = "classifier";

impl<S: Scalar> Classifier<S> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({ "shape": self.shape, "scalar": std::any::type_name::<S>() });
        let mut ck = Checkpoint::new(KIND, &self.vocab, self.labels.names().to_vec(), meta);
        let p = &self.params;
        ck.push("embeddings", &[p.vocab_size, p.embed_dim], p.embeddings.iter().map(|x| x.as_f64()).collect());
        ck.push("head", &[p.head.data.len()], p.head.data.iter().map(|x| x.as_f64()).collect());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(KIND)?;
        let shape: ClassifierShape = serde_json::from_value(ck.meta["shape"].clone())?;
        let labels = LabelSet::ordered(ck.labels.clone())?;
        let vocab = Arc::new(ck.vocab.clone());
        let mut model = Classifier::new(vocab, labels, shape, 0);
        let emb = ck.tensor("embeddings")?;
        let head = ck.tensor("head")?;
        if emb.len() != model.params.embeddings.len() || head.len() != model.params.head.data.len() {
            return Err(Error::Checkpoint("tensor sizes do not match the stored shape".into()));
        }
        model.params.embeddings = emb.iter().map(|&x| S::lit(x)).collect();
        model.params.head.data = head.iter().map(|&x| S::lit(x)).collect();
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Token, Vocabulary};

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let vocab = Arc::new(Vocabulary::from_tokens(["a", "b"].iter().map(|s| Token::new(*s).unwrap())));
        let labels = LabelSet::new(["x".to_string(), "y".to_string()]);
        let m: Classifier<f64> = Classifier::new(vocab.clone(), labels.clone(), ClassifierShape::default(), 5);
        let back = Classifier::<f64>::from_checkpoint(&Checkpoint::from_bytes(&m.to_checkpoint().to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(m, back);
        let m32: Classifier<f32> = Classifier::new(vocab, labels, ClassifierShape { embed_dim: 3, hidden: None }, 5);
        let back32 = Classifier::<f32>::from_checkpoint(&m32.to_checkpoint()).unwrap();
        assert_eq!(m32, back32);
    }

    #[test]
    fn corrupt_checkpoint_is_rejected() {
        let vocab = Arc::new(Vocabulary::from_tokens(["a"].iter().map(|s| Token::new(*s).unwrap())));
        let m: Classifier<f64> = Classifier::new(vocab, LabelSet::new(["x".to_string()]), ClassifierShape::default(), 1);
        let mut bytes = m.to_checkpoint().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
