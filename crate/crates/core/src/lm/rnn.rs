//! Elman recurrent cell and dense output layer with hand-written backprop.

use rand::Rng;

use crate::nn::{add_assign, add_outer, add_transpose_mul, affine, init_uniform};
use crate::scalar::Scalar;

/// `h_t = tanh(W_x e(x_t) + W_h h_{t-1} + b)`, `h_0 = 0`.
///
/// Parameters are one flat vector laid out as embeddings `[V x D]`, `W_x`
/// `[H x D]`, `W_h` `[H x H]`, `b` `[H]`.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct RnnCell<S> {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> RnnCell<S> {
    pub fn num_params(vocab: usize, embed: usize, hidden: usize) -> usize {
        vocab * embed + hidden * embed + hidden * hidden + hidden
    }

    pub fn init<R: Rng>(vocab: usize, embed: usize, hidden: usize, rng: &mut R) -> Self {
        let mut cell = RnnCell { vocab, embed, hidden, data: vec![S::zero(); Self::num_params(vocab, embed, hidden)] };
        let (e, wx, wh, _) = cell.split_mut();
        init_uniform(e, 1, rng);
        init_uniform(wx, embed, rng);
        init_uniform(wh, hidden, rng);
        cell
    }

    fn offsets(&self) -> [usize; 4] {
        let e = self.vocab * self.embed;
        let wx = e + self.hidden * self.embed;
        let wh = wx + self.hidden * self.hidden;
        [e, wx, wh, wh + self.hidden]
    }

    fn split(&self) -> (&[S], &[S], &[S], &[S]) {
        let [a, b, c, _] = self.offsets();
        let (e, rest) = self.data.split_at(a);
        let (wx, rest) = rest.split_at(b - a);
        let (wh, bias) = rest.split_at(c - b);
        (e, wx, wh, bias)
    }

    fn split_mut(&mut self) -> (&mut [S], &mut [S], &mut [S], &mut [S]) {
        let [a, b, c, _] = self.offsets();
        let (e, rest) = self.data.split_at_mut(a);
        let (wx, rest) = rest.split_at_mut(b - a);
        let (wh, bias) = rest.split_at_mut(c - b);
        (e, wx, wh, bias)
    }

    fn embedding(&self, id: u32) -> &[S] {
        let d = self.embed;
        &self.data[id as usize * d..(id as usize + 1) * d]
    }

    /// Hidden states after each input: `states[t] = h_{t+1}`.
    pub fn forward(&self, ids: &[u32]) -> Vec<Vec<S>> {
        let (_, wx, wh, b) = self.split();
        let mut states: Vec<Vec<S>> = Vec::with_capacity(ids.len());
        let zero = vec![S::zero(); self.hidden];
        let mut pre = vec![S::zero(); self.hidden];
        for &id in ids {
            let prev = states.last().unwrap_or(&zero);
            affine(wx, b, self.embedding(id), &mut pre);
            let mut rec = vec![S::zero(); self.hidden];
            add_mul(wh, prev, &mut rec);
            states.push(pre.iter().zip(&rec).map(|(&p, &r)| (p + r).tanh()).collect());
        }
        states
    }

    /// Backpropagation through time. `dstates[t]` is the loss gradient with
    /// respect to `states[t]`; parameter gradients accumulate into `grad`.
    pub fn backward(&self, ids: &[u32], states: &[Vec<S>], dstates: &[Vec<S>], grad: &mut [S]) {
        let (_, wx, wh, _) = self.split();
        let [off_e, off_wx, off_wh, _] = self.offsets();
        let (d, h) = (self.embed, self.hidden);
        let zero = vec![S::zero(); h];
        let mut carry = vec![S::zero(); h];
        let mut dx = vec![S::zero(); d];
        for t in (0..ids.len()).rev() {
            let da: Vec<S> = states[t]
                .iter()
                .zip(&dstates[t])
                .zip(&carry)
                .map(|((&s, &g), &c)| (g + c) * (S::one() - s * s))
                .collect();
            let prev = if t == 0 { &zero } else { &states[t - 1] };
            let x = self.embedding(ids[t]);
            add_assign(&mut grad[off_wh..off_wh + h], &da);
            add_outer(&mut grad[off_e..off_wx], &da, x);
            add_outer(&mut grad[off_wx..off_wh], &da, prev);
            dx.iter_mut().for_each(|v| *v = S::zero());
            add_transpose_mul(wx, &da, &mut dx);
            let id = ids[t] as usize;
            add_assign(&mut grad[id * d..(id + 1) * d], &dx);
            carry.iter_mut().for_each(|v| *v = S::zero());
            add_transpose_mul(wh, &da, &mut carry);
        }
    }
}

/// `out += W · x` for row-major `W`.
fn add_mul<S: Scalar>(w: &[S], x: &[S], out: &mut [S]) {
    let n = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = w[r * n..(r + 1) * n].iter().zip(x).fold(*o, |acc, (&a, &b)| acc + a * b);
    }
}

/// Dense layer `y = W x + b`, stored as `W` `[out x in]` followed by `b`.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Linear<S> {
    pub input: usize,
    pub output: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let mut data = vec![S::zero(); output * input + output];
        init_uniform(&mut data[..output * input], input, rng);
        Linear { input, output, data }
    }

    pub fn weights(&self) -> &[S] {
        &self.data[..self.output * self.input]
    }

    pub fn bias(&self) -> &[S] {
        &self.data[self.output * self.input..]
    }

    pub fn forward(&self, x: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.output];
        affine(self.weights(), self.bias(), x, &mut out);
        out
    }

    /// `W[:, cols] · x_part` without bias, for a contiguous column block.
    pub fn partial(&self, cols: std::ops::Range<usize>, x_part: &[S]) -> Vec<S> {
        let w = self.weights();
        (0..self.output)
            .map(|r| {
                let row = &w[r * self.input + cols.start..r * self.input + cols.end];
                row.iter().zip(x_part).fold(S::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward(&self, x: &[S], dy: &[S], grad: &mut [S]) -> Vec<S> {
        let nw = self.output * self.input;
        add_outer(&mut grad[..nw], dy, x);
        add_assign(&mut grad[nw..], dy);
        let mut dx = vec![S::zero(); self.input];
        add_transpose_mul(self.weights(), dy, &mut dx);
        dx
    }
}
