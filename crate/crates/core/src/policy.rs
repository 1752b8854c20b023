//! Log-linear autoregressive policy over the response vocabulary.
//!
//! Next-token logits are a sum of table slices selected by the decoding
//! state: a structural table indexed by (task, closed blocks, offset), an
//! evidence and a rating table indexed by (dimension, feature bucket), a
//! copy table mapping the evidence mode to a rating, and a verdict table
//! indexed by (dimension, rating difference) that is active only where the
//! final pairwise verdict is emitted.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{ResponseGrammar, Token, TokenSeq};
use crate::rng::StreamRng;
use crate::world::Verdict;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub grammar: ResponseGrammar,
    pub n_buckets: usize,
}

impl Default for PolicyShape {
    fn default() -> Self {
        PolicyShape {
            grammar: ResponseGrammar::default(),
            n_buckets: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Scdr,
    Hcr,
}

impl Task {
    fn index(self) -> usize {
        match self {
            Task::Scdr => 0,
            Task::Hcr => 1,
        }
    }
}

impl PolicyShape {
    pub fn validate(&self) -> Result<()> {
        let g = &self.grammar;
        if g.n_dims == 0 || g.rating_levels < 2 || g.max_len < 6 || self.n_buckets == 0 {
            return Err(Error::Config(format!("degenerate policy shape {self:?}")));
        }
        Ok(())
    }

    pub fn vocab(&self) -> usize {
        self.grammar.vocab_size()
    }

    fn d(&self) -> usize {
        self.grammar.n_dims
    }

    fn k(&self) -> usize {
        self.grammar.rating_levels as usize
    }

    fn l(&self) -> usize {
        self.grammar.max_len
    }

    fn structural_len(&self) -> usize {
        2 * (self.d() + 1) * self.l() * self.vocab()
    }

    fn content_len(&self) -> usize {
        self.d() * self.n_buckets * self.k()
    }

    fn evidence_base(&self) -> usize {
        self.structural_len()
    }

    fn rating_base(&self) -> usize {
        self.evidence_base() + self.content_len()
    }

    fn copy_base(&self) -> usize {
        self.rating_base() + self.content_len()
    }

    fn verdict_base(&self) -> usize {
        self.copy_base() + self.k() * self.k()
    }

    pub fn n_params(&self) -> usize {
        self.verdict_base() + self.d() * (2 * self.k() - 1) * 3
    }

    /// Parameter range shared between the two stages (evidence, rating and
    /// copy tables).
    pub fn transferable(&self) -> std::ops::Range<usize> {
        self.evidence_base()..self.verdict_base()
    }

    pub fn bucket(&self, feature: f64) -> usize {
        ((feature * self.n_buckets as f64).floor().max(0.0) as usize).min(self.n_buckets - 1)
    }

    fn vocab_of(&self, t: Token) -> usize {
        self.grammar.index_of(t).expect("token within grammar")
    }

    fn structural(&self, task: Task, block: usize, offset: usize) -> Feature {
        let block = block.min(self.d());
        let offset = offset.min(self.l() - 1);
        Feature {
            param: ((task.index() * (self.d() + 1) + block) * self.l() + offset) * self.vocab(),
            vocab: 0,
            len: self.vocab(),
        }
    }

    fn evidence(&self, dim: usize, bucket: usize) -> Feature {
        Feature {
            param: self.evidence_base() + (dim * self.n_buckets + bucket) * self.k(),
            vocab: self.vocab_of(Token::Evid(1)),
            len: self.k(),
        }
    }

    fn rating(&self, dim: usize, bucket: usize) -> Feature {
        Feature {
            param: self.rating_base() + (dim * self.n_buckets + bucket) * self.k(),
            vocab: self.vocab_of(Token::Rate(1)),
            len: self.k(),
        }
    }

    fn copy(&self, mode: u8) -> Feature {
        Feature {
            param: self.copy_base() + (mode as usize - 1) * self.k(),
            vocab: self.vocab_of(Token::Rate(1)),
            len: self.k(),
        }
    }

    fn verdict(&self, dim: usize, rating_a: u8, rating_b: u8) -> Feature {
        let diff = rating_a as usize + self.k() - 1 - rating_b as usize;
        Feature {
            param: self.verdict_base() + (dim * (2 * self.k() - 1) + diff) * 3,
            vocab: self.vocab_of(Token::Prefer(Verdict::A)),
            len: 3,
        }
    }
}

/// A parameter slice added onto a contiguous run of logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Feature {
    pub param: usize,
    pub vocab: usize,
    pub len: usize,
}

/// What the policy is asked to judge.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicyInput {
    /// Rate one dimension of one video.
    Scdr { dim: usize, video: Vec<f64> },
    /// Compare two videos: one section of blocks per video, the second
    /// section's verdict is the pairwise prediction.
    Hcr { a: Vec<f64>, b: Vec<f64> },
}

impl PolicyInput {
    pub fn task(&self) -> Task {
        match self {
            PolicyInput::Scdr { .. } => Task::Scdr,
            PolicyInput::Hcr { .. } => Task::Hcr,
        }
    }

    fn check(&self, shape: &PolicyShape) -> Result<()> {
        let d = shape.d();
        let ok = match self {
            PolicyInput::Scdr { dim, video } => *dim < d && video.len() == d,
            PolicyInput::Hcr { a, b } => a.len() == d && b.len() == d,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!(
                "policy input does not match a {d}-dimension policy"
            )))
        }
    }
}

/// Decoding state: everything the logit features depend on.
struct Tracker<'a> {
    shape: &'a PolicyShape,
    input: &'a PolicyInput,
    section: usize,
    section_len: usize,
    blocks_closed: usize,
    offset: usize,
    block_dim: Option<usize>,
    block_rate: Option<u8>,
    evidence: Vec<u32>,
    ratings: [Vec<Option<u8>>; 2],
    prev: Option<Token>,
    done: bool,
}

impl<'a> Tracker<'a> {
    fn new(shape: &'a PolicyShape, input: &'a PolicyInput) -> Self {
        Tracker {
            shape,
            input,
            section: 0,
            section_len: 0,
            blocks_closed: 0,
            offset: 0,
            block_dim: None,
            block_rate: None,
            evidence: vec![0; shape.k() + 1],
            ratings: [vec![None; shape.d()], vec![None; shape.d()]],
            prev: None,
            done: false,
        }
    }

    fn evidence_mode(&self) -> Option<u8> {
        let best = *self.evidence.iter().max()?;
        (best > 0).then(|| self.evidence.iter().position(|c| *c == best).unwrap() as u8)
    }

    /// Content slices are gated by the previous token so they only act
    /// where the grammar admits evidence or a rating next.
    fn features(&self) -> Vec<Feature> {
        let s = self.shape;
        let mut out = Vec::with_capacity(4 + s.d());
        let (evidence_slot, rating_slot) = match (self.input.task(), self.prev) {
            (Task::Scdr, Some(Token::OpenThink | Token::Filler(_) | Token::Evid(_))) => {
                (true, false)
            }
            (Task::Scdr, Some(Token::OpenAnswer)) => (false, true),
            (Task::Hcr, Some(Token::DimMark(_))) => (true, false),
            (Task::Hcr, Some(Token::Evid(_))) => (true, true),
            _ => (false, false),
        };
        let content = match self.input {
            PolicyInput::Scdr { dim, video } => {
                out.push(s.structural(Task::Scdr, 0, self.section_len));
                Some((*dim, s.bucket(video[*dim])))
            }
            PolicyInput::Hcr { a, b } => {
                out.push(s.structural(Task::Hcr, self.blocks_closed, self.offset));
                if self.section == 1 && self.offset == 0 && self.blocks_closed >= s.d() {
                    for d in 0..s.d() {
                        if let (Some(ra), Some(rb)) = (self.ratings[0][d], self.ratings[1][d]) {
                            out.push(s.verdict(d, ra, rb));
                        }
                    }
                }
                let video = if self.section == 0 { a } else { b };
                self.block_dim.map(|d| (d, s.bucket(video[d])))
            }
        };
        if let Some((d, bucket)) = content {
            if evidence_slot {
                out.push(s.evidence(d, bucket));
            }
            if rating_slot {
                out.push(s.rating(d, bucket));
                if let Some(m) = self.evidence_mode() {
                    out.push(s.copy(m));
                }
            }
        }
        out
    }

    fn reset_block(&mut self) {
        self.block_dim = None;
        self.block_rate = None;
        self.evidence.iter_mut().for_each(|c| *c = 0);
    }

    fn push(&mut self, t: Token) {
        let l = self.shape.l();
        self.section_len += 1;
        self.offset += 1;
        self.prev = Some(t);
        match t {
            Token::Evid(k) => self.evidence[k as usize] += 1,
            Token::Rate(k) => self.block_rate = Some(k),
            Token::DimMark(d) => self.block_dim = Some(d as usize),
            Token::OpenDim => self.reset_block(),
            Token::CloseDim => {
                if let (Some(d), Some(r)) = (self.block_dim, self.block_rate) {
                    self.ratings[self.section][d] = Some(r);
                }
                self.reset_block();
                self.blocks_closed += 1;
                self.offset = 0;
            }
            _ => {}
        }
        let section_over = match self.input.task() {
            Task::Scdr => t == Token::CloseAnswer,
            Task::Hcr => matches!(t, Token::Prefer(_)),
        } || self.section_len >= l;
        if section_over {
            if self.input.task() == Task::Hcr && self.section == 0 {
                self.section = 1;
                self.section_len = 0;
                self.blocks_closed = 0;
                self.offset = 0;
                self.prev = None;
                self.reset_block();
            } else {
                self.done = true;
            }
        }
    }
}

/// A decoded response together with the per-token contexts it visited.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub tokens: Vec<Token>,
    /// Length of the first section (the whole response for single-dimension tasks).
    pub split: usize,
    pub contexts: Vec<Vec<Feature>>,
    /// Log-probability of each token under the decoding policy.
    pub logprobs: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn first_section(&self) -> TokenSeq {
        TokenSeq(self.tokens[..self.split].to_vec())
    }

    pub fn second_section(&self) -> TokenSeq {
        TokenSeq(self.tokens[self.split..].to_vec())
    }

    pub fn seq(&self) -> TokenSeq {
        TokenSeq(self.tokens.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub shape: PolicyShape,
    pub params: Vec<f64>,
}

impl Policy {
    pub fn zeros(shape: PolicyShape) -> Result<Self> {
        shape.validate()?;
        Ok(Policy {
            shape,
            params: vec![0.0; shape.n_params()],
        })
    }

    /// A policy that already favours the response templates: every
    /// structural state gives `strength` to the token class the template
    /// expects there, uniformly over that class. Content tables start at
    /// zero, so ratings and verdicts are uninformed.
    pub fn with_format_prior(shape: PolicyShape, strength: f64) -> Result<Self> {
        let mut p = Policy::zeros(shape)?;
        let g = shape.grammar;
        let k = g.rating_levels;
        let evid: Vec<Token> = (1..=k).map(Token::Evid).collect();
        let rate: Vec<Token> = (1..=k).map(Token::Rate).collect();
        let scdr: [Vec<Token>; 6] = [
            vec![Token::OpenThink],
            evid.clone(),
            vec![Token::CloseThink],
            vec![Token::OpenAnswer],
            rate.clone(),
            vec![Token::CloseAnswer],
        ];
        for (pos, class) in scdr.iter().enumerate() {
            p.bonus(shape.structural(Task::Scdr, 0, pos), class, strength);
        }
        for b in 0..g.n_dims {
            let block: [Vec<Token>; 5] = [
                vec![Token::OpenDim],
                vec![Token::DimMark(b as u8)],
                evid.clone(),
                rate.clone(),
                vec![Token::CloseDim],
            ];
            for (off, class) in block.iter().enumerate() {
                p.bonus(shape.structural(Task::Hcr, b, off), class, strength);
            }
        }
        let verdicts: Vec<Token> = Verdict::ALL.iter().map(|v| Token::Prefer(*v)).collect();
        p.bonus(
            shape.structural(Task::Hcr, g.n_dims, 0),
            &verdicts,
            strength,
        );
        Ok(p)
    }

    fn bonus(&mut self, f: Feature, class: &[Token], strength: f64) {
        for t in class {
            let v = self.shape.vocab_of(*t);
            self.params[f.param + v - f.vocab] += strength;
        }
    }

    /// Copies the evidence, rating and copy tables from `other`.
    pub fn transfer_content(&mut self, other: &Policy) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Input("cannot transfer between policy shapes".into()));
        }
        let r = self.shape.transferable();
        self.params[r.clone()].copy_from_slice(&other.params[r]);
        Ok(())
    }

    pub fn logits(&self, features: &[Feature], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for f in features {
            let src = &self.params[f.param..f.param + f.len];
            for (o, s) in out[f.vocab..f.vocab + f.len].iter_mut().zip(src) {
                *o += *s;
            }
        }
    }

    /// Log-probabilities of the next token for the given context.
    pub fn log_probs(&self, features: &[Feature], out: &mut [f64]) {
        self.logits(features, out);
        log_softmax_in_place(out);
    }

    pub fn sample(&self, input: &PolicyInput, rng: &mut StreamRng) -> Result<Trajectory> {
        self.decode(input, |lp| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, x) in lp.iter().enumerate() {
                acc += x.exp();
                if u < acc {
                    return i;
                }
            }
            lp.len() - 1
        })
    }

    /// Most likely token at every step; ties resolve to the lowest index.
    pub fn greedy(&self, input: &PolicyInput) -> Result<Trajectory> {
        self.decode(input, |lp| {
            let mut best = 0;
            for (i, x) in lp.iter().enumerate() {
                if *x > lp[best] {
                    best = i;
                }
            }
            best
        })
    }

    fn decode(
        &self,
        input: &PolicyInput,
        mut choose: impl FnMut(&[f64]) -> usize,
    ) -> Result<Trajectory> {
        input.check(&self.shape)?;
        let mut tracker = Tracker::new(&self.shape, input);
        let mut lp = vec![0.0; self.shape.vocab()];
        let mut traj = Trajectory {
            tokens: Vec::new(),
            split: 0,
            contexts: Vec::new(),
            logprobs: Vec::new(),
        };
        while !tracker.done {
            let feats = tracker.features();
            self.log_probs(&feats, &mut lp);
            let idx = choose(&lp);
            let tok = self.shape.grammar.token_at(idx);
            traj.tokens.push(tok);
            traj.contexts.push(feats);
            traj.logprobs.push(lp[idx]);
            let section = tracker.section;
            tracker.push(tok);
            if section == 0 && (tracker.section == 1 || tracker.done) {
                traj.split = traj.tokens.len();
            }
        }
        Ok(traj)
    }

    /// Re-scores a trajectory's tokens under this policy.
    pub fn token_logprobs(&self, traj: &Trajectory) -> Vec<f64> {
        let mut lp = vec![0.0; self.shape.vocab()];
        traj.tokens
            .iter()
            .zip(&traj.contexts)
            .map(|(t, feats)| {
                self.log_probs(feats, &mut lp);
                lp[self.shape.vocab_of(*t)]
            })
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|x| x.is_finite())
    }
}

pub fn log_softmax_in_place(x: &mut [f64]) {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.iter_mut().for_each(|v| *v -= lse);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn shape() -> PolicyShape {
        PolicyShape::default()
    }

    #[test]
    fn feature_slices_stay_inside_the_parameter_vector() {
        let s = shape();
        let n = s.n_params();
        let v = s.vocab();
        let check = |f: Feature| {
            assert!(f.param + f.len <= n);
            assert!(f.vocab + f.len <= v);
        };
        check(s.structural(Task::Hcr, 99, 999));
        check(s.evidence(4, 9));
        check(s.rating(4, 9));
        check(s.copy(5));
        check(s.verdict(4, 1, 5));
        check(s.verdict(4, 5, 1));
        assert_eq!(s.verdict(0, 5, 1).param + 3, s.verdict(1, 1, 5).param);
    }

    #[test]
    fn greedy_prior_follows_templates() {
        let p = Policy::with_format_prior(shape(), 4.5).unwrap();
        let g = shape().grammar;
        let t = p
            .greedy(&PolicyInput::Scdr {
                dim: 2,
                video: vec![0.5; 5],
            })
            .unwrap();
        assert_eq!(g.format_score_scdr(&t.seq()), 1);
        assert_eq!(t.split, t.len());
        let h = p
            .greedy(&PolicyInput::Hcr {
                a: vec![0.1; 5],
                b: vec![0.9; 5],
            })
            .unwrap();
        assert_eq!(h.split, 26);
        assert_eq!(h.len(), 52);
        for sec in [h.first_section(), h.second_section()] {
            assert_eq!(g.hier_format_score(&sec), 1);
            assert_eq!(g.dim_format_score(&sec), 1.0);
        }
    }

    #[test]
    fn sampling_is_reproducible_and_bounded() {
        let p = Policy::with_format_prior(shape(), 1.0).unwrap();
        let input = PolicyInput::Hcr {
            a: vec![0.3; 5],
            b: vec![0.6; 5],
        };
        let t1 = p.sample(&input, &mut rng::stream(3, "t", 0)).unwrap();
        let t2 = p.sample(&input, &mut rng::stream(3, "t", 0)).unwrap();
        assert_eq!(t1, t2);
        assert!(t1.split <= 32 && t1.len() - t1.split <= 32);
        let relp = p.token_logprobs(&t1);
        for (a, b) in relp.iter().zip(&t1.logprobs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn verdict_features_read_both_sections() {
        let s = shape();
        let input = PolicyInput::Hcr {
            a: vec![0.95; 5],
            b: vec![0.05; 5],
        };
        let p = Policy::with_format_prior(s, 6.0).unwrap();
        let h = p.greedy(&input).unwrap();
        let last = h.contexts.last().unwrap();
        // structural slice plus one verdict slice per dimension
        assert_eq!(last.len(), 1 + 5);
        assert_eq!(last[1], s.verdict(0, 1, 1));
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let p = Policy::zeros(shape()).unwrap();
        assert!(p
            .greedy(&PolicyInput::Scdr {
                dim: 5,
                video: vec![0.5; 5]
            })
            .is_err());
        assert!(p
            .greedy(&PolicyInput::Hcr {
                a: vec![0.5; 4],
                b: vec![0.5; 5]
            })
            .is_err());
    }

    #[test]
    fn transfer_copies_content_only() {
        let s = shape();
        let mut a = Policy::zeros(s).unwrap();
        let mut b = Policy::zeros(s).unwrap();
        b.params
            .iter_mut()
            .enumerate()
            .for_each(|(i, x)| *x = i as f64);
        a.transfer_content(&b).unwrap();
        let r = s.transferable();
        assert!(a.params[..r.start].iter().all(|x| *x == 0.0));
        assert!(a.params[r.end..].iter().all(|x| *x == 0.0));
        assert_eq!(a.params[r.clone()], b.params[r]);
    }
}
