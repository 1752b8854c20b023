//! Token language for reward-model responses.
//!
//! Single-dimension responses follow
//! `<think> EVID+ </think> <answer> RATE </answer>` (fillers allowed inside
//! the think span). Hierarchical responses are a run of
//! `<dim> DIM EVID+ RATE </dim>` blocks closed by one `PREFER` verdict.
//! `EVID_k` stands for a piece of evidence pointing at rating `k`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::world::Verdict;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Token {
    OpenThink,
    CloseThink,
    OpenAnswer,
    CloseAnswer,
    OpenDim,
    CloseDim,
    DimMark(u8),
    Evid(u8),
    Rate(u8),
    Prefer(Verdict),
    Filler(u8),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::OpenThink => f.write_str("<think>"),
            Token::CloseThink => f.write_str("</think>"),
            Token::OpenAnswer => f.write_str("<answer>"),
            Token::CloseAnswer => f.write_str("</answer>"),
            Token::OpenDim => f.write_str("<dim>"),
            Token::CloseDim => f.write_str("</dim>"),
            Token::DimMark(d) => write!(f, "DIM_{d}"),
            Token::Evid(k) => write!(f, "EVID_{k}"),
            Token::Rate(k) => write!(f, "RATE_{k}"),
            Token::Prefer(v) => write!(f, "PREFER_{v}"),
            Token::Filler(i) => write!(f, "FILLER_{i}"),
        }
    }
}

impl FromStr for Token {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || Error::Input(format!("unknown token `{s}`"));
        let num = |rest: &str| rest.parse::<u8>().map_err(|_| unknown());
        Ok(match s {
            "<think>" => Token::OpenThink,
            "</think>" => Token::CloseThink,
            "<answer>" => Token::OpenAnswer,
            "</answer>" => Token::CloseAnswer,
            "<dim>" => Token::OpenDim,
            "</dim>" => Token::CloseDim,
            _ => {
                if let Some(rest) = s.strip_prefix("DIM_") {
                    Token::DimMark(num(rest)?)
                } else if let Some(rest) = s.strip_prefix("EVID_") {
                    Token::Evid(num(rest)?)
                } else if let Some(rest) = s.strip_prefix("RATE_") {
                    Token::Rate(num(rest)?)
                } else if let Some(rest) = s.strip_prefix("FILLER_") {
                    Token::Filler(num(rest)?)
                } else if let Some(rest) = s.strip_prefix("PREFER_") {
                    Token::Prefer(Verdict::parse(rest).ok_or_else(unknown)?)
                } else {
                    return Err(unknown());
                }
            }
        })
    }
}

/// An ordered response; textual form is whitespace-separated token names.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq(pub Vec<Token>);

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }
}

impl From<Vec<Token>> for TokenSeq {
    fn from(v: Vec<Token>) -> Self {
        TokenSeq(v)
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl FromStr for TokenSeq {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split_whitespace()
            .map(Token::from_str)
            .collect::<Result<Vec<_>, _>>()
            .map(TokenSeq)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("format error at token {position}: {reason}")]
pub struct FormatError {
    pub position: usize,
    pub reason: String,
}

fn fail<T>(position: usize, reason: impl Into<String>) -> Result<T, FormatError> {
    Err(FormatError {
        position,
        reason: reason.into(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedScdr {
    /// Ratings pointed at by the evidence tokens, in order.
    pub evidence: Vec<u8>,
    pub answer: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DimBlock {
    pub dim: u8,
    pub evidence: Vec<u8>,
    pub rating: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedHcr {
    pub blocks: Vec<DimBlock>,
    pub verdict: Verdict,
}

/// Vocabulary bounds and length limit shared by parsers and policies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseGrammar {
    pub n_dims: usize,
    pub rating_levels: u8,
    pub n_fillers: u8,
    pub max_len: usize,
}

impl Default for ResponseGrammar {
    fn default() -> Self {
        ResponseGrammar {
            n_dims: 5,
            rating_levels: 5,
            n_fillers: 2,
            max_len: 32,
        }
    }
}

const STRUCTURAL: [Token; 6] = [
    Token::OpenThink,
    Token::CloseThink,
    Token::OpenAnswer,
    Token::CloseAnswer,
    Token::OpenDim,
    Token::CloseDim,
];

impl ResponseGrammar {
    pub fn vocab_size(&self) -> usize {
        STRUCTURAL.len()
            + self.n_dims
            + 2 * self.rating_levels as usize
            + 3
            + self.n_fillers as usize
    }

    /// Dense index of a token, or `None` when it lies outside this vocabulary.
    pub fn index_of(&self, token: Token) -> Option<usize> {
        let d = self.n_dims;
        let k = self.rating_levels as usize;
        let base = STRUCTURAL.len();
        match token {
            Token::OpenThink => Some(0),
            Token::CloseThink => Some(1),
            Token::OpenAnswer => Some(2),
            Token::CloseAnswer => Some(3),
            Token::OpenDim => Some(4),
            Token::CloseDim => Some(5),
            Token::DimMark(x) => ((x as usize) < d).then_some(base + x as usize),
            Token::Evid(x) => (1..=k)
                .contains(&(x as usize))
                .then(|| base + d + x as usize - 1),
            Token::Rate(x) => (1..=k)
                .contains(&(x as usize))
                .then(|| base + d + k + x as usize - 1),
            Token::Prefer(v) => Some(
                base + d
                    + 2 * k
                    + match v {
                        Verdict::A => 0,
                        Verdict::B => 1,
                        Verdict::Tie => 2,
                    },
            ),
            Token::Filler(x) => (x < self.n_fillers).then(|| base + d + 2 * k + 3 + x as usize),
        }
    }

    pub fn token_at(&self, index: usize) -> Token {
        let d = self.n_dims;
        let k = self.rating_levels as usize;
        let base = STRUCTURAL.len();
        if index < base {
            STRUCTURAL[index]
        } else if index < base + d {
            Token::DimMark((index - base) as u8)
        } else if index < base + d + k {
            Token::Evid((index - base - d + 1) as u8)
        } else if index < base + d + 2 * k {
            Token::Rate((index - base - d - k + 1) as u8)
        } else if index < base + d + 2 * k + 3 {
            Token::Prefer(Verdict::ALL[index - base - d - 2 * k])
        } else {
            assert!(
                index < self.vocab_size(),
                "token index {index} out of range"
            );
            Token::Filler((index - base - d - 2 * k - 3) as u8)
        }
    }

    fn check_tokens(&self, seq: &TokenSeq) -> Result<(), FormatError> {
        if seq.len() > self.max_len {
            return fail(self.max_len, format!("longer than {} tokens", self.max_len));
        }
        for (i, t) in seq.0.iter().enumerate() {
            if self.index_of(*t).is_none() {
                return fail(i, format!("token {t} outside the vocabulary"));
            }
        }
        Ok(())
    }

    pub fn parse_scdr(&self, seq: &TokenSeq) -> Result<ParsedScdr, FormatError> {
        self.check_tokens(seq)?;
        let toks = seq.tokens();
        let mut pos = 0;
        let expect = |pos: usize, want: Token| -> Result<(), FormatError> {
            match toks.get(pos) {
                Some(t) if *t == want => Ok(()),
                Some(t) => fail(pos, format!("expected {want}, found {t}")),
                None => fail(pos, format!("expected {want}, found end of sequence")),
            }
        };
        expect(pos, Token::OpenThink)?;
        pos += 1;
        let mut evidence = Vec::new();
        loop {
            match toks.get(pos) {
                Some(Token::Evid(k)) => evidence.push(*k),
                Some(Token::Filler(_)) => {}
                Some(Token::CloseThink) => break,
                Some(t) => return fail(pos, format!("unexpected {t} inside <think>")),
                None => return fail(pos, "unterminated <think>"),
            }
            pos += 1;
        }
        if evidence.is_empty() {
            return fail(pos, "reasoning span has no evidence");
        }
        pos += 1;
        expect(pos, Token::OpenAnswer)?;
        pos += 1;
        let answer = match toks.get(pos) {
            Some(Token::Rate(k)) => *k,
            Some(t) => return fail(pos, format!("expected a rating, found {t}")),
            None => return fail(pos, "expected a rating, found end of sequence"),
        };
        pos += 1;
        expect(pos, Token::CloseAnswer)?;
        pos += 1;
        if pos != toks.len() {
            return fail(pos, "trailing tokens after </answer>");
        }
        Ok(ParsedScdr { evidence, answer })
    }

    /// `r_format`: 1 iff the single-dimension response parses.
    pub fn format_score_scdr(&self, seq: &TokenSeq) -> u8 {
        self.parse_scdr(seq).is_ok() as u8
    }

    pub fn parse_hcr(&self, seq: &TokenSeq) -> Result<ParsedHcr, FormatError> {
        self.check_tokens(seq)?;
        let toks = seq.tokens();
        let mut pos = 0;
        let mut blocks: Vec<DimBlock> = Vec::new();
        while toks.get(pos) == Some(&Token::OpenDim) {
            let end = block_end(toks, pos).ok_or(FormatError {
                position: pos,
                reason: "unterminated <dim> block".into(),
            })?;
            let block = parse_block(&toks[pos + 1..end], pos + 1)?;
            if blocks.iter().any(|b| b.dim == block.dim) {
                return fail(pos + 1, format!("duplicate block for DIM_{}", block.dim));
            }
            blocks.push(block);
            pos = end + 1;
        }
        if blocks.is_empty() {
            return fail(pos, "expected at least one <dim> block");
        }
        let verdict = match toks.get(pos) {
            Some(Token::Prefer(v)) => *v,
            Some(t) => return fail(pos, format!("expected a final verdict, found {t}")),
            None => return fail(pos, "missing final verdict"),
        };
        if pos + 1 != toks.len() {
            return fail(pos + 1, "trailing tokens after the verdict");
        }
        Ok(ParsedHcr { blocks, verdict })
    }

    /// `r_hier`: 1 iff the response is a contiguous run of `<dim>` blocks
    /// (at least one of them well formed) closed by a single verdict.
    pub fn hier_format_score(&self, seq: &TokenSeq) -> u8 {
        if self.check_tokens(seq).is_err() {
            return 0;
        }
        let toks = seq.tokens();
        let mut pos = 0;
        let mut any_valid = false;
        let mut n_blocks = 0;
        while toks.get(pos) == Some(&Token::OpenDim) {
            let Some(end) = block_end(toks, pos) else {
                return 0;
            };
            any_valid |= parse_block(&toks[pos + 1..end], pos + 1).is_ok();
            n_blocks += 1;
            pos = end + 1;
        }
        let closed = matches!(toks.get(pos), Some(Token::Prefer(_))) && pos + 1 == toks.len();
        (n_blocks > 0 && closed && any_valid) as u8
    }

    /// Per-dimension block validity: entry `d` is true iff exactly one block
    /// claims dimension `d` and that block is well formed. Blocks are found
    /// anywhere in the sequence, so partial credit survives a broken scaffold.
    pub fn dim_block_validity(&self, seq: &TokenSeq) -> Vec<bool> {
        let mut claims = vec![0usize; self.n_dims];
        let mut valid = vec![false; self.n_dims];
        if self.check_tokens(seq).is_err() {
            return valid;
        }
        let toks = seq.tokens();
        let mut pos = 0;
        while pos < toks.len() {
            if toks[pos] != Token::OpenDim {
                pos += 1;
                continue;
            }
            let Some(end) = block_end(toks, pos) else {
                pos += 1;
                continue;
            };
            let inner = &toks[pos + 1..end];
            if let Some(Token::DimMark(d)) = inner.first() {
                let d = *d as usize;
                claims[d] += 1;
                valid[d] = parse_block(inner, pos + 1).is_ok();
            }
            pos = end + 1;
        }
        for d in 0..self.n_dims {
            valid[d] &= claims[d] == 1;
        }
        valid
    }

    /// `r_dim`: fraction of the grammar's dimensions with a valid block.
    pub fn dim_format_score(&self, seq: &TokenSeq) -> f64 {
        let ok = self.dim_block_validity(seq).iter().filter(|v| **v).count();
        ok as f64 / self.n_dims as f64
    }
}

/// Position of the `</dim>` closing the block opened at `open`, if the block
/// ends before another block opens or the verdict appears.
fn block_end(toks: &[Token], open: usize) -> Option<usize> {
    for (i, t) in toks.iter().enumerate().skip(open + 1) {
        match t {
            Token::CloseDim => return Some(i),
            Token::OpenDim | Token::Prefer(_) => return None,
            _ => {}
        }
    }
    None
}

fn parse_block(inner: &[Token], offset: usize) -> Result<DimBlock, FormatError> {
    let dim = match inner.first() {
        Some(Token::DimMark(d)) => *d,
        _ => return fail(offset, "block must start with a dimension mark"),
    };
    let mut evidence = Vec::new();
    let mut i = 1;
    while let Some(Token::Evid(k)) = inner.get(i) {
        evidence.push(*k);
        i += 1;
    }
    if evidence.is_empty() {
        return fail(offset + i, "block has no evidence");
    }
    let rating = match inner.get(i) {
        Some(Token::Rate(k)) => *k,
        _ => return fail(offset + i, "block must end with a rating"),
    };
    if i + 1 != inner.len() {
        return fail(offset + i + 1, "unexpected tokens after the block rating");
    }
    Ok(DimBlock {
        dim,
        evidence,
        rating,
    })
}

/// Canonical serialization of a parsed response.
pub trait Render {
    fn render(&self) -> TokenSeq;
}

impl Render for ParsedScdr {
    fn render(&self) -> TokenSeq {
        let mut t = vec![Token::OpenThink];
        t.extend(self.evidence.iter().map(|k| Token::Evid(*k)));
        t.extend([
            Token::CloseThink,
            Token::OpenAnswer,
            Token::Rate(self.answer),
            Token::CloseAnswer,
        ]);
        TokenSeq(t)
    }
}

impl Render for ParsedHcr {
    fn render(&self) -> TokenSeq {
        let mut t = Vec::new();
        for b in &self.blocks {
            t.push(Token::OpenDim);
            t.push(Token::DimMark(b.dim));
            t.extend(b.evidence.iter().map(|k| Token::Evid(*k)));
            t.push(Token::Rate(b.rating));
            t.push(Token::CloseDim);
        }
        t.push(Token::Prefer(self.verdict));
        TokenSeq(t)
    }
}
