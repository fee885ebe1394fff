use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::config::TokenId;
use crate::error::{Error, Result};

/// Which part of the prompt (or output) a position belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenType {
    Sys,
    Img,
    Que,
    Out,
}

impl TokenType {
    pub const ALL: [TokenType; 4] = [
        TokenType::Sys,
        TokenType::Img,
        TokenType::Que,
        TokenType::Out,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TokenType::Sys => "sys",
            TokenType::Img => "img",
            TokenType::Que => "que",
            TokenType::Out => "out",
        }
    }
}

/// Contiguous partition of a token stream into system / image / question / output spans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanMap {
    pub sys: Range<usize>,
    pub img: Range<usize>,
    pub que: Range<usize>,
    pub out: Range<usize>,
}

impl SpanMap {
    /// Spans for a prompt of the given part lengths, with an empty output span.
    pub fn from_lengths(sys: usize, img: usize, que: usize) -> Self {
        let img_start = sys;
        let que_start = img_start + img;
        let out_start = que_start + que;
        Self {
            sys: 0..sys,
            img: img_start..que_start,
            que: que_start..out_start,
            out: out_start..out_start,
        }
    }

    pub fn len(&self) -> usize {
        self.out.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn span(&self, ty: TokenType) -> &Range<usize> {
        match ty {
            TokenType::Sys => &self.sys,
            TokenType::Img => &self.img,
            TokenType::Que => &self.que,
            TokenType::Out => &self.out,
        }
    }

    pub fn type_of(&self, position: usize) -> Option<TokenType> {
        TokenType::ALL
            .into_iter()
            .find(|&ty| self.span(ty).contains(&position))
    }

    /// Checks contiguity, ordering and exact coverage of `total_len` positions.
    pub fn validate(&self, total_len: usize) -> Result<()> {
        let ordered = self.sys.start == 0
            && self.sys.start <= self.sys.end
            && self.sys.end == self.img.start
            && self.img.start <= self.img.end
            && self.img.end == self.que.start
            && self.que.start <= self.que.end
            && self.que.end == self.out.start
            && self.out.start <= self.out.end;
        if !ordered {
            return Err(Error::Input(format!(
                "spans are not contiguous and ordered: {self:?}"
            )));
        }
        if self.out.end != total_len {
            return Err(Error::Input(format!(
                "spans cover {} positions but the sequence has {}",
                self.out.end, total_len
            )));
        }
        Ok(())
    }
}

/// A prompt plus everything generated so far.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    token_ids: Vec<TokenId>,
    spans: SpanMap,
}

impl TokenSequence {
    /// Concatenates `[sys][img][que]`. The system prompt and image span must be nonempty.
    pub fn from_prompt(sys: &[TokenId], img: &[TokenId], que: &[TokenId]) -> Result<Self> {
        if sys.is_empty() {
            return Err(Error::Input("system prompt span must be nonempty".into()));
        }
        if img.is_empty() {
            return Err(Error::Input("image span must be nonempty".into()));
        }
        let mut token_ids = Vec::with_capacity(sys.len() + img.len() + que.len());
        token_ids.extend_from_slice(sys);
        token_ids.extend_from_slice(img);
        token_ids.extend_from_slice(que);
        Ok(Self {
            token_ids,
            spans: SpanMap::from_lengths(sys.len(), img.len(), que.len()),
        })
    }

    pub fn from_parts(token_ids: Vec<TokenId>, spans: SpanMap) -> Result<Self> {
        spans.validate(token_ids.len())?;
        if spans.sys.is_empty() || spans.img.is_empty() {
            return Err(Error::Input(
                "system prompt and image spans must be nonempty".into(),
            ));
        }
        Ok(Self { token_ids, spans })
    }

    pub fn token_ids(&self) -> &[TokenId] {
        &self.token_ids
    }

    pub fn spans(&self) -> &SpanMap {
        &self.spans
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn generated(&self) -> &[TokenId] {
        &self.token_ids[self.spans.out.clone()]
    }

    /// Appends a generated token to the output span.
    pub fn push(&mut self, token: TokenId) {
        self.token_ids.push(token);
        self.spans.out.end += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_spans_cover_sequence() {
        let mut seq = TokenSequence::from_prompt(&[1, 2], &[3, 4, 5, 6], &[7, 8]).unwrap();
        assert_eq!(seq.spans().img, 2..6);
        assert_eq!(seq.spans().que, 6..8);
        assert!(seq.spans().out.is_empty());
        seq.push(9);
        seq.push(10);
        assert_eq!(seq.spans().out, 8..10);
        assert_eq!(seq.generated(), &[9, 10]);
        seq.spans().validate(seq.len()).unwrap();
        assert_eq!(seq.spans().type_of(0), Some(TokenType::Sys));
        assert_eq!(seq.spans().type_of(9), Some(TokenType::Out));
        assert_eq!(seq.spans().type_of(10), None);
    }

    #[test]
    fn empty_system_prompt_rejected() {
        assert!(TokenSequence::from_prompt(&[], &[1], &[2]).is_err());
        assert!(TokenSequence::from_prompt(&[1], &[], &[2]).is_err());
    }

    #[test]
    fn gapped_spans_rejected() {
        let spans = SpanMap {
            sys: 0..1,
            img: 2..3,
            que: 3..4,
            out: 4..4,
        };
        assert!(spans.validate(4).is_err());
        let spans = SpanMap::from_lengths(1, 2, 1);
        assert!(spans.validate(5).is_err());
        assert!(TokenSequence::from_parts(vec![0; 4], spans).is_ok());
    }
}
