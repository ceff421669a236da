// SPDX-License-Identifier: MIT OR Apache-2.0

//! Packing text into fixed-width next-token-prediction rows.

use crate::error::{Error, Result};
use crate::task::Dataset;
use crate::tokenizer::Vocab;

/// One training row: `target[j]` is the token that follows `input[j]` in
/// the stream, or `None` for padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LmRow {
    pub input: Vec<usize>,
    pub target: Vec<Option<usize>>,
    /// Number of task answers that appear as targets in this row.
    pub answers: usize,
}

impl LmRow {
    pub fn target_count(&self) -> usize {
        self.target.iter().flatten().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LmStream {
    /// Length of the concatenated token stream.
    pub stream_len: usize,
    pub rows: Vec<LmRow>,
}

/// Packs whole samples (prompt then answer) into `context_window`-token
/// rows in dataset order. A sample never straddles two rows, so every
/// prompt starts at a multiple of the sample length. The final position of
/// a row has no target and the padded tail is masked from the loss.
pub fn make_lm_stream(dataset: &Dataset, vocab: &Vocab, context_window: usize) -> Result<LmStream> {
    if dataset.is_empty() {
        return Err(Error::Contract("cannot build a stream from an empty dataset".into()));
    }
    if context_window < 2 {
        return Err(Error::Config(format!("context window {context_window} is below 2")));
    }
    let answer_ids = |w: &str| vocab.id(w).expect("answer words are in the vocabulary");
    let mut rows = Vec::new();
    let mut tokens: Vec<usize> = Vec::with_capacity(context_window);
    let mut answer_at: Vec<bool> = Vec::with_capacity(context_window);
    let mut stream_len = 0;
    let flush = |tokens: &mut Vec<usize>, answer_at: &mut Vec<bool>, rows: &mut Vec<LmRow>| {
        let n = tokens.len();
        let mut target: Vec<Option<usize>> = (1..n).map(|j| Some(tokens[j])).collect();
        target.push(None);
        let answers = answer_at[1..].iter().filter(|&&a| a).count();
        let mut input = std::mem::take(tokens);
        input.resize(context_window, vocab.pad_id());
        target.resize(context_window, None);
        answer_at.clear();
        rows.push(LmRow { input, target, answers });
    };
    for t in &dataset.trials {
        let mut ids = vocab.encode_prompt(&t.prompt)?;
        ids.push(answer_ids(t.answer.as_str()));
        if ids.len() > context_window {
            return Err(Error::Config(format!(
                "context window {context_window} cannot hold a {}-token sample",
                ids.len()
            )));
        }
        if tokens.len() + ids.len() > context_window {
            flush(&mut tokens, &mut answer_at, &mut rows);
        }
        stream_len += ids.len();
        answer_at.extend(std::iter::repeat_n(false, ids.len() - 1));
        answer_at.push(true);
        tokens.extend(ids);
    }
    flush(&mut tokens, &mut answer_at, &mut rows);
    Ok(LmStream { stream_len, rows })
}

/// Splits `stream` into disjoint input rows of `context_window` tokens; the
/// final partial row is padded and its padding masked from the loss.
pub fn chunk_stream(stream: &[usize], is_answer: &[bool], context_window: usize, pad: usize) -> Result<LmStream> {
    if context_window < 2 {
        return Err(Error::Config(format!("context window {context_window} is below 2")));
    }
    if stream.len() < 2 {
        return Err(Error::Contract("stream needs at least two tokens".into()));
    }
    debug_assert_eq!(stream.len(), is_answer.len());
    // Inputs are stream[..n-1], targets stream[1..].
    let pairs = stream.len() - 1;
    let rows = (0..pairs)
        .step_by(context_window)
        .map(|start| {
            let end = (start + context_window).min(pairs);
            let mut input = stream[start..end].to_vec();
            let mut target: Vec<Option<usize>> = stream[start + 1..end + 1].iter().map(|&t| Some(t)).collect();
            let answers = is_answer[start + 1..end + 1].iter().filter(|&&a| a).count();
            input.resize(context_window, pad);
            target.resize(context_window, None);
            LmRow { input, target, answers }
        })
        .collect();
    Ok(LmStream {
        stream_len: stream.len(),
        rows,
    })
}

/// Concatenated corpus text as a stream, with no answer positions.
pub fn make_text_stream<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    vocab: &Vocab,
    context_window: usize,
) -> Result<LmStream> {
    let stream: Vec<usize> = texts.into_iter().flat_map(|t| vocab.encode(t)).collect();
    let is_answer = vec![false; stream.len()];
    chunk_stream(&stream, &is_answer, context_window, vocab.pad_id())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{generate_dataset, PROMPT_LEN};

    #[test]
    fn stream_layout() {
        let v = Vocab::standard();
        let ds = generate_dataset(20, 0.9, 4).unwrap();
        let sample = PROMPT_LEN + 1;
        let s = make_lm_stream(&ds, &v, 100).unwrap();
        assert_eq!(s.stream_len, 20 * sample);
        // Two samples fit in 100 tokens.
        assert_eq!(s.rows.len(), 10);
        let full: Vec<usize> = ds.trials.iter().flat_map(|t| v.encode(&t.full_text())).collect();
        for (i, r) in s.rows.iter().enumerate() {
            assert!(r.input.len() == 100 && r.target.len() == 100);
            assert_eq!(&r.input[..2 * sample], &full[2 * i * sample..2 * (i + 1) * sample]);
            for j in 0..2 * sample - 1 {
                assert_eq!(r.target[j], Some(r.input[j + 1]));
            }
            assert_eq!(r.target_count(), 2 * sample - 1);
            assert_eq!(r.answers, 2);
            // The answer target sits right after each "choose".
            assert_eq!(r.target[PROMPT_LEN - 1], Some(full[2 * i * sample + PROMPT_LEN]));
        }
    }

    #[test]
    fn mask_covers_exactly_the_padding() {
        let v = Vocab::standard();
        let ds = generate_dataset(7, 0.9, 4).unwrap();
        let s = make_lm_stream(&ds, &v, 256).unwrap();
        assert_eq!(s.rows.len(), 2);
        for r in &s.rows {
            let used = r.input.iter().take_while(|&&t| t != v.pad_id()).count();
            assert!(r.target[..used - 1].iter().all(Option::is_some));
            assert!(r.target[used - 1..].iter().all(Option::is_none));
            assert!(r.input[used..].iter().all(|&t| t == v.pad_id()));
        }
    }

    #[test]
    fn text_chunks_tile_the_stream() {
        let v = Vocab::standard();
        let text = ["The cat sees the dog .", "A value of 0.31 is low ."];
        let s = make_text_stream(text, &v, 5).unwrap();
        let full: Vec<usize> = text.iter().flat_map(|t| v.encode(t)).collect();
        let mut rebuilt: Vec<usize> = Vec::new();
        for r in &s.rows {
            let real = r.target_count();
            rebuilt.extend(&r.input[..real]);
            for j in 0..real {
                assert_eq!(r.target[j], Some(full[rebuilt.len() - real + j + 1]));
            }
        }
        assert_eq!(rebuilt, full[..full.len() - 1]);
    }

    #[test]
    fn window_too_small() {
        let v = Vocab::standard();
        let ds = generate_dataset(2, 0.9, 4).unwrap();
        assert!(matches!(make_lm_stream(&ds, &v, 1), Err(Error::Config(_))));
        assert!(matches!(make_lm_stream(&ds, &v, PROMPT_LEN), Err(Error::Config(_))));
    }
}
