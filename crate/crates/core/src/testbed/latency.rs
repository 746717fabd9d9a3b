//! Mouth-to-ear latency accounting: the additive breakdown over protocol
//! steps, the fixed allowances for recording/playback, network, and the
//! audio stack, and the snippet-length search rule.

use thiserror::Error;

/// One-way network allowance added on top of the measured pipeline, in ms.
pub const NETWORK_ALLOWANCE_MS: f64 = 15.0;
/// Mobile audio-stack allowance, in ms.
pub const AUDIO_STACK_MS: f64 = 10.0;
/// A snippet is only long enough if mean worker processing stays within
/// this ratio of its length; beyond that, playback gaps exceed what
/// listeners tolerate.
pub const PROCESSING_RATIO_BOUND: f64 = 1.1;

#[derive(Debug, Error, PartialEq)]
pub enum SnippetSearchError {
    #[error("no candidate keeps the processing ratio within {PROCESSING_RATIO_BOUND}")]
    NoFeasible,
}

/// Additive latency model: milliseconds per pipeline step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyBreakdown {
    pub voice_encode: f64,
    pub encrypt: f64,
    pub c_to_r: f64,
    pub r_to_w: f64,
    pub preprocess: f64,
    pub pir_reply: f64,
    pub w_to_c: f64,
    pub pir_decode: f64,
    pub decrypt: f64,
    pub voice_decode: f64,
    /// Recording/playback (one snippet length) plus fixed network and
    /// audio-stack allowances.
    pub additional: f64,
}

/// `additional` column: snippet length + 15 ms network + 10 ms audio stack.
pub fn additional_ms(snippet_ms: f64) -> f64 {
    snippet_ms + NETWORK_ALLOWANCE_MS + AUDIO_STACK_MS
}

impl LatencyBreakdown {
    /// The ten measured pipeline steps, in table order.
    pub fn pipeline_parts(&self) -> [f64; 10] {
        [
            self.voice_encode,
            self.encrypt,
            self.c_to_r,
            self.r_to_w,
            self.preprocess,
            self.pir_reply,
            self.w_to_c,
            self.pir_decode,
            self.decrypt,
            self.voice_decode,
        ]
    }

    pub fn pipeline_ms(&self) -> f64 {
        self.pipeline_parts().iter().sum()
    }
}

/// Mouth-to-ear latency: measured pipeline plus the additional allowances.
pub fn mouth_to_ear(b: &LatencyBreakdown) -> f64 {
    b.pipeline_ms() + b.additional
}

/// Smallest snippet length whose measured mean worker processing time stays
/// within [`PROCESSING_RATIO_BOUND`]; `measure` returns the mean processing
/// time in ms for a candidate. Reports the ratio for every candidate tried.
pub fn find_snippet_length(
    candidates: &[u32],
    mut measure: impl FnMut(u32) -> f64,
) -> Result<(u32, Vec<(u32, f64)>), SnippetSearchError> {
    let mut tried = Vec::with_capacity(candidates.len());
    let mut chosen = None;
    for &c in candidates {
        let processing_ms = measure(c);
        let ratio = processing_ms / c as f64;
        tried.push((c, ratio));
        if chosen.is_none() && ratio <= PROCESSING_RATIO_BOUND {
            chosen = Some(c);
        }
    }
    match chosen {
        Some(c) => Ok((c, tried)),
        None => Err(SnippetSearchError::NoFeasible),
    }
}
