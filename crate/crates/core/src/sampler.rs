//! Concept/axis tuple sampling, prompt templates and concept-balanced
//! caption sampling.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::caption::{AxisSet, CaptionRecord};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptBank {
    concepts: Vec<String>,
    weights: Option<Vec<f64>>,
}

impl ConceptBank {
    pub fn new<I, S>(concepts: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let concepts: Vec<String> = concepts.into_iter().map(Into::into).collect();
        if concepts.is_empty() {
            return Err(Error::Empty("concept bank"));
        }
        let mut seen = HashSet::new();
        for c in &concepts {
            if c.trim().is_empty() {
                return Err(Error::invalid("concept bank contains an empty entry"));
            }
            if !seen.insert(c.as_str()) {
                return Err(Error::invalid(format!("duplicate concept {c:?}")));
            }
        }
        Ok(Self { concepts, weights: None })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.concepts.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} concepts",
                weights.len(),
                self.concepts.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("concept weights must be finite, non-negative and not all zero"));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    /// One concept per line; an optional tab-separated weight follows the
    /// concept. Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut concepts = Vec::new();
        let mut weights = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('\t') {
                Some((c, w)) => {
                    let w: f64 =
                        w.trim().parse().map_err(|_| Error::invalid(format!("line {}: bad weight {w:?}", n + 1)))?;
                    concepts.push(c.trim().to_owned());
                    weights.push(Some(w));
                }
                None => {
                    concepts.push(line.trim().to_owned());
                    weights.push(None);
                }
            }
        }
        let bank = Self::new(concepts)?;
        if weights.iter().all(Option::is_none) {
            return Ok(bank);
        }
        if weights.iter().any(Option::is_none) {
            return Err(Error::invalid("either every concept carries a weight or none does"));
        }
        bank.with_weights(weights.into_iter().flatten().collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub threshold: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(threshold: usize, seed: u64) -> Result<Self> {
        if threshold == 0 {
            return Err(Error::invalid("threshold must be at least 1"));
        }
        Ok(Self { threshold, seed })
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, seed: 0 }
    }
}

/// Draws `(concept, axis)`: the concept uniformly or by weight, the axis uniformly.
pub fn sample_control_tuple_with<R: Rng + ?Sized>(
    bank: &ConceptBank,
    axes: &AxisSet,
    rng: &mut R,
) -> Result<(String, String)> {
    if bank.is_empty() {
        return Err(Error::Empty("concept bank"));
    }
    if axes.is_empty() {
        return Err(Error::Empty("axis set"));
    }
    let c = match bank.weights() {
        Some(w) => {
            let dist = WeightedIndex::new(w).map_err(|e| Error::invalid(e.to_string()))?;
            dist.sample(rng)
        }
        None => rng.random_range(0..bank.len()),
    };
    let a = rng.random_range(0..axes.len());
    Ok((bank.concepts()[c].clone(), axes.as_slice()[a].clone()))
}

pub fn sample_control_tuple(bank: &ConceptBank, axes: &AxisSet, seed: u64) -> Result<(String, String)> {
    sample_control_tuple_with(bank, axes, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub const PROMPT_SLOTS: [&str; 4] = ["concept", "attribute", "caption", "axis"];

/// Values for the template slots; a slot used by a template must be set.
#[derive(Debug, Clone, Copy, Default)]
pub struct PromptValues<'a> {
    pub concept: Option<&'a str>,
    pub attribute: Option<&'a str>,
    pub caption: Option<&'a str>,
    pub axis: Option<&'a str>,
}

impl<'a> PromptValues<'a> {
    fn get(&self, slot: &str) -> Option<Option<&'a str>> {
        match slot {
            "concept" => Some(self.concept),
            "attribute" => Some(self.attribute),
            "caption" => Some(self.caption),
            "axis" => Some(self.axis),
            _ => None,
        }
    }
}

/// Substitutes `{slot}` markers. `{{` and `}}` produce literal braces.
pub fn render_template(template: &str, values: &PromptValues<'_>) -> Result<String> {
    if template.is_empty() {
        return Err(Error::invalid("empty template"));
    }
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(i) = rest.find(['{', '}']) {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        if let Some(after) = tail.strip_prefix("{{") {
            out.push('{');
            rest = after;
        } else if let Some(after) = tail.strip_prefix("}}") {
            out.push('}');
            rest = after;
        } else if tail.starts_with('}') {
            return Err(Error::invalid(format!("unmatched '}}' at byte {}", template.len() - tail.len())));
        } else {
            let end = tail
                .find('}')
                .ok_or_else(|| Error::invalid(format!("unterminated slot at byte {}", template.len() - tail.len())))?;
            let name = &tail[1..end];
            match values.get(name) {
                None => return Err(Error::invalid(format!("unknown template slot {{{name}}}"))),
                Some(None) => return Err(Error::invalid(format!("unresolved template slot {{{name}}}"))),
                Some(Some(v)) => out.push_str(v),
            }
            rest = &tail[end + 1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// `render_template` with the concept and axis set and an optional base caption.
/// The axis value also fills `{attribute}`.
pub fn render_prompt(template: &str, concept: &str, axis: &str, base_caption: Option<&str>) -> Result<String> {
    render_template(
        template,
        &PromptValues { concept: Some(concept), attribute: Some(axis), caption: base_caption, axis: Some(axis) },
    )
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// Case-insensitive whole-word matcher for a list of concepts. Multi-word
/// concepts match as consecutive tokens.
#[derive(Debug, Clone)]
pub struct ConceptMatcher {
    patterns: Vec<Vec<String>>,
}

impl ConceptMatcher {
    pub fn new(concepts: &[String]) -> Self {
        Self { patterns: concepts.iter().map(|c| tokens(c)).collect() }
    }

    /// Indices of the concepts present in `text`, ascending, each at most once.
    pub fn matches(&self, text: &str) -> Vec<usize> {
        let toks = tokens(text);
        self.patterns
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.is_empty() && toks.windows(p.len()).any(|w| w == p.as_slice()))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Number of captions mentioning each concept, in bank order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptHistogram {
    pub concepts: Vec<String>,
    pub counts: Vec<usize>,
}

impl ConceptHistogram {
    pub fn get(&self, concept: &str) -> Option<usize> {
        self.concepts.iter().position(|c| c == concept).map(|i| self.counts[i])
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn as_map(&self) -> HashMap<&str, usize> {
        self.concepts.iter().map(String::as_str).zip(self.counts.iter().copied()).collect()
    }
}

pub fn count_concepts(captions: &[CaptionRecord], bank: &ConceptBank) -> ConceptHistogram {
    let matcher = ConceptMatcher::new(bank.concepts());
    let counts = captions
        .par_iter()
        .fold(
            || vec![0usize; bank.len()],
            |mut acc, c| {
                for i in matcher.matches(&c.text) {
                    acc[i] += 1;
                }
                acc
            },
        )
        .reduce(
            || vec![0usize; bank.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    ConceptHistogram { concepts: bank.concepts().to_vec(), counts }
}

pub fn retention_probability(count: usize, threshold: usize) -> f64 {
    if count <= threshold {
        1.0
    } else {
        threshold as f64 / count as f64
    }
}

/// Keeps a caption when at least one of its matched concepts passes a
/// Bernoulli draw with probability `min(1, t/count(c))`. Captions matching no
/// concept are dropped. One draw is made per matched concept, captions in
/// input order, from a single seeded stream.
pub fn balanced_sample(
    captions: &[CaptionRecord],
    hist: &ConceptHistogram,
    cfg: &SamplerConfig,
) -> Result<Vec<CaptionRecord>> {
    if captions.is_empty() {
        return Err(Error::Empty("captions"));
    }
    if cfg.threshold == 0 {
        return Err(Error::invalid("threshold must be at least 1"));
    }
    let matcher = ConceptMatcher::new(&hist.concepts);
    let matched: Vec<Vec<usize>> = captions.par_iter().map(|c| matcher.matches(&c.text)).collect();
    let probs: Vec<f64> = hist.counts.iter().map(|&n| retention_probability(n, cfg.threshold)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut kept = Vec::new();
    for (caption, concepts) in captions.iter().zip(&matched) {
        let mut keep = false;
        for &c in concepts {
            keep |= rng.random::<f64>() < probs[c];
        }
        if keep {
            kept.push(caption.clone());
        }
    }
    Ok(kept)
}

/// Removes exact-text duplicates, keeping the first occurrence.
pub fn deduplicate(captions: &[CaptionRecord]) -> Vec<CaptionRecord> {
    let mut seen = HashSet::new();
    captions.iter().filter(|c| seen.insert(c.text.as_str())).cloned().collect()
}
