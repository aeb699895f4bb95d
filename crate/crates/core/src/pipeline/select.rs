//! Header embeddings and farthest-first traversal.

use std::time::Duration;

use serde_json::json;
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::llmclient::HttpBackend;

pub const FALLBACK_DIMS: usize = 256;

pub trait EmbeddingProvider {
    fn embed(&self, header: &str) -> Result<Vec<f64>, PipelineError>;
}

/// Deterministic fallback: character trigrams hashed into 256 buckets.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrigramHashProvider;

fn bucket(gram: &str) -> usize {
    let d = Sha256::digest(gram.as_bytes());
    let mut word = [0u8; 8];
    word.copy_from_slice(&d[..8]);
    (u64::from_le_bytes(word) % FALLBACK_DIMS as u64) as usize
}

impl EmbeddingProvider for TrigramHashProvider {
    fn embed(&self, header: &str) -> Result<Vec<f64>, PipelineError> {
        let chars: Vec<char> = header.chars().collect();
        let mut v = vec![0.0; FALLBACK_DIMS];
        if chars.len() < 3 {
            v[bucket(header)] += 1.0;
        } else {
            for w in chars.windows(3) {
                v[bucket(&w.iter().collect::<String>())] += 1.0;
            }
        }
        Ok(v)
    }
}

/// Embedding endpoint speaking `{"input": [...]}` → `{"data":[{"embedding":[...]}]}`.
pub struct HttpEmbeddingProvider {
    pub endpoint: String,
    pub auth_env_var: String,
    pub model: Option<String>,
    pub timeout: Duration,
    pub backend: Box<dyn HttpBackend>,
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn embed(&self, header: &str) -> Result<Vec<f64>, PipelineError> {
        let auth = std::env::var(&self.auth_env_var)
            .ok()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| PipelineError::Provider(format!("environment variable {} is not set", self.auth_env_var)))?;
        let mut body = json!({ "input": [header] });
        if let Some(m) = &self.model {
            body["model"] = json!(m);
        }
        let raw = self
            .backend
            .post_json(&self.endpoint, &auth, &body, self.timeout)
            .map_err(|e| PipelineError::Provider(e.to_string()))?;
        let value: serde_json::Value =
            serde_json::from_str(&raw).map_err(|e| PipelineError::Provider(format!("bad response: {e}")))?;
        value["data"][0]["embedding"]
            .as_array()
            .and_then(|a| a.iter().map(|x| x.as_f64()).collect::<Option<Vec<f64>>>())
            .ok_or_else(|| PipelineError::Provider("response carries no embedding".into()))
    }
}

fn normalize(mut v: Vec<f64>, header: &str) -> Result<Vec<f64>, PipelineError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(PipelineError::Provider(format!("zero embedding for `{header}`")));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// One unit vector per header.
pub fn embed_headers(headers: &[String], provider: &dyn EmbeddingProvider) -> Result<Vec<Vec<f64>>, PipelineError> {
    headers
        .iter()
        .map(|h| {
            if h.is_empty() {
                return Err(PipelineError::Provider("empty header".into()));
            }
            normalize(provider.embed(h)?, h)
        })
        .collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// Greedy max-min selection under cosine distance. Starts from index 0 and
/// breaks ties toward the lowest index.
pub fn farthest_first_select(vectors: &[Vec<f64>], count: usize) -> Result<Vec<usize>, PipelineError> {
    if count > vectors.len() {
        return Err(PipelineError::CountExceedsPopulation {
            count,
            population: vectors.len(),
        });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut chosen = vec![0];
    let mut taken = vec![false; vectors.len()];
    taken[0] = true;
    let mut min_dist: Vec<f64> = vectors.iter().map(|v| distance(v, &vectors[0])).collect();
    while chosen.len() < count {
        let mut best: Option<usize> = None;
        for i in (0..vectors.len()).filter(|&i| !taken[i]) {
            if best.is_none_or(|b| min_dist[i] > min_dist[b]) {
                best = Some(i);
            }
        }
        let pick = best.expect("population not exhausted");
        taken[pick] = true;
        chosen.push(pick);
        for (i, d) in min_dist.iter_mut().enumerate() {
            *d = d.min(distance(&vectors[i], &vectors[pick]));
        }
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(v: &[f64]) -> Vec<f64> {
        normalize(v.to_vec(), "t").unwrap()
    }

    #[test]
    fn worked_example() {
        let vs = vec![unit(&[1.0, 0.0]), unit(&[0.0, 1.0]), unit(&[1.0, 1.0])];
        assert_eq!(farthest_first_select(&vs, 2).unwrap(), vec![0, 1]);
        assert_eq!(farthest_first_select(&vs, 3).unwrap(), vec![0, 1, 2]);
        assert!((distance(&vs[0], &vs[2]) - (1.0 - 0.5f64.sqrt())).abs() < 1e-12);
        assert!(matches!(
            farthest_first_select(&vs, 4),
            Err(PipelineError::CountExceedsPopulation { count: 4, population: 3 })
        ));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let vs = vec![unit(&[1.0, 0.0]), unit(&[0.0, 1.0]), unit(&[0.0, 1.0]), unit(&[-1.0, 0.0])];
        assert_eq!(farthest_first_select(&vs, 2).unwrap(), vec![0, 3]);
        assert_eq!(farthest_first_select(&vs, 3).unwrap(), vec![0, 3, 1]);
    }

    #[test]
    fn fallback_embeddings() {
        let hs: Vec<String> = ["fn add(a, b)", "fn add(a, b)", "xyz", "qqq"].iter().map(|s| s.to_string()).collect();
        let vs = embed_headers(&hs, &TrigramHashProvider).unwrap();
        assert_eq!(vs[0], vs[1]);
        for v in &vs {
            assert!((v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
        }
        // One trigram each, landing in different buckets.
        assert_ne!(bucket("xyz"), bucket("qqq"));
        assert_eq!(vs[2].iter().zip(&vs[3]).map(|(a, b)| a * b).sum::<f64>(), 0.0);
        assert!(embed_headers(&["".to_string()], &TrigramHashProvider).is_err());
    }

    proptest! {
        #[test]
        fn prefix_stable_and_distinct(raw in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..20), extra in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 0..5)) {
            prop_assume!(raw.iter().chain(&extra).all(|v| v.iter().any(|x| x.abs() > 1e-3)));
            let vs: Vec<Vec<f64>> = raw.iter().map(|v| unit(v)).collect();
            let k = vs.len() / 2 + 1;
            let sel = farthest_first_select(&vs, k).unwrap();
            let mut sorted = sel.clone();
            sorted.sort();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), k);
            let mut longer = vs.clone();
            longer.extend(extra.iter().map(|v| unit(v)));
            prop_assert_eq!(&farthest_first_select(&longer[..vs.len()], k).unwrap(), &sel);
            for step in 1..sel.len() {
                let score = |i: usize| sel[..step].iter().map(|&s| distance(&vs[i], &vs[s])).fold(f64::INFINITY, f64::min);
                let best = (0..vs.len()).filter(|i| !sel[..step].contains(i)).map(score).fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(score(sel[step]), best);
            }
        }
    }
}
