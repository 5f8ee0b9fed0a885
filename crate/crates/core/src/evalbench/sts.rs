use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{file_err, spearman, EvalError, Result, EMBED_CHUNK};
use crate::embedder::{cosine, embed_batch, EmbedRequest, EmbeddingProvider, Role};

/// One line of an STS file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StsPair {
    pub id: String,
    pub text_a: String,
    pub text_b: String,
    /// Gold similarity on the 0–5 scale.
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StsTask {
    pub pairs: Vec<StsPair>,
}

impl StsTask {
    pub fn validate(&self) -> Result<()> {
        if self.pairs.len() < 2 {
            return Err(EvalError::InvalidTask("STS needs at least two pairs".into()));
        }
        if let Some(p) = self
            .pairs
            .iter()
            .find(|p| !p.score.is_finite() || !(0.0..=5.0).contains(&p.score))
        {
            return Err(EvalError::InvalidTask(format!(
                "pair {:?} has gold score {} outside [0, 5]",
                p.id, p.score
            )));
        }
        Ok(())
    }

    /// Cosine similarity of each pair, in task order.
    ///
    /// Both sides are embedded with the query role; lookup keys are
    /// `<id>#a` and `<id>#b`.
    pub fn cosines<P: EmbeddingProvider + ?Sized>(&self, provider: &P) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.pairs.len());
        for chunk in self.pairs.chunks(EMBED_CHUNK) {
            let side = |text: fn(&StsPair) -> &String, suffix: &str| {
                EmbedRequest::new(
                    chunk.iter().map(|p| text(p).clone()).collect(),
                    Role::Query,
                    provider.model_id(),
                )
                .with_keys(chunk.iter().map(|p| format!("{}#{suffix}", p.id)).collect())
            };
            let a = embed_batch(provider, &side(|p| &p.text_a, "a"))?;
            let b = embed_batch(provider, &side(|p| &p.text_b, "b"))?;
            for (va, vb) in a.iter().zip(&b) {
                out.push(cosine(va, vb)?);
            }
        }
        Ok(out)
    }
}

/// `100 * spearman(cosines, gold)`.
pub fn sts_score<P: EmbeddingProvider + ?Sized>(task: &StsTask, provider: &P) -> Result<f64> {
    task.validate()?;
    let sims = task.cosines(provider)?;
    let gold: Vec<f64> = task.pairs.iter().map(|p| p.score).collect();
    Ok(100.0 * spearman(&sims, &gold)?)
}

pub fn load_sts_task(path: &Path) -> Result<StsTask> {
    let reader = BufReader::new(File::open(path).map_err(|e| file_err(path, e))?);
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| file_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        pairs.push(
            serde_json::from_str(&line).map_err(|e| file_err(path, format!("line {}: {e}", i + 1)))?,
        );
    }
    let task = StsTask { pairs };
    task.validate()?;
    Ok(task)
}
