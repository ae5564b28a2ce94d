use crate::error::{Error, Result};

use super::scorer::Scorer;
use super::{PreferencePair, ReferenceSample};

/// Keeps entries whose colorfulness strictly exceeds the corpus mean.
/// Stable order; every entry must have a populated colorfulness score.
pub fn filter_above_average(corpus: &[ReferenceSample]) -> Result<Vec<ReferenceSample>> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus".into()));
    }
    let scores: Vec<f64> = corpus
        .iter()
        .map(|r| {
            r.colorfulness
                .ok_or_else(|| Error::invalid(format!("{}: colorfulness not populated", r.source_id)))
        })
        .collect::<Result<_>>()?;
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok(corpus
        .iter()
        .zip(&scores)
        .filter(|(_, &s)| s > mean)
        .map(|(r, _)| r.clone())
        .collect())
}

/// Keeps pairs whose recomputed scorer gap strictly exceeds tau. The gap is
/// recomputed with the given scorer and stored on the surviving pairs.
pub fn quality_gap_filter(
    pairs: &[PreferencePair],
    scorer: &dyn Scorer,
    tau: f64,
) -> Result<Vec<PreferencePair>> {
    if tau < 0.0 {
        return Err(Error::invalid("tau must be >= 0"));
    }
    let mut kept = Vec::new();
    for pair in pairs {
        let gap = scorer.score(&pair.winner, &pair.condition)?
            - scorer.score(&pair.loser, &pair.condition)?;
        if gap > tau {
            let mut p = pair.clone();
            p.gap = gap;
            kept.push(p);
        }
    }
    Ok(kept)
}

/// The K pairs with the highest winner score, sorted descending; ties break
/// by source id lexicographic order. If K exceeds the number of pairs, all
/// pairs are returned and a warning string is produced.
pub fn select_top_k(
    pairs: &[PreferencePair],
    scorer: &dyn Scorer,
    k: usize,
) -> Result<(Vec<PreferencePair>, Option<String>)> {
    if k == 0 {
        return Err(Error::invalid("K must be >= 1"));
    }
    let mut scored: Vec<(f64, &PreferencePair)> = pairs
        .iter()
        .map(|p| Ok((scorer.score(&p.winner, &p.condition)?, p)))
        .collect::<Result<_>>()?;
    scored.sort_by(|(sa, pa), (sb, pb)| {
        sb.partial_cmp(sa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| pa.source_id.cmp(&pb.source_id))
    });
    let warning = if k > scored.len() {
        Some(format!(
            "requested top-{k} but only {} pairs available; returning all",
            scored.len()
        ))
    } else {
        None
    };
    Ok((
        scored.into_iter().take(k).map(|(_, p)| p.clone()).collect(),
        warning,
    ))
}
