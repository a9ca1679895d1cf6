use super::SearchError;

/// `values / visits + c * sqrt(ln(n) / visits)`, where `n` is the number of
/// rollouts executed so far. Unvisited nodes score `+inf` so every child is
/// tried before any is revisited.
pub fn uct_score(values: f64, visits: u64, rollouts: u64, c: f64) -> Result<f64, SearchError> {
    if values.is_nan() || values < 0.0 || c.is_nan() || c < 0.0 {
        return Err(SearchError::Contract(format!(
            "uct_score needs values >= 0 and c >= 0, got values={values}, c={c}"
        )));
    }
    if visits == 0 {
        return Ok(f64::INFINITY);
    }
    if rollouts == 0 {
        return Err(SearchError::Contract(
            "uct_score needs at least one executed rollout for a visited node".into(),
        ));
    }
    let visits = visits as f64;
    Ok(values / visits + c * ((rollouts as f64).ln() / visits).sqrt())
}
