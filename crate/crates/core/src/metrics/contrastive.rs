use crate::corpus::AmbiguousExample;
use crate::gateway::{ChatMessage, Gateway, GatewayError};

/// 1 when the intended translation is strictly more likely; ties score 0.
pub fn contrastive_compare(ll_intended: f64, ll_alternative: f64) -> u8 {
    (ll_intended > ll_alternative) as u8
}

/// Contrastive accuracy for one MT item under `prompt`, which must end in
/// the open translation slot. Unambiguous items score 1 by definition: with
/// one reading there is no alternative to confuse it with.
pub fn contrastive_item_score(
    gateway: &Gateway,
    prompt: &[ChatMessage],
    example: &AmbiguousExample,
    intended: usize,
) -> Result<u8, GatewayError> {
    if !example.is_ambiguous {
        return Ok(1);
    }
    if example.k() != 2 || intended > 1 {
        return Err(GatewayError::InvalidRequest(format!(
            "contrastive scoring needs two interpretations and intended ∈ {{0, 1}} (`{}`)",
            example.id
        )));
    }
    let translation = |i: usize| {
        example.interpretations[i]
            .output
            .translation()
            .map(|t| format!(" {}", t.trim()))
            .ok_or_else(|| GatewayError::InvalidRequest(format!("`{}` has no translation {i}", example.id)))
    };
    let ll_intended = gateway.score_continuation(prompt, &translation(intended)?)?;
    let ll_alternative = gateway.score_continuation(prompt, &translation(1 - intended)?)?;
    Ok(contrastive_compare(ll_intended, ll_alternative))
}
