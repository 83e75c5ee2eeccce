//! Lenient parsing of judge completions: JSON first, then a regex
//! fallback for `Score: N` style replies.

use serde_json::Value;

use crate::domain::{normalize_score, NormalizedScore, Scale};

/// Pull the first JSON value out of a completion that may carry prose
/// or code fences around it.
pub fn extract_json(text: &str) -> Option<Value> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        return Some(v);
    }
    // Fenced block.
    let fence = regex::Regex::new(r"```(?:json)?\s*([\s\S]*?)```").expect("static regex");
    if let Some(caps) = fence.captures(trimmed) {
        if let Ok(v) = serde_json::from_str::<Value>(caps[1].trim()) {
            return Some(v);
        }
    }
    // First parseable value embedded in prose.
    for (pos, ch) in trimmed.char_indices() {
        if ch == '{' || ch == '[' {
            let mut stream = serde_json::Deserializer::from_str(&trimmed[pos..]).into_iter::<Value>();
            if let Some(Ok(v)) = stream.next() {
                if v.is_object() || v.is_array() {
                    return Some(v);
                }
            }
        }
    }
    None
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    for (key, value) in obj {
        let folded = key.to_lowercase();
        if names.iter().any(|n| *n == folded) {
            return Some(value);
        }
    }
    None
}

/// A parsed rubric triple as emitted by the generation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct RubricTriple {
    pub name: String,
    pub description: String,
    pub scale: Scale,
}

/// Parse a rubric-generation completion into Name/Description/Scale
/// triples. Accepts a bare JSON array or an object wrapping it under
/// `metrics`, `rubrics`, or `criteria`.
pub fn parse_rubric_list(text: &str) -> Result<Vec<RubricTriple>, String> {
    let value = extract_json(text).ok_or("no JSON value found in completion")?;
    let array = match &value {
        Value::Array(items) => items.clone(),
        Value::Object(obj) => match field(obj, &["metrics", "rubrics", "criteria"]) {
            Some(Value::Array(items)) => items.clone(),
            _ => return Err("JSON object does not wrap a metrics array".into()),
        },
        _ => return Err("JSON value is neither an array nor a wrapping object".into()),
    };
    if array.is_empty() {
        return Err("metrics array is empty".into());
    }
    let mut triples = Vec::new();
    for (i, entry) in array.iter().enumerate() {
        let Some(obj) = entry.as_object() else {
            return Err(format!("metric {i} is not an object"));
        };
        let name = field(obj, &["name", "metric"])
            .and_then(|v| v.as_str())
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or(format!("metric {i} is missing a name"))?;
        let description = field(obj, &["description"])
            .and_then(|v| v.as_str())
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or(format!("metric {i} is missing a description"))?;
        let scale_value = field(obj, &["scale"]).ok_or(format!("metric {i} is missing a scale"))?;
        let scale = Scale::parse_lenient(scale_value).map_err(|e| format!("metric {i}: {e}"))?;
        triples.push(RubricTriple {
            name: name.to_string(),
            description: description.to_string(),
            scale,
        });
    }
    Ok(triples)
}

/// Parse an instruction completion: a JSON object carrying an
/// `instruction` field, or the whole reply as plain text.
pub fn parse_instruction(text: &str) -> Result<String, String> {
    if let Some(Value::Object(obj)) = extract_json(text) {
        if let Some(instruction) = field(&obj, &["instruction", "steps", "evaluation_steps"]) {
            if let Some(s) = instruction.as_str() {
                let s = s.trim();
                if !s.is_empty() {
                    return Ok(s.to_string());
                }
            }
        }
    }
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err("empty instruction reply".into());
    }
    Ok(trimmed.to_string())
}

/// A parsed scoring reply.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReply {
    pub reasoning: String,
    /// The score token exactly as emitted.
    pub raw_score: String,
    pub normalized: NormalizedScore,
}

fn score_token_to_string(value: &Value) -> Option<String> {
    match value {
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.trim().to_string()),
        _ => None,
    }
}

/// Parse a scoring completion into (reasoning, score). JSON replies are
/// preferred; otherwise a `Score: N` pattern is accepted, with any
/// `Justification:`/`Reasoning:` tail captured as the reasoning.
pub fn parse_score_reply(text: &str, scale: &Scale) -> Result<ScoreReply, String> {
    if let Some(Value::Object(obj)) = extract_json(text) {
        if let Some(score_value) = field(&obj, &["score", "rating"]) {
            let raw = score_token_to_string(score_value)
                .ok_or("score field is neither a number nor a string")?;
            let normalized = normalize_score(&raw, scale).map_err(|e| e.to_string())?;
            let reasoning = field(&obj, &["reasoning", "justification", "explanation"])
                .and_then(|v| v.as_str())
                .unwrap_or("")
                .trim()
                .to_string();
            return Ok(ScoreReply {
                reasoning,
                raw_score: raw,
                normalized,
            });
        }
    }
    let score_pattern =
        regex::Regex::new(r"(?i)\bscore\b\s*[:：]?\s*\**\s*([0-9]+(?:\.[0-9]+)?|[A-Za-z]+)")
            .expect("static regex");
    if let Some(caps) = score_pattern.captures(text) {
        let raw = caps[1].to_string();
        let normalized = normalize_score(&raw, scale).map_err(|e| e.to_string())?;
        let reasoning_pattern =
            regex::Regex::new(r"(?is)(?:justification|reasoning|explanation)\s*[:：]\s*(.+)")
                .expect("static regex");
        let reasoning = reasoning_pattern
            .captures(text)
            .map(|c| c[1].trim().to_string())
            .unwrap_or_else(|| text.trim().to_string());
        return Ok(ScoreReply {
            reasoning,
            raw_score: raw,
            normalized,
        });
    }
    Err("no score found in completion".into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ScaleKind;

    #[test]
    fn json_array_of_triples() {
        let text = r#"[
            {"name": "Creativity", "description": "Novel ideas", "scale": "1-5"},
            {"name": "Tone", "description": "Appropriate register", "scale": ["low", "medium", "high"]}
        ]"#;
        let triples = parse_rubric_list(text).unwrap();
        assert_eq!(triples.len(), 2);
        assert_eq!(triples[0].name, "Creativity");
        assert_eq!(triples[1].scale.kind, ScaleKind::Categorical);
    }

    #[test]
    fn fenced_and_wrapped_lists_parse() {
        let text = "Here are the metrics:\n```json\n{\"metrics\": [{\"name\": \"A\", \"description\": \"d\", \"scale\": \"1-5\"}]}\n```";
        let triples = parse_rubric_list(text).unwrap();
        assert_eq!(triples.len(), 1);
    }

    #[test]
    fn malformed_lists_error() {
        assert!(parse_rubric_list("no json here").is_err());
        assert!(parse_rubric_list("[]").is_err());
        assert!(parse_rubric_list(r#"[{"name": "A", "scale": "1-5"}]"#).is_err());
        assert!(parse_rubric_list(r#"[{"name": "A", "description": "d", "scale": "whenever"}]"#).is_err());
    }

    #[test]
    fn instruction_plain_text_and_json() {
        assert_eq!(parse_instruction("  Read then rate. ").unwrap(), "Read then rate.");
        assert_eq!(
            parse_instruction(r#"{"instruction": "Judge it."}"#).unwrap(),
            "Judge it."
        );
        assert!(parse_instruction("   \n ").is_err());
    }

    #[test]
    fn json_score_reply() {
        let reply = parse_score_reply(
            r#"{"reasoning": "Solid work.", "score": 4}"#,
            &Scale::one_to_five(),
        )
        .unwrap();
        assert_eq!(reply.normalized.value, 4.0);
        assert_eq!(reply.raw_score, "4");
        assert_eq!(reply.reasoning, "Solid work.");
    }

    #[test]
    fn prose_score_reply_with_justification() {
        let reply = parse_score_reply(
            "Score: 4 — Justification: “The response introduces several novel elements.”",
            &Scale::one_to_five(),
        )
        .unwrap();
        assert_eq!(reply.normalized.value, 4.0);
        assert!(reply.reasoning.contains("novel elements"));
    }

    #[test]
    fn categorical_score_reply() {
        let scale = Scale::categorical(["low", "medium", "high"], 1.0, 5.0).unwrap();
        let reply = parse_score_reply("Score: high", &scale).unwrap();
        assert_eq!(reply.normalized.value, 5.0);
    }

    #[test]
    fn label_on_numeric_scale_fails_parse() {
        let err = parse_score_reply(r#"{"score": "excellent"}"#, &Scale::one_to_five()).unwrap_err();
        assert!(err.contains("unparseable"));
        assert!(parse_score_reply("nothing to see", &Scale::one_to_five()).is_err());
    }

    #[test]
    fn out_of_range_json_score_is_clamped_not_rejected() {
        let reply = parse_score_reply(r#"{"score": 7, "reasoning": "x"}"#, &Scale::one_to_five()).unwrap();
        assert_eq!(reply.normalized.value, 5.0);
        assert!(reply.normalized.clamped);
        assert_eq!(reply.raw_score, "7");
    }
}
