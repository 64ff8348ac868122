use fairguide_core::{validate_catalog, AttributeCatalog};
use indexmap::IndexMap;

use crate::error::ParseError;

/// Turn a detection reply into a validated catalog.
///
/// Code fences are ignored, the outermost JSON object is extracted, and
/// trailing commas before `}` or `]` are dropped.
pub fn parse_detection(raw: &str) -> Result<AttributeCatalog, ParseError> {
    let body = strip_fences(raw);
    let object = outermost_object(body).ok_or_else(|| ParseError::NoJsonObject { raw: raw.to_string() })?;
    let cleaned = remove_trailing_commas(object);
    let value: IndexMap<String, serde_json::Value> = serde_json::from_str(&cleaned)
        .map_err(|e| ParseError::InvalidJson { message: e.to_string(), raw: raw.to_string() })?;
    let mut map = IndexMap::new();
    for (category, v) in value {
        let attrs = v
            .as_array()
            .and_then(|a| a.iter().map(|s| s.as_str().map(str::to_string)).collect::<Option<Vec<_>>>())
            .ok_or_else(|| ParseError::NotStringArray { category: category.clone(), raw: raw.to_string() })?;
        map.insert(category, attrs);
    }
    let catalog = AttributeCatalog::from(map);
    let violations = validate_catalog(&catalog);
    if violations.is_empty() {
        Ok(catalog)
    } else {
        Err(ParseError::Catalog { violations, raw: raw.to_string() })
    }
}

fn strip_fences(raw: &str) -> &str {
    let t = raw.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let rest = rest.split_once('\n').map_or("", |(_, body)| body);
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

/// Slice from the first `{` to its matching `}`, honouring JSON strings.
fn outermost_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn remove_trailing_commas(json: &str) -> String {
    let chars: Vec<char> = json.chars().collect();
    let mut out = String::with_capacity(json.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            out.push(c);
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|n| !n.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}
