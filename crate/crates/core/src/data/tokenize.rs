use crate::error::{Error, Result};

/// Splits an identifier into lowercase subwords.
///
/// Boundaries fall before an uppercase letter that follows a lowercase
/// letter or digit, and before the last capital of an acronym run that is
/// followed by a lowercase letter (`getHTTPResponse` gives `get http
/// response`). Digits stay with the preceding subword; underscores split.
pub fn split_camel_case(identifier: &str) -> Result<Vec<String>> {
    if identifier.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot split an empty identifier".into(),
        ));
    }
    let chars: Vec<char> = identifier.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c == '_' {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            continue;
        }
        if c.is_uppercase() && !cur.is_empty() {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if prev.is_lowercase() || prev.is_ascii_digit() || (prev.is_uppercase() && next_lower) {
                out.push(std::mem::take(&mut cur));
            }
        }
        cur.extend(c.to_lowercase());
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "identifier `{identifier}` has no subwords"
        )));
    }
    Ok(out)
}
