use serde::{Deserialize, Serialize};

use super::EngineError;

/// Markers wrapping the reasoning channel inside a completion.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThinkingDelimiters {
    pub open: String,
    pub close: String,
}

impl Default for ThinkingDelimiters {
    fn default() -> Self {
        ThinkingDelimiters {
            open: "<think>".into(),
            close: "</think>".into(),
        }
    }
}

impl ThinkingDelimiters {
    pub fn new(open: impl Into<String>, close: impl Into<String>) -> Result<Self, EngineError> {
        let d = ThinkingDelimiters {
            open: open.into(),
            close: close.into(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.open.is_empty() || self.close.is_empty() {
            return Err(EngineError::InvalidDelimiters("delimiters must be non-empty".into()));
        }
        if self.open.contains(&self.close) || self.close.contains(&self.open) {
            return Err(EngineError::InvalidDelimiters(format!(
                "{:?} and {:?} overlap",
                self.open, self.close
            )));
        }
        Ok(())
    }

    /// Rejects traces that would break the delimiter framing.
    pub fn check_trace(&self, trace: &str) -> Result<(), EngineError> {
        for delim in [&self.open, &self.close] {
            if trace.contains(delim.as_str()) {
                return Err(EngineError::InvalidTrace(format!(
                    "trace contains delimiter {delim:?}"
                )));
            }
        }
        Ok(())
    }
}

/// `open + trace + close + final`.
pub fn encode_thinking(
    trace: &str,
    final_text: &str,
    d: &ThinkingDelimiters,
) -> Result<String, EngineError> {
    d.check_trace(trace)?;
    let mut out = String::with_capacity(d.open.len() + trace.len() + d.close.len() + final_text.len());
    out.push_str(&d.open);
    out.push_str(trace);
    out.push_str(&d.close);
    out.push_str(final_text);
    Ok(out)
}

/// Splits a completion into `(trace, final)`.
///
/// A completion is well formed when it starts with the open delimiter and
/// contains a close delimiter later on; the trace runs up to the first close.
/// Anything else is returned whole as the final text with an empty trace.
pub fn decode_thinking(raw: &str, d: &ThinkingDelimiters) -> (String, String) {
    if let Some(rest) = raw.strip_prefix(d.open.as_str()) {
        if let Some(end) = rest.find(d.close.as_str()) {
            let trace = &rest[..end];
            let final_text = &rest[end + d.close.len()..];
            return (trace.to_owned(), final_text.to_owned());
        }
    }
    (String::new(), raw.to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_example() {
        let d = ThinkingDelimiters::default();
        assert_eq!(encode_thinking("a", "b", &d).unwrap(), "<think>a</think>b");
    }

    #[test]
    fn decode_examples() {
        let d = ThinkingDelimiters::default();
        assert_eq!(decode_thinking("<think></think>x", &d), ("".into(), "x".into()));
        assert_eq!(
            decode_thinking("<think>plan</think>Bonjour", &d),
            ("plan".into(), "Bonjour".into())
        );
        assert_eq!(decode_thinking("Bonjour", &d), ("".into(), "Bonjour".into()));
        // unterminated trace is not a well-formed pair
        assert_eq!(decode_thinking("<think>abc", &d), ("".into(), "<think>abc".into()));
    }

    #[test]
    fn delimiter_in_trace_is_rejected() {
        let d = ThinkingDelimiters::default();
        assert!(matches!(
            encode_thinking("x</think>y", "f", &d),
            Err(EngineError::InvalidTrace(_))
        ));
        assert!(encode_thinking("<think>", "f", &d).is_err());
    }

    #[test]
    fn delimiter_validation() {
        assert!(ThinkingDelimiters::new("", "x").is_err());
        assert!(ThinkingDelimiters::new("<t>", "<t>").is_err());
        assert!(ThinkingDelimiters::new("<t", "<t>").is_err());
        assert!(ThinkingDelimiters::new("[[", "]]").is_ok());
    }
}
